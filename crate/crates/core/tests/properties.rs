mod common;

use std::f64::consts::PI;

use ddreg::config::RunConfig;
use ddreg::exo::build_m;
use ddreg::imodel::InternalModel;
use ddreg::plant::{self, BasisLibrary, BasisTerm};
use ddreg::{evalrep, fourier, linalg};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn rel_max_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    linalg::max_abs(&(a - b)) / linalg::max_abs(a).max(f64::MIN_POSITIVE)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn exosystem_samples_factor_through_jordan_data(seed in any::<u64>(), samples in 8usize..40, step in 0.05f64..0.3) {
        let exo = common::random_exosystem(seed);
        let times = common::grid(samples, step);
        let w0 = exo.sample_w(&times);
        let t = exo.jordan_basis().unwrap();
        let l = exo.build_l().unwrap();
        let m = build_m(exo.spec(), &times, false);
        let err = linalg::max_abs(&(&w0 - t * l * m.values));
        prop_assert!(err <= 1e-8 * linalg::max_abs(&w0), "residual {err:e}");
    }

    #[test]
    fn reduced_signal_rows_span_the_full_set(seed in any::<u64>(), extra in 0usize..20) {
        let exo = common::random_exosystem(seed);
        let d = exo.minimal_poly_degree();
        // the window must resolve the slowest oscillation; a square grid
        // (T = d) is a confluent Vandermonde system whose σ_d can sit near
        // 1e-9 of σ_1, so at least 2d samples are taken
        let t = 2 * d + extra;
        let times = common::grid(t, 12.0 / t as f64);
        let full = build_m(exo.spec(), &times, false).values;
        let red = build_m(exo.spec(), &times, true).values;
        prop_assert_eq!(red.nrows(), d);
        let coef = linalg::lstsq(&red.transpose(), &full.transpose(), 1e-13);
        let fit = linalg::max_abs(&(red.transpose() * coef - full.transpose()));
        prop_assert!(fit < 1e-10, "least-squares residual {fit:e}");
        let sv = linalg::singular_values(&red);
        prop_assert!(sv[d - 1] > 1e-8 * sv[0], "sigma_d / sigma_1 = {:e}", sv[d - 1] / sv[0]);
    }

    #[test]
    fn companion_model_has_the_minimal_polynomial(seed in any::<u64>()) {
        let exo = common::random_exosystem(seed);
        let c = exo.spec().minimal_poly_coeffs();
        let d = c.len();
        let im = InternalModel::companion(1, &c).unwrap();
        for k in 0..=d {
            let lam = -1.3 + 0.7 * k as f64;
            let det = (DMatrix::identity(d, d) * lam - im.phi()).determinant();
            let m_s = lam.powi(d as i32) + c.iter().enumerate().map(|(i, ci)| ci * lam.powi(i as i32)).sum::<f64>();
            prop_assert!((det - m_s).abs() <= 1e-9 * m_s.abs().max(1.0), "at {lam}: det {det} vs m_S {m_s}");
        }
        let ctrb = linalg::singular_values(&im.controllability_matrix());
        prop_assert!(ctrb[ctrb.len() - 1] > 1e-10 * ctrb[0]);
    }

    #[test]
    fn harmonic_model_spectrum_is_the_nulled_harmonics(ell in 0usize..7, p in 1usize..3, period in 0.5f64..10.0) {
        let im = InternalModel::harmonic(p, ell, period, 1.0, [0.0, 1.0]).unwrap();
        prop_assert_eq!(im.n_eta(), p * (2 * ell + 1));
        let mut got: Vec<(f64, f64)> = linalg::eigenvalues(im.phi());
        let mut want: Vec<(f64, f64)> = Vec::new();
        for _ in 0..p {
            want.push((0.0, 0.0));
            for k in 1..=ell {
                let f = k as f64 * 2.0 * PI / period;
                want.push((0.0, f));
                want.push((0.0, -f));
            }
        }
        let key = |a: &(f64, f64), b: &(f64, f64)| a.1.total_cmp(&b.1);
        got.sort_by(key);
        want.sort_by(key);
        for (g, w) in got.iter().zip(&want) {
            prop_assert!((g.0 - w.0).abs() < 1e-10 && (g.1 - w.1).abs() < 1e-10 * w.1.abs().max(1.0), "{g:?} vs {w:?}");
        }
        let ctrb = linalg::singular_values(&im.controllability_matrix());
        prop_assert!(ctrb[ctrb.len() - 1] > 1e-10 * ctrb[0]);
    }

    #[test]
    fn basis_jacobian_matches_central_differences(x in proptest::collection::vec(-2.0f64..2.0, 3)) {
        let terms = ["cos(x1)", "sin(x2)", "x1*x3", "x2^2", "x3^3"]
            .iter()
            .map(|s| s.parse::<BasisTerm>().unwrap())
            .collect();
        let basis = BasisLibrary::new(3, terms).unwrap();
        let jac = basis.z_jacobian(&x);
        let h = 1e-5;
        for c in 0..3 {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[c] += h;
            xm[c] -= h;
            let fd = (basis.eval_z(&xp) - basis.eval_z(&xm)) / (2.0 * h);
            for r in 0..fd.len() {
                prop_assert!((fd[r] - jac[(r, c)]).abs() < 1e-7, "d z{r} / d x{c}: {} vs {}", fd[r], jac[(r, c)]);
            }
        }
    }

    #[test]
    fn trig_polynomials_are_recovered_exactly(
        a in proptest::collection::vec(-1.0f64..1.0, 9),
        b in proptest::collection::vec(-1.0f64..1.0, 9),
        n in 64usize..200,
        period in 0.5f64..20.0,
    ) {
        let v: Vec<f64> = (0..n)
            .map(|j| {
                let t = j as f64 * period / n as f64;
                (0..9).map(|k| {
                    let th = 2.0 * PI * k as f64 * t / period;
                    a[k] * th.cos() + if k > 0 { b[k] * th.sin() } else { 0.0 }
                }).sum()
            })
            .collect();
        let s = fourier::coefficients(&v, period, 12).unwrap();
        // a₀ is twice the mean in the (2/N) convention
        prop_assert!((s.a[0] - 2.0 * a[0]).abs() < 1e-10);
        for k in 1..9 {
            prop_assert!((s.a[k] - a[k]).abs() < 1e-10 && (s.b[k] - b[k]).abs() < 1e-10, "k = {k}");
        }
        for k in 9..=12 {
            prop_assert!(s.a[k].abs() < 1e-10 && s.b[k].abs() < 1e-10);
        }
        prop_assert!(fourier::parseval_residual(&v, &s) < 1e-8);
    }

    #[test]
    fn l2_bound_shrinks_with_each_nulled_harmonic(v in 1e-6f64..10.0, period in 0.1f64..20.0, ell in 0usize..10) {
        let b0 = fourier::l2_bound(v, period, ell);
        let b1 = fourier::l2_bound(v, period, ell + 1);
        prop_assert!(b1 < b0 && b0 > 0.0);
    }

    #[test]
    fn nulling_tolerance_is_relative_with_absolute_floor(e in 0.0f64..10.0) {
        let tol = evalrep::nulling_tolerance(e);
        if e >= 1e-4 {
            prop_assert!((tol - 1e-3 * e).abs() <= 1e-18);
        } else {
            prop_assert!(tol >= 1e-6);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn experiments_are_bitwise_reproducible(seed in any::<u64>(), which in 0usize..2) {
        let cfg = RunConfig::bundled(["robot-arm", "rolling-mill"][which]).unwrap();
        let scn = cfg.scenario().unwrap();
        let csv = |s: u64| {
            let (ds, _) = evalrep::collect(&scn, s).unwrap();
            let mut buf = Vec::new();
            ds.write_csv(&mut buf).unwrap();
            buf
        };
        prop_assert_eq!(csv(seed), csv(seed));
    }

    #[test]
    fn recorded_derivatives_are_the_exact_vector_field(seed in any::<u64>(), which in 0usize..2) {
        let cfg = RunConfig::bundled(["robot-arm", "rolling-mill"][which]).unwrap();
        let scn = cfg.scenario().unwrap();
        let (ds, _) = evalrep::collect(&scn, seed).unwrap();
        let p = &scn.plant;
        for i in 0..ds.len() {
            let x: Vec<f64> = ds.x.column(i).iter().copied().collect();
            let w = scn.exo.simulate_w(ds.times[i]);
            let f = &p.a * p.basis.eval_z(&x) + &p.b * ds.u.column(i) + &p.p * &w;
            let err = (f - ds.dx.column(i)).amax();
            prop_assert!(err <= 1e-12 * ds.dx.column(i).amax().max(1.0), "sample {i}: {err:e}");
        }
    }

    #[test]
    fn configs_roundtrip_losslessly(seed in any::<u64>(), ell in 0usize..6, which in 0usize..2) {
        let mut cfg = RunConfig::bundled(["robot-arm", "rolling-mill"][which]).unwrap();
        cfg.experiment.seed = seed;
        if let ddreg::imodel::InternalModelKind::Harmonic { ell: l, .. } = &mut cfg.internal_model {
            *l = ell;
        }
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        prop_assert_eq!(back, cfg);
    }

    #[test]
    fn data_matrices_satisfy_the_ground_truth_identity(seed in any::<u64>(), which in 0usize..2) {
        let cfg = RunConfig::bundled(["robot-arm", "rolling-mill"][which]).unwrap();
        let scn = cfg.scenario().unwrap();
        let im = scn.internal_model().unwrap();
        let (ds, dm) = evalrep::collect(&scn, seed).unwrap();
        let (a, b, p) = plant::augmented_matrices(&scn.plant, &im, scn.mode).unwrap();
        let w = scn.exo.sample_w(&ds.times);
        let rhs = a * &dm.z0 + b * &dm.u0 + p * w;
        prop_assert!(rel_max_diff(&dm.z1, &rhs) < 1e-12);
    }
}
