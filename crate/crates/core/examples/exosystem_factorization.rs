//! Factor sampled exosystem trajectories as `W₀ = 𝓣 L M` and check that the
//! reduced signal matrix spans the full one.

use ddreg::config::RunConfig;
use ddreg::exo::build_m;
use ddreg::linalg;

fn main() -> ddreg::Result<()> {
    let (_, exo) = RunConfig::bundled("robot-arm")?.system.build()?;
    println!("S has {} states, minimal polynomial degree {}", exo.n_w(), exo.minimal_poly_degree());
    println!("minimal polynomial coefficients (low to high): {:?}", exo.spec().minimal_poly_coeffs());

    let times: Vec<f64> = (0..40).map(|i| 0.5 * i as f64).collect();
    let w0 = exo.sample_w(&times);
    let t = exo.jordan_basis()?;
    let l = exo.build_l()?;
    let m = build_m(exo.spec(), &times, false);
    let resid = linalg::max_abs(&(&w0 - &t * &l * &m.values));
    println!("max |W0 - T L M| = {resid:.3e} (scale {:.3e})", linalg::max_abs(&w0));

    let m_red = build_m(exo.spec(), &times, true);
    println!(
        "reduced signal matrix: {} x {}, rank {}",
        m_red.rows(),
        times.len(),
        linalg::rank(&m_red.values, 1e-10)
    );
    // every row of the full M is a combination of the reduced rows
    let coef = linalg::lstsq(&m_red.values.transpose(), &m.values.transpose(), 1e-12);
    let fit = linalg::max_abs(&(m_red.values.transpose() * coef - m.values.transpose()));
    println!("row-space residual of the full signal matrix: {fit:.3e}");
    Ok(())
}
