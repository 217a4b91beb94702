#![allow(dead_code)]

use ddreg::exo::{ComplexMode, Exosystem, RealMode, SpectralSpec};
use ddreg::linalg;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random exosystem with a mix of real and complex eigenvalues, each with
/// one or two Jordan blocks of size at most three, in a random basis.
pub fn random_exosystem(seed: u64) -> Exosystem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let n_real = rng.random_range(0..=2usize);
        let n_cplx = rng.random_range(usize::from(n_real == 0)..=2usize);
        let blocks = |rng: &mut ChaCha8Rng| -> Vec<usize> {
            (0..rng.random_range(1..=2)).map(|_| rng.random_range(1..=3)).collect()
        };
        // well-separated eigenvalues on a jittered grid
        let real: Vec<RealMode> = (0..n_real)
            .map(|i| RealMode { lambda: -0.5 + 0.5 * i as f64 + rng.random_range(-0.05..0.05), blocks: blocks(&mut rng) })
            .collect();
        let complex: Vec<ComplexMode> = (0..n_cplx)
            .map(|i| ComplexMode {
                mu: rng.random_range(-0.2..0.1),
                psi: 0.7 + 1.1 * i as f64 + rng.random_range(0.0..0.4),
                blocks: blocks(&mut rng),
            })
            .collect();
        let spec = SpectralSpec::new(real, complex).expect("valid spectrum");
        let n = spec.n_w();
        if n > 12 {
            continue;
        }
        let j = spec.real_jordan_form();
        let t = DMatrix::identity(n, n) + DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.4..0.4));
        let sv = linalg::singular_values(&t);
        if sv[n - 1] < 0.1 * sv[0] {
            continue;
        }
        let s = &t * j * t.clone().try_inverse().expect("well conditioned");
        let w0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        return Exosystem::new(s, w0, None, spec).expect("consistent exosystem");
    }
}

pub fn grid(samples: usize, step: f64) -> Vec<f64> {
    (0..samples).map(|i| i as f64 * step).collect()
}
