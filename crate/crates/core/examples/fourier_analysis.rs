//! Fourier coefficients of a periodic signal, Parseval, harmonic nulling and
//! the L₂ bound that follows from it.

use std::f64::consts::PI;

use ddreg::fourier;

fn main() -> ddreg::Result<()> {
    let period = 2.0 * PI;
    let n = 256;
    // first three harmonics removed, as an internal model with ℓ = 2 would
    let v: Vec<f64> = (0..n)
        .map(|j| {
            let t = j as f64 * period / n as f64;
            0.3 * (3.0 * t).cos() - 0.1 * (5.0 * t).sin()
        })
        .collect();
    let spec = fourier::coefficients(&v, period, 8)?;
    for k in 0..=spec.k_max {
        println!("k={k}: a={:+.6} b={:+.6}", spec.a[k], spec.b[k]);
    }
    println!("Parseval residual {:.3e}", fourier::parseval_residual(&v, &spec));
    let null = fourier::nulling_check(&spec, 2, 1e-9)?;
    println!("harmonics 0..=2 nulled: {} (largest {:.1e})", null.ok, null.max_coeff);
    let v_dot_max = 1.4; // sup |v'| ≤ 0.3·3 + 0.1·5
    println!(
        "(1/D)∫v² = {:.4} <= bound {:.4}",
        fourier::mean_square(&v),
        fourier::l2_bound(v_dot_max, period, 2)
    );
    Ok(())
}
