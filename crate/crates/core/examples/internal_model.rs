//! Harmonic and companion internal models, and the controllability of
//! `(Φ, G)` that the synthesis relies on.

use ddreg::imodel::InternalModel;
use ddreg::linalg;

fn main() -> ddreg::Result<()> {
    let period = 2.0 * std::f64::consts::PI;
    for ell in [0, 2, 4] {
        let im = InternalModel::harmonic(1, ell, period, 1.0, [0.0, 1.0])?;
        let eig = linalg::eigenvalues(im.phi());
        let freqs: Vec<String> = eig.iter().filter(|e| e.1 >= 0.0).map(|e| format!("{:.3}", e.1)).collect();
        let ctrb = linalg::rank(&im.controllability_matrix(), 1e-10);
        println!(
            "harmonic ell={ell}: n_eta={}, frequencies [{}], controllability rank {ctrb}",
            im.n_eta(),
            freqs.join(", ")
        );
    }
    // s(s² + 1): integrator plus the unit-frequency oscillator
    let im = InternalModel::companion(1, &[0.0, 1.0, 0.0])?;
    println!("companion: Phi =\n{:.3}G = {:.3}", im.phi(), im.g().transpose());
    Ok(())
}
