//! Robot-arm controller from forty samples: solve the nonlinear SDP, check
//! the certificate, sample the contraction margin.

use ddreg::config::RunConfig;
use ddreg::{datamat, evalrep, synth};

fn main() -> ddreg::Result<()> {
    let cfg = RunConfig::bundled("robot-arm")?;
    let scn = cfg.scenario()?;
    let (_, dm) = evalrep::collect(&scn, cfg.experiment.seed)?;
    let res = synth::synthesize(&dm, &cfg.synthesis)?;
    println!("{} after {} iterations ({:.2} s)", res.solver_status, res.iterations, res.solve_seconds);
    println!("K = {:.4}", res.k);
    println!("alpha = {:?}", res.alpha());
    println!("residuals: {:?} passes {}", res.residuals, res.residuals.passes());
    println!("|M G| = {:.3e}", datamat::verify_annihilation(&dm, &res.g_matrix())?);
    let beta = synth::contractivity_margin(&res, &dm, &scn.plant.basis, &cfg.synthesis.margin_grid)?;
    println!("sampled contraction margin = {beta:.4e}");
    Ok(())
}
