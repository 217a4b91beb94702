//! Assemble `U₀, 𝓩₀, 𝓩₁, 𝓜` from a dataset and inspect the rank condition.

use ddreg::config::RunConfig;
use ddreg::{datamat, evalrep};

fn main() -> ddreg::Result<()> {
    for name in ["robot-arm", "rolling-mill"] {
        let cfg = RunConfig::bundled(name)?;
        let scn = cfg.scenario()?;
        let (_, dm) = evalrep::collect(&scn, cfg.experiment.seed)?;
        let r = datamat::rank_report(&dm);
        println!(
            "{name}: T={} m={} n_z={} d={}; rank [U0; Z0; M] = {}/{} (full: {})",
            dm.t(),
            dm.m(),
            dm.n_z(),
            dm.d(),
            r.rank,
            r.rows,
            r.full_row_rank
        );
        let sv = &r.singular_values;
        println!("  singular values {:.3e} .. {:.3e}", sv[0], sv[sv.len() - 1]);
    }
    Ok(())
}
