//! Asymptotic tracking error against the number of harmonics in the
//! internal model, five datasets per row.

use ddreg::config::RunConfig;
use ddreg::evalrep;

fn main() -> ddreg::Result<()> {
    let cfg = RunConfig::bundled("robot-arm")?;
    let scn = cfg.scenario()?;
    let ells = [0, 1, 2, 3, 4];
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let rows = evalrep::sweep_ell(&scn, &ells, cfg.experiment.seed, jobs);
    print!("{}", evalrep::sweep_csv(&rows));
    Ok(())
}
