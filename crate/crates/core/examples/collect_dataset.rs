//! One excitation experiment on the robot arm, saved as CSV.

use ddreg::config::RunConfig;
use ddreg::evalrep;

fn main() -> ddreg::Result<()> {
    let cfg = RunConfig::bundled("robot-arm")?;
    let scn = cfg.scenario()?;
    let (ds, _) = evalrep::collect(&scn, cfg.experiment.seed)?;
    println!("{} samples at {:?} s spacing", ds.len(), cfg.experiment.sample_period);
    println!("columns: {}", ds.header());
    let path = std::env::temp_dir().join("ddreg_robot_arm_dataset.csv");
    ds.save_csv(&path)?;
    println!("written to {}", path.display());
    let back = ddreg::plant::Dataset::load_csv(&path)?;
    println!("reload identical: {}", back.x == ds.x && back.u == ds.u && back.eta == ds.eta);
    Ok(())
}
