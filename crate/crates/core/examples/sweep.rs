//! Photon × quality sweep at desk scale, printed as CSV.

use cellstorm::eval::{run_sweep, SweepConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = SweepConfig { qualities: vec![70, 100], ..Default::default() };
    cfg.simulation.n_frames = 100;
    let report = run_sweep(&cfg, None)?;
    print!("{}", report.to_csv());
    Ok(())
}
