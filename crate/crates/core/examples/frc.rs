//! Fourier ring correlation resolution of a localized simulated stack.

use cellstorm::eval::frc::frc;
use cellstorm::localize::{localize_stack, LocalizerConfig};
use cellstorm::sim::{simulate_stack, SimConfig};
use cellstorm::CameraModel;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let camera = CameraModel::default();
    let mut cfg = SimConfig { n_frames: 1000, ..Default::default() };
    cfg.blink.photons = 1000.0;
    let (stack, _) = simulate_stack(&cfg, &camera, None, 2)?;
    let table = localize_stack(&stack, &LocalizerConfig::default(), &camera);
    let r = frc(&table, 10.0, 2)?;
    println!("{} localizations", table.len());
    match r.resolution_nm {
        Some(res) => println!("FRC resolution {res:.1} nm"),
        None => println!("no 1/7 crossing"),
    }
    Ok(())
}
