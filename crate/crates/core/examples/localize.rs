//! Classical detect-and-fit localization matched against ground truth.

use cellstorm::eval::{match_to_gt, MatchPolicy};
use cellstorm::localize::{localize_stack, LocalizerConfig};
use cellstorm::sim::{simulate_stack, SimConfig};
use cellstorm::CameraModel;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let camera = CameraModel::default();
    let mut cfg = SimConfig { n_frames: 200, ..Default::default() };
    cfg.blink.photons = 1000.0;
    let (stack, gt) = simulate_stack(&cfg, &camera, None, 11)?;
    let table = localize_stack(&stack, &LocalizerConfig::default(), &camera);
    let report = match_to_gt(&table, &gt, 200.0, MatchPolicy::Nearest);
    println!("{} detections for {} events", report.detected_count, report.gt_count);
    println!("matched fraction {:.3}", report.matched_fraction());
    println!("mean distance {:.1} nm, RMSE {:.1} nm", report.mean_distance_nm.unwrap_or(f64::NAN), report.rmse_nm.unwrap_or(f64::NAN));
    Ok(())
}
