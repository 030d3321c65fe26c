//! Block-transform compression at several qualities: squared error against
//! the raw stack grows as quality drops.

use cellstorm::codec::{transcode_stack, GridOffset};
use cellstorm::sim::{simulate_stack, SimConfig};
use cellstorm::{CameraModel, CodecConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = SimConfig { n_frames: 50, background_photons: 20.0, ..Default::default() };
    let (raw, _) = simulate_stack(&cfg, &CameraModel::default(), None, 3)?;
    for quality in [100, 90, 80, 70, 50, 30] {
        let codec = CodecConfig { grid_offset: GridOffset::RandomPerStack, ..CodecConfig::with_quality(quality) };
        let coded = transcode_stack(&raw, &codec, 3)?;
        let n = raw.data.len() as f64;
        let mse = raw.data.iter().zip(&coded.data).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum::<f64>() / n;
        println!("quality {quality:3}  QP {:>4}  MSE {mse:8.3} ADU²", codec.qp().map_or("-".into(), |q| q.to_string()));
    }
    Ok(())
}
