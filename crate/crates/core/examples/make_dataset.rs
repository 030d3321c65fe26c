//! Build simulated training pairs and export them for the trainer.

use cellstorm::nn::{export_dataset, make_pairs_simulated, UpsampleGrid};
use cellstorm::sim::SimConfig;
use cellstorm::CameraModel;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut sim = SimConfig { n_frames: 20, ..Default::default() };
    sim.scene.fov_um = 3.2;
    let set = make_pairs_simulated(&sim, &CameraModel::default(), &UpsampleGrid::default(), 5)?;
    println!(
        "{} pairs at ×{} upsampling, quality {:?}, {} collisions, {} dropped",
        set.pairs.len(),
        set.factor,
        set.quality,
        set.collisions,
        set.dropped
    );
    let dir = std::env::temp_dir().join("cellstorm-dataset");
    let manifest = export_dataset(&set, &dir, sim.fps)?;
    println!("{}", serde_json::to_string_pretty(&manifest)?);
    Ok(())
}
