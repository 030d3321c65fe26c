//! Simulate a blinking stack through the default camera and a quality-80
//! codec, then write the frames and ground truth.

use cellstorm::io::stack::write_stack;
use cellstorm::io::table::write_emitters;
use cellstorm::sim::{simulate_stack, SimConfig};
use cellstorm::{CameraModel, CodecConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = SimConfig { n_frames: 100, ..Default::default() };
    let (stack, gt) = simulate_stack(&cfg, &CameraModel::default(), Some(&CodecConfig::with_quality(80)), 7)?;
    println!("{} frames of {}×{} px, {} emitter events", stack.n_frames, stack.width, stack.height, gt.len());

    let dir = std::env::temp_dir().join("cellstorm-simulate");
    std::fs::create_dir_all(&dir)?;
    write_stack(&stack, dir.join("stack.cstk"))?;
    write_emitters(&gt, dir.join("ground_truth.csv"))?;
    println!("wrote {}", dir.display());
    Ok(())
}
