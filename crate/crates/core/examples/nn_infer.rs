//! Neural localization with the shipped fixture weights. The fixture net is
//! untrained, so the point is the pipeline rather than the accuracy.

use std::path::Path;

use cellstorm::nn::{load_weights, nn_localize_stack, UpsampleGrid};
use cellstorm::sim::{simulate_stack, SimConfig};
use cellstorm::CameraModel;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let weights = load_weights(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/tiny_unet"))?;
    println!("{} layers, depth {}, tile {:?}", weights.layers.len(), weights.depth, weights.tile_size());
    let cfg = SimConfig { n_frames: 5, ..Default::default() };
    let (stack, gt) = simulate_stack(&cfg, &CameraModel::default(), None, 1)?;
    let table = nn_localize_stack(&stack, &weights, &UpsampleGrid::default());
    println!("{} map maxima over {} frames ({} true events)", table.len(), stack.n_frames, gt.len());
    Ok(())
}
