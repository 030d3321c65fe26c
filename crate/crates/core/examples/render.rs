//! Super-resolved and widefield renderings of the same stack as PGM.

use cellstorm::eval::render::{render, widefield};
use cellstorm::io::pgm::write_pgm16;
use cellstorm::localize::{localize_stack, LocalizerConfig};
use cellstorm::sim::{simulate_stack, SimConfig};
use cellstorm::CameraModel;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let camera = CameraModel::default();
    let mut cfg = SimConfig { n_frames: 300, ..Default::default() };
    cfg.blink.photons = 500.0;
    let (stack, _) = simulate_stack(&cfg, &camera, None, 4)?;
    let table = localize_stack(&stack, &LocalizerConfig::default(), &camera);

    let dir = std::env::temp_dir().join("cellstorm-render");
    std::fs::create_dir_all(&dir)?;
    let sr = render(&table, 10.0, Some(15.0), None);
    write_pgm16(&sr, dir.join("super_resolved.pgm"))?;
    write_pgm16(&widefield(&stack), dir.join("widefield.pgm"))?;
    println!("{}×{} super-resolved, {}×{} widefield, in {}", sr.ncols(), sr.nrows(), stack.width, stack.height, dir.display());
    Ok(())
}
