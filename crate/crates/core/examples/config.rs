//! Run configuration with dotted-path overrides, as used by the CLI.

use cellstorm::RunConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = RunConfig::from_json(r#"{"seed": 3, "codec": {"quality": 70}}"#)?;
    cfg.apply_overrides(&["camera.gain=0.34", "simulation.scene.density=2", "codec.grid_offset=random"])?;
    println!("{}", cfg.to_json());
    if let Err(e) = cfg.set_override("camera.gian", "1") {
        println!("rejected: {e}");
    }
    Ok(())
}
