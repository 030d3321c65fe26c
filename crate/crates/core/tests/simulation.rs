use cellstorm::camera::{apply_camera, CameraModel};
use cellstorm::codec::{transcode_stack, CodecConfig, GridOffset};
use cellstorm::io::stack::encode_stack;
use cellstorm::sim::{generate_ground_truth, render_photon_map, simulate_stack, BlinkModel, SimConfig, SimScene};
use cellstorm::FrameStack;

#[test]
fn event_count_matches_bernoulli_expectation() {
    let scene = SimScene::default();
    let blink = BlinkModel::default();
    let frames = 2000;
    let gt = generate_ground_truth(&scene, &blink, 10_000.0, frames, 42).unwrap();
    let sites = (scene.density * 100.0).round();
    assert_eq!(sites, 600.0);
    let trials = sites * frames as f64;
    let expected = trials * blink.p_on;
    let sigma = (trials * blink.p_on * (1.0 - blink.p_on)).sqrt();
    let n = gt.len() as f64;
    assert!((n - expected).abs() <= 3.0 * sigma, "{n} events, expected {expected} ± {sigma}");
    assert!(gt.rows.iter().all(|e| e.photons >= 1.0));
    assert!(gt.rows.windows(2).all(|w| (w[0].frame, w[0].id) < (w[1].frame, w[1].id)));
}

#[test]
fn realized_photons_are_poisson_around_the_mean() {
    let blink = BlinkModel { photons: 500.0, p_on: 0.05, ..Default::default() };
    let gt = generate_ground_truth(&SimScene::default(), &blink, 10_000.0, 300, 3).unwrap();
    let n = gt.len() as f64;
    let mean = gt.rows.iter().map(|e| e.photons).sum::<f64>() / n;
    let var = gt.rows.iter().map(|e| (e.photons - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!((mean - 500.0).abs() <= 3.0 * (500.0 / n).sqrt(), "mean {mean}");
    assert!((var / 500.0 - 1.0).abs() < 0.1, "variance {var}");
}

fn small_config() -> SimConfig {
    let mut cfg = SimConfig::default();
    cfg.scene.fov_um = 4.0;
    cfg.n_frames = 30;
    cfg.blink.p_on = 0.05;
    cfg.blink.photons = 1000.0;
    cfg
}

#[test]
fn same_seed_gives_identical_outputs() {
    let cfg = small_config();
    let codec = CodecConfig::with_quality(70);
    let a = simulate_stack(&cfg, &CameraModel::default(), Some(&codec), 7).unwrap();
    let b = simulate_stack(&cfg, &CameraModel::default(), Some(&codec), 7).unwrap();
    assert_eq!(a, b);
    let (mut ba, mut bb) = (Vec::new(), Vec::new());
    encode_stack(&a.0, &mut ba).unwrap();
    encode_stack(&b.0, &mut bb).unwrap();
    assert_eq!(ba, bb);
    let c = simulate_stack(&cfg, &CameraModel::default(), Some(&codec), 8).unwrap();
    assert_ne!(a.0, c.0);
}

#[test]
fn pipeline_equals_manual_stage_composition() {
    let cfg = small_config();
    let camera = CameraModel::default();
    let codec = CodecConfig { quality: 80, grid_offset: GridOffset::RandomPerStack, qp_override: None };
    let seed = 11;
    let (stack, gt) = simulate_stack(&cfg, &camera, Some(&codec), seed).unwrap();

    let manual_gt = generate_ground_truth(&cfg.scene, &cfg.blink, cfg.field_nm(), cfg.n_frames, seed).unwrap();
    assert_eq!(gt, manual_gt);
    let n = cfg.frame_px();
    let frames = (0..cfg.n_frames)
        .map(|f| {
            let map = render_photon_map(manual_gt.frame_rows(f), &cfg.psf, n, n, cfg.pixel_nm);
            apply_camera(&map, &camera, f, cfg.fps, seed).unwrap().iter().copied().collect()
        })
        .collect();
    let raw = FrameStack::from_frames(frames, n, n, cfg.pixel_nm, cfg.fps, camera.bit_depth).unwrap();
    assert_eq!(simulate_stack(&cfg, &camera, None, seed).unwrap().0, raw);
    assert_eq!(transcode_stack(&raw, &codec, seed).unwrap(), stack);
}

#[test]
fn dark_stack_stays_near_offset() {
    let mut cfg = small_config();
    cfg.blink.p_on = 0.0;
    let camera = CameraModel::default();
    let (stack, gt) = simulate_stack(&cfg, &camera, None, 5).unwrap();
    assert!(gt.is_empty());
    // Offset plus six read-noise standard deviations in ADU.
    let ceiling = (camera.offset + 6.0 * camera.read_noise / camera.gain).ceil() as u16;
    assert!(stack.data.iter().all(|&v| v == 0 || (camera.clip_floor..=ceiling).contains(&v)));
}

#[test]
fn coarse_quantization_shows_block_structure() {
    let mut cfg = small_config();
    cfg.background_photons = 20.0;
    let camera = CameraModel::default();
    let raw = simulate_stack(&cfg, &camera, None, 9).unwrap().0;
    let coded = simulate_stack(&cfg, &camera, Some(&CodecConfig { qp_override: Some(30), ..CodecConfig::with_quality(70) }), 9).unwrap().0;
    // Mean absolute horizontal step across block seams vs. inside blocks.
    let step_ratio = |s: &FrameStack| {
        let (mut seam, mut inner, mut ns, mut ni) = (0.0, 0.0, 0usize, 0usize);
        for f in s.frames() {
            for r in 0..s.height {
                for c in 1..s.width {
                    let d = (f[r * s.width + c] as f64 - f[r * s.width + c - 1] as f64).abs();
                    if c % 4 == 0 {
                        seam += d;
                        ns += 1;
                    } else {
                        inner += d;
                        ni += 1;
                    }
                }
            }
        }
        (seam / ns as f64) / (inner / ni as f64)
    };
    let (r, c) = (step_ratio(&raw), step_ratio(&coded));
    assert!((r - 1.0).abs() < 0.03, "{r}");
    assert!(c > r + 0.05, "raw {r}, coded {c}");
}
