//! Blinking-emitter ground truth and ideal photon-map rendering.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;
use thiserror::Error;

use crate::camera::{apply_camera, CameraError, CameraModel};
use crate::codec::{transcode_stack, CodecConfig, CodecError};
use crate::io::stack::FrameStack;
use crate::io::table::{Emitter, EmitterTable};
use crate::rng;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation parameters: {0}")]
    Invalid(String),
    #[error("bitmap mask has no set pixels")]
    EmptyMask,
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// Binary support image stretched over the field of view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    /// Row-major, nonzero = site support.
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Structure {
    UniformRandom,
    /// Sites spread along randomly oriented lines crossing the field.
    LineSet { lines: usize },
    BitmapMask { mask: Mask },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimScene {
    /// Square field edge length in µm.
    pub fov_um: f64,
    pub structure: Structure,
    /// Sites per µm².
    pub density: f64,
}

impl Default for SimScene {
    fn default() -> Self {
        Self { fov_um: 10.0, structure: Structure::UniformRandom, density: 6.0 }
    }
}

/// Two-state blinking with geometric on-times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlinkModel {
    /// Per-frame probability that an off site switches on.
    pub p_on: f64,
    pub mean_on_frames: f64,
    /// Expected photons per on-frame.
    pub photons: f64,
}

impl Default for BlinkModel {
    fn default() -> Self {
        Self { p_on: 0.01, mean_on_frames: 1.0, photons: 1000.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsfModel {
    pub sigma_nm: f64,
    /// Render cutoff in pixels; `None` means 4σ.
    pub truncation_radius_px: Option<f64>,
}

impl Default for PsfModel {
    fn default() -> Self {
        Self { sigma_nm: 130.0, truncation_radius_px: None }
    }
}

impl PsfModel {
    pub fn sigma_px(&self, pixel_nm: f64) -> f64 {
        self.sigma_nm / pixel_nm
    }

    pub fn radius_px(&self, pixel_nm: f64) -> f64 {
        self.truncation_radius_px.unwrap_or(4.0 * self.sigma_px(pixel_nm))
    }
}

/// Everything needed to produce a simulated stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub scene: SimScene,
    pub blink: BlinkModel,
    pub psf: PsfModel,
    pub n_frames: usize,
    pub pixel_nm: f64,
    pub fps: f64,
    /// Uniform background in photons per pixel.
    pub background_photons: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            scene: SimScene::default(),
            blink: BlinkModel::default(),
            psf: PsfModel::default(),
            n_frames: 200,
            pixel_nm: 100.0,
            fps: 20.0,
            background_photons: 0.0,
        }
    }
}

impl SimConfig {
    /// Frame size in pixels (square field).
    pub fn frame_px(&self) -> usize {
        ((self.scene.fov_um * 1000.0 / self.pixel_nm).round() as usize).max(1)
    }

    pub fn field_nm(&self) -> f64 {
        self.frame_px() as f64 * self.pixel_nm
    }
}

fn sample_sites(scene: &SimScene, field_nm: f64, seed: u64) -> Result<Vec<(f64, f64)>, SimError> {
    let area_um2 = (field_nm / 1000.0).powi(2);
    let n_sites = (scene.density * area_um2).round() as usize;
    let mut rng = rng::stream(seed, rng::domain::SCENE, 0);
    let inside = |v: f64| v.clamp(0.0, field_nm * (1.0 - f64::EPSILON));
    match &scene.structure {
        Structure::UniformRandom => Ok((0..n_sites)
            .map(|_| (rng.random::<f64>() * field_nm, rng.random::<f64>() * field_nm))
            .collect()),
        Structure::LineSet { lines } => {
            let lines = (*lines).max(1);
            let segs: Vec<((f64, f64), (f64, f64))> = (0..lines)
                .map(|_| {
                    let c = (rng.random::<f64>() * field_nm, rng.random::<f64>() * field_nm);
                    let theta = rng.random::<f64>() * std::f64::consts::PI;
                    (c, (theta.cos(), theta.sin()))
                })
                .collect();
            let mut sites = Vec::with_capacity(n_sites);
            while sites.len() < n_sites {
                let (c, d) = segs[rng.random_range(0..lines)];
                let t = (rng.random::<f64>() - 0.5) * 2.0 * field_nm;
                let (x, y) = (c.0 + t * d.0, c.1 + t * d.1);
                if (0.0..field_nm).contains(&x) && (0.0..field_nm).contains(&y) {
                    sites.push((x, y));
                }
            }
            Ok(sites)
        }
        Structure::BitmapMask { mask } => {
            let support: Vec<usize> = mask.data.iter().enumerate().filter(|(_, &v)| v != 0).map(|(i, _)| i).collect();
            if support.is_empty() || mask.width * mask.height != mask.data.len() {
                return Err(SimError::EmptyMask);
            }
            let (cw, ch) = (field_nm / mask.width as f64, field_nm / mask.height as f64);
            Ok((0..n_sites)
                .map(|_| {
                    let i = support[rng.random_range(0..support.len())];
                    let (mx, my) = ((i % mask.width) as f64, (i / mask.width) as f64);
                    (inside((mx + rng.random::<f64>()) * cw), inside((my + rng.random::<f64>()) * ch))
                })
                .collect())
        }
    }
}

/// Draws sites over the field and lets each blink independently.
///
/// An off site switches on with probability `p_on`; an on-run lasts a
/// geometric number of frames with mean `mean_on_frames`. After a run ends
/// the site may switch on again in the very next frame, so with
/// `mean_on_frames = 1` every frame is an independent Bernoulli(`p_on`)
/// trial. Each on-frame emits Poisson(`photons`) photons (at least one).
pub fn generate_ground_truth(
    scene: &SimScene,
    blink: &BlinkModel,
    field_nm: f64,
    n_frames: usize,
    seed: u64,
) -> Result<EmitterTable, SimError> {
    if n_frames == 0 {
        return Err(SimError::Invalid("n_frames must be at least 1".into()));
    }
    if !(scene.density > 0.0) || !(scene.fov_um > 0.0) {
        return Err(SimError::Invalid("density and fov must be positive".into()));
    }
    if !(0.0..=1.0).contains(&blink.p_on) || !(blink.mean_on_frames >= 1.0) || !(blink.photons > 0.0) {
        return Err(SimError::Invalid("require 0 <= p_on <= 1, mean_on_frames >= 1, photons > 0".into()));
    }
    let sites = sample_sites(scene, field_nm, seed)?;
    let photons = Poisson::new(blink.photons).map_err(|e| SimError::Invalid(e.to_string()))?;
    let stay_on = 1.0 - 1.0 / blink.mean_on_frames;
    let mut rows: Vec<Emitter> = sites
        .par_iter()
        .enumerate()
        .flat_map_iter(|(id, &(x, y))| {
            let mut rng = rng::stream(seed, rng::domain::BLINK, id as u64);
            let mut events = Vec::new();
            let mut remaining = 0usize;
            for frame in 0..n_frames {
                if remaining == 0 && blink.p_on > 0.0 && rng.random::<f64>() < blink.p_on {
                    remaining = 1;
                    while stay_on > 0.0 && rng.random::<f64>() < stay_on {
                        remaining += 1;
                    }
                }
                if remaining > 0 {
                    remaining -= 1;
                    let n: f64 = photons.sample(&mut rng);
                    events.push(Emitter { frame, x_nm: x, y_nm: y, photons: n.max(1.0), id: Some(id as u64) });
                }
            }
            events
        })
        .collect();
    rows.sort_by_key(|e| (e.frame, e.id));
    Ok(EmitterTable { rows })
}

/// `∫_{lo}^{hi} N(t; 0, σ²) dt`.
fn gauss_interval(lo: f64, hi: f64, sigma: f64) -> f64 {
    let s = std::f64::consts::SQRT_2 * sigma;
    0.5 * (erf(hi / s) - erf(lo / s))
}

/// Adds one pixel-integrated Gaussian spot to `map` (pixel units).
pub fn add_spot(map: &mut Array2<f64>, x_px: f64, y_px: f64, sigma_px: f64, amplitude: f64, radius_px: f64) {
    let (h, w) = map.dim();
    let c0 = (x_px - radius_px).floor().max(0.0) as usize;
    let c1 = ((x_px + radius_px).ceil().max(0.0) as usize).min(w);
    let r0 = (y_px - radius_px).floor().max(0.0) as usize;
    let r1 = ((y_px + radius_px).ceil().max(0.0) as usize).min(h);
    if c0 >= c1 || r0 >= r1 {
        return;
    }
    let wx: Vec<f64> = (c0..c1).map(|c| gauss_interval(c as f64 - x_px, c as f64 + 1.0 - x_px, sigma_px)).collect();
    for r in r0..r1 {
        let wy = gauss_interval(r as f64 - y_px, r as f64 + 1.0 - y_px, sigma_px);
        for (k, c) in (c0..c1).enumerate() {
            map[[r, c]] += amplitude * wy * wx[k];
        }
    }
}

/// Expected photons per pixel for the events of one frame.
pub fn render_photon_map(events: &[Emitter], psf: &PsfModel, width: usize, height: usize, pixel_nm: f64) -> Array2<f64> {
    let mut map = Array2::zeros((height, width));
    let sigma = psf.sigma_px(pixel_nm);
    let radius = psf.radius_px(pixel_nm);
    for e in events {
        add_spot(&mut map, e.x_nm / pixel_nm, e.y_nm / pixel_nm, sigma, e.photons, radius);
    }
    map
}

/// Renders and degrades one frame of ground truth.
pub fn degrade_frame(
    events: &[Emitter],
    cfg: &SimConfig,
    camera: &CameraModel,
    frame_index: usize,
    seed: u64,
) -> Result<Vec<u16>, SimError> {
    let n = cfg.frame_px();
    let mut map = render_photon_map(events, &cfg.psf, n, n, cfg.pixel_nm);
    if cfg.background_photons > 0.0 {
        map += cfg.background_photons;
    }
    Ok(apply_camera(&map, camera, frame_index, cfg.fps, seed)?.iter().copied().collect())
}

/// Ground truth → PSF → camera → optional codec.
pub fn simulate_stack(
    cfg: &SimConfig,
    camera: &CameraModel,
    codec: Option<&CodecConfig>,
    seed: u64,
) -> Result<(FrameStack, EmitterTable), SimError> {
    if !(cfg.pixel_nm > 0.0 && cfg.fps > 0.0 && cfg.psf.sigma_nm > 0.0) {
        return Err(SimError::Invalid("pixel_nm, fps and psf sigma must be positive".into()));
    }
    camera.validate()?;
    let gt = generate_ground_truth(&cfg.scene, &cfg.blink, cfg.field_nm(), cfg.n_frames, seed)?;
    let n = cfg.frame_px();
    let frames: Vec<Vec<u16>> = (0..cfg.n_frames)
        .into_par_iter()
        .map(|f| degrade_frame(gt.frame_rows(f), cfg, camera, f, seed))
        .collect::<Result<_, _>>()?;
    let stack = FrameStack::from_frames(frames, n, n, cfg.pixel_nm, cfg.fps, camera.bit_depth)
        .map_err(|e| SimError::Invalid(e.to_string()))?;
    let stack = match codec {
        Some(c) => transcode_stack(&stack, c, seed)?,
        None => stack,
    };
    Ok((stack, gt))
}
