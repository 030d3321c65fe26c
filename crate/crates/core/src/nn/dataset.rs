//! Training pairs for the generator: upsampled degraded frames and sparse
//! location maps.

use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::CameraModel;
use crate::codec::{CodecConfig, GridOffset};
use crate::io::stack::{write_stack, FrameStack, StackError};
use crate::io::table::LocalizationTable;
use crate::rng;
use crate::sim::{simulate_stack, SimConfig, SimError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("localization table is empty")]
    EmptyTable,
    #[error("table references frame {frame} but the stack has {n_frames}")]
    FrameOutOfRange { frame: usize, n_frames: usize },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Stack(#[from] StackError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Nearest-neighbour upsampling grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpsampleGrid {
    pub factor: usize,
}

impl Default for UpsampleGrid {
    fn default() -> Self {
        Self { factor: 5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub frame: usize,
    /// Upsampled frame scaled to [0, 1] by the ADU range.
    pub x: Array2<f32>,
    /// Location map: brightness at emitter pixels, zero elsewhere.
    pub y: Array2<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    pub pairs: Vec<TrainingPair>,
    /// Rows that landed on an already occupied target pixel.
    pub collisions: usize,
    /// Rows outside the frame, skipped.
    pub dropped: usize,
    pub factor: usize,
    /// Camera pixel size of the source stack.
    pub pixel_nm: f64,
    pub bit_depth: u8,
    /// Codec quality used for simulated clips.
    pub quality: Option<u8>,
}

/// Frame `index` of `stack` scaled to [0, 1] and upsampled by `factor`.
pub fn normalize_and_upsample(stack: &FrameStack, index: usize, factor: usize) -> Array2<f32> {
    let scale = 1.0 / stack.max_adu() as f32;
    let frame = stack.frame(index);
    let w = stack.width;
    Array2::from_shape_fn((stack.height * factor, w * factor), |(r, c)| {
        frame[(r / factor) * w + c / factor] as f32 * scale
    })
}

struct Target {
    frame: usize,
    x_nm: f64,
    y_nm: f64,
    brightness: f32,
}

fn build_pairs(stack: &FrameStack, targets: &[Target], factor: usize) -> PairSet {
    let (h, w) = (stack.height * factor, stack.width * factor);
    let sub = stack.pixel_nm / factor as f64;
    let mut pairs: Vec<TrainingPair> = (0..stack.n_frames)
        .map(|f| TrainingPair { frame: f, x: normalize_and_upsample(stack, f, factor), y: Array2::zeros((h, w)) })
        .collect();
    let (mut collisions, mut dropped) = (0, 0);
    for t in targets {
        let (c, r) = ((t.x_nm / sub).floor(), (t.y_nm / sub).floor());
        if c < 0.0 || r < 0.0 || c as usize >= w || r as usize >= h {
            dropped += 1;
            continue;
        }
        let cell = &mut pairs[t.frame].y[[r as usize, c as usize]];
        if *cell != 0.0 {
            collisions += 1;
            *cell = cell.max(t.brightness);
        } else {
            *cell = t.brightness;
        }
    }
    PairSet {
        pairs,
        collisions,
        dropped,
        factor,
        pixel_nm: stack.pixel_nm,
        bit_depth: stack.bit_depth,
        quality: None,
    }
}

/// Simulated clip with per-clip codec quality drawn uniformly from
/// [80, 90] and a random block-grid offset; targets come from the exact
/// ground truth, brightness normalized by the clip's brightest event.
pub fn make_pairs_simulated(
    sim: &SimConfig,
    camera: &CameraModel,
    grid: &UpsampleGrid,
    seed: u64,
) -> Result<PairSet, DatasetError> {
    let quality = rng::stream(seed, rng::domain::DATASET, 0).random_range(80..=90u8);
    let codec = CodecConfig { quality, grid_offset: GridOffset::RandomPerStack, qp_override: None };
    let (stack, gt) = simulate_stack(sim, camera, Some(&codec), seed)?;
    let max = gt.max_photons();
    let targets: Vec<Target> = gt
        .rows
        .iter()
        .map(|e| Target { frame: e.frame, x_nm: e.x_nm, y_nm: e.y_nm, brightness: (e.photons / max) as f32 })
        .collect();
    let mut set = build_pairs(&stack, &targets, grid.factor);
    set.quality = Some(quality);
    Ok(set)
}

/// Pairs from a measured stack and detections of the classical localizer.
pub fn make_pairs_from_localizations(
    stack: &FrameStack,
    table: &LocalizationTable,
    grid: &UpsampleGrid,
) -> Result<PairSet, DatasetError> {
    if table.is_empty() {
        return Err(DatasetError::EmptyTable);
    }
    if let Some(r) = table.rows.iter().find(|r| r.frame >= stack.n_frames) {
        return Err(DatasetError::FrameOutOfRange { frame: r.frame, n_frames: stack.n_frames });
    }
    let max = table.rows.iter().filter_map(|r| r.intensity).fold(0.0, f64::max);
    let targets: Vec<Target> = table
        .rows
        .iter()
        .map(|r| Target {
            frame: r.frame,
            x_nm: r.x_nm,
            y_nm: r.y_nm,
            brightness: match r.intensity {
                Some(i) if max > 0.0 && i > 0.0 => (i / max) as f32,
                _ => 1.0,
            },
        })
        .collect();
    Ok(build_pairs(stack, &targets, grid.factor))
}

/// Equal parts of two pair sets, shuffled with the seed.
pub fn mix_equal(a: Vec<TrainingPair>, b: Vec<TrainingPair>, seed: u64) -> Vec<TrainingPair> {
    let n = a.len().min(b.len());
    let mut out: Vec<TrainingPair> = a.into_iter().take(n).chain(b.into_iter().take(n)).collect();
    out.shuffle(&mut rng::stream(seed, rng::domain::DATASET, 1));
    out
}

/// Manifest written next to an exported dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub x_stack: String,
    pub y_stack: String,
    pub n_pairs: usize,
    pub upsample_factor: usize,
    /// Pixel size of the upsampled grid.
    pub pixel_nm: f64,
    /// `x = value / x_scale`.
    pub x_scale: f64,
    /// `y = value / y_scale`.
    pub y_scale: f64,
    pub collisions: usize,
    pub dropped: usize,
    pub quality: Option<u8>,
}

/// Writes `x.cstk`, `y.cstk` and `dataset.json` into `dir`. `x` keeps the
/// source ADU values; `y` is stored as 16-bit fixed point.
pub fn export_dataset(set: &PairSet, dir: impl AsRef<Path>, fps: f64) -> Result<DatasetManifest, DatasetError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let (h, w) = set.pairs.first().map(|p| p.x.dim()).unwrap_or((0, 0));
    let x_scale = ((1u32 << set.bit_depth) - 1) as f64;
    let y_scale = u16::MAX as f64;
    let sub = set.pixel_nm / set.factor as f64;
    let to_u16 = |a: &Array2<f32>, s: f64| a.iter().map(|&v| (v as f64 * s).round().clamp(0.0, 65535.0) as u16).collect();
    let xs = FrameStack::from_frames(set.pairs.iter().map(|p| to_u16(&p.x, x_scale)).collect(), w, h, sub, fps, set.bit_depth)?;
    let ys = FrameStack::from_frames(set.pairs.iter().map(|p| to_u16(&p.y, y_scale)).collect(), w, h, sub, fps, 16)?;
    write_stack(&xs, dir.join("x.cstk"))?;
    write_stack(&ys, dir.join("y.cstk"))?;
    let manifest = DatasetManifest {
        x_stack: "x.cstk".into(),
        y_stack: "y.cstk".into(),
        n_pairs: set.pairs.len(),
        upsample_factor: set.factor,
        pixel_nm: sub,
        x_scale,
        y_scale,
        collisions: set.collisions,
        dropped: set.dropped,
        quality: set.quality,
    };
    std::fs::write(dir.join("dataset.json"), serde_json::to_string_pretty(&manifest).expect("serializable"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::table::Localization;

    fn dark(w: usize, h: usize, n: usize) -> FrameStack {
        FrameStack::zeros(w, h, n, 100.0, 20.0)
    }

    #[test]
    fn origin_maps_to_first_pixel() {
        let t = LocalizationTable { rows: vec![Localization::at(0, 0.0, 0.0)] };
        let set = make_pairs_from_localizations(&dark(4, 4, 1), &t, &UpsampleGrid::default()).unwrap();
        assert_eq!(set.pairs[0].y[[0, 0]], 1.0);
    }

    #[test]
    fn sub_pixel_column_arithmetic() {
        let t = LocalizationTable { rows: vec![Localization::at(0, 151.0, 0.0)] };
        let set = make_pairs_from_localizations(&dark(4, 4, 1), &t, &UpsampleGrid { factor: 5 }).unwrap();
        assert_eq!(set.pairs[0].y[[0, 7]], 1.0);
        assert_eq!(set.pairs[0].y.iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn single_row_gives_single_target() {
        let t = LocalizationTable { rows: vec![Localization::at(1, 250.0, 120.0)] };
        let set = make_pairs_from_localizations(&dark(6, 6, 3), &t, &UpsampleGrid::default()).unwrap();
        let total: usize = set.pairs.iter().map(|p| p.y.iter().filter(|&&v| v != 0.0).count()).sum();
        assert_eq!(total, 1);
    }

    #[test]
    fn empty_table_is_an_error() {
        let r = make_pairs_from_localizations(&dark(4, 4, 1), &LocalizationTable::default(), &UpsampleGrid::default());
        assert!(matches!(r, Err(DatasetError::EmptyTable)));
    }

    #[test]
    fn collisions_keep_brighter() {
        let t = LocalizationTable {
            rows: vec![
                Localization { intensity: Some(50.0), ..Localization::at(0, 10.0, 10.0) },
                Localization { intensity: Some(100.0), ..Localization::at(0, 12.0, 11.0) },
            ],
        };
        let set = make_pairs_from_localizations(&dark(4, 4, 1), &t, &UpsampleGrid::default()).unwrap();
        assert_eq!(set.collisions, 1);
        assert_eq!(set.pairs[0].y[[0, 0]], 1.0);
    }

    #[test]
    fn x_is_normalized_and_replicated() {
        let mut s = dark(2, 1, 1);
        s.data = vec![4095, 0];
        let x = normalize_and_upsample(&s, 0, 3);
        assert_eq!(x.dim(), (3, 6));
        assert_eq!(x[[2, 2]], 1.0);
        assert_eq!(x[[0, 3]], 0.0);
    }

    #[test]
    fn mix_takes_equal_parts() {
        let p = |f| TrainingPair { frame: f, x: Array2::zeros((1, 1)), y: Array2::zeros((1, 1)) };
        let m = mix_equal(vec![p(0), p(1), p(2)], vec![p(10), p(11)], 4);
        assert_eq!(m.len(), 4);
        assert_eq!(m.iter().filter(|q| q.frame >= 10).count(), 2);
    }
}
