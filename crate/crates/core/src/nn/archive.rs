//! `manifest.json` + `weights.bin` weight archive.
//!
//! The manifest lists layers in execution order. Tensor blobs are
//! little-endian `f32` at byte offsets into the blob file; convolution
//! weights are laid out `[out, in, kh, kw]`.
//!
//! ```json
//! {
//!   "format": "cellstorm-unet", "version": 1, "input_channels": 1,
//!   "tile_size": 64, "blob": "weights.bin",
//!   "layers": [
//!     {"kind": "conv", "in_channels": 1, "out_channels": 4, "kernel": 4, "stride": 2, "padding": 1,
//!      "weight": {"offset": 0, "shape": [4, 1, 4, 4]}, "bias": {"offset": 256, "shape": [4]}},
//!     {"kind": "norm_affine", "channels": 4, "scale": {...}, "shift": {...}},
//!     {"kind": "leaky_relu", "slope": 0.2},
//!     {"kind": "nn_resize", "factor": 2},
//!     {"kind": "concat_skip", "source": 2},
//!     {"kind": "clamp_nonneg"}
//!   ]
//! }
//! ```
//!
//! `concat_skip` appends the output of layer `source` (or the network
//! input for `-1`) after the current channels.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FORMAT: &str = "cellstorm-unet";

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("layer {layer}: shape mismatch: {msg}")]
    ShapeMismatch { layer: usize, msg: String },
    #[error("layer {layer}: dangling skip source {skip_source}")]
    DanglingSkip { layer: usize, skip_source: i64 },
    #[error("layer {layer}: tensor {name} needs bytes {start}..{end} but blob holds {available}")]
    Truncated { layer: usize, name: &'static str, start: u64, end: u64, available: u64 },
    #[error("topology: {0}")]
    Topology(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRef {
    /// Byte offset into the blob.
    pub offset: u64,
    pub shape: Vec<usize>,
}

impl TensorRef {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        weight: TensorRef,
        bias: Option<TensorRef>,
    },
    NormAffine { channels: usize, scale: TensorRef, shift: TensorRef },
    LeakyRelu { slope: f32 },
    Relu,
    NnResize { factor: usize },
    ConcatSkip { source: i64 },
    ClampNonneg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub input_channels: usize,
    /// Training patch size in upsampled pixels; larger frames are tiled.
    #[serde(default)]
    pub tile_size: Option<usize>,
    #[serde(default = "default_blob")]
    pub blob: String,
    pub layers: Vec<LayerSpec>,
}

fn default_blob() -> String {
    "weights.bin".into()
}

/// A loaded layer with its tensors resolved.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Conv { in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize, weight: Vec<f32>, bias: Vec<f32> },
    NormAffine { scale: Vec<f32>, shift: Vec<f32> },
    LeakyRelu { slope: f32 },
    Relu,
    NnResize { factor: usize },
    ConcatSkip { source: Option<usize> },
    ClampNonneg,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub kind: LayerKind,
    pub out_channels: usize,
    /// Downsampling level of the output relative to the input.
    pub level: usize,
}

/// Validated, immutable generator weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightArchive {
    pub manifest: Manifest,
    pub layers: Vec<Layer>,
    /// Number of stride-2 encoder stages.
    pub depth: usize,
}

impl WeightArchive {
    /// Input sides must be multiples of this.
    pub fn required_multiple(&self) -> usize {
        1 << self.depth
    }

    pub fn tile_size(&self) -> Option<usize> {
        self.manifest.tile_size
    }

    /// Indices whose outputs are consumed by a skip connection.
    pub fn skip_sources(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .layers
            .iter()
            .filter_map(|l| match l.kind {
                LayerKind::ConcatSkip { source } => source,
                _ => None,
            })
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Validates a manifest against a blob held in memory.
    pub fn from_parts(manifest: Manifest, blob: &[u8]) -> Result<Self, ArchiveError> {
        if manifest.format != FORMAT {
            return Err(ArchiveError::Manifest(format!("unknown format {:?}", manifest.format)));
        }
        if manifest.version != 1 {
            return Err(ArchiveError::Manifest(format!("unsupported version {}", manifest.version)));
        }
        let available = blob.len() as u64;
        let read = |layer: usize, name: &'static str, t: &TensorRef, expect: &[usize]| -> Result<Vec<f32>, ArchiveError> {
            if t.shape != expect {
                return Err(ArchiveError::ShapeMismatch {
                    layer,
                    msg: format!("{name} declared {:?}, layer needs {:?}", t.shape, expect),
                });
            }
            let start = t.offset;
            let end = start + 4 * t.numel() as u64;
            if end > available {
                return Err(ArchiveError::Truncated { layer, name, start, end, available });
            }
            Ok(blob[start as usize..end as usize]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect())
        };

        let mut layers: Vec<Layer> = Vec::with_capacity(manifest.layers.len());
        let (mut channels, mut level) = (manifest.input_channels, 0usize);
        let (mut downs, mut ups) = (0usize, 0usize);
        let mut max_level = 0usize;
        for (i, spec) in manifest.layers.iter().enumerate() {
            let mismatch = |msg: String| ArchiveError::ShapeMismatch { layer: i, msg };
            let kind = match spec {
                LayerSpec::Conv { in_channels, out_channels, kernel, stride, padding, weight, bias } => {
                    if *in_channels != channels {
                        return Err(mismatch(format!("conv expects {in_channels} input channels, gets {channels}")));
                    }
                    match stride {
                        1 if *kernel == 2 * padding + 1 => {}
                        2 if *kernel == 2 * padding + 2 => {
                            downs += 1;
                            level += 1;
                        }
                        _ => {
                            return Err(mismatch(format!(
                                "kernel {kernel}, stride {stride}, padding {padding} neither preserves nor halves size"
                            )))
                        }
                    }
                    let w = read(i, "weight", weight, &[*out_channels, *in_channels, *kernel, *kernel])?;
                    let b = match bias {
                        Some(b) => read(i, "bias", b, &[*out_channels])?,
                        None => vec![0.0; *out_channels],
                    };
                    channels = *out_channels;
                    LayerKind::Conv {
                        in_ch: *in_channels,
                        out_ch: *out_channels,
                        kernel: *kernel,
                        stride: *stride,
                        padding: *padding,
                        weight: w,
                        bias: b,
                    }
                }
                LayerSpec::NormAffine { channels: c, scale, shift } => {
                    if *c != channels {
                        return Err(mismatch(format!("norm over {c} channels, input has {channels}")));
                    }
                    LayerKind::NormAffine { scale: read(i, "scale", scale, &[*c])?, shift: read(i, "shift", shift, &[*c])? }
                }
                LayerSpec::LeakyRelu { slope } => LayerKind::LeakyRelu { slope: *slope },
                LayerSpec::Relu => LayerKind::Relu,
                LayerSpec::NnResize { factor } => {
                    if *factor != 2 {
                        return Err(mismatch(format!("resize factor {factor}; only 2 is supported")));
                    }
                    if level == 0 {
                        return Err(ArchiveError::Topology(format!("layer {i}: resize above input resolution")));
                    }
                    ups += 1;
                    level -= 1;
                    LayerKind::NnResize { factor: 2 }
                }
                LayerSpec::ConcatSkip { source } => {
                    let src = *source;
                    let (src_channels, src_level, resolved) = if src == -1 {
                        (manifest.input_channels, 0, None)
                    } else if src >= 0 && (src as usize) < i {
                        let l = &layers[src as usize];
                        (l.out_channels, l.level, Some(src as usize))
                    } else {
                        return Err(ArchiveError::DanglingSkip { layer: i, skip_source: src });
                    };
                    if src_level != level {
                        return Err(mismatch(format!("skip from level {src_level} into level {level}")));
                    }
                    channels += src_channels;
                    LayerKind::ConcatSkip { source: resolved }
                }
                LayerSpec::ClampNonneg => LayerKind::ClampNonneg,
            };
            max_level = max_level.max(level);
            layers.push(Layer { kind, out_channels: channels, level });
        }
        if downs != ups {
            return Err(ArchiveError::Topology(format!("{downs} encoder stages but {ups} decoder stages")));
        }
        if level != 0 {
            return Err(ArchiveError::Topology("output is not at input resolution".into()));
        }
        if channels != 1 {
            return Err(ArchiveError::Topology(format!("output has {channels} channels, expected 1")));
        }
        if manifest.input_channels != 1 {
            return Err(ArchiveError::Topology("only single-channel input is supported".into()));
        }
        let depth = max_level;
        if let Some(t) = manifest.tile_size {
            if t == 0 || t % (1 << depth) != 0 || t <= 16 {
                return Err(ArchiveError::Manifest(format!("tile_size {t} must exceed 16 and be a multiple of {}", 1 << depth)));
            }
        }
        Ok(Self { manifest, layers, depth })
    }
}

/// Loads `manifest.json` from `path` (a directory, or the manifest file
/// itself) together with its blob.
pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightArchive, ArchiveError> {
    let path = path.as_ref();
    let manifest_path = if path.is_dir() { path.join("manifest.json") } else { path.to_path_buf() };
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |source| ArchiveError::Io { path: p, source }
    };
    let text = std::fs::read_to_string(&manifest_path).map_err(io(&manifest_path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| ArchiveError::Manifest(e.to_string()))?;
    let blob_path = manifest_path.parent().unwrap_or(Path::new(".")).join(&manifest.blob);
    let blob = std::fs::read(&blob_path).map_err(io(&blob_path))?;
    WeightArchive::from_parts(manifest, &blob)
}

/// Writes an archive back out: tensors are packed in layer order.
pub fn save_weights(archive: &WeightArchive, dir: impl AsRef<Path>) -> Result<(), ArchiveError> {
    let dir = dir.as_ref();
    let mut blob: Vec<u8> = Vec::new();
    let mut push = |v: &[f32], shape: Vec<usize>| {
        let t = TensorRef { offset: blob.len() as u64, shape };
        for x in v {
            blob.extend_from_slice(&x.to_le_bytes());
        }
        t
    };
    let mut specs = Vec::with_capacity(archive.layers.len());
    for l in &archive.layers {
        specs.push(match &l.kind {
            LayerKind::Conv { in_ch, out_ch, kernel, stride, padding, weight, bias } => LayerSpec::Conv {
                in_channels: *in_ch,
                out_channels: *out_ch,
                kernel: *kernel,
                stride: *stride,
                padding: *padding,
                weight: push(weight, vec![*out_ch, *in_ch, *kernel, *kernel]),
                bias: Some(push(bias, vec![*out_ch])),
            },
            LayerKind::NormAffine { scale, shift } => LayerSpec::NormAffine {
                channels: scale.len(),
                scale: push(scale, vec![scale.len()]),
                shift: push(shift, vec![shift.len()]),
            },
            LayerKind::LeakyRelu { slope } => LayerSpec::LeakyRelu { slope: *slope },
            LayerKind::Relu => LayerSpec::Relu,
            LayerKind::NnResize { factor } => LayerSpec::NnResize { factor: *factor },
            LayerKind::ConcatSkip { source } => LayerSpec::ConcatSkip { source: source.map_or(-1, |s| s as i64) },
            LayerKind::ClampNonneg => LayerSpec::ClampNonneg,
        });
    }
    let manifest = Manifest { layers: specs, blob: default_blob(), ..archive.manifest.clone() };
    let io = |p: PathBuf| move |source| ArchiveError::Io { path: p, source };
    let blob_path = dir.join("weights.bin");
    std::fs::write(&blob_path, &blob).map_err(io(blob_path.clone()))?;
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| ArchiveError::Manifest(e.to_string()))?;
    let mpath = dir.join("manifest.json");
    std::fs::write(&mpath, text).map_err(io(mpath.clone()))
}

/// Builder for small U-Nets, mainly for tests and examples.
///
/// Encoder: `levels` × (stride-2 4×4 conv → affine norm → leaky ReLU 0.2).
/// Decoder: `levels` × (2× resize → 3×3 conv → ReLU → concat skip), where
/// the last decoder stage concatenates the network input. A final 3×3 conv
/// to one channel and a non-negative clamp close the network.
pub fn unet_layout(levels: usize, filters: usize) -> Vec<(LayerSpec, usize)> {
    let mut layers: Vec<(LayerSpec, usize)> = Vec::new();
    let t = |n: usize| TensorRef { offset: 0, shape: vec![n] };
    let mut ch = 1;
    let mut enc_out = Vec::new();
    for l in 0..levels {
        let out = (filters << l).min(512);
        layers.push((
            LayerSpec::Conv {
                in_channels: ch,
                out_channels: out,
                kernel: 4,
                stride: 2,
                padding: 1,
                weight: TensorRef { offset: 0, shape: vec![out, ch, 4, 4] },
                bias: Some(t(out)),
            },
            out,
        ));
        layers.push((LayerSpec::NormAffine { channels: out, scale: t(out), shift: t(out) }, out));
        layers.push((LayerSpec::LeakyRelu { slope: 0.2 }, out));
        enc_out.push((layers.len() - 1, out));
        ch = out;
    }
    for l in (0..levels).rev() {
        let (skip_idx, skip_ch) = if l == 0 { (-1i64, 1) } else { (enc_out[l - 1].0 as i64, enc_out[l - 1].1) };
        let out = if l == 0 { filters } else { enc_out[l - 1].1 };
        layers.push((LayerSpec::NnResize { factor: 2 }, ch));
        layers.push((
            LayerSpec::Conv {
                in_channels: ch,
                out_channels: out,
                kernel: 3,
                stride: 1,
                padding: 1,
                weight: TensorRef { offset: 0, shape: vec![out, ch, 3, 3] },
                bias: Some(t(out)),
            },
            out,
        ));
        layers.push((LayerSpec::Relu, out));
        layers.push((LayerSpec::ConcatSkip { source: skip_idx }, out + skip_ch));
        ch = out + skip_ch;
    }
    layers.push((
        LayerSpec::Conv {
            in_channels: ch,
            out_channels: 1,
            kernel: 3,
            stride: 1,
            padding: 1,
            weight: TensorRef { offset: 0, shape: vec![1, ch, 3, 3] },
            bias: Some(t(1)),
        },
        1,
    ));
    layers.push((LayerSpec::ClampNonneg, 1));
    layers
}

/// Packs a layout into manifest + blob, filling each tensor with `fill(layer, name, len)`.
pub fn pack_layout(
    layout: &[(LayerSpec, usize)],
    tile_size: Option<usize>,
    mut fill: impl FnMut(usize, &str, usize) -> Vec<f32>,
) -> (Manifest, Vec<u8>) {
    let mut blob = Vec::new();
    let mut place = |layer: usize, name: &str, t: &TensorRef| {
        let v = fill(layer, name, t.numel());
        assert_eq!(v.len(), t.numel());
        let r = TensorRef { offset: blob.len() as u64, shape: t.shape.clone() };
        for x in v {
            blob.extend_from_slice(&x.to_le_bytes());
        }
        r
    };
    let layers = layout
        .iter()
        .enumerate()
        .map(|(i, (spec, _))| match spec {
            LayerSpec::Conv { in_channels, out_channels, kernel, stride, padding, weight, bias } => LayerSpec::Conv {
                in_channels: *in_channels,
                out_channels: *out_channels,
                kernel: *kernel,
                stride: *stride,
                padding: *padding,
                weight: place(i, "weight", weight),
                bias: bias.as_ref().map(|b| place(i, "bias", b)),
            },
            LayerSpec::NormAffine { channels, scale, shift } => LayerSpec::NormAffine {
                channels: *channels,
                scale: place(i, "scale", scale),
                shift: place(i, "shift", shift),
            },
            other => other.clone(),
        })
        .collect();
    (
        Manifest { format: FORMAT.into(), version: 1, input_channels: 1, tile_size, blob: default_blob(), layers },
        blob,
    )
}
