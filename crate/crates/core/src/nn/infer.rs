//! Forward pass of the generator and whole-stack neural localization.

use ndarray::Array2;
use rayon::prelude::*;
use thiserror::Error;

use crate::io::stack::FrameStack;
use crate::io::table::LocalizationTable;
use crate::nn::archive::{LayerKind, WeightArchive};
use crate::nn::dataset::{normalize_and_upsample, UpsampleGrid};
use crate::nn::extract::extract_table;

/// Overlap between neighbouring tiles, in upsampled pixels.
pub const TILE_OVERLAP: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum InferError {
    #[error("input {height}x{width} is not a multiple of {multiple} in both dimensions")]
    NotDivisible { height: usize, width: usize, multiple: usize },
}

/// Channel-major feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }
}

fn conv2d(x: &Tensor, out_ch: usize, kernel: usize, stride: usize, padding: usize, weight: &[f32], bias: &[f32]) -> Tensor {
    let oh = (x.height + 2 * padding - kernel) / stride + 1;
    let ow = (x.width + 2 * padding - kernel) / stride + 1;
    let (ih, iw) = (x.height as isize, x.width as isize);
    let kk = kernel * kernel;
    let planes: Vec<Vec<f32>> = (0..out_ch)
        .into_par_iter()
        .map(|o| {
            let mut acc = vec![bias[o] as f64; oh * ow];
            for i in 0..x.channels {
                let src = x.plane(i);
                let wk = &weight[(o * x.channels + i) * kk..(o * x.channels + i + 1) * kk];
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        let wv = wk[ky * kernel + kx] as f64;
                        if wv == 0.0 {
                            continue;
                        }
                        for oy in 0..oh {
                            let y = (oy * stride + ky) as isize - padding as isize;
                            if y < 0 || y >= ih {
                                continue;
                            }
                            let row = &src[y as usize * x.width..(y as usize + 1) * x.width];
                            let dst = &mut acc[oy * ow..(oy + 1) * ow];
                            for (ox, d) in dst.iter_mut().enumerate() {
                                let xx = (ox * stride + kx) as isize - padding as isize;
                                if xx >= 0 && xx < iw {
                                    *d += wv * row[xx as usize] as f64;
                                }
                            }
                        }
                    }
                }
            }
            acc.into_iter().map(|v| v as f32).collect()
        })
        .collect();
    Tensor { channels: out_ch, height: oh, width: ow, data: planes.concat() }
}

fn resize_nearest(x: &Tensor, factor: usize) -> Tensor {
    let (oh, ow) = (x.height * factor, x.width * factor);
    let mut data = Vec::with_capacity(x.channels * oh * ow);
    for c in 0..x.channels {
        let src = x.plane(c);
        for y in 0..oh {
            for xx in 0..ow {
                data.push(src[(y / factor) * x.width + xx / factor]);
            }
        }
    }
    Tensor { channels: x.channels, height: oh, width: ow, data }
}

/// Runs the network on a one-channel tensor.
pub fn forward(weights: &WeightArchive, input: Tensor) -> Tensor {
    let keep = weights.skip_sources();
    let mut saved: Vec<(usize, Tensor)> = Vec::new();
    let mut x = input.clone();
    for (i, layer) in weights.layers.iter().enumerate() {
        x = match &layer.kind {
            LayerKind::Conv { out_ch, kernel, stride, padding, weight, bias, .. } => {
                conv2d(&x, *out_ch, *kernel, *stride, *padding, weight, bias)
            }
            LayerKind::NormAffine { scale, shift } => {
                let n = x.height * x.width;
                for (c, plane) in x.data.chunks_exact_mut(n).enumerate() {
                    plane.iter_mut().for_each(|v| *v = *v * scale[c] + shift[c]);
                }
                x
            }
            LayerKind::LeakyRelu { slope } => {
                x.data.iter_mut().for_each(|v| {
                    if *v < 0.0 {
                        *v *= slope
                    }
                });
                x
            }
            LayerKind::Relu | LayerKind::ClampNonneg => {
                x.data.iter_mut().for_each(|v| *v = v.max(0.0));
                x
            }
            LayerKind::NnResize { factor } => resize_nearest(&x, *factor),
            LayerKind::ConcatSkip { source } => {
                let skip = match source {
                    None => &input,
                    Some(s) => &saved.iter().find(|(k, _)| k == s).expect("validated skip").1,
                };
                x.data.extend_from_slice(&skip.data);
                x.channels += skip.channels;
                x
            }
        };
        if keep.binary_search(&i).is_ok() {
            saved.push((i, x.clone()));
        }
    }
    x
}

/// Generates the localization map for one upsampled, normalized frame.
pub fn infer(frame: &Array2<f32>, weights: &WeightArchive) -> Result<Array2<f32>, InferError> {
    let (h, w) = frame.dim();
    let m = weights.required_multiple();
    if h % m != 0 || w % m != 0 || h == 0 || w == 0 {
        return Err(InferError::NotDivisible { height: h, width: w, multiple: m });
    }
    let input = Tensor { channels: 1, height: h, width: w, data: frame.iter().copied().collect() };
    let out = forward(weights, input);
    Ok(Array2::from_shape_vec((h, w), out.data[..h * w].to_vec()).expect("output shape"))
}

fn pad_to_multiple(img: &Array2<f32>, m: usize) -> Array2<f32> {
    let (h, w) = img.dim();
    let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    if (ph, pw) == (h, w) {
        return img.clone();
    }
    Array2::from_shape_fn((ph, pw), |(r, c)| img[[r.min(h - 1), c.min(w - 1)]])
}

/// Tile start positions along one axis: multiples of `align`, stride
/// `tile - overlap`, with the last tile flush with the end.
fn tile_starts(len: usize, tile: usize, align: usize) -> Vec<usize> {
    if len <= tile {
        return vec![0];
    }
    let stride = ((tile - TILE_OVERLAP) / align * align).max(align);
    let last = len - tile;
    let mut v: Vec<usize> = (0..).map(|k| k * stride).take_while(|&s| s < last).collect();
    v.push(last);
    v
}

/// Generates the map for an arbitrarily sized frame. Frames larger than
/// `tile` are processed as overlapping tiles; each tile contributes only
/// its interior (half the overlap is dropped on sides shared with a
/// neighbour).
pub fn infer_tiled(frame: &Array2<f32>, weights: &WeightArchive, tile: Option<usize>) -> Array2<f32> {
    let (h, w) = frame.dim();
    let m = weights.required_multiple();
    let padded = pad_to_multiple(frame, m);
    let (ph, pw) = padded.dim();
    let out = match tile {
        Some(t) if ph > t || pw > t => {
            let mut out = Array2::zeros((ph, pw));
            let margin = TILE_OVERLAP / 2;
            let (rows, cols) = (tile_starts(ph, t, m), tile_starts(pw, t, m));
            for (ri, &r0) in rows.iter().enumerate() {
                for (ci, &c0) in cols.iter().enumerate() {
                    let th = t.min(ph);
                    let tw = t.min(pw);
                    let patch = padded.slice(ndarray::s![r0..r0 + th, c0..c0 + tw]).to_owned();
                    let map = infer(&patch, weights).expect("tile is aligned");
                    let y0 = if ri == 0 { 0 } else { margin };
                    let y1 = if ri + 1 == rows.len() { th } else { th - margin };
                    let x0 = if ci == 0 { 0 } else { margin };
                    let x1 = if ci + 1 == cols.len() { tw } else { tw - margin };
                    out.slice_mut(ndarray::s![r0 + y0..r0 + y1, c0 + x0..c0 + x1])
                        .assign(&map.slice(ndarray::s![y0..y1, x0..x1]));
                }
            }
            out
        }
        _ => infer(&padded, weights).expect("padded to multiple"),
    };
    out.slice(ndarray::s![..h, ..w]).to_owned()
}

/// Per frame: normalize, upsample, infer (tiled when larger than the
/// archive's training size), extract.
pub fn nn_localize_stack(stack: &FrameStack, weights: &WeightArchive, grid: &UpsampleGrid) -> LocalizationTable {
    nn_localize_stack_with_tile(stack, weights, grid, weights.tile_size())
}

pub fn nn_localize_stack_with_tile(
    stack: &FrameStack,
    weights: &WeightArchive,
    grid: &UpsampleGrid,
    tile: Option<usize>,
) -> LocalizationTable {
    let rows: Vec<_> = (0..stack.n_frames)
        .into_par_iter()
        .map(|f| {
            let x = normalize_and_upsample(stack, f, grid.factor);
            let map = infer_tiled(&x, weights, tile);
            extract_table(&map, grid.factor, stack.pixel_nm, f)
        })
        .collect();
    LocalizationTable { rows: rows.concat() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::archive::{pack_layout, unet_layout, LayerSpec, WeightArchive};

    fn archive(fill: impl FnMut(usize, &str, usize) -> Vec<f32>) -> WeightArchive {
        let (m, b) = pack_layout(&unet_layout(2, 4), Some(32), fill);
        WeightArchive::from_parts(m, &b).unwrap()
    }

    #[test]
    fn zero_weights_zero_output() {
        let a = archive(|_, _, n| vec![0.0; n]);
        let out = infer(&Array2::zeros((16, 16)), &a).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_indivisible_input() {
        let a = archive(|_, _, n| vec![0.0; n]);
        assert_eq!(
            infer(&Array2::zeros((18, 16)), &a),
            Err(InferError::NotDivisible { height: 18, width: 16, multiple: 4 })
        );
    }

    #[test]
    fn resize_replicates_pixels() {
        let t = Tensor { channels: 1, height: 2, width: 2, data: vec![1.0, 2.0, 3.0, 4.0] };
        let r = resize_nearest(&t, 2);
        assert_eq!(
            r.data,
            vec![1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0]
        );
    }

    #[test]
    fn conv_matches_direct_sum() {
        // 1 -> 1 channel, 3x3 kernel of ones, zero padding: interior = 3x3 box sum
        let x = Tensor { channels: 1, height: 4, width: 4, data: (0..16).map(|v| v as f32).collect() };
        let y = conv2d(&x, 1, 3, 1, 1, &[1.0; 9], &[0.5]);
        assert_eq!(y.data[5], 0.5 + [0, 1, 2, 4, 5, 6, 8, 9, 10].iter().sum::<i32>() as f32);
        assert_eq!(y.data[0], 0.5 + [0, 1, 4, 5].iter().sum::<i32>() as f32);
        let y = conv2d(&x, 1, 4, 2, 1, &[1.0; 16], &[0.0]);
        assert_eq!((y.height, y.width), (2, 2));
        assert_eq!(y.data[0], [0, 1, 2, 4, 5, 6, 8, 9, 10].iter().sum::<i32>() as f32);
    }

    #[test]
    fn tile_positions_cover_the_axis() {
        assert_eq!(tile_starts(32, 64, 4), vec![0]);
        let s = tile_starts(100, 32, 4);
        assert_eq!(s[0], 0);
        assert_eq!(*s.last().unwrap(), 68);
        assert!(s.windows(2).all(|w| w[1] - w[0] <= 16));
    }

    #[test]
    fn norm_affine_and_leaky_relu() {
        let layout = vec![
            (LayerSpec::ConcatSkip { source: -1 }, 2),
            (
                LayerSpec::NormAffine {
                    channels: 2,
                    scale: crate::nn::archive::TensorRef { offset: 0, shape: vec![2] },
                    shift: crate::nn::archive::TensorRef { offset: 0, shape: vec![2] },
                },
                2,
            ),
            (LayerSpec::LeakyRelu { slope: 0.2 }, 2),
            (
                LayerSpec::Conv {
                    in_channels: 2,
                    out_channels: 1,
                    kernel: 1,
                    stride: 1,
                    padding: 0,
                    weight: crate::nn::archive::TensorRef { offset: 0, shape: vec![1, 2, 1, 1] },
                    bias: None,
                },
                1,
            ),
        ];
        let (m, b) = pack_layout(&layout, None, |layer, name, n| match (layer, name) {
            (1, "scale") => vec![2.0, -1.0],
            (1, "shift") => vec![0.0, 0.0],
            _ => vec![1.0; n],
        });
        let a = WeightArchive::from_parts(m, &b).unwrap();
        let out = infer(&Array2::from_elem((2, 2), 1.5), &a).unwrap();
        // 2·1.5 + leaky(−1.5) = 3 − 0.3
        assert!(out.iter().all(|&v| (v - 2.7).abs() < 1e-6));
    }
}
