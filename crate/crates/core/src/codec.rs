//! Intra-only emulation of the H.264 4×4 exact-match integer transform and
//! scalar quantizer.
//!
//! Only the block-transform quantization is reproduced: no prediction, no
//! entropy coding. That is enough to recreate the 4×4 block artifacts that
//! a phone's video encoder leaves in dark, noisy SMLM frames.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::stack::FrameStack;
use crate::rng;

pub const BLOCK: usize = 4;

pub type Block = [[i32; 4]; 4];

#[derive(Debug, Error, PartialEq)]
pub enum CodecError {
    #[error("quality {0} outside [0, 100]")]
    Quality(u8),
    #[error("qp {0} outside [0, 51]")]
    Qp(u8),
    #[error("grid offset {0:?}: expected \"dx,dy\" with values in 0..=3, or \"random\"")]
    GridOffset(String),
}

/// Where the 4×4 block grid starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum GridOffset {
    Fixed { dx: usize, dy: usize },
    /// One offset per stack, drawn from the seed.
    RandomPerStack,
}

impl Default for GridOffset {
    fn default() -> Self {
        GridOffset::Fixed { dx: 0, dy: 0 }
    }
}

impl fmt::Display for GridOffset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridOffset::Fixed { dx, dy } => write!(f, "{dx},{dy}"),
            GridOffset::RandomPerStack => f.write_str("random"),
        }
    }
}

impl FromStr for GridOffset {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "random" {
            return Ok(GridOffset::RandomPerStack);
        }
        let err = || CodecError::GridOffset(s.to_string());
        let (a, b) = s.split_once(',').ok_or_else(err)?;
        let dx: usize = a.trim().parse().map_err(|_| err())?;
        let dy: usize = b.trim().parse().map_err(|_| err())?;
        if dx >= BLOCK || dy >= BLOCK {
            return Err(err());
        }
        Ok(GridOffset::Fixed { dx, dy })
    }
}

impl TryFrom<String> for GridOffset {
    type Error = CodecError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<GridOffset> for String {
    fn from(g: GridOffset) -> Self {
        g.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecConfig {
    /// Percent in [0, 100]; 100 is lossless.
    pub quality: u8,
    pub grid_offset: GridOffset,
    pub qp_override: Option<u8>,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self { quality: 100, grid_offset: GridOffset::default(), qp_override: None }
    }
}

impl CodecConfig {
    pub fn with_quality(quality: u8) -> Self {
        Self { quality, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        if self.quality > 100 {
            return Err(CodecError::Quality(self.quality));
        }
        if let Some(qp) = self.qp_override.filter(|&qp| qp > 51) {
            return Err(CodecError::Qp(qp));
        }
        Ok(())
    }

    /// `None` when quantization is bypassed.
    pub fn qp(&self) -> Option<u8> {
        match self.qp_override {
            Some(qp) => Some(qp),
            None if self.quality >= 100 => None,
            None => Some((51.0 * (100.0 - self.quality as f64) / 100.0).round() as u8),
        }
    }
}

/// Quantizer step size for a QP; doubles every 6 steps.
pub fn qstep(qp: u8) -> f64 {
    0.625 * 2f64.powf(qp as f64 / 6.0)
}

/// Squared row norms of the forward core transform.
const ROW_NORM_SQ: [i32; 4] = [4, 10, 4, 10];

/// Norm of basis function (i, j) of the forward transform.
pub fn norm_factor(i: usize, j: usize) -> f64 {
    ((ROW_NORM_SQ[i] * ROW_NORM_SQ[j]) as f64).sqrt()
}

fn forward_1d(x: [i32; 4]) -> [i32; 4] {
    let s0 = x[0] + x[3];
    let s1 = x[1] + x[2];
    let d0 = x[0] - x[3];
    let d1 = x[1] - x[2];
    [s0 + s1, 2 * d0 + d1, s0 - s1, d0 - 2 * d1]
}

/// `W = Cf·X·Cfᵀ` in exact integer arithmetic.
pub fn forward_transform4x4(block: &Block) -> Block {
    let mut tmp = [[0; 4]; 4];
    for (r, row) in block.iter().enumerate() {
        tmp[r] = forward_1d(*row);
    }
    let mut out = [[0; 4]; 4];
    for c in 0..4 {
        let col = forward_1d([tmp[0][c], tmp[1][c], tmp[2][c], tmp[3][c]]);
        for r in 0..4 {
            out[r][c] = col[r];
        }
    }
    out
}

/// Doubled inverse butterfly: returns `2·Ciᵀ·w`.
fn inverse_1d_x2(w: [i64; 4]) -> [i64; 4] {
    let e0 = 2 * (w[0] + w[2]);
    let e1 = 2 * (w[0] - w[2]);
    let e2 = w[1] - 2 * w[3];
    let e3 = 2 * w[1] + w[3];
    [e0 + e3, e1 + e2, e1 - e2, e0 - e3]
}

/// `Cf·Ciᵀ = diag(4, 5, 4, 5)`, so the norm-compensating scale for
/// coefficient (i, j) is `1/(d_i·d_j)`. Kept exact as `400/(d_i·d_j)`.
const INV_SCALE_X400: [[i64; 4]; 4] = [[25, 20, 25, 20], [20, 16, 20, 16], [25, 20, 25, 20], [20, 16, 20, 16]];

/// Inverse of [`forward_transform4x4`] with the scale matrix applied:
/// `X = round(Ciᵀ·(W∘S)·Ci)`. With the scale held exactly, the final
/// normalization is a rounded division by 1600 (= 4 from the doubled
/// butterflies × 400 from the scale) instead of the `(+32) >> 6` used with
/// the standard's folded dequantization tables.
pub fn inverse_transform4x4(coeffs: &Block) -> Block {
    let mut tmp = [[0i64; 4]; 4];
    for r in 0..4 {
        let scaled = [0, 1, 2, 3].map(|c| coeffs[r][c] as i64 * INV_SCALE_X400[r][c]);
        tmp[r] = inverse_1d_x2(scaled);
    }
    let mut out = [[0; 4]; 4];
    for c in 0..4 {
        let col = inverse_1d_x2([tmp[0][c], tmp[1][c], tmp[2][c], tmp[3][c]]);
        for r in 0..4 {
            out[r][c] = (col[r] + 800).div_euclid(1600) as i32;
        }
    }
    out
}

/// Quantize then dequantize one block of transform coefficients.
pub fn quantize_dequantize(coeffs: &Block, qp: u8) -> Block {
    let step = qstep(qp);
    let mut out = [[0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            let q = step * norm_factor(i, j);
            let level = (coeffs[i][j] as f64 / q).round();
            out[i][j] = (level * q).round() as i32;
        }
    }
    out
}

/// Lossy round trip of one level-shifted block.
pub fn code_block(block: &Block, qp: u8) -> Block {
    inverse_transform4x4(&quantize_dequantize(&forward_transform4x4(block), qp))
}

/// Resolves the grid offset for one stack.
pub fn resolve_grid_offset(cfg: &CodecConfig, seed: u64) -> (usize, usize) {
    match cfg.grid_offset {
        GridOffset::Fixed { dx, dy } => (dx, dy),
        GridOffset::RandomPerStack => {
            let v: u8 = rng::stream(seed, rng::domain::CODEC, 0).random();
            ((v & 3) as usize, ((v >> 2) & 3) as usize)
        }
    }
}

fn block_origins(offset: usize, len: usize) -> impl Iterator<Item = isize> {
    let start = if offset == 0 { 0 } else { offset as isize - BLOCK as isize };
    (0..).map(move |k| start + k * BLOCK as isize).take_while(move |&o| o < len as isize)
}

/// Codes one frame in place. Partial edge blocks are padded by edge
/// replication and cropped back.
pub fn code_frame(frame: &mut [u16], width: usize, height: usize, bit_depth: u8, qp: u8, offset: (usize, usize)) {
    let shift = 1i32 << (bit_depth - 1);
    let max = ((1u32 << bit_depth) - 1) as i32;
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    for oy in block_origins(offset.1, height) {
        for ox in block_origins(offset.0, width) {
            let mut block = [[0; 4]; 4];
            for (r, row) in block.iter_mut().enumerate() {
                let y = clampi(oy + r as isize, height);
                for (c, v) in row.iter_mut().enumerate() {
                    let x = clampi(ox + c as isize, width);
                    *v = frame[y * width + x] as i32 - shift;
                }
            }
            let coded = code_block(&block, qp);
            for (r, row) in coded.iter().enumerate() {
                let y = oy + r as isize;
                if y < 0 || y >= height as isize {
                    continue;
                }
                for (c, &v) in row.iter().enumerate() {
                    let x = ox + c as isize;
                    if x < 0 || x >= width as isize {
                        continue;
                    }
                    frame[y as usize * width + x as usize] = (v + shift).clamp(0, max) as u16;
                }
            }
        }
    }
}

/// Passes every frame of `stack` through the block codec.
pub fn transcode_stack(stack: &FrameStack, cfg: &CodecConfig, seed: u64) -> Result<FrameStack, CodecError> {
    cfg.validate()?;
    let mut out = stack.clone();
    let Some(qp) = cfg.qp() else {
        return Ok(out);
    };
    let offset = resolve_grid_offset(cfg, seed);
    let (w, h, bd) = (stack.width, stack.height, stack.bit_depth);
    let n = stack.frame_len();
    if n == 0 {
        return Ok(out);
    }
    out.data.par_chunks_mut(n).for_each(|frame| code_frame(frame, w, h, bd, qp, offset));
    Ok(out)
}
