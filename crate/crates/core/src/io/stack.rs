//! The `.cstk` frame-stack container.
//!
//! Layout:
//!
//! ```text
//! CSTK1\n
//! {"width":W,"height":H,"n_frames":N,"bit_depth":B,"pixel_nm":P,"fps":F}\n
//! <W*H*N little-endian u16, frame-major, row-major>
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 6] = b"CSTK1\n";

#[derive(Debug, Error)]
pub enum StackError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected \"CSTK1\"")]
    BadMagic,
    #[error("malformed header: {0}")]
    Header(String),
    #[error("truncated payload: header promises {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("payload size mismatch: header promises {expected} bytes, found {found}")]
    SizeMismatch { expected: u64, found: u64 },
    #[error("pixel value {value} exceeds {bit_depth}-bit range")]
    ValueOutOfRange { value: u16, bit_depth: u8 },
    #[error("invalid stack: {0}")]
    Invalid(String),
}

/// Header line of a `.cstk` file. Field order is part of the format.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Header {
    width: usize,
    height: usize,
    n_frames: usize,
    bit_depth: u8,
    pixel_nm: f64,
    fps: f64,
}

/// A time series of 2-D ADU frames with physical metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStack {
    pub width: usize,
    pub height: usize,
    pub n_frames: usize,
    /// Nanometers per camera pixel in the sample plane.
    pub pixel_nm: f64,
    pub fps: f64,
    pub bit_depth: u8,
    /// Frame-major, row-major pixel values.
    pub data: Vec<u16>,
}

impl FrameStack {
    /// All-zero stack.
    pub fn zeros(width: usize, height: usize, n_frames: usize, pixel_nm: f64, fps: f64) -> Self {
        Self {
            width,
            height,
            n_frames,
            pixel_nm,
            fps,
            bit_depth: 12,
            data: vec![0; width * height * n_frames],
        }
    }

    pub fn from_frames(
        frames: Vec<Vec<u16>>,
        width: usize,
        height: usize,
        pixel_nm: f64,
        fps: f64,
        bit_depth: u8,
    ) -> Result<Self, StackError> {
        let n_frames = frames.len();
        let mut data = Vec::with_capacity(width * height * n_frames);
        for f in frames {
            if f.len() != width * height {
                return Err(StackError::Invalid(format!(
                    "frame has {} pixels, expected {}",
                    f.len(),
                    width * height
                )));
            }
            data.extend_from_slice(&f);
        }
        let stack = Self { width, height, n_frames, pixel_nm, fps, bit_depth, data };
        stack.validate()?;
        Ok(stack)
    }

    pub fn max_adu(&self) -> u16 {
        if self.bit_depth >= 16 {
            u16::MAX
        } else {
            ((1u32 << self.bit_depth) - 1) as u16
        }
    }

    pub fn frame_len(&self) -> usize {
        self.width * self.height
    }

    pub fn frame(&self, index: usize) -> &[u16] {
        let n = self.frame_len();
        &self.data[index * n..(index + 1) * n]
    }

    pub fn frame_mut(&mut self, index: usize) -> &mut [u16] {
        let n = self.frame_len();
        &mut self.data[index * n..(index + 1) * n]
    }

    /// Frame as a `height × width` floating-point array.
    pub fn frame_f64(&self, index: usize) -> Array2<f64> {
        Array2::from_shape_fn((self.height, self.width), |(r, c)| {
            self.frame(index)[r * self.width + c] as f64
        })
    }

    pub fn frames(&self) -> impl Iterator<Item = &[u16]> {
        self.data.chunks_exact(self.frame_len().max(1)).take(self.n_frames)
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<(), StackError> {
        if !(1..=16).contains(&self.bit_depth) {
            return Err(StackError::Invalid(format!("bit depth {} out of 1..=16", self.bit_depth)));
        }
        if !(self.pixel_nm > 0.0) || !(self.fps > 0.0) {
            return Err(StackError::Invalid("pixel_nm and fps must be positive".into()));
        }
        if self.data.len() != self.width * self.height * self.n_frames {
            return Err(StackError::Invalid(format!(
                "data length {} != {}x{}x{}",
                self.data.len(),
                self.width,
                self.height,
                self.n_frames
            )));
        }
        let max = self.max_adu();
        if let Some(&value) = self.data.iter().find(|&&v| v > max) {
            return Err(StackError::ValueOutOfRange { value, bit_depth: self.bit_depth });
        }
        Ok(())
    }

    fn header(&self) -> Header {
        Header {
            width: self.width,
            height: self.height,
            n_frames: self.n_frames,
            bit_depth: self.bit_depth,
            pixel_nm: self.pixel_nm,
            fps: self.fps,
        }
    }
}

/// Serializes a stack into the `.cstk` byte layout.
pub fn encode_stack<W: Write>(stack: &FrameStack, mut out: W) -> Result<(), StackError> {
    stack.validate()?;
    out.write_all(MAGIC)?;
    let header = serde_json::to_string(&stack.header())
        .map_err(|e| StackError::Header(e.to_string()))?;
    out.write_all(header.as_bytes())?;
    out.write_all(b"\n")?;
    let mut payload = Vec::with_capacity(stack.data.len() * 2);
    for v in &stack.data {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&payload)?;
    Ok(())
}

pub fn decode_stack<R: Read>(input: R) -> Result<FrameStack, StackError> {
    let mut reader = BufReader::new(input);
    let mut magic = [0u8; 6];
    reader.read_exact(&mut magic).map_err(|_| StackError::BadMagic)?;
    if &magic != MAGIC {
        return Err(StackError::BadMagic);
    }
    let mut line = Vec::new();
    reader.read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(StackError::Header("missing header terminator".into()));
    }
    line.pop();
    let header: Header =
        serde_json::from_slice(&line).map_err(|e| StackError::Header(e.to_string()))?;
    let mut payload = Vec::new();
    reader.read_to_end(&mut payload)?;
    let expected = (header.width * header.height * header.n_frames * 2) as u64;
    let found = payload.len() as u64;
    if found < expected {
        return Err(StackError::Truncated { expected, found });
    }
    if found != expected {
        return Err(StackError::SizeMismatch { expected, found });
    }
    let data = payload
        .chunks_exact(2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .collect();
    let stack = FrameStack {
        width: header.width,
        height: header.height,
        n_frames: header.n_frames,
        pixel_nm: header.pixel_nm,
        fps: header.fps,
        bit_depth: header.bit_depth,
        data,
    };
    stack.validate()?;
    Ok(stack)
}

/// Writes `stack` to `path`. Refuses stacks with out-of-range pixels.
pub fn write_stack(stack: &FrameStack, path: impl AsRef<Path>) -> Result<(), StackError> {
    stack.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    encode_stack(stack, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_stack(path: impl AsRef<Path>) -> Result<FrameStack, StackError> {
    decode_stack(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bytes(stack: &FrameStack) -> Vec<u8> {
        let mut v = Vec::new();
        encode_stack(stack, &mut v).unwrap();
        v
    }

    fn single(value: u16) -> FrameStack {
        FrameStack::from_frames(vec![vec![value]], 1, 1, 100.0, 20.0, 12).unwrap()
    }

    #[test]
    fn one_pixel_layout() {
        let b = bytes(&single(4));
        assert_eq!(&b[..6], MAGIC);
        let header = b"{\"width\":1,\"height\":1,\"n_frames\":1,\"bit_depth\":12,\"pixel_nm\":100.0,\"fps\":20.0}\n";
        assert_eq!(&b[6..6 + header.len()], header);
        assert_eq!(&b[6 + header.len()..], &[0x04, 0x00]);
    }

    #[test]
    fn payload_is_row_major() {
        let s = FrameStack::from_frames(vec![vec![1, 2]], 2, 1, 100.0, 20.0, 12).unwrap();
        let b = bytes(&s);
        assert_eq!(&b[b.len() - 4..], &[0x01, 0x00, 0x02, 0x00]);
    }

    #[test]
    fn decode_inverts_encode() {
        let s = single(4);
        assert_eq!(decode_stack(&bytes(&s)[..]).unwrap(), s);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut b = bytes(&single(4));
        b[0] = b'X';
        assert!(matches!(decode_stack(&b[..]), Err(StackError::BadMagic)));
    }

    #[test]
    fn short_payload_is_truncation() {
        let b = bytes(&single(4));
        let r = decode_stack(&b[..b.len() - 1]);
        assert!(matches!(r, Err(StackError::Truncated { expected: 2, found: 1 })));
    }

    #[test]
    fn long_payload_is_mismatch() {
        let mut b = bytes(&single(4));
        b.extend_from_slice(&[0, 0]);
        assert!(matches!(decode_stack(&b[..]), Err(StackError::SizeMismatch { .. })));
    }

    #[test]
    fn refuses_out_of_range_pixels() {
        let s = FrameStack { data: vec![4096], ..single(0) };
        let dir = tempfile::tempdir().unwrap();
        let r = write_stack(&s, dir.path().join("x.cstk"));
        assert!(matches!(r, Err(StackError::ValueOutOfRange { value: 4096, bit_depth: 12 })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn round_trip_is_identity(
            w in 1usize..9, h in 1usize..9, n in 1usize..4,
            seed in any::<u64>(), depth in 1u8..=16,
        ) {
            use rand::Rng;
            let mut rng = crate::rng::stream(seed, 0, 0);
            let max = if depth == 16 { u16::MAX } else { ((1u32 << depth) - 1) as u16 };
            let data = (0..w * h * n).map(|_| rng.random_range(0..=max)).collect();
            let s = FrameStack { width: w, height: h, n_frames: n, pixel_nm: 97.5, fps: 29.0, bit_depth: depth, data };
            prop_assert_eq!(decode_stack(&bytes(&s)[..]).unwrap(), s);
        }
    }
}
