//! 16-bit binary PGM (`P5`, maxval 65535, big-endian samples).

use std::io::Write;
use std::path::Path;

use ndarray::Array2;

/// Encodes `image` with its maximum mapped to 65535. Negative values and
/// NaN are written as 0; an all-zero image stays all-zero.
pub fn encode_pgm16<W: Write>(image: &Array2<f64>, mut out: W) -> std::io::Result<()> {
    let (h, w) = image.dim();
    let max = image.iter().copied().filter(|v| v.is_finite()).fold(0.0, f64::max);
    let scale = if max > 0.0 { 65535.0 / max } else { 0.0 };
    write!(out, "P5\n{w} {h}\n65535\n")?;
    let mut buf = Vec::with_capacity(w * h * 2);
    for &v in image.iter() {
        let s = if v.is_finite() && v > 0.0 { (v * scale).round().min(65535.0) as u16 } else { 0 };
        buf.extend_from_slice(&s.to_be_bytes());
    }
    out.write_all(&buf)
}

pub fn write_pgm16(image: &Array2<f64>, path: impl AsRef<Path>) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    encode_pgm16(image, &mut f)?;
    f.flush()
}
