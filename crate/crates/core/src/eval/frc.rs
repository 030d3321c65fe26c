//! Fourier ring correlation of two half-data renderings.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::Serialize;
use thiserror::Error;

use crate::eval::render::{extent_bins, render};
use crate::io::table::LocalizationTable;
use crate::rng;

/// Fixed resolution threshold.
pub const FRC_THRESHOLD: f64 = 1.0 / 7.0;
pub const MIN_LOCALIZATIONS: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum FrcError {
    #[error("need at least {MIN_LOCALIZATIONS} localizations, got {0}")]
    TooFew(usize),
    #[error("images differ in shape: {0:?} vs {1:?}")]
    Shape((usize, usize), (usize, usize)),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrcResult {
    /// Ring centre frequencies in 1/nm, ring 0 is DC.
    pub ring_frequencies: Vec<f64>,
    /// Raw correlation per ring.
    pub correlation: Vec<f64>,
    /// Three-ring moving average of `correlation`.
    pub smoothed: Vec<f64>,
    pub resolution_nm: Option<f64>,
}

fn fft2(img: &Array2<f64>, n: usize) -> Vec<Complex<f64>> {
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let mut buf = vec![Complex::new(0.0, 0.0); n * n];
    for ((r, c), &v) in img.indexed_iter() {
        buf[r * n + c] = Complex::new(v, 0.0);
    }
    for row in buf.chunks_exact_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); n];
    for c in 0..n {
        for r in 0..n {
            col[r] = buf[r * n + c];
        }
        fft.process(&mut col);
        for r in 0..n {
            buf[r * n + c] = col[r];
        }
    }
    buf
}

/// FRC of two equally shaped images rendered at `px_nm`. Images are
/// zero-padded to a square.
pub fn frc_images(a: &Array2<f64>, b: &Array2<f64>, px_nm: f64) -> Result<FrcResult, FrcError> {
    if a.dim() != b.dim() {
        return Err(FrcError::Shape(a.dim(), b.dim()));
    }
    let n = a.nrows().max(a.ncols()).max(2);
    let (fa, fb) = (fft2(a, n), fft2(b, n));
    let rings = n / 2 + 1;
    let mut num = vec![0.0; rings];
    let mut pa = vec![0.0; rings];
    let mut pb = vec![0.0; rings];
    let signed = |k: usize| if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
    for r in 0..n {
        for c in 0..n {
            let ring = signed(r).hypot(signed(c)).round() as usize;
            if ring >= rings {
                continue;
            }
            let (x, y) = (fa[r * n + c], fb[r * n + c]);
            num[ring] += (x * y.conj()).re;
            pa[ring] += x.norm_sqr();
            pb[ring] += y.norm_sqr();
        }
    }
    let correlation: Vec<f64> = (0..rings)
        .map(|k| {
            let d = (pa[k] * pb[k]).sqrt();
            if d > 0.0 {
                num[k] / d
            } else {
                0.0
            }
        })
        .collect();
    let smoothed: Vec<f64> = (0..rings)
        .map(|k| {
            let lo = k.saturating_sub(1);
            let hi = (k + 1).min(rings - 1);
            correlation[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect();
    let ring_frequencies: Vec<f64> = (0..rings).map(|k| k as f64 / (n as f64 * px_nm)).collect();
    let resolution_nm = (1..rings).find(|&k| smoothed[k] < FRC_THRESHOLD).map(|k| {
        let (c0, c1) = (smoothed[k - 1], smoothed[k]);
        let t = if c0 > c1 { ((c0 - FRC_THRESHOLD) / (c0 - c1)).clamp(0.0, 1.0) } else { 1.0 };
        let f = ring_frequencies[k - 1] + t * (ring_frequencies[k] - ring_frequencies[k - 1]);
        1.0 / f
    });
    Ok(FrcResult { ring_frequencies, correlation, smoothed, resolution_nm })
}

/// FRC of two given tables rendered on a common grid.
pub fn frc_tables(a: &LocalizationTable, b: &LocalizationTable, render_px_nm: f64) -> Result<FrcResult, FrcError> {
    let (ha, wa) = extent_bins(a, render_px_nm);
    let (hb, wb) = extent_bins(b, render_px_nm);
    let shape = (ha.max(hb), wa.max(wb));
    frc_images(&render(a, render_px_nm, None, Some(shape)), &render(b, render_px_nm, None, Some(shape)), render_px_nm)
}

/// Splits `table` into two halves by a seeded random permutation and
/// correlates their renderings.
pub fn frc(table: &LocalizationTable, render_px_nm: f64, seed: u64) -> Result<FrcResult, FrcError> {
    if table.len() < MIN_LOCALIZATIONS {
        return Err(FrcError::TooFew(table.len()));
    }
    let mut idx: Vec<usize> = (0..table.len()).collect();
    idx.shuffle(&mut rng::stream(seed, rng::domain::FRC, 0));
    let half = idx.len() / 2;
    let pick = |ids: &[usize]| LocalizationTable { rows: ids.iter().map(|&i| table.rows[i]).collect() };
    let shape = extent_bins(table, render_px_nm);
    let (a, b) = (pick(&idx[..half]), pick(&idx[half..]));
    frc_images(&render(&a, render_px_nm, None, Some(shape)), &render(&b, render_px_nm, None, Some(shape)), render_px_nm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::table::Localization;
    use rand::Rng;

    fn uniform(n: usize, field: f64, seed: u64) -> LocalizationTable {
        let mut rng = rng::stream(seed, 99, 0);
        LocalizationTable {
            rows: (0..n).map(|_| Localization::at(0, rng.random::<f64>() * field, rng.random::<f64>() * field)).collect(),
        }
    }

    #[test]
    fn too_few_localizations() {
        assert_eq!(frc(&uniform(50, 1000.0, 1), 10.0, 1), Err(FrcError::TooFew(50)));
    }

    #[test]
    fn self_correlation_is_one() {
        let t = uniform(3000, 2000.0, 1);
        let r = frc_tables(&t, &t, 10.0).unwrap();
        assert!(r.correlation.iter().all(|&c| (c - 1.0).abs() < 1e-9));
        assert_eq!(r.resolution_nm, None);
    }

    #[test]
    fn independent_tables_do_not_correlate() {
        let r = frc_tables(&uniform(3000, 2000.0, 1), &uniform(3000, 2000.0, 2), 10.0).unwrap();
        let tail = &r.correlation[5..];
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        assert!(mean.abs() < 0.02, "mean correlation {mean}");
        // crossing, if any, happens at the coarsest rings
        if let Some(res) = r.resolution_nm {
            assert!(res >= 1.0 / r.ring_frequencies[3], "resolution {res}");
        }
    }

    #[test]
    fn resolution_is_at_least_two_pixels() {
        for seed in 0..3 {
            let r = frc(&uniform(2000, 1000.0, seed), 10.0, seed).unwrap();
            if let Some(res) = r.resolution_nm {
                assert!(res >= 20.0);
            }
            assert_eq!(r.correlation.len(), r.ring_frequencies.len());
        }
    }
}
