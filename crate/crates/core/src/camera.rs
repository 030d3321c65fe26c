//! Photon-to-ADU model of a cellphone sensor and ISP, and its calibration
//! from mean-variance (photon transfer) data.

use ndarray::Array2;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::stack::FrameStack;
use crate::rng;

#[derive(Debug, Error, PartialEq)]
pub enum CameraError {
    #[error("invalid camera model: {0}")]
    InvalidModel(String),
    #[error("negative expected photons {value} at pixel ({row}, {col})")]
    NegativePhotons { row: usize, col: usize, value: f64 },
    #[error("stack {index} has {frames} frames; at least {required} needed")]
    TooFewFrames { index: usize, frames: usize, required: usize },
    #[error("only {0} illumination levels below the knee; need at least 2")]
    TooFewPoints(usize),
    #[error("degenerate mean-variance fit: {0}")]
    DegenerateFit(String),
    #[error("stack geometry mismatch: {0}")]
    Geometry(String),
    #[error("unknown camera preset {0:?}")]
    UnknownPreset(String),
}

/// Sensor + ISP parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraModel {
    /// Electrons per ADU.
    pub gain: f64,
    /// Baseline in ADU.
    pub offset: f64,
    /// Electrons RMS.
    pub read_noise: f64,
    /// Quantum efficiency in (0, 1].
    pub qe: f64,
    /// Upper end of the linear range in ADU.
    pub knee: f64,
    /// Output values below this are set to 0.
    pub clip_floor: u16,
    pub bit_depth: u8,
    pub dip_period_s: f64,
    /// Fractional signal drop on dip frames; 0 disables dips.
    pub dip_depth: f64,
    /// Fractional signal decay per second.
    pub drift_per_s: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self::p9_video()
    }
}

impl CameraModel {
    /// Calibration of the monochrome P9 sensor at ISO 3200.
    pub fn p9_video() -> Self {
        Self {
            gain: 0.69,
            offset: 4.1,
            read_noise: 2.5,
            qe: 0.75,
            knee: 220.0,
            clip_floor: 3,
            bit_depth: 12,
            dip_period_s: 1.07,
            dip_depth: 0.0,
            drift_per_s: 0.0,
        }
    }

    /// Earlier calibration of the same sensor.
    pub fn p9_early() -> Self {
        Self { gain: 0.34, offset: 4.074, read_noise: 1.23, ..Self::p9_video() }
    }

    /// Noise-free, unclipped model, handy for closed-loop tests.
    pub fn ideal() -> Self {
        Self { read_noise: 0.0, clip_floor: 0, ..Self::p9_video() }
    }

    pub fn preset(name: &str) -> Result<Self, CameraError> {
        match name {
            "p9" | "p9-video" | "default" => Ok(Self::p9_video()),
            "p9-early" => Ok(Self::p9_early()),
            "ideal" => Ok(Self::ideal()),
            other => Err(CameraError::UnknownPreset(other.to_string())),
        }
    }

    pub fn max_adu(&self) -> u16 {
        if self.bit_depth >= 16 {
            u16::MAX
        } else {
            ((1u32 << self.bit_depth) - 1) as u16
        }
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        let bad = |m: &str| Err(CameraError::InvalidModel(m.to_string()));
        if !(self.gain > 0.0) {
            return bad("gain must be positive");
        }
        if !(self.read_noise >= 0.0) {
            return bad("read_noise must be non-negative");
        }
        if !(self.qe > 0.0 && self.qe <= 1.0) {
            return bad("qe must lie in (0, 1]");
        }
        if !(1..=16).contains(&self.bit_depth) {
            return bad("bit_depth must lie in 1..=16");
        }
        if !((self.clip_floor as f64) < self.knee && self.knee <= self.max_adu() as f64) {
            return bad("require 0 <= clip_floor < knee <= 2^bit_depth - 1");
        }
        if !(0.0..=1.0).contains(&self.dip_depth) || !(self.dip_period_s > 0.0) {
            return bad("dip_depth must lie in [0, 1] and dip_period_s be positive");
        }
        if !(self.drift_per_s >= 0.0) {
            return bad("drift_per_s must be non-negative");
        }
        Ok(())
    }

    /// Dip spacing in frames at the given frame rate.
    pub fn dip_period_frames(&self, fps: f64) -> usize {
        ((self.dip_period_s * fps).round() as usize).max(1)
    }

    /// Multiplicative factor applied to the signal term of frame `frame_index`.
    pub fn temporal_factor(&self, frame_index: usize, fps: f64) -> f64 {
        let t = frame_index as f64 / fps;
        let drift = (1.0 - self.drift_per_s * t).max(0.0);
        let dip = if self.dip_depth > 0.0 && frame_index.is_multiple_of(self.dip_period_frames(fps)) {
            1.0 - self.dip_depth
        } else {
            1.0
        };
        drift * dip
    }

    /// Converts ADU to photons (inverse of the mean response).
    pub fn adu_to_photons(&self, adu: f64) -> f64 {
        (adu - self.offset) * self.gain / self.qe
    }

    /// Expected ADU for an expected photon count (no rounding or clipping).
    pub fn photons_to_adu(&self, photons: f64) -> f64 {
        photons * self.qe / self.gain + self.offset
    }
}

/// Degrades one frame of expected photons into ADU.
///
/// Per pixel: `e ~ Poisson(qe·photons)`, `adu = factor·e/gain + offset +
/// N(0, read_noise/gain)`, rounded, clamped to the bit range, and zeroed
/// below `clip_floor`. The random stream depends only on `(seed,
/// frame_index)`.
pub fn apply_camera(
    photon_map: &Array2<f64>,
    model: &CameraModel,
    frame_index: usize,
    fps: f64,
    seed: u64,
) -> Result<Array2<u16>, CameraError> {
    model.validate()?;
    if let Some(((row, col), &value)) = photon_map.indexed_iter().find(|(_, v)| !(**v >= 0.0)) {
        return Err(CameraError::NegativePhotons { row, col, value });
    }
    let mut rng = rng::stream(seed, rng::domain::CAMERA, frame_index as u64);
    let factor = model.temporal_factor(frame_index, fps);
    let read = Normal::new(0.0, model.read_noise / model.gain).expect("validated read noise");
    let max = model.max_adu() as f64;
    let floor = model.clip_floor;
    Ok(photon_map.mapv(|photons| {
        let rate = model.qe * photons;
        let electrons = if rate > 0.0 {
            Poisson::new(rate).expect("finite positive rate").sample(&mut rng)
        } else {
            0.0
        };
        let noise = if model.read_noise > 0.0 { read.sample(&mut rng) } else { 0.0 };
        let adu = factor * electrons / model.gain + model.offset + noise;
        let v = adu.round().clamp(0.0, max) as u16;
        if v < floor {
            0
        } else {
            v
        }
    }))
}

/// One point of the mean-variance plot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanVariancePoint {
    pub mean: f64,
    pub variance: f64,
    /// Whether the point was below the knee and entered the fit.
    pub used: bool,
}

/// Sensor parameters recovered from a mean-variance plot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub gain: f64,
    pub offset: f64,
    pub read_noise: f64,
    pub fit_points: usize,
    pub r_squared: f64,
    pub points: Vec<MeanVariancePoint>,
}

impl CalibrationResult {
    /// Scatter data as CSV (`mean,variance,used`).
    pub fn scatter_csv(&self) -> String {
        let mut s = String::from("mean,variance,used\n");
        for p in &self.points {
            s.push_str(&format!("{:?},{:?},{}\n", p.mean, p.variance, p.used as u8));
        }
        s
    }
}

/// Spatial average of the per-pixel temporal mean and (unbiased) variance.
pub fn temporal_mean_variance(stack: &FrameStack) -> (f64, f64) {
    let n = stack.n_frames as f64;
    let npix = stack.frame_len();
    let mut sum = vec![0.0f64; npix];
    let mut sum_sq = vec![0.0f64; npix];
    for frame in stack.frames() {
        for (i, &v) in frame.iter().enumerate() {
            let v = v as f64;
            sum[i] += v;
            sum_sq[i] += v * v;
        }
    }
    let mut mean_acc = 0.0;
    let mut var_acc = 0.0;
    for i in 0..npix {
        let m = sum[i] / n;
        mean_acc += m;
        var_acc += ((sum_sq[i] - n * m * m) / (n - 1.0)).max(0.0);
    }
    (mean_acc / npix as f64, var_acc / npix as f64)
}

/// Recovers gain, offset and read noise from stacks of static scenes at
/// increasing illumination plus a dark stack.
///
/// The offset is the dark-stack mean. A line `var = a·mean + b` is fitted to
/// the levels whose mean lies below `knee`; then `gain = 1/a` and, because
/// the variance extrapolated to the offset equals `(read_noise/gain)²`,
/// `read_noise = gain·sqrt(b + a·offset)`.
pub fn calibrate_mean_variance(
    stacks: &[FrameStack],
    dark_stack: &FrameStack,
    knee: f64,
) -> Result<CalibrationResult, CameraError> {
    for (index, s) in std::iter::once(dark_stack).chain(stacks).enumerate() {
        if s.n_frames < 2 {
            return Err(CameraError::TooFewFrames { index, frames: s.n_frames, required: 2 });
        }
    }
    let offset = dark_stack.data.iter().map(|&v| v as f64).sum::<f64>() / dark_stack.data.len() as f64;
    let points: Vec<MeanVariancePoint> = stacks
        .iter()
        .map(|s| {
            let (mean, variance) = temporal_mean_variance(s);
            MeanVariancePoint { mean, variance, used: mean < knee }
        })
        .collect();
    let used: Vec<_> = points.iter().filter(|p| p.used).collect();
    if used.len() < 2 {
        return Err(CameraError::TooFewPoints(used.len()));
    }
    if used.iter().all(|p| p.variance == 0.0) {
        return Err(CameraError::DegenerateFit("all levels have zero variance".into()));
    }
    let n = used.len() as f64;
    let mx = used.iter().map(|p| p.mean).sum::<f64>() / n;
    let my = used.iter().map(|p| p.variance).sum::<f64>() / n;
    let sxx: f64 = used.iter().map(|p| (p.mean - mx).powi(2)).sum();
    let sxy: f64 = used.iter().map(|p| (p.mean - mx) * (p.variance - my)).sum();
    let syy: f64 = used.iter().map(|p| (p.variance - my).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(CameraError::DegenerateFit("all levels share one mean".into()));
    }
    let slope = sxy / sxx;
    if !(slope > 0.0) {
        return Err(CameraError::DegenerateFit(format!("non-positive slope {slope}")));
    }
    let intercept = my - slope * mx;
    let r_squared = if syy > 0.0 { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) } else { 1.0 };
    let gain = 1.0 / slope;
    let read_noise = gain * (intercept + slope * offset).max(0.0).sqrt();
    Ok(CalibrationResult { gain, offset, read_noise, fit_points: used.len(), r_squared, points })
}

/// Per-frame means of a (dark) stack and the detected dip period.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftProfile {
    pub means: Vec<f64>,
    /// Lag of the strongest autocorrelation peak, in frames.
    pub period_frames: Option<usize>,
}

pub const MIN_DRIFT_FRAMES: usize = 64;

pub fn dark_drift_profile(stack: &FrameStack) -> Result<DriftProfile, CameraError> {
    if stack.n_frames < MIN_DRIFT_FRAMES {
        return Err(CameraError::TooFewFrames {
            index: 0,
            frames: stack.n_frames,
            required: MIN_DRIFT_FRAMES,
        });
    }
    let means: Vec<f64> = stack
        .frames()
        .map(|f| f.iter().map(|&v| v as f64).sum::<f64>() / f.len() as f64)
        .collect();
    Ok(DriftProfile { period_frames: dominant_period(&means), means })
}

/// Lag (≥ 2) of the largest local maximum of the normalized
/// autocorrelation, if it exceeds three times the white-noise floor
/// `1/sqrt(n)`.
pub fn dominant_period(series: &[f64]) -> Option<usize> {
    let n = series.len();
    let mean = series.iter().sum::<f64>() / n as f64;
    let d: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let energy: f64 = d.iter().map(|v| v * v).sum();
    if energy <= f64::EPSILON * n as f64 * mean.abs().max(1.0) {
        return None;
    }
    let max_lag = n / 2;
    let acf: Vec<f64> = (0..=max_lag + 1)
        .map(|k| d.iter().zip(&d[k.min(n)..]).map(|(a, b)| a * b).sum::<f64>() / energy)
        .collect();
    let floor = 3.0 / (n as f64).sqrt();
    (2..=max_lag)
        .filter(|&k| acf[k] > acf[k - 1] && acf[k] >= acf[k + 1] && acf[k] > floor)
        .max_by(|&a, &b| acf[a].total_cmp(&acf[b]).then(b.cmp(&a)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(value: f64, n: usize) -> Array2<f64> {
        Array2::from_elem((n, n), value)
    }

    #[test]
    fn zero_signal_gives_rounded_offset() {
        let m = CameraModel { read_noise: 0.0, clip_floor: 0, ..Default::default() };
        let f = apply_camera(&uniform(0.0, 8), &m, 0, 20.0, 1).unwrap();
        assert!(f.iter().all(|&v| v == 4));
    }

    #[test]
    fn saturates_at_bit_depth() {
        let f = apply_camera(&uniform(1e5, 4), &CameraModel::default(), 0, 20.0, 1).unwrap();
        assert!(f.iter().all(|&v| v == 4095));
    }

    #[test]
    fn negative_photons_are_rejected() {
        let mut map = uniform(1.0, 3);
        map[[1, 2]] = -0.5;
        let r = apply_camera(&map, &CameraModel::default(), 0, 20.0, 1);
        assert_eq!(r, Err(CameraError::NegativePhotons { row: 1, col: 2, value: -0.5 }));
    }

    #[test]
    fn same_seed_and_frame_is_deterministic() {
        let map = uniform(50.0, 16);
        let m = CameraModel::default();
        assert_eq!(apply_camera(&map, &m, 5, 20.0, 9).unwrap(), apply_camera(&map, &m, 5, 20.0, 9).unwrap());
        assert_ne!(apply_camera(&map, &m, 5, 20.0, 9).unwrap(), apply_camera(&map, &m, 6, 20.0, 9).unwrap());
    }

    #[test]
    fn values_below_floor_are_zeroed() {
        let f = apply_camera(&uniform(0.0, 64), &CameraModel::default(), 0, 20.0, 3).unwrap();
        assert!(f.iter().all(|&v| v == 0 || v >= 3));
        assert!(f.iter().any(|&v| v == 0));
    }

    #[test]
    fn dip_frames_follow_period() {
        let m = CameraModel { dip_depth: 0.1, ..Default::default() };
        assert_eq!(m.dip_period_frames(29.0), 31);
        assert_eq!(m.temporal_factor(31, 29.0), 0.9);
        assert_eq!(m.temporal_factor(30, 29.0), 1.0);
    }

    #[test]
    fn invalid_models_are_rejected() {
        for m in [
            CameraModel { gain: 0.0, ..Default::default() },
            CameraModel { qe: 1.5, ..Default::default() },
            CameraModel { clip_floor: 300, ..Default::default() },
            CameraModel { knee: 5000.0, ..Default::default() },
        ] {
            assert!(matches!(m.validate(), Err(CameraError::InvalidModel(_))));
        }
    }

    #[test]
    fn presets_carry_published_calibrations() {
        let m = CameraModel::preset("p9").unwrap();
        assert_eq!((m.gain, m.offset, m.read_noise, m.knee), (0.69, 4.1, 2.5, 220.0));
        let e = CameraModel::preset("p9-early").unwrap();
        assert_eq!((e.gain, e.read_noise), (0.34, 1.23));
        assert!(CameraModel::preset("nope").is_err());
    }

    fn constant_stack(value: u16, frames: usize) -> FrameStack {
        FrameStack { data: vec![value; 16 * frames], ..FrameStack::zeros(4, 4, frames, 100.0, 20.0) }
    }

    #[test]
    fn noiseless_constant_levels_are_degenerate() {
        let stacks: Vec<_> = [20, 40, 80].iter().map(|&v| constant_stack(v, 5)).collect();
        let r = calibrate_mean_variance(&stacks, &constant_stack(4, 5), 220.0);
        assert!(matches!(r, Err(CameraError::DegenerateFit(_))));
    }

    #[test]
    fn single_frame_stacks_are_rejected() {
        let r = calibrate_mean_variance(&[constant_stack(20, 1)], &constant_stack(4, 5), 220.0);
        assert!(matches!(r, Err(CameraError::TooFewFrames { .. })));
    }

    #[test]
    fn levels_above_knee_are_excluded() {
        let stacks = vec![constant_stack(250, 3), constant_stack(300, 3), constant_stack(20, 3)];
        let r = calibrate_mean_variance(&stacks, &constant_stack(4, 3), 220.0);
        assert_eq!(r, Err(CameraError::TooFewPoints(1)));
    }

    #[test]
    fn drift_profile_needs_frames() {
        assert!(matches!(dark_drift_profile(&constant_stack(4, 10)), Err(CameraError::TooFewFrames { .. })));
    }

    #[test]
    fn constant_series_has_no_period() {
        let p = dark_drift_profile(&constant_stack(4, 128)).unwrap();
        assert_eq!(p.period_frames, None);
        assert!(p.means.iter().all(|&m| m == 4.0));
    }

    #[test]
    fn periodic_series_period() {
        let s: Vec<f64> = (0..200).map(|i| if i % 17 == 0 { 1.0 } else { 0.0 }).collect();
        assert_eq!(dominant_period(&s), Some(17));
    }
}
