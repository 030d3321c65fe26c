//! Classical localizer: difference-of-Gaussians prefilter, local-maximum
//! detection above `k·std`, and Levenberg–Marquardt fitting of a
//! pixel-integrated Gaussian.
//!
//! Pixel `(row, col)` covers `[col, col+1) × [row, row+1)` in continuous
//! pixel coordinates; nanometer coordinates are those times `pixel_nm`.

use ndarray::{s, Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::camera::CameraModel;
use crate::io::stack::FrameStack;
use crate::io::table::{Localization, LocalizationTable};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizerConfig {
    /// Inner and outer Gaussian widths of the band-pass filter, in pixels.
    pub filter_sigmas: (f64, f64),
    pub threshold_k: f64,
    /// Half-width of the fit window; also the peak suppression distance.
    pub roi_radius: usize,
    pub max_iters: usize,
    pub converge_tol: f64,
    pub min_photons: f64,
}

impl Default for LocalizerConfig {
    fn default() -> Self {
        Self {
            filter_sigmas: (1.0, 2.0),
            threshold_k: 3.0,
            roi_radius: 3,
            max_iters: 50,
            converge_tol: 1e-6,
            min_photons: 30.0,
        }
    }
}

impl LocalizerConfig {
    pub fn validate(&self) -> Result<(), String> {
        let (s1, s2) = self.filter_sigmas;
        if !(s1 > 0.0 && s2 > s1) {
            return Err("filter sigmas need 0 < sigma1 < sigma2".into());
        }
        if self.roi_radius < 2 {
            return Err("roi_radius must be at least 2".into());
        }
        Ok(())
    }
}

/// Integer pixel peak in the filtered frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub row: usize,
    pub col: usize,
    pub response: f64,
}

/// Why a candidate produced no localization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Rejection {
    Border,
    NotConverged,
    Singular,
    LowPhotons,
    SigmaOutOfRange,
    OutsideRoi,
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = k.iter().sum();
    k.into_iter().map(|v| v / sum).collect()
}

/// Separable Gaussian blur with edge replication.
pub fn gaussian_blur(image: &ArrayView2<f64>, sigma: f64) -> Array2<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (h, w) = image.dim();
    let mut tmp = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            tmp[[y, x]] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * image[[y, (x as isize + i as isize - r).clamp(0, w as isize - 1) as usize]])
                .sum();
        }
    }
    let mut out = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            out[[y, x]] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * tmp[[(y as isize + i as isize - r).clamp(0, h as isize - 1) as usize, x]])
                .sum();
        }
    }
    out
}

pub fn difference_of_gaussians(frame: &ArrayView2<f64>, sigmas: (f64, f64)) -> Array2<f64> {
    gaussian_blur(frame, sigmas.0) - gaussian_blur(frame, sigmas.1)
}

/// Strict 8-neighborhood maximum.
pub fn is_strict_local_max(img: &ArrayView2<f64>, r: usize, c: usize) -> bool {
    let (h, w) = img.dim();
    let v = img[[r, c]];
    for dr in -1isize..=1 {
        for dc in -1isize..=1 {
            if dr == 0 && dc == 0 {
                continue;
            }
            let (rr, cc) = (r as isize + dr, c as isize + dc);
            if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                continue;
            }
            if img[[rr as usize, cc as usize]] >= v {
                return false;
            }
        }
    }
    true
}

/// Band-pass filter, threshold at `threshold_k · std(filtered)`, keep strict
/// local maxima, and suppress the dimmer of any two peaks closer than
/// `roi_radius`. Returned in raster order.
pub fn detect_candidates(frame: &ArrayView2<f64>, cfg: &LocalizerConfig) -> Vec<Candidate> {
    let filtered = difference_of_gaussians(frame, cfg.filter_sigmas);
    let n = filtered.len() as f64;
    let mean = filtered.sum() / n;
    let std = (filtered.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let threshold = cfg.threshold_k * std;
    let view = filtered.view();
    let mut peaks: Vec<Candidate> = filtered
        .indexed_iter()
        .filter(|&((r, c), &v)| v > threshold && is_strict_local_max(&view, r, c))
        .map(|((row, col), &response)| Candidate { row, col, response })
        .collect();
    peaks.sort_by(|a, b| b.response.total_cmp(&a.response).then((a.row, a.col).cmp(&(b.row, b.col))));
    let min_d2 = (cfg.roi_radius * cfg.roi_radius) as f64;
    let mut kept: Vec<Candidate> = Vec::new();
    for p in peaks {
        let close = kept.iter().any(|k| {
            let (dr, dc) = (k.row as f64 - p.row as f64, k.col as f64 - p.col as f64);
            dr * dr + dc * dc < min_d2
        });
        if !close {
            kept.push(p);
        }
    }
    kept.sort_by_key(|p| (p.row, p.col));
    kept
}

/// Fitted parameters in pixel units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussFit {
    pub x: f64,
    pub y: f64,
    pub sigma: f64,
    /// Total photons under the spot.
    pub amplitude: f64,
    /// Photons per pixel.
    pub background: f64,
    pub iterations: usize,
}

const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

/// Pixel-integrated 1-D Gaussian over `[p, p+1)` and its derivatives with
/// respect to centre and width.
fn integrated_1d(p: f64, center: f64, sigma: f64) -> (f64, f64, f64) {
    let (a, b) = (p - center, p + 1.0 - center);
    let s = std::f64::consts::SQRT_2 * sigma;
    let value = 0.5 * (erf(b / s) - erf(a / s));
    let pdf = |u: f64| (-(u * u) / (2.0 * sigma * sigma)).exp() / (SQRT_2PI * sigma);
    let (pa, pb) = (pdf(a), pdf(b));
    let d_center = pa - pb;
    let d_sigma = -(b * pb - a * pa) / sigma;
    (value, d_center, d_sigma)
}

fn solve5(mut a: [[f64; 5]; 5], mut b: [f64; 5]) -> Option<[f64; 5]> {
    for col in 0..5 {
        let piv = (col..5).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..5 {
            let f = a[row][col] / a[col][col];
            let pivot_row = a[col];
            for (dst, &src) in a[row][col..].iter_mut().zip(&pivot_row[col..]) {
                *dst -= f * src;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 5];
    for row in (0..5).rev() {
        let s: f64 = (row + 1..5).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

struct Roi<'a> {
    /// Photons per pixel.
    data: &'a Array2<f64>,
    row0: usize,
    col0: usize,
}

impl Roi<'_> {
    /// Sum of squared residuals, and optionally JᵀJ and Jᵀr.
    fn evaluate(&self, p: &[f64; 5], want_normal: bool) -> (f64, [[f64; 5]; 5], [f64; 5]) {
        let [x0, y0, sigma, amp, bg] = *p;
        let (h, w) = self.data.dim();
        let cols: Vec<_> = (0..w).map(|c| integrated_1d((self.col0 + c) as f64, x0, sigma)).collect();
        let mut sse = 0.0;
        let mut jtj = [[0.0; 5]; 5];
        let mut jtr = [0.0; 5];
        for r in 0..h {
            let (ey, dy, sy) = integrated_1d((self.row0 + r) as f64, y0, sigma);
            for (c, &(ex, dx, sx)) in cols.iter().enumerate() {
                let model = bg + amp * ex * ey;
                let resid = self.data[[r, c]] - model;
                sse += resid * resid;
                if want_normal {
                    let j = [amp * dx * ey, amp * ex * dy, amp * (sx * ey + ex * sy), ex * ey, 1.0];
                    for a in 0..5 {
                        jtr[a] += j[a] * resid;
                        for b in 0..5 {
                            jtj[a][b] += j[a] * j[b];
                        }
                    }
                }
            }
        }
        (sse, jtj, jtr)
    }
}

/// Levenberg–Marquardt fit of `b + A·G(x0, y0, σ)` on the window around
/// `peak`. `frame` is in ADU; it is converted to photons with the camera
/// model before fitting.
pub fn fit_gaussian(
    frame: &ArrayView2<f64>,
    peak: (usize, usize),
    cfg: &LocalizerConfig,
    camera: &CameraModel,
) -> Result<GaussFit, Rejection> {
    let (h, w) = frame.dim();
    let rr = cfg.roi_radius;
    let (pr, pc) = peak;
    if pr < rr || pc < rr || pr + rr >= h || pc + rr >= w {
        return Err(Rejection::Border);
    }
    let (row0, col0) = (pr - rr, pc - rr);
    let data = frame
        .slice(s![row0..=pr + rr, col0..=pc + rr])
        .mapv(|adu| camera.adu_to_photons(adu));
    let roi = Roi { data: &data, row0, col0 };

    let bg0 = data.iter().copied().fold(f64::INFINITY, f64::min);
    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for ((r, c), &v) in data.indexed_iter() {
        let wgt = v - bg0;
        sw += wgt;
        sx += wgt * ((col0 + c) as f64 + 0.5);
        sy += wgt * ((row0 + r) as f64 + 0.5);
    }
    let sigma0 = cfg.filter_sigmas.0;
    let mut p = if sw > 0.0 {
        [sx / sw, sy / sw, sigma0, sw, bg0]
    } else {
        [pc as f64 + 0.5, pr as f64 + 0.5, sigma0, 0.0, bg0]
    };

    let mut lambda = 1e-3;
    let (mut sse, mut jtj, mut jtr) = roi.evaluate(&p, true);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        iterations += 1;
        let mut a = jtj;
        for (k, row) in a.iter_mut().enumerate() {
            row[k] += lambda * jtj[k][k].max(1e-12);
        }
        let Some(delta) = solve5(a, jtr) else {
            return Err(Rejection::Singular);
        };
        let trial: [f64; 5] = std::array::from_fn(|k| p[k] + delta[k]);
        let (trial_sse, _, _) = if trial[2] > 0.05 { roi.evaluate(&trial, false) } else { (f64::INFINITY, jtj, jtr) };
        if trial_sse < sse {
            let small = (0..5).all(|k| delta[k].abs() <= cfg.converge_tol * p[k].abs().max(1.0));
            p = trial;
            (sse, jtj, jtr) = roi.evaluate(&p, true);
            lambda = (lambda / 10.0).max(1e-12);
            if small {
                converged = true;
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                // no descent direction left: at a minimum
                converged = true;
                break;
            }
        }
    }
    if !converged {
        return Err(Rejection::NotConverged);
    }
    let [x, y, sigma, amplitude, background] = p;
    let inside = |v: f64, lo: usize| v >= lo as f64 && v <= (lo + 2 * rr + 1) as f64;
    if !inside(x, col0) || !inside(y, row0) {
        return Err(Rejection::OutsideRoi);
    }
    if amplitude < cfg.min_photons {
        return Err(Rejection::LowPhotons);
    }
    if !(sigma >= 0.5 * sigma0 && sigma <= 4.0 * sigma0) {
        return Err(Rejection::SigmaOutOfRange);
    }
    Ok(GaussFit { x, y, sigma, amplitude, background, iterations })
}

/// Detections plus per-reason rejection counts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LocalizeOutcome {
    pub table: LocalizationTable,
    pub candidates: usize,
    pub rejections: Vec<(Rejection, usize)>,
}

pub fn localize_frame(
    frame: &ArrayView2<f64>,
    frame_index: usize,
    pixel_nm: f64,
    cfg: &LocalizerConfig,
    camera: &CameraModel,
) -> (Vec<Localization>, Vec<Rejection>, usize) {
    let cands = detect_candidates(frame, cfg);
    let mut locs = Vec::new();
    let mut rejected = Vec::new();
    for c in &cands {
        match fit_gaussian(frame, (c.row, c.col), cfg, camera) {
            Ok(f) => locs.push(Localization {
                frame: frame_index,
                x_nm: f.x * pixel_nm,
                y_nm: f.y * pixel_nm,
                sigma_nm: Some(f.sigma * pixel_nm),
                intensity: Some(f.amplitude),
                background: Some(f.background),
            }),
            Err(r) => rejected.push(r),
        }
    }
    (locs, rejected, cands.len())
}

pub fn localize_stack_with_stats(stack: &FrameStack, cfg: &LocalizerConfig, camera: &CameraModel) -> LocalizeOutcome {
    let per_frame: Vec<_> = (0..stack.n_frames)
        .into_par_iter()
        .map(|f| localize_frame(&stack.frame_f64(f).view(), f, stack.pixel_nm, cfg, camera))
        .collect();
    let mut out = LocalizeOutcome::default();
    let mut counts: Vec<(Rejection, usize)> = Vec::new();
    for (locs, rejected, n) in per_frame {
        out.table.rows.extend(locs);
        out.candidates += n;
        for r in rejected {
            match counts.iter_mut().find(|(k, _)| *k == r) {
                Some((_, c)) => *c += 1,
                None => counts.push((r, 1)),
            }
        }
    }
    out.rejections = counts;
    out
}

pub fn localize_stack(stack: &FrameStack, cfg: &LocalizerConfig, camera: &CameraModel) -> LocalizationTable {
    localize_stack_with_stats(stack, cfg, camera).table
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::add_spot;

    const SIGMA: f64 = 1.3;

    /// Noise-free ADU frame with spots given in pixel coordinates.
    fn frame_with(spots: &[(f64, f64, f64)], n: usize, camera: &CameraModel) -> Array2<f64> {
        let mut photons = Array2::zeros((n, n));
        for &(x, y, a) in spots {
            add_spot(&mut photons, x, y, SIGMA, a, 4.0 * SIGMA);
        }
        photons.mapv(|p| camera.photons_to_adu(p))
    }

    #[test]
    fn zero_frame_has_no_candidates() {
        let f = Array2::zeros((32, 32));
        assert!(detect_candidates(&f.view(), &LocalizerConfig::default()).is_empty());
    }

    #[test]
    fn single_emitter_gives_one_candidate_at_nearest_pixel() {
        let cam = CameraModel::ideal();
        let f = frame_with(&[(15.3, 12.8, 500.0)], 32, &cam);
        let c = detect_candidates(&f.view(), &LocalizerConfig::default());
        assert_eq!(c.len(), 1);
        assert_eq!((c[0].row, c[0].col), (12, 15));
    }

    #[test]
    fn close_pair_is_suppressed_to_one() {
        let cam = CameraModel::ideal();
        let f = frame_with(&[(14.5, 14.5, 500.0), (16.5, 14.5, 400.0)], 32, &cam);
        assert_eq!(detect_candidates(&f.view(), &LocalizerConfig::default()).len(), 1);
    }

    #[test]
    fn centred_emitter_is_a_fixed_point() {
        let cam = CameraModel::ideal();
        let f = frame_with(&[(10.5, 10.5, 2000.0)], 21, &cam);
        let fit = fit_gaussian(&f.view(), (10, 10), &LocalizerConfig::default(), &cam).unwrap();
        assert!((fit.x - 10.5).abs() <= 1e-6 && (fit.y - 10.5).abs() <= 1e-6, "{fit:?}");
    }

    #[test]
    fn subpixel_offset_is_recovered() {
        let cam = CameraModel::ideal();
        let f = frame_with(&[(10.8, 10.5, 5000.0)], 21, &cam);
        let fit = fit_gaussian(&f.view(), (10, 10), &LocalizerConfig::default(), &cam).unwrap();
        assert!((fit.x - 10.8).abs() < 0.02 && (fit.y - 10.5).abs() < 0.02, "{fit:?}");
        assert!((fit.sigma - SIGMA).abs() < 0.01);
    }

    #[test]
    fn flat_roi_is_rejected() {
        let cam = CameraModel::ideal();
        let f = Array2::from_elem((21, 21), 30.0);
        let r = fit_gaussian(&f.view(), (10, 10), &LocalizerConfig::default(), &cam);
        assert!(matches!(r, Err(Rejection::LowPhotons) | Err(Rejection::Singular)), "{r:?}");
    }

    #[test]
    fn border_peaks_are_rejected() {
        let f = Array2::zeros((21, 21));
        let r = fit_gaussian(&f.view(), (1, 10), &LocalizerConfig::default(), &CameraModel::ideal());
        assert_eq!(r, Err(Rejection::Border));
    }

    #[test]
    fn whole_pixel_shift_is_equivariant() {
        let cam = CameraModel::ideal();
        let cfg = LocalizerConfig::default();
        let a = frame_with(&[(10.3, 11.6, 1500.0)], 24, &cam);
        let b = frame_with(&[(13.3, 9.6, 1500.0)], 24, &cam);
        let fa = fit_gaussian(&a.view(), (11, 10), &cfg, &cam).unwrap();
        let fb = fit_gaussian(&b.view(), (9, 13), &cfg, &cam).unwrap();
        assert!((fb.x - fa.x - 3.0).abs() < 1e-6);
        assert!((fb.y - fa.y + 2.0).abs() < 1e-6);
    }

    #[test]
    fn amplitude_scales_with_photons() {
        let cam = CameraModel::ideal();
        let cfg = LocalizerConfig::default();
        let fit = |n: f64| {
            let f = frame_with(&[(10.4, 10.7, n)], 21, &cam);
            fit_gaussian(&f.view(), (10, 10), &cfg, &cam).unwrap().amplitude
        };
        let (a1, a2) = (fit(500.0), fit(1500.0));
        assert!((a2 / a1 - 3.0).abs() < 0.03, "{a1} {a2}");
    }

    #[test]
    fn config_validation() {
        assert!(LocalizerConfig::default().validate().is_ok());
        assert!(LocalizerConfig { filter_sigmas: (2.0, 1.0), ..Default::default() }.validate().is_err());
        assert!(LocalizerConfig { roi_radius: 1, ..Default::default() }.validate().is_err());
    }
}
