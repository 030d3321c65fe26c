//! Oracles shared by the integration tests.
#![allow(dead_code)]

use cellstorm::camera::{apply_camera, CameraModel};
use cellstorm::FrameStack;
use ndarray::Array2;
use statrs::function::erf::erf;

pub fn uniform_stack(model: &CameraModel, photons: f64, side: usize, frames: usize, fps: f64, seed: u64) -> FrameStack {
    let map = Array2::from_elem((side, side), photons);
    let data = (0..frames)
        .map(|f| apply_camera(&map, model, f, fps, seed).unwrap().iter().copied().collect())
        .collect();
    FrameStack::from_frames(data, side, side, 100.0, fps, model.bit_depth).unwrap()
}

pub fn calibration_set(model: &CameraModel, side: usize, frames: usize, seed: u64) -> (Vec<FrameStack>, FrameStack) {
    // Ten levels spanning roughly 20..200 ADU.
    let levels: Vec<FrameStack> = (0..10)
        .map(|i| {
            let adu = 20.0 + 20.0 * i as f64;
            let photons = (adu - model.offset) * model.gain / model.qe;
            uniform_stack(model, photons, side, frames, 20.0, seed * 100 + i as u64 + 1)
        })
        .collect();
    let dark = uniform_stack(model, 0.0, side, frames, 20.0, seed * 100);
    (levels, dark)
}

/// Cramér–Rao bound on radial localization error, by brute force.
///
/// Expected photons per pixel `μ = b + A·Ex·Ey` with `Ex`, `Ey` the
/// Gaussian mass over the pixel edges. The per-pixel variance of the
/// photon estimate `(adu − offset)·gain/qe` is
/// `(qe·μ + rn² + gain²/12)/qe²`. The Fisher matrix over
/// `(x, y, σ, A, b)` uses central finite differences on the ROI of the
/// localizer; the bound is averaged over a grid of sub-pixel positions.
pub fn crlb_radial_nm(photons: f64, bg: f64, sigma_nm: f64, pixel_nm: f64, roi: usize, cam: &CameraModel) -> f64 {
    let phi = |t: f64| 0.5 * (1.0 + erf(t / std::f64::consts::SQRT_2));
    let mu = |p: &[f64; 5], r: f64, c: f64| {
        let ex = phi((c + 1.0 - p[0]) / p[2]) - phi((c - p[0]) / p[2]);
        let ey = phi((r + 1.0 - p[1]) / p[2]) - phi((r - p[1]) / p[2]);
        p[4] + p[3] * ex * ey
    };
    let sigma = sigma_nm / pixel_nm;
    let n = 10;
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let x = 0.5 + (i as f64 + 0.5) / n as f64 - 0.5;
            let y = 0.5 + (j as f64 + 0.5) / n as f64 - 0.5;
            let p = [x, y, sigma, photons, bg];
            let mut fisher = [[0.0f64; 5]; 5];
            let r0 = -(roi as f64);
            for rr in 0..(2 * roi + 1) {
                for cc in 0..(2 * roi + 1) {
                    let (r, c) = (r0 + rr as f64, r0 + cc as f64);
                    let m = mu(&p, r, c);
                    let var = (cam.qe * m + cam.read_noise.powi(2) + cam.gain.powi(2) / 12.0) / cam.qe.powi(2);
                    let mut grad = [0.0; 5];
                    for (k, g) in grad.iter_mut().enumerate() {
                        let h = 1e-5 * p[k].abs().max(1.0);
                        let (mut hi, mut lo) = (p, p);
                        hi[k] += h;
                        lo[k] -= h;
                        *g = (mu(&hi, r, c) - mu(&lo, r, c)) / (2.0 * h);
                    }
                    for a in 0..5 {
                        for b in 0..5 {
                            fisher[a][b] += grad[a] * grad[b] / var;
                        }
                    }
                }
            }
            let inv = invert5(fisher);
            total += inv[0][0] + inv[1][1];
        }
    }
    (total / (n * n) as f64).sqrt() * pixel_nm
}

fn invert5(m: [[f64; 5]; 5]) -> [[f64; 5]; 5] {
    let mut a = m;
    let mut inv = [[0.0; 5]; 5];
    for (i, row) in inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for col in 0..5 {
        let piv = (col..5).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs())).unwrap();
        a.swap(col, piv);
        inv.swap(col, piv);
        let d = a[col][col];
        for k in 0..5 {
            a[col][k] /= d;
            inv[col][k] /= d;
        }
        for r in 0..5 {
            if r != col {
                let f = a[r][col];
                for k in 0..5 {
                    a[r][k] -= f * a[col][k];
                    inv[r][k] -= f * inv[col][k];
                }
            }
        }
    }
    inv
}

