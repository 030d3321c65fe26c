use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::io::table::{EmitterTable, LocalizationTable};

pub const DEFAULT_MATCH_RADIUS_NM: f64 = 200.0;

/// How detections are paired with ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchPolicy {
    /// Each detection takes its nearest ground-truth event of the same
    /// frame; ground truth may be reused (knnsearch convention).
    #[default]
    Nearest,
    /// Greedy shortest-distance-first assignment, each event used once.
    OneToOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub matched_count: usize,
    pub gt_count: usize,
    pub detected_count: usize,
    /// Mean over matches only; `None` without matches.
    pub mean_distance_nm: Option<f64>,
    pub rmse_nm: Option<f64>,
    pub match_radius_nm: f64,
}

impl MatchReport {
    pub fn unmatched_detections(&self) -> usize {
        self.detected_count - self.matched_count
    }

    pub fn matched_fraction(&self) -> f64 {
        if self.gt_count == 0 {
            0.0
        } else {
            self.matched_count as f64 / self.gt_count as f64
        }
    }
}

/// Pairs detections with ground truth frame by frame and aggregates.
pub fn match_to_gt(
    detections: &LocalizationTable,
    gt: &EmitterTable,
    radius_nm: f64,
    policy: MatchPolicy,
) -> MatchReport {
    let frames = detections
        .rows
        .iter()
        .map(|r| r.frame)
        .chain(gt.rows.iter().map(|r| r.frame))
        .max()
        .map_or(0, |m| m + 1);
    let mut distances = Vec::new();
    for f in 0..frames {
        let det = detections.frame_rows(f);
        let truth = gt.frame_rows(f);
        if det.is_empty() || truth.is_empty() {
            continue;
        }
        let dist = |i: usize, j: usize| (det[i].x_nm - truth[j].x_nm).hypot(det[i].y_nm - truth[j].y_nm);
        match policy {
            MatchPolicy::Nearest => {
                for i in 0..det.len() {
                    let d = (0..truth.len()).map(|j| dist(i, j)).fold(f64::INFINITY, f64::min);
                    if d <= radius_nm {
                        distances.push(d);
                    }
                }
            }
            MatchPolicy::OneToOne => {
                let mut pairs: Vec<(f64, usize, usize)> = (0..det.len())
                    .flat_map(|i| (0..truth.len()).map(move |j| (i, j)))
                    .map(|(i, j)| (dist(i, j), i, j))
                    .filter(|p| p.0 <= radius_nm)
                    .collect();
                pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
                let mut used_d = vec![false; det.len()];
                let mut used_t = vec![false; truth.len()];
                for (d, i, j) in pairs {
                    if !used_d[i] && !used_t[j] {
                        used_d[i] = true;
                        used_t[j] = true;
                        distances.push(d);
                    }
                }
            }
        }
    }
    let n = distances.len();
    let (mean, rmse) = if n == 0 {
        (None, None)
    } else {
        let mean = distances.iter().sum::<f64>() / n as f64;
        let rmse = (distances.iter().map(|d| d * d).sum::<f64>() / n as f64).sqrt();
        (Some(mean), Some(rmse))
    };
    MatchReport {
        matched_count: n,
        gt_count: gt.len(),
        detected_count: detections.len(),
        mean_distance_nm: mean,
        rmse_nm: rmse,
        match_radius_nm: radius_nm,
    }
}

/// Detections with no ground-truth event of their frame within `radius_nm`.
pub fn false_detections(detections: &LocalizationTable, gt: &EmitterTable, radius_nm: f64) -> LocalizationTable {
    let rows = detections
        .rows
        .iter()
        .filter(|d| {
            !gt.frame_rows(d.frame)
                .iter()
                .any(|g| (d.x_nm - g.x_nm).hypot(d.y_nm - g.y_nm) <= radius_nm)
        })
        .cloned()
        .collect();
    LocalizationTable { rows }
}

/// Counts of detections by `(floor(x_px) mod 4, floor(y_px) mod 4)`, indexed
/// `4·(y mod 4) + (x mod 4)`.
pub fn grid_phase_histogram(table: &LocalizationTable, pixel_nm: f64, grid: (usize, usize)) -> [usize; 16] {
    let mut h = [0usize; 16];
    for r in &table.rows {
        let phase = |v: f64, off: usize| ((v / pixel_nm).floor() as i64 - off as i64).rem_euclid(4) as usize;
        h[4 * phase(r.y_nm, grid.1) + phase(r.x_nm, grid.0)] += 1;
    }
    h
}

/// Pearson chi-square statistic against a uniform distribution and its
/// upper-tail p-value.
pub fn uniformity_chi_square(counts: &[usize]) -> (f64, f64) {
    let total: usize = counts.iter().sum();
    let k = counts.len();
    if total == 0 || k < 2 {
        return (0.0, 1.0);
    }
    let expected = total as f64 / k as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let dist = ChiSquared::new((k - 1) as f64).expect("positive dof");
    (stat, dist.sf(stat))
}
