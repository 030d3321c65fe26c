//! Photon × quality grid: simulate once per photon level, degrade at every
//! quality, localize with each method and match against the shared ground
//! truth.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::CameraModel;
use crate::codec::{resolve_grid_offset, transcode_stack, CodecConfig, CodecError, GridOffset};
use crate::eval::matching::{
    false_detections, grid_phase_histogram, match_to_gt, uniformity_chi_square, MatchPolicy, MatchReport,
    DEFAULT_MATCH_RADIUS_NM,
};
use crate::localize::{localize_stack, LocalizerConfig};
use crate::nn::{nn_localize_stack, UpsampleGrid, WeightArchive};
use crate::sim::{simulate_stack, SimConfig, SimError};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("missing sweep cell: method {method}, photons {photons}, quality {quality}")]
    MissingCell { method: String, photons: f64, quality: u8 },
    #[error("invalid sweep: {0}")]
    Invalid(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

pub const CLASSICAL: &str = "classical";
pub const NEURAL: &str = "nn";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub photons: Vec<f64>,
    pub qualities: Vec<u8>,
    pub simulation: SimConfig,
    pub camera: CameraModel,
    pub localizer: LocalizerConfig,
    pub grid_offset: GridOffset,
    pub match_radius_nm: f64,
    pub policy: MatchPolicy,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            photons: vec![50.0, 100.0, 500.0, 1000.0],
            qualities: vec![70, 80, 90, 100],
            simulation: SimConfig::default(),
            camera: CameraModel::default(),
            localizer: LocalizerConfig::default(),
            grid_offset: GridOffset::default(),
            match_radius_nm: DEFAULT_MATCH_RADIUS_NM,
            policy: MatchPolicy::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub method: String,
    pub photons: f64,
    pub quality: u8,
    pub report: MatchReport,
    /// Unmatched detections by position modulo the 4×4 block grid.
    pub false_phase: [usize; 16],
    /// Uniformity p-value of `false_phase`.
    pub false_phase_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub methods: Vec<String>,
    pub photons: Vec<f64>,
    pub qualities: Vec<u8>,
    /// Ordered method, then quality, then photons.
    pub cells: Vec<SweepCell>,
}

/// One plotted line: a method at fixed quality across photon levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSeries {
    pub method: String,
    pub quality: u8,
    pub photons: Vec<f64>,
    pub gt_count: Vec<usize>,
    pub matched_count: Vec<usize>,
    pub mean_distance_nm: Vec<Option<f64>>,
}

impl SweepReport {
    pub fn cell(&self, method: &str, photons: f64, quality: u8) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.method == method && c.photons == photons && c.quality == quality)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "method,photons,quality,gt_count,detected_count,matched_count,matched_fraction,mean_distance_nm,rmse_nm,false_phase_p\n",
        );
        let opt = |v: Option<f64>| v.map(|v| format!("{v:?}")).unwrap_or_default();
        for c in &self.cells {
            let r = &c.report;
            out.push_str(&format!(
                "{},{:?},{},{},{},{},{:?},{},{},{:?}\n",
                c.method,
                c.photons,
                c.quality,
                r.gt_count,
                r.detected_count,
                r.matched_count,
                r.matched_fraction(),
                opt(r.mean_distance_nm),
                opt(r.rmse_nm),
                c.false_phase_p
            ));
        }
        out
    }

    pub fn plot_series(&self) -> Vec<PlotSeries> {
        let mut out = Vec::new();
        for m in &self.methods {
            for &q in &self.qualities {
                let cells: Vec<&SweepCell> =
                    self.photons.iter().filter_map(|&p| self.cell(m, p, q)).collect();
                out.push(PlotSeries {
                    method: m.clone(),
                    quality: q,
                    photons: cells.iter().map(|c| c.photons).collect(),
                    gt_count: cells.iter().map(|c| c.report.gt_count).collect(),
                    matched_count: cells.iter().map(|c| c.report.matched_count).collect(),
                    mean_distance_nm: cells.iter().map(|c| c.report.mean_distance_nm).collect(),
                });
            }
        }
        out
    }
}

/// Assembles a complete grid, ordering cells method → quality → photons.
pub fn sweep_report(
    cells: Vec<SweepCell>,
    photons: &[f64],
    qualities: &[u8],
    methods: &[&str],
) -> Result<SweepReport, SweepError> {
    let mut ordered = Vec::with_capacity(methods.len() * qualities.len() * photons.len());
    for &m in methods {
        for &q in qualities {
            for &p in photons {
                let cell = cells
                    .iter()
                    .find(|c| c.method == m && c.photons == p && c.quality == q)
                    .ok_or(SweepError::MissingCell { method: m.to_string(), photons: p, quality: q })?;
                ordered.push(cell.clone());
            }
        }
    }
    Ok(SweepReport {
        methods: methods.iter().map(|m| m.to_string()).collect(),
        photons: photons.to_vec(),
        qualities: qualities.to_vec(),
        cells: ordered,
    })
}

/// Runs the grid. The classical localizer always runs; the neural one
/// only when weights are given.
pub fn run_sweep(cfg: &SweepConfig, weights: Option<(&WeightArchive, &UpsampleGrid)>) -> Result<SweepReport, SweepError> {
    if cfg.photons.is_empty() || cfg.qualities.is_empty() {
        return Err(SweepError::Invalid("photon and quality lists must be non-empty".into()));
    }
    if let Some(&p) = cfg.photons.iter().find(|&&p| !(p > 0.0)) {
        return Err(SweepError::Invalid(format!("photon level {p} must be positive")));
    }
    cfg.localizer.validate().map_err(SweepError::Invalid)?;
    let mut methods = vec![CLASSICAL];
    if weights.is_some() {
        methods.push(NEURAL);
    }
    let mut cells = Vec::new();
    for &photons in &cfg.photons {
        let mut sim = cfg.simulation.clone();
        sim.blink.photons = photons;
        let (raw, gt) = simulate_stack(&sim, &cfg.camera, None, cfg.seed)?;
        for &quality in &cfg.qualities {
            let codec = CodecConfig { quality, grid_offset: cfg.grid_offset, qp_override: None };
            codec.validate()?;
            let stack = transcode_stack(&raw, &codec, cfg.seed)?;
            let offset = resolve_grid_offset(&codec, cfg.seed);
            let mut tables = vec![(CLASSICAL, localize_stack(&stack, &cfg.localizer, &cfg.camera))];
            if let Some((w, grid)) = weights {
                tables.push((NEURAL, nn_localize_stack(&stack, w, grid)));
            }
            for (method, table) in tables {
                let report = match_to_gt(&table, &gt, cfg.match_radius_nm, cfg.policy);
                let false_phase = grid_phase_histogram(&false_detections(&table, &gt, cfg.match_radius_nm), stack.pixel_nm, offset);
                cells.push(SweepCell {
                    method: method.to_string(),
                    photons,
                    quality,
                    report,
                    false_phase,
                    false_phase_p: uniformity_chi_square(&false_phase).1,
                });
            }
        }
    }
    sweep_report(cells, &cfg.photons, &cfg.qualities, &methods)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(method: &str, photons: f64, quality: u8) -> SweepCell {
        SweepCell {
            method: method.into(),
            photons,
            quality,
            report: MatchReport {
                matched_count: 1,
                gt_count: 2,
                detected_count: 3,
                mean_distance_nm: Some(10.0),
                rmse_nm: Some(12.0),
                match_radius_nm: 200.0,
            },
            false_phase: [0; 16],
            false_phase_p: 1.0,
        }
    }

    #[test]
    fn missing_cell_is_reported() {
        let cells = vec![cell(CLASSICAL, 50.0, 70)];
        let err = sweep_report(cells, &[50.0, 100.0], &[70], &[CLASSICAL]).unwrap_err();
        assert!(matches!(err, SweepError::MissingCell { quality: 70, .. }));
    }

    #[test]
    fn report_orders_and_serializes() {
        let cells = vec![cell(CLASSICAL, 100.0, 70), cell(CLASSICAL, 50.0, 70)];
        let r = sweep_report(cells, &[50.0, 100.0], &[70], &[CLASSICAL]).unwrap();
        assert_eq!(r.cells[0].photons, 50.0);
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert_eq!(csv.lines().nth(1).unwrap(), "classical,50.0,70,2,3,1,0.5,10.0,12.0,1.0");
        let series = r.plot_series();
        assert_eq!(series.len(), 1);
        assert_eq!(series[0].matched_count, vec![1, 1]);
    }

    #[test]
    fn tiny_grid_runs() {
        let mut cfg = SweepConfig { photons: vec![500.0], qualities: vec![100, 70], ..Default::default() };
        cfg.simulation.n_frames = 4;
        cfg.simulation.scene.fov_um = 3.2;
        let r = run_sweep(&cfg, None).unwrap();
        assert_eq!(r.cells.len(), 2);
        assert_eq!(r.cells[0].report.gt_count, r.cells[1].report.gt_count);
    }
}
