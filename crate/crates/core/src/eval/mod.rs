//! Quantitative evaluation: ground-truth matching, parameter sweeps,
//! rendering, and Fourier ring correlation.

pub mod frc;
pub mod matching;
pub mod render;
pub mod sweep;

pub use frc::{frc, FrcError, FrcResult};
pub use matching::{false_detections, grid_phase_histogram, match_to_gt, uniformity_chi_square, MatchPolicy, MatchReport};
pub use render::{render, widefield};

pub use sweep::{run_sweep, sweep_report, SweepCell, SweepConfig, SweepError, SweepReport};
