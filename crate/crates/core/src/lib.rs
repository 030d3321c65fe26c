//! Simulation, localization and evaluation of single-molecule blinking data
//! recorded through a noisy, block-compressed cellphone camera pipeline.
//!
//! The pipeline is split into independent stages that communicate through
//! plain value types and two on-disk formats:
//!
//! * [`sim`] draws blinking ground truth and renders ideal photon maps,
//! * [`camera`] turns photon maps into ADU frames and calibrates the sensor
//!   from mean-variance data,
//! * [`codec`] applies a 4×4 integer-transform quantizer that reproduces
//!   H.264-style block artifacts,
//! * [`localize`] is the classical detect-and-fit localizer,
//! * [`nn`] runs a pretrained U-Net generator stored as a weight archive,
//! * [`eval`] matches detections against ground truth, computes Fourier
//!   ring correlation and renders super-resolved images.
//!
//! Frames are stored in the `.cstk` container ([`io::stack`]) and
//! localizations in a ThunderSTORM-style CSV ([`io::table`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod cli;
pub mod codec;
pub mod eval;
pub mod io;
pub mod localize;
pub mod nn;
pub mod rng;
pub mod sim;

pub use camera::{CalibrationResult, CameraModel};
pub use codec::CodecConfig;
pub use io::config::RunConfig;
pub use io::stack::FrameStack;
pub use io::table::{Emitter, EmitterTable, Localization, LocalizationTable};
