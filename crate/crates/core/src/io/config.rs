//! Run configuration: one JSON document with per-module groups, adjustable
//! through dotted-path overrides such as `camera.gain=0.5`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::camera::CameraModel;
use crate::codec::CodecConfig;
use crate::eval::matching::{MatchPolicy, DEFAULT_MATCH_RADIUS_NM};
use crate::eval::sweep::SweepConfig;
use crate::localize::LocalizerConfig;
use crate::nn::UpsampleGrid;
use crate::sim::SimConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config is not valid JSON: {0}")]
    Syntax(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("type error at `{path}`: {msg}")]
    Type { path: String, msg: String },
    #[error("override `{0}` must have the form key.path=value")]
    BadOverride(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub match_radius_nm: f64,
    pub policy: MatchPolicy,
    pub render_px_nm: f64,
    pub blur_sigma_nm: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { match_radius_nm: DEFAULT_MATCH_RADIUS_NM, policy: MatchPolicy::Nearest, render_px_nm: 10.0, blur_sigma_nm: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub photons: Vec<f64>,
    pub qualities: Vec<u8>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        let d = SweepConfig::default();
        Self { photons: d.photons, qualities: d.qualities }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub camera: CameraModel,
    pub codec: CodecConfig,
    pub simulation: SimConfig,
    pub localizer: LocalizerConfig,
    pub eval: EvalConfig,
    pub grid: UpsampleGrid,
    pub sweep: SweepGrid,
}

fn type_error(path: &str, e: serde_json::Error) -> ConfigError {
    ConfigError::Type { path: path.to_string(), msg: e.to_string() }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let value: Value = serde_json::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        Self::from_value(value, "")
    }

    fn from_value(value: Value, path: &str) -> Result<Self, ConfigError> {
        serde_json::from_value(value).map_err(|e| {
            let msg = e.to_string();
            match msg.strip_prefix("unknown field `").and_then(|r| r.split('`').next()) {
                Some(key) => ConfigError::UnknownKey(key.to_string()),
                None => type_error(path, e),
            }
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Sets the value at a dotted path. The value is parsed as JSON and
    /// falls back to a plain string.
    pub fn set_override(&mut self, path: &str, raw: &str) -> Result<(), ConfigError> {
        let mut root = serde_json::to_value(&*self).expect("config serializes");
        let mut slot = &mut root;
        for key in path.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|o| o.get_mut(key))
                .ok_or_else(|| ConfigError::UnknownKey(path.to_string()))?;
        }
        *slot = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        *self = Self::from_value(root, path)?;
        Ok(())
    }

    /// Applies `key.path=value` assignments in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, items: &[S]) -> Result<(), ConfigError> {
        for item in items {
            let item = item.as_ref();
            let (k, v) = item.split_once('=').ok_or_else(|| ConfigError::BadOverride(item.to_string()))?;
            self.set_override(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            photons: self.sweep.photons.clone(),
            qualities: self.sweep.qualities.clone(),
            simulation: self.simulation.clone(),
            camera: self.camera,
            localizer: self.localizer,
            grid_offset: self.codec.grid_offset,
            match_radius_nm: self.eval.match_radius_nm,
            policy: self.eval.policy,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn json_round_trip() {
        let mut c = RunConfig { seed: 9, ..Default::default() };
        c.codec.quality = 70;
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn dotted_overrides() {
        let mut c = RunConfig::default();
        c.apply_overrides(&["camera.gain=0.5", "codec.grid_offset=random", "simulation.scene.density=2"]).unwrap();
        assert_eq!(c.camera.gain, 0.5);
        assert_eq!(c.codec.grid_offset, crate::codec::GridOffset::RandomPerStack);
        assert_eq!(c.simulation.scene.density, 2.0);
    }

    #[test]
    fn override_errors_are_distinct() {
        let mut c = RunConfig::default();
        assert!(matches!(c.set_override("camera.gian", "1"), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(c.set_override("camera.gain", "fast"), Err(ConfigError::Type { .. })));
        assert!(matches!(c.apply_overrides(&["seed"]), Err(ConfigError::BadOverride(_))));
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn unknown_field_in_document() {
        assert!(matches!(RunConfig::from_json(r#"{"camera":{"gainn":1}}"#), Err(ConfigError::UnknownKey(k)) if k == "gainn"));
        assert!(matches!(RunConfig::from_json(r#"{"seed":"x"}"#), Err(ConfigError::Type { .. })));
        assert!(matches!(RunConfig::from_json("{"), Err(ConfigError::Syntax(_))));
    }
}
