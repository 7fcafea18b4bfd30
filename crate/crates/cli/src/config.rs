//! Run configuration: one JSON document with a section per module.
//!
//! Every section and field is optional; missing values take the defaults of
//! the experimental protocol. Unknown fields are rejected with their path.

use std::path::Path;

use dropevo_core::analysis::SomParams;
use dropevo_core::arena::{ArenaConfig, BehaviorModel, UnimodalMap};
use dropevo_core::fitness::Objective;
use dropevo_core::formulation::FourthOil;
use dropevo_core::ga::GaConfig;
use dropevo_core::landscape::{DEFAULT_LAMBDA, DEFAULT_RESOLUTION, DEFAULT_SIGMA};
use dropevo_core::pipeline::{ClosedLoop, TrackingConfig};
use dropevo_core::rng::derive_seed;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Stream id used to derive the unimodal map seed from the run seed.
const MAP_STREAM: u64 = 0x4d41_50;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: cannot read config: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: at `{field}`: {message}")]
    Parse { file: String, field: String, message: String },
    #[error("invalid value for `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

impl ConfigError {
    fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

/// How recipes become droplet behavior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelConfig {
    /// Behavior from the oil property table.
    Physical {
        #[serde(default = "default_fourth_oil")]
        fourth_oil: FourthOil,
    },
    /// Single-peaked synthetic speed map. `map` wins over `seed`; with neither,
    /// the map is drawn from the run seed.
    Unimodal {
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default)]
        map: Option<UnimodalMap>,
    },
}

fn default_fourth_oil() -> FourthOil {
    FourthOil::OctanoicAcid
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::Physical {
            fourth_oil: default_fourth_oil(),
        }
    }
}

impl ModelConfig {
    pub fn resolve(&self, run_seed: u64) -> BehaviorModel {
        match self {
            ModelConfig::Physical { fourth_oil } => BehaviorModel::Physical { fourth_oil: *fourth_oil },
            ModelConfig::Unimodal { map: Some(m), .. } => BehaviorModel::Unimodal(*m),
            ModelConfig::Unimodal { seed, map: None } => {
                let s = seed.unwrap_or_else(|| derive_seed(run_seed, &[MAP_STREAM]));
                BehaviorModel::Unimodal(UnimodalMap::seeded(s))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LandscapeConfig {
    /// Kernel bandwidth in proportion units.
    pub sigma: f64,
    /// Ridge penalty.
    pub lambda: f64,
    /// Lattice points per face edge.
    pub resolution: usize,
}

impl Default for LandscapeConfig {
    fn default() -> Self {
        LandscapeConfig {
            sigma: DEFAULT_SIGMA,
            lambda: DEFAULT_LAMBDA,
            resolution: DEFAULT_RESOLUTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Family-wise error rate for the Holm correction across histories.
    pub alpha: f64,
    pub som: SomParams,
    /// SOM initialisation seed; the run seed when absent.
    pub som_seed: Option<u64>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            alpha: 0.05,
            som: SomParams::default(),
            som_seed: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GcodeConfig {
    /// Write one audit script per recipe during `evolve`.
    pub write_scripts: bool,
    /// Machine layout file; the shipped layout when absent.
    pub layout: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub ga: GaConfig,
    pub objective: Objective,
    pub model: ModelConfig,
    pub arena: ArenaConfig,
    pub tracking: TrackingConfig,
    pub landscape: LandscapeConfig,
    pub analysis: AnalysisConfig,
    pub gcode: GcodeConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            ga: GaConfig::default(),
            objective: Objective::Movement,
            model: ModelConfig::default(),
            arena: ArenaConfig::default(),
            tracking: TrackingConfig::default(),
            landscape: LandscapeConfig::default(),
            analysis: AnalysisConfig::default(),
            gcode: GcodeConfig::default(),
        }
    }
}

impl Config {
    /// Parses a config document. A run manifest is accepted too: its `config`
    /// member is used.
    pub fn from_json(text: &str, file: &str) -> Result<Config, ConfigError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            file: file.to_string(),
            field: format!("line {} column {}", e.line(), e.column()),
            message: e.to_string(),
        })?;
        let (value, prefix) = match value {
            serde_json::Value::Object(mut m) if m.contains_key("config") && m.contains_key("format") => {
                (m.remove("config").unwrap_or_default(), "config.")
            }
            v => (v, ""),
        };
        let cfg: Config = serde_path_to_error::deserialize(value).map_err(|e| ConfigError::Parse {
            file: file.to_string(),
            field: format!("{prefix}{}", e.path()),
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Config::from_json(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.ga.validate().map_err(|e| match e {
            dropevo_core::ga::GaError::InvalidConfig { field, reason } => ConfigError::invalid(format!("ga.{field}"), reason),
            other => ConfigError::invalid("ga", other.to_string()),
        })?;
        self.closed_loop().validate().map_err(|e| {
            let field = if e.field.starts_with("tracking.") {
                e.field.to_string()
            } else {
                format!("arena.{}", e.field)
            };
            ConfigError::invalid(field, e.reason)
        })?;
        let l = &self.landscape;
        if !(l.sigma > 0.0 && l.sigma.is_finite()) {
            return Err(ConfigError::invalid("landscape.sigma", "must be positive"));
        }
        if !(l.lambda > 0.0 && l.lambda.is_finite()) {
            return Err(ConfigError::invalid("landscape.lambda", "must be positive"));
        }
        if l.resolution < 2 {
            return Err(ConfigError::invalid("landscape.resolution", "must be at least 2"));
        }
        let a = &self.analysis;
        if !(a.alpha > 0.0 && a.alpha < 1.0) {
            return Err(ConfigError::invalid("analysis.alpha", "must be in (0, 1)"));
        }
        if a.som.width == 0 || a.som.height == 0 {
            return Err(ConfigError::invalid("analysis.som", "grid dimensions must be positive"));
        }
        if let ModelConfig::Unimodal { map: Some(m), .. } = &self.model {
            let sum: f64 = m.optimum.iter().sum();
            if m.optimum.iter().any(|v| !(0.0..=1.0).contains(v)) || (sum - 1.0).abs() > 1e-9 {
                return Err(ConfigError::invalid("model.map.optimum", "must be proportions summing to 1"));
            }
            if !(m.width > 0.0) || !(m.peak_speed >= 0.0) || !(m.floor >= 0.0) || !(m.turn_noise >= 0.0) {
                return Err(ConfigError::invalid("model.map", "width must be positive and speeds non-negative"));
            }
        }
        Ok(())
    }

    pub fn behavior_model(&self) -> BehaviorModel {
        self.model.resolve(self.ga.rng_seed)
    }

    pub fn closed_loop(&self) -> ClosedLoop {
        ClosedLoop {
            arena: self.arena.clone(),
            model: self.behavior_model(),
            tracking: self.tracking.clone(),
            objective: self.objective,
            replicates: self.ga.replicates_per_recipe,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = Config::from_json("{}", "c.json").unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(c.ga.population_size, 25);
        assert_eq!(c.ga.carry_overs, 15);
    }

    #[test]
    fn unknown_field_reports_path() {
        let err = Config::from_json(r#"{"ga": {"populaton_size": 3}}"#, "c.json").unwrap_err();
        match err {
            ConfigError::Parse { field, .. } => assert!(field.starts_with("ga"), "{field}"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn wrong_type_reports_path() {
        let err = Config::from_json(r#"{"arena": {"frame_rate": "fast"}}"#, "c.json").unwrap_err();
        assert!(err.to_string().contains("arena.frame_rate"), "{err}");
    }

    #[test]
    fn semantic_error_names_field() {
        let err = Config::from_json(r#"{"ga": {"carry_overs": 30}}"#, "c.json").unwrap_err();
        assert!(err.to_string().contains("ga.carry_overs"), "{err}");
    }

    #[test]
    fn unimodal_map_from_run_seed_is_stable() {
        let c = Config::from_json(r#"{"model": {"kind": "unimodal"}, "ga": {"rng_seed": 4}}"#, "c").unwrap();
        assert_eq!(c.behavior_model(), c.behavior_model());
        let d = Config::from_json(r#"{"model": {"kind": "unimodal"}, "ga": {"rng_seed": 5}}"#, "c").unwrap();
        assert_ne!(c.behavior_model(), d.behavior_model());
    }

    #[test]
    fn manifest_config_member_is_accepted() {
        let doc = r#"{"format": "dropevo-manifest", "config": {"ga": {"runs": 2}}}"#;
        assert_eq!(Config::from_json(doc, "m").unwrap().ga.runs, 2);
        let bad = r#"{"format": "dropevo-manifest", "config": {"ga": {"runs": "x"}}}"#;
        assert!(Config::from_json(bad, "m").unwrap_err().to_string().contains("config.ga.runs"));
    }
}
