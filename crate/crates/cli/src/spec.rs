//! Experiment files: a set of arms sharing data and seeds.
//!
//! ```json
//! {
//!   "output_dir": "runs/demo",
//!   "shared": { "rounds": 60, "eta": 0.05, "seed": 1 },
//!   "arms": [
//!     { "name": "lm-16", "quantizer": "lloyd_max", "s": 16 },
//!     { "name": "qsgd-256", "quantizer": "qsgd", "s": 256 }
//!   ]
//! }
//! ```
//!
//! Every arm is the `shared` object with the arm's own keys laid on top. Keys
//! that define the data (`data`, `seed`, `n_nodes`, `label_fraction`) may only
//! appear in `shared`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use lmdfl_core::engine::RunConfig;
use lmdfl_core::quantizers::QuantizerRegistry;
use serde::Deserialize;
use serde_json::{Map, Value};

use crate::{CliError, Result};

pub const DEFAULT_OUTPUT_DIR: &str = "lmdfl-out";
pub const DEFAULT_TARGET_FACTOR: f64 = 1.1;
/// Environment variable that overrides the output directory of a spec.
pub const OUTPUT_DIR_ENV: &str = "LMDFL_OUTPUT_DIR";

const SHARED_ONLY: [&str; 4] = ["data", "seed", "n_nodes", "label_fraction"];

#[derive(Debug, Clone, PartialEq)]
pub struct Arm {
    pub name: String,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub arms: Vec<Arm>,
    pub output_dir: PathBuf,
    /// Bits-to-target uses `target_factor × best final loss` across arms.
    pub target_factor: f64,
}

impl ExperimentSpec {
    /// Output directory after applying [`OUTPUT_DIR_ENV`] if it is set.
    pub fn resolved_output_dir(&self, env_override: Option<PathBuf>) -> PathBuf {
        env_override.filter(|p| !p.as_os_str().is_empty()).unwrap_or_else(|| self.output_dir.clone())
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    #[serde(default)]
    output_dir: Option<PathBuf>,
    #[serde(default)]
    target_factor: Option<f64>,
    #[serde(default)]
    shared: Map<String, Value>,
    arms: Vec<Map<String, Value>>,
}

pub fn parse_config(path: &Path) -> Result<ExperimentSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse_config_str(&text)
}

fn config_error(context: &str, err: serde_path_to_error::Error<serde_json::Error>) -> CliError {
    let path = err.path().to_string();
    let inner = err.into_inner();
    if path.is_empty() || path == "." {
        CliError::Config(format!("{context}: {inner}"))
    } else {
        CliError::Config(format!("{context}: `{path}`: {inner}"))
    }
}

fn from_value<T: serde::de::DeserializeOwned>(context: &str, value: Value) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(|e| config_error(context, e))
}

pub fn parse_config_str(text: &str) -> Result<ExperimentSpec> {
    let value: Value = serde_json::from_str(text).map_err(|e| CliError::Config(format!("not valid JSON: {e}")))?;
    let raw: RawSpec = from_value("experiment", value)?;
    if raw.arms.is_empty() {
        return Err(CliError::Config("experiment: `arms` must list at least one arm".into()));
    }
    let target_factor = raw.target_factor.unwrap_or(DEFAULT_TARGET_FACTOR);
    if !(target_factor >= 1.0 && target_factor.is_finite()) {
        return Err(CliError::Config(format!("experiment: `target_factor` must be a finite number ≥ 1, got {target_factor}")));
    }
    // surface mistakes in `shared` once, under its own name
    let _: RunConfig = from_value("shared", Value::Object(raw.shared.clone()))?;

    let registry = QuantizerRegistry::default();
    let mut names = BTreeSet::new();
    let mut arms = Vec::with_capacity(raw.arms.len());
    for (i, mut arm) in raw.arms.into_iter().enumerate() {
        let name = match arm.remove("name") {
            Some(Value::String(s)) => s,
            Some(other) => return Err(CliError::Config(format!("arms[{i}]: `name` must be a string, got {other}"))),
            None => return Err(CliError::Config(format!("arms[{i}]: missing `name`"))),
        };
        let context = format!("arm `{name}`");
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
            return Err(CliError::Config(format!("{context}: `name` may only use letters, digits, `-`, `_` and `.`")));
        }
        if !names.insert(name.clone()) {
            return Err(CliError::Config(format!("{context}: duplicate arm name")));
        }
        if let Some(key) = SHARED_ONLY.iter().find(|k| arm.contains_key(**k)) {
            return Err(CliError::Config(format!("{context}: `{key}` is shared by all arms; set it under `shared`")));
        }
        let mut merged = raw.shared.clone();
        merged.extend(arm);
        let config: RunConfig = from_value(&context, Value::Object(merged))?;
        validate_arm(&context, &config, &registry)?;
        arms.push(Arm { name, config });
    }
    Ok(ExperimentSpec {
        arms,
        output_dir: raw.output_dir.unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR)),
        target_factor,
    })
}

fn validate_arm(context: &str, config: &RunConfig, registry: &QuantizerRegistry) -> Result<()> {
    if let Some(eta) = config.eta {
        if !(eta > 0.0) {
            return Err(CliError::Config(format!("{context}: eta > 0, got {eta}")));
        }
    }
    config.validate(registry).map_err(|e| match e {
        lmdfl_core::Error::Config(msg) => CliError::Config(format!("{context}: {msg}")),
        other => CliError::Config(format!("{context}: {other}")),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let spec = parse_config_str(r#"{"arms": [{"name": "a"}]}"#).unwrap();
        let c = &spec.arms[0].config;
        assert_eq!(c.tau, 4);
        assert_eq!(c.base_eta(), 0.001);
        assert_eq!(spec.output_dir, PathBuf::from(DEFAULT_OUTPUT_DIR));
        assert_eq!(spec.target_factor, 1.1);
    }

    #[test]
    fn arms_override_shared_keys() {
        let spec = parse_config_str(
            r#"{"shared": {"rounds": 7, "s": 8}, "arms": [{"name": "a"}, {"name": "b", "s": 32, "quantizer": "qsgd"}]}"#,
        )
        .unwrap();
        assert_eq!(spec.arms[0].config.s, 8);
        assert_eq!(spec.arms[1].config.s, 32);
        assert_eq!(spec.arms[1].config.quantizer, "qsgd");
        assert!(spec.arms.iter().all(|a| a.config.rounds == 7));
    }

    #[test]
    fn typo_is_named() {
        let err = parse_config_str(r#"{"arms": [{"name": "a", "learnig_rate": 0.1}]}"#).unwrap_err();
        assert!(err.to_string().contains("learnig_rate"), "{err}");
        let err = parse_config_str(r#"{"shared": {"tua": 2}, "arms": [{"name": "a"}]}"#).unwrap_err();
        assert!(err.to_string().contains("shared") && err.to_string().contains("tua"), "{err}");
        let err = parse_config_str(r#"{"arm": []}"#).unwrap_err();
        assert!(err.to_string().contains("arm"), "{err}");
    }

    #[test]
    fn type_errors_name_the_key() {
        let err = parse_config_str(r#"{"arms": [{"name": "a", "rounds": "ten"}]}"#).unwrap_err();
        assert!(err.to_string().contains("`rounds`"), "{err}");
        let err = parse_config_str(r#"{"arms": [{"name": "a", "topology": {"kind": "ring", "self_wieght": 0.2}}]}"#)
            .unwrap_err();
        assert!(err.to_string().contains("self_wieght"), "{err}");
    }

    #[test]
    fn constraint_violations() {
        let err = parse_config_str(r#"{"arms": [{"name": "a", "tau": 0}]}"#).unwrap_err();
        assert!(err.to_string().contains("tau ≥ 1"), "{err}");
        let err = parse_config_str(r#"{"arms": [{"name": "a", "eta": 0}]}"#).unwrap_err();
        assert!(err.to_string().contains("eta > 0"), "{err}");
        let err = parse_config_str(r#"{"arms": [{"name": "a", "quantizer": "nope"}]}"#).unwrap_err();
        assert!(err.to_string().contains("nope"), "{err}");
        let err = parse_config_str(r#"{"arms": [{"name": "a", "seed": 3}]}"#).unwrap_err();
        assert!(err.to_string().contains("`seed`"), "{err}");
        let err = parse_config_str(r#"{"arms": [{"name": "a"}, {"name": "a"}]}"#).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
        assert!(parse_config_str(r#"{"arms": []}"#).is_err());
        assert!(parse_config_str(r#"{"arms": [{"name": "../x"}]}"#).is_err());
    }

    #[test]
    fn idx_data_defaults_to_faster_rate() {
        let spec = parse_config_str(
            r#"{"shared": {"data": {"kind": "idx", "images": "i", "labels": "l"}}, "arms": [{"name": "a"}]}"#,
        )
        .unwrap();
        assert_eq!(spec.arms[0].config.base_eta(), 0.002);
    }

    #[test]
    fn env_override_wins() {
        let spec = parse_config_str(r#"{"output_dir": "x", "arms": [{"name": "a"}]}"#).unwrap();
        assert_eq!(spec.resolved_output_dir(None), PathBuf::from("x"));
        assert_eq!(spec.resolved_output_dir(Some("y".into())), PathBuf::from("y"));
        assert_eq!(spec.resolved_output_dir(Some("".into())), PathBuf::from("x"));
    }
}
