//! Experiment configuration files.

use std::path::PathBuf;

use obslab_core::classical::KfrakOptions;
use obslab_core::potential::PotentialSpec;
use obslab_core::sets::ObservationSet;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{config_err, CliError, CliResult};

/// Harmonic quantum experiment.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantumConfig {
    pub nu: Vec<f64>,
    pub n: usize,
    pub band: (f64, f64),
    pub horizon: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    pub report: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub potential: Option<PotentialSpec>,
    pub set: Option<ObservationSet>,
    pub horizon: Option<f64>,
    pub shells: Option<Vec<f64>>,
    #[serde(default)]
    pub kfrak: KfrakOptions,
    pub quantum: Option<QuantumConfig>,
    #[serde(default, skip_serializing)]
    pub output: Option<OutputPaths>,
}

impl ExperimentConfig {
    pub fn require_potential(&self) -> CliResult<&PotentialSpec> {
        let Some(p) = &self.potential else {
            return config_err("config needs a potential");
        };
        p.validate()?;
        Ok(p)
    }

    pub fn require_set(&self) -> CliResult<&ObservationSet> {
        let Some(s) = &self.set else {
            return config_err("config needs a set");
        };
        s.validate()?;
        Ok(s)
    }

    pub fn require_horizon(&self) -> CliResult<f64> {
        match self.horizon {
            Some(t) if t > 0.0 && t.is_finite() => Ok(t),
            _ => config_err("config needs a positive horizon"),
        }
    }
}

/// Parses JSON given inline (leading `{` or `[`) or as a file path.
pub fn load_json<T: DeserializeOwned>(arg: &str) -> CliResult<T> {
    let trimmed = arg.trim_start();
    let text = if trimmed.starts_with('{') || trimmed.starts_with('[') {
        arg.to_string()
    } else {
        std::fs::read_to_string(arg).map_err(|e| CliError::Config(format!("{arg}: {e}")))?
    };
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{arg}: {e}")))
}

/// Comma separated floats.
pub fn parse_floats(s: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Config(format!("cannot read {v:?} as a number")))
        })
        .collect()
}

/// Hex SHA-256 of the compact JSON form of the inputs.
pub fn hash(inputs: &serde_json::Value) -> String {
    let digest = Sha256::digest(inputs.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(load_json::<ExperimentConfig>(r#"{"horizon": 1.0, "bogus": 2}"#).is_err());
        let c: ExperimentConfig = load_json(r#"{"horizon": 1.0}"#).unwrap();
        assert_eq!(c.horizon, Some(1.0));
    }

    #[test]
    fn floats() {
        assert_eq!(parse_floats("1, 0,-2.5").unwrap(), vec![1.0, 0.0, -2.5]);
        assert!(parse_floats("1,x").is_err());
    }

    #[test]
    fn hash_is_hex_sha256() {
        let h = hash(&serde_json::json!({}));
        assert_eq!(
            h,
            "44136fa355b3678a1146ad16f7e8649e94fb4fc21fe77e8310c060f61caaff8a"
        );
    }
}
