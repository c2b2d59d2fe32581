//! Flat run configuration: defaults, then a JSON file, then `key=value`
//! overrides.

use std::fs;
use std::path::Path;

use mtd_core::{EmConfig, NoiseLevel, SimConfig, SupportRadius, SweepKind, SweepSpec};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Random,
    Truth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub size: usize,
    pub radius: usize,
    pub coeffs: usize,
    pub support: SupportRadius,
    pub gamma: f64,
    pub snr: f64,
    /// Explicit noise level; overrides `snr` when set. For `recover` it
    /// replaces the value stored in the measurement.
    pub sigma: Option<f64>,
    pub max_placement_attempts: usize,
    pub seed: u64,
    pub k: usize,
    pub epsilon: f64,
    pub max_iters: usize,
    pub ridge: f64,
    pub restarts: usize,
    pub gamma_init: f64,
    pub init: Init,
    pub kind: SweepKind,
    pub grid: Vec<f64>,
    pub trials: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sim = SimConfig::default();
        let em = EmConfig::default();
        RunConfig {
            size: sim.size,
            radius: 2,
            coeffs: 10,
            support: SupportRadius::default(),
            gamma: sim.gamma,
            snr: 5.0,
            sigma: None,
            max_placement_attempts: sim.max_placement_attempts,
            seed: 0,
            k: em.k,
            epsilon: em.epsilon,
            max_iters: em.max_iters,
            ridge: em.ridge,
            restarts: em.n_restarts,
            gamma_init: 0.03,
            init: Init::Random,
            kind: SweepKind::Snr,
            grid: vec![2.0, 5.0, 50.0],
            trials: 10,
        }
    }
}

impl RunConfig {
    pub fn sim(&self) -> SimConfig {
        SimConfig {
            size: self.size,
            gamma: self.gamma,
            noise: match self.sigma {
                Some(s) => NoiseLevel::Sigma(s),
                None => NoiseLevel::Snr(self.snr),
            },
            seed: self.seed,
            max_placement_attempts: self.max_placement_attempts,
        }
    }

    pub fn em(&self) -> EmConfig {
        EmConfig {
            k: self.k,
            epsilon: self.epsilon,
            max_iters: self.max_iters,
            ridge: self.ridge,
            n_restarts: self.restarts,
        }
    }

    pub fn sweep(&self) -> SweepSpec {
        SweepSpec {
            kind: self.kind,
            grid: self.grid.clone(),
            trials: self.trials,
            radius: self.radius,
            coeffs: self.coeffs,
            support: self.support,
            sim: self.sim(),
            em: self.em(),
            gamma_init: self.gamma_init,
            seed_base: self.seed,
        }
    }
}

/// Merges defaults, the optional JSON file and `key=value` overrides, in
/// that order. Override values are read as JSON when they parse, otherwise
/// as strings (`kind=size`).
pub fn parse_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
    let Value::Object(mut merged) =
        serde_json::to_value(RunConfig::default()).expect("defaults serialize")
    else {
        unreachable!("config serializes to an object")
    };

    if let Some(path) = path {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        if !text.trim().is_empty() {
            let value: Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let Value::Object(file) = value else {
                return Err(CliError::Config(format!(
                    "{}: expected a JSON object",
                    path.display()
                )));
            };
            for (key, value) in file {
                set_key(&mut merged, &key, value)?;
            }
        }
    }

    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override `{item}` is not key=value")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        set_key(&mut merged, key.trim(), value)?;
    }

    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Config(e.to_string()))
}

fn set_key(map: &mut Map<String, Value>, key: &str, value: Value) -> Result<(), CliError> {
    match map.get_mut(key) {
        Some(slot) => {
            *slot = value;
            Ok(())
        }
        None => Err(CliError::Config(format!("unknown config key `{key}`"))),
    }
}
