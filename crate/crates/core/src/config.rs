//! Run configuration: a TOML file plus dotted `key=value` overrides.
//!
//! ```toml
//! [trainer]
//! seed = 0
//! lr = 1e-3
//!
//! [env]
//! n_robots = 3
//! spawn = { kind = "rectangle", width = 3.0, height = 3.0 }
//!
//! [transfer.formation]
//! kind = "line"
//! n_robots = 21
//! offset = [0.0, 20.0]
//! ```
//!
//! Every table and key is optional; missing keys take their defaults and
//! unknown keys are rejected. An override `trainer.lr=5e-4` sets one key; its
//! value is read as a TOML literal, falling back to a bare string.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::policy::{GcnConfig, MlpConfig};
use crate::trainer::{TrainConfig, TrainerConfig};
use crate::transfer::{FormationKind, FormationSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferConfig {
    pub formation: FormationSpec,
    /// Steps per deployment episode; far goals need more than training used.
    pub horizon: usize,
    pub episodes: usize,
    /// Sample actions instead of using the mean.
    pub stochastic: bool,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            formation: FormationSpec::default(),
            horizon: 200,
            episodes: 1,
            stochastic: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub seeds: Vec<u64>,
    /// Threshold on the smoothed mean return, per robot per step.
    pub threshold_per_robot_step: f64,
    /// Moving-average window over updates.
    pub window: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            threshold_per_robot_step: -0.4,
            window: 10,
        }
    }
}

impl AblationConfig {
    pub fn threshold(&self, env: &EnvConfig) -> f64 {
        self.threshold_per_robot_step * (env.n_robots * env.horizon) as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub formations: Vec<FormationSpec>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            formations: [3, 11, 21, 51]
                .into_iter()
                .map(|n| FormationSpec {
                    kind: FormationKind::Line,
                    n_robots: n,
                    ..FormationSpec::default()
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub trainer: TrainerConfig,
    pub env: EnvConfig,
    pub policy: GcnConfig,
    pub baseline: MlpConfig,
    pub transfer: TransferConfig,
    pub ablation: AblationConfig,
    pub sweep: SweepConfig,
}

impl RunConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            trainer: self.trainer.clone(),
            env: self.env.clone(),
            policy: self.policy.clone(),
            baseline: self.baseline.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        if self.transfer.horizon == 0 {
            return Err(Error::InvalidConfig("transfer.horizon must be at least 1".into()));
        }
        if self.ablation.seeds.is_empty() || self.ablation.window == 0 {
            return Err(Error::InvalidConfig("ablation needs at least one seed and a positive window".into()));
        }
        Ok(())
    }

    /// Parses TOML text, applies overrides and validates.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        // round-trip through text so diagnostics point at a line and field
        let merged = toml::to_string(&table).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let cfg: RunConfig = toml::from_str(&merged).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::InvalidConfig(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Sets `a.b.c=value` inside `table`, creating intermediate tables.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("override `{spec}` is not of the form key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::InvalidConfig(format!("override `{spec}` has an empty key segment")));
    }
    let mut cur = table;
    for seg in &path[..path.len() - 1] {
        let entry = cur
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::InvalidConfig(format!("override `{spec}`: `{seg}` is not a table")))?;
    }
    cur.insert(path[path.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}
