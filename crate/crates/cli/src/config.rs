//! Resolved run configuration: one JSON file with optional blocks, all
//! fields defaulted.

use std::path::Path;

use serde::{Deserialize, Serialize};

use koopman_core::dataset::CollectConfig;
use koopman_core::nmpc::NmpcConfig;
use koopman_core::sim::{Figure8Config, SimConfig};
use koopman_core::trainer::TrainConfig;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub vehicle: SimConfig,
    pub collect: CollectConfig,
    pub train: TrainConfig,
    pub nmpc: NmpcConfig,
    pub trajectory: Figure8Config,
}

impl AppConfig {
    /// Loads a config file; a missing path argument yields the defaults.
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let cfg: AppConfig = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", p.display()))?;
                serde_json::from_str(&text)
                    .map_err(|e| anyhow::anyhow!("config {}: {e}", p.display()))?
            }
            None => AppConfig::default(),
        };
        cfg.vehicle.validate()?;
        cfg.collect.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }
}
