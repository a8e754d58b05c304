use std::time::Duration;

use serde::Serialize;
use sha2::{Digest, Sha256};
use stem_core::MarketConfig;

/// Everything needed to reproduce a run.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config: String,
    pub seed: u64,
    pub scenario_count: usize,
    pub sample_count: Option<usize>,
    /// SHA-256 of the configuration text, calibration included.
    pub calibration_hash: String,
    pub engine_version: String,
    pub duration_seconds: f64,
}

impl Manifest {
    pub fn new(
        command: &str,
        config: &str,
        cfg: &MarketConfig,
        samples: Option<usize>,
        config_text: &str,
        elapsed: Duration,
    ) -> Self {
        let digest = Sha256::digest(config_text.as_bytes());
        Self {
            command: command.to_string(),
            config: config.to_string(),
            seed: cfg.seed,
            scenario_count: cfg.scenario_count,
            sample_count: samples,
            calibration_hash: digest.iter().map(|b| format!("{b:02x}")).collect(),
            engine_version: env!("CARGO_PKG_VERSION").to_string(),
            duration_seconds: elapsed.as_secs_f64(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}
