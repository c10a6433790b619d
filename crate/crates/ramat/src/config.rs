//! Run configuration: strict JSON with every default materialized, echoed
//! by each command so runs are reproducible from their own output.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::ModelConfig;
use crate::reservoir::ReservoirConfig;
use crate::train::TrainConfig;
use crate::{Error, Result};

/// Preprocessing parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Moving-average window, milliseconds.
    pub window_ms: i64,
    /// Moving-average step, milliseconds.
    pub step_ms: i64,
    /// Sequence length for supervised pairs; must equal the model's
    /// window_length when fine-tuning.
    pub n_seq: usize,
    /// Expected spacing of aligned rows, milliseconds.
    pub t_step_ms: i64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            window_ms: 20,
            step_ms: 20,
            n_seq: 64,
            t_step_ms: 20,
        }
    }
}

/// Full run configuration. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub reservoir: ReservoirConfig,
    pub train: TrainConfig,
}

pub const SEED_ENV: &str = "RAMAT_SEED";

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.data.window_ms <= 0 || self.data.step_ms <= 0 || self.data.t_step_ms <= 0 {
            return Err(Error::Config(
                "data.window_ms, data.step_ms, data.t_step_ms must be positive".into(),
            ));
        }
        if self.data.n_seq == 0 {
            return Err(Error::Config("data.n_seq must be positive".into()));
        }
        Ok(())
    }

    /// Loads a config with seed precedence flag > RAMAT_SEED env > file.
    pub fn load(path: Option<&Path>, flag_seed: Option<u64>) -> Result<Self> {
        let mut cfg: RunConfig = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        if let Ok(env_seed) = std::env::var(SEED_ENV) {
            cfg.seed = env_seed
                .trim()
                .parse()
                .map_err(|e| Error::Config(format!("bad {SEED_ENV} value '{env_seed}': {e}")))?;
        }
        if let Some(seed) = flag_seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// The fully materialized config as pretty JSON.
    pub fn effective_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
