use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::model::{ModelParams, ParamGroup};
use crate::{Error, Result};

/// Which parts of the encoder train during fine-tuning. The reservoir is
/// always frozen (it is not a parameter at all); the decoder and mask token
/// are off the fine-tuning loss path and stay frozen in every mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreezeMode {
    /// Only the task head trains.
    HeadOnly,
    /// The head plus the top k encoder blocks train.
    TopKBlocks { k: usize },
    /// Head, all encoder blocks, and the embed projection train.
    Full,
}

impl Default for FreezeMode {
    fn default() -> Self {
        FreezeMode::HeadOnly
    }
}

/// Resolved parameter-name sets for a freeze mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreezePlan {
    pub mode: FreezeMode,
    pub frozen: BTreeSet<String>,
    pub trainable: BTreeSet<String>,
}

impl FreezePlan {
    pub fn build(mode: FreezeMode, params: &ModelParams, num_layers: usize) -> Result<Self> {
        if let FreezeMode::TopKBlocks { k } = mode {
            if k == 0 {
                return Err(Error::Config(
                    "top_k_blocks with k=0 is head_only; use head_only".into(),
                ));
            }
        }
        let trains = |group: ParamGroup| -> bool {
            match (mode, group) {
                (_, ParamGroup::Head) => true,
                (_, ParamGroup::Decoder) | (_, ParamGroup::MaskToken) => false,
                (FreezeMode::HeadOnly, _) => false,
                (FreezeMode::TopKBlocks { k }, ParamGroup::Block(l)) => {
                    l + k >= num_layers
                }
                (FreezeMode::TopKBlocks { .. }, ParamGroup::Embed) => false,
                (FreezeMode::Full, ParamGroup::Block(_) | ParamGroup::Embed) => true,
            }
        };
        let mut frozen = BTreeSet::new();
        let mut trainable = BTreeSet::new();
        for (name, group, _) in params.iter() {
            if trains(group) {
                trainable.insert(name.to_string());
            } else {
                frozen.insert(name.to_string());
            }
        }
        Ok(Self {
            mode,
            frozen,
            trainable,
        })
    }
}

/// Layer-wise learning-rate multipliers with decay gamma: head 1.0, block l
/// (0 = bottom) gamma^(L-l), embed projection gamma^(L+1).
pub fn layerwise_multipliers(
    params: &ModelParams,
    gamma: f64,
    num_layers: usize,
) -> Result<BTreeMap<String, f64>> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Config(format!("layerwise decay {gamma} outside (0, 1]")));
    }
    let mut map = BTreeMap::new();
    for (name, group, _) in params.iter() {
        let mult = match group {
            ParamGroup::Head | ParamGroup::Decoder => 1.0,
            ParamGroup::Block(l) => gamma.powi((num_layers - l) as i32),
            ParamGroup::Embed | ParamGroup::MaskToken => gamma.powi(num_layers as i32 + 1),
        };
        map.insert(name.to_string(), mult);
    }
    Ok(map)
}
