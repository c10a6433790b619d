//! The model: patchify -> mask selection -> reservoir embedding -> linear
//! projection with positional offset -> mask-token insertion -> transformer
//! encoder -> single-linear masked-patch decoder, plus the fine-tuning
//! heads (mean pooling into a linear or softmax head).

mod forward;
mod params;

pub use forward::{
    decode_masked, embed, encode, encode_probed, forward_head, forward_head_logits, masked_mse,
    pretrain_window_loss, reservoir_input_patches, reservoir_states, BoundParams,
};
pub use params::{ModelParams, ParamGroup};

use serde::{Deserialize, Serialize};

use crate::rng::SeededRng;
use crate::{Error, Result};

/// Output head attached after mean pooling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// One value per channel (one-step forecast).
    Regression,
    /// Class probabilities over `classes`.
    Classification { classes: usize },
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub window_length: usize,
    pub patch_length: usize,
    pub k_channels: usize,
    pub mask_ratio: f32,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub head: HeadKind,
    /// When set, masked patches are zeroed before entering the reservoir,
    /// closing the leak where masked content reaches later reservoir
    /// states. Off reproduces the literal pipeline order.
    pub zero_masked_reservoir_input: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            window_length: 64,
            patch_length: 8,
            k_channels: 3,
            mask_ratio: 0.3,
            embed_dim: 64,
            num_layers: 2,
            num_heads: 4,
            ffn_dim: 128,
            head: HeadKind::Regression,
            zero_masked_reservoir_input: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_length == 0 || self.window_length == 0 {
            return Err(Error::Config("window/patch lengths must be positive".into()));
        }
        if self.window_length % self.patch_length != 0 {
            return Err(Error::Config(format!(
                "window_length {} not divisible by patch_length {}",
                self.window_length, self.patch_length
            )));
        }
        if self.num_patches() < 2 {
            return Err(Error::Config(format!(
                "need at least 2 patches per window, got {}",
                self.num_patches()
            )));
        }
        if self.k_channels == 0 {
            return Err(Error::Config("k_channels must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return Err(Error::Config(format!(
                "mask_ratio {} outside [0, 1)",
                self.mask_ratio
            )));
        }
        if self.num_heads == 0 || self.embed_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        if self.ffn_dim == 0 {
            return Err(Error::Config("ffn_dim must be positive".into()));
        }
        if let HeadKind::Classification { classes } = self.head {
            if classes < 2 {
                return Err(Error::Config("classification needs >= 2 classes".into()));
            }
        }
        Ok(())
    }

    /// P = window_length / patch_length.
    pub fn num_patches(&self) -> usize {
        self.window_length / self.patch_length
    }

    /// Flattened patch dimension, also the reservoir input width.
    pub fn patch_dim(&self) -> usize {
        self.patch_length * self.k_channels
    }

    pub fn head_dim(&self) -> usize {
        match self.head {
            HeadKind::Regression => self.k_channels,
            HeadKind::Classification { classes } => classes,
        }
    }
}

/// A window split into P flattened patches, plus the mask selection.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSequence {
    /// P vectors of length patch_length * K, temporal order, each patch
    /// flattened time-major (timestep rows concatenated).
    pub patches: Vec<Vec<f32>>,
    pub mask: Vec<bool>,
}

impl PatchSequence {
    pub fn masked_indices(&self) -> Vec<usize> {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect()
    }

    pub fn num_masked(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Splits a [window_length, K] row-major window into P contiguous
/// non-overlapping flattened patches. The mask comes back unset.
pub fn patchify(window: &[f32], cfg: &ModelConfig) -> Result<PatchSequence> {
    let expect = cfg.window_length * cfg.k_channels;
    if window.len() != expect {
        return Err(Error::Shape(format!(
            "window has {} values, config implies {expect}",
            window.len()
        )));
    }
    let p = cfg.num_patches();
    let patch_dim = cfg.patch_dim();
    let patches = (0..p)
        .map(|i| window[i * patch_dim..(i + 1) * patch_dim].to_vec())
        .collect();
    Ok(PatchSequence {
        patches,
        mask: vec![false; p],
    })
}

/// Inverse of [`patchify`]: concatenates patches back into the window.
pub fn unpatchify(seq: &PatchSequence) -> Vec<f32> {
    seq.patches.iter().flatten().copied().collect()
}

/// I.i.d. Bernoulli(mask_ratio) mask over P patches. A draw with zero
/// masked patches gets one forced masked; zero visible gets one forced
/// visible, both uniformly chosen.
pub fn sample_mask(p: usize, mask_ratio: f32, rng: &mut SeededRng) -> Result<Vec<bool>> {
    if p < 2 {
        return Err(Error::Contract(format!("sample_mask needs P >= 2, got {p}")));
    }
    if !(0.0..1.0).contains(&mask_ratio) {
        return Err(Error::Config(format!("mask_ratio {mask_ratio} outside [0, 1)")));
    }
    let mut mask: Vec<bool> = (0..p).map(|_| rng.uniform() < mask_ratio).collect();
    let masked = mask.iter().filter(|&&m| m).count();
    if masked == 0 {
        mask[rng.index(p)] = true;
    } else if masked == p {
        mask[rng.index(p)] = false;
    }
    Ok(mask)
}

/// Fixed sinusoidal positional table, [P, embed_dim] row-major:
/// even columns sin(pos / 10000^(col/d)), odd columns the matching cos.
pub fn positional_table(p: usize, d: usize) -> Vec<f32> {
    let mut table = vec![0.0f32; p * d];
    for pos in 0..p {
        for j in 0..d {
            let pair = (j / 2) as f64;
            let rate = (pos as f64) / 10000f64.powf(2.0 * pair / d as f64);
            table[pos * d + j] = if j % 2 == 0 { rate.sin() } else { rate.cos() } as f32;
        }
    }
    table
}
