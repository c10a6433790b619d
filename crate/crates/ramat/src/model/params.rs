use std::collections::HashMap;

use super::ModelConfig;
use crate::numerics::Tensor;
use crate::rng::{stream, SeededRng};
use crate::{Error, Result};

/// Which part of the network a parameter belongs to; drives freeze plans
/// and layer-wise learning rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Embed,
    MaskToken,
    Block(usize),
    Decoder,
    Head,
}

/// All trainable parameters, addressable by stable unique names in a fixed
/// creation order. The reservoir is not here: it never trains.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    entries: Vec<(String, ParamGroup, Tensor)>,
    index: HashMap<String, usize>,
}

impl ModelParams {
    /// Seeded initialization: Xavier-uniform weight matrices, zero biases,
    /// unit layer-norm gains, small-uniform mask token.
    pub fn init(cfg: &ModelConfig, reservoir_size: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = SeededRng::new(seed, stream::PARAM_INIT);
        let d = cfg.embed_dim;
        let patch_dim = cfg.patch_dim();
        let mut p = ModelParams {
            entries: Vec::new(),
            index: HashMap::new(),
        };

        p.push("embed.weight", ParamGroup::Embed, xavier(&mut rng, reservoir_size, d)?);
        p.push("embed.bias", ParamGroup::Embed, zeros(vec![d]));
        p.push(
            "mask_token",
            ParamGroup::MaskToken,
            Tensor::from_fn(vec![d], |_| rng.uniform_symmetric(0.02))?,
        );
        for l in 0..cfg.num_layers {
            let g = ParamGroup::Block(l);
            p.push(&format!("block{l}.ln1.gamma"), g, ones(vec![d]));
            p.push(&format!("block{l}.ln1.beta"), g, zeros(vec![d]));
            for part in ["wq", "wk", "wv", "wo"] {
                p.push(&format!("block{l}.attn.{part}"), g, xavier(&mut rng, d, d)?);
            }
            for part in ["bq", "bk", "bv", "bo"] {
                p.push(&format!("block{l}.attn.{part}"), g, zeros(vec![d]));
            }
            p.push(&format!("block{l}.ln2.gamma"), g, ones(vec![d]));
            p.push(&format!("block{l}.ln2.beta"), g, zeros(vec![d]));
            p.push(&format!("block{l}.ffn.w1"), g, xavier(&mut rng, d, cfg.ffn_dim)?);
            p.push(&format!("block{l}.ffn.b1"), g, zeros(vec![cfg.ffn_dim]));
            p.push(&format!("block{l}.ffn.w2"), g, xavier(&mut rng, cfg.ffn_dim, d)?);
            p.push(&format!("block{l}.ffn.b2"), g, zeros(vec![d]));
        }
        p.push("decoder.weight", ParamGroup::Decoder, xavier(&mut rng, d, patch_dim)?);
        p.push("decoder.bias", ParamGroup::Decoder, zeros(vec![patch_dim]));
        p.push("head.weight", ParamGroup::Head, xavier(&mut rng, d, cfg.head_dim())?);
        p.push("head.bias", ParamGroup::Head, zeros(vec![cfg.head_dim()]));
        Ok(p)
    }

    fn push(&mut self, name: &str, group: ParamGroup, tensor: Tensor) {
        debug_assert!(!self.index.contains_key(name), "duplicate param {name}");
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push((name.to_string(), group, tensor.trainable()));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Parameters in stable creation order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, ParamGroup, &Tensor)> {
        self.entries.iter().map(|(n, g, t)| (n.as_str(), *g, t))
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|(n, _, _)| n.clone()).collect()
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i].2)
            .ok_or_else(|| Error::Contract(format!("unknown parameter '{name}'")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.entries[i].2),
            None => Err(Error::Contract(format!("unknown parameter '{name}'"))),
        }
    }

    pub fn group(&self, name: &str) -> Result<ParamGroup> {
        self.index
            .get(name)
            .map(|&i| self.entries[i].1)
            .ok_or_else(|| Error::Contract(format!("unknown parameter '{name}'")))
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, _, t)| t.numel()).sum()
    }
}

fn zeros(shape: Vec<usize>) -> Tensor {
    Tensor::zeros(shape)
}

fn ones(shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, vec![1.0; n]).expect("ones tensor")
}

fn xavier(rng: &mut SeededRng, fan_in: usize, fan_out: usize) -> Result<Tensor> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
    Tensor::from_fn(vec![fan_in, fan_out], |_| rng.uniform_symmetric(limit))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            window_length: 8,
            patch_length: 4,
            k_channels: 2,
            embed_dim: 8,
            num_layers: 2,
            num_heads: 2,
            ffn_dim: 16,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn names_are_unique_and_stable() {
        let p = ModelParams::init(&cfg(), 16, 1).unwrap();
        let names = p.names();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        let q = ModelParams::init(&cfg(), 16, 2).unwrap();
        assert_eq!(names, q.names());
    }

    #[test]
    fn deterministic_init() {
        let a = ModelParams::init(&cfg(), 16, 7).unwrap();
        let b = ModelParams::init(&cfg(), 16, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mask_token_is_trainable() {
        let p = ModelParams::init(&cfg(), 16, 1).unwrap();
        assert!(p.get("mask_token").unwrap().requires_grad());
        assert_eq!(p.group("mask_token").unwrap(), ParamGroup::MaskToken);
    }

    #[test]
    fn shapes_match_architecture() {
        let p = ModelParams::init(&cfg(), 16, 1).unwrap();
        assert_eq!(p.get("embed.weight").unwrap().shape(), &[16, 8]);
        assert_eq!(p.get("decoder.weight").unwrap().shape(), &[8, 8]);
        assert_eq!(p.get("block1.ffn.w1").unwrap().shape(), &[8, 16]);
        assert_eq!(p.get("head.weight").unwrap().shape(), &[8, 2]);
    }

    #[test]
    fn unknown_name_is_contract_error() {
        let p = ModelParams::init(&cfg(), 16, 1).unwrap();
        assert!(matches!(p.get("nope"), Err(Error::Contract(_))));
    }
}
