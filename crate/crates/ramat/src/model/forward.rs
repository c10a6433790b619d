use std::collections::HashMap;

use super::params::{ModelParams, ParamGroup};
use super::{patchify, positional_table, HeadKind, ModelConfig, PatchSequence};
use crate::numerics::{Tape, Tensor, Var};
use crate::reservoir::{run_patches, ReservoirSpec, ReservoirState};
use crate::{Error, Result};

const LN_EPS: f32 = 1e-5;

/// Model parameters registered as leaves on one tape.
pub struct BoundParams {
    vars: HashMap<String, Var>,
}

impl BoundParams {
    /// Binds every parameter whose group passes the filter. Finetune graphs
    /// exclude the decoder and mask token (they are not on the loss path).
    pub fn bind(
        tape: &mut Tape,
        params: &ModelParams,
        include: impl Fn(ParamGroup) -> bool,
    ) -> Self {
        let mut vars = HashMap::new();
        for (name, group, tensor) in params.iter() {
            if include(group) {
                vars.insert(name.to_string(), tape.leaf(tensor));
            }
        }
        Self { vars }
    }

    pub fn bind_all(tape: &mut Tape, params: &ModelParams) -> Self {
        Self::bind(tape, params, |_| true)
    }

    /// Binds parameters passing the group filter; those outside `trainable`
    /// enter as constants so no gradients are recorded for them.
    pub fn bind_for_training(
        tape: &mut Tape,
        params: &ModelParams,
        include: impl Fn(ParamGroup) -> bool,
        trainable: &std::collections::BTreeSet<String>,
    ) -> Self {
        let mut vars = HashMap::new();
        for (name, group, tensor) in params.iter() {
            if include(group) {
                let var = if trainable.contains(name) {
                    tape.leaf(tensor)
                } else {
                    tape.constant(tensor.clone())
                };
                vars.insert(name.to_string(), var);
            }
        }
        Self { vars }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("parameter '{name}' not bound on this tape")))
    }

    /// Gradients of all grad-tracked bound parameters after backward,
    /// keyed by name in sorted order.
    pub fn grads(&self, tape: &Tape) -> std::collections::BTreeMap<String, Vec<f32>> {
        self.vars
            .iter()
            .filter_map(|(name, &var)| tape.grad(var).map(|g| (name.clone(), g.to_vec())))
            .collect()
    }
}

/// The patch vectors actually fed to the reservoir: true content, or with
/// masked patches zeroed when the leak-closing flag is on.
pub fn reservoir_input_patches(seq: &PatchSequence, zero_masked: bool) -> Vec<Vec<f32>> {
    seq.patches
        .iter()
        .zip(&seq.mask)
        .map(|(patch, &masked)| {
            if zero_masked && masked {
                vec![0.0; patch.len()]
            } else {
                patch.clone()
            }
        })
        .collect()
}

/// Runs the fixed reservoir over the patch sequence from a zero state and
/// stacks the P states into a [P, reservoir_size] constant.
pub fn reservoir_states(
    spec: &ReservoirSpec,
    seq: &PatchSequence,
    zero_masked: bool,
) -> Result<Tensor> {
    let inputs = reservoir_input_patches(seq, zero_masked);
    let initial = ReservoirState::zero(spec.reservoir_size);
    let states = run_patches(spec, &inputs, &initial)?;
    let mut data = Vec::with_capacity(states.len() * spec.reservoir_size);
    for s in &states {
        data.extend_from_slice(&s.h);
    }
    Tensor::new(vec![states.len(), spec.reservoir_size], data)
}

/// Projects reservoir states into token space, inserts the shared mask
/// token at masked positions, and adds the fixed sinusoidal positional
/// offset (retained on mask tokens so the decoder knows position).
pub fn embed(
    tape: &mut Tape,
    bound: &BoundParams,
    cfg: &ModelConfig,
    states: Var,
    mask: &[bool],
) -> Result<Var> {
    let p = tape.value(states).shape()[0];
    if mask.len() != p {
        return Err(Error::Shape(format!(
            "mask has {} entries for {p} patches",
            mask.len()
        )));
    }
    let w = bound.var("embed.weight")?;
    let b = bound.var("embed.bias")?;
    let proj = tape.matmul(states, w)?;
    let tokens = tape.add_bias(proj, b)?;
    let tokens = if mask.iter().any(|&m| m) {
        let mask_token = bound.var("mask_token")?;
        tape.overwrite_rows(tokens, mask, mask_token)?
    } else {
        tokens
    };
    let pos = tape.constant(Tensor::new(
        vec![p, cfg.embed_dim],
        positional_table(p, cfg.embed_dim),
    )?);
    tape.add(tokens, pos)
}

/// Pre-norm transformer encoder: x + MHSA(LN(x)) then x + FFN(LN(x)),
/// full bidirectional attention over all P tokens.
pub fn encode(tape: &mut Tape, bound: &BoundParams, cfg: &ModelConfig, tokens: Var) -> Result<Var> {
    encode_probed(tape, bound, cfg, tokens, None)
}

/// `encode` with an optional probe collecting every head's attention
/// weights (row-stochastic matrices), for tests and diagnostics.
pub fn encode_probed(
    tape: &mut Tape,
    bound: &BoundParams,
    cfg: &ModelConfig,
    tokens: Var,
    mut attn_probe: Option<&mut Vec<Tensor>>,
) -> Result<Var> {
    let d = cfg.embed_dim;
    let dh = d / cfg.num_heads;
    let mut x = tokens;
    for l in 0..cfg.num_layers {
        let name = |part: &str| format!("block{l}.{part}");
        // Attention sublayer.
        let g1 = bound.var(&name("ln1.gamma"))?;
        let b1 = bound.var(&name("ln1.beta"))?;
        let normed = tape.layer_norm(x, g1, b1, LN_EPS)?;
        let wq = bound.var(&name("attn.wq"))?;
        let wk = bound.var(&name("attn.wk"))?;
        let wv = bound.var(&name("attn.wv"))?;
        let bq = bound.var(&name("attn.bq"))?;
        let bk = bound.var(&name("attn.bk"))?;
        let bv = bound.var(&name("attn.bv"))?;
        let q0 = tape.matmul(normed, wq)?;
        let q = tape.add_bias(q0, bq)?;
        let k0 = tape.matmul(normed, wk)?;
        let k = tape.add_bias(k0, bk)?;
        let v0 = tape.matmul(normed, wv)?;
        let v = tape.add_bias(v0, bv)?;
        let mut heads = Vec::with_capacity(cfg.num_heads);
        for h in 0..cfg.num_heads {
            let qh = tape.slice_cols(q, h * dh, dh)?;
            let kh = tape.slice_cols(k, h * dh, dh)?;
            let vh = tape.slice_cols(v, h * dh, dh)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scaled = tape.scale(scores, 1.0 / (dh as f32).sqrt())?;
            let attn = tape.softmax_lastdim(scaled)?;
            if let Some(probe) = attn_probe.as_deref_mut() {
                probe.push(tape.value(attn).clone());
            }
            heads.push(tape.matmul(attn, vh)?);
        }
        let cat = tape.concat_cols(&heads)?;
        let wo = bound.var(&name("attn.wo"))?;
        let bo = bound.var(&name("attn.bo"))?;
        let proj0 = tape.matmul(cat, wo)?;
        let proj = tape.add_bias(proj0, bo)?;
        x = tape.add(x, proj)?;

        // Feed-forward sublayer.
        let g2 = bound.var(&name("ln2.gamma"))?;
        let b2 = bound.var(&name("ln2.beta"))?;
        let normed2 = tape.layer_norm(x, g2, b2, LN_EPS)?;
        let w1 = bound.var(&name("ffn.w1"))?;
        let b1f = bound.var(&name("ffn.b1"))?;
        let w2 = bound.var(&name("ffn.w2"))?;
        let b2f = bound.var(&name("ffn.b2"))?;
        let h0 = tape.matmul(normed2, w1)?;
        let h1 = tape.add_bias(h0, b1f)?;
        let act = tape.gelu(h1)?;
        let h2 = tape.matmul(act, w2)?;
        let ff = tape.add_bias(h2, b2f)?;
        x = tape.add(x, ff)?;

        if !tape.value(x).is_finite() {
            return Err(Error::Numeric(format!(
                "NaN/Inf in encoder output of layer {l}"
            )));
        }
    }
    Ok(x)
}

/// Single linear projection of the masked positions' contextual tokens back
/// to patch space: [(#masked), patch_length*K].
pub fn decode_masked(
    tape: &mut Tape,
    bound: &BoundParams,
    contextual: Var,
    mask: &[bool],
) -> Result<Var> {
    let idx: Vec<usize> = mask
        .iter()
        .enumerate()
        .filter_map(|(i, &m)| m.then_some(i))
        .collect();
    if idx.is_empty() {
        return Err(Error::Contract("decode_masked with no masked positions".into()));
    }
    let gathered = tape.gather_rows(contextual, &idx)?;
    let w = bound.var("decoder.weight")?;
    let b = bound.var("decoder.bias")?;
    let proj = tape.matmul(gathered, w)?;
    tape.add_bias(proj, b)
}

/// Mean squared error of reconstructions against the original (pre-masking)
/// masked patches, averaged over all masked elements. Visible patches
/// contribute nothing.
pub fn masked_mse(tape: &mut Tape, recon: Var, seq: &PatchSequence) -> Result<Var> {
    let idx = seq.masked_indices();
    if idx.is_empty() {
        return Err(Error::Contract("masked_mse with no masked positions".into()));
    }
    let patch_dim = seq.patches[0].len();
    if tape.value(recon).shape() != [idx.len(), patch_dim] {
        return Err(Error::Shape(format!(
            "reconstruction shape {:?}, expected [{}, {patch_dim}]",
            tape.value(recon).shape(),
            idx.len()
        )));
    }
    let mut target = Vec::with_capacity(idx.len() * patch_dim);
    for &i in &idx {
        target.extend_from_slice(&seq.patches[i]);
    }
    let t = tape.constant(Tensor::new(vec![idx.len(), patch_dim], target)?);
    let diff = tape.sub(recon, t)?;
    let sq = tape.mul(diff, diff)?;
    tape.mean_all(sq)
}

/// Full pretraining loss for one window with a given mask:
/// patchify -> reservoir -> embed -> encode -> decode -> masked MSE.
pub fn pretrain_window_loss(
    tape: &mut Tape,
    bound: &BoundParams,
    cfg: &ModelConfig,
    spec: &ReservoirSpec,
    window: &[f32],
    mask: &[bool],
) -> Result<Var> {
    let mut seq = patchify(window, cfg)?;
    if mask.len() != seq.patches.len() {
        return Err(Error::Shape(format!(
            "mask has {} entries for {} patches",
            mask.len(),
            seq.patches.len()
        )));
    }
    seq.mask = mask.to_vec();
    let states = reservoir_states(spec, &seq, cfg.zero_masked_reservoir_input)?;
    let states = tape.constant(states);
    let tokens = embed(tape, bound, cfg, states, &seq.mask)?;
    let contextual = encode(tape, bound, cfg, tokens)?;
    let recon = decode_masked(tape, bound, contextual, &seq.mask)?;
    masked_mse(tape, recon, &seq)
}

/// Fine-tuning forward pass: encode all P tokens with no masking, mean-pool
/// over patches, apply the head. Returns raw head outputs [1, head_dim].
pub fn forward_head_logits(
    tape: &mut Tape,
    bound: &BoundParams,
    cfg: &ModelConfig,
    spec: &ReservoirSpec,
    window: &[f32],
) -> Result<Var> {
    let seq = patchify(window, cfg)?;
    let states = reservoir_states(spec, &seq, false)?;
    let states = tape.constant(states);
    let no_mask = vec![false; seq.patches.len()];
    let tokens = embed(tape, bound, cfg, states, &no_mask)?;
    let contextual = encode(tape, bound, cfg, tokens)?;
    let pooled = tape.mean_rows(contextual)?;
    let w = bound.var("head.weight")?;
    let b = bound.var("head.bias")?;
    let out = tape.matmul(pooled, w)?;
    tape.add_bias(out, b)
}

/// Prediction for one window: a K-vector for regression, class
/// probabilities (softmax) for classification.
pub fn forward_head(
    tape: &mut Tape,
    bound: &BoundParams,
    cfg: &ModelConfig,
    spec: &ReservoirSpec,
    window: &[f32],
) -> Result<Var> {
    let logits = forward_head_logits(tape, bound, cfg, spec, window)?;
    match cfg.head {
        HeadKind::Regression => Ok(logits),
        HeadKind::Classification { .. } => tape.softmax_lastdim(logits),
    }
}

/// Inference-only head prediction on a throwaway tape with constant
/// parameters; returns the head output values for one standardized window.
pub fn infer_head(
    params: &ModelParams,
    cfg: &ModelConfig,
    spec: &ReservoirSpec,
    window: &[f32],
) -> Result<Vec<f32>> {
    let mut tape = Tape::new();
    let empty = std::collections::BTreeSet::new();
    let bound = BoundParams::bind_for_training(
        &mut tape,
        params,
        |g| !matches!(g, ParamGroup::Decoder | ParamGroup::MaskToken),
        &empty,
    );
    let pred = forward_head(&mut tape, &bound, cfg, spec, window)?;
    Ok(tape.value(pred).data().to_vec())
}
