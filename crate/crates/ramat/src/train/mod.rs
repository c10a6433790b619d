//! Two-stage training: masked-reconstruction pretraining (AdamW, global
//! gradient clipping, warmup+cosine schedule) and supervised fine-tuning
//! (freeze modes, layer-wise learning rates, early stopping).

mod freeze;
mod optim;
mod schedule;

pub use freeze::{layerwise_multipliers, FreezeMode, FreezePlan};
pub use optim::{adamw_step, clip_grad_norm, AdamHyper, Grads, OptimState};
pub use schedule::{cosine_lr, LrSchedule};

use serde::{Deserialize, Serialize};

use crate::model::{
    forward_head_logits, pretrain_window_loss, sample_mask, BoundParams, HeadKind, ModelConfig,
    ModelParams, ParamGroup,
};
use crate::numerics::{Tape, Tensor, Var};
use crate::pipeline::SequenceDataset;
use crate::reservoir::ReservoirSpec;
use crate::rng::{stream, RngState, SeededRng};
use crate::{Error, Result};

/// Optimization hyperparameters shared by both stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_peak: f64,
    pub lr_min: f64,
    pub warmup_steps: u64,
    /// Caps pretraining and keys the cosine schedule; derived from
    /// epochs * batches when unset.
    pub total_steps: Option<u64>,
    pub epochs: usize,
    pub batch_size: usize,
    /// Sliding-window stride for pretraining; defaults to window_length
    /// (non-overlapping).
    pub stride: Option<usize>,
    pub adam: AdamHyper,
    pub max_grad_norm: f32,
    pub freeze: FreezeMode,
    pub layerwise_decay: f64,
    pub patience: usize,
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_peak: 1e-3,
            lr_min: 0.0,
            warmup_steps: 100,
            total_steps: None,
            epochs: 10,
            batch_size: 8,
            stride: None,
            adam: AdamHyper::default(),
            max_grad_norm: 1.0,
            freeze: FreezeMode::HeadOnly,
            layerwise_decay: 1.0,
            patience: 5,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if self.max_grad_norm <= 0.0 {
            return Err(Error::Config("max_grad_norm must be positive".into()));
        }
        if !(self.layerwise_decay > 0.0 && self.layerwise_decay <= 1.0) {
            return Err(Error::Config("layerwise_decay must lie in (0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must lie in [0, 1)".into()));
        }
        if self.stride == Some(0) {
            return Err(Error::Config("stride must be positive".into()));
        }
        Ok(())
    }
}

/// One logged metric: (step, split, metric, lr).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: u64,
    pub split: String,
    pub metric: f64,
    pub lr: f64,
}

/// Validation-driven stopping: halts exactly when the number of epochs
/// since the best metric exceeds `patience`.
#[derive(Debug, Clone)]
pub struct EarlyStop {
    pub patience: usize,
    pub best: f64,
    pub since_best: usize,
}

impl EarlyStop {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            since_best: 0,
        }
    }

    /// Feeds one epoch's validation metric; returns (improved, stop).
    pub fn observe(&mut self, metric: f64) -> (bool, bool) {
        if metric < self.best {
            self.best = metric;
            self.since_best = 0;
            (true, false)
        } else {
            self.since_best += 1;
            (false, self.since_best > self.patience)
        }
    }
}

/// Standardized pretraining corpus: contiguous segments, each a flat
/// [T_i, K] row-major block.
#[derive(Debug, Clone)]
pub struct PretrainData {
    pub k: usize,
    pub segments: Vec<Vec<f32>>,
}

impl PretrainData {
    pub fn windows(&self, window_length: usize, stride: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (si, seg) in self.segments.iter().enumerate() {
            let t = seg.len() / self.k;
            let mut off = 0;
            while off + window_length <= t {
                out.push((si, off));
                off += stride;
            }
        }
        out
    }

    fn window_slice(&self, window_length: usize, si: usize, off: usize) -> &[f32] {
        &self.segments[si][off * self.k..(off + window_length) * self.k]
    }
}

/// Everything a training stage hands back: updated parameters, optimizer
/// state, the RNG position, the metric trace, and stopping metadata.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: ModelParams,
    pub opt: OptimState,
    pub rng_state: RngState,
    pub trace: Vec<TraceRow>,
    pub steps: u64,
    pub stopped_epoch: Option<usize>,
    pub best_val: Option<f64>,
}

/// Masked-reconstruction pretraining over sliding windows: per batch
/// patchify -> mask -> reservoir -> embed -> encode -> decode -> masked MSE
/// -> backward -> clip -> AdamW, with the cosine schedule advanced per
/// optimizer step.
pub fn pretrain(
    data: &PretrainData,
    cfg: &ModelConfig,
    spec: &ReservoirSpec,
    tcfg: &TrainConfig,
    mut params: ModelParams,
    seed: u64,
) -> Result<TrainOutput> {
    cfg.validate()?;
    tcfg.validate()?;
    if data.k != cfg.k_channels {
        return Err(Error::Config(format!(
            "data has {} channels, model expects {}",
            data.k, cfg.k_channels
        )));
    }
    let stride = tcfg.stride.unwrap_or(cfg.window_length);
    let windows = data.windows(cfg.window_length, stride);
    if windows.is_empty() {
        return Err(Error::Data(
            "no pretraining windows: every segment is shorter than window_length".into(),
        ));
    }
    let steps_per_epoch = windows.len().div_ceil(tcfg.batch_size) as u64;
    let total_steps = tcfg
        .total_steps
        .unwrap_or(steps_per_epoch * tcfg.epochs as u64);
    let schedule = LrSchedule {
        warmup_steps: tcfg.warmup_steps.min(total_steps.saturating_sub(1)),
        total_steps,
        lr_peak: tcfg.lr_peak,
        lr_min: tcfg.lr_min,
    };
    schedule.validate()?;

    let trainable = params.names().into_iter().collect();
    let mut opt = OptimState::new(&params, trainable, tcfg.adam)?;
    let mut rng = SeededRng::new(seed, stream::PRETRAIN);
    let mut trace = Vec::new();
    let mut step = 0u64;

    'epochs: for _epoch in 0.. {
        if step >= total_steps {
            break;
        }
        for batch in windows.chunks(tcfg.batch_size) {
            if step >= total_steps {
                break 'epochs;
            }
            let lr = cosine_lr(step, &schedule)?;
            let mut tape = Tape::new();
            let bound = BoundParams::bind_all(&mut tape, &params);
            let mut sum: Option<Var> = None;
            for &(si, off) in batch {
                let window = data.window_slice(cfg.window_length, si, off);
                let mask = sample_mask(cfg.num_patches(), cfg.mask_ratio, &mut rng)?;
                let loss = pretrain_window_loss(&mut tape, &bound, cfg, spec, window, &mask)?;
                sum = Some(match sum {
                    Some(acc) => tape.add(acc, loss)?,
                    None => loss,
                });
            }
            let loss = tape.scale(sum.expect("non-empty batch"), 1.0 / batch.len() as f32)?;
            let loss_value = tape.value(loss).data()[0] as f64;
            if !loss_value.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite pretraining loss at step {step}"
                )));
            }
            tape.backward(loss)?;
            let mut grads = bound.grads(&tape);
            clip_grad_norm(&mut grads, tcfg.max_grad_norm)
                .map_err(|e| Error::Numeric(format!("step {step}: {e}")))?;
            adamw_step(&mut params, &grads, &mut opt, lr, None)?;
            trace.push(TraceRow {
                step,
                split: "train".into(),
                metric: loss_value,
                lr,
            });
            step += 1;
        }
    }

    Ok(TrainOutput {
        params,
        opt,
        rng_state: rng.state(),
        trace,
        steps: step,
        stopped_epoch: None,
        best_val: None,
    })
}

/// Fine-tuning targets; the head kind must match.
pub enum Targets<'a> {
    /// [M, K] one-step regression targets (standardized).
    Regression(&'a [f32]),
    /// One class index per window.
    Classification(&'a [usize]),
}

/// Supervised fine-tuning: per epoch shuffle, mini-batches through the
/// pooled head with MSE or cross-entropy, AdamW with layer-wise learning
/// rates under the freeze plan, validation on the sequence-ordered tail,
/// early stopping, best-validation parameters returned.
pub fn finetune(
    params: ModelParams,
    spec: &ReservoirSpec,
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    ds: &SequenceDataset,
    targets: &Targets,
    seed: u64,
) -> Result<TrainOutput> {
    cfg.validate()?;
    tcfg.validate()?;
    if ds.n_seq != cfg.window_length {
        return Err(Error::Config(format!(
            "dataset n_seq {} does not match model window_length {}",
            ds.n_seq, cfg.window_length
        )));
    }
    if ds.k() != cfg.k_channels {
        return Err(Error::Config(format!(
            "dataset has {} channels, model expects {}",
            ds.k(),
            cfg.k_channels
        )));
    }
    match (&cfg.head, targets) {
        (HeadKind::Regression, Targets::Regression(y)) => {
            if y.len() != ds.m * ds.k() {
                return Err(Error::Config(format!(
                    "{} regression targets for M={} windows",
                    y.len(),
                    ds.m
                )));
            }
        }
        (HeadKind::Classification { classes }, Targets::Classification(y)) => {
            if y.len() != ds.m {
                return Err(Error::Config(format!(
                    "{} class labels for M={} windows",
                    y.len(),
                    ds.m
                )));
            }
            if let Some(&bad) = y.iter().find(|&&c| c >= *classes) {
                return Err(Error::Config(format!(
                    "class label {bad} out of {classes}"
                )));
            }
        }
        _ => {
            return Err(Error::Config(
                "head kind does not match the fine-tuning loss/targets".into(),
            ))
        }
    }
    if ds.m == 0 {
        return Err(Error::Data("empty fine-tuning dataset".into()));
    }

    let plan = FreezePlan::build(tcfg.freeze, &params, cfg.num_layers)?;
    let multipliers = layerwise_multipliers(&params, tcfg.layerwise_decay, cfg.num_layers)?;
    let mut opt = OptimState::new(&params, plan.trainable.clone(), tcfg.adam)?;
    let mut params = params;

    let val_n = (ds.m as f64 * tcfg.val_fraction).floor() as usize;
    let train_n = ds.m - val_n;
    if train_n == 0 {
        return Err(Error::Data("validation split leaves no training data".into()));
    }

    let mut rng = SeededRng::new(seed, stream::FINETUNE);
    let mut trace = Vec::new();
    let mut stopper = EarlyStop::new(tcfg.patience);
    let mut best_params = params.clone();
    let mut best_val = None;
    let mut stopped_epoch = None;
    let mut step = 0u64;
    let on_path = |g: ParamGroup| !matches!(g, ParamGroup::Decoder | ParamGroup::MaskToken);

    for epoch in 0..tcfg.epochs {
        let mut order: Vec<usize> = (0..train_n).collect();
        rng.shuffle(&mut order);
        for batch in order.chunks(tcfg.batch_size) {
            let mut tape = Tape::new();
            let bound =
                BoundParams::bind_for_training(&mut tape, &params, on_path, &plan.trainable);
            let mut sum: Option<Var> = None;
            for &i in batch {
                let loss = window_loss(&mut tape, &bound, cfg, spec, ds, targets, i)?;
                sum = Some(match sum {
                    Some(acc) => tape.add(acc, loss)?,
                    None => loss,
                });
            }
            let loss = tape.scale(sum.expect("non-empty batch"), 1.0 / batch.len() as f32)?;
            let loss_value = tape.value(loss).data()[0] as f64;
            if !loss_value.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite fine-tuning loss at step {step}"
                )));
            }
            tape.backward(loss)?;
            let mut grads = bound.grads(&tape);
            grads.retain(|name, _| plan.trainable.contains(name));
            clip_grad_norm(&mut grads, tcfg.max_grad_norm)
                .map_err(|e| Error::Numeric(format!("step {step}: {e}")))?;
            adamw_step(&mut params, &grads, &mut opt, tcfg.lr_peak, Some(&multipliers))?;
            trace.push(TraceRow {
                step,
                split: "train".into(),
                metric: loss_value,
                lr: tcfg.lr_peak,
            });
            step += 1;
        }

        if val_n > 0 {
            let mut val_sum = 0.0f64;
            for i in train_n..ds.m {
                val_sum += eval_window_loss(&params, cfg, spec, ds, targets, i, on_path)?;
            }
            let val = val_sum / val_n as f64;
            trace.push(TraceRow {
                step,
                split: "val".into(),
                metric: val,
                lr: tcfg.lr_peak,
            });
            let (improved, stop) = stopper.observe(val);
            if improved {
                best_params = params.clone();
                best_val = Some(val);
            }
            if stop {
                stopped_epoch = Some(epoch);
                trace.push(TraceRow {
                    step,
                    split: "early_stop".into(),
                    metric: stopper.best,
                    lr: 0.0,
                });
                break;
            }
        } else {
            best_params = params.clone();
        }
    }

    Ok(TrainOutput {
        params: best_params,
        opt,
        rng_state: rng.state(),
        trace,
        steps: step,
        stopped_epoch,
        best_val,
    })
}

fn window_loss(
    tape: &mut Tape,
    bound: &BoundParams,
    cfg: &ModelConfig,
    spec: &ReservoirSpec,
    ds: &SequenceDataset,
    targets: &Targets,
    i: usize,
) -> Result<Var> {
    let logits = forward_head_logits(tape, bound, cfg, spec, ds.window(i))?;
    match targets {
        Targets::Regression(y) => {
            let k = ds.k();
            let t = tape.constant(Tensor::new(vec![1, k], y[i * k..(i + 1) * k].to_vec())?);
            let diff = tape.sub(logits, t)?;
            let sq = tape.mul(diff, diff)?;
            tape.mean_all(sq)
        }
        Targets::Classification(y) => tape.cross_entropy(logits, &[y[i]]),
    }
}

/// Validation loss for one window on a throwaway tape with constant
/// parameters (no gradient bookkeeping).
fn eval_window_loss(
    params: &ModelParams,
    cfg: &ModelConfig,
    spec: &ReservoirSpec,
    ds: &SequenceDataset,
    targets: &Targets,
    i: usize,
    on_path: impl Fn(ParamGroup) -> bool,
) -> Result<f64> {
    let mut tape = Tape::new();
    let empty = std::collections::BTreeSet::new();
    let bound = BoundParams::bind_for_training(&mut tape, params, on_path, &empty);
    let loss = window_loss(&mut tape, &bound, cfg, spec, ds, targets, i)?;
    Ok(tape.value(loss).data()[0] as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stop_counter_semantics() {
        // Frozen loss: first observation improves (vs +inf), then each
        // identical value is non-improving; halt after patience+1 of them.
        let mut s = EarlyStop::new(2);
        assert_eq!(s.observe(1.0), (true, false));
        assert_eq!(s.observe(1.0), (false, false)); // since_best=1
        assert_eq!(s.observe(1.0), (false, false)); // since_best=2
        assert_eq!(s.observe(1.0), (false, true)); // since_best=3 > 2
    }

    #[test]
    fn early_stop_resets_on_improvement() {
        let mut s = EarlyStop::new(1);
        s.observe(1.0);
        s.observe(1.0);
        assert_eq!(s.observe(0.5), (true, false));
        assert_eq!(s.observe(0.6), (false, false));
        assert_eq!(s.observe(0.6), (false, true));
    }

    #[test]
    fn windows_enumeration_with_stride() {
        let data = PretrainData {
            k: 2,
            segments: vec![vec![0.0; 20], vec![0.0; 6]],
        };
        // Segment 0 has T=10, segment 1 has T=3.
        assert_eq!(
            data.windows(4, 4),
            vec![(0, 0), (0, 4)] // T=3 segment too short
        );
        assert_eq!(data.windows(3, 3), vec![(0, 0), (0, 3), (0, 6), (1, 0)]);
        assert_eq!(data.windows(4, 2).len(), 4);
    }
}
