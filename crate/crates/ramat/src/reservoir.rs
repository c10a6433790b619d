//! Fixed echo-state reservoir: random input and recurrent matrices, frozen
//! after construction, mapping each flattened patch to a high-dimensional
//! leaky-integrated state. No gradients ever flow here.

use serde::{Deserialize, Serialize};

use crate::rng::{stream, SeededRng};
use crate::{Error, Result};

/// Construction hyperparameters for the reservoir.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReservoirConfig {
    pub reservoir_size: usize,
    pub spectral_radius: f64,
    pub leak_rate: f32,
    pub input_scale: f32,
    /// Fraction of recurrent entries forced to zero.
    pub sparsity: f32,
}

impl Default for ReservoirConfig {
    fn default() -> Self {
        Self {
            reservoir_size: 256,
            spectral_radius: 0.9,
            leak_rate: 0.5,
            input_scale: 0.1,
            sparsity: 0.9,
        }
    }
}

/// Immutable reservoir weights. Identical (config, input_dim, seed) always
/// reproduces bit-identical matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirSpec {
    pub input_dim: usize,
    pub reservoir_size: usize,
    /// [reservoir_size, input_dim], row-major.
    pub w_in: Vec<f32>,
    /// [reservoir_size, reservoir_size], row-major.
    pub w_res: Vec<f32>,
    pub spectral_radius: f64,
    pub leak_rate: f32,
    pub input_scale: f32,
    pub seed: u64,
}

/// Evolving hidden state; every component stays in (-1, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirState {
    pub h: Vec<f32>,
}

impl ReservoirState {
    pub fn zero(reservoir_size: usize) -> Self {
        Self {
            h: vec![0.0; reservoir_size],
        }
    }
}

/// Power-iteration estimate of the spectral radius in 64-bit arithmetic:
/// deterministic all-ones start vector, up to `max_iters` iterations,
/// converged when the norm ratio's relative change drops below `tol`.
pub fn power_iteration_radius(w: &[f32], n: usize, max_iters: usize, tol: f64) -> Option<f64> {
    assert_eq!(w.len(), n * n);
    let a: Vec<f64> = w.iter().map(|&v| v as f64).collect();
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut prev: Option<f64> = None;
    for _ in 0..max_iters {
        let mut av = vec![0.0f64; n];
        for i in 0..n {
            let row = &a[i * n..(i + 1) * n];
            let mut s = 0.0;
            for j in 0..n {
                s += row[j] * v[j];
            }
            av[i] = s;
        }
        let r = av.iter().map(|x| x * x).sum::<f64>().sqrt();
        if r == 0.0 {
            return None;
        }
        for (dst, &src) in v.iter_mut().zip(&av) {
            *dst = src / r;
        }
        if let Some(p) = prev {
            if (r - p).abs() / r < tol {
                return Some(r);
            }
        }
        prev = Some(r);
    }
    None
}

/// Builds the fixed reservoir: w_in uniform in [-input_scale, input_scale),
/// w_res sparse-uniform with nonnegative entries (an isolated dominant real
/// eigenvalue makes power iteration converge), rescaled so its measured
/// spectral radius hits the target.
pub fn build_reservoir(config: &ReservoirConfig, input_dim: usize, seed: u64) -> Result<ReservoirSpec> {
    if config.reservoir_size < 1 {
        return Err(Error::Config("reservoir_size must be >= 1".into()));
    }
    if config.spectral_radius <= 0.0 {
        return Err(Error::Config("spectral_radius must be positive".into()));
    }
    if !(config.leak_rate > 0.0 && config.leak_rate <= 1.0) {
        return Err(Error::Config("leak_rate must lie in (0, 1]".into()));
    }
    if !(0.0..1.0).contains(&config.sparsity) {
        return Err(Error::Config("sparsity must lie in [0, 1)".into()));
    }
    if input_dim < 1 {
        return Err(Error::Config("input_dim must be >= 1".into()));
    }

    let n = config.reservoir_size;
    let mut rng = SeededRng::new(seed, stream::RESERVOIR);
    let w_in: Vec<f32> = (0..n * input_dim)
        .map(|_| rng.uniform_symmetric(config.input_scale))
        .collect();

    // Two draws per entry keeps the stream layout independent of sparsity.
    let mut w_res: Vec<f32> = Vec::with_capacity(n * n);
    for _ in 0..n * n {
        let gate = rng.uniform();
        let value = rng.uniform();
        w_res.push(if gate < config.sparsity { 0.0 } else { value });
    }

    let measured = power_iteration_radius(&w_res, n, 200, 1e-6).ok_or_else(|| {
        Error::Numeric(format!(
            "power iteration did not converge for seed {seed}; try a different seed"
        ))
    })?;
    if measured < 1e-12 {
        return Err(Error::Numeric(format!(
            "reservoir matrix for seed {seed} is (near) nilpotent; try a different seed"
        )));
    }
    let scale = (config.spectral_radius / measured) as f32;
    for v in w_res.iter_mut() {
        *v *= scale;
    }

    let check = power_iteration_radius(&w_res, n, 200, 1e-6).ok_or_else(|| {
        Error::Numeric("post-rescale power iteration did not converge".into())
    })?;
    if (check - config.spectral_radius).abs() > 1e-3 {
        return Err(Error::Numeric(format!(
            "rescaled spectral radius {check} missed target {} by more than 1e-3",
            config.spectral_radius
        )));
    }

    Ok(ReservoirSpec {
        input_dim,
        reservoir_size: n,
        w_in,
        w_res,
        spectral_radius: config.spectral_radius,
        leak_rate: config.leak_rate,
        input_scale: config.input_scale,
        seed,
    })
}

/// Leaky-integrator update: h' = (1-a)h + a*tanh(W_in u + W_res h).
pub fn step(spec: &ReservoirSpec, state: &ReservoirState, u: &[f32]) -> Result<ReservoirState> {
    if u.len() != spec.input_dim {
        return Err(Error::Shape(format!(
            "reservoir input has {} components, expected {}",
            u.len(),
            spec.input_dim
        )));
    }
    if state.h.len() != spec.reservoir_size {
        return Err(Error::Shape(format!(
            "reservoir state has {} components, expected {}",
            state.h.len(),
            spec.reservoir_size
        )));
    }
    let n = spec.reservoir_size;
    let alpha = spec.leak_rate;
    let mut next = vec![0.0f32; n];
    for i in 0..n {
        let mut drive = 0.0f32;
        let wi = &spec.w_in[i * spec.input_dim..(i + 1) * spec.input_dim];
        for (w, &x) in wi.iter().zip(u) {
            drive += w * x;
        }
        let wr = &spec.w_res[i * n..(i + 1) * n];
        for (w, &h) in wr.iter().zip(&state.h) {
            drive += w * h;
        }
        next[i] = (1.0 - alpha) * state.h[i] + alpha * drive.tanh();
    }
    Ok(ReservoirState { h: next })
}

/// Feeds patches in sequence from the given initial state; returns the
/// state after each patch. Order-dependent by construction.
pub fn run_patches(
    spec: &ReservoirSpec,
    patches: &[Vec<f32>],
    initial: &ReservoirState,
) -> Result<Vec<ReservoirState>> {
    let mut states = Vec::with_capacity(patches.len());
    let mut current = initial.clone();
    for patch in patches {
        current = step(spec, &current, patch)?;
        states.push(current.clone());
    }
    Ok(states)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize) -> ReservoirConfig {
        ReservoirConfig {
            reservoir_size: n,
            // Tiny test reservoirs go nilpotent at the default 90% sparsity.
            sparsity: if n < 32 { 0.5 } else { 0.9 },
            ..ReservoirConfig::default()
        }
    }

    #[test]
    fn same_seed_gives_byte_identical_spec() {
        let a = build_reservoir(&cfg(64), 8, 7).unwrap();
        let b = build_reservoir(&cfg(64), 8, 7).unwrap();
        assert_eq!(a, b);
        let bits_a: Vec<u32> = a.w_res.iter().map(|v| v.to_bits()).collect();
        let bits_b: Vec<u32> = b.w_res.iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits_a, bits_b);
    }

    #[test]
    fn different_seeds_differ() {
        let a = build_reservoir(&cfg(32), 4, 1).unwrap();
        let b = build_reservoir(&cfg(32), 4, 2).unwrap();
        assert_ne!(a.w_in, b.w_in);
    }

    #[test]
    fn scalar_reservoir_has_exact_radius() {
        let config = ReservoirConfig {
            reservoir_size: 1,
            sparsity: 0.0,
            ..ReservoirConfig::default()
        };
        let spec = build_reservoir(&config, 2, 3).unwrap();
        assert!((spec.w_res[0].abs() as f64 - 0.9).abs() < 1e-6);
    }

    #[test]
    fn w_in_respects_input_scale() {
        let spec = build_reservoir(&cfg(32), 4, 9).unwrap();
        assert!(spec.w_in.iter().all(|v| v.abs() <= 0.1));
        assert!(spec.w_in.iter().any(|v| v.abs() > 0.01));
    }

    #[test]
    fn zero_state_zero_input_stays_at_origin() {
        let spec = build_reservoir(&cfg(16), 4, 5).unwrap();
        let state = ReservoirState::zero(16);
        let next = step(&spec, &state, &[0.0; 4]).unwrap();
        assert_eq!(next.h, vec![0.0; 16]);
    }

    #[test]
    fn full_leak_from_zero_state_is_tanh_of_input_drive() {
        let config = ReservoirConfig {
            reservoir_size: 8,
            leak_rate: 1.0,
            ..ReservoirConfig::default()
        };
        let spec = build_reservoir(&config, 3, 11).unwrap();
        let u = [0.5f32, -1.0, 2.0];
        let next = step(&spec, &ReservoirState::zero(8), &u).unwrap();
        for i in 0..8 {
            let mut drive = 0.0f32;
            for (j, &x) in u.iter().enumerate() {
                drive += spec.w_in[i * 3 + j] * x;
            }
            assert_eq!(next.h[i], drive.tanh());
        }
    }

    #[test]
    fn state_stays_inside_unit_box() {
        let spec = build_reservoir(&cfg(32), 4, 13).unwrap();
        let mut rng = SeededRng::new(99, 0);
        let mut state = ReservoirState::zero(32);
        for _ in 0..50 {
            let u: Vec<f32> = (0..4).map(|_| rng.normal() as f32 * 3.0).collect();
            state = step(&spec, &state, &u).unwrap();
            assert!(state.h.iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        let spec = build_reservoir(&cfg(8), 4, 1).unwrap();
        let err = step(&spec, &ReservoirState::zero(8), &[0.0; 3]).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn run_patches_empty_gives_empty() {
        let spec = build_reservoir(&cfg(8), 4, 1).unwrap();
        let states = run_patches(&spec, &[], &ReservoirState::zero(8)).unwrap();
        assert!(states.is_empty());
    }

    #[test]
    fn run_patches_single_reduces_to_step() {
        let spec = build_reservoir(&cfg(8), 4, 1).unwrap();
        let patch = vec![0.1f32, -0.2, 0.3, 0.4];
        let init = ReservoirState::zero(8);
        let states = run_patches(&spec, &[patch.clone()], &init).unwrap();
        assert_eq!(states.len(), 1);
        assert_eq!(states[0], step(&spec, &init, &patch).unwrap());
    }

    #[test]
    fn patch_order_matters() {
        let spec = build_reservoir(&cfg(16), 2, 21).unwrap();
        let mut rng = SeededRng::new(5, 0);
        let patches: Vec<Vec<f32>> = (0..6)
            .map(|_| (0..2).map(|_| rng.normal() as f32).collect())
            .collect();
        let mut reversed = patches.clone();
        reversed.reverse();
        let init = ReservoirState::zero(16);
        let fwd = run_patches(&spec, &patches, &init).unwrap();
        let rev = run_patches(&spec, &reversed, &init).unwrap();
        assert_ne!(fwd.last(), rev.last());
    }

    #[test]
    fn all_zero_patches_from_zero_state_stay_zero() {
        let spec = build_reservoir(&cfg(8), 4, 1).unwrap();
        let patches = vec![vec![0.0f32; 4]; 5];
        let states = run_patches(&spec, &patches, &ReservoirState::zero(8)).unwrap();
        for s in states {
            assert_eq!(s.h, vec![0.0; 8]);
        }
    }

    #[test]
    fn echo_state_contraction() {
        let spec = build_reservoir(&cfg(64), 8, 17).unwrap();
        let mut rng = SeededRng::new(42, 0);
        let inputs: Vec<Vec<f32>> = (0..200)
            .map(|_| (0..8).map(|_| rng.normal() as f32).collect())
            .collect();
        let mut a = ReservoirState::zero(64);
        let mut b = ReservoirState {
            h: (0..64).map(|_| rng.uniform_symmetric(1.0)).collect(),
        };
        let d0: f64 = a
            .h
            .iter()
            .zip(&b.h)
            .map(|(x, y)| ((x - y) as f64).powi(2))
            .sum::<f64>()
            .sqrt();
        let mut dists = Vec::new();
        for u in &inputs {
            a = step(&spec, &a, u).unwrap();
            b = step(&spec, &b, u).unwrap();
            let d: f64 = a
                .h
                .iter()
                .zip(&b.h)
                .map(|(x, y)| ((x - y) as f64).powi(2))
                .sum::<f64>()
                .sqrt();
            dists.push(d);
        }
        assert!(dists.last().unwrap() / d0 < 1e-3);
        // Fading memory in the 100-step moving sense.
        for i in 0..dists.len() - 100 {
            assert!(dists[i + 100] < dists[i].max(1e-12));
        }
    }

    #[test]
    fn power_iteration_rejects_zero_matrix() {
        assert!(power_iteration_radius(&[0.0; 16], 4, 200, 1e-6).is_none());
    }
}
