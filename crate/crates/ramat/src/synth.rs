//! Seeded synthetic data generators backing the benchmark and test suites:
//! smooth sinusoid mixtures, a stable AR(2) process, and a bursty
//! 13-channel KPI stream with injected missing cells and outliers.

use crate::pipeline::{KpiFrame, KpiSchema};
use crate::rng::{stream, SeededRng};
use crate::{Error, Result};

/// Which generator to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SynthKind {
    Sinusoid,
    Ar2,
    Bursty,
}

/// 3-channel sums of sinusoids: each channel mixes three seeded tones with
/// frequencies in [0.005, 0.05] cycles/step. Complete frame, rows every
/// t_step ms.
pub fn sinusoid(seed: u64, timesteps: usize, t_step: i64) -> Result<KpiFrame> {
    let mut rng = SeededRng::new(seed, stream::SYNTH);
    let k = 3;
    let tones = 3;
    let mut amp = vec![0.0f64; k * tones];
    let mut freq = vec![0.0f64; k * tones];
    let mut phase = vec![0.0f64; k * tones];
    for i in 0..k * tones {
        amp[i] = 0.5 + rng.uniform() as f64;
        freq[i] = 0.005 + 0.045 * rng.uniform() as f64;
        phase[i] = std::f64::consts::TAU * rng.uniform() as f64;
    }
    let mut rows = Vec::with_capacity(timesteps);
    for t in 0..timesteps {
        let mut row = Vec::with_capacity(k);
        for j in 0..k {
            let mut v = 0.0f64;
            for i in 0..tones {
                let idx = j * tones + i;
                v += amp[idx] * (std::f64::consts::TAU * freq[idx] * t as f64 + phase[idx]).sin();
            }
            row.push(Some(v as f32));
        }
        rows.push(row);
    }
    KpiFrame::new(
        (0..timesteps as i64).map(|t| t * t_step).collect(),
        (0..k).map(|j| format!("ch{j}")).collect(),
        rows,
    )
}

/// Stable 3-channel AR(2) processes with per-channel coefficients and
/// Gaussian innovations; strongly autocorrelated, so one-step forecasting
/// comfortably beats persistence.
pub fn ar2(seed: u64, timesteps: usize, t_step: i64) -> Result<KpiFrame> {
    let mut rng = SeededRng::new(seed, stream::SYNTH);
    let coeffs = [(1.6f64, -0.64f64), (1.2, -0.4), (0.9, -0.2)];
    let noise_sd = 0.2;
    let k = coeffs.len();
    let mut prev1 = vec![0.0f64; k];
    let mut prev2 = vec![0.0f64; k];
    let mut rows = Vec::with_capacity(timesteps);
    // Burn-in so the process reaches its stationary regime.
    for t in 0..timesteps + 200 {
        let mut row = Vec::with_capacity(k);
        for j in 0..k {
            let (a, b) = coeffs[j];
            let v = a * prev1[j] + b * prev2[j] + noise_sd * rng.normal();
            prev2[j] = prev1[j];
            prev1[j] = v;
            row.push(Some(v as f32));
        }
        if t >= 200 {
            rows.push(row);
        }
    }
    KpiFrame::new(
        (0..timesteps as i64).map(|t| t * t_step).collect(),
        (0..k).map(|j| format!("ch{j}")).collect(),
        rows,
    )
}

/// Raw 13-channel KPI stream resembling the default schema: values wander
/// inside each channel's observed range, rows arrive at a jittery ~7 ms
/// cadence, and the stream carries injected defects -- delay-only missing
/// cells, other-channel missing cells, and large outlier spikes.
pub fn bursty(seed: u64, rows: usize) -> Result<KpiFrame> {
    let schema = KpiSchema::oran_13();
    let mut rng = SeededRng::new(seed, stream::SYNTH);
    let k = schema.k();
    let delay_idx = schema.delay_index().expect("default schema has delay");
    // Random-walk state per channel, normalized to [0,1] of its range.
    let mut level: Vec<f64> = (0..k).map(|_| 0.3 + 0.4 * rng.uniform() as f64).collect();
    let mut timestamps = Vec::with_capacity(rows);
    let mut cells = Vec::with_capacity(rows);
    let mut t = 0i64;
    for _ in 0..rows {
        t += 5 + rng.index(5) as i64; // 5..9 ms cadence
        timestamps.push(t);
        let mut row: Vec<Option<f32>> = Vec::with_capacity(k);
        let drop_other = rng.uniform() < 0.02;
        let drop_delay = rng.uniform() < 0.04;
        let other_idx = rng.index(k - 1); // never the delay channel
        let spike = rng.uniform() < 0.01;
        let spike_idx = rng.index(k);
        for (j, ch) in schema.channels.iter().enumerate() {
            level[j] = (level[j] + 0.1 * rng.normal()).clamp(0.0, 1.0);
            let span = ch.max - ch.min;
            let mut v = ch.min + level[j] * span;
            if spike && j == spike_idx {
                v = ch.max + span * 100.0;
            }
            if drop_other && j == other_idx {
                row.push(None);
            } else if drop_delay && j == delay_idx {
                row.push(None);
            } else {
                row.push(Some(v as f32));
            }
        }
        cells.push(row);
    }
    KpiFrame::new(timestamps, schema.names(), cells)
}

pub fn generate(kind: SynthKind, seed: u64, timesteps: usize, t_step: i64) -> Result<KpiFrame> {
    if timesteps == 0 {
        return Err(Error::Config("timesteps must be positive".into()));
    }
    match kind {
        SynthKind::Sinusoid => sinusoid(seed, timesteps, t_step),
        SynthKind::Ar2 => ar2(seed, timesteps, t_step),
        SynthKind::Bursty => bursty(seed, timesteps),
    }
}
