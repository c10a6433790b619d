use serde::{Deserialize, Serialize};

use super::frame::KpiFrame;
use super::sequences::SequenceDataset;
use crate::{Error, Result};

/// Per-channel standardization parameters. `clamped` marks channels whose
/// std was zero and got clamped to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scaler {
    pub channel: String,
    pub mean: f64,
    pub std: f64,
    pub clamped: bool,
}

impl Scaler {
    pub fn apply(&self, v: f32) -> f32 {
        ((v as f64 - self.mean) / self.std) as f32
    }

    pub fn invert(&self, z: f32) -> f32 {
        (z as f64 * self.std + self.mean) as f32
    }
}

/// Fits per-channel mean/std (population) over all rows of a complete
/// frame. Zero-variance channels get std clamped to 1 and are flagged.
pub fn fit_scalers(frame: &KpiFrame) -> Result<Vec<Scaler>> {
    if frame.is_empty() {
        return Err(Error::Data("cannot fit scalers on an empty frame".into()));
    }
    if !frame.is_complete() {
        return Err(Error::Contract(
            "fit_scalers requires a frame with no missing cells".into(),
        ));
    }
    let n = frame.len() as f64;
    let mut scalers = Vec::with_capacity(frame.k());
    for (j, name) in frame.columns.iter().enumerate() {
        let mut mean = 0.0f64;
        for row in &frame.rows {
            mean += row[j].unwrap() as f64;
        }
        mean /= n;
        let mut var = 0.0f64;
        for row in &frame.rows {
            let d = row[j].unwrap() as f64 - mean;
            var += d * d;
        }
        var /= n;
        let std = var.sqrt();
        let clamped = std == 0.0;
        if clamped {
            eprintln!("warning: channel '{name}' is constant; std clamped to 1");
        }
        scalers.push(Scaler {
            channel: name.clone(),
            mean,
            std: if clamped { 1.0 } else { std },
            clamped,
        });
    }
    Ok(scalers)
}

fn check_channels(channels: &[String], scalers: &[Scaler]) -> Result<()> {
    if channels.len() != scalers.len() {
        return Err(Error::Config(format!(
            "{} scalers for {} channels",
            scalers.len(),
            channels.len()
        )));
    }
    for (c, s) in channels.iter().zip(scalers) {
        if *c != s.channel {
            return Err(Error::Config(format!(
                "scaler channel '{}' does not match data channel '{c}'",
                s.channel
            )));
        }
    }
    Ok(())
}

/// Standardizes a flat row-major [rows, K] buffer in place.
pub fn apply_to_flat(data: &mut [f32], k: usize, scalers: &[Scaler]) {
    for (i, v) in data.iter_mut().enumerate() {
        *v = scalers[i % k].apply(*v);
    }
}

/// Inverts standardization on a flat row-major [rows, K] buffer in place.
pub fn invert_on_flat(data: &mut [f32], k: usize, scalers: &[Scaler]) {
    for (i, v) in data.iter_mut().enumerate() {
        *v = scalers[i % k].invert(*v);
    }
}

/// Returns a standardized copy of the dataset.
pub fn apply_scalers(ds: &SequenceDataset, scalers: &[Scaler]) -> Result<SequenceDataset> {
    check_channels(&ds.channels, scalers)?;
    let mut out = ds.clone();
    apply_to_flat(&mut out.x, ds.k(), scalers);
    apply_to_flat(&mut out.y, ds.k(), scalers);
    Ok(out)
}

/// Maps standardized predictions back to original units.
pub fn invert_scalers(y_hat: &[f32], channels: &[String], scalers: &[Scaler]) -> Result<Vec<f32>> {
    check_channels(channels, scalers)?;
    let k = channels.len();
    Ok(y_hat
        .iter()
        .enumerate()
        .map(|(i, &v)| scalers[i % k].invert(v))
        .collect())
}

pub fn write_scalers_json(path: &std::path::Path, scalers: &[Scaler]) -> Result<()> {
    let text = serde_json::to_string_pretty(scalers)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_scalers_json(path: &std::path::Path) -> Result<Vec<Scaler>> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn complete_frame(cols: Vec<&str>, data: Vec<Vec<f32>>, step: i64) -> KpiFrame {
        let ts = (0..data.len() as i64).map(|i| i * step).collect();
        let rows = data
            .into_iter()
            .map(|r| r.into_iter().map(Some).collect())
            .collect();
        KpiFrame::new(ts, cols.into_iter().map(String::from).collect(), rows).unwrap()
    }

    #[test]
    fn roundtrip_within_tolerance() {
        let frame = complete_frame(
            vec!["a"],
            vec![vec![2.0], vec![4.0], vec![6.0]],
            20,
        );
        let scalers = fit_scalers(&frame).unwrap();
        assert_eq!(scalers[0].mean, 4.0);
        for v in [2.0f32, 4.0, 6.0] {
            let z = scalers[0].apply(v);
            assert!((scalers[0].invert(z) - v).abs() < 1e-5);
        }
    }

    #[test]
    fn constant_channel_clamps_std() {
        let frame = complete_frame(vec!["a"], vec![vec![3.0], vec![3.0], vec![3.0]], 20);
        let scalers = fit_scalers(&frame).unwrap();
        assert!(scalers[0].clamped);
        assert_eq!(scalers[0].std, 1.0);
        assert_eq!(scalers[0].apply(3.0), 0.0);
    }

    #[test]
    fn imputed_delay_values_standardize_like_any_value() {
        let frame = complete_frame(
            vec!["delay"],
            vec![vec![-1.0], vec![10.0], vec![12.0]],
            20,
        );
        let scalers = fit_scalers(&frame).unwrap();
        let z = scalers[0].apply(-1.0);
        // Mean includes the -1; the imputed value standardizes like any
        // other and sits far from typical values.
        assert!((scalers[0].mean - 7.0).abs() < 1e-9);
        assert!(z < -1.0);
    }

    #[test]
    fn channel_name_mismatch_is_config_error() {
        let frame = complete_frame(vec!["a"], vec![vec![1.0], vec![2.0]], 20);
        let scalers = fit_scalers(&frame).unwrap();
        let ds = SequenceDataset {
            n_seq: 1,
            channels: vec!["b".into()],
            x: vec![1.0],
            y: vec![2.0],
            m: 1,
        };
        assert!(matches!(
            apply_scalers(&ds, &scalers),
            Err(Error::Config(_))
        ));
    }
}
