use super::frame::KpiFrame;
use crate::{Error, Result};

/// Supervised tensor pair X=[M, N_seq, K], y=[M, K] built from
/// gap-checked sliding windows, stored flat and row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDataset {
    pub n_seq: usize,
    pub channels: Vec<String>,
    pub x: Vec<f32>,
    pub y: Vec<f32>,
    pub m: usize,
}

impl SequenceDataset {
    pub fn k(&self) -> usize {
        self.channels.len()
    }

    /// Window i as a [n_seq * K] slice.
    pub fn window(&self, i: usize) -> &[f32] {
        let w = self.n_seq * self.k();
        &self.x[i * w..(i + 1) * w]
    }

    /// Target row i as a [K] slice.
    pub fn target(&self, i: usize) -> &[f32] {
        let k = self.k();
        &self.y[i * k..(i + 1) * k]
    }
}

/// Emits one data point per row i whose trailing n_seq rows and the target
/// row i+1 are all consecutively spaced by exactly t_step: X stacks rows
/// i-n_seq+1 ..= i (oldest first), y is row i+1.
pub fn build_sequences(frame: &KpiFrame, n_seq: usize, t_step: i64) -> Result<SequenceDataset> {
    if n_seq < 1 {
        return Err(Error::Config("n_seq must be >= 1".into()));
    }
    if t_step <= 0 {
        return Err(Error::Config("t_step must be positive".into()));
    }
    if !frame.is_complete() {
        return Err(Error::Contract(
            "build_sequences requires a frame with no missing cells".into(),
        ));
    }
    let n = frame.len();
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut m = 0usize;
    if n >= n_seq + 1 {
        for i in (n_seq - 1)..(n - 1) {
            let start = i + 1 - n_seq;
            let consecutive = (start..=i)
                .all(|j| frame.timestamps[j + 1] - frame.timestamps[j] == t_step);
            if !consecutive {
                continue;
            }
            for j in start..=i {
                x.extend(frame.rows[j].iter().map(|c| c.unwrap()));
            }
            y.extend(frame.rows[i + 1].iter().map(|c| c.unwrap()));
            m += 1;
        }
    }
    Ok(SequenceDataset {
        n_seq,
        channels: frame.columns.clone(),
        x,
        y,
        m,
    })
}

/// Splits a complete frame into maximal runs of rows spaced exactly t_step,
/// as flat [T_i * K] blocks. Used for pretraining windows.
pub fn consecutive_segments(frame: &KpiFrame, t_step: i64) -> Result<Vec<Vec<f32>>> {
    if !frame.is_complete() {
        return Err(Error::Contract(
            "consecutive_segments requires a frame with no missing cells".into(),
        ));
    }
    let mut segments = Vec::new();
    let mut current: Vec<f32> = Vec::new();
    for i in 0..frame.len() {
        if i > 0 && frame.timestamps[i] - frame.timestamps[i - 1] != t_step {
            if !current.is_empty() {
                segments.push(std::mem::take(&mut current));
            }
        }
        current.extend(frame.rows[i].iter().map(|c| c.unwrap()));
    }
    if !current.is_empty() {
        segments.push(current);
    }
    Ok(segments)
}
