use super::frame::KpiFrame;
use super::schema::KpiSchema;
use crate::{Error, Result};

/// Outlier-pruning thresholds from the 10th/90th quantiles.
#[derive(Debug, Clone, PartialEq)]
pub struct IqrBounds {
    pub q1: f64,
    pub q3: f64,
    pub lower: f64,
    pub upper: f64,
}

impl IqrBounds {
    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }
}

/// Quantile by sorted-array linear interpolation at position (n-1)*p.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let pos = (n - 1) as f64 * p;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Computes pruning bounds with Q1 at the 10th and Q3 at the 90th quantile:
/// lower = Q1 - 1.5*IQR, upper = Q3 + 1.5*IQR.
pub fn iqr_bounds(values: &[f32]) -> Result<IqrBounds> {
    if values.len() < 2 {
        return Err(Error::Data(format!(
            "iqr_bounds needs at least 2 samples, got {}",
            values.len()
        )));
    }
    let mut sorted: Vec<f64> = values.iter().map(|&v| v as f64).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let q1 = quantile(&sorted, 0.10);
    let q3 = quantile(&sorted, 0.90);
    let iqr = q3 - q1;
    Ok(IqrBounds {
        q1,
        q3,
        lower: q1 - 1.5 * iqr,
        upper: q3 + 1.5 * iqr,
    })
}

/// Row bookkeeping emitted by [`pad_and_filter`].
#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize)]
pub struct FilterStats {
    pub rows_in: usize,
    pub imputed_delay: usize,
    pub dropped_missing: usize,
    pub dropped_iqr: usize,
    pub rows_out: usize,
}

/// Missing-value policy followed by one pass of IQR pruning.
///
/// Rows missing only the schema's delay channel get -1 imputed there; rows
/// missing any other channel are dropped. Bounds are then computed once per
/// channel over the padded frame (imputed -1 values included) and every row
/// containing an out-of-bounds cell is dropped.
pub fn pad_and_filter(frame: &KpiFrame, schema: &KpiSchema) -> Result<(KpiFrame, FilterStats)> {
    if frame.columns.len() != schema.k() {
        return Err(Error::Data(format!(
            "frame has {} channels, schema expects {}",
            frame.columns.len(),
            schema.k()
        )));
    }
    for (got, want) in frame.columns.iter().zip(schema.names()) {
        if *got != want {
            return Err(Error::Data(format!(
                "unknown channel name '{got}' (schema expects '{want}')"
            )));
        }
    }

    let delay_idx = schema.delay_index();
    let mut stats = FilterStats {
        rows_in: frame.len(),
        ..FilterStats::default()
    };

    // Missing-value pass.
    let mut timestamps = Vec::new();
    let mut rows: Vec<Vec<f32>> = Vec::new();
    for (ts, row) in frame.timestamps.iter().zip(&frame.rows) {
        let missing: Vec<usize> = row
            .iter()
            .enumerate()
            .filter_map(|(j, c)| c.is_none().then_some(j))
            .collect();
        let keep = match (missing.as_slice(), delay_idx) {
            ([], _) => Some(row.iter().map(|c| c.unwrap()).collect::<Vec<f32>>()),
            ([only], Some(d)) if *only == d => {
                stats.imputed_delay += 1;
                Some(
                    row.iter()
                        .enumerate()
                        .map(|(j, c)| if j == d { -1.0 } else { c.unwrap() })
                        .collect(),
                )
            }
            _ => None,
        };
        match keep {
            Some(cells) => {
                timestamps.push(*ts);
                rows.push(cells);
            }
            None => stats.dropped_missing += 1,
        }
    }

    // IQR pass: one set of bounds per channel over the padded frame,
    // applied once. Skipped when fewer than 2 rows remain (quantiles are
    // undefined there).
    if rows.len() >= 2 {
        let k = schema.k();
        let mut bounds = Vec::with_capacity(k);
        for j in 0..k {
            let column: Vec<f32> = rows.iter().map(|r| r[j]).collect();
            bounds.push(iqr_bounds(&column)?);
        }
        let mut kept_ts = Vec::new();
        let mut kept_rows = Vec::new();
        for (ts, row) in timestamps.into_iter().zip(rows) {
            if row
                .iter()
                .enumerate()
                .all(|(j, &v)| bounds[j].contains(v as f64))
            {
                kept_ts.push(ts);
                kept_rows.push(row);
            } else {
                stats.dropped_iqr += 1;
            }
        }
        timestamps = kept_ts;
        rows = kept_rows;
    }

    stats.rows_out = rows.len();
    let out_rows = rows
        .into_iter()
        .map(|r| r.into_iter().map(Some).collect())
        .collect();
    let out = KpiFrame::new(timestamps, frame.columns.clone(), out_rows)?;
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema3() -> KpiSchema {
        let mut s = KpiSchema::from_names(&["a", "b", "delay"]);
        s.delay_channel = Some("delay".into());
        s
    }

    fn frame3(rows: Vec<(i64, Vec<Option<f32>>)>) -> KpiFrame {
        let (ts, cells): (Vec<i64>, Vec<Vec<Option<f32>>>) = rows.into_iter().unzip();
        KpiFrame::new(ts, vec!["a".into(), "b".into(), "delay".into()], cells).unwrap()
    }

    #[test]
    fn iqr_bounds_linear_interpolation() {
        // 0..=99: q1 = 9.9, q3 = 89.1, iqr = 79.2.
        let values: Vec<f32> = (0..100).map(|i| i as f32).collect();
        let b = iqr_bounds(&values).unwrap();
        assert!((b.q1 - 9.9).abs() < 1e-9);
        assert!((b.q3 - 89.1).abs() < 1e-9);
        assert!((b.lower - -108.9).abs() < 1e-9);
        assert!((b.upper - 207.9).abs() < 1e-9);
    }

    #[test]
    fn iqr_bounds_constant_channel() {
        let b = iqr_bounds(&[4.0; 10]).unwrap();
        assert_eq!(b.q1, 4.0);
        assert_eq!(b.q3, 4.0);
        assert_eq!(b.lower, b.upper);
        assert!(b.contains(4.0));
    }

    #[test]
    fn iqr_outlier_exceeds_upper() {
        // 0..=99 plus 10000: recompute bounds with 101 samples.
        let mut values: Vec<f32> = (0..100).map(|i| i as f32).collect();
        values.push(10000.0);
        let b = iqr_bounds(&values).unwrap();
        assert!(10000.0 > b.upper, "upper={}", b.upper);
        assert!(b.contains(99.0));
    }

    #[test]
    fn iqr_needs_two_samples() {
        assert!(matches!(iqr_bounds(&[1.0]), Err(Error::Data(_))));
    }

    #[test]
    fn delay_only_missing_is_imputed() {
        let frame = frame3(vec![
            (0, vec![Some(1.0), Some(1.0), None]),
            (20, vec![Some(1.1), Some(0.9), Some(5.0)]),
            (40, vec![Some(0.9), Some(1.1), Some(5.5)]),
        ]);
        let (out, stats) = pad_and_filter(&frame, &schema3()).unwrap();
        assert_eq!(stats.imputed_delay, 1);
        assert_eq!(stats.dropped_missing, 0);
        assert_eq!(out.rows[0][2], Some(-1.0));
    }

    #[test]
    fn other_missing_drops_row() {
        let frame = frame3(vec![
            (0, vec![None, Some(1.0), Some(5.0)]),
            (20, vec![Some(1.0), Some(1.0), Some(5.0)]),
            (40, vec![Some(1.1), Some(0.9), Some(5.5)]),
        ]);
        let (out, stats) = pad_and_filter(&frame, &schema3()).unwrap();
        assert_eq!(stats.dropped_missing, 1);
        assert_eq!(out.len(), 2);
        assert_eq!(out.timestamps, vec![20, 40]);
    }

    #[test]
    fn complete_frame_unchanged_before_iqr() {
        let frame = frame3(vec![
            (0, vec![Some(1.0), Some(2.0), Some(3.0)]),
            (20, vec![Some(1.1), Some(2.1), Some(3.1)]),
        ]);
        let (out, stats) = pad_and_filter(&frame, &schema3()).unwrap();
        assert_eq!(stats.imputed_delay, 0);
        assert_eq!(stats.dropped_missing, 0);
        assert_eq!(stats.dropped_iqr, 0);
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn unknown_channel_is_schema_error() {
        let frame = KpiFrame::new(
            vec![0],
            vec!["a".into(), "wrong".into(), "delay".into()],
            vec![vec![Some(1.0), Some(1.0), Some(1.0)]],
        )
        .unwrap();
        let err = pad_and_filter(&frame, &schema3()).unwrap_err();
        assert!(err.to_string().contains("wrong"), "{err}");
    }

    #[test]
    fn iqr_drops_outlier_rows() {
        let mut rows: Vec<(i64, Vec<Option<f32>>)> = (0..100)
            .map(|i| {
                (
                    20 * i as i64,
                    vec![Some(i as f32), Some(1.0), Some(5.0)],
                )
            })
            .collect();
        rows.push((2000, vec![Some(10000.0), Some(1.0), Some(5.0)]));
        let frame = frame3(rows);
        let (out, stats) = pad_and_filter(&frame, &schema3()).unwrap();
        assert_eq!(stats.dropped_iqr, 1);
        assert_eq!(out.len(), 100);
    }

    #[test]
    fn output_rows_are_subset_of_input() {
        // Modulo the single -1 imputation, every kept row matches its input.
        let frame = frame3(vec![
            (0, vec![Some(1.0), Some(1.0), None]),
            (20, vec![Some(2.0), None, Some(1.0)]),
            (40, vec![Some(3.0), Some(1.5), Some(2.0)]),
            (60, vec![Some(2.5), Some(1.2), Some(2.5)]),
        ]);
        let (out, _) = pad_and_filter(&frame, &schema3()).unwrap();
        for (ts, row) in out.timestamps.iter().zip(&out.rows) {
            let i = frame.timestamps.iter().position(|t| t == ts).unwrap();
            for (j, cell) in row.iter().enumerate() {
                match frame.rows[i][j] {
                    Some(orig) => assert_eq!(cell.unwrap(), orig),
                    None => assert_eq!(cell.unwrap(), -1.0),
                }
            }
        }
    }

    #[test]
    fn iqr_pruning_is_idempotent_with_fixed_bounds() {
        let values: Vec<f32> = (0..50).map(|i| (i % 7) as f32).collect();
        let b = iqr_bounds(&values).unwrap();
        let kept: Vec<f32> = values
            .iter()
            .copied()
            .filter(|&v| b.contains(v as f64))
            .collect();
        let kept2: Vec<f32> = kept
            .iter()
            .copied()
            .filter(|&v| b.contains(v as f64))
            .collect();
        assert_eq!(kept, kept2);
    }
}
