use super::frame::{KpiFrame, RawStreams};
use crate::{Error, Result};

/// Aligns unsynchronized per-KPI event streams onto a shared clock by
/// windowed averaging: each output row at `t_start` holds, per channel, the
/// mean of that channel's events with timestamps in `[t_start, t_start +
/// window)`; empty windows yield missing cells. Windows advance by `step`
/// starting at the earliest event and rows are emitted while `t_start` does
/// not pass the last event timestamp.
pub fn moving_average_align(raw: &RawStreams, window_ms: i64, step_ms: i64) -> Result<KpiFrame> {
    if window_ms <= 0 || step_ms <= 0 {
        return Err(Error::Config(format!(
            "window ({window_ms} ms) and step ({step_ms} ms) must be positive"
        )));
    }
    let (first, last) = match (raw.first_timestamp(), raw.last_timestamp()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Ok(KpiFrame::empty(raw.channels.clone())),
    };

    let mut timestamps = Vec::new();
    let mut rows = Vec::new();
    let mut t_start = first;
    while t_start <= last {
        let t_end = t_start + window_ms;
        let mut cells = Vec::with_capacity(raw.channels.len());
        for stream in &raw.events {
            let lo = stream.partition_point(|e| e.0 < t_start);
            let hi = stream.partition_point(|e| e.0 < t_end);
            if lo == hi {
                cells.push(None);
            } else {
                // f64 accumulation; mean stored as f32.
                let sum: f64 = stream[lo..hi].iter().map(|e| e.1 as f64).sum();
                cells.push(Some((sum / (hi - lo) as f64) as f32));
            }
        }
        timestamps.push(t_start);
        rows.push(cells);
        t_start += step_ms;
    }
    KpiFrame::new(timestamps, raw.channels.clone(), rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn streams(events: Vec<Vec<(i64, f32)>>) -> RawStreams {
        let names = (0..events.len()).map(|i| format!("ch{i}")).collect();
        RawStreams::new(names, events).unwrap()
    }

    #[test]
    fn averages_within_windows_and_advances_by_step() {
        // events (0,2),(5,4),(15,6), window=10, step=10:
        // [0,10) -> mean(2,4)=3 at t=0; [10,20) -> 6 at t=10.
        let raw = streams(vec![vec![(0, 2.0), (5, 4.0), (15, 6.0)]]);
        let frame = moving_average_align(&raw, 10, 10).unwrap();
        assert_eq!(frame.timestamps, vec![0, 10]);
        assert_eq!(frame.rows[0][0], Some(3.0));
        assert_eq!(frame.rows[1][0], Some(6.0));
    }

    #[test]
    fn single_event_window_is_that_value() {
        let raw = streams(vec![vec![(3, 7.5)]]);
        let frame = moving_average_align(&raw, 20, 20).unwrap();
        assert_eq!(frame.timestamps, vec![3]);
        assert_eq!(frame.rows[0][0], Some(7.5));
    }

    #[test]
    fn empty_window_cell_is_missing() {
        // Channel 1 has nothing in [0,10).
        let raw = streams(vec![vec![(0, 1.0), (12, 2.0)], vec![(11, 5.0)]]);
        let frame = moving_average_align(&raw, 10, 10).unwrap();
        assert_eq!(frame.timestamps, vec![0, 10]);
        assert_eq!(frame.rows[0], vec![Some(1.0), None]);
        assert_eq!(frame.rows[1], vec![Some(2.0), Some(5.0)]);
    }

    #[test]
    fn empty_input_yields_empty_frame() {
        let raw = streams(vec![vec![], vec![]]);
        let frame = moving_average_align(&raw, 10, 10).unwrap();
        assert!(frame.is_empty());
        assert_eq!(frame.k(), 2);
    }

    #[test]
    fn rejects_non_positive_window_or_step() {
        let raw = streams(vec![vec![(0, 1.0)]]);
        assert!(matches!(
            moving_average_align(&raw, 0, 10),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            moving_average_align(&raw, 10, -5),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn overlapping_windows_with_small_step() {
        let raw = streams(vec![vec![(0, 1.0), (5, 3.0)]]);
        let frame = moving_average_align(&raw, 10, 5).unwrap();
        // t=0: mean(1,3)=2; t=5: mean(3)=3.
        assert_eq!(frame.timestamps, vec![0, 5]);
        assert_eq!(frame.rows[0][0], Some(2.0));
        assert_eq!(frame.rows[1][0], Some(3.0));
    }
}
