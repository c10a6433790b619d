use std::io::Write;
use std::path::Path;

use crate::{Error, Result};

/// Timestamped multivariate KPI rows. A cell is `None` when the channel had
/// no measurement in that row's window; the marker is distinct from any
/// legal value (including the -1 delay imputation).
#[derive(Debug, Clone, PartialEq)]
pub struct KpiFrame {
    pub timestamps: Vec<i64>,
    pub columns: Vec<String>,
    /// Row-major cells, `rows.len() == timestamps.len()`, each row has
    /// exactly `columns.len()` cells.
    pub rows: Vec<Vec<Option<f32>>>,
}

impl KpiFrame {
    pub fn new(timestamps: Vec<i64>, columns: Vec<String>, rows: Vec<Vec<Option<f32>>>) -> Result<Self> {
        if timestamps.len() != rows.len() {
            return Err(Error::Data(format!(
                "{} timestamps for {} rows",
                timestamps.len(),
                rows.len()
            )));
        }
        if timestamps.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Data("timestamps not sorted ascending".into()));
        }
        let k = columns.len();
        if let Some(bad) = rows.iter().position(|r| r.len() != k) {
            return Err(Error::Data(format!(
                "row {bad} has {} cells, expected {k}",
                rows[bad].len()
            )));
        }
        Ok(Self {
            timestamps,
            columns,
            rows,
        })
    }

    pub fn empty(columns: Vec<String>) -> Self {
        Self {
            timestamps: Vec::new(),
            columns,
            rows: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn k(&self) -> usize {
        self.columns.len()
    }

    /// All present values of one channel, in row order.
    pub fn channel_values(&self, j: usize) -> Vec<f32> {
        self.rows.iter().filter_map(|r| r[j]).collect()
    }

    /// True when no cell is missing.
    pub fn is_complete(&self) -> bool {
        self.rows.iter().all(|r| r.iter().all(|c| c.is_some()))
    }

    /// Reads a frame from CSV: header `timestamp_ms,<channel>...`, empty
    /// cell means missing.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().flexible(false).from_path(path)?;
        let headers = reader.headers()?.clone();
        if headers.is_empty() || headers.get(0) != Some("timestamp_ms") {
            return Err(Error::Data(format!(
                "{}: first CSV column must be 'timestamp_ms'",
                path.display()
            )));
        }
        let columns: Vec<String> = headers.iter().skip(1).map(|s| s.to_string()).collect();
        let mut timestamps = Vec::new();
        let mut rows = Vec::new();
        for (lineno, record) in reader.records().enumerate() {
            let record = record?;
            if record.len() != columns.len() + 1 {
                return Err(Error::Data(format!(
                    "{} row {}: {} fields, expected {}",
                    path.display(),
                    lineno + 2,
                    record.len(),
                    columns.len() + 1
                )));
            }
            let ts: i64 = record[0].trim().parse().map_err(|e| {
                Error::Data(format!(
                    "{} row {}: bad timestamp '{}': {e}",
                    path.display(),
                    lineno + 2,
                    &record[0]
                ))
            })?;
            let mut cells = Vec::with_capacity(columns.len());
            for (j, field) in record.iter().skip(1).enumerate() {
                let field = field.trim();
                if field.is_empty() {
                    cells.push(None);
                } else {
                    let v: f32 = field.parse().map_err(|e| {
                        Error::Data(format!(
                            "{} row {} col '{}': bad value '{field}': {e}",
                            path.display(),
                            lineno + 2,
                            columns[j]
                        ))
                    })?;
                    if !v.is_finite() {
                        return Err(Error::Data(format!(
                            "{} row {}: non-finite value in '{}'",
                            path.display(),
                            lineno + 2,
                            columns[j]
                        )));
                    }
                    cells.push(Some(v));
                }
            }
            timestamps.push(ts);
            rows.push(cells);
        }
        Self::new(timestamps, columns, rows)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(out, "timestamp_ms")?;
        for c in &self.columns {
            write!(out, ",{c}")?;
        }
        writeln!(out)?;
        for (ts, row) in self.timestamps.iter().zip(&self.rows) {
            write!(out, "{ts}")?;
            for cell in row {
                match cell {
                    Some(v) => write!(out, ",{v}")?,
                    None => write!(out, ",")?,
                }
            }
            writeln!(out)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Per-channel raw event streams: unaligned (timestamp, value) measurements
/// sorted by timestamp, one stream per KPI.
#[derive(Debug, Clone)]
pub struct RawStreams {
    pub channels: Vec<String>,
    pub events: Vec<Vec<(i64, f32)>>,
}

impl RawStreams {
    pub fn new(channels: Vec<String>, events: Vec<Vec<(i64, f32)>>) -> Result<Self> {
        if channels.len() != events.len() {
            return Err(Error::Data(format!(
                "{} channels for {} streams",
                channels.len(),
                events.len()
            )));
        }
        for (name, stream) in channels.iter().zip(&events) {
            if stream.windows(2).any(|w| w[0].0 > w[1].0) {
                return Err(Error::Data(format!(
                    "stream '{name}' not sorted by timestamp"
                )));
            }
        }
        Ok(Self { channels, events })
    }

    /// Interprets raw CSV rows as events: each present cell of a row is one
    /// event for that channel at the row's timestamp.
    pub fn from_frame(frame: &KpiFrame) -> Self {
        let mut events = vec![Vec::new(); frame.k()];
        for (ts, row) in frame.timestamps.iter().zip(&frame.rows) {
            for (j, cell) in row.iter().enumerate() {
                if let Some(v) = cell {
                    events[j].push((*ts, *v));
                }
            }
        }
        Self {
            channels: frame.columns.clone(),
            events,
        }
    }

    /// Latest event timestamp across all streams.
    pub fn last_timestamp(&self) -> Option<i64> {
        self.events
            .iter()
            .filter_map(|s| s.last().map(|e| e.0))
            .max()
    }

    /// Earliest event timestamp across all streams.
    pub fn first_timestamp(&self) -> Option<i64> {
        self.events
            .iter()
            .filter_map(|s| s.first().map(|e| e.0))
            .min()
    }
}
