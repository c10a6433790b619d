use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Whether a channel carries continuous measurements or a discrete index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelKind {
    Continuous,
    DiscreteIndex,
}

/// One named KPI channel with its unit and plausible observed range.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelDesc {
    pub name: String,
    pub unit: String,
    pub kind: ChannelKind,
    pub min: f64,
    pub max: f64,
}

/// Ordered channel set for a KPI frame. The default is the 13-channel
/// O-RAN telemetry schema; custom schemas may declare any K >= 1 channels
/// and optionally name a delay channel that receives the -1 imputation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KpiSchema {
    pub channels: Vec<ChannelDesc>,
    /// Channel whose lone missing value is imputed with -1 instead of
    /// dropping the row. None disables imputation.
    #[serde(default)]
    pub delay_channel: Option<String>,
}

impl KpiSchema {
    /// The default 13-channel O-RAN KPI schema.
    pub fn oran_13() -> Self {
        let mk = |name: &str, unit: &str, kind: ChannelKind, min: f64, max: f64| ChannelDesc {
            name: name.to_string(),
            unit: unit.to_string(),
            kind,
            min,
            max,
        };
        use ChannelKind::*;
        KpiSchema {
            channels: vec![
                mk("Spectral Efficiency", "bps/Hz", Continuous, 0.0, 3.74),
                mk("RSRP", "dBm", Continuous, -102.0, -75.0),
                mk("SINR", "dB", Continuous, 9.43, 24.33),
                mk("MIMO Rank", "-", DiscreteIndex, 1.0, 2.0),
                mk("MCS", "index", DiscreteIndex, 0.0, 27.0),
                mk("RB Number", "RBs", DiscreteIndex, 2.0, 25.0),
                mk("CQI", "index", DiscreteIndex, 0.0, 13.0),
                mk("RSRQ", "dB", Continuous, -14.0, -6.4),
                mk("PMI", "index", DiscreteIndex, 0.0, 3.0),
                mk("UE RSSI", "dBm", Continuous, -70.0, -60.0),
                mk("UE Buffer Status", "bytes", Continuous, 0.0, 2944.0),
                mk("BLER", "%", Continuous, 0.0, 78.0),
                mk("Packet Delay", "ms", Continuous, 0.0, 3048.06),
            ],
            delay_channel: Some("Packet Delay".to_string()),
        }
    }

    /// A minimal schema over bare channel names (synthetic data).
    pub fn from_names(names: &[&str]) -> Self {
        KpiSchema {
            channels: names
                .iter()
                .map(|n| ChannelDesc {
                    name: n.to_string(),
                    unit: String::new(),
                    kind: ChannelKind::Continuous,
                    min: f64::NEG_INFINITY,
                    max: f64::INFINITY,
                })
                .collect(),
            delay_channel: None,
        }
    }

    pub fn k(&self) -> usize {
        self.channels.len()
    }

    pub fn names(&self) -> Vec<String> {
        self.channels.iter().map(|c| c.name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c.name == name)
    }

    pub fn delay_index(&self) -> Option<usize> {
        self.delay_channel
            .as_deref()
            .and_then(|name| self.index_of(name))
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(Error::Data("schema declares no channels".into()));
        }
        for c in &self.channels {
            if c.min > c.max {
                return Err(Error::Data(format!(
                    "channel '{}' has empty range [{}, {}]",
                    c.name, c.min, c.max
                )));
            }
        }
        let mut names: Vec<&str> = self.channels.iter().map(|c| c.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.channels.len() {
            return Err(Error::Data("duplicate channel name in schema".into()));
        }
        if let Some(d) = self.delay_channel.as_deref() {
            if self.index_of(d).is_none() {
                return Err(Error::Data(format!(
                    "delay_channel '{d}' not among schema channels"
                )));
            }
        }
        Ok(())
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let schema: KpiSchema = serde_json::from_str(&text)?;
        schema.validate()?;
        Ok(schema)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schema_has_13_channels() {
        let s = KpiSchema::oran_13();
        assert_eq!(s.k(), 13);
        s.validate().unwrap();
        assert_eq!(s.index_of("SINR"), Some(2));
        assert_eq!(s.delay_index(), Some(12));
        // Each observed range is non-empty.
        for c in &s.channels {
            assert!(c.min < c.max, "{}", c.name);
        }
    }

    #[test]
    fn rejects_duplicate_names() {
        let s = KpiSchema::from_names(&["a", "b", "a"]);
        assert!(s.validate().is_err());
    }

    #[test]
    fn rejects_unknown_delay_channel() {
        let mut s = KpiSchema::from_names(&["a", "b"]);
        s.delay_channel = Some("missing".into());
        assert!(s.validate().is_err());
    }
}
