//! KPI preprocessing: moving-average timestamp alignment, the missing-value
//! policy with -1 delay imputation, one-pass IQR outlier pruning,
//! gap-checked sliding-window sequence construction, and per-channel
//! standardization with persisted scalers.

mod align;
mod filter;
mod frame;
mod scalers;
mod schema;
mod sequences;

pub use align::moving_average_align;
pub use filter::{iqr_bounds, pad_and_filter, FilterStats, IqrBounds};
pub use frame::{KpiFrame, RawStreams};
pub use scalers::{
    apply_scalers, apply_to_flat, fit_scalers, invert_on_flat, invert_scalers, read_scalers_json,
    write_scalers_json, Scaler,
};
pub use schema::{ChannelDesc, ChannelKind, KpiSchema};
pub use sequences::{build_sequences, consecutive_segments, SequenceDataset};
