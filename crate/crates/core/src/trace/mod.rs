//! Waveforms, structured event logs and time reports.

mod events;
mod report;
mod vcd;

use thiserror::Error;

pub use events::{EventLog, EventPayload, TraceEvent};
pub use report::{TimeReport, TimeRow, DEFAULT_CLOCK_PERIOD_NS};
pub use vcd::{SignalDef, SignalId, SignalKind, VcdWriter};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace usage error: {0}")]
    Usage(String),
    #[error("trace i/o: {0}")]
    Io(#[from] std::io::Error),
}
