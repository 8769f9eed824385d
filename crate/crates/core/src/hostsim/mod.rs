//! Host-side emulation: guest memory, the pseudo device with its BARs and
//! MSI vectors, and the driver scenarios.

mod device;
mod link;
mod memory;
pub mod scenario;

use thiserror::Error;

pub use device::{HostStats, MsiHandlerTable, PseudoDevice};
pub use link::{CheckedLink, HostLink, LinkError, LockstepLink, SocketHostLink};
pub use memory::{BarConfig, GuestMemory, MsiConfig, DEFAULT_MEM_SIZE, PAGE_SIZE};
pub use scenario::{
    generate_input, measure_mmio_rtt, rtt_scenario, sort_offload, RttStats, ScenarioReport, SortOffload,
};

#[derive(Debug, Error)]
pub enum HostError {
    #[error("invalid configuration: {0}")]
    Config(String),
    /// An access rejected locally without reaching the device.
    #[error("rejected access: {0}")]
    Precondition(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("timed out: {0}")]
    Timeout(String),
    #[error(transparent)]
    Link(#[from] LinkError),
}
