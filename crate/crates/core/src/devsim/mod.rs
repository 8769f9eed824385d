//! Device-side simulation: the cycle kernel, the bridge that replaces the
//! PCIe block, and the bus port contract platforms are written against.

mod bridge;
mod kernel;
mod link;
mod platform;
mod port;
pub mod probe;

pub use bridge::{Bridge, BridgeStats, BusActivity};
pub use kernel::{
    KernelConfig, KernelError, KernelStats, RunMode, RunUntil, SimKernel, DEFAULT_IDLE_THRESHOLD, DEFAULT_POLL_BUDGET,
};
pub use link::{DeviceLink, LinkEvent, LoopbackLink, SocketDeviceLink};
pub use platform::{all_ones, MmioRead, Platform};
pub use port::{BusCompletion, BusOp, BusPort, DirectMemoryPort, InterruptPins};
pub use probe::ProbePlatform;
