use super::BusPort;
use crate::trace::{EventPayload, SignalDef};

/// Everything the simulation kernel hosts behind the bridge.
///
/// MMIO accesses arrive from the bridge one cycle after the request was
/// consumed; `step` then evaluates the remaining components for the cycle.
pub trait Platform {
    /// Serves an MMIO read. Undecoded or misaligned locations read as all-ones.
    fn mmio_read(&mut self, cycle: u64, bar: u8, offset: u64, len: u32) -> MmioRead;

    /// Completion of the oldest read answered with [`MmioRead::Pending`].
    fn poll_mmio_read(&mut self) -> Option<Vec<u8>> {
        None
    }

    /// Applies an MMIO write. Returns `false` when the target is not decoded.
    fn mmio_write(&mut self, cycle: u64, bar: u8, offset: u64, data: &[u8]) -> bool;

    fn step(&mut self, cycle: u64, port: &mut dyn BusPort);

    /// No job running and nothing in flight inside the platform.
    fn quiescent(&self) -> bool;

    /// Traced signals, named relative to the top scope.
    fn signals(&self) -> Vec<SignalDef> {
        Vec::new()
    }

    /// Current values of [`signals`](Self::signals), in the same order.
    fn sample(&self, _out: &mut Vec<u64>) {}

    /// State transitions since the last call, for the event log.
    fn take_events(&mut self) -> Vec<EventPayload> {
        Vec::new()
    }
}

/// Result of an MMIO read presented to the platform.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MmioRead {
    Ready(Vec<u8>),
    /// The data needs more cycles; it is delivered through `poll_mmio_read`.
    Pending,
}

/// Fills `len` bytes with the all-ones poison value.
pub fn all_ones(len: u32) -> Vec<u8> {
    vec![0xFF; len as usize]
}
