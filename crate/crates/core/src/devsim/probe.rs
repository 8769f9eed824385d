//! A small platform whose MMIO reads depend on host memory.
//!
//! Reading DATA makes the platform fetch four bytes of host memory at ADDR
//! before it can answer, so the host must keep servicing device requests
//! while its own MMIO read is blocked.

use super::{all_ones, BusPort, MmioRead, Platform};

/// Host address to fetch, low word (RW).
pub const PROBE_ADDR: u64 = 0x00;
/// High word of the fetch address (RW).
pub const PROBE_ADDR_HI: u64 = 0x04;
/// Four bytes of host memory at the fetch address (RO).
pub const PROBE_DATA: u64 = 0x08;
/// Number of completed fetches (RO).
pub const PROBE_FETCHES: u64 = 0x0C;

#[derive(Debug, Default)]
pub struct ProbePlatform {
    addr: u64,
    fetch: Option<u64>,
    waiting: bool,
    answer: Option<Vec<u8>>,
    fetches: u32,
}

impl ProbePlatform {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn fetches(&self) -> u32 {
        self.fetches
    }
}

impl Platform for ProbePlatform {
    fn mmio_read(&mut self, _cycle: u64, bar: u8, offset: u64, len: u32) -> MmioRead {
        if bar != 0 || len != 4 {
            return MmioRead::Ready(all_ones(len));
        }
        let word = match offset {
            PROBE_ADDR => self.addr as u32,
            PROBE_ADDR_HI => (self.addr >> 32) as u32,
            PROBE_FETCHES => self.fetches,
            PROBE_DATA => {
                self.fetch = Some(self.addr);
                return MmioRead::Pending;
            }
            _ => u32::MAX,
        };
        MmioRead::Ready(word.to_le_bytes().to_vec())
    }

    fn poll_mmio_read(&mut self) -> Option<Vec<u8>> {
        self.answer.take()
    }

    fn mmio_write(&mut self, _cycle: u64, bar: u8, offset: u64, data: &[u8]) -> bool {
        if bar != 0 || data.len() != 4 {
            return false;
        }
        let v = u32::from_le_bytes(data.try_into().unwrap()) as u64;
        match offset {
            PROBE_ADDR => self.addr = (self.addr & !0xFFFF_FFFF) | v,
            PROBE_ADDR_HI => self.addr = (self.addr & 0xFFFF_FFFF) | (v << 32),
            PROBE_DATA | PROBE_FETCHES => {}
            _ => return false,
        }
        true
    }

    fn step(&mut self, cycle: u64, port: &mut dyn BusPort) {
        if let Some(c) = port.poll_completion(cycle) {
            self.waiting = false;
            self.fetches += 1;
            self.answer = Some(if c.status.is_ok() { c.data } else { all_ones(4) });
        }
        if !self.waiting && port.can_submit_read() {
            if let Some(addr) = self.fetch.take() {
                port.submit_read(cycle, addr, 4);
                self.waiting = true;
            }
        }
    }

    fn quiescent(&self) -> bool {
        !self.waiting && self.fetch.is_none() && self.answer.is_none()
    }
}
