//! The pseudo PCIe device the host exposes to driver code.

use std::time::{Duration, Instant};

use log::{debug, warn};

use super::link::{recv_until, HostLink, LinkError};
use super::memory::{BarConfig, GuestMemory, MsiConfig};
use super::HostError;
use crate::devsim::all_ones;
use crate::proto::{ChannelId, Status, TagAllocator, WireMessage};

type MsiHandler = Box<dyn FnMut(u16)>;

/// Per-vector interrupt callbacks and delivery telemetry.
pub struct MsiHandlerTable {
    handlers: Vec<Option<MsiHandler>>,
    delivered: Vec<u64>,
    spurious: u64,
}

impl MsiHandlerTable {
    fn new(config: MsiConfig) -> Self {
        let n = config.vector_count() as usize;
        MsiHandlerTable { handlers: (0..n).map(|_| None).collect(), delivered: vec![0; n], spurious: 0 }
    }

    fn dispatch(&mut self, vector: u16) {
        match self.handlers.get_mut(vector as usize) {
            Some(Some(h)) => {
                self.delivered[vector as usize] += 1;
                h(vector);
            }
            _ => self.spurious += 1,
        }
    }

    /// Interrupts handled on `vector` so far.
    pub fn delivered(&self, vector: u16) -> u64 {
        self.delivered.get(vector as usize).copied().unwrap_or(0)
    }

    pub fn spurious(&self) -> u64 {
        self.spurious
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HostStats {
    pub mmio_reads: u64,
    pub mmio_writes: u64,
    /// MMIO reads answered with all-ones because of an error status or disconnect.
    pub mmio_read_failures: u64,
    pub dma_reads: u64,
    pub dma_read_errors: u64,
    pub dma_writes: u64,
    pub dma_write_errors: u64,
    pub interrupts: u64,
    pub disconnects: u64,
}

pub struct PseudoDevice<L> {
    link: L,
    connected: bool,
    memory: GuestMemory,
    bars: BarConfig,
    msi: MsiHandlerTable,
    tags: TagAllocator,
    stats: HostStats,
    read_timeout: Option<Duration>,
}

impl<L: HostLink> PseudoDevice<L> {
    pub fn new(link: L, memory: GuestMemory, bars: BarConfig, msi: MsiConfig) -> Self {
        PseudoDevice {
            link,
            connected: true,
            memory,
            bars,
            msi: MsiHandlerTable::new(msi),
            tags: TagAllocator::default(),
            stats: HostStats::default(),
            read_timeout: None,
        }
    }

    /// Bounds how long an MMIO read may wait; unbounded by default.
    pub fn set_read_timeout(&mut self, timeout: Option<Duration>) {
        self.read_timeout = timeout;
    }

    pub fn memory(&self) -> &GuestMemory {
        &self.memory
    }

    pub fn memory_mut(&mut self) -> &mut GuestMemory {
        &mut self.memory
    }

    pub fn link(&self) -> &L {
        &self.link
    }

    pub fn link_mut(&mut self) -> &mut L {
        &mut self.link
    }

    pub fn stats(&self) -> &HostStats {
        &self.stats
    }

    pub fn msi(&self) -> &MsiHandlerTable {
        &self.msi
    }

    pub fn is_connected(&self) -> bool {
        self.connected
    }

    /// Installs a fresh link after a reconnect and returns the old one.
    pub fn replace_link(&mut self, link: L) -> L {
        self.connected = true;
        std::mem::replace(&mut self.link, link)
    }

    pub fn register_msi(&mut self, vector: u16, handler: impl FnMut(u16) + 'static) -> Result<(), HostError> {
        let slot = self
            .msi
            .handlers
            .get_mut(vector as usize)
            .ok_or_else(|| HostError::Precondition(format!("MSI vector {vector} not configured")))?;
        *slot = Some(Box::new(handler));
        Ok(())
    }

    fn check_access(&self, bar: u8, offset: u64, len: usize) -> Result<(), HostError> {
        let size = self.bars.size_of(bar).ok_or_else(|| HostError::Precondition(format!("no BAR{bar}")))?;
        if len != 4 && len != 8 {
            return Err(HostError::Precondition(format!("MMIO access of {len} bytes")));
        }
        if offset.checked_add(len as u64).is_none_or(|end| end > size) {
            return Err(HostError::Precondition(format!("BAR{bar} offset {offset:#x} + {len} outside {size:#x}")));
        }
        Ok(())
    }

    fn link_failed(&mut self, err: LinkError) -> Result<(), HostError> {
        match err {
            LinkError::Disconnected(reason) => {
                if self.connected {
                    warn!("device disconnected: {reason}");
                    self.connected = false;
                    self.stats.disconnects += 1;
                }
                Ok(())
            }
            other => Err(HostError::Link(other)),
        }
    }

    /// Reads `len` bytes of a BAR through the device.
    ///
    /// Device requests arriving while the read is outstanding are serviced
    /// in the meantime. An error status or a disconnect yields all-ones.
    pub fn mmio_read(&mut self, bar: u8, offset: u64, len: u32) -> Result<Vec<u8>, HostError> {
        self.check_access(bar, offset, len as usize)?;
        self.stats.mmio_reads += 1;
        if !self.connected {
            self.stats.mmio_read_failures += 1;
            return Ok(all_ones(len));
        }
        let tag = self.tags.next_tag();
        if let Err(e) = self.link.send(ChannelId::H2dReq, &WireMessage::MmioReadReq { bar, offset, len, tag }) {
            self.link_failed(e)?;
            self.stats.mmio_read_failures += 1;
            return Ok(all_ones(len));
        }
        let deadline = self.read_timeout.map(|t| Instant::now() + t);
        loop {
            let received = match recv_until(&mut self.link, deadline) {
                Ok(Some(m)) => m,
                Ok(None) => return Err(HostError::Timeout(format!("MMIO read BAR{bar}+{offset:#x}"))),
                Err(e) => {
                    self.link_failed(e)?;
                    warn!("MMIO read BAR{bar}+{offset:#x} aborted by disconnect");
                    self.stats.mmio_read_failures += 1;
                    return Ok(all_ones(len));
                }
            };
            match received {
                (ChannelId::H2dResp, WireMessage::MmioReadResp { tag: got, status, data }) => {
                    if got != tag {
                        return Err(HostError::Protocol(format!("MMIO response tag {got}, expected {tag}")));
                    }
                    if status != Status::Ok || data.len() != len as usize {
                        warn!("MMIO read BAR{bar}+{offset:#x} failed with {status:?}");
                        self.stats.mmio_read_failures += 1;
                        return Ok(all_ones(len));
                    }
                    return Ok(data);
                }
                (ch, msg) => self.handle_device_request(ch, msg)?,
            }
        }
    }

    /// Posts a write to a BAR. Dropped with a log line while disconnected.
    pub fn mmio_write(&mut self, bar: u8, offset: u64, data: &[u8]) -> Result<(), HostError> {
        self.check_access(bar, offset, data.len())?;
        self.stats.mmio_writes += 1;
        if !self.connected {
            debug!("MMIO write BAR{bar}+{offset:#x} dropped while disconnected");
            return Ok(());
        }
        let msg = WireMessage::MmioWriteReq { bar, offset, len: data.len() as u32, data: data.to_vec() };
        if let Err(e) = self.link.send(ChannelId::H2dReq, &msg) {
            self.link_failed(e)?;
        }
        Ok(())
    }

    pub fn read32(&mut self, offset: u64) -> Result<u32, HostError> {
        let b = self.mmio_read(0, offset, 4)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn read64(&mut self, offset: u64) -> Result<u64, HostError> {
        let b = self.mmio_read(0, offset, 8)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn write32(&mut self, offset: u64, value: u32) -> Result<(), HostError> {
        self.mmio_write(0, offset, &value.to_le_bytes())
    }

    pub fn write64(&mut self, offset: u64, value: u64) -> Result<(), HostError> {
        self.mmio_write(0, offset, &value.to_le_bytes())
    }

    fn handle_device_request(&mut self, channel: ChannelId, msg: WireMessage) -> Result<(), HostError> {
        match (channel, msg) {
            (ChannelId::D2hReq, WireMessage::HostMemReadReq { addr, len, tag }) => {
                self.stats.dma_reads += 1;
                let (status, data) = match self.memory.read(addr, len) {
                    Ok(d) => (Status::Ok, d),
                    Err(s) => {
                        self.stats.dma_read_errors += 1;
                        (s, Vec::new())
                    }
                };
                if let Err(e) = self.link.send(ChannelId::D2hResp, &WireMessage::HostMemReadResp { tag, status, data })
                {
                    self.link_failed(e)?;
                }
            }
            (ChannelId::D2hReq, WireMessage::HostMemWriteReq { addr, data, .. }) => {
                self.stats.dma_writes += 1;
                if self.memory.write(addr, &data).is_err() {
                    warn!("device write of {} bytes at {addr:#x} outside guest memory", data.len());
                    self.stats.dma_write_errors += 1;
                }
            }
            (ChannelId::D2hReq, WireMessage::InterruptReq { vector }) => {
                self.stats.interrupts += 1;
                self.msi.dispatch(vector);
            }
            (ch, msg) => return Err(HostError::Protocol(format!("unexpected {} on {ch}", msg.kind()))),
        }
        Ok(())
    }

    /// Services device-originated requests that are already available.
    ///
    /// With `blocking`, first waits for at least one message (or a
    /// disconnect). Returns the number of messages handled.
    pub fn serve_device_requests(&mut self, blocking: bool) -> Result<usize, HostError> {
        self.serve(blocking.then_some(None))
    }

    /// Like [`serve_device_requests`](Self::serve_device_requests) but waits at most `timeout`.
    pub fn serve_for(&mut self, timeout: Duration) -> Result<usize, HostError> {
        self.serve(Some(Some(Instant::now() + timeout)))
    }

    fn serve(&mut self, wait: Option<Option<Instant>>) -> Result<usize, HostError> {
        if !self.connected {
            return Ok(0);
        }
        let mut handled = 0;
        if let Some(deadline) = wait {
            match recv_until(&mut self.link, deadline) {
                Ok(Some((ch, msg))) => {
                    self.handle_device_request(ch, msg)?;
                    handled += 1;
                }
                Ok(None) => return Ok(0),
                Err(e) => {
                    self.link_failed(e)?;
                    return Ok(0);
                }
            }
        }
        loop {
            match self.link.recv(Some(Duration::ZERO)) {
                Ok(Some((ch, msg))) => {
                    self.handle_device_request(ch, msg)?;
                    handled += 1;
                }
                Ok(None) => return Ok(handled),
                Err(e) => {
                    self.link_failed(e)?;
                    return Ok(handled);
                }
            }
        }
    }

    /// Services requests until an interrupt on `vector` has been handled
    /// or `timeout` passes. Returns whether the interrupt arrived.
    pub fn wait_for_interrupt(&mut self, vector: u16, timeout: Duration) -> Result<bool, HostError> {
        let before = self.msi.delivered(vector);
        let deadline = Instant::now() + timeout;
        while self.msi.delivered(vector) == before {
            let now = Instant::now();
            if now >= deadline || !self.connected {
                return Ok(false);
            }
            self.serve_for(deadline - now)?;
        }
        Ok(true)
    }
}
