//! The simulation bridge: the device-side end of the channel topology.
//!
//! Toward the platform it is a bus master for inbound MMIO and a bus
//! port (slave) for outbound host-memory traffic plus the interrupt pins.
//! Toward the host it turns those into protocol messages. Outgoing
//! messages collect in an outbox that the kernel flushes once per cycle.

use std::collections::VecDeque;

use super::port::{BusCompletion, BusOp, BusPort, CompletionQueue, InterruptPins, PendingCompletion};
use super::{MmioRead, Platform};
use crate::proto::{ChannelId, Status, TagAllocator, WireMessage, MAX_OUTSTANDING, MAX_PAYLOAD};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BridgeStats {
    pub mmio_read_reqs: u64,
    pub mmio_read_resps: u64,
    /// Read requests whose response could not be delivered because the host left.
    pub mmio_read_aborts: u64,
    pub mmio_writes: u64,
    pub dropped_writes: u64,
    pub host_reads: u64,
    pub host_writes: u64,
    pub aborted_host_reads: u64,
    pub interrupts_sent: u64,
    pub dropped_interrupts: u64,
}

#[derive(Debug)]
struct InboundMmio {
    consumed: u64,
    msg: WireMessage,
}

/// Transaction visible on the platform bus in the current cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BusActivity {
    pub addr: u64,
    pub data: u64,
}

#[derive(Debug)]
pub struct Bridge {
    msi_vectors: u16,
    connected: bool,
    tags: TagAllocator,
    outstanding: VecDeque<u32>,
    completions: CompletionQueue,
    mmio: VecDeque<InboundMmio>,
    deferred_tag: Option<u32>,
    pins: InterruptPins,
    irq_level: bool,
    outbox: Vec<(ChannelId, WireMessage)>,
    activity: Option<BusActivity>,
    stats: BridgeStats,
}

fn first_word(data: &[u8]) -> u64 {
    let mut buf = [0u8; 8];
    let n = data.len().min(8);
    buf[..n].copy_from_slice(&data[..n]);
    u64::from_le_bytes(buf)
}

impl Bridge {
    pub fn new(msi_vectors: u16) -> Self {
        Bridge {
            msi_vectors,
            connected: false,
            tags: TagAllocator::default(),
            outstanding: VecDeque::new(),
            completions: CompletionQueue::default(),
            mmio: VecDeque::new(),
            deferred_tag: None,
            pins: InterruptPins::default(),
            irq_level: false,
            outbox: Vec::new(),
            activity: None,
            stats: BridgeStats::default(),
        }
    }

    pub fn stats(&self) -> &BridgeStats {
        &self.stats
    }

    pub fn is_connected(&self) -> bool {
        self.connected
    }

    pub fn outstanding_reads(&self) -> usize {
        self.outstanding.len()
    }

    pub fn on_connect(&mut self) {
        self.connected = true;
    }

    /// Drops every exchange tied to the departed host.
    ///
    /// Outstanding host-memory reads complete with `DisconnectAbort`; MMIO
    /// requests not yet answered are counted as aborted responses.
    pub fn on_disconnect(&mut self) {
        self.connected = false;
        self.stats.aborted_host_reads += self.outstanding.len() as u64;
        self.outstanding.clear();
        self.completions.abort_all(Status::DisconnectAbort);
        let unanswered = self.mmio.iter().filter(|m| matches!(m.msg, WireMessage::MmioReadReq { .. })).count()
            + self.deferred_tag.is_some() as usize;
        self.stats.mmio_read_aborts += unanswered as u64;
        self.mmio.clear();
        self.deferred_tag = None;
        self.outbox.clear();
    }

    /// Stage 1: a request consumed from H2D_REQ in cycle `now`.
    pub fn accept_mmio(&mut self, now: u64, msg: WireMessage) {
        match msg {
            WireMessage::MmioReadReq { .. } => self.stats.mmio_read_reqs += 1,
            WireMessage::MmioWriteReq { .. } => self.stats.mmio_writes += 1,
            _ => unreachable!("channel discipline checked by the link"),
        }
        self.mmio.push_back(InboundMmio { consumed: now, msg });
    }

    /// Stage 1: a response consumed from D2H_RESP.
    pub fn accept_host_response(&mut self, msg: WireMessage) -> Result<(), String> {
        let WireMessage::HostMemReadResp { tag, status, data } = msg else {
            unreachable!("channel discipline checked by the link");
        };
        match self.outstanding.front() {
            Some(&front) if front == tag => {
                self.outstanding.pop_front();
                self.completions.resolve_tag(tag, status, data);
                Ok(())
            }
            front => Err(format!("host memory response tag {tag}, expected {front:?}")),
        }
    }

    /// Stage 2: presents due MMIO requests to the platform, in order.
    ///
    /// Requests consumed in an earlier cycle are applied now; a read the
    /// platform cannot answer yet blocks the ones behind it.
    pub fn service_mmio<P: Platform + ?Sized>(&mut self, now: u64, platform: &mut P) {
        self.collect_deferred(platform);
        while self.deferred_tag.is_none() {
            match self.mmio.front() {
                Some(m) if m.consumed < now => {}
                _ => break,
            }
            let InboundMmio { msg, .. } = self.mmio.pop_front().unwrap();
            match msg {
                WireMessage::MmioReadReq { bar, offset, len, tag } => {
                    self.activity = Some(BusActivity { addr: offset, data: 0 });
                    match platform.mmio_read(now, bar, offset, len) {
                        MmioRead::Ready(data) => self.respond_mmio(tag, data),
                        MmioRead::Pending => self.deferred_tag = Some(tag),
                    }
                }
                WireMessage::MmioWriteReq { bar, offset, data, .. } => {
                    self.activity = Some(BusActivity { addr: offset, data: first_word(&data) });
                    if !platform.mmio_write(now, bar, offset, &data) {
                        self.stats.dropped_writes += 1;
                    }
                }
                _ => unreachable!(),
            }
        }
    }

    /// Picks up a deferred read completion after the platform stepped.
    pub fn collect_deferred<P: Platform + ?Sized>(&mut self, platform: &mut P) {
        if let Some(tag) = self.deferred_tag {
            if let Some(data) = platform.poll_mmio_read() {
                self.deferred_tag = None;
                self.respond_mmio(tag, data);
            }
        }
    }

    fn respond_mmio(&mut self, tag: u32, data: Vec<u8>) {
        if !self.connected {
            self.stats.mmio_read_aborts += 1;
            return;
        }
        self.stats.mmio_read_resps += 1;
        self.outbox.push((ChannelId::H2dResp, WireMessage::MmioReadResp { tag, status: Status::Ok, data }));
    }

    /// End of cycle: turns rising interrupt edges into messages.
    pub fn latch_interrupts(&mut self) {
        self.irq_level = self.pins.any_high();
        for vector in self.pins.latch() {
            if vector >= self.msi_vectors || !self.connected {
                self.stats.dropped_interrupts += 1;
                continue;
            }
            self.stats.interrupts_sent += 1;
            self.outbox.push((ChannelId::D2hReq, WireMessage::InterruptReq { vector }));
        }
    }

    /// Level of the interrupt pin during the last latched cycle.
    pub fn irq_level(&self) -> bool {
        self.irq_level
    }

    pub fn take_outbox(&mut self) -> Vec<(ChannelId, WireMessage)> {
        std::mem::take(&mut self.outbox)
    }

    pub fn take_activity(&mut self) -> Option<BusActivity> {
        self.activity.take()
    }

    /// Nothing in flight in either direction.
    pub fn quiescent(&self) -> bool {
        self.mmio.is_empty()
            && self.deferred_tag.is_none()
            && self.completions.is_empty()
            && self.outbox.is_empty()
            && !self.pins.any_high()
    }
}

impl BusPort for Bridge {
    fn can_submit_read(&self) -> bool {
        self.outstanding.len() < MAX_OUTSTANDING
    }

    fn submit_read(&mut self, now: u64, addr: u64, len: u32) {
        assert!(len as usize <= MAX_PAYLOAD && len > 0, "bus read of {len} bytes must be split");
        self.activity = Some(BusActivity { addr, data: 0 });
        if !self.connected {
            self.stats.aborted_host_reads += 1;
            self.completions.push(PendingCompletion {
                op: BusOp::Read,
                addr,
                submitted: now,
                tag: None,
                done: Some((Status::DisconnectAbort, Vec::new())),
            });
            return;
        }
        let tag = self.tags.next_tag();
        self.outstanding.push_back(tag);
        self.stats.host_reads += 1;
        self.outbox.push((ChannelId::D2hReq, WireMessage::HostMemReadReq { addr, len, tag }));
        self.completions.push(PendingCompletion { op: BusOp::Read, addr, submitted: now, tag: Some(tag), done: None });
    }

    fn submit_write(&mut self, now: u64, addr: u64, data: Vec<u8>) {
        assert!(!data.is_empty() && data.len() <= MAX_PAYLOAD, "bus write of {} bytes must be split", data.len());
        self.activity = Some(BusActivity { addr, data: first_word(&data) });
        let status = if self.connected {
            self.stats.host_writes += 1;
            self.outbox.push((ChannelId::D2hReq, WireMessage::HostMemWriteReq { addr, len: data.len() as u32, data }));
            Status::Ok
        } else {
            Status::DisconnectAbort
        };
        self.completions.push(PendingCompletion {
            op: BusOp::Write,
            addr,
            submitted: now,
            tag: None,
            done: Some((status, Vec::new())),
        });
    }

    fn poll_completion(&mut self, now: u64) -> Option<BusCompletion> {
        self.completions.pop_ready(now)
    }

    fn drive_interrupt(&mut self, vector: u16) {
        self.pins.drive(vector);
    }

    fn in_flight(&self) -> usize {
        self.completions.len()
    }
}
