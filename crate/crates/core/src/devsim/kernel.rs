//! The cycle kernel.
//!
//! Each call to [`SimKernel::step`] evaluates one clock cycle in a fixed
//! order: bridge channel poll, register file (MMIO service), the
//! platform's DMA and sorter, end-of-cycle interrupt latch and message
//! flush, then trace sampling.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Duration;

use thiserror::Error;

use super::bridge::{Bridge, BridgeStats};
use super::link::{DeviceLink, LinkEvent};
use super::Platform;
use crate::proto::{ChannelId, WireMessage};
use crate::trace::{EventLog, EventPayload, SignalDef, SignalId, TraceError, TraceEvent, VcdWriter};

pub const DEFAULT_POLL_BUDGET: u16 = 8;
pub const DEFAULT_IDLE_THRESHOLD: u64 = 1024;

#[derive(Debug, Clone)]
pub struct KernelConfig {
    /// Messages consumed per input channel per cycle.
    pub poll_budget: u16,
    pub idle_block: bool,
    /// Quiescent cycles before a free-running kernel blocks.
    pub idle_threshold: u64,
    pub msi_vectors: u16,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            poll_budget: DEFAULT_POLL_BUDGET,
            idle_block: true,
            idle_threshold: DEFAULT_IDLE_THRESHOLD,
            msi_vectors: 1,
        }
    }
}

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    FreeRun,
    Lockstep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunUntil {
    /// Stop once the cycle counter reaches this value.
    Cycles(u64),
    Shutdown,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KernelStats {
    pub consumed: [u64; 4],
    pub sent: [u64; 4],
    pub sessions: u64,
    pub disconnects: u64,
    /// Times the kernel blocked waiting for the link.
    pub idle_blocks: u64,
}

struct VcdTrace {
    writer: VcdWriter<Box<dyn Write + Send>>,
    ids: Vec<SignalId>,
}

fn kernel_signals() -> Vec<SignalDef> {
    vec![
        SignalDef::wire("top.bridge.h2d_req_valid", 1),
        SignalDef::wire("top.bridge.h2d_resp_valid", 1),
        SignalDef::wire("top.bridge.d2h_req_valid", 1),
        SignalDef::wire("top.bridge.d2h_resp_valid", 1),
        SignalDef::integer("top.bridge.outstanding", 7),
        SignalDef::wire("top.bus.valid", 1),
        SignalDef::wire("top.bus.addr", 64),
        SignalDef::wire("top.bus.data", 64),
        SignalDef::wire("top.irq", 1),
    ]
}

pub struct SimKernel<P: Platform, L: DeviceLink> {
    config: KernelConfig,
    cycle: u64,
    platform: P,
    link: L,
    bridge: Bridge,
    h2d_req: VecDeque<WireMessage>,
    d2h_resp: VecDeque<WireMessage>,
    events: Vec<LinkEvent>,
    quiet_cycles: u64,
    stats: KernelStats,
    vcd: Option<VcdTrace>,
    log: Option<EventLog>,
    samples: Vec<u64>,
}

impl<P: Platform, L: DeviceLink> SimKernel<P, L> {
    pub fn new(config: KernelConfig, platform: P, link: L) -> Self {
        assert!(config.poll_budget > 0, "poll budget must be positive");
        let bridge = Bridge::new(config.msi_vectors);
        SimKernel {
            config,
            cycle: 0,
            platform,
            link,
            bridge,
            h2d_req: VecDeque::new(),
            d2h_resp: VecDeque::new(),
            events: Vec::new(),
            quiet_cycles: 0,
            stats: KernelStats::default(),
            vcd: None,
            log: None,
            samples: Vec::new(),
        }
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn platform(&self) -> &P {
        &self.platform
    }

    pub fn platform_mut(&mut self) -> &mut P {
        &mut self.platform
    }

    pub fn link(&self) -> &L {
        &self.link
    }

    pub fn link_mut(&mut self) -> &mut L {
        &mut self.link
    }

    pub fn bridge_stats(&self) -> &BridgeStats {
        self.bridge.stats()
    }

    pub fn stats(&self) -> &KernelStats {
        &self.stats
    }

    pub fn is_connected(&self) -> bool {
        self.bridge.is_connected()
    }

    /// Starts waveform recording into `out`.
    pub fn attach_vcd(&mut self, out: Box<dyn Write + Send>, timescale: &str) -> Result<(), TraceError> {
        let mut writer = VcdWriter::begin(out, timescale);
        let mut ids = Vec::new();
        for def in kernel_signals() {
            ids.push(writer.define(def)?);
        }
        for def in self.platform.signals() {
            ids.push(writer.define(SignalDef { name: format!("top.{}", def.name), ..def })?);
        }
        self.vcd = Some(VcdTrace { writer, ids });
        Ok(())
    }

    pub fn attach_vcd_file(&mut self, path: &Path, timescale: &str) -> Result<(), TraceError> {
        let file = BufWriter::new(File::create(path)?);
        self.attach_vcd(Box::new(file), timescale)
    }

    pub fn attach_log(&mut self, log: EventLog) {
        self.log = Some(log);
    }

    pub fn event_log(&self) -> Option<&EventLog> {
        self.log.as_ref()
    }

    /// Ends the waveform and flushes the event log. The log stays attached.
    pub fn finish_trace(&mut self) -> Result<(), TraceError> {
        if let Some(v) = self.vcd.take() {
            v.writer.end()?;
        }
        if let Some(log) = self.log.as_mut() {
            log.flush()?;
        }
        Ok(())
    }

    pub fn take_log(&mut self) -> Option<EventLog> {
        self.log.take()
    }

    fn record(&mut self, payload: EventPayload) {
        if let Some(log) = self.log.as_mut() {
            log.log_event(&TraceEvent { cycle: self.cycle, payload });
        }
    }

    fn pump_link(&mut self) -> Result<(), KernelError> {
        self.link.poll(&mut self.events);
        for ev in std::mem::take(&mut self.events) {
            match ev {
                LinkEvent::Up => {
                    self.stats.sessions += 1;
                    self.bridge.on_connect();
                    self.record(EventPayload::Note { component: "bridge", text: "host connected".into() });
                }
                LinkEvent::Down(reason) => {
                    self.stats.disconnects += 1;
                    self.h2d_req.clear();
                    self.d2h_resp.clear();
                    self.bridge.on_disconnect();
                    self.record(EventPayload::Note {
                        component: "bridge",
                        text: format!("host disconnected: {reason}"),
                    });
                }
                LinkEvent::ProtocolError(e) => return Err(KernelError::Protocol(e)),
                LinkEvent::Message(ChannelId::H2dReq, msg) => self.h2d_req.push_back(msg),
                LinkEvent::Message(ChannelId::D2hResp, msg) => self.d2h_resp.push_back(msg),
                LinkEvent::Message(ch, msg) => {
                    return Err(KernelError::Protocol(format!("{} received on device-sent channel {ch}", msg.kind())))
                }
            }
        }
        Ok(())
    }

    /// Advances the simulation by exactly one cycle.
    pub fn step(&mut self) -> Result<(), KernelError> {
        let now = self.cycle;
        self.pump_link()?;

        // (1) bridge channel poll
        let budget = self.config.poll_budget as usize;
        let mut consumed = [false; 4];
        for _ in 0..budget {
            let Some(msg) = self.h2d_req.pop_front() else { break };
            consumed[ChannelId::H2dReq.index()] = true;
            self.stats.consumed[ChannelId::H2dReq.index()] += 1;
            self.record(EventPayload::Message { channel: ChannelId::H2dReq, msg: msg.clone() });
            self.bridge.accept_mmio(now, msg);
        }
        for _ in 0..budget {
            let Some(msg) = self.d2h_resp.pop_front() else { break };
            consumed[ChannelId::D2hResp.index()] = true;
            self.stats.consumed[ChannelId::D2hResp.index()] += 1;
            self.record(EventPayload::Message { channel: ChannelId::D2hResp, msg: msg.clone() });
            self.bridge.accept_host_response(msg).map_err(KernelError::Protocol)?;
        }

        // (2) register file, (3) DMA, (4) sorter
        self.bridge.service_mmio(now, &mut self.platform);
        self.platform.step(now, &mut self.bridge);
        self.bridge.collect_deferred(&mut self.platform);
        for payload in self.platform.take_events() {
            self.record(payload);
        }

        // end of cycle: interrupt edges and outgoing messages
        self.bridge.latch_interrupts();
        let mut sent = [false; 4];
        for (channel, msg) in self.bridge.take_outbox() {
            sent[channel.index()] = true;
            self.stats.sent[channel.index()] += 1;
            self.link.send(channel, &msg);
            self.record(EventPayload::Message { channel, msg });
        }

        // (5) trace sampling
        let activity = self.bridge.take_activity();
        if let Some(vcd) = self.vcd.as_mut() {
            self.samples.clear();
            self.samples.extend([
                consumed[ChannelId::H2dReq.index()] as u64,
                sent[ChannelId::H2dResp.index()] as u64,
                sent[ChannelId::D2hReq.index()] as u64,
                consumed[ChannelId::D2hResp.index()] as u64,
                self.bridge.outstanding_reads() as u64,
                activity.is_some() as u64,
                activity.map_or(0, |a| a.addr),
                activity.map_or(0, |a| a.data),
                self.bridge.irq_level() as u64,
            ]);
            self.platform.sample(&mut self.samples);
            debug_assert_eq!(self.samples.len(), vcd.ids.len());
            for (id, value) in vcd.ids.iter().zip(&self.samples) {
                vcd.writer.change(now, *id, *value)?;
            }
        }

        let active = consumed.iter().chain(&sent).any(|&b| b);
        if active || !self.bridge.quiescent() || !self.platform.quiescent() {
            self.quiet_cycles = 0;
        } else {
            self.quiet_cycles += 1;
        }
        self.cycle += 1;
        Ok(())
    }

    /// Steps until `until` is reached or `shutdown` is raised. Returns the final cycle.
    ///
    /// In free-run mode with idle blocking, a kernel that has been quiescent
    /// for the configured threshold waits on the link without advancing the
    /// cycle counter.
    pub fn run(&mut self, mode: RunMode, until: RunUntil, shutdown: &AtomicBool) -> Result<u64, KernelError> {
        loop {
            if shutdown.load(Ordering::Relaxed) {
                break;
            }
            if let RunUntil::Cycles(n) = until {
                if self.cycle >= n {
                    break;
                }
            }
            if mode == RunMode::FreeRun
                && self.config.idle_block
                && self.quiet_cycles >= self.config.idle_threshold
                && self.h2d_req.is_empty()
                && self.d2h_resp.is_empty()
            {
                self.stats.idle_blocks += 1;
                while !shutdown.load(Ordering::Relaxed) && !self.link.wait(Duration::from_millis(50)) {}
                self.quiet_cycles = 0;
                continue;
            }
            self.step()?;
        }
        Ok(self.cycle)
    }
}
