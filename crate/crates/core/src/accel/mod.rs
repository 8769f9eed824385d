//! The device payload: BAR0 register file, streaming DMA, and sorter.

mod dma;
pub mod regs;
mod sorter;

pub use dma::{DmaEngine, DmaJob, DmaOutcome, DmaState, DEFAULT_BURST, DEFAULT_MAX_READS};
pub use sorter::{bitonic_stages, sorter_latency, SorterConfig, SorterError, StreamBeat, StreamingSorter};

use crate::devsim::{all_ones, BusPort, MmioRead, Platform};
use crate::trace::{EventPayload, SignalDef};
use regs::*;

/// Sorting offload platform hosted by the simulation kernel.
pub struct SortAccelerator {
    config: SorterConfig,
    src: u64,
    dst: u64,
    len_bytes: u32,
    done: bool,
    error: bool,
    irq_pending: bool,
    dma: DmaEngine,
    sorter: StreamingSorter,
    sorted: Option<StreamBeat>,
    last_out: Option<i32>,
    ignored_starts: u64,
    jobs: u64,
    events: Vec<EventPayload>,
    reported_state: DmaState,
}

impl SortAccelerator {
    pub fn new(config: SorterConfig) -> Self {
        Self::with_dma(config, DmaEngine::default())
    }

    pub fn with_dma(config: SorterConfig, dma: DmaEngine) -> Self {
        SortAccelerator {
            config,
            src: 0,
            dst: 0,
            len_bytes: 0,
            done: false,
            error: false,
            irq_pending: false,
            dma,
            sorter: StreamingSorter::new(config),
            sorted: None,
            last_out: None,
            ignored_starts: 0,
            jobs: 0,
            events: Vec::new(),
            reported_state: DmaState::Idle,
        }
    }

    pub fn config(&self) -> SorterConfig {
        self.config
    }

    pub fn status(&self) -> u32 {
        let mut s = 0;
        if self.dma.state() == DmaState::Running {
            s |= STATUS_BUSY;
        }
        if self.done {
            s |= STATUS_DONE;
        }
        if self.error {
            s |= STATUS_ERROR;
        }
        s
    }

    pub fn dma_state(&self) -> DmaState {
        self.dma.state()
    }

    /// START writes ignored because a job was already running.
    pub fn ignored_starts(&self) -> u64 {
        self.ignored_starts
    }

    /// START writes accepted, including those rejected for a bad length.
    pub fn jobs_started(&self) -> u64 {
        self.jobs
    }

    fn read_word(&self, cycle: u64, offset: u64) -> Option<u32> {
        let lo = |v: u64| v as u32;
        let hi = |v: u64| (v >> 32) as u32;
        Some(match offset {
            ID => ID_VALUE,
            SRC_ADDR => lo(self.src),
            0x0C => hi(self.src),
            DST_ADDR => lo(self.dst),
            0x14 => hi(self.dst),
            LEN_BYTES => self.len_bytes,
            CTRL | IRQ_ACK => 0,
            STATUS => self.status(),
            CYCLES => lo(cycle),
            0x3C => hi(cycle),
            N_ELEMS => self.config.n() as u32,
            LANES => self.config.w() as u32,
            LATENCY => self.sorter.latency(),
            _ => return None,
        })
    }

    /// Register-file read of `len` bytes; undecoded words read as all-ones.
    pub fn read_bytes(&self, cycle: u64, bar: u8, offset: u64, len: u32) -> Vec<u8> {
        let in_range = offset.checked_add(len as u64).is_some_and(|end| end <= BAR0_SIZE);
        if bar != 0 || !in_range || !offset.is_multiple_of(4) || !len.is_multiple_of(4) {
            return all_ones(len);
        }
        (0..len as u64 / 4)
            .flat_map(|i| self.read_word(cycle, offset + 4 * i).unwrap_or(u32::MAX).to_le_bytes())
            .collect()
    }

    fn write_word(&mut self, offset: u64, value: u32) -> bool {
        let set_lo = |reg: &mut u64, v: u32| *reg = (*reg & !0xFFFF_FFFF) | v as u64;
        let set_hi = |reg: &mut u64, v: u32| *reg = (*reg & 0xFFFF_FFFF) | ((v as u64) << 32);
        match offset {
            SRC_ADDR => set_lo(&mut self.src, value),
            0x0C => set_hi(&mut self.src, value),
            DST_ADDR => set_lo(&mut self.dst, value),
            0x14 => set_hi(&mut self.dst, value),
            LEN_BYTES => self.len_bytes = value,
            CTRL => {
                if value & CTRL_START != 0 {
                    self.start();
                }
            }
            IRQ_ACK => {
                if value & 1 != 0 {
                    self.done = false;
                    self.error = false;
                    self.dma.acknowledge();
                }
            }
            // read-only registers accept and ignore writes
            ID | STATUS | CYCLES | 0x3C | N_ELEMS | LANES | LATENCY => {}
            _ => return false,
        }
        true
    }

    fn start(&mut self) {
        if self.dma.state() == DmaState::Running {
            self.ignored_starts += 1;
            return;
        }
        self.jobs += 1;
        self.done = false;
        self.error = false;
        let job = DmaJob { src: self.src, dst: self.dst, len_bytes: self.len_bytes };
        if job.is_valid(self.config.n()) {
            self.dma.start(job);
        } else {
            self.error = true;
            self.irq_pending = true;
            self.events.push(EventPayload::Note {
                component: "dma",
                text: format!("rejected job with len_bytes {}", self.len_bytes),
            });
        }
    }
}

impl Platform for SortAccelerator {
    fn mmio_read(&mut self, cycle: u64, bar: u8, offset: u64, len: u32) -> MmioRead {
        MmioRead::Ready(self.read_bytes(cycle, bar, offset, len))
    }

    fn mmio_write(&mut self, _cycle: u64, bar: u8, offset: u64, data: &[u8]) -> bool {
        let in_range = offset.checked_add(data.len() as u64).is_some_and(|end| end <= BAR0_SIZE);
        if bar != 0 || !in_range || !offset.is_multiple_of(4) || !data.len().is_multiple_of(4) {
            return false;
        }
        let mut all_mapped = true;
        for (i, word) in data.chunks_exact(4).enumerate() {
            let value = u32::from_le_bytes(word.try_into().unwrap());
            all_mapped &= self.write_word(offset + 4 * i as u64, value);
        }
        all_mapped
    }

    fn step(&mut self, cycle: u64, port: &mut dyn BusPort) {
        if self.irq_pending {
            port.drive_interrupt(COMPLETION_VECTOR);
            self.irq_pending = false;
        }
        match self.dma.step(cycle, port, &mut self.sorter, self.sorted.take()) {
            DmaOutcome::Busy => {}
            DmaOutcome::Done => {
                self.done = true;
                port.drive_interrupt(COMPLETION_VECTOR);
            }
            DmaOutcome::Failed => {
                self.error = true;
                self.sorter.reset();
                port.drive_interrupt(COMPLETION_VECTOR);
            }
        }
        self.sorted = self.sorter.step();
        self.last_out = self.sorted.as_ref().map(|b| b.lanes[0]);
        if let Some(fault) = self.sorter.take_fault() {
            self.events.push(EventPayload::Note { component: "sorter", text: fault.to_string() });
        }
        let state = self.dma.state();
        if state != self.reported_state {
            self.events.push(EventPayload::State {
                component: "dma",
                from: self.reported_state.to_string(),
                to: state.to_string(),
            });
            self.reported_state = state;
        }
    }

    fn quiescent(&self) -> bool {
        self.dma.quiescent() && self.sorter.is_empty() && self.sorted.is_none() && !self.irq_pending
    }

    fn signals(&self) -> Vec<SignalDef> {
        vec![
            SignalDef::integer("dma.state", 2),
            SignalDef::wire("sorter.in_valid", 1),
            SignalDef::wire("sorter.in_lane0", 32),
            SignalDef::wire("sorter.out_valid", 1),
            SignalDef::wire("sorter.out_lane0", 32),
        ]
    }

    fn sample(&self, out: &mut Vec<u64>) {
        let input = self.dma.last_input();
        out.push(self.dma.state().encode());
        out.push(input.is_some() as u64);
        out.push(input.unwrap_or(0) as u32 as u64);
        out.push(self.last_out.is_some() as u64);
        out.push(self.last_out.unwrap_or(0) as u32 as u64);
    }

    fn take_events(&mut self) -> Vec<EventPayload> {
        std::mem::take(&mut self.events)
    }
}
