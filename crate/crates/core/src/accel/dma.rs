//! Streaming DMA: host memory -> sorter -> host memory.
//!
//! Reads are issued in bursts from the source address forward with a
//! bounded number outstanding. A batch starts entering the sorter once all
//! of its keys have arrived, and its beats are then pushed on consecutive
//! cycles. Sorted beats are packed into burst-sized posted writes toward
//! the destination. The three phases overlap across batches.

use std::collections::VecDeque;
use std::fmt;

use super::sorter::{StreamBeat, StreamingSorter};
use crate::devsim::{BusOp, BusPort};

pub const DEFAULT_BURST: usize = 64;
pub const DEFAULT_MAX_READS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DmaState {
    Idle,
    Running,
    Complete,
    Error,
}

impl DmaState {
    pub fn encode(self) -> u64 {
        match self {
            DmaState::Idle => 0,
            DmaState::Running => 1,
            DmaState::Complete => 2,
            DmaState::Error => 3,
        }
    }
}

impl fmt::Display for DmaState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DmaState::Idle => "idle",
            DmaState::Running => "running",
            DmaState::Complete => "complete",
            DmaState::Error => "error",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DmaJob {
    pub src: u64,
    pub dst: u64,
    pub len_bytes: u32,
}

impl DmaJob {
    pub fn batches(&self, n: usize) -> u64 {
        self.len_bytes as u64 / (4 * n as u64)
    }

    /// A job is accepted only for a positive whole number of batches that
    /// does not wrap the address space.
    pub fn is_valid(&self, n: usize) -> bool {
        self.len_bytes > 0
            && (self.len_bytes as u64).is_multiple_of(4 * n as u64)
            && self.src.checked_add(self.len_bytes as u64).is_some()
            && self.dst.checked_add(self.len_bytes as u64).is_some()
    }
}

/// What a cycle of the engine ended with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DmaOutcome {
    Busy,
    Done,
    Failed,
}

pub struct DmaEngine {
    burst: usize,
    max_reads: usize,
    state: DmaState,
    job: Option<DmaJob>,
    generation: u64,
    expect: VecDeque<(BusOp, u64)>,
    read_issued: u64,
    reads_outstanding: usize,
    keys: VecDeque<i32>,
    feed_pos: usize,
    batches_fed: u64,
    out_beats: u64,
    write_buf: Vec<u8>,
    write_issued: u64,
    last_in: Option<i32>,
}

impl Default for DmaEngine {
    fn default() -> Self {
        Self::new(DEFAULT_BURST, DEFAULT_MAX_READS)
    }
}

impl DmaEngine {
    pub fn new(burst: usize, max_reads: usize) -> Self {
        assert!(burst > 0 && burst.is_multiple_of(4) && burst <= crate::proto::MAX_PAYLOAD);
        assert!(max_reads > 0);
        DmaEngine {
            burst,
            max_reads,
            state: DmaState::Idle,
            job: None,
            generation: 0,
            expect: VecDeque::new(),
            read_issued: 0,
            reads_outstanding: 0,
            keys: VecDeque::new(),
            feed_pos: 0,
            batches_fed: 0,
            out_beats: 0,
            write_buf: Vec::new(),
            write_issued: 0,
            last_in: None,
        }
    }

    pub fn state(&self) -> DmaState {
        self.state
    }

    pub fn job(&self) -> Option<DmaJob> {
        self.job
    }

    pub fn start(&mut self, job: DmaJob) {
        self.generation += 1;
        self.job = Some(job);
        self.state = DmaState::Running;
        self.read_issued = 0;
        self.reads_outstanding = 0;
        self.keys.clear();
        self.feed_pos = 0;
        self.batches_fed = 0;
        self.out_beats = 0;
        self.write_buf.clear();
        self.write_issued = 0;
    }

    /// Returns to idle after the completion has been acknowledged.
    pub fn acknowledge(&mut self) {
        if self.state != DmaState::Running {
            self.state = DmaState::Idle;
        }
    }

    /// Key pushed into the sorter this cycle, for tracing.
    pub fn last_input(&self) -> Option<i32> {
        self.last_in
    }

    pub fn quiescent(&self) -> bool {
        self.state != DmaState::Running && self.expect.is_empty()
    }

    fn fail(&mut self) -> DmaOutcome {
        self.state = DmaState::Error;
        self.keys.clear();
        self.write_buf.clear();
        self.feed_pos = 0;
        DmaOutcome::Failed
    }

    /// One cycle. `sorted` is the sorter output of the previous cycle.
    pub fn step(
        &mut self,
        now: u64,
        port: &mut dyn BusPort,
        sorter: &mut StreamingSorter,
        sorted: Option<StreamBeat>,
    ) -> DmaOutcome {
        self.last_in = None;
        while let Some(c) = port.poll_completion(now) {
            let (op, generation) = self.expect.pop_front().expect("completion for a submitted transaction");
            debug_assert_eq!(op, c.op);
            if generation != self.generation || self.state != DmaState::Running {
                continue;
            }
            if op == BusOp::Read {
                self.reads_outstanding -= 1;
                if !c.status.is_ok() {
                    return self.fail();
                }
                self.keys.extend(c.data.chunks_exact(4).map(|b| i32::from_le_bytes(b.try_into().unwrap())));
            }
        }
        if self.state != DmaState::Running {
            return DmaOutcome::Busy;
        }
        let job = self.job.expect("running without a job");
        let cfg = sorter.config();
        let (n, w) = (cfg.n(), cfg.w());
        let batches = job.batches(n);
        let total_beats = batches * cfg.beats_per_batch() as u64;

        if let Some(beat) = sorted {
            for k in beat.lanes {
                self.write_buf.extend_from_slice(&k.to_le_bytes());
            }
            self.out_beats += 1;
        }

        let all_out = self.out_beats == total_beats;
        while self.write_buf.len() >= self.burst || (all_out && !self.write_buf.is_empty()) {
            let take = self.write_buf.len().min(self.burst);
            let chunk: Vec<u8> = self.write_buf.drain(..take).collect();
            port.submit_write(now, job.dst + self.write_issued, chunk);
            self.expect.push_back((BusOp::Write, self.generation));
            self.write_issued += take as u64;
        }

        let remaining = job.len_bytes as u64 - self.read_issued;
        let buffered = self.keys.len() * 4 + self.reads_outstanding * self.burst;
        let read_ahead = (8 * n).max(self.burst * self.max_reads);
        if remaining > 0 && self.reads_outstanding < self.max_reads && buffered < read_ahead && port.can_submit_read() {
            let len = remaining.min(self.burst as u64) as u32;
            port.submit_read(now, job.src + self.read_issued, len);
            self.expect.push_back((BusOp::Read, self.generation));
            self.read_issued += len as u64;
            self.reads_outstanding += 1;
        }

        let beats = cfg.beats_per_batch();
        if self.feed_pos > 0 || (self.batches_fed < batches && self.keys.len() >= n) {
            let lanes: Vec<i32> = self.keys.drain(..w).collect();
            self.last_in = Some(lanes[0]);
            self.feed_pos += 1;
            let last = self.feed_pos == beats;
            if last {
                self.feed_pos = 0;
                self.batches_fed += 1;
            }
            sorter.push(StreamBeat::new(lanes, last)).expect("dma feeds one full-width beat per cycle");
        }

        if all_out && self.write_buf.is_empty() && self.write_issued == job.len_bytes as u64 {
            self.state = DmaState::Complete;
            return DmaOutcome::Done;
        }
        DmaOutcome::Busy
    }
}
