//! The bus port contract the device platform uses toward host memory.
//!
//! A platform component submits reads and writes and later collects one
//! completion per submission, in submission order, no earlier than the cycle
//! after it was submitted. It also drives an interrupt pin per vector. The
//! platform cannot tell whether the port is backed by the simulation bridge
//! or by [`DirectMemoryPort`].

use std::collections::VecDeque;

use crate::proto::Status;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusOp {
    Read,
    Write,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BusCompletion {
    pub op: BusOp,
    pub addr: u64,
    pub status: Status,
    pub data: Vec<u8>,
}

pub trait BusPort {
    /// Whether another read may be submitted this cycle.
    fn can_submit_read(&self) -> bool;
    fn submit_read(&mut self, now: u64, addr: u64, len: u32);
    fn submit_write(&mut self, now: u64, addr: u64, data: Vec<u8>);
    /// Oldest completion, once it is due.
    fn poll_completion(&mut self, now: u64) -> Option<BusCompletion>;
    /// Drives the interrupt pin for `vector` high during the current cycle.
    fn drive_interrupt(&mut self, vector: u16);
    /// Submissions whose completion has not been collected yet.
    fn in_flight(&self) -> usize;
}

#[derive(Debug)]
pub(crate) struct PendingCompletion {
    pub op: BusOp,
    pub addr: u64,
    pub submitted: u64,
    pub tag: Option<u32>,
    pub done: Option<(Status, Vec<u8>)>,
}

/// In-order completion bookkeeping shared by both port backings.
#[derive(Debug, Default)]
pub(crate) struct CompletionQueue {
    entries: VecDeque<PendingCompletion>,
}

impl CompletionQueue {
    pub fn push(&mut self, entry: PendingCompletion) {
        self.entries.push_back(entry);
    }

    /// Resolves the oldest unresolved entry carrying `tag`.
    pub fn resolve_tag(&mut self, tag: u32, status: Status, data: Vec<u8>) -> bool {
        match self.entries.iter_mut().find(|e| e.tag == Some(tag) && e.done.is_none()) {
            Some(e) => {
                e.done = Some((status, data));
                true
            }
            None => false,
        }
    }

    /// Resolves every unresolved entry with `status` and no data.
    pub fn abort_all(&mut self, status: Status) {
        for e in self.entries.iter_mut().filter(|e| e.done.is_none()) {
            e.done = Some((status, Vec::new()));
        }
    }

    pub fn pop_ready(&mut self, now: u64) -> Option<BusCompletion> {
        let front = self.entries.front()?;
        if front.done.is_none() || now <= front.submitted {
            return None;
        }
        let e = self.entries.pop_front().unwrap();
        let (status, data) = e.done.unwrap();
        Some(BusCompletion { op: e.op, addr: e.addr, status, data })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Edge detector for the per-vector interrupt pins.
///
/// Levels driven during a cycle are latched at the end of it; a vector
/// that was low in the previous cycle and high in this one fires once.
#[derive(Debug, Default)]
pub struct InterruptPins {
    driven: Vec<u16>,
    previous: Vec<u16>,
}

impl InterruptPins {
    pub fn drive(&mut self, vector: u16) {
        if !self.driven.contains(&vector) {
            self.driven.push(vector);
        }
    }

    /// Ends the cycle and returns the vectors with a rising edge.
    pub fn latch(&mut self) -> Vec<u16> {
        let mut rising: Vec<u16> = self.driven.iter().copied().filter(|v| !self.previous.contains(v)).collect();
        rising.sort_unstable();
        self.previous = std::mem::take(&mut self.driven);
        rising
    }

    pub fn any_high(&self) -> bool {
        !self.driven.is_empty()
    }
}

/// In-process memory behind the bus port contract, with one-cycle completions.
#[derive(Debug)]
pub struct DirectMemoryPort {
    memory: Vec<u8>,
    queue: CompletionQueue,
    pins: InterruptPins,
    interrupts: Vec<(u64, u16)>,
    max_outstanding_reads: usize,
    outstanding_reads: usize,
}

impl DirectMemoryPort {
    pub fn new(size: usize) -> Self {
        DirectMemoryPort {
            memory: vec![0; size],
            queue: CompletionQueue::default(),
            pins: InterruptPins::default(),
            interrupts: Vec::new(),
            max_outstanding_reads: crate::proto::MAX_OUTSTANDING,
            outstanding_reads: 0,
        }
    }

    pub fn memory(&self) -> &[u8] {
        &self.memory
    }

    pub fn memory_mut(&mut self) -> &mut [u8] {
        &mut self.memory
    }

    /// Latches interrupt pins at the end of cycle `now`.
    pub fn end_cycle(&mut self, now: u64) {
        for v in self.pins.latch() {
            self.interrupts.push((now, v));
        }
    }

    /// `(cycle, vector)` of every interrupt edge so far.
    pub fn interrupts(&self) -> &[(u64, u16)] {
        &self.interrupts
    }

    fn range(&self, addr: u64, len: usize) -> Option<std::ops::Range<usize>> {
        let end = addr.checked_add(len as u64)?;
        (end <= self.memory.len() as u64).then_some(addr as usize..end as usize)
    }
}

impl BusPort for DirectMemoryPort {
    fn can_submit_read(&self) -> bool {
        self.outstanding_reads < self.max_outstanding_reads
    }

    fn submit_read(&mut self, now: u64, addr: u64, len: u32) {
        let done = match self.range(addr, len as usize) {
            Some(r) => (Status::Ok, self.memory[r].to_vec()),
            None => (Status::AddressError, Vec::new()),
        };
        self.outstanding_reads += 1;
        self.queue.push(PendingCompletion { op: BusOp::Read, addr, submitted: now, tag: None, done: Some(done) });
    }

    fn submit_write(&mut self, now: u64, addr: u64, data: Vec<u8>) {
        let status = match self.range(addr, data.len()) {
            Some(r) => {
                self.memory[r].copy_from_slice(&data);
                Status::Ok
            }
            None => Status::AddressError,
        };
        self.queue.push(PendingCompletion {
            op: BusOp::Write,
            addr,
            submitted: now,
            tag: None,
            done: Some((status, Vec::new())),
        });
    }

    fn poll_completion(&mut self, now: u64) -> Option<BusCompletion> {
        let c = self.queue.pop_ready(now)?;
        if c.op == BusOp::Read {
            self.outstanding_reads -= 1;
        }
        Some(c)
    }

    fn drive_interrupt(&mut self, vector: u16) {
        self.pins.drive(vector);
    }

    fn in_flight(&self) -> usize {
        self.queue.len()
    }
}
