//! Fully pipelined streaming bitonic sorter.
//!
//! A batch of `n` signed 32-bit keys enters as `n/w` consecutive beats of
//! `w` lanes. The network is the classic bitonic merge sort: for each block
//! size `k = 2, 4, .., n` and each distance `j = k/2, .., 1`, element `i` is
//! compare-exchanged with `i ^ j`, ascending when `i & k == 0`.
//!
//! Each compare-exchange stage is one streaming block. When the distance is
//! smaller than a beat (`j < w`) both partners sit in the same beat and the
//! stage is a single register. Otherwise the partner is `j/w` beats away in
//! the same lane, so the stage holds `j/w` beats of delay before its output
//! register. Every beat therefore crosses a stage in exactly `j/w + 1`
//! cycles (or 1), which makes the total latency constant and lets batches
//! follow each other with no idle cycles.

use std::collections::{HashMap, VecDeque};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SorterError {
    #[error("sorter config: {0}")]
    Config(String),
    #[error("beat has {got} lanes, sorter is {want} wide")]
    Width { got: usize, want: usize },
    #[error("more than one beat pushed in a cycle")]
    DoublePush,
    #[error("invalid beat pushed")]
    InvalidBeat,
    #[error("batch {batch} interrupted after {pos} of {beats} beats")]
    NonContiguous { batch: u64, pos: usize, beats: usize },
    #[error("last flag on beat {pos} of a {beats}-beat batch")]
    MisplacedLast { pos: usize, beats: usize },
}

/// Batch size and stream width of a sorter instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SorterConfig {
    n: usize,
    w: usize,
}

impl SorterConfig {
    pub const MIN_N: usize = 4;
    pub const MAX_N: usize = 65536;

    pub fn new(n: usize, w: usize) -> Result<Self, SorterError> {
        if !n.is_power_of_two() || !(Self::MIN_N..=Self::MAX_N).contains(&n) {
            return Err(SorterError::Config(format!(
                "n = {n} must be a power of two in {}..={}",
                Self::MIN_N,
                Self::MAX_N
            )));
        }
        if !w.is_power_of_two() || w > n {
            return Err(SorterError::Config(format!("w = {w} must be a power of two in 1..={n}")));
        }
        Ok(SorterConfig { n, w })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn beats_per_batch(&self) -> usize {
        self.n / self.w
    }
}

/// One cycle of stream traffic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamBeat {
    pub lanes: Vec<i32>,
    pub valid: bool,
    pub last: bool,
}

impl StreamBeat {
    pub fn new(lanes: Vec<i32>, last: bool) -> Self {
        StreamBeat { lanes, valid: true, last }
    }
}

/// `(k, j)` for every compare-exchange stage, in network order.
pub fn bitonic_stages(n: usize) -> Vec<(usize, usize)> {
    let mut stages = Vec::new();
    let mut k = 2;
    while k <= n {
        let mut j = k / 2;
        while j >= 1 {
            stages.push((k, j));
            j /= 2;
        }
        k *= 2;
    }
    stages
}

/// First-input to first-output distance, in cycles, of a sorter built for `config`.
pub fn sorter_latency(config: SorterConfig) -> u32 {
    bitonic_stages(config.n).into_iter().map(|(_, j)| stage_delay(j, config.w) as u32 + 1).sum()
}

fn stage_delay(j: usize, w: usize) -> usize {
    if j >= w {
        j / w
    } else {
        0
    }
}

type Key = (u64, usize);

struct Stage {
    k: usize,
    j: usize,
    w: usize,
    /// Beats of separation between partners; 0 for in-beat stages.
    dist: usize,
    line: VecDeque<Option<Key>>,
    waiting: HashMap<Key, Vec<i32>>,
    results: HashMap<Key, Vec<i32>>,
}

impl Stage {
    fn new(k: usize, j: usize, w: usize) -> Self {
        let dist = stage_delay(j, w);
        Stage {
            k,
            j,
            w,
            dist,
            line: VecDeque::with_capacity(dist + 2),
            waiting: HashMap::new(),
            results: HashMap::new(),
        }
    }

    fn ascending(&self, index: usize) -> bool {
        index & self.k == 0
    }

    fn accept(&mut self, key: Key, lanes: Vec<i32>) {
        let pos = key.1;
        if self.dist == 0 {
            let mut out = lanes;
            for lane in 0..self.w {
                let partner = lane ^ self.j;
                if partner > lane {
                    let (a, b) = (out[lane], out[partner]);
                    let asc = self.ascending(pos * self.w + lane);
                    if (a > b) == asc {
                        out[lane] = b;
                        out[partner] = a;
                    }
                }
            }
            self.results.insert(key, out);
            return;
        }
        if pos & self.dist == 0 {
            self.waiting.insert(key, lanes);
            return;
        }
        let low_pos = pos ^ self.dist;
        let low_key = (key.0, low_pos);
        let mut low = self.waiting.remove(&low_key).expect("partner beat buffered");
        let mut high = lanes;
        let asc = self.ascending(low_pos * self.w);
        for lane in 0..self.w {
            let (a, b) = (low[lane], high[lane]);
            if (a > b) == asc {
                low[lane] = b;
                high[lane] = a;
            }
        }
        self.results.insert(low_key, low);
        self.results.insert(key, high);
    }

    /// Shifts the stage by one cycle.
    fn advance(&mut self, input: Option<(Key, Vec<i32>)>) -> Option<(Key, Vec<i32>)> {
        let token = input.map(|(key, lanes)| {
            self.accept(key, lanes);
            key
        });
        self.line.push_back(token);
        if self.line.len() <= self.dist + 1 {
            return None;
        }
        let key = self.line.pop_front().unwrap()?;
        let data = self.results.remove(&key).expect("stage output computed before it leaves");
        Some((key, data))
    }

    fn clear(&mut self) {
        self.line.clear();
        self.waiting.clear();
        self.results.clear();
    }

    fn occupied(&self) -> bool {
        self.line.iter().any(Option::is_some)
    }
}

/// Cycle-level model of the streaming sorting network.
///
/// Per cycle, call [`push`](Self::push) at most once and then
/// [`step`](Self::step) exactly once. A beat pushed in the cycle of step
/// call `t` leaves in step call `t + L`.
pub struct StreamingSorter {
    config: SorterConfig,
    latency: u32,
    stages: Vec<Stage>,
    input: Option<StreamBeat>,
    in_pos: usize,
    batch: u64,
    fault: Option<SorterError>,
    faults: u64,
}

impl StreamingSorter {
    pub fn new(config: SorterConfig) -> Self {
        let stages = bitonic_stages(config.n).into_iter().map(|(k, j)| Stage::new(k, j, config.w)).collect();
        StreamingSorter {
            config,
            latency: sorter_latency(config),
            stages,
            input: None,
            in_pos: 0,
            batch: 0,
            fault: None,
            faults: 0,
        }
    }

    pub fn config(&self) -> SorterConfig {
        self.config
    }

    pub fn latency(&self) -> u32 {
        self.latency
    }

    /// Offers one beat for the current cycle.
    pub fn push(&mut self, beat: StreamBeat) -> Result<(), SorterError> {
        if !beat.valid {
            return Err(SorterError::InvalidBeat);
        }
        if beat.lanes.len() != self.config.w {
            return Err(SorterError::Width { got: beat.lanes.len(), want: self.config.w });
        }
        if self.input.is_some() {
            return Err(SorterError::DoublePush);
        }
        self.input = Some(beat);
        Ok(())
    }

    /// Advances one cycle and returns the beat leaving the network, if any.
    ///
    /// A cycle without input in the middle of a batch is a usage error: it is
    /// recorded (see [`take_fault`](Self::take_fault)) and the pipeline is flushed.
    pub fn step(&mut self) -> Option<StreamBeat> {
        let beats = self.config.beats_per_batch();
        let mut entering = None;
        match self.input.take() {
            Some(beat) => {
                let is_last = self.in_pos == beats - 1;
                if beat.last != is_last {
                    self.flag(SorterError::MisplacedLast { pos: self.in_pos, beats });
                    return None;
                }
                entering = Some(((self.batch, self.in_pos), beat.lanes));
                self.in_pos += 1;
                if self.in_pos == beats {
                    self.in_pos = 0;
                    self.batch += 1;
                }
            }
            None if self.in_pos != 0 => {
                self.flag(SorterError::NonContiguous { batch: self.batch, pos: self.in_pos, beats });
                return None;
            }
            None => {}
        }
        let mut carry = entering;
        for stage in self.stages.iter_mut() {
            carry = stage.advance(carry);
        }
        carry.map(|((_, pos), lanes)| StreamBeat::new(lanes, pos == beats - 1))
    }

    fn flag(&mut self, err: SorterError) {
        self.faults += 1;
        self.fault = Some(err);
        self.reset();
    }

    /// Drops every beat in flight and any partial input batch.
    pub fn reset(&mut self) {
        for s in self.stages.iter_mut() {
            s.clear();
        }
        self.input = None;
        self.in_pos = 0;
        self.batch += 1;
    }

    pub fn take_fault(&mut self) -> Option<SorterError> {
        self.fault.take()
    }

    pub fn fault_count(&self) -> u64 {
        self.faults
    }

    /// True when no beat is inside the network and no batch is half-entered.
    pub fn is_empty(&self) -> bool {
        self.in_pos == 0 && self.input.is_none() && !self.stages.iter().any(Stage::occupied)
    }
}
