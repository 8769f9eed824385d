//! Driver-level scenarios run against the pseudo device.

use std::fmt;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::device::PseudoDevice;
use super::link::HostLink;
use super::HostError;
use crate::accel::regs;
use crate::trace::TimeReport;

/// Where the source buffer is placed in guest memory.
pub const SRC_BASE: u64 = 0x10_0000;

#[derive(Debug, Clone)]
pub struct SortOffload {
    pub count: usize,
    pub n: usize,
    pub seed: u64,
    /// Wall-clock bound on waiting for the completion interrupt.
    pub timeout: Duration,
}

impl SortOffload {
    pub fn new(count: usize, n: usize, seed: u64) -> Self {
        SortOffload { count, n, seed, timeout: Duration::from_secs(30) }
    }

    pub fn len_bytes(&self) -> u64 {
        4 * (self.count * self.n) as u64
    }

    pub fn src(&self) -> u64 {
        SRC_BASE
    }

    /// Destination follows the source, page aligned.
    pub fn dst(&self) -> u64 {
        SRC_BASE + self.len_bytes().div_ceil(4096) * 4096
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RttStats {
    pub samples: usize,
    pub ok: usize,
    pub min_us: f64,
    pub median_us: f64,
    pub max_us: f64,
    pub device_cycles: u64,
    pub cycles_per_rtt: f64,
    pub failed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub pass: bool,
    pub batches: Vec<bool>,
    pub wall_us: u64,
    pub device_cycles: u64,
    pub interrupts: u64,
    pub errors: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rtt: Option<RttStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_report: Option<TimeReport>,
}

impl ScenarioReport {
    fn new(scenario: &str) -> Self {
        ScenarioReport {
            scenario: scenario.to_string(),
            pass: false,
            batches: Vec::new(),
            wall_us: 0,
            device_cycles: 0,
            interrupts: 0,
            errors: Vec::new(),
            rtt: None,
            time_report: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    pub fn sorted_batches(&self) -> usize {
        self.batches.iter().filter(|&&b| b).count()
    }
}

impl fmt::Display for ScenarioReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "scenario {}: {}", self.scenario, if self.pass { "PASS" } else { "FAIL" })?;
        writeln!(f, "  batches sorted: {}/{}", self.sorted_batches(), self.batches.len())?;
        writeln!(f, "  interrupts:     {}", self.interrupts)?;
        writeln!(f, "  device cycles:  {}", self.device_cycles)?;
        writeln!(f, "  wall time:      {} us", self.wall_us)?;
        if let Some(r) = &self.rtt {
            writeln!(
                f,
                "  mmio rtt:       {}/{} ok, min {:.1} / median {:.1} / max {:.1} us, {:.1} cycles each",
                r.ok, r.samples, r.min_us, r.median_us, r.max_us, r.cycles_per_rtt
            )?;
        }
        for e in &self.errors {
            writeln!(f, "  error: {e}")?;
        }
        if let Some(t) = &self.time_report {
            writeln!(f)?;
            writeln!(f, "{t}")?;
        }
        Ok(())
    }
}

/// Reproducible signed keys for `count` batches of `n`.
pub fn generate_input(count: usize, n: usize, seed: u64) -> Vec<i32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count * n).map(|_| rng.gen()).collect()
}

/// Has the device sort `count` batches of random keys and checks the result.
///
/// `on_start` runs right after the START write, before the host waits for
/// completion. Transport and protocol failures are errors; a device that
/// misbehaves yields a failing report.
pub fn sort_offload<L: HostLink>(
    dev: &mut PseudoDevice<L>,
    cfg: &SortOffload,
    on_start: &mut dyn FnMut(),
) -> Result<ScenarioReport, HostError> {
    let mut report = ScenarioReport::new("sort");
    let started = Instant::now();
    if cfg.count == 0 {
        return Err(HostError::Config("batch count must be at least 1".into()));
    }
    let len = cfg.len_bytes();
    if len > u32::MAX as u64 || cfg.dst() + len > dev.memory().size() {
        return Err(HostError::Config(format!("{len} byte buffers do not fit guest memory")));
    }

    let device_n = dev.read32(regs::N_ELEMS)?;
    if device_n as usize != cfg.n {
        report.errors.push(format!("device sorts batches of {device_n}, scenario uses {}", cfg.n));
        report.batches = vec![false; cfg.count];
        return Ok(report);
    }

    let input = generate_input(cfg.count, cfg.n, cfg.seed);
    dev.memory_mut().write_i32s(cfg.src(), &input).expect("source buffer checked against memory size");
    dev.memory_mut().fill(cfg.dst(), len, 0xA5).expect("destination buffer checked against memory size");
    dev.register_msi(regs::COMPLETION_VECTOR, |_| {})?;
    let irq_before = dev.msi().delivered(regs::COMPLETION_VECTOR) + dev.msi().spurious();

    let cycles_before = dev.read64(regs::CYCLES)?;
    dev.write64(regs::SRC_ADDR, cfg.src())?;
    dev.write64(regs::DST_ADDR, cfg.dst())?;
    dev.write32(regs::LEN_BYTES, len as u32)?;
    dev.write32(regs::CTRL, regs::CTRL_START)?;
    on_start();

    if !dev.wait_for_interrupt(regs::COMPLETION_VECTOR, cfg.timeout)? {
        report.errors.push(if dev.is_connected() {
            format!("no completion interrupt within {:?}", cfg.timeout)
        } else {
            "device disconnected before completion".to_string()
        });
    }
    let status = dev.read32(regs::STATUS)?;
    if status & regs::STATUS_ERROR != 0 {
        report.errors.push(format!("device reported ERROR (STATUS={status:#x})"));
    }
    dev.write32(regs::IRQ_ACK, 1)?;
    let cycles_after = dev.read64(regs::CYCLES)?;
    report.device_cycles = cycles_after.saturating_sub(cycles_before);
    report.interrupts = dev.msi().delivered(regs::COMPLETION_VECTOR) + dev.msi().spurious() - irq_before;
    if !dev.is_connected() {
        report.errors.push("device disconnected".into());
    }

    let output = dev.memory().read_i32s(cfg.dst(), cfg.count * cfg.n).expect("checked above");
    for (src, dst) in input.chunks(cfg.n).zip(output.chunks(cfg.n)) {
        let mut expect = src.to_vec();
        expect.sort_unstable();
        report.batches.push(expect == dst);
    }
    let unsorted = report.batches.iter().filter(|&&b| !b).count();
    if unsorted > 0 {
        report.errors.push(format!("{unsorted} of {} batches differ from the reference sort", cfg.count));
    }
    report.wall_us = started.elapsed().as_micros() as u64;
    report.pass = report.errors.is_empty();
    Ok(report)
}

/// Times `samples` reads of the ID register.
pub fn measure_mmio_rtt<L: HostLink>(dev: &mut PseudoDevice<L>, samples: usize) -> Result<RttStats, HostError> {
    let mut stats = RttStats {
        samples,
        ok: 0,
        min_us: 0.0,
        median_us: 0.0,
        max_us: 0.0,
        device_cycles: 0,
        cycles_per_rtt: 0.0,
        failed: false,
    };
    if samples == 0 {
        return Ok(stats);
    }
    let before = dev.read64(regs::CYCLES)?;
    let mut times = Vec::with_capacity(samples);
    for _ in 0..samples {
        let t = Instant::now();
        let id = dev.read32(regs::ID)?;
        times.push(t.elapsed().as_secs_f64() * 1e6);
        if id == regs::ID_VALUE {
            stats.ok += 1;
        }
    }
    let after = dev.read64(regs::CYCLES)?;
    stats.failed = stats.ok != samples || !dev.is_connected();
    times.sort_by(f64::total_cmp);
    stats.min_us = times[0];
    stats.max_us = times[samples - 1];
    stats.median_us = times[samples / 2];
    if !stats.failed {
        stats.device_cycles = after.saturating_sub(before);
        stats.cycles_per_rtt = stats.device_cycles as f64 / samples as f64;
    }
    Ok(stats)
}

/// MMIO round trips plus one sort job, summarised as actual versus simulated time.
pub fn rtt_scenario<L: HostLink>(
    dev: &mut PseudoDevice<L>,
    samples: usize,
    sort: &SortOffload,
    clock_period_ns: f64,
) -> Result<ScenarioReport, HostError> {
    let started = Instant::now();
    let rtt = measure_mmio_rtt(dev, samples)?;
    let sort_report = sort_offload(dev, sort, &mut || {})?;

    let mut time = TimeReport::new(clock_period_ns);
    time.add_row("Host to Device Read RTT", rtt.median_us, rtt.cycles_per_rtt);
    time.add_row("Application Execution Time", sort_report.wall_us as f64, sort_report.device_cycles as f64);

    let mut report = ScenarioReport::new("rtt");
    report.errors = sort_report.errors;
    if rtt.failed {
        report.errors.insert(0, format!("{} of {} MMIO reads failed", rtt.samples - rtt.ok, rtt.samples));
    }
    report.batches = sort_report.batches;
    report.interrupts = sort_report.interrupts;
    report.device_cycles = rtt.device_cycles + sort_report.device_cycles;
    report.pass = report.errors.is_empty();
    report.rtt = Some(rtt);
    report.time_report = Some(time);
    report.wall_us = started.elapsed().as_micros() as u64;
    Ok(report)
}
