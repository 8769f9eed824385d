use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cosim::hostsim::DEFAULT_MEM_SIZE;
use cosim::proto::Endpoint;

#[derive(Debug, Parser)]
#[command(name = "cosim", version, about = "Host emulator and device simulator linked over message channels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the cycle-driven device simulator until SIGTERM or --max-cycles.
    Device {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        device: DeviceArgs,
    },
    /// Connect to a running device and execute one scenario.
    Host {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        host: HostArgs,
        #[command(flatten)]
        extra: HostExtra,
    },
    /// Start a device and a host as child processes and supervise both.
    Run {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        device: DeviceArgs,
        #[command(flatten)]
        host: HostArgs,
    },
    /// Kill and restart each side mid-scenario and check the survivor.
    RestartDrill {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        device: DeviceArgs,
        #[command(flatten)]
        host: HostArgs,
        /// Which side to kill.
        #[arg(long, value_enum, default_value_t = Victim::Both)]
        victim: Victim,
    },
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// `host:port` or a socket path. A device without one listens on a free local TCP port; a host needs one.
    #[arg(long, env = "COSIM_ENDPOINT")]
    pub endpoint: Option<String>,
    /// Keys per batch (power of two).
    #[arg(long, default_value_t = 1024)]
    pub n: usize,
}

#[derive(Debug, Clone, Args)]
pub struct DeviceArgs {
    /// Keys per cycle entering and leaving the sorter.
    #[arg(long, default_value_t = 4)]
    pub lanes: usize,
    /// Messages consumed per inbound channel per cycle.
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u16).range(1..))]
    pub poll_budget: u16,
    /// Stop the clock while nothing is happening (default).
    #[arg(long, overrides_with = "no_idle_block")]
    pub idle_block: bool,
    /// Keep the clock running while idle.
    #[arg(long, overrides_with = "idle_block")]
    pub no_idle_block: bool,
    /// Waveform output file.
    #[arg(long)]
    pub vcd: Option<PathBuf>,
    /// Event log output file (one JSON record per line).
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Stop after this many cycles.
    #[arg(long)]
    pub max_cycles: Option<u64>,
}

impl DeviceArgs {
    pub fn idle_block(&self) -> bool {
        !self.no_idle_block
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scenario {
    Sort,
    Rtt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Victim {
    Host,
    Device,
    Both,
    None,
}

#[derive(Debug, Clone, Args)]
pub struct HostArgs {
    /// Guest memory size; accepts K, M and G suffixes.
    #[arg(long, default_value_t = DEFAULT_MEM_SIZE, value_parser = parse_size)]
    pub mem_size: u64,
    #[arg(long, value_enum, default_value_t = Scenario::Sort)]
    pub scenario: Scenario,
    /// Batches to sort.
    #[arg(long, default_value_t = 3)]
    pub count: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// ID register reads timed by the rtt scenario.
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    /// Bound on each wait for the device.
    #[arg(long, default_value_t = 30_000)]
    pub timeout_ms: u64,
    /// Extra connection attempts before giving up.
    #[arg(long, default_value_t = 6)]
    pub retries: u32,
}

#[derive(Debug, Clone, Args)]
pub struct HostExtra {
    /// Write the JSON report here as well.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// On the device's first memory request print JOB_STARTED and stall this long.
    #[arg(long)]
    pub pause_after_start_ms: Option<u64>,
    /// If the device goes away mid-scenario, reconnect and run the scenario again.
    #[arg(long)]
    pub reconnect: bool,
}

fn parse_size(s: &str) -> Result<u64, String> {
    let s = s.trim();
    let (digits, shift) = match s.char_indices().last() {
        Some((i, 'k' | 'K')) => (&s[..i], 10),
        Some((i, 'm' | 'M')) => (&s[..i], 20),
        Some((i, 'g' | 'G')) => (&s[..i], 30),
        _ => (s, 0),
    };
    let v: u64 = digits.parse().map_err(|_| format!("invalid size {s:?}"))?;
    v.checked_mul(1 << shift).ok_or_else(|| format!("size {s:?} overflows"))
}

pub fn endpoint(raw: &str) -> Result<Endpoint, String> {
    Endpoint::from_str(raw).map_err(|e| e.to_string())
}

/// Flags that reproduce `device` for a child process.
pub fn device_argv(endpoint: &str, n: usize, d: &DeviceArgs) -> Vec<String> {
    let mut v = vec![
        "device".to_string(),
        "--endpoint".into(),
        endpoint.into(),
        "--n".into(),
        n.to_string(),
        "--lanes".into(),
        d.lanes.to_string(),
        "--poll-budget".into(),
        d.poll_budget.to_string(),
    ];
    if !d.idle_block() {
        v.push("--no-idle-block".into());
    }
    if let Some(p) = &d.vcd {
        v.extend(["--vcd".into(), p.display().to_string()]);
    }
    if let Some(p) = &d.log {
        v.extend(["--log".into(), p.display().to_string()]);
    }
    if let Some(c) = d.max_cycles {
        v.extend(["--max-cycles".into(), c.to_string()]);
    }
    v
}

/// Flags that reproduce `host` for a child process.
pub fn host_argv(endpoint: &str, n: usize, h: &HostArgs) -> Vec<String> {
    let scenario = match h.scenario {
        Scenario::Sort => "sort",
        Scenario::Rtt => "rtt",
    };
    [
        "host",
        "--endpoint",
        endpoint,
        "--n",
        &n.to_string(),
        "--mem-size",
        &h.mem_size.to_string(),
        "--scenario",
        scenario,
        "--count",
        &h.count.to_string(),
        "--seed",
        &h.seed.to_string(),
        "--samples",
        &h.samples.to_string(),
        "--timeout-ms",
        &h.timeout_ms.to_string(),
        "--retries",
        &h.retries.to_string(),
    ]
    .map(String::from)
    .to_vec()
}
