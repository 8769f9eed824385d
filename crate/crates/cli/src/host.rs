use std::io::Write;
use std::time::Duration;

use cosim::hostsim::{
    rtt_scenario, sort_offload, BarConfig, GuestMemory, HostError, HostLink, LinkError, MsiConfig, PseudoDevice,
    ScenarioReport, SocketHostLink, SortOffload,
};
use cosim::proto::{ChannelId, WireMessage};
use cosim::trace::DEFAULT_CLOCK_PERIOD_NS;
use log::warn;

use crate::args::{endpoint, Common, HostArgs, HostExtra, Scenario};
use crate::Exit;

/// Announces the device's first memory request and optionally stalls on it.
struct Watched {
    inner: SocketHostLink,
    pause: Option<Duration>,
    announced: bool,
}

impl Watched {
    fn new(inner: SocketHostLink, pause: Option<Duration>) -> Self {
        Watched { inner, pause, announced: pause.is_none() }
    }
}

impl HostLink for Watched {
    fn send(&mut self, channel: ChannelId, msg: &WireMessage) -> Result<(), LinkError> {
        self.inner.send(channel, msg)
    }

    fn recv(&mut self, timeout: Option<Duration>) -> Result<Option<(ChannelId, WireMessage)>, LinkError> {
        let got = self.inner.recv(timeout)?;
        if !self.announced {
            if let Some((ChannelId::D2hReq, WireMessage::HostMemReadReq { .. })) = &got {
                self.announced = true;
                let mut out = std::io::stdout().lock();
                let _ = writeln!(out, "JOB_STARTED");
                let _ = out.flush();
                drop(out);
                if let Some(p) = self.pause {
                    std::thread::sleep(p);
                }
            }
        }
        Ok(got)
    }
}

fn host_error(e: HostError) -> Exit {
    match e {
        HostError::Config(_) | HostError::Precondition(_) => Exit::config(e.to_string()),
        _ => Exit::transport(e.to_string()),
    }
}

fn connect(ep: &cosim::proto::Endpoint, retries: u32) -> Result<SocketHostLink, Exit> {
    SocketHostLink::connect_with_backoff(ep, retries).map_err(|e| Exit::transport(format!("cannot reach device: {e}")))
}

fn scenario(dev: &mut PseudoDevice<Watched>, common: &Common, args: &HostArgs) -> Result<ScenarioReport, Exit> {
    let mut cfg = SortOffload::new(args.count, common.n, args.seed);
    cfg.timeout = Duration::from_millis(args.timeout_ms);
    match args.scenario {
        Scenario::Sort => sort_offload(dev, &cfg, &mut || {}),
        Scenario::Rtt => rtt_scenario(dev, args.samples, &cfg, DEFAULT_CLOCK_PERIOD_NS),
    }
    .map_err(host_error)
}

pub fn main(common: &Common, args: &HostArgs, extra: &HostExtra) -> Result<(), Exit> {
    let raw = common.endpoint.as_deref().ok_or_else(|| Exit::config("--endpoint or COSIM_ENDPOINT is required"))?;
    let ep = endpoint(raw).map_err(Exit::config)?;
    if !common.n.is_power_of_two() {
        return Err(Exit::config(format!("--n {} is not a power of two", common.n)));
    }
    let memory = GuestMemory::new(args.mem_size).map_err(host_error)?;

    let link = connect(&ep, args.retries)?;
    let pause = extra.pause_after_start_ms.map(Duration::from_millis);
    let mut dev = PseudoDevice::new(Watched::new(link, pause), memory, BarConfig::bar0(), MsiConfig::default());
    dev.set_read_timeout(Some(Duration::from_millis(args.timeout_ms)));

    let mut report = scenario(&mut dev, common, args)?;
    if !report.pass && extra.reconnect && !dev.is_connected() {
        warn!("device disconnected during the scenario: {}", report.errors.join("; "));
        let link = connect(&ep, args.retries)?;
        dev.replace_link(Watched::new(link, None));
        println!("RECONNECTED");
        report = scenario(&mut dev, common, args)?;
    }

    print!("{report}");
    let json = report.to_json();
    println!("{json}");
    if let Some(path) = &extra.report {
        std::fs::write(path, format!("{json}\n")).map_err(|e| Exit::config(format!("{}: {e}", path.display())))?;
    }
    if report.pass {
        Ok(())
    } else {
        Err(Exit::failed(report.errors.join("; ")))
    }
}
