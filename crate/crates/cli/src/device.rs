use std::io::Write;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use cosim::accel::{SortAccelerator, SorterConfig};
use cosim::devsim::{KernelConfig, RunMode, RunUntil, SimKernel, SocketDeviceLink, DEFAULT_IDLE_THRESHOLD};
use cosim::trace::EventLog;
use log::{error, info};

use crate::args::{endpoint, Common, DeviceArgs};
use crate::{Exit, TIMESCALE};

pub fn main(common: &Common, args: &DeviceArgs) -> Result<(), Exit> {
    let sorter = SorterConfig::new(common.n, args.lanes).map_err(|e| Exit::config(e.to_string()))?;
    let ep = endpoint(common.endpoint.as_deref().unwrap_or("127.0.0.1:0")).map_err(Exit::config)?;

    let shutdown = Arc::new(AtomicBool::new(false));
    for sig in [signal_hook::consts::SIGTERM, signal_hook::consts::SIGINT] {
        signal_hook::flag::register(sig, shutdown.clone()).map_err(|e| Exit::transport(e.to_string()))?;
    }

    let link = SocketDeviceLink::listen(&ep).map_err(|e| Exit::transport(format!("cannot listen on {ep}: {e}")))?;
    let config = KernelConfig {
        poll_budget: args.poll_budget,
        idle_block: args.idle_block(),
        idle_threshold: DEFAULT_IDLE_THRESHOLD,
        ..KernelConfig::default()
    };
    let mut kernel = SimKernel::new(config, SortAccelerator::new(sorter), link);
    if let Some(path) = &args.vcd {
        kernel.attach_vcd_file(path, TIMESCALE).map_err(|e| Exit::config(format!("{}: {e}", path.display())))?;
    }
    if let Some(path) = &args.log {
        let log = EventLog::create(path).map_err(|e| Exit::config(format!("{}: {e}", path.display())))?;
        kernel.attach_log(log);
    }

    let bound = kernel.link().local_endpoint().clone();
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "READY endpoint={bound}");
    let _ = out.flush();
    drop(out);
    info!("device n={} lanes={} listening on {bound}", common.n, args.lanes);

    let until = args.max_cycles.map_or(RunUntil::Shutdown, RunUntil::Cycles);
    let result = kernel.run(RunMode::FreeRun, until, &shutdown);
    kernel.link_mut().close();
    let flushed = kernel.finish_trace();

    let stats = kernel.stats();
    info!(
        "stopped at cycle {} after {} session(s), {} idle block(s)",
        kernel.cycle(),
        stats.sessions,
        stats.idle_blocks
    );
    if let Err(e) = flushed {
        error!("trace output: {e}");
        return Err(Exit::transport(format!("trace output: {e}")));
    }
    result.map(|_| ()).map_err(|e| Exit::transport(e.to_string()))
}
