//! Child-process orchestration for `run` and `restart-drill`.

use std::io::{BufRead, BufReader};
use std::os::unix::process::CommandExt;
use std::process::{Child, Command, ExitStatus, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use cosim::accel::{regs, SorterConfig};
use cosim::hostsim::{BarConfig, GuestMemory, MsiConfig, PseudoDevice, SocketHostLink};
use log::{info, warn};

use crate::args::{device_argv, endpoint, host_argv, Common, DeviceArgs, HostArgs, Victim};
use crate::{Exit, EXIT_FAILED, EXIT_TRANSPORT};

const READY_TIMEOUT: Duration = Duration::from_secs(10);

/// A child process whose stdout lines are forwarded to us and to a channel.
struct Proc {
    name: &'static str,
    child: Child,
    lines: Receiver<String>,
}

impl Proc {
    fn spawn(name: &'static str, argv: &[String], echo: bool) -> Result<Proc, Exit> {
        let exe = std::env::current_exe().map_err(|e| Exit::transport(e.to_string()))?;
        let mut cmd = Command::new(exe);
        cmd.args(argv).stdin(Stdio::null()).stdout(Stdio::piped()).stderr(Stdio::inherit());
        // SAFETY: prctl is async-signal-safe and touches no parent state.
        unsafe {
            cmd.pre_exec(|| {
                if libc::prctl(libc::PR_SET_PDEATHSIG, libc::SIGKILL) != 0 {
                    return Err(std::io::Error::last_os_error());
                }
                Ok(())
            });
        }
        let mut child = cmd.spawn().map_err(|e| Exit::transport(format!("spawn {name}: {e}")))?;
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines().map_while(Result::ok) {
                if echo {
                    println!("{line}");
                }
                if tx.send(line).is_err() && !echo {
                    break;
                }
            }
        });
        Ok(Proc { name, child, lines })
    }

    /// Waits for a stdout line starting with `prefix`, returning its remainder.
    fn expect_line(&mut self, prefix: &str, timeout: Duration) -> Result<String, String> {
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match self.lines.recv_timeout(left) {
                Ok(line) => {
                    if let Some(rest) = line.strip_prefix(prefix) {
                        return Ok(rest.trim().to_string());
                    }
                }
                Err(RecvTimeoutError::Timeout) => return Err(format!("{} printed no {prefix} line", self.name)),
                Err(RecvTimeoutError::Disconnected) => {
                    let status = self.child.wait().map(|s| s.to_string()).unwrap_or_default();
                    return Err(format!("{} exited ({status}) before {prefix}", self.name));
                }
            }
        }
    }

    fn alive(&mut self) -> bool {
        matches!(self.child.try_wait(), Ok(None))
    }

    fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }

    /// SIGTERM, then SIGKILL if the child lingers.
    fn terminate(&mut self, grace: Duration) -> Option<ExitStatus> {
        if let Ok(Some(s)) = self.child.try_wait() {
            return Some(s);
        }
        unsafe {
            libc::kill(self.child.id() as libc::pid_t, libc::SIGTERM);
        }
        let deadline = Instant::now() + grace;
        while Instant::now() < deadline {
            if let Ok(Some(s)) = self.child.try_wait() {
                return Some(s);
            }
            thread::sleep(Duration::from_millis(10));
        }
        self.kill();
        None
    }

    /// Waits for exit; gives up early when `stop` is raised.
    fn wait(&mut self, stop: &AtomicBool) -> Option<ExitStatus> {
        loop {
            if let Ok(Some(s)) = self.child.try_wait() {
                return Some(s);
            }
            if stop.load(Ordering::Relaxed) {
                return None;
            }
            thread::sleep(Duration::from_millis(10));
        }
    }

    /// Remaining stdout after exit.
    fn drain(&self) -> Vec<String> {
        let mut out = Vec::new();
        while let Ok(l) = self.lines.recv_timeout(Duration::from_millis(200)) {
            out.push(l);
        }
        out
    }
}

impl Drop for Proc {
    fn drop(&mut self) {
        if self.alive() {
            self.kill();
        }
    }
}

fn stop_flag() -> Result<Arc<AtomicBool>, Exit> {
    let stop = Arc::new(AtomicBool::new(false));
    for sig in [signal_hook::consts::SIGTERM, signal_hook::consts::SIGINT] {
        signal_hook::flag::register(sig, stop.clone()).map_err(|e| Exit::transport(e.to_string()))?;
    }
    Ok(stop)
}

fn validate(common: &Common, device: &DeviceArgs) -> Result<String, Exit> {
    SorterConfig::new(common.n, device.lanes).map_err(|e| Exit::config(e.to_string()))?;
    let raw = common.endpoint.clone().unwrap_or_else(|| "127.0.0.1:0".into());
    endpoint(&raw).map_err(Exit::config)?;
    Ok(raw)
}

fn start_device(raw: &str, common: &Common, device: &DeviceArgs) -> Result<(Proc, String), Exit> {
    let mut dev = Proc::spawn("device", &device_argv(raw, common.n, device), false)?;
    let bound = dev.expect_line("READY endpoint=", READY_TIMEOUT).map_err(Exit::transport)?;
    info!("device ready on {bound}");
    Ok((dev, bound))
}

fn exit_code(status: Option<ExitStatus>) -> i32 {
    status.and_then(|s| s.code()).unwrap_or(EXIT_TRANSPORT)
}

/// `run`: device and host as supervised children.
pub fn run(common: &Common, device: &DeviceArgs, host: &HostArgs) -> Result<(), Exit> {
    let raw = validate(common, device)?;
    let stop = stop_flag()?;
    let (mut dev, bound) = start_device(&raw, common, device)?;
    let mut h = Proc::spawn("host", &host_argv(&bound, common.n, host), true)?;

    let host_status = h.wait(&stop);
    if host_status.is_none() {
        h.terminate(Duration::from_secs(2));
        dev.terminate(Duration::from_secs(2));
        return Err(Exit::failed("interrupted"));
    }
    let _ = h.drain();
    let dev_status = dev.terminate(Duration::from_secs(10));
    let host_code = exit_code(host_status);
    let dev_code = exit_code(dev_status);
    if host_code != 0 {
        return Err(Exit::code(host_code, "host scenario did not pass"));
    }
    if dev_code != 0 {
        return Err(Exit::code(EXIT_TRANSPORT, format!("device exited with {dev_code}")));
    }
    Ok(())
}

/// Connects in-process and checks the device is alive and reports the aborted job.
fn inspect_after_host_kill(bound: &str, host: &HostArgs) -> Result<(), String> {
    let ep = endpoint(bound)?;
    let link = SocketHostLink::connect_with_backoff(&ep, host.retries).map_err(|e| e.to_string())?;
    let mem = GuestMemory::new(cosim::hostsim::PAGE_SIZE).map_err(|e| e.to_string())?;
    let mut dev = PseudoDevice::new(link, mem, BarConfig::bar0(), MsiConfig::default());
    dev.set_read_timeout(Some(Duration::from_millis(host.timeout_ms)));
    let id = dev.read32(regs::ID).map_err(|e| e.to_string())?;
    if id != regs::ID_VALUE {
        return Err(format!("ID register reads {id:#010x} after reconnect"));
    }
    let deadline = Instant::now() + Duration::from_millis(host.timeout_ms);
    let status = loop {
        let s = dev.read32(regs::STATUS).map_err(|e| e.to_string())?;
        if s & regs::STATUS_BUSY == 0 {
            break s;
        }
        if Instant::now() > deadline {
            return Err("device still BUSY with the abandoned job".into());
        }
        thread::sleep(Duration::from_millis(5));
    };
    if status & regs::STATUS_ERROR == 0 {
        return Err(format!("STATUS {status:#x} after the host vanished mid-transfer, expected ERROR"));
    }
    dev.write32(regs::IRQ_ACK, 1).map_err(|e| e.to_string())?;
    println!("device survived: ID {id:#010x}, aborted job left STATUS {status:#x}");
    Ok(())
}

fn fresh_scenario(bound: &str, common: &Common, host: &HostArgs, stop: &AtomicBool) -> Result<(), String> {
    let mut h = Proc::spawn("host", &host_argv(bound, common.n, host), true).map_err(|e| e.message)?;
    match exit_code(h.wait(stop)) {
        0 => Ok(()),
        c => Err(format!("fresh scenario exited with {c}")),
    }
}

fn host_kill_drill(
    common: &Common,
    device: &DeviceArgs,
    host: &HostArgs,
    raw: &str,
    stop: &AtomicBool,
) -> Result<(), String> {
    let (mut dev, bound) = start_device(raw, common, device).map_err(|e| e.message)?;
    let mut argv = host_argv(&bound, common.n, host);
    argv.extend(["--pause-after-start-ms".into(), "600000".into()]);
    let mut victim = Proc::spawn("host", &argv, true).map_err(|e| e.message)?;
    victim.expect_line("JOB_STARTED", Duration::from_millis(host.timeout_ms))?;
    victim.kill();
    println!("host killed mid-transfer");

    thread::sleep(Duration::from_millis(100));
    if !dev.alive() {
        return Err("device died with the host".into());
    }
    inspect_after_host_kill(&bound, host)?;
    fresh_scenario(&bound, common, host, stop)?;
    if !dev.alive() {
        return Err("device exited after the fresh scenario".into());
    }
    match exit_code(dev.terminate(Duration::from_secs(10))) {
        0 => Ok(()),
        c => Err(format!("device exited with {c}")),
    }
}

fn device_kill_drill(
    common: &Common,
    device: &DeviceArgs,
    host: &HostArgs,
    raw: &str,
    stop: &AtomicBool,
) -> Result<(), String> {
    let (mut dev, bound) = start_device(raw, common, device).map_err(|e| e.message)?;
    let mut argv = host_argv(&bound, common.n, host);
    argv.extend(["--pause-after-start-ms".into(), "1000".into(), "--reconnect".into()]);
    let mut survivor = Proc::spawn("host", &argv, true).map_err(|e| e.message)?;
    survivor.expect_line("JOB_STARTED", Duration::from_millis(host.timeout_ms))?;
    dev.kill();
    println!("device killed mid-transfer");

    // same address, so the surviving host can find it again
    let (mut dev, _) = start_device(&bound, common, device).map_err(|e| e.message)?;
    survivor.expect_line("RECONNECTED", Duration::from_millis(host.timeout_ms))?;
    let code = exit_code(survivor.wait(stop));
    if code != 0 {
        return Err(format!("surviving host exited with {code}"));
    }
    match exit_code(dev.terminate(Duration::from_secs(10))) {
        0 => Ok(()),
        c => Err(format!("restarted device exited with {c}")),
    }
}

/// `restart-drill`: kills one side mid-scenario and checks recovery.
pub fn restart_drill(common: &Common, device: &DeviceArgs, host: &HostArgs, victim: Victim) -> Result<(), Exit> {
    let raw = validate(common, device)?;
    let stop = stop_flag()?;
    let mut drills: Vec<(&str, Result<(), String>)> = Vec::new();

    if victim == Victim::None {
        let r = (|| {
            let (mut dev, bound) = start_device(&raw, common, device).map_err(|e| e.message)?;
            fresh_scenario(&bound, common, host, &stop)?;
            match exit_code(dev.terminate(Duration::from_secs(10))) {
                0 => Ok(()),
                c => Err(format!("device exited with {c}")),
            }
        })();
        drills.push(("no-kill", r));
    }
    if matches!(victim, Victim::Host | Victim::Both) {
        drills.push(("host-kill", host_kill_drill(common, device, host, &raw, &stop)));
    }
    if matches!(victim, Victim::Device | Victim::Both) {
        drills.push(("device-kill", device_kill_drill(common, device, host, &raw, &stop)));
    }

    let mut failed = 0;
    for (name, r) in &drills {
        match r {
            Ok(()) => println!("DRILL {name}: PASS"),
            Err(e) => {
                failed += 1;
                warn!("{name} drill: {e}");
                println!("DRILL {name}: FAIL ({e})");
            }
        }
    }
    if failed > 0 {
        return Err(Exit::code(EXIT_FAILED, format!("{failed} drill(s) failed")));
    }
    Ok(())
}
