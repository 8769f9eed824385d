use std::io::{BufRead, BufReader};
use std::net::TcpListener;
use std::process::{Child, Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

fn cosim() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cosim"));
    c.env_remove("COSIM_ENDPOINT");
    c
}

fn code(c: &mut Command) -> (Option<i32>, String, String) {
    let out = c.output().unwrap();
    (out.status.code(), String::from_utf8_lossy(&out.stdout).into(), String::from_utf8_lossy(&out.stderr).into())
}

/// Starts `cosim device` and returns it with its bound endpoint.
fn device(args: &[&str]) -> (Child, String) {
    let mut child = cosim().arg("device").args(args).stdout(Stdio::piped()).spawn().unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let ep = line.trim().strip_prefix("READY endpoint=").unwrap_or_else(|| panic!("bad ready line {line:?}"));
    (child, ep.to_string())
}

fn sigterm(child: &Child) {
    unsafe {
        libc::kill(child.id() as libc::pid_t, libc::SIGTERM);
    }
}

fn children_of(pid: u32) -> Vec<u32> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir("/proc").unwrap().flatten() {
        let Ok(p) = entry.file_name().to_string_lossy().parse::<u32>() else { continue };
        let Ok(stat) = std::fs::read_to_string(format!("/proc/{p}/stat")) else { continue };
        // ppid is the second field after the parenthesised command name
        let rest = &stat[stat.rfind(')').unwrap() + 2..];
        if rest.split(' ').nth(1).and_then(|s| s.parse::<u32>().ok()) == Some(pid) {
            out.push(p);
        }
    }
    out
}

fn alive(pid: u32) -> bool {
    std::fs::read_to_string(format!("/proc/{pid}/stat")).is_ok_and(|s| !s[s.rfind(')').unwrap() + 2..].starts_with('Z'))
}

#[test]
fn run_passes_and_reports() {
    let (c, out, _) = code(cosim().args(["run", "--n", "64", "--lanes", "4", "--count", "3", "--seed", "7"]));
    assert_eq!(c, Some(0));
    assert!(out.contains("batches sorted: 3/3"), "{out}");
    assert!(out.contains("interrupts:     1"), "{out}");
}

#[test]
fn config_errors_exit_2() {
    let (c, _, err) = code(cosim().args(["run", "--n", "1000"]));
    assert_eq!(c, Some(2));
    assert!(err.contains("power of two"), "{err}");
    assert!(err.contains("Usage"), "{err}");
    assert_eq!(code(cosim().args(["run", "--n", "8", "--lanes", "16"])).0, Some(2));
    assert_eq!(code(cosim().args(["run", "--bogus"])).0, Some(2));
    assert_eq!(code(cosim().args(["host"])).0, Some(2));
    assert_eq!(code(cosim().args(["host", "--endpoint", "nonsense"])).0, Some(2));
    assert_eq!(code(cosim().args(["host", "--endpoint", "127.0.0.1:9", "--mem-size", "5000"])).0, Some(2));
}

#[test]
fn unreachable_device_exits_3_after_retries() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let t = Instant::now();
    let (c, _, err) = code(cosim().args(["host", "--endpoint", &format!("127.0.0.1:{port}"), "--retries", "2"]));
    assert_eq!(c, Some(3));
    assert!(err.contains("3 attempts"), "{err}");
    assert!(t.elapsed() >= Duration::from_millis(150));
}

#[test]
fn mismatched_batch_size_is_a_scenario_failure() {
    let (mut dev, ep) = device(&["--n", "64", "--lanes", "4"]);
    let (c, out, _) = code(cosim().args(["host", "--endpoint", &ep, "--n", "128"]));
    assert_eq!(c, Some(1));
    assert!(out.contains("FAIL"), "{out}");
    sigterm(&dev);
    assert_eq!(dev.wait().unwrap().code(), Some(0));
}

#[test]
fn endpoint_from_environment_and_json_report() {
    let dir = tempfile::tempdir().unwrap();
    let sock = dir.path().join("dev.sock");
    let report = dir.path().join("report.json");
    let mut dev = Command::new(env!("CARGO_BIN_EXE_cosim"))
        .args(["device", "--n", "16", "--lanes", "2"])
        .env("COSIM_ENDPOINT", &sock)
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(dev.stdout.take().unwrap()).read_line(&mut line).unwrap();
    assert_eq!(line.trim(), format!("READY endpoint={}", sock.display()));

    let (c, _, _) = code(
        Command::new(env!("CARGO_BIN_EXE_cosim"))
            .args(["host", "--n", "16", "--count", "4", "--report", report.to_str().unwrap()])
            .env("COSIM_ENDPOINT", &sock),
    );
    assert_eq!(c, Some(0));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    for field in ["scenario", "pass", "batches", "wall_us", "device_cycles", "interrupts", "errors"] {
        assert!(v.get(field).is_some(), "missing {field} in {v}");
    }
    assert_eq!(v["batches"].as_array().unwrap().len(), 4);
    sigterm(&dev);
    assert_eq!(dev.wait().unwrap().code(), Some(0));
    assert!(!sock.exists(), "socket file left behind");
}

#[test]
fn device_stops_at_max_cycles_with_traces() {
    let dir = tempfile::tempdir().unwrap();
    let vcd = dir.path().join("w.vcd");
    let log = dir.path().join("e.jsonl");
    let (c, out, _) = code(cosim().args([
        "device",
        "--n",
        "8",
        "--lanes",
        "2",
        "--no-idle-block",
        "--max-cycles",
        "500",
        "--vcd",
        vcd.to_str().unwrap(),
        "--log",
        log.to_str().unwrap(),
    ]));
    assert_eq!(c, Some(0));
    assert!(out.starts_with("READY endpoint=127.0.0.1:"), "{out}");
    let wave = std::fs::read_to_string(&vcd).unwrap();
    assert!(wave.contains("$enddefinitions $end"));
    assert!(wave.contains("#0"));
    assert_eq!(std::fs::read_to_string(&log).unwrap(), "");
}

#[test]
fn drill_without_kill_is_a_plain_scenario() {
    let (c, out, _) = code(cosim().args(["restart-drill", "--victim", "none", "--n", "32", "--lanes", "2"]));
    assert_eq!(c, Some(0), "{out}");
    assert!(out.contains("DRILL no-kill: PASS"));
}

#[test]
fn killed_supervisor_takes_its_children_along() {
    let mut run = cosim()
        .args(["run", "--scenario", "rtt", "--samples", "100000000", "--n", "8", "--lanes", "2", "--count", "1"])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(10);
    let kids = loop {
        let k = children_of(run.id());
        if k.len() == 2 || Instant::now() > deadline {
            break k;
        }
        thread::sleep(Duration::from_millis(20));
    };
    assert_eq!(kids.len(), 2, "supervisor children {kids:?}");
    run.kill().unwrap();
    run.wait().unwrap();
    let deadline = Instant::now() + Duration::from_secs(5);
    while kids.iter().any(|&k| alive(k)) {
        assert!(Instant::now() < deadline, "orphaned children {kids:?}");
        thread::sleep(Duration::from_millis(20));
    }
}

#[test]
fn terminated_supervisor_stops_both_sides() {
    let mut run = cosim()
        .args(["run", "--scenario", "rtt", "--samples", "100000000", "--n", "8", "--lanes", "2", "--count", "1"])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(10);
    while children_of(run.id()).len() < 2 {
        assert!(Instant::now() < deadline);
        thread::sleep(Duration::from_millis(20));
    }
    let kids = children_of(run.id());
    sigterm(&run);
    let status = run.wait().unwrap();
    assert_eq!(status.code(), Some(1));
    assert!(kids.iter().all(|&k| !alive(k)));
}
