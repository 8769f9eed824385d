//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

#[path = "../../../core/tests/support/mod.rs"]
mod support;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::{Duration, Instant};

use cosim::accel::{regs, sorter_latency, SortAccelerator, SorterConfig, StreamBeat, StreamingSorter};
use cosim::devsim::probe::{ProbePlatform, PROBE_ADDR, PROBE_ADDR_HI, PROBE_DATA};
use cosim::devsim::{KernelConfig, RunMode, RunUntil, SimKernel, SocketDeviceLink};
use cosim::hostsim::{sort_offload, BarConfig, GuestMemory, MsiConfig, PseudoDevice, SocketHostLink, SortOffload};
use cosim::proto::{decode_body, encode_frame, Endpoint, FrameDecoder};
use cosim::trace::EventLog;
use proptest::collection::vec as pvec;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use support::accel_suite::{cases, Bridged, Direct};
use support::vcd_check::check_vcd;
use support::wire_gen::wire_message;
use support::{lockstep_host, lockstep_kernel, oracle_sort, MEM};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !($cond) {
            return Err(format!($($fmt)+));
        }
    };
}

fn cosim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cosim")).args(args).output().expect("spawn cosim")
}

fn stdout_json(out: &Output) -> Result<Value, String> {
    let text = String::from_utf8_lossy(&out.stdout);
    let line = text.lines().rev().find(|l| l.starts_with('{')).ok_or_else(|| format!("no JSON report in {text:?}"))?;
    serde_json::from_str(line).map_err(|e| e.to_string())
}

/// Source keys the scenario generator must produce for `seed`.
fn expected_input(count: usize, n: usize, seed: u64) -> Vec<i32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count * n).map(|_| rng.gen::<i32>()).collect()
}

fn end_to_end_offload() -> Outcome {
    let t = Instant::now();
    let out = cosim(&["run", "--scenario", "sort", "--n", "1024", "--lanes", "4", "--count", "3", "--seed", "42"]);
    let wall = t.elapsed();
    ensure!(out.status.code() == Some(0), "exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    ensure!(wall < Duration::from_secs(60), "took {wall:?}");
    let report = stdout_json(&out)?;
    ensure!(report["pass"] == true, "report {report}");
    ensure!(report["batches"] == serde_json::json!([true, true, true]), "batches {}", report["batches"]);
    ensure!(report["interrupts"] == 1, "interrupts {}", report["interrupts"]);

    // same configuration in-process, destination inspected against the oracle
    let shutdown = Arc::new(AtomicBool::new(false));
    let flag = shutdown.clone();
    let (tx, rx) = mpsc::channel();
    let device = thread::spawn(move || {
        let link = SocketDeviceLink::listen(&Endpoint::Tcp("127.0.0.1:0".into())).unwrap();
        tx.send(link.local_endpoint().clone()).unwrap();
        let accel = SortAccelerator::new(SorterConfig::new(1024, 4).unwrap());
        SimKernel::new(KernelConfig::default(), accel, link).run(RunMode::FreeRun, RunUntil::Shutdown, &flag)
    });
    let ep = rx.recv_timeout(Duration::from_secs(5)).map_err(|e| e.to_string())?;
    let link = SocketHostLink::connect_with_backoff(&ep, 5).map_err(|e| e.to_string())?;
    let mut dev = PseudoDevice::new(link, GuestMemory::new(MEM).unwrap(), BarConfig::bar0(), MsiConfig::default());
    let cfg = SortOffload::new(3, 1024, 42);
    let r = sort_offload(&mut dev, &cfg, &mut || {}).map_err(|e| e.to_string())?;
    let dst = dev.memory().read_i32s(cfg.dst(), 3 * 1024).unwrap();
    let src = dev.memory().read_i32s(cfg.src(), 3 * 1024).unwrap();
    drop(dev);
    shutdown.store(true, Ordering::SeqCst);
    device.join().unwrap().map_err(|e| e.to_string())?;
    ensure!(src == expected_input(3, 1024, 42), "source buffer differs from the seeded generator");
    for (b, (s, d)) in src.chunks(1024).zip(dst.chunks(1024)).enumerate() {
        ensure!(d == oracle_sort(s), "batch {b} differs from the oracle");
    }
    ensure!(r.interrupts == 1, "{} interrupts in-process", r.interrupts);
    Ok(format!("3/3 batches, 1 interrupt, {:.2}s", wall.as_secs_f64()))
}

fn stream_outputs(sorter: &mut StreamingSorter, batches: &[Vec<i32>]) -> Vec<(u64, StreamBeat)> {
    let w = sorter.config().w();
    let mut feed = Vec::new();
    for b in batches {
        let per = b.len() / w;
        for (i, c) in b.chunks(w).enumerate() {
            feed.push(StreamBeat::new(c.to_vec(), i + 1 == per));
        }
    }
    let want = feed.len();
    let mut feed = feed.into_iter();
    let mut out = Vec::with_capacity(want);
    let mut cycle = 0;
    while out.len() < want && cycle < 50_000_000 {
        if let Some(b) = feed.next() {
            sorter.push(b).unwrap();
        }
        if let Some(o) = sorter.step() {
            out.push((cycle, o));
        }
        cycle += 1;
    }
    out
}

fn grid() -> Vec<(usize, usize)> {
    let mut g = Vec::new();
    for n in [4, 8, 64, 256, 1024] {
        for w in [1, 2, 4, 8] {
            if w <= n {
                g.push((n, w));
            }
        }
    }
    g
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize) -> Vec<i32> {
    match rng.gen_range(0..6) {
        0 | 1 => (0..n).map(|_| rng.gen()).collect(),
        2 => (0..n).map(|_| rng.gen_range(-3..=3)).collect(),
        3 => (0..n)
            .map(|_| match rng.gen_range(0..4) {
                0 => i32::MIN,
                1 => i32::MAX,
                _ => rng.gen(),
            })
            .collect(),
        4 => vec![rng.gen(); n],
        _ => {
            let mut v: Vec<i32> = (0..n).map(|_| rng.gen()).collect();
            v.sort();
            if rng.gen() {
                v.reverse();
            }
            v
        }
    }
}

fn sorter_oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5041_5045);
    let combos = grid();
    let per = 1000usize.div_ceil(combos.len()) + 2;
    let mut total = 0;
    for (n, w) in &combos {
        let batches: Vec<Vec<i32>> = (0..per).map(|_| random_batch(&mut rng, *n)).collect();
        let mut s = StreamingSorter::new(SorterConfig::new(*n, *w).unwrap());
        let out = stream_outputs(&mut s, &batches);
        let flat: Vec<i32> = out.iter().flat_map(|(_, b)| b.lanes.iter().copied()).collect();
        ensure!(flat.len() == per * n, "n={n} w={w}: {} keys out of {}", flat.len(), per * n);
        for (i, (input, output)) in batches.iter().zip(flat.chunks(*n)).enumerate() {
            ensure!(output == oracle_sort(input), "n={n} w={w} batch {i} mismatch");
        }
        total += per;
    }
    ensure!(total >= 1000, "only {total} batches");
    Ok(format!("{total} batches over {} (n, w) pairs", combos.len()))
}

fn fixed_latency_and_pipelining() -> Outcome {
    let l = |n, w| sorter_latency(SorterConfig::new(n, w).unwrap()) as u64;
    ensure!(l(4, 4) == 3 && l(8, 1) == 17 && l(1024, 4) == 557, "latency register values");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (n, w) in grid() {
        let cfg = SorterConfig::new(n, w).unwrap();
        let per = n / w;
        for k in [1usize, 2, 7] {
            let batches: Vec<Vec<i32>> = (0..k).map(|_| random_batch(&mut rng, n)).collect();
            let mut s = StreamingSorter::new(cfg);
            let out = stream_outputs(&mut s, &batches);
            ensure!(out.len() == k * per, "n={n} w={w} k={k}: {} beats", out.len());
            for b in 0..k {
                let first_in = (b * per) as u64;
                let first_out = out[b * per].0;
                ensure!(first_out - first_in == l(n, w), "n={n} w={w} batch {b}: delay {}", first_out - first_in);
            }
            let finish = out.last().unwrap().0 + 1;
            ensure!(finish == l(n, w) + (k * per) as u64, "n={n} w={w} k={k}: finished at {finish}");
        }
    }
    Ok("L constant per batch, L + k*n/w total, L(4,4)=3 L(8,1)=17 L(1024,4)=557".into())
}

fn protocol_codec() -> Outcome {
    let mut runner = TestRunner::new(Config { cases: 100_000, failure_persistence: None, ..Config::default() });
    runner
        .run(&wire_message(), |m| {
            let frame = encode_frame(&m).map_err(|e| TestCaseError::fail(e.to_string()))?;
            let len = u32::from_le_bytes(frame[..4].try_into().unwrap()) as usize;
            if len != frame.len() - 4 {
                return Err(TestCaseError::fail("length prefix"));
            }
            let back = decode_body(&frame[4..]).map_err(|e| TestCaseError::fail(e.to_string()))?;
            if back != m {
                return Err(TestCaseError::fail(format!("{back:?} != {m:?}")));
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;

    let mut runner = TestRunner::new(Config { cases: 2_000, failure_persistence: None, ..Config::default() });
    runner
        .run(&pvec(wire_message(), 1..8), |msgs| {
            let bytes: Vec<u8> = msgs.iter().flat_map(|m| encode_frame(m).unwrap()).collect();
            let mut dec = FrameDecoder::new();
            let mut got = Vec::new();
            for b in &bytes {
                dec.push(std::slice::from_ref(b));
                while let Some(m) = dec.next_message().map_err(|e| TestCaseError::fail(e.to_string()))? {
                    got.push(m);
                }
            }
            if got != msgs {
                return Err(TestCaseError::fail("fragmented sequence differs"));
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("100000 round trips, 2000 one-byte-chunk sequences".into())
}

fn restart_independence() -> Outcome {
    let out = cosim(&["restart-drill", "--n", "1024", "--lanes", "4", "--count", "3", "--seed", "42"]);
    let text = String::from_utf8_lossy(&out.stdout);
    ensure!(out.status.code() == Some(0), "exit {:?}\n{text}", out.status.code());
    for drill in ["host-kill", "device-kill"] {
        ensure!(text.contains(&format!("DRILL {drill}: PASS")), "{drill} drill missing\n{text}");
    }
    ensure!(text.contains("aborted job left STATUS 0x4"), "host-kill did not leave the DMA in ERROR\n{text}");
    ensure!(text.contains("RECONNECTED"), "host never reconnected\n{text}");

    // the abort path itself, cycle by cycle
    let mut dev = support::sorter_host(1024, 4);
    let cfg = SortOffload::new(2, 1024, 1);
    dev.memory_mut().write_i32s(cfg.src(), &expected_input(2, 1024, 1)).unwrap();
    dev.write64(regs::SRC_ADDR, cfg.src()).unwrap();
    dev.write64(regs::DST_ADDR, cfg.dst()).unwrap();
    dev.write32(regs::LEN_BYTES, cfg.len_bytes() as u32).unwrap();
    dev.write32(regs::CTRL, regs::CTRL_START).unwrap();
    let link = dev.link_mut().inner_mut();
    link.advance(50).unwrap();
    link.disconnect();
    link.advance(5).unwrap();
    let aborted = link.kernel().bridge_stats().aborted_host_reads;
    ensure!(aborted > 0, "no host reads were aborted");
    ensure!(link.kernel().platform().status() & regs::STATUS_ERROR != 0, "DMA not in ERROR after abort");
    Ok(format!("both drills pass, {aborted} reads aborted in lockstep"))
}

struct Traced {
    vcd: Vec<u8>,
    log: Vec<u8>,
    logged: u64,
    observed: u64,
}

fn lockstep_traced_run(dir: &std::path::Path) -> Traced {
    let mut kernel = lockstep_kernel(SortAccelerator::new(SorterConfig::new(64, 4).unwrap()));
    kernel.attach_vcd_file(&dir.join("w.vcd"), "4ns").unwrap();
    kernel.attach_log(EventLog::create(&dir.join("e.jsonl")).unwrap());
    let mut dev = lockstep_host(kernel);
    let report = sort_offload(&mut dev, &SortOffload::new(4, 64, 77), &mut || {}).unwrap();
    assert!(report.pass, "{report}");
    dev.link_mut().inner_mut().advance(16).unwrap();
    dev.serve_device_requests(false).unwrap();
    let kernel = dev.link_mut().inner_mut().kernel_mut();
    kernel.finish_trace().unwrap();
    let logged = kernel.event_log().unwrap().message_count();
    Traced {
        vcd: std::fs::read(dir.join("w.vcd")).unwrap(),
        log: std::fs::read(dir.join("e.jsonl")).unwrap(),
        logged,
        observed: dev.link().checker().total(),
    }
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = lockstep_traced_run(a.path());
    let second = lockstep_traced_run(b.path());
    ensure!(!first.vcd.is_empty() && !first.log.is_empty(), "empty traces");
    ensure!(first.vcd == second.vcd, "VCD files differ");
    ensure!(first.log == second.log, "event logs differ");
    Ok(format!("{} VCD bytes, {} log bytes identical", first.vcd.len(), first.log.len()))
}

fn trace_validity() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let run = lockstep_traced_run(dir.path());
    check_vcd(&String::from_utf8(run.vcd).unwrap()).map_err(|e| format!("lockstep VCD: {e}"))?;
    ensure!(run.logged == run.observed, "log has {} messages, checker saw {}", run.logged, run.observed);

    let vcd = dir.path().join("cli.vcd");
    let log = dir.path().join("cli.jsonl");
    let out = cosim(&[
        "run",
        "--n",
        "64",
        "--lanes",
        "8",
        "--count",
        "3",
        "--vcd",
        vcd.to_str().unwrap(),
        "--log",
        log.to_str().unwrap(),
    ]);
    ensure!(out.status.code() == Some(0), "cli run exit {:?}", out.status.code());
    let summary = check_vcd(&std::fs::read_to_string(&vcd).unwrap()).map_err(|e| format!("free-run VCD: {e}"))?;
    let lines = std::fs::read_to_string(&log).unwrap();
    let mut messages = 0;
    for l in lines.lines() {
        let v: Value = serde_json::from_str(l).map_err(|e| format!("log line {l:?}: {e}"))?;
        if v.get("channel").is_some() {
            messages += 1;
        }
    }
    ensure!(messages > 0, "free-run log holds no messages");
    Ok(format!("{} messages matched, {} signals in free-run VCD", run.logged, summary.vars.len()))
}

fn deadlock_freedom() -> Outcome {
    let mut dev = lockstep_host(lockstep_kernel(ProbePlatform::new()));
    let addr = 0x2_0000u64;
    dev.memory_mut().write(addr, &0xC0DE_F00Du32.to_le_bytes()).unwrap();
    dev.write32(PROBE_ADDR, addr as u32).unwrap();
    dev.write32(PROBE_ADDR_HI, 0).unwrap();
    let before = dev.link().inner().kernel().cycle();
    let value = dev.read32(PROBE_DATA).map_err(|e| e.to_string())?;
    let cycles = dev.link().inner().kernel().cycle() - before;
    ensure!(value == 0xC0DE_F00D, "probe returned {value:#x}");
    ensure!(cycles <= 10_000, "took {cycles} cycles");
    Ok(format!("nested read resolved in {cycles} cycles"))
}

fn report_shape() -> Outcome {
    let out = cosim(&["run", "--scenario", "rtt", "--n", "64", "--lanes", "4", "--count", "2", "--samples", "200"]);
    ensure!(out.status.code() == Some(0), "exit {:?}", out.status.code());
    let report = stdout_json(&out)?;
    let rows = report["time_report"]["rows"].as_array().ok_or("no time report")?;
    let row = rows.iter().find(|r| r["name"] == "Host to Device Read RTT").ok_or("no RTT row")?;
    let sim = row["simulated_us"].as_f64().unwrap_or(0.0);
    let actual = row["actual_us"].as_f64().unwrap_or(0.0);
    ensure!(sim.is_finite() && sim.is_sign_positive() && sim != 0.0, "simulated RTT {sim}");
    ensure!(rows.iter().any(|r| r["name"] == "Application Execution Time"), "no application row");
    let text = String::from_utf8_lossy(&out.stdout);
    ensure!(text.contains("Host to Device Read RTT"), "text report lacks the RTT row");
    Ok(format!("RTT actual {actual:.1} us, simulated {sim:.3} us"))
}

fn backing_opacity() -> Outcome {
    let mut ran = 0;
    for (backing, suite) in [("direct", cases::<Direct>()), ("bridge", cases::<Bridged>())] {
        for (name, case) in suite {
            catch_unwind(case).map_err(|_| format!("{name} failed on the {backing} backing"))?;
            ran += 1;
        }
    }
    Ok(format!("{ran} checks, same suite on both backings"))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("end-to-end offload", end_to_end_offload),
        ("sorter oracle equivalence", sorter_oracle_equivalence),
        ("fixed latency and full pipelining", fixed_latency_and_pipelining),
        ("protocol codec", protocol_codec),
        ("restart independence", restart_independence),
        ("determinism", determinism),
        ("trace validity", trace_validity),
        ("deadlock freedom", deadlock_freedom),
        ("report shape", report_shape),
        ("backing opacity", backing_opacity),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.into_iter().enumerate() {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail} [{secs:.1}s]", i + 1),
            Err(e) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {e} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
