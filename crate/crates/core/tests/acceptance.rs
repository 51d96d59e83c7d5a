//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Real-clock rate runs start first on background threads and are
//! joined at the end, so the whole suite takes a little over a minute.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::thread;
use std::time::Instant;

use cyr::analysis::{compare_replays, emit_stats_csv, Signal};
use cyr::collector::{associate_latest, CollectorMetrics, Mode};
use cyr::control::{execute_playback, validate_plan, TeleopMapping, TrajectoryPlan};
use cyr::device::LatencyModel;
use cyr::policy::{
    decode_message, encode_message, serve_replay_policy, ActionMessage, CameraImage, ErrorMessage, ObservationMessage,
    PolicyEndpoint, PolicyLoopConfig, PolicyMessage,
};
use cyr::sim::{RigConfig, SimOptions, SimRig};
use cyr::store::{export_training_set, read_episode, write_episode, StoreError, FRAMES_FILE, INDEX_FILE, MANIFEST_FILE};
use cyr::types::ImagePayload;
use cyr::workflow::{bench_collect, demo_leader_script, record_policy_run, record_teleop};
use cyr::{Clock, JointVector, Payload, Sample, Timestamp};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Rate benchmark
const BENCH_RATE_HZ: f64 = 60.0;
const BENCH_SECONDS: f64 = 30.0;
const BENCH_RUNS: usize = 5;
const PARALLEL_MIN_HZ: f64 = 59.9;
const SERIAL_BAND_HZ: (f64, f64) = (58.0, 59.9);
const CLOCK_AGREEMENT_HZ: f64 = 0.3;
// 30 Hz collection
const COLLECT_RATE_HZ: f64 = 30.0;
const COLLECT_SECONDS: f64 = 60.0;
const COLLECT_TOLERANCE_HZ: f64 = 0.15;
// Closed loop
const CLOSED_LOOP_RUNS: usize = 50;
const MAX_GLOBAL_MAD: f64 = 5e-3;
const MAX_TICK_VARIANCE: f64 = 1e-5;
// Playback
const PLAYBACK_SLACK: f64 = 1e-9;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn run(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let started = Instant::now();
    let o = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
        outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
    });
    println!(
        "{} {name}: {} ({:.1} s)",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail,
        started.elapsed().as_secs_f64()
    );
    o.pass
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

type Runs = Vec<(f64, f64)>;

/// `BENCH_RUNS` (serial, parallel) effective-rate pairs.
fn bench_pairs(clock: impl Fn() -> Clock) -> Runs {
    (0..BENCH_RUNS)
        .map(|_| {
            let rate = |mode| -> CollectorMetrics {
                bench_collect(&RigConfig::reference(), clock(), mode, BENCH_RATE_HZ, BENCH_SECONDS).expect("bench run")
            };
            (rate(Mode::Serial).effective_hz, rate(Mode::Parallel).effective_hz)
        })
        .collect()
}

/// Real-clock pairs with every run on its own thread; the rig mostly sleeps
/// so concurrent runs do not compete for CPU.
fn real_bench_pairs() -> thread::JoinHandle<Runs> {
    thread::spawn(|| {
        let handles: Vec<_> = (0..BENCH_RUNS)
            .flat_map(|_| [Mode::Serial, Mode::Parallel])
            .map(|mode| {
                thread::spawn(move || {
                    bench_collect(&RigConfig::reference(), Clock::real(), mode, BENCH_RATE_HZ, BENCH_SECONDS).expect("bench run").effective_hz
                })
            })
            .collect();
        let rates: Vec<f64> = handles.into_iter().map(|h| h.join().expect("bench thread")).collect();
        rates.chunks(2).map(|c| (c[0], c[1])).collect()
    })
}

fn judge_rates(label: &str, runs: &Runs) -> (bool, String, f64, f64) {
    let serial = median(runs.iter().map(|r| r.0).collect());
    let parallel = median(runs.iter().map(|r| r.1).collect());
    let ordered = runs.iter().all(|(s, p)| p > s);
    let pass = parallel >= PARALLEL_MIN_HZ && serial >= SERIAL_BAND_HZ.0 && serial < SERIAL_BAND_HZ.1 && ordered;
    (pass, format!("{label} serial {serial:.3} Hz, parallel {parallel:.3} Hz, parallel>serial in every run: {ordered}"), serial, parallel)
}

fn rate_benchmark(real: Runs) -> Outcome {
    let virt = bench_pairs(Clock::virtual_time);
    let (vp, vd, vs, vpar) = judge_rates("virtual", &virt);
    let (rp, rd, rs, rpar) = judge_rates("real", &real);
    let agree = (vs - rs).abs() <= CLOCK_AGREEMENT_HZ && (vpar - rpar).abs() <= CLOCK_AGREEMENT_HZ;
    let real_runs: Vec<String> = real.iter().map(|(s, p)| format!("{s:.3}/{p:.3}")).collect();
    outcome(
        vp && rp && agree,
        format!("{vd}; {rd} (runs {}); clocks agree within {CLOCK_AGREEMENT_HZ} Hz: {agree}", real_runs.join(" ")),
    )
}

fn collect_30hz(real: f64) -> Outcome {
    let virt = bench_collect(&RigConfig::reference(), Clock::virtual_time(), Mode::Parallel, COLLECT_RATE_HZ, COLLECT_SECONDS)
        .expect("collect")
        .effective_hz;
    let ok = |hz: f64| (hz - COLLECT_RATE_HZ).abs() <= COLLECT_TOLERANCE_HZ;
    outcome(ok(virt) && ok(real), format!("virtual {virt:.4} Hz, real {real:.4} Hz, band {COLLECT_RATE_HZ} ± {COLLECT_TOLERANCE_HZ}"))
}

fn association_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let mut ts: Vec<u64> = (0..rng.random_range(0..200)).map(|_| rng.random_range(0..10_000)).collect();
        ts.sort_unstable();
        let samples: Vec<Sample> = ts.iter().map(|&t| Sample::new("s", Timestamp(t), Payload::Scalar(0.0))).collect();
        let tick = rng.random_range(0..11_000);
        let scan = samples.iter().rposition(|s| s.capture_ts.0 <= tick);
        if associate_latest(&samples, Timestamp(tick)).expect("ordered") != scan {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("1000 instances, {mismatches} mismatches"))
}

fn storage_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let root = tempfile::tempdir().expect("tempdir");
    let mut differing = 0;
    for i in 0..100 {
        let ep = common::random_episode(&mut rng, &format!("ep-{i}"));
        let (a, b) = (root.path().join(format!("a{i}")), root.path().join(format!("b{i}")));
        write_episode(&ep, &a).expect("write");
        let back = read_episode(&a).expect("read");
        write_episode(&back, &b).expect("rewrite");
        if back != ep || common::dir_bytes(&a) != common::dir_bytes(&b) {
            differing += 1;
        }
    }

    let mut checks = Vec::new();
    let corrupt = |name: &str, f: &dyn Fn(&std::path::Path)| {
        let dir = root.path().join(name);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ep = common::random_episode(&mut rng, name);
        while ep.streams["arm"].samples.len() < 2 {
            ep = common::random_episode(&mut rng, name);
        }
        write_episode(&ep, &dir).expect("write");
        f(&dir);
        read_episode(&dir)
    };
    let edit = |path: std::path::PathBuf, g: &dyn Fn(&mut Vec<u8>)| {
        let mut b = fs::read(&path).expect("read");
        g(&mut b);
        fs::write(&path, b).expect("write");
    };
    checks.push(matches!(corrupt("magic", &|d| edit(d.join("arm.cyr"), &|b| b[0] = b'X')), Err(StoreError::Magic { .. })));
    checks.push(matches!(
        corrupt("version", &|d| edit(d.join("arm.cyr"), &|b| b[4] = 7)),
        Err(StoreError::Version { found: 7, .. })
    ));
    checks.push(matches!(
        corrupt("header", &|d| edit(d.join("arm.cyr"), &|b| b.truncate(6))),
        Err(StoreError::TruncatedHeader { len: 6, .. })
    ));
    checks.push(matches!(
        corrupt("record", &|d| edit(d.join("arm.cyr"), &|b| b.truncate(b.len() - 1))),
        Err(StoreError::Truncated { .. })
    ));
    checks.push(matches!(
        corrupt("frameref", &|d| edit(d.join(FRAMES_FILE), &|b| b[20..28].copy_from_slice(&u64::MAX.wrapping_sub(1).to_le_bytes()))),
        Err(StoreError::Corrupt { .. })
    ));
    checks.push(matches!(
        corrupt("count", &|d| {
            let text = fs::read_to_string(d.join(MANIFEST_FILE)).expect("meta");
            let mut m: serde_json::Value = serde_json::from_str(&text).expect("json");
            for s in m["streams"].as_array_mut().expect("streams") {
                if s["id"] == "arm" {
                    s["record_count"] = (s["record_count"].as_u64().unwrap() + 5).into();
                }
            }
            fs::write(d.join(MANIFEST_FILE), m.to_string()).expect("write");
        }),
        Err(StoreError::CountMismatch { .. })
    ));
    checks.push(matches!(corrupt("json", &|d| fs::write(d.join(MANIFEST_FILE), "[").unwrap()), Err(StoreError::Json { .. })));
    checks.push(matches!(corrupt("missing", &|d| fs::remove_file(d.join("arm.cyr")).unwrap()), Err(StoreError::Io { .. })));
    let typed = checks.iter().filter(|&&c| c).count();
    outcome(
        differing == 0 && typed == checks.len(),
        format!("100 episodes, {differing} not bit-identical; {typed}/{} corruption cases typed", checks.len()),
    )
}

fn playback_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for i in 0..20 {
        let rig = if i % 2 == 0 { RigConfig::reference() } else { RigConfig::single_arm() };
        let config = rig.robot_config().unwrap();
        let (lo, hi, vmax) = (config.q_min(), config.q_max(), config.v_max());
        let rate = [20.0, 30.0, 50.0, 60.0][i % 4];
        let pose = |rng: &mut ChaCha8Rng| -> Vec<f64> { lo.iter().zip(&hi).map(|(a, b)| rng.random_range(a * 0.8..=b * 0.8)).collect() };
        let mut prev = pose(&mut rng);
        let mut t = 0.0;
        let mut wps = vec![(0.0, JointVector::new(prev.clone()).unwrap())];
        for _ in 0..rng.random_range(1..6) {
            let next = pose(&mut rng);
            let need = (0..next.len()).map(|j| (next[j] - prev[j]).abs() / vmax[j]).fold(0.0, f64::max);
            t += need * rng.random_range(1.05..2.0) + 0.02;
            wps.push((t, JointVector::new(next.clone()).unwrap()));
            prev = next;
        }
        let plan = TrajectoryPlan::timed(rate, wps);
        validate_plan(&plan, &config).expect("feasible by construction");
        let opts = SimOptions { initial_pose: Some(plan.waypoints[0].q.values().to_vec()), ..Default::default() };
        let sim = SimRig::build(&rig, Clock::virtual_time(), opts).unwrap();
        let log = execute_playback(&sim.robot, &plan).expect("playback");
        let start = log.commanded[0].0;
        for w in &plan.waypoints {
            let q = log.measured_at(start + (w.t.unwrap() * 1e9).round() as u64).expect("measurement");
            for j in 0..config.action_dim() {
                let err = (q.values()[j] - w.q.values()[j]).abs();
                let bound = vmax[j] / rate + PLAYBACK_SLACK;
                worst = worst.max(err / bound);
                if err > bound {
                    failures += 1;
                }
            }
        }
    }
    outcome(failures == 0, format!("20 plans, {failures} joint errors over bound, worst error/bound {worst:.3}"))
}

fn teleop_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 14;
    let vec = |rng: &mut ChaCha8Rng| JointVector::new((0..n).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
    let (mut jumps, mut inexact) = (0, 0);
    for _ in 0..1000 {
        let alpha = rng.random_range(0.01..=1.0);
        let scale: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut m = TeleopMapping::new(scale.clone(), alpha, vec![-3.0; n], vec![3.0; n]).unwrap();
        let (l0, f0) = (vec(&mut rng), vec(&mut rng));
        m.engage(&l0, &f0).unwrap();
        if m.step(&l0, &f0).unwrap() != f0 {
            jumps += 1;
        }

        let mut u = TeleopMapping::new(scale.clone(), 1.0, vec![-1e9; n], vec![1e9; n]).unwrap();
        u.engage(&l0, &f0).unwrap();
        let l = vec(&mut rng);
        let out = u.step(&l, &f0).unwrap();
        let ok = (0..n).all(|j| {
            let want = scale[j] * (l.values()[j] - l0.values()[j]) + f0.values()[j];
            out.values()[j] == want
        });
        if !ok {
            inexact += 1;
        }
    }
    outcome(jumps == 0 && inexact == 0, format!("1000 engage states, {jumps} jumps; {inexact} inexact unit-alpha outputs"))
}

fn closed_loop() -> Outcome {
    let rig = RigConfig::reference();
    let dim = rig.robot_config().unwrap().action_dim();
    let mut init = vec![0.0; dim];
    init[6] = 0.5;
    init[13] = 0.5;
    let secs = 5.0;
    let opts = SimOptions {
        initial_pose: Some(init),
        leader: Some((demo_leader_script(dim, secs), LatencyModel::fixed(200))),
        ..Default::default()
    };
    let expert_rig = SimRig::build(&rig, Clock::virtual_time(), opts).unwrap();
    let expert = record_teleop(&expert_rig, 30.0, Mode::Parallel, secs, "expert").expect("expert").episode;
    let server = serve_replay_policy(&expert, "127.0.0.1:0", 8).expect("server");
    let endpoint = PolicyEndpoint::new("127.0.0.1", server.local_addr().port());
    let steps = expert.frames.len() as u64;
    let replays: Vec<_> = (0..CLOSED_LOOP_RUNS)
        .map(|_| {
            let sim = SimRig::build(&rig, Clock::virtual_time(), SimOptions::default()).unwrap();
            record_policy_run(&sim, &PolicyLoopConfig::new(endpoint.clone(), steps), "replay").expect("replay").episode
        })
        .collect();
    server.shutdown();
    let stats = compare_replays(&expert, &replays, Signal::Action).expect("compare");
    let dir = tempfile::tempdir().unwrap();
    let rows = emit_stats_csv(&stats, &dir.path().join("stats.csv")).expect("csv");
    let want_rows = stats.ticks.len() * dim + 1;
    outcome(
        stats.global_mad <= MAX_GLOBAL_MAD && stats.max_variance <= MAX_TICK_VARIANCE && rows == want_rows && !stats.ticks.is_empty(),
        format!(
            "{CLOSED_LOOP_RUNS} runs over {} ticks: global MAD {:.3e}, max variance {:.3e}, CSV rows {rows} (expected {want_rows})",
            stats.ticks.len(),
            stats.global_mad,
            stats.max_variance
        ),
    )
}

fn export_determinism() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let eps: Vec<_> = (0..50).map(|i| common::random_episode(&mut rng, &format!("ep-{i:02}"))).collect();
    let root = tempfile::tempdir().unwrap();
    let a = export_training_set(&eps, 20, 2024, &root.path().join("a")).expect("export");
    export_training_set(&eps, 20, 2024, &root.path().join("b")).expect("export");
    let same = fs::read(root.path().join("a").join(INDEX_FILE)).unwrap() == fs::read(root.path().join("b").join(INDEX_FILE)).unwrap();
    outcome(same && a.entries.len() == 20, format!("k=20 of 50, index files identical: {same}"))
}

fn random_message(rng: &mut ChaCha8Rng) -> PolicyMessage {
    let vec = |rng: &mut ChaCha8Rng, n: usize| JointVector::new((0..n).map(|_| rng.random_range(-1e3..1e3)).collect()).unwrap();
    match rng.random_range(0..3) {
        0 => {
            let dim = rng.random_range(1..20);
            let images = (0..rng.random_range(0..4))
                .map(|k| {
                    let (w, h, c) = (rng.random_range(1..16), rng.random_range(1..16), if rng.random_bool(0.5) { 1 } else { 3 });
                    let mut px = vec![0u8; (w * h * c as u32) as usize];
                    rng.fill_bytes(&mut px);
                    CameraImage { id: format!("cam_{k}"), image: ImagePayload::new(w, h, c, px).unwrap() }
                })
                .collect();
            let horizon = rng.random_bool(0.5).then(|| rng.random_range(1..64));
            PolicyMessage::Observation(ObservationMessage { seq: rng.next_u64(), tick_ts: Timestamp(rng.next_u64()), joints: vec(rng, dim), images, horizon })
        }
        1 => {
            let (h, dim) = (rng.random_range(1..16), rng.random_range(1..20));
            let actions = (0..h).map(|_| vec(rng, dim)).collect();
            PolicyMessage::Action(ActionMessage { seq: rng.next_u64(), horizon: h as u32, actions, clamped: rng.random_bool(0.5) })
        }
        _ => PolicyMessage::Error(ErrorMessage { seq: rng.next_u64(), code: "timeout".into(), message: format!("late by {}", rng.next_u32()) }),
    }
}

fn protocol_robustness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut bad_round_trips = 0;
    for _ in 0..1000 {
        let m = random_message(&mut rng);
        if decode_message(&encode_message(&m)).ok() != Some(m) {
            bad_round_trips += 1;
        }
    }
    let mut crashes = 0;
    for _ in 0..10_000 {
        let mut bytes = vec![0u8; rng.random_range(0..512)];
        rng.fill_bytes(&mut bytes);
        if rng.random_bool(0.5) && bytes.len() >= 5 {
            let len = (bytes.len() - 4) as u32;
            bytes[..4].copy_from_slice(&len.to_le_bytes());
            bytes[4] = rng.random_range(1..=3);
        }
        if catch_unwind(|| decode_message(&bytes)).is_err() {
            crashes += 1;
        }
    }
    outcome(
        bad_round_trips == 0 && crashes == 0,
        format!("1000 round trips, {bad_round_trips} inexact; 10000 random decodes, {crashes} crashes"),
    )
}

fn main() {
    // silence the default hook so expected-to-be-caught panics stay off stderr
    std::panic::set_hook(Box::new(|_| {}));
    let real_bench = real_bench_pairs();
    let real_collect = thread::spawn(|| {
        bench_collect(&RigConfig::reference(), Clock::real(), Mode::Parallel, COLLECT_RATE_HZ, COLLECT_SECONDS).expect("collect").effective_hz
    });

    let mut results = BTreeMap::new();
    results.insert(3, run("association oracle", association_oracle));
    results.insert(4, run("storage round trip", storage_round_trip));
    results.insert(5, run("playback fidelity", playback_fidelity));
    results.insert(6, run("teleop invariants", teleop_invariants));
    results.insert(7, run("closed-loop replay", closed_loop));
    results.insert(8, run("export determinism", export_determinism));
    results.insert(9, run("protocol robustness", protocol_robustness));
    let real = real_bench.join().expect("real-clock bench");
    results.insert(1, run("rate benchmark", || rate_benchmark(real)));
    let real30 = real_collect.join().expect("real-clock collect");
    results.insert(2, run("30 Hz collection", || collect_30hz(real30)));

    let failed = results.values().filter(|&&p| !p).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
