//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use std::net::Ipv4Addr;

use handoff_sim::agents::{HandoffMessage, Outcome};
use handoff_sim::metrics::{latency_stats, overlap_required, RunReport};
use handoff_sim::net::MacAddr;
use handoff_sim::scenario::{run_scenario, RunOptions, Scenario, ScenarioConfig, Scheme};

const SEEDS: std::ops::RangeInclusive<u64> = 1..=10;
const RUNTIME_LIMIT_S: f64 = 10.0;
const DEFAULT_LATENCY_MS: f64 = 50.0;
const DEFAULT_LATENCY_TOL_MS: f64 = 10.0;
const LOSSY_BROADCAST: f64 = 0.3;
const LOSSY_LATENCY_MS: (f64, f64) = (60.0, 110.0);
const LOSSY_MAX_PER_10K: f64 = 5.0;
const OVERLAP_REFERENCE_M: f64 = 2.21;
const OVERLAP_REL_TOL: f64 = 0.01;

struct Outcomes {
    failed: usize,
}

impl Outcomes {
    fn record(&mut self, id: &str, pass: bool, detail: String) {
        println!("{} {id}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failed += 1;
        }
    }
}

fn fig1() -> Scenario {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/fig1.json");
    Scenario::new(ScenarioConfig::load(std::path::Path::new(path)).unwrap()).unwrap()
}

fn run(sc: &Scenario, scheme: Scheme, seed: u64) -> (RunReport, f64) {
    let start = Instant::now();
    let out = run_scenario(sc, scheme, seed, &RunOptions::default()).expect("run completes");
    (out.report, start.elapsed().as_secs_f64())
}

fn zero_loss(o: &mut Outcomes) {
    let sc = fig1();
    let (mut handoffs, mut lost, mut sent, mut slowest) = (0, 0, 0, 0.0f64);
    let mut violations = 0;
    for seed in SEEDS {
        let (r, secs) = run(&sc, Scheme::Dual, seed);
        handoffs += r.completed_handoffs();
        lost += r.lost;
        sent += r.sent;
        violations += r.violation_count;
        slowest = slowest.max(secs);
    }
    o.record(
        "C1 zero loss",
        lost == 0 && handoffs >= 10 && slowest < RUNTIME_LIMIT_S && violations == 0,
        format!(
            "{} seeds, {handoffs} handoffs, lost {lost}/{sent}, violations {violations}, slowest run {slowest:.2}s (limit {RUNTIME_LIMIT_S}s)",
            SEEDS.count()
        ),
    );
}

fn default_latency(o: &mut Outcomes) {
    let sc = fig1();
    let d = &sc.config.delays;
    let expected_ms = d.association_ms
        + 4.0 * d.control_air_ms
        + 4.0 * d.control_backhaul_ms
        + 6.0 * d.processing_ms
        + d.dissociation_ms;
    let (r, _) = run(&sc, Scheme::Dual, 1);
    let exact = !r.latencies_us.is_empty()
        && r.latencies_us
            .iter()
            .all(|l| *l as f64 == expected_ms * 1_000.0);
    let mean = latency_stats(&r.latencies_us).mean_ms.unwrap_or(f64::NAN);
    o.record(
        "C2 default latency",
        exact && (mean - DEFAULT_LATENCY_MS).abs() <= DEFAULT_LATENCY_TOL_MS,
        format!(
            "{} handoffs, every latency == {expected_ms:.3} ms (component sum): {exact}; mean {mean:.3} ms within {DEFAULT_LATENCY_MS} +/- {DEFAULT_LATENCY_TOL_MS}",
            r.latencies_us.len()
        ),
    );
}

fn lossy_broadcast(o: &mut Outcomes) {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/outdoor.json");
    let sc = Scenario::new(ScenarioConfig::load(std::path::Path::new(path)).unwrap()).unwrap();
    let mut all = Vec::new();
    let mut per_10k = Vec::new();
    for seed in SEEDS {
        let (r, _) = run(&sc, Scheme::Dual, seed);
        all.extend(r.latencies_us.iter().copied());
        per_10k.push(r.loss().per_10k.unwrap_or(f64::NAN));
    }
    let mean = latency_stats(&all).mean_ms.unwrap_or(f64::NAN);
    let loss = per_10k.iter().sum::<f64>() / per_10k.len() as f64;
    let (lo, hi) = LOSSY_LATENCY_MS;
    o.record(
        "C3 lossy broadcast",
        sc.config.propagation.broadcast_loss == LOSSY_BROADCAST
            && (lo..=hi).contains(&mean)
            && loss <= LOSSY_MAX_PER_10K,
        format!(
            "p_bcast {LOSSY_BROADCAST}, {} seeds, {} handoffs, mean latency {mean:.3} ms in [{lo}, {hi}], mean loss {loss:.3}/10k <= {LOSSY_MAX_PER_10K}",
            per_10k.len(),
            all.len()
        ),
    );
}

fn overlap(o: &mut Outcomes) {
    let d = overlap_required(100.0, 80.0);
    let rel = (d - OVERLAP_REFERENCE_M).abs() / OVERLAP_REFERENCE_M;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut linear = 0;
    for _ in 0..100 {
        let v = rng.random_range(0.0..200.0);
        let l = rng.random_range(0.0..300.0);
        let k = rng.random_range(0.0..8.0);
        let base = overlap_required(v, l);
        let tol = 1e-9 * (1.0 + k * base);
        if (overlap_required(k * v, l) - k * base).abs() <= tol
            && (overlap_required(v, k * l) - k * base).abs() <= tol
        {
            linear += 1;
        }
    }
    o.record(
        "C4 overlap",
        rel <= OVERLAP_REL_TOL && linear == 100,
        format!(
            "overlap(100 km/h, 80 ms) = {d:.3} m, {:.2}% from {OVERLAP_REFERENCE_M} m (limit {}%); linear in speed and latency {linear}/100",
            rel * 100.0,
            OVERLAP_REL_TOL * 100.0
        ),
    );
}

fn baseline_contrast(o: &mut Outcomes) {
    let sc = fig1();
    let mut worst_per_handoff = f64::INFINITY;
    let (mut dual_lost, mut base_handoffs, mut base_lost) = (0, 0, 0);
    for seed in SEEDS {
        let (d, _) = run(&sc, Scheme::Dual, seed);
        let (b, _) = run(&sc, Scheme::Baseline, seed);
        dual_lost += d.lost;
        let n = b.completed_handoffs();
        base_handoffs += n;
        base_lost += b.lost;
        if n > 0 {
            worst_per_handoff = worst_per_handoff.min(b.lost as f64 / n as f64);
        } else {
            worst_per_handoff = 0.0;
        }
    }
    o.record(
        "C5 baseline contrast",
        dual_lost == 0 && base_handoffs > 0 && worst_per_handoff >= 1.0,
        format!(
            "paired seeds {}: dual lost {dual_lost}; baseline lost {base_lost} over {base_handoffs} handoffs (min {worst_per_handoff:.1} per handoff, need >= 1)",
            SEEDS.count()
        ),
    );
}

fn invariant_sweep(o: &mut Outcomes) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cases = 40;
    let mut bad = Vec::new();
    let mut completed = 0;
    let mut abandoned = 0;
    for case in 0..cases {
        let mut cfg = ScenarioConfig::default();
        cfg.traffic.packet_count = 3_000;
        cfg.mobility.speed_kmph = rng.random_range(20.0..120.0);
        cfg.propagation.broadcast_loss = rng.random_range(0.0..0.6);
        cfg.propagation.unicast_loss = rng.random_range(0.0..0.3);
        cfg.propagation.shadowing_sigma_db = rng.random_range(0.0..4.0);
        let scheme = if case % 2 == 0 {
            Scheme::Dual
        } else {
            Scheme::Baseline
        };
        let seed = rng.random();
        let sc = Scenario::new(cfg).unwrap();
        let (r, _) = run(&sc, scheme, seed);
        for h in &r.handoffs {
            match h.outcome {
                Outcome::Completed => completed += 1,
                Outcome::Abandoned => abandoned += 1,
                Outcome::InProgress => {}
            }
        }
        if r.violation_count > 0 {
            bad.push(format!(
                "case {case} ({scheme}, seed {seed}): {}",
                r.violations.join("; ")
            ));
        }
    }
    // forced abandonment: the target AP cannot admit the request
    let mut cfg = ScenarioConfig::default();
    cfg.traffic.packet_count = 3_000;
    cfg.topology.aps[1].path_capacity_kbps = cfg.handoff.requested_bandwidth_kbps;
    let (r, _) = run(&Scenario::new(cfg).unwrap(), Scheme::Dual, 1);
    let denied = r
        .handoffs
        .iter()
        .filter(|h| h.outcome == Outcome::Abandoned)
        .count();
    if denied == 0 || r.violation_count > 0 {
        bad.push(format!(
            "denied admission: {denied} abandoned, {}",
            r.violations.join("; ")
        ));
    }
    abandoned += denied;

    let traces_equal = trace_bytes(7) == trace_bytes(7) && trace_bytes(7) != trace_bytes(8);
    let fields_ok = message_fields_exact();
    o.record(
        "C6 invariants",
        bad.is_empty() && traces_equal && fields_ok,
        format!(
            "{} randomized runs + 1 denied-admission run ({completed} completed, {abandoned} abandoned handoffs): one primary, coverage, ledger, cleanup, tunnels, VIP, ordering; violations: {}; repeated-seed trace byte-identical: {traces_equal}; message field sets exact: {fields_ok}",
            cases,
            if bad.is_empty() { "none".to_string() } else { bad.join(" | ") }
        ),
    );
}

fn trace_bytes(seed: u64) -> String {
    let mut cfg = ScenarioConfig::default();
    cfg.traffic.packet_count = 4_000;
    cfg.propagation.broadcast_loss = 0.3;
    cfg.propagation.unicast_loss = 0.1;
    let opts = RunOptions {
        trace: true,
        ..RunOptions::default()
    };
    let out = run_scenario(&Scenario::new(cfg).unwrap(), Scheme::Dual, seed, &opts).unwrap();
    out.trace.unwrap_or_default().join("\n")
}

fn message_fields_exact() -> bool {
    let mac = MacAddr::local(1, 2);
    let ip = Ipv4Addr::new(10, 1, 0, 1);
    let cases = [
        (
            HandoffMessage::RequestRoute {
                requested_bandwidth: 2_000,
                radio2_mac: mac,
                floating_ip: ip,
            },
            vec!["floating_ip", "radio2_mac", "requested_bandwidth"],
        ),
        (
            HandoffMessage::OfferRoute {
                available_bandwidth: 9_000,
                ap_ip: ip,
                ap_mac: mac,
            },
            vec!["ap_ip", "ap_mac", "available_bandwidth"],
        ),
        (
            HandoffMessage::SwitchRouteMnToB { floating_ip: ip },
            vec!["floating_ip"],
        ),
        (
            HandoffMessage::SwitchRouteBToG {
                floating_ip: ip,
                ap_hostname: "B".into(),
            },
            vec!["ap_hostname", "floating_ip"],
        ),
        (
            HandoffMessage::SwitchRouteOk {
                floating_ip: ip,
                ap_hostname: "B".into(),
            },
            vec!["ap_hostname", "floating_ip"],
        ),
    ];
    cases.iter().all(|(msg, expected)| {
        let serde_json::Value::Object(map) = serde_json::to_value(msg).unwrap() else {
            return false;
        };
        let keys: Vec<&str> = map
            .keys()
            .map(String::as_str)
            .filter(|k| *k != "message")
            .collect();
        keys == *expected
            && map["message"]
                .as_str()
                .is_some_and(|n| n.starts_with(msg.name()))
    })
}

fn main() -> ExitCode {
    let mut o = Outcomes { failed: 0 };
    zero_loss(&mut o);
    default_latency(&mut o);
    lossy_broadcast(&mut o);
    overlap(&mut o);
    baseline_contrast(&mut o);
    invariant_sweep(&mut o);
    if o.failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
