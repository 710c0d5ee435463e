#![allow(dead_code)]

use sbft_core::adversary::{AdversarySpec, AttackStrategy, ExecutorFault, NodeAssignment};
use sbft_core::effects::AbortDecision;
use sbft_core::executor::ExecStrategy;
use sbft_core::harness::monitors::{
    FORGERY_IMPOSSIBILITY, SERIALIZABILITY, SHIM_CONSISTENCY, SHIM_NON_DIVERGENCE,
    VERIFIER_NON_DIVERGENCE, WRITE_EXCLUSIVITY,
};
use rayon::prelude::*;
use sbft_core::harness::{run_scenario, Mode, RunOutput, Scenario};
use sbft_core::model::{ms, ConflictMode, Config, Op, Operand};
use sbft_core::simnet::policy::{LatencyRange, NetworkPolicy, Partition, RegionColdStart};
use sbft_core::workload::{ClientScript, ComputeDist, WorkloadSpec};

pub const SAFETY_VERDICTS: [&str; 5] = [
    SHIM_CONSISTENCY,
    SHIM_NON_DIVERGENCE,
    VERIFIER_NON_DIVERGENCE,
    WRITE_EXCLUSIVITY,
    FORGERY_IMPOSSIBILITY,
];

pub fn config(n_r: usize, mode: ConflictMode) -> Config {
    let mut c = Config::with_nodes(n_r);
    c.conflict_mode = mode;
    c.n_e = c.min_executors();
    c
}

/// Small closed-loop run that stops once every client is done.
pub fn small(n_r: usize, seed: u64) -> Scenario {
    Scenario {
        name: format!("small-n{n_r}-s{seed}"),
        seed,
        mode: Mode::ServerlessBft,
        config: config(n_r, ConflictMode::NonConflicting),
        workload: WorkloadSpec { num_clients: 4, txns_per_client: Some(15), ..WorkloadSpec::default() },
        duration: ms(10_000.0),
        warmup: ms(50.0),
        settle: ms(200.0),
        ..Scenario::default()
    }
}

pub fn with_conflicts(mut sc: Scenario, mode: ConflictMode, rate: f64) -> Scenario {
    sc.config.conflict_mode = mode;
    sc.config.n_e = sc.config.min_executors();
    sc.workload.conflict_rate = rate;
    sc
}

fn on(nodes: &[u32], strategies: Vec<AttackStrategy>) -> Vec<NodeAssignment> {
    nodes.iter().map(|&node| NodeAssignment { node, strategies: strategies.clone() }).collect()
}

/// One entry per node attack. The first `f_R` nodes are byzantine, so the
/// primaries of the first `f_R` views all misbehave.
pub fn attack_catalog(n_r: usize) -> Vec<(&'static str, Vec<NodeAssignment>)> {
    let f = (n_r - 1) / 3;
    let bad: Vec<u32> = (0..f as u32).collect();
    let honest_tail: Vec<u32> = (n_r as u32 - f as u32..n_r as u32).collect();
    let group_b: Vec<u32> = (f as u32 + 1..n_r as u32).collect();
    use AttackStrategy::*;
    vec![
        ("request-ignorance", on(&bad, vec![RequestIgnorance { clients: vec![0, 1, 2, 3] }])),
        ("unsuccessful-consensus", on(&bad, vec![UnsuccessfulConsensus { reach: None }])),
        ("less-executors", on(&bad, vec![LessExecutors { spawn: 1 }])),
        ("node-exclusion", on(&bad, vec![NodeExclusion { dark: honest_tail.clone(), rotate_every: None }])),
        ("node-exclusion-rotating", on(&bad, vec![NodeExclusion { dark: honest_tail, rotate_every: Some(4) }])),
        ("equivocation-split", on(&bad, vec![Equivocation { group_b, seqs: vec![] }])),
        ("equivocation-single", on(&bad, vec![Equivocation { group_b: vec![n_r as u32 - 1], seqs: vec![] }])),
        ("duplicate-spawn-primary", on(&bad, vec![DuplicateSpawnPrimary { extra: 2 }])),
        (
            "duplicate-spawn-old-primary",
            on(&bad, vec![LessExecutors { spawn: 1 }, DuplicateSpawnOldPrimary { copies: 3 }]),
        ),
        ("byzantine-abort-delay", on(&bad, vec![ByzantineAbortDelay { seqs: vec![], slot_delays_ms: vec![] }])),
        ("silent-primary", on(&bad, vec![Silent])),
        ("silent-backup", on(&[n_r as u32 - 1], vec![Silent])),
    ]
}

/// Executor fault rotated in by seed; every variant stays within `f_E`.
pub fn executor_faults(seed: u64) -> Vec<ExecutorFault> {
    let fault = |strategy, slot| vec![ExecutorFault { strategy, slots: vec![slot], seqs: vec![] }];
    match seed % 5 {
        0 => vec![],
        1 => fault(ExecStrategy::WrongResult, 0),
        2 => fault(ExecStrategy::StaleRead, 1),
        3 => fault(ExecStrategy::Duplicate { copies: 2 }, 0),
        _ => fault(ExecStrategy::Silent, 2),
    }
}

pub fn conflict_mode_for(seed: u64) -> ConflictMode {
    match seed % 3 {
        0 => ConflictMode::NonConflicting,
        1 => ConflictMode::UnknownRw,
        _ => ConflictMode::KnownRw,
    }
}

/// Every (n_R, attack, seed) combination of the safety suite.
pub fn safety_suite(seeds_per_attack: u64) -> Vec<Scenario> {
    let mut out = Vec::new();
    for n_r in [4, 7] {
        for (name, nodes) in attack_catalog(n_r) {
            for seed in 1..=seeds_per_attack {
                let mode = conflict_mode_for(seed);
                let rate = if mode == ConflictMode::NonConflicting { 0.0 } else { 0.2 };
                let mut sc = with_conflicts(small(n_r, seed), mode, rate);
                sc.name = format!("{name}-n{n_r}-s{seed}");
                sc.adversary = AdversarySpec {
                    nodes: nodes.clone(),
                    executors: executor_faults(seed),
                    out_of_model: false,
                };
                out.push(sc);
            }
        }
    }
    out
}

/// Names of failed safety verdicts, plus serializability.
pub fn safety_failures(out: &RunOutput) -> Vec<String> {
    SAFETY_VERDICTS
        .iter()
        .chain(std::iter::once(&SERIALIZABILITY))
        .filter_map(|name| match out.verdict(name) {
            Some(v) if v.passed => None,
            Some(v) => Some(format!("{}: {}", v.name, v.detail.clone().unwrap_or_default())),
            None => Some(format!("{name}: missing")),
        })
        .collect()
}

pub fn total_issued(out: &RunOutput) -> usize {
    out.completions.values().map(|c| c.len()).sum::<usize>() + out.unfinished.len()
}

fn rmw(key: u64) -> Op {
    Op::Write { key, value: Operand::ReadPlus { key, delta: 1 } }
}

fn script(start_ms: f64, ops: Vec<Op>) -> ClientScript {
    ClientScript { start: ms(start_ms), txns: vec![ops] }
}

/// Three scripted clients on a constant-latency network, one transaction per
/// batch. The first writes key 0 and computes for 20 ms, the second writes an
/// unrelated key, the third reads key 0.
fn scripted(n_e: usize, second_compute_ms: f64) -> Scenario {
    let mut config = config(4, ConflictMode::UnknownRw);
    config.n_e = n_e;
    config.batch_size = 1;
    Scenario {
        name: "scripted".into(),
        seed: 5,
        config,
        network: NetworkPolicy::constant(1.0),
        workload: WorkloadSpec {
            num_clients: 3,
            scripts: vec![
                script(0.0, vec![rmw(0), Op::Compute { micros: ms(20.0) }]),
                script(
                    1.0,
                    vec![Op::Write { key: 200, value: Operand::Lit { value: 5 } }, Op::Compute { micros: ms(second_compute_ms) }],
                ),
                script(2.0, vec![Op::Read { key: 0 }, Op::Write { key: 300, value: Operand::ReadPlus { key: 0, delta: 0 } }]),
            ],
            ..WorkloadSpec::default()
        },
        duration: ms(3000.0),
        warmup: ms(1.0),
        settle: ms(50.0),
        ..Scenario::default()
    }
}

fn delay_third(delays: Vec<f64>) -> Vec<NodeAssignment> {
    on(&[0], vec![AttackStrategy::ByzantineAbortDelay { seqs: vec![3], slot_delays_ms: delays }])
}

/// Honest primary with a slow second executor region and a silent third
/// executor, against a byzantine primary that delays the second and third
/// executors itself. Both run `2f_E+1` executors.
pub fn indistinguishable_pair() -> (Scenario, Scenario) {
    let mut honest = scripted(3, 0.0);
    honest.name = "slow-region".into();
    honest.placement.executor_regions = vec![0, 1, 0];
    honest.network.region_cold_start = vec![RegionColdStart { region: 1, range: LatencyRange::constant(30.0) }];
    honest.adversary = AdversarySpec {
        executors: vec![ExecutorFault { strategy: ExecStrategy::Silent, slots: vec![2], seqs: vec![3] }],
        out_of_model: true,
        ..AdversarySpec::default()
    };
    let mut attacked = scripted(3, 0.0);
    attacked.name = "delaying-primary".into();
    attacked.adversary =
        AdversarySpec { nodes: delay_third(vec![0.0, 30.0, 400.0]), out_of_model: true, ..AdversarySpec::default() };
    (honest, attacked)
}

/// `3f_E+1` executors; the request at seq 3 diverges and the abort timer
/// takes `branch`.
pub fn abort_branch(branch: AbortDecision) -> Scenario {
    let wrong_third = vec![ExecutorFault { strategy: ExecStrategy::WrongResult, slots: vec![2], seqs: vec![3] }];
    let (second_compute, delays, executors) = match branch {
        AbortDecision::Replace => (0.0, vec![0.0, 30.0, 600.0, 600.0], vec![]),
        AbortDecision::AbortNow => (0.0, vec![0.0, 30.0, 0.0, 600.0], wrong_third),
        AbortDecision::ParkAbort => (300.0, vec![0.0, 30.0, 0.0, 600.0], wrong_third),
    };
    let mut sc = scripted(4, second_compute);
    sc.name = format!("abort-branch-{branch:?}");
    sc.adversary = AdversarySpec { nodes: delay_third(delays), executors, out_of_model: false };
    sc
}

/// Lossy, duplicating network that partitions the last node until shortly
/// before GST.
pub fn gst_network(n_r: usize) -> NetworkPolicy {
    NetworkPolicy {
        drop_prob: 0.05,
        dup_prob: 0.02,
        gst: Some(ms(400.0)),
        partitions: vec![Partition { nodes: vec![n_r as u32 - 1], from: 0, until: ms(300.0) }],
        ..NetworkPolicy::default()
    }
}

pub const LIVENESS_ATTACKS: [&str; 3] = ["request-ignorance", "unsuccessful-consensus", "less-executors"];

/// Attack-free and view-change-forcing runs over a network that only
/// stabilizes at GST.
pub fn liveness_suite(seeds: u64) -> Vec<(Option<&'static str>, Scenario)> {
    let mut out = Vec::new();
    for n_r in [4, 7] {
        let catalog = attack_catalog(n_r);
        let attacks = std::iter::once(None).chain(LIVENESS_ATTACKS.iter().map(|a| Some(*a)));
        for attack in attacks {
            for seed in 1..=seeds {
                let mut sc = small(n_r, seed);
                sc.network = gst_network(n_r);
                sc.name = format!("gst-{}-n{n_r}-s{seed}", attack.unwrap_or("honest"));
                if let Some(a) = attack {
                    let nodes = catalog.iter().find(|(n, _)| *n == a).expect("catalog entry").1.clone();
                    sc.adversary = AdversarySpec { nodes, ..AdversarySpec::default() };
                }
                out.push((attack, sc));
            }
        }
    }
    out
}

/// Byzantine primary keeps the last `f_R` nodes in the dark.
pub fn dark_nodes(n_r: usize, seed: u64) -> Scenario {
    let mut sc = small(n_r, seed);
    let f = sc.config.f_r as u32;
    sc.name = format!("dark-n{n_r}-s{seed}");
    sc.config.checkpoint_interval = 8;
    sc.workload.txns_per_client = Some(25);
    sc.settle = ms(400.0);
    let dark: Vec<u32> = (n_r as u32 - f..n_r as u32).collect();
    sc.adversary = AdversarySpec {
        nodes: on(&[0], vec![AttackStrategy::NodeExclusion { dark, rotate_every: None }]),
        ..AdversarySpec::default()
    };
    sc
}

/// Same seed and workload at 50% conflicts, with and without declared
/// read/write sets.
pub fn conflict_pair(seed: u64) -> (Scenario, Scenario) {
    let mut base = small(4, seed);
    base.workload.num_clients = 8;
    base.workload.txns_per_client = Some(20);
    base.workload.hot_keys = 4;
    let mut known = with_conflicts(base.clone(), ConflictMode::KnownRw, 0.5);
    known.name = format!("known-rw-s{seed}");
    let mut unknown = with_conflicts(base, ConflictMode::UnknownRw, 0.5);
    unknown.name = format!("unknown-rw-s{seed}");
    (known, unknown)
}

/// Decentralized spawning where the first `refusing` nodes spawn nothing.
pub fn decentralized(n_r: usize, n_e: usize, refusing: usize, pessimistic: bool) -> Scenario {
    let mut sc = small(n_r, 3);
    sc.name = format!("decentralized-n{n_r}-e{n_e}-r{refusing}");
    sc.config.n_e = n_e;
    sc.config.decentralized_spawning = true;
    sc.config.dark_pessimism = pessimistic;
    sc.workload.txns_per_client = Some(8);
    let refusers: Vec<u32> = (0..refusing as u32).collect();
    sc.adversary = AdversarySpec {
        nodes: on(&refusers, vec![AttackStrategy::LessExecutors { spawn: 0 }]),
        ..AdversarySpec::default()
    };
    sc
}

/// Unbounded closed-loop load, measured after a warmup.
pub fn trend_base(n_r: usize, clients: usize, seed: u64) -> Scenario {
    Scenario {
        name: format!("trend-n{n_r}-c{clients}"),
        seed,
        config: Config::with_nodes(n_r),
        workload: WorkloadSpec { num_clients: clients, ..WorkloadSpec::default() },
        duration: ms(1500.0),
        warmup: ms(300.0),
        ..Scenario::default()
    }
}

pub const CLIENT_SWEEP: [usize; 5] = [64, 128, 256, 512, 1024];
pub const BATCH_SWEEP: [usize; 6] = [1, 5, 10, 25, 50, 100];
pub const CONFLICT_SWEEP: [f64; 3] = [0.0, 0.25, 0.5];

fn throughputs(scenarios: Vec<Scenario>) -> Vec<(f64, f64)> {
    scenarios
        .par_iter()
        .map(|sc| {
            let m = run_scenario(sc).unwrap_or_else(|e| panic!("{}: {e}", sc.name)).metrics;
            (m.throughput, m.latency_p50_ms)
        })
        .collect()
}

fn show(points: &[(f64, f64)]) -> String {
    points.iter().map(|(t, _)| format!("{t:.0}")).collect::<Vec<_>>().join(" ")
}

/// Strict growth, then the last two points within 10% of each other.
pub fn client_saturation(seed: u64) -> Result<String, String> {
    let pts = throughputs(CLIENT_SWEEP.iter().map(|&c| trend_base(4, c, seed)).collect());
    let detail = format!("clients {CLIENT_SWEEP:?} -> {}", show(&pts));
    let grows = pts[..pts.len() - 1].windows(2).all(|w| w[1].0 > w[0].0);
    let [.., a, b] = pts[..] else { unreachable!() };
    let flat = (b.0 - a.0).abs() <= 0.1 * a.0;
    if grows && flat {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// At least a 25% throughput drop from 0 to 50% conflicts, p50 within 10%.
pub fn conflict_drop(seed: u64) -> Result<String, String> {
    let scs = CONFLICT_SWEEP
        .iter()
        .map(|&rate| with_conflicts(trend_base(4, 256, seed), ConflictMode::UnknownRw, rate))
        .collect();
    let pts = throughputs(scs);
    let (lo, hi) = (pts[0], pts[pts.len() - 1]);
    let drop = 1.0 - hi.0 / lo.0;
    let p50 = (hi.1 - lo.1).abs() / lo.1;
    let detail = format!("throughput {} drop {:.0}%, p50 {:.1}ms -> {:.1}ms", show(&pts), drop * 100.0, lo.1, hi.1);
    if drop >= 0.25 && p50 <= 0.1 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// The best batch size is neither the smallest nor the largest.
pub fn batch_interior_maximum(seed: u64) -> Result<String, String> {
    let scs = BATCH_SWEEP
        .iter()
        .map(|&b| {
            let mut sc = trend_base(4, 256, seed);
            sc.config.batch_size = b;
            sc
        })
        .collect();
    let pts = throughputs(scs);
    let best = (0..pts.len()).max_by(|a, b| pts[*a].0.total_cmp(&pts[*b].0)).unwrap();
    let detail = format!("batch {BATCH_SWEEP:?} -> {}", show(&pts));
    if best > 0 && best + 1 < pts.len() {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Throughput per mode at 32 shim nodes, without per-transaction compute.
pub fn mode_ordering(seed: u64) -> Result<String, String> {
    let order = [Mode::NoShim, Mode::ServerlessCft, Mode::PbftOnShim, Mode::ServerlessBft];
    let scs = order
        .iter()
        .map(|&mode| {
            let mut sc = trend_base(32, 256, seed);
            sc.mode = mode;
            sc.workload.compute = ComputeDist::Fixed { ms: 0 };
            sc
        })
        .collect();
    let t: Vec<f64> = throughputs(scs).into_iter().map(|p| p.0).collect();
    let detail = format!("{} > {} > {} >= {}", t[0].round(), t[1].round(), t[2].round(), t[3].round());
    if t[0] > t[1] && t[1] > t[2] && t[2] >= t[3] {
        Ok(detail)
    } else {
        Err(detail)
    }
}
