mod common;

use rayon::prelude::*;
use sbft_core::adversary::{AdversarySpec, AttackStrategy, NodeAssignment};
use sbft_core::effects::AbortDecision;
use sbft_core::harness::oracle::corrupt_one_write;
use sbft_core::harness::{run_scenario, serializability_oracle, Mode, RunOutput};
use sbft_core::model::ms;

fn run(sc: &sbft_core::harness::Scenario) -> RunOutput {
    run_scenario(sc).unwrap_or_else(|e| panic!("{}: {e}", sc.name))
}

#[test]
fn same_seed_reproduces_trace_metrics_and_verdicts() {
    let mut sc = common::safety_suite(2).into_iter().find(|s| s.name.starts_with("less-executors-n4")).unwrap();
    sc.retain_trace = true;
    let (a, b) = (run(&sc), run(&sc));
    assert_eq!(a.trace.to_text(), b.trace.to_text());
    assert_eq!(a.trace.digest(), b.trace.digest());
    assert_eq!(a.metrics.to_json(), b.metrics.to_json());
    assert_eq!(a.verdict_summary(), b.verdict_summary());
    assert_eq!(a.storage.snapshot_bytes(), b.storage.snapshot_bytes());
    sc.seed += 1;
    assert_ne!(run(&sc).trace.digest(), a.trace.digest());
}

#[test]
fn every_transaction_finishes_once_the_network_stabilizes() {
    let results: Vec<String> = common::liveness_suite(2)
        .par_iter()
        .filter_map(|(attack, sc)| {
            let out = run(sc);
            let f_r = sc.config.f_r as u64;
            let mut bad = Vec::new();
            if !out.unfinished.is_empty() {
                bad.push(format!("{} unfinished", out.unfinished.len()));
            }
            if attack.is_some() {
                let first = out.installed_views.first().copied();
                if !matches!(first, Some(v) if v >= 1 && v <= f_r + 1) {
                    bad.push(format!("installed views {:?}", out.installed_views));
                }
            }
            if !common::safety_failures(&out).is_empty() {
                bad.push(common::safety_failures(&out).join("; "));
            }
            (!bad.is_empty()).then(|| format!("{}: {}", sc.name, bad.join(", ")))
        })
        .collect();
    assert!(results.is_empty(), "{}", results.join("\n"));
}

#[test]
fn dark_nodes_never_force_a_view_change_and_catch_up_by_checkpoint() {
    for n_r in [4, 7] {
        let sc = common::dark_nodes(n_r, 2);
        let out = run(&sc);
        assert!(out.installed_views.is_empty(), "{}: views {:?}", sc.name, out.installed_views);
        assert!(out.max_view_change_votes < 2 * sc.config.f_r + 1);
        assert!(out.unfinished.is_empty());
        let honest: Vec<_> = out.nodes.iter().filter(|n| !n.byzantine).collect();
        assert!(honest[0].stable > 0, "{}: no stable checkpoint", sc.name);
        for n in &honest {
            assert_eq!((n.stable, n.stable_prefix), (honest[0].stable, honest[0].stable_prefix), "{}: node {}", sc.name, n.id);
        }
    }
}

#[test]
fn declared_read_write_sets_avoid_every_abort() {
    for seed in [1, 2] {
        let (known, unknown) = common::conflict_pair(seed);
        let (k, u) = (run(&known), run(&unknown));
        assert!(k.passed() && u.passed());
        assert_eq!(k.metrics.aborted, 0, "{}", known.name);
        assert!(u.metrics.aborted > 0, "{}", unknown.name);
    }
}

#[test]
fn decentralized_spawning_keeps_enough_honest_executors_with_refusing_nodes() {
    for (n_r, f_r) in [(4usize, 1usize), (7, 2)] {
        for n_e in [3, 5, 7, 11, 15, 21] {
            for pessimistic in [false, true] {
                let sc = common::decentralized(n_r, n_e, f_r, pessimistic);
                let out = run(&sc);
                assert!(out.unfinished.is_empty(), "{}", sc.name);
                assert!(!out.spawns.is_empty());
                for (seq, by) in &out.spawns {
                    let honest: u32 =
                        by.iter().filter(|(n, _)| **n as usize >= f_r).map(|(_, c)| *c).sum();
                    let f_e = sc.config.f_e as u32;
                    assert!(honest > 2 * f_e, "{} seq {seq}: {honest} honest spawns", sc.name);
                }
            }
        }
    }
}

#[test]
fn duplicate_spawning_only_costs_the_attacker() {
    let clean = common::small(4, 6);
    let mut attacked = clean.clone();
    attacked.adversary = AdversarySpec {
        nodes: vec![NodeAssignment { node: 0, strategies: vec![AttackStrategy::DuplicateSpawnPrimary { extra: 2 }] }],
        ..AdversarySpec::default()
    };
    let (c, a) = (run(&clean), run(&attacked));
    assert!(c.passed() && a.passed());
    assert_eq!(c.storage.snapshot_bytes(), a.storage.snapshot_bytes());
    let n_e = clean.config.n_e as u32;
    for by in c.spawns.values() {
        assert_eq!(by.get(&0), Some(&n_e));
    }
    for by in a.spawns.values() {
        assert_eq!(by.get(&0), Some(&(n_e + 2)));
        assert_eq!(by.len(), 1);
    }
    let spawns = |o: &RunOutput| o.spawns.values().flat_map(|m| m.values()).sum::<u32>();
    let node_time = |o: &RunOutput| o.end as f64 / 1e6 * clean.config.cost.node_cents_per_sec;
    for n in 1..4 {
        let honest = a.metrics.cost_cents[&format!("n{n}")];
        assert!((honest - node_time(&a)).abs() < 1e-9);
    }
    let spawn_cost = |o: &RunOutput| o.metrics.cost_cents["n0"] - node_time(o);
    let cents = clean.config.cost.spawn_cents;
    assert!((spawn_cost(&c) - spawns(&c) as f64 * cents).abs() < 1e-9);
    assert!((spawn_cost(&a) - spawns(&a) as f64 * cents).abs() < 1e-9);
}

#[test]
fn baselines_complete_honest_workloads() {
    for mode in Mode::ALL {
        let mut sc = common::small(4, 4);
        sc.mode = mode;
        let out = run(&sc);
        assert!(out.passed(), "{mode:?}: {}", out.verdict_summary());
        assert!(out.unfinished.is_empty(), "{mode:?}");
        assert_eq!(out.metrics.committed, 60, "{mode:?}");
    }
}

#[test]
fn baselines_reject_adversaries() {
    let mut sc = common::safety_suite(1).remove(0);
    sc.mode = Mode::NoShim;
    assert!(run_scenario(&sc).is_err());
}

#[test]
fn oracle_flags_a_corrupted_decision_log() {
    let (_, sc) = common::conflict_pair(1);
    let out = run(&sc);
    let (ks, seed) = (sc.workload.keyspace, sc.seed);
    serializability_oracle(ks, seed, &out.decided, &out.storage).unwrap();
    let mut corrupted = out.decided.clone();
    assert!(corrupt_one_write(&mut corrupted));
    assert!(serializability_oracle(ks, seed, &corrupted, &out.storage).is_err());
}

#[test]
fn delaying_primary_is_indistinguishable_from_a_slow_region() {
    let (honest, attacked) = common::indistinguishable_pair();
    let (h, a) = (run(&honest), run(&attacked));
    let evidence = h.abort_timer_evidence();
    assert!(evidence.contains("decision=Replace"), "{evidence}");
    assert_eq!(evidence, a.abort_timer_evidence());
    let decided = |o: &RunOutput| -> Vec<_> { o.decided.iter().map(|d| (d.seq, d.request.digest(), d.verdicts.clone())).collect() };
    assert_eq!(decided(&h), decided(&a));
    assert!(h.unfinished.is_empty() && a.unfinished.is_empty());
}

#[test]
fn each_abort_timer_branch_fires_in_a_full_run() {
    for branch in [AbortDecision::Replace, AbortDecision::AbortNow, AbortDecision::ParkAbort] {
        let sc = common::abort_branch(branch);
        let out = run(&sc);
        let evidence = out.abort_timer_evidence();
        assert_eq!(evidence.lines().count(), 1, "{}: {evidence}", sc.name);
        assert!(evidence.contains(&format!("decision={branch:?}")), "{}: {evidence}", sc.name);
        assert!(out.passed(), "{}", out.verdict_summary());
        assert!(out.unfinished.is_empty());
        let aborted = out.metrics.aborted;
        match branch {
            AbortDecision::Replace => {
                assert_eq!(aborted, 0);
                assert!(!out.installed_views.is_empty());
            }
            _ => assert_eq!(aborted, 1),
        }
    }
}

#[test]
fn partitioned_node_rejoins_after_the_partition_heals() {
    let mut sc = common::small(4, 8);
    sc.network.partitions = vec![sbft_core::simnet::policy::Partition { nodes: vec![2], from: 0, until: ms(30.0) }];
    sc.workload.txns_per_client = Some(40);
    sc.config.checkpoint_interval = 4;
    sc.settle = ms(400.0);
    let out = run(&sc);
    assert!(out.passed(), "{}", out.verdict_summary());
    let stable: Vec<u64> = out.nodes.iter().map(|n| n.stable).collect();
    assert!(stable.iter().all(|s| *s == stable[0] && *s > 0), "{stable:?}");
}
