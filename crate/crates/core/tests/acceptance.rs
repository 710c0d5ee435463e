//! End-to-end acceptance checks. Each criterion prints one PASS or FAIL line,
//! and the process exits nonzero if any criterion fails.

mod common;

use std::time::{Duration, Instant};

use rayon::prelude::*;
use sbft_core::effects::AbortDecision;
use sbft_core::harness::oracle::corrupt_one_write;
use sbft_core::harness::{run_scenario, serializability_oracle, RunOutput, Scenario};
use sbft_core::shim::decentralized_share;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn run(sc: &Scenario) -> RunOutput {
    run_scenario(sc).unwrap_or_else(|e| panic!("{}: {e}", sc.name))
}

fn verdict(failures: Vec<String>, ok: String) -> Outcome {
    if failures.is_empty() {
        Ok(ok)
    } else {
        Err(failures.join("\n    "))
    }
}

fn safety_suite() -> Outcome {
    let started = Instant::now();
    let suite = common::safety_suite(9);
    let mut failures: Vec<String> = suite
        .par_iter()
        .filter_map(|sc| {
            let out = run(sc);
            let bad: Vec<String> = common::safety_failures(&out)
                .into_iter()
                .filter(|f| common::SAFETY_VERDICTS.iter().any(|v| f.starts_with(v)))
                .collect();
            (!bad.is_empty()).then(|| format!("{}: {}", sc.name, bad.join("; ")))
        })
        .collect();
    let took = started.elapsed();
    if suite.len() < 200 {
        failures.push(format!("only {} runs", suite.len()));
    }
    if took > Duration::from_secs(300) {
        failures.push(format!("took {took:?}"));
    }
    verdict(failures, format!("{} runs in {:.1}s", suite.len(), took.as_secs_f64()))
}

fn liveness_after_gst() -> Outcome {
    let suite = common::liveness_suite(2);
    let failures: Vec<String> = suite
        .par_iter()
        .filter_map(|(attack, sc)| {
            let out = run(sc);
            let f_r = sc.config.f_r as u64;
            let mut bad = Vec::new();
            if !out.unfinished.is_empty() {
                bad.push(format!("{} unfinished", out.unfinished.len()));
            }
            if attack.is_some() && !matches!(out.installed_views.first(), Some(v) if (1..=f_r + 1).contains(v)) {
                bad.push(format!("installed views {:?}", out.installed_views));
            }
            (!bad.is_empty()).then(|| format!("{}: {}", sc.name, bad.join(", ")))
        })
        .collect();
    verdict(failures, format!("{} runs finished, view changes within f_R+1", suite.len()))
}

fn serializability() -> Outcome {
    let mut scs = common::safety_suite(3);
    scs.extend(common::liveness_suite(1).into_iter().map(|(_, sc)| sc));
    let mut failures: Vec<String> = scs
        .par_iter()
        .filter_map(|sc| {
            let out = run(sc);
            serializability_oracle(sc.workload.keyspace, sc.seed, &out.decided, &out.storage)
                .err()
                .map(|e| format!("{}: {e:?}", sc.name))
        })
        .collect();
    let (_, sc) = common::conflict_pair(1);
    let out = run(&sc);
    let mut corrupted = out.decided.clone();
    if !corrupt_one_write(&mut corrupted) {
        failures.push("fixture has no write to corrupt".into());
    } else if serializability_oracle(sc.workload.keyspace, sc.seed, &corrupted, &out.storage).is_ok() {
        failures.push("corrupted fixture accepted".into());
    }
    verdict(failures, format!("{} runs serializable, corrupted fixture rejected", scs.len()))
}

fn dark_nodes() -> Outcome {
    let mut failures = Vec::new();
    for n_r in [4, 7] {
        for seed in [1, 2] {
            let sc = common::dark_nodes(n_r, seed);
            let out = run(&sc);
            let honest: Vec<_> = out.nodes.iter().filter(|n| !n.byzantine).collect();
            if !out.installed_views.is_empty() {
                failures.push(format!("{}: views {:?}", sc.name, out.installed_views));
            }
            if honest[0].stable == 0 {
                failures.push(format!("{}: no stable checkpoint", sc.name));
            }
            if honest.iter().any(|n| (n.stable, n.stable_prefix) != (honest[0].stable, honest[0].stable_prefix)) {
                failures.push(format!("{}: checkpoint state differs", sc.name));
            }
        }
    }
    verdict(failures, "no view changes, equal checkpoint state".into())
}

fn indistinguishability() -> Outcome {
    let mut failures = Vec::new();
    let (honest, attacked) = common::indistinguishable_pair();
    let (h, a) = (run(&honest), run(&attacked));
    let evidence = h.abort_timer_evidence();
    if evidence.is_empty() || evidence != a.abort_timer_evidence() {
        failures.push(format!("evidence differs:\n{evidence}\nvs\n{}", a.abort_timer_evidence()));
    }
    for branch in [AbortDecision::Replace, AbortDecision::AbortNow, AbortDecision::ParkAbort] {
        let sc = common::abort_branch(branch);
        let out = run(&sc);
        if !out.abort_timer_evidence().contains(&format!("decision={branch:?}")) {
            failures.push(format!("{}: {}", sc.name, out.abort_timer_evidence()));
        }
    }
    verdict(failures, "identical evidence, all three abort-timer branches fire".into())
}

fn decentralized_spawning() -> Outcome {
    let grid = [3, 5, 7, 11, 15, 21];
    let rows: [(usize, usize, [usize; 6], [usize; 6]); 2] =
        [(4, 1, [1, 2, 3, 4, 5, 7], [1, 3, 4, 6, 8, 11]), (7, 2, [1, 1, 1, 3, 3, 5], [1, 1, 1, 4, 5, 7])];
    let mut failures = Vec::new();
    for (n_r, f_r, optimistic, pessimistic) in rows {
        for (i, n_e) in grid.into_iter().enumerate() {
            for (p, want) in [(false, optimistic[i]), (true, pessimistic[i])] {
                let got = decentralized_share(n_e, n_r, f_r, p);
                if got != want {
                    failures.push(format!("share n_e={n_e} f_r={f_r} pessimistic={p}: {got} != {want}"));
                }
            }
            for p in [false, true] {
                let sc = common::decentralized(n_r, n_e, f_r, p);
                let out = run(&sc);
                let need = sc.config.f_e as u32 + 1;
                for (seq, by) in &out.spawns {
                    let honest: u32 = by.iter().filter(|(n, _)| **n as usize >= f_r).map(|(_, c)| *c).sum();
                    if honest < need {
                        failures.push(format!("{} seq {seq}: {honest} honest executors", sc.name));
                    }
                }
            }
        }
    }
    verdict(failures, "share grid matches, every seq reaches f_E+1 honest executors".into())
}

fn trends() -> Outcome {
    let checks = [
        ("clients", common::client_saturation(3)),
        ("conflicts", common::conflict_drop(3)),
        ("batch", common::batch_interior_maximum(3)),
        ("modes", common::mode_ordering(3)),
    ];
    let failures = checks.iter().filter_map(|(n, r)| r.as_ref().err().map(|e| format!("{n}: {e}"))).collect();
    let ok = checks.iter().filter_map(|(n, r)| r.as_ref().ok().map(|d| format!("{n}: {d}"))).collect::<Vec<_>>();
    verdict(failures, ok.join("; "))
}

fn declared_sets() -> Outcome {
    let mut failures = Vec::new();
    let mut seen = Vec::new();
    for seed in [1, 2, 3] {
        let (known, unknown) = common::conflict_pair(seed);
        let (k, u) = (run(&known), run(&unknown));
        if k.metrics.aborted != 0 || u.metrics.aborted == 0 {
            failures.push(format!("seed {seed}: known {} aborts, unknown {}", k.metrics.aborted, u.metrics.aborted));
        }
        seen.push(u.metrics.aborted);
    }
    verdict(failures, format!("KnownRw 0 aborts, UnknownRw {seen:?}"))
}

fn determinism() -> Outcome {
    let mut failures = Vec::new();
    let mut scs: Vec<Scenario> = common::safety_suite(1).into_iter().step_by(5).collect();
    scs.push(common::liveness_suite(1).remove(2).1);
    for sc in &mut scs {
        sc.retain_trace = true;
        let (a, b) = (run(sc), run(sc));
        if a.trace.digest() != b.trace.digest()
            || a.metrics.to_json() != b.metrics.to_json()
            || a.verdict_summary() != b.verdict_summary()
            || a.storage.snapshot_bytes() != b.storage.snapshot_bytes()
        {
            failures.push(sc.name.clone());
        }
    }
    verdict(failures, format!("{} scenarios replay identically", scs.len()))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("safety suite", safety_suite),
        ("liveness after GST", liveness_after_gst),
        ("serializability oracle", serializability),
        ("dark nodes", dark_nodes),
        ("indistinguishability", indistinguishability),
        ("decentralized spawning", decentralized_spawning),
        ("performance trends", trends),
        ("declared read/write sets", declared_sets),
        ("determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS criterion {}: {name} ({detail})", i + 1),
            Err(detail) => {
                println!("FAIL criterion {}: {name}\n    {detail}", i + 1);
                failed.push(i + 1);
            }
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria {failed:?}");
        std::process::exit(1);
    }
}
