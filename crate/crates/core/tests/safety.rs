mod common;

use rayon::prelude::*;
use sbft_core::harness::run_scenario;

#[test]
fn seeded_attack_runs_keep_every_safety_invariant() {
    let suite = common::safety_suite(9);
    assert!(suite.len() >= 200, "suite has only {} runs", suite.len());
    let failures: Vec<String> = suite
        .par_iter()
        .filter_map(|sc| {
            let out = run_scenario(sc).expect("catalog scenarios validate");
            let bad = common::safety_failures(&out);
            (!bad.is_empty()).then(|| format!("{}: {}", sc.name, bad.join("; ")))
        })
        .collect();
    assert!(failures.is_empty(), "{}", failures.join("\n"));
}

#[test]
fn attacked_runs_without_message_loss_finish_every_transaction() {
    let suite = common::safety_suite(3);
    let stuck: Vec<String> = suite
        .par_iter()
        .filter_map(|sc| {
            let out = run_scenario(sc).expect("catalog scenarios validate");
            (!out.unfinished.is_empty())
                .then(|| format!("{}: {} unfinished, max view {}", sc.name, out.unfinished.len(), out.metrics.max_view))
        })
        .collect();
    assert!(stuck.is_empty(), "{}", stuck.join("\n"));
}
