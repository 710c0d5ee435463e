//! Library routines checked against small independent reimplementations.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use proptest::prelude::*;
use sbft_core::executor::execute_batch;
use sbft_core::model::{
    Digest, Envelope, Identity, KeyRegistry, Keypair, Message, Op, Operand, PreparedProof,
    Request, Scheme, Transaction, TxnOutput,
};
use sbft_core::shim::view_change::compute_assignments;
use sbft_core::simnet::rng::stream;
use sbft_core::workload::{cross_client_conflict_fraction, TxnGenerator, WorkloadSpec};

fn keys(n: u32) -> Vec<Keypair> {
    let mut reg = KeyRegistry::new();
    (0..n).map(|i| reg.issue(Identity::node(i)).unwrap()).collect()
}

/// Requests are identified by the (view, seq) that prepared them, so two
/// proofs for one slot at one view always agree.
fn request_for(view: u64, seq: u64, clients: &Keypair) -> Arc<Request> {
    let txn = Transaction { client: 0, nonce: view * 1_000 + seq, ops: vec![Op::Read { key: seq }] };
    Request::batch(vec![clients.sign(txn, Scheme::Ds)])
}

fn vote(node: &Keypair, new_view: u64, stable: u64, proofs: &[(u64, u64)], client: &Keypair) -> Envelope {
    let proofs = proofs
        .iter()
        .map(|&(view, seq)| {
            let request = request_for(view, seq, client);
            let digest = request.digest();
            let preprepare = node.sign(Message::Prepare { view, seq, digest }, Scheme::Mac);
            PreparedProof { view, seq, digest, request, preprepare, prepares: vec![] }
        })
        .collect();
    node.sign(Message::ViewChange { new_view, stable_seq: stable, proofs }, Scheme::Ds)
}

/// For each slot above the highest stable checkpoint, the highest-view
/// request any vote carries; `None` marks a gap.
fn assignment_oracle(votes: &[(u64, Vec<(u64, u64)>)]) -> (u64, Vec<Option<(u64, u64)>>) {
    let base = votes.iter().map(|(s, _)| *s).max().unwrap_or(0);
    let mut all: Vec<(u64, u64)> =
        votes.iter().flat_map(|(_, p)| p.iter().copied()).filter(|(_, s)| *s > base).collect();
    all.sort_by_key(|e| std::cmp::Reverse(e.0));
    let top = all.iter().map(|(_, s)| *s).max().unwrap_or(base);
    let slots = (base + 1..=top).map(|seq| all.iter().find(|(_, s)| *s == seq).copied()).collect();
    (base, slots)
}

fn arb_votes() -> impl Strategy<Value = Vec<(u64, Vec<(u64, u64)>)>> {
    prop::collection::vec((0u64..6, prop::collection::vec((0u64..5, 1u64..14), 0..6)), 3..5)
}

proptest! {
    #[test]
    fn new_view_assignment_matches_highest_view_oracle(votes in arb_votes()) {
        let nodes = keys(5);
        let client = {
            let mut reg = KeyRegistry::new();
            reg.issue(Identity::client(0)).unwrap()
        };
        let envs: Vec<Envelope> = votes
            .iter()
            .enumerate()
            .map(|(i, (stable, proofs))| vote(&nodes[i], 5, *stable, proofs, &client))
            .collect();
        let got = compute_assignments(&envs, 5);
        let (base, slots) = assignment_oracle(&votes);
        prop_assert_eq!(got.base, base);
        prop_assert_eq!(got.entries.len(), slots.len());
        for ((seq, req), (i, want)) in got.entries.iter().zip(slots.iter().enumerate()) {
            prop_assert_eq!(*seq, base + 1 + i as u64);
            match want {
                Some((view, s)) => prop_assert_eq!(req.digest(), request_for(*view, *s, &client).digest()),
                None => prop_assert_eq!(req.digest(), Request::noop(5, *seq).digest()),
            }
        }
    }
}

/// Straight-line interpreter: one shared map, each write bumps the version.
fn interpret(txns: &[Transaction], initial: &HashMap<u64, (i64, u64)>) -> Vec<TxnOutput> {
    let mut store = initial.clone();
    let mut outs = Vec::new();
    for t in txns {
        let mut out = TxnOutput::default();
        let mut local: HashMap<u64, i64> = HashMap::new();
        let value_of = |k: u64, out: &mut TxnOutput, local: &mut HashMap<u64, i64>| -> i64 {
            if let Some(v) = local.get(&k) {
                return *v;
            }
            let (v, ver) = store.get(&k).copied().unwrap_or((0, 0));
            out.rw.reads.insert(k, ver);
            local.insert(k, v);
            v
        };
        for op in &t.ops {
            match *op {
                Op::Read { key } => {
                    let v = value_of(key, &mut out, &mut local);
                    out.result.reads.push((key, v));
                }
                Op::Write { key, value } => {
                    let v = match value {
                        Operand::Lit { value } => value,
                        Operand::ReadPlus { key: src, delta } => value_of(src, &mut out, &mut local).wrapping_add(delta),
                    };
                    local.insert(key, v);
                    out.rw.writes.insert(key, v);
                }
                Op::Compute { .. } => {}
            }
        }
        for (&k, &v) in &out.rw.writes {
            let ver = store.get(&k).map_or(0, |e| e.1);
            store.insert(k, (v, ver + 1));
        }
        outs.push(out);
    }
    outs
}

fn arb_op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0u64..6).prop_map(|key| Op::Read { key }),
        (0u64..6, -50i64..50).prop_map(|(key, value)| Op::Write { key, value: Operand::Lit { value } }),
        (0u64..6, 0u64..6, -3i64..4)
            .prop_map(|(key, src, delta)| Op::Write { key, value: Operand::ReadPlus { key: src, delta } }),
        (0u64..100).prop_map(|micros| Op::Compute { micros }),
    ]
}

proptest! {
    #[test]
    fn batch_execution_matches_straight_line_interpreter(
        txns in prop::collection::vec(prop::collection::vec(arb_op(), 1..6), 1..5),
        initial in prop::collection::vec((-100i64..100, 0u64..4), 6),
    ) {
        let client = {
            let mut reg = KeyRegistry::new();
            reg.issue(Identity::client(0)).unwrap()
        };
        let txns: Vec<Transaction> = txns
            .into_iter()
            .enumerate()
            .map(|(i, ops)| Transaction { client: 0, nonce: i as u64 + 1, ops })
            .collect();
        let initial: HashMap<u64, (i64, u64)> =
            initial.into_iter().enumerate().map(|(k, e)| (k as u64, e)).collect();
        let request = Request::batch(txns.iter().map(|t| client.sign(t.clone(), Scheme::Ds)).collect());
        let fetched: BTreeMap<u64, (i64, u64)> = initial.iter().map(|(k, v)| (*k, *v)).collect();
        prop_assert_eq!(execute_batch(&request, &fetched), interpret(&txns, &initial));
    }
}

/// Pairwise definition: a transaction conflicts if some other client's
/// transaction touches one of its keys and at least one side writes it.
fn pairwise_conflict_fraction(txns: &[Transaction]) -> f64 {
    let conflicting = txns
        .iter()
        .filter(|a| {
            txns.iter().any(|b| {
                b.client != a.client
                    && (a.write_keys().iter().any(|k| b.read_keys().contains(k) || b.write_keys().contains(k))
                        || b.write_keys().iter().any(|k| a.read_keys().contains(k)))
            })
        })
        .count();
    conflicting as f64 / txns.len() as f64
}

#[test]
fn half_conflict_rate_yields_half_conflicting_transactions() {
    let spec = WorkloadSpec { num_clients: 8, conflict_rate: 0.5, ..WorkloadSpec::default() };
    let mut txns = Vec::new();
    for c in 0..8 {
        let mut g = TxnGenerator::new(spec.clone(), c, stream(11, "workload", c as u64));
        txns.extend((1..=100).map(|n| g.next_transaction(n)));
    }
    let oracle = pairwise_conflict_fraction(&txns);
    assert_eq!(cross_client_conflict_fraction(&txns), oracle);
    assert!((oracle - 0.5).abs() <= 0.05, "conflict fraction {oracle}");
}

#[test]
fn generated_keys_stay_inside_the_keyspace() {
    let spec = WorkloadSpec { num_clients: 3, keyspace: 100, conflict_rate: 0.3, ..WorkloadSpec::default() };
    for c in 0..3 {
        let mut g = TxnGenerator::new(spec.clone(), c, stream(2, "workload", c as u64));
        for n in 1..=200 {
            let t = g.next_transaction(n);
            assert!(t.read_keys().iter().chain(t.write_keys().iter()).all(|k| *k < 100));
        }
    }
}

#[test]
fn digest_of_request_covers_every_transaction() {
    let client = {
        let mut reg = KeyRegistry::new();
        reg.issue(Identity::client(0)).unwrap()
    };
    let a = request_for(1, 1, &client);
    let b = request_for(1, 2, &client);
    assert_ne!(a.digest(), b.digest());
    assert_ne!(a.digest(), Digest::ZERO);
}
