//! Serializability oracle: replays the validated transactions serially, in
//! the order the verifier applied them, and compares the resulting store
//! with the run's final storage byte for byte.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;

use crate::effects::TxnVerdict;
use crate::model::{execute_txn, Identity, Key, Request, Value, Version};
use crate::storage::VersionedStore;

#[derive(Clone, Debug)]
pub struct DecidedRecord {
    pub seq: u64,
    pub request: Arc<Request>,
    pub verdicts: Vec<TxnVerdict>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Counterexample {
    /// The verifier's applied sequence numbers are not 1, 2, 3, ...
    OutOfOrder { expected: u64, found: u64 },
    VerdictCount { seq: u64 },
    /// First key whose replayed record differs from storage.
    Record { key: Key, replayed: (Value, Version), stored: (Value, Version) },
    /// Snapshots differ but no differing key was found among materialized
    /// records (header mismatch).
    Snapshot,
}

impl std::fmt::Display for Counterexample {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Counterexample::OutOfOrder { expected, found } => {
                write!(f, "applied seq {found} where {expected} was expected")
            }
            Counterexample::VerdictCount { seq } => write!(f, "seq {seq} has a verdict count mismatch"),
            Counterexample::Record { key, replayed, stored } => write!(
                f,
                "key {key}: serial replay gives {:?}, storage holds {:?}",
                replayed, stored
            ),
            Counterexample::Snapshot => write!(f, "snapshot headers differ"),
        }
    }
}

/// Serial replay of `decided` over a fresh store with the given keyspace and
/// seed.
pub fn replay(keyspace: u64, seed: u64, decided: &[DecidedRecord]) -> Result<VersionedStore, Counterexample> {
    let mut store = VersionedStore::new(keyspace, seed);
    for (i, d) in decided.iter().enumerate() {
        let expected = i as u64 + 1;
        if d.seq != expected {
            return Err(Counterexample::OutOfOrder { expected, found: d.seq });
        }
        if d.verdicts.len() != d.request.txns().len() {
            return Err(Counterexample::VerdictCount { seq: d.seq });
        }
        let mut overlay: BTreeMap<Key, (Value, Version)> = BTreeMap::new();
        let mut writes = Vec::new();
        for (stxn, verdict) in d.request.txns().iter().zip(&d.verdicts) {
            if *verdict != TxnVerdict::Validated {
                continue;
            }
            let out = execute_txn(stxn.payload(), |k| overlay.get(&k).copied().unwrap_or_else(|| store.get(k)));
            for (&k, &v) in &out.rw.writes {
                let ver = overlay.get(&k).copied().unwrap_or_else(|| store.get(k)).1;
                overlay.insert(k, (v, ver + 1));
                writes.push((k, v));
            }
        }
        store
            .apply(&writes, d.seq, Identity::VERIFIER)
            .expect("replay applies in increasing order");
    }
    Ok(store)
}

pub fn serializability_oracle(
    keyspace: u64,
    seed: u64,
    decided: &[DecidedRecord],
    final_store: &VersionedStore,
) -> Result<(), Counterexample> {
    let replayed = replay(keyspace, seed, decided)?;
    if replayed.snapshot_bytes() == final_store.snapshot_bytes() {
        return Ok(());
    }
    let a: BTreeMap<Key, (Value, Version)> = replayed.records().map(|(k, v, ver)| (k, (v, ver))).collect();
    let b: BTreeMap<Key, (Value, Version)> = final_store.records().map(|(k, v, ver)| (k, (v, ver))).collect();
    for key in a.keys().chain(b.keys()) {
        let r = a.get(key).copied().unwrap_or_else(|| replayed.get(*key));
        let s = b.get(key).copied().unwrap_or_else(|| final_store.get(*key));
        if r != s {
            return Err(Counterexample::Record { key: *key, replayed: r, stored: s });
        }
    }
    Err(Counterexample::Snapshot)
}

/// Test fixture: changes the value written by the first validated write in
/// the log. Returns false if the log holds no validated write.
pub fn corrupt_one_write(decided: &mut [DecidedRecord]) -> bool {
    use crate::model::{Op, Operand};
    for d in decided.iter_mut() {
        let mut txns = d.request.txns().to_vec();
        for (i, v) in d.verdicts.iter().enumerate() {
            if *v != TxnVerdict::Validated {
                continue;
            }
            let mut txn = txns[i].payload().clone();
            let Some(op) = txn.ops.iter_mut().find(|o| matches!(o, Op::Write { .. })) else { continue };
            if let Op::Write { value, .. } = op {
                match value {
                    Operand::Lit { value } => *value += 1,
                    Operand::ReadPlus { delta, .. } => *delta += 1,
                }
            }
            txns[i] = txns[i].tampered(txn);
            d.request = Request::batch(txns);
            return true;
        }
    }
    false
}
