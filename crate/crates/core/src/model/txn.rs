use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::digest::{digest_of, Digest};
use super::encode::Encode;
use super::ident::{Identity, SimTime};
use super::signed::SignedMessage;

pub type Key = u64;
pub type Value = i64;
pub type Version = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Operand {
    Lit { value: Value },
    /// Current value of `key` as seen by this transaction, plus `delta`.
    ReadPlus { key: Key, delta: Value },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum Op {
    Read { key: Key },
    Write { key: Key, value: Operand },
    Compute { micros: SimTime },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TxnId {
    pub client: u32,
    pub nonce: u64,
}

impl std::fmt::Display for TxnId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "c{}/{}", self.client, self.nonce)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Transaction {
    pub client: u32,
    pub nonce: u64,
    pub ops: Vec<Op>,
}

pub type SignedTxn = SignedMessage<Transaction>;

impl Transaction {
    pub fn id(&self) -> TxnId {
        TxnId { client: self.client, nonce: self.nonce }
    }

    pub fn client_identity(&self) -> Identity {
        Identity::client(self.client)
    }

    pub fn digest(&self) -> Digest {
        digest_of(self)
    }

    pub fn compute_cost(&self) -> SimTime {
        self.ops
            .iter()
            .map(|op| match op {
                Op::Compute { micros } => *micros,
                _ => 0,
            })
            .sum()
    }

    /// Keys whose stored value this transaction may observe.
    pub fn read_keys(&self) -> BTreeSet<Key> {
        let mut keys = BTreeSet::new();
        for op in &self.ops {
            match op {
                Op::Read { key } => {
                    keys.insert(*key);
                }
                Op::Write { value: Operand::ReadPlus { key, .. }, .. } => {
                    keys.insert(*key);
                }
                _ => {}
            }
        }
        keys
    }

    pub fn write_keys(&self) -> BTreeSet<Key> {
        self.ops
            .iter()
            .filter_map(|op| match op {
                Op::Write { key, .. } => Some(*key),
                _ => None,
            })
            .collect()
    }

    pub fn well_formed(&self) -> bool {
        !self.ops.is_empty()
    }
}

impl Encode for Operand {
    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            Operand::Lit { value } => {
                out.push(0);
                value.encode(out);
            }
            Operand::ReadPlus { key, delta } => {
                out.push(1);
                key.encode(out);
                delta.encode(out);
            }
        }
    }
}

impl Encode for Op {
    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            Op::Read { key } => {
                out.push(0);
                key.encode(out);
            }
            Op::Write { key, value } => {
                out.push(1);
                key.encode(out);
                value.encode(out);
            }
            Op::Compute { micros } => {
                out.push(2);
                micros.encode(out);
            }
        }
    }
}

impl Encode for Transaction {
    fn encode(&self, out: &mut Vec<u8>) {
        self.client.encode(out);
        self.nonce.encode(out);
        self.ops.encode(out);
    }
}

impl Encode for TxnId {
    fn encode(&self, out: &mut Vec<u8>) {
        self.client.encode(out);
        self.nonce.encode(out);
    }
}

/// Versions observed by reads and values produced by writes.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RwSet {
    pub reads: BTreeMap<Key, Version>,
    pub writes: BTreeMap<Key, Value>,
}

/// Values returned by the transaction's read operations, in op order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TxnResult {
    pub reads: Vec<(Key, Value)>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TxnOutput {
    pub rw: RwSet,
    pub result: TxnResult,
}

impl Encode for RwSet {
    fn encode(&self, out: &mut Vec<u8>) {
        self.reads.encode(out);
        self.writes.encode(out);
    }
}

impl Encode for TxnResult {
    fn encode(&self, out: &mut Vec<u8>) {
        self.reads.encode(out);
    }
}

impl Encode for TxnOutput {
    fn encode(&self, out: &mut Vec<u8>) {
        self.result.encode(out);
        self.rw.encode(out);
    }
}

/// Reference interpreter. `read` supplies the stored value and version of a
/// key the first time the transaction observes it.
pub fn execute_txn<F>(txn: &Transaction, mut read: F) -> TxnOutput
where
    F: FnMut(Key) -> (Value, Version),
{
    let mut out = TxnOutput::default();
    let mut seen: BTreeMap<Key, Value> = BTreeMap::new();
    let mut current = |key: Key, out: &mut TxnOutput, seen: &mut BTreeMap<Key, Value>| -> Value {
        if let Some(v) = out.rw.writes.get(&key) {
            return *v;
        }
        if let Some(v) = seen.get(&key) {
            return *v;
        }
        let (value, version) = read(key);
        out.rw.reads.insert(key, version);
        seen.insert(key, value);
        value
    };
    for op in &txn.ops {
        match *op {
            Op::Read { key } => {
                let v = current(key, &mut out, &mut seen);
                out.result.reads.push((key, v));
            }
            Op::Write { key, value } => {
                let v = match value {
                    Operand::Lit { value } => value,
                    Operand::ReadPlus { key: src, delta } => {
                        current(src, &mut out, &mut seen).wrapping_add(delta)
                    }
                };
                out.rw.writes.insert(key, v);
            }
            Op::Compute { .. } => {}
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn txn(ops: Vec<Op>) -> Transaction {
        Transaction { client: 0, nonce: 1, ops }
    }

    #[test]
    fn blind_write_has_no_reads() {
        let t = txn(vec![Op::Write { key: 9, value: Operand::Lit { value: 5 } }]);
        let out = execute_txn(&t, |_| panic!("no read expected"));
        assert!(out.rw.reads.is_empty());
        assert_eq!(out.rw.writes.get(&9), Some(&5));
    }

    #[test]
    fn read_your_own_write_skips_storage() {
        let t = txn(vec![
            Op::Write { key: 1, value: Operand::Lit { value: 3 } },
            Op::Read { key: 1 },
        ]);
        let out = execute_txn(&t, |_| panic!("no read expected"));
        assert_eq!(out.result.reads, vec![(1, 3)]);
    }

    #[test]
    fn repeated_reads_fetch_once() {
        let t = txn(vec![Op::Read { key: 4 }, Op::Read { key: 4 }]);
        let mut calls = 0;
        let out = execute_txn(&t, |_| {
            calls += 1;
            (10, 2)
        });
        assert_eq!(calls, 1);
        assert_eq!(out.result.reads, vec![(4, 10), (4, 10)]);
    }

    #[test]
    fn key_sets_cover_read_plus_sources() {
        let t = txn(vec![Op::Write { key: 2, value: Operand::ReadPlus { key: 7, delta: 1 } }]);
        assert_eq!(t.read_keys().into_iter().collect::<Vec<_>>(), vec![7]);
        assert_eq!(t.write_keys().into_iter().collect::<Vec<_>>(), vec![2]);
    }
}
