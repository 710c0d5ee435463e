//! Versioned key-value store behind the verifier.
//!
//! Records are implicit: key `k < keyspace` starts at `initial_value(seed, k)`
//! with version 0, and only written keys are materialized.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use thiserror::Error;

use crate::model::{Digest, Encode, Identity, Key, Role, Value, Version};

pub const DEFAULT_KEYSPACE: u64 = 600_000;

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum StorageError {
    #[error("{0} attempted a storage write")]
    NotVerifier(Identity),
    #[error("apply at seq {seq} does not follow last applied seq {last}")]
    SeqNotIncreasing { seq: u64, last: u64 },
    #[error("malformed snapshot: {0}")]
    Snapshot(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AppliedEntry {
    pub seq: u64,
    pub writes: Vec<(Key, Value)>,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

pub fn initial_value(seed: u64, key: Key) -> Value {
    (splitmix(seed ^ splitmix(key)) % 10_000) as Value
}

#[derive(Clone, Debug)]
pub struct VersionedStore {
    keyspace: u64,
    seed: u64,
    records: BTreeMap<Key, (Value, Version)>,
    applied: Vec<AppliedEntry>,
    last_seq: u64,
    callers: BTreeSet<Identity>,
}

impl VersionedStore {
    pub fn new(keyspace: u64, seed: u64) -> Self {
        Self {
            keyspace,
            seed,
            records: BTreeMap::new(),
            applied: Vec::new(),
            last_seq: 0,
            callers: BTreeSet::new(),
        }
    }

    pub fn keyspace(&self) -> u64 {
        self.keyspace
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Value and version of `key`; keys outside the keyspace read as 0 at version 0.
    pub fn get(&self, key: Key) -> (Value, Version) {
        match self.records.get(&key) {
            Some(r) => *r,
            None if key < self.keyspace => (initial_value(self.seed, key), 0),
            None => (0, 0),
        }
    }

    pub fn fetch(&self, keys: &[Key]) -> Vec<(Key, Value, Version)> {
        keys.iter()
            .map(|&k| {
                let (v, ver) = self.get(k);
                (k, v, ver)
            })
            .collect()
    }

    /// Applies ordered writes for `seq`. Each write bumps its key's version by one.
    pub fn apply(
        &mut self,
        writes: &[(Key, Value)],
        seq: u64,
        caller: Identity,
    ) -> Result<(), StorageError> {
        self.callers.insert(caller);
        if caller.role != Role::Verifier {
            return Err(StorageError::NotVerifier(caller));
        }
        if seq <= self.last_seq {
            return Err(StorageError::SeqNotIncreasing { seq, last: self.last_seq });
        }
        for &(k, v) in writes {
            let (_, ver) = self.get(k);
            self.records.insert(k, (v, ver + 1));
        }
        self.last_seq = seq;
        self.applied.push(AppliedEntry { seq, writes: writes.to_vec() });
        Ok(())
    }

    /// Every identity that ever invoked `apply`, including rejected calls.
    pub fn apply_callers(&self) -> &BTreeSet<Identity> {
        &self.callers
    }

    pub fn last_applied_seq(&self) -> u64 {
        self.last_seq
    }

    pub fn applied_log(&self) -> &[AppliedEntry] {
        &self.applied
    }

    /// Materialized records, sorted by key.
    pub fn records(&self) -> impl Iterator<Item = (Key, Value, Version)> + '_ {
        self.records.iter().map(|(k, (v, ver))| (*k, *v, *ver))
    }

    /// Canonical snapshot: header `(keyspace, seed)` then sorted
    /// `(key, value, version)` triples for every materialized record.
    pub fn snapshot_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        (self.keyspace, self.seed).encode(&mut out);
        let triples: Vec<(Key, Value, Version)> = self.records().collect();
        triples.encode(&mut out);
        out
    }

    pub fn state_digest(&self) -> Digest {
        Digest::of_bytes(&self.snapshot_bytes())
    }

    pub fn write_snapshot<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(&self.snapshot_bytes())
    }

    pub fn read_snapshot<R: Read>(mut r: R) -> Result<Self, StorageError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| StorageError::Snapshot(e.to_string()))?;
        Self::from_snapshot_bytes(&bytes)
    }

    pub fn from_snapshot_bytes(bytes: &[u8]) -> Result<Self, StorageError> {
        let mut cur = Cursor { bytes, pos: 0 };
        let keyspace = cur.u64()?;
        let seed = cur.u64()?;
        let n = cur.u32()? as usize;
        let mut store = Self::new(keyspace, seed);
        for _ in 0..n {
            let k = cur.u64()?;
            let v = cur.u64()? as i64;
            let ver = cur.u64()?;
            store.records.insert(k, (v, ver));
        }
        if cur.pos != bytes.len() {
            return Err(StorageError::Snapshot("trailing bytes".into()));
        }
        Ok(store)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], StorageError> {
        let end = self.pos + N;
        let slice = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| StorageError::Snapshot("truncated".into()))?;
        self.pos = end;
        Ok(slice.try_into().expect("length checked"))
    }

    fn u64(&mut self) -> Result<u64, StorageError> {
        Ok(u64::from_be_bytes(self.take()?))
    }

    fn u32(&mut self) -> Result<u32, StorageError> {
        Ok(u32::from_be_bytes(self.take()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apply_bumps_version_and_value() {
        let mut s = VersionedStore::new(DEFAULT_KEYSPACE, 1);
        let (_, v0) = s.get(3);
        s.apply(&[(3, 5)], 1, Identity::VERIFIER).unwrap();
        assert_eq!(s.get(3), (5, v0 + 1));
    }

    #[test]
    fn executor_write_is_refused() {
        let mut s = VersionedStore::new(10, 1);
        let err = s.apply(&[(3, 5)], 1, Identity::executor(4));
        assert_eq!(err, Err(StorageError::NotVerifier(Identity::executor(4))));
        assert!(s.applied_log().is_empty());
    }

    #[test]
    fn seq_must_increase() {
        let mut s = VersionedStore::new(10, 1);
        s.apply(&[], 2, Identity::VERIFIER).unwrap();
        assert!(s.apply(&[], 2, Identity::VERIFIER).is_err());
        assert!(s.apply(&[], 3, Identity::VERIFIER).is_ok());
    }

    #[test]
    fn full_keyspace_starts_at_version_zero() {
        let s = VersionedStore::new(DEFAULT_KEYSPACE, 9);
        for k in [0, 1, 299_999, DEFAULT_KEYSPACE - 1] {
            assert_eq!(s.get(k).1, 0);
        }
    }

    #[test]
    fn snapshot_round_trips() {
        let mut s = VersionedStore::new(100, 4);
        s.apply(&[(1, -7), (50, 2), (1, 8)], 1, Identity::VERIFIER).unwrap();
        let bytes = s.snapshot_bytes();
        let back = VersionedStore::from_snapshot_bytes(&bytes).unwrap();
        assert_eq!(back.snapshot_bytes(), bytes);
        assert_eq!(back.get(1), (8, 2));
    }

    #[test]
    fn truncated_snapshot_is_rejected() {
        let s = VersionedStore::new(100, 4);
        let bytes = s.snapshot_bytes();
        assert!(VersionedStore::from_snapshot_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
