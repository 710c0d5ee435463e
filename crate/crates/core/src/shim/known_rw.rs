//! Conflict-avoiding spawn planner for workloads with declared read/write sets.
//!
//! Committed requests enter a queue strictly in sequence order. A queued
//! request is spawned once it conflicts with no earlier queued or in-flight
//! request. In-flight requests hold their keys until the verifier reports
//! their outcome.

use std::collections::{BTreeMap, BTreeSet};

use crate::model::{Key, Request};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeySets {
    pub reads: BTreeSet<Key>,
    pub writes: BTreeSet<Key>,
}

impl KeySets {
    pub fn of(request: &Request) -> Self {
        let mut reads = BTreeSet::new();
        let mut writes = BTreeSet::new();
        for t in request.txns() {
            reads.extend(t.payload().read_keys());
            writes.extend(t.payload().write_keys());
        }
        Self { reads, writes }
    }

    pub fn conflicts(&self, other: &KeySets) -> bool {
        let touches = |w: &BTreeSet<Key>, o: &KeySets| {
            w.iter().any(|k| o.reads.contains(k) || o.writes.contains(k))
        };
        touches(&self.writes, other) || touches(&other.writes, self)
    }
}

#[derive(Clone, Debug, Default)]
pub struct KnownRwPlanner {
    next: u64,
    waiting: BTreeMap<u64, KeySets>,
    queue: Vec<(u64, KeySets)>,
    inflight: BTreeMap<u64, KeySets>,
}

impl KnownRwPlanner {
    pub fn new(first_seq: u64) -> Self {
        Self { next: first_seq, ..Self::default() }
    }

    /// Forgets all state and resumes sequencing at `first_seq`.
    pub fn reset(&mut self, first_seq: u64) {
        *self = Self::new(first_seq);
    }

    pub fn next_expected(&self) -> u64 {
        self.next
    }

    pub fn locked_keys(&self) -> BTreeSet<Key> {
        self.inflight.values().flat_map(|k| k.writes.iter().copied()).collect()
    }

    /// Registers a committed request; returns the seqs that may spawn now.
    pub fn offer(&mut self, seq: u64, keys: KeySets) -> Vec<u64> {
        if seq < self.next || self.inflight.contains_key(&seq) {
            return Vec::new();
        }
        self.waiting.insert(seq, keys);
        while let Some(k) = self.waiting.remove(&self.next) {
            self.queue.push((self.next, k));
            self.next += 1;
        }
        self.scan()
    }

    /// Releases the locks of `seq`; returns the seqs that may spawn now.
    pub fn release(&mut self, seq: u64) -> Vec<u64> {
        self.inflight.remove(&seq);
        self.queue.retain(|(s, _)| *s != seq);
        self.scan()
    }

    fn scan(&mut self) -> Vec<u64> {
        let mut ready = Vec::new();
        let mut i = 0;
        while i < self.queue.len() {
            let blocked = {
                let (_, keys) = &self.queue[i];
                self.inflight.values().any(|held| held.conflicts(keys))
                    || self.queue[..i].iter().any(|(_, earlier)| earlier.conflicts(keys))
            };
            if blocked {
                i += 1;
            } else {
                let (s, k) = self.queue.remove(i);
                self.inflight.insert(s, k);
                ready.push(s);
            }
        }
        ready
    }
}
