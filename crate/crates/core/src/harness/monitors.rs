//! Online invariant monitors fed by observations and outbound messages.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::Serialize;

use crate::effects::{Observation, TxnVerdict};
use crate::model::{Digest, Envelope, ErrorKind, Identity, Message, TxnId};
use crate::storage::VersionedStore;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub name: &'static str,
    pub passed: bool,
    pub detail: Option<String>,
}

impl Verdict {
    fn from(name: &'static str, failure: Option<String>) -> Self {
        Self { name, passed: failure.is_none(), detail: failure }
    }
}

pub const SHIM_CONSISTENCY: &str = "shim-consistency";
pub const SHIM_NON_DIVERGENCE: &str = "shim-non-divergence";
pub const VERIFIER_NON_DIVERGENCE: &str = "verifier-non-divergence";
pub const WRITE_EXCLUSIVITY: &str = "write-exclusivity";
pub const FORGERY_IMPOSSIBILITY: &str = "forgery-impossibility";
pub const EXACTLY_ONCE: &str = "exactly-once-validation";
pub const CLOSED_LOOP: &str = "closed-loop-discipline";
pub const SERIALIZABILITY: &str = "serializability";

#[derive(Debug, Default)]
pub struct Monitors {
    byzantine: BTreeSet<u32>,
    /// First digest each honest node committed at each seq.
    first_commit: BTreeMap<u64, BTreeMap<u32, Digest>>,
    divergence: Option<String>,
    decided: Vec<(u64, Digest)>,
    forgery: Option<String>,
    validated: HashSet<TxnId>,
    exactly_once: Option<String>,
    vc_votes: BTreeMap<u64, BTreeSet<u32>>,
    installs: BTreeMap<u64, BTreeSet<u32>>,
    spawns: BTreeMap<u64, BTreeMap<u32, u32>>,
}

impl Monitors {
    pub fn new(byzantine: BTreeSet<u32>) -> Self {
        Self { byzantine, ..Self::default() }
    }

    fn honest(&self, node: u32) -> bool {
        !self.byzantine.contains(&node)
    }

    pub fn observe(&mut self, o: &Observation) {
        match o {
            Observation::Committed { node, seq, digest, view, .. } if self.honest(*node) => {
                let at = self.first_commit.entry(*seq).or_default();
                if let Some(prev) = at.values().find(|d| *d != digest) {
                    self.divergence.get_or_insert_with(|| {
                        format!("n{node} committed {digest:?} at seq {seq} in view {view}, others hold {prev:?}")
                    });
                }
                at.entry(*node).or_insert(*digest);
            }
            Observation::ViewChangeVote { node, view } => {
                self.vc_votes.entry(*view).or_default().insert(*node);
            }
            Observation::ViewInstalled { node, view } if self.honest(*node) => {
                self.installs.entry(*view).or_default().insert(*node);
            }
            Observation::Decided { seq, request, verdicts } => {
                self.decided.push((*seq, request.digest()));
                for (t, v) in request.txns().iter().zip(verdicts) {
                    if *v == TxnVerdict::Validated && !self.validated.insert(t.payload().id()) {
                        self.exactly_once
                            .get_or_insert_with(|| format!("{} validated twice", t.payload().id()));
                    }
                }
            }
            _ => {}
        }
    }

    /// Every valid signature must belong to the component that emitted it.
    pub fn check_send(&mut self, emitter: Identity, env: &Envelope) {
        if self.forgery.is_some() {
            return;
        }
        if env.claims_valid() && env.signer() != emitter {
            self.forgery = Some(format!("{emitter} emitted a valid envelope signed by {}", env.signer()));
            return;
        }
        let inner = match env.payload() {
            Message::ClientRequest(t) | Message::Error(ErrorKind::MissingRequest(t)) => Some(t),
            _ => None,
        };
        if let Some(t) = inner {
            if t.claims_valid() && t.signer() != t.payload().client_identity() {
                self.forgery = Some(format!("{emitter} carried a transaction signed by {}", t.signer()));
            }
        }
    }

    /// Largest number of distinct nodes voting for one view change.
    pub fn max_view_change_votes(&self) -> usize {
        self.vc_votes.values().map(|s| s.len()).max().unwrap_or(0)
    }

    /// Views above 0 installed by at least one honest node.
    pub fn installed_views(&self) -> Vec<u64> {
        self.installs.keys().copied().filter(|v| *v > 0).collect()
    }

    pub fn max_view(&self) -> u64 {
        self.installs.keys().copied().max().unwrap_or(0)
    }

    pub fn record_spawn(&mut self, spawner: u32, seq: u64) {
        *self.spawns.entry(seq).or_default().entry(spawner).or_default() += 1;
    }

    /// Executors actually launched for `seq`, per spawner.
    pub fn spawns_for(&self, seq: u64) -> BTreeMap<u32, u32> {
        self.spawns.get(&seq).cloned().unwrap_or_default()
    }

    pub fn spawned_seqs(&self) -> impl Iterator<Item = u64> + '_ {
        self.spawns.keys().copied()
    }

    pub fn decided(&self) -> &[(u64, Digest)] {
        &self.decided
    }

    pub fn committed_digest(&self, seq: u64) -> Option<Digest> {
        self.first_commit.get(&seq).and_then(|m| m.values().next().copied())
    }

    pub fn verdicts(
        &self,
        storage: &VersionedStore,
        check_certified_digests: bool,
        closed_loop_violation: Option<String>,
        serializability: Option<String>,
    ) -> Vec<Verdict> {
        let consistency = self.first_commit.iter().find_map(|(seq, by_node)| {
            let digests: BTreeSet<&Digest> = by_node.values().collect();
            (digests.len() > 1).then(|| format!("honest nodes disagree at seq {seq}: {digests:?}"))
        });
        let mut verifier = None;
        for (i, (seq, digest)) in self.decided.iter().enumerate() {
            if *seq != i as u64 + 1 {
                verifier = Some(format!("decided seq {seq} at position {}", i + 1));
                break;
            }
            if check_certified_digests {
                if let Some(c) = self.committed_digest(*seq) {
                    if c != *digest {
                        verifier = Some(format!("verifier decided {digest:?} at seq {seq}, shim committed {c:?}"));
                        break;
                    }
                }
            }
        }
        if verifier.is_none() {
            let applied: Vec<u64> = storage.applied_log().iter().map(|e| e.seq).collect();
            let decided: Vec<u64> = self.decided.iter().map(|d| d.0).collect();
            if applied != decided {
                verifier = Some("storage applied log differs from the verifier's decisions".into());
            }
        }
        let exclusivity = storage
            .apply_callers()
            .iter()
            .find(|c| **c != Identity::VERIFIER)
            .map(|c| format!("{c} invoked the storage write path"));
        vec![
            Verdict::from(SHIM_CONSISTENCY, consistency),
            Verdict::from(SHIM_NON_DIVERGENCE, self.divergence.clone()),
            Verdict::from(VERIFIER_NON_DIVERGENCE, verifier),
            Verdict::from(WRITE_EXCLUSIVITY, exclusivity),
            Verdict::from(FORGERY_IMPOSSIBILITY, self.forgery.clone()),
            Verdict::from(EXACTLY_ONCE, self.exactly_once.clone()),
            Verdict::from(CLOSED_LOOP, closed_loop_violation),
            Verdict::from(SERIALIZABILITY, serializability),
        ]
    }
}
