//! The trusted verifier in front of storage.
//!
//! Verify messages are grouped per (seq, request digest). A request matches
//! once `f_E+1` distinct executors report byte-identical outputs. Matched
//! requests are validated strictly in sequence order starting at `k_max`;
//! later ones wait in the parking list.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use crate::effects::{
    AbortDecision, AbortTimerRecord, Observation, Outbox, TimerKey, TxnVerdict,
};
use crate::model::{
    validate_certificate, verify_signed, BatchOutput, ConflictMode, Digest, Envelope, ErrorKey,
    ErrorKind, Identity, Key, Keypair, Message, Outcome, Request, Role, Scheme, SignedTxn,
    SimTime, TxnId, TxnResult, Value, Version,
};
use crate::storage::VersionedStore;

#[derive(Clone, Debug)]
pub struct VerifierParams {
    pub n_r: usize,
    pub f_r: usize,
    pub f_e: usize,
    pub conflict_mode: ConflictMode,
    pub require_certificate: bool,
    /// Executors expected per request; the abort timer stops once all replied.
    pub expected_executors: usize,
    pub abort_base: SimTime,
    /// Minimum spacing between repeated Error/Replace broadcasts for one item.
    pub resend_cooldown: SimTime,
    /// Batch notifications go to every shim node, not only the primary.
    pub notify_all: bool,
}

#[derive(Debug)]
struct Candidate {
    request: Arc<Request>,
    senders: BTreeSet<Identity>,
    outputs: Vec<Digest>,
    classes: BTreeMap<Digest, (usize, Arc<BatchOutput>)>,
}

#[derive(Debug, Default)]
struct SeqState {
    candidates: BTreeMap<Digest, Candidate>,
    settled: bool,
    timer_running: bool,
}

#[derive(Debug, Clone)]
struct Parked {
    digest: Digest,
    request: Arc<Request>,
    /// `None` marks an entry tagged for abort.
    output: Option<Arc<BatchOutput>>,
}

#[derive(Debug, Clone)]
enum Decided {
    Validated { seq: u64, result: TxnResult },
    Aborted { seq: u64 },
}

pub struct Verifier {
    key: Keypair,
    params: VerifierParams,
    k_max: u64,
    seqs: BTreeMap<u64, SeqState>,
    parked: BTreeMap<u64, Parked>,
    decided: HashMap<TxnId, Decided>,
    seen_txn: HashMap<TxnId, u64>,
    valid_certs: HashSet<(u64, Digest, u64)>,
    flagged: BTreeMap<ErrorKey, SimTime>,
    replaced: BTreeMap<u64, SimTime>,
    drops: BTreeMap<Identity, u64>,
    view_hint: u64,
}

impl Verifier {
    pub fn new(key: Keypair, params: VerifierParams) -> Self {
        Self {
            key,
            params,
            k_max: 1,
            seqs: BTreeMap::new(),
            parked: BTreeMap::new(),
            decided: HashMap::new(),
            seen_txn: HashMap::new(),
            valid_certs: HashSet::new(),
            flagged: BTreeMap::new(),
            replaced: BTreeMap::new(),
            drops: BTreeMap::new(),
            view_hint: 0,
        }
    }

    pub fn k_max(&self) -> u64 {
        self.k_max
    }

    pub fn parked_seqs(&self) -> Vec<u64> {
        self.parked.keys().copied().collect()
    }

    pub fn ignored_verifies(&self) -> &BTreeMap<Identity, u64> {
        &self.drops
    }

    pub fn decided_count(&self) -> usize {
        self.decided.len()
    }

    pub fn on_message(&mut self, env: Envelope, storage: &mut VersionedStore, out: &mut Outbox) {
        if !verify_signed(&env, None) {
            return;
        }
        match env.payload() {
            Message::Verify { .. } if env.signer().role == Role::Executor => {
                self.on_verify(&env, storage, out)
            }
            Message::ClientRequest(stxn) if env.signer().role == Role::Client
                && env.signer() == stxn.payload().client_identity() => {
                    let stxn = stxn.clone();
                    self.on_client_resubmit(&stxn, out);
                }
            _ => {}
        }
    }

    fn ignore(&mut self, from: Identity, seq: u64, out: &mut Outbox) {
        *self.drops.entry(from).or_default() += 1;
        out.observe(Observation::VerifyIgnored { from, seq });
    }

    fn on_verify(&mut self, env: &Envelope, storage: &mut VersionedStore, out: &mut Outbox) {
        let Message::Verify { seq, digest, request, cert, output } = env.payload() else {
            return;
        };
        let (seq, digest, from) = (*seq, *digest, env.signer());
        if seq < self.k_max || self.seqs.get(&seq).is_some_and(|s| s.settled) {
            self.ignore(from, seq, out);
            return;
        }
        if self.seqs.get(&seq).and_then(|s| s.candidates.get(&digest)).is_some_and(|c| c.senders.contains(&from)) {
            self.ignore(from, seq, out);
            return;
        }
        if self.params.require_certificate {
            let Some(c) = cert else { return };
            if c.seq != seq || c.digest != digest {
                return;
            }
            if !self.valid_certs.contains(&(seq, digest, c.view)) {
                out.work.ds_verify += c.attestations.len() as u32;
                if !validate_certificate(c, self.params.n_r, self.params.f_r) {
                    return;
                }
                self.valid_certs.insert((seq, digest, c.view));
            }
            self.view_hint = self.view_hint.max(c.view);
        }
        let state = self.seqs.entry(seq).or_default();
        if !state.candidates.contains_key(&digest) {
            if request.recompute_digest() != digest {
                return;
            }
            for t in request.txns() {
                self.seen_txn.entry(t.payload().id()).or_insert(seq);
            }
        }
        if output.recompute_digest() != output.digest()
            || output.outputs().len() != request.txns().len()
        {
            return;
        }
        let cand = state.candidates.entry(digest).or_insert_with(|| Candidate {
            request: request.clone(),
            senders: BTreeSet::new(),
            outputs: Vec::new(),
            classes: BTreeMap::new(),
        });
        cand.senders.insert(from);
        cand.outputs.push(output.digest());
        let class = cand.classes.entry(output.digest()).or_insert((0, output.clone()));
        class.0 += 1;
        let matched = class.0 > self.params.f_e;
        let replied = cand.senders.len();
        let unknown_rw = self.params.conflict_mode == ConflictMode::UnknownRw;
        if matched {
            state.settled = true;
            if state.timer_running {
                state.timer_running = false;
                out.cancel_timer(TimerKey::VerifierAbort { seq });
            }
            let entry = Parked { digest, request: request.clone(), output: Some(output.clone()) };
            self.on_settled(seq, entry, storage, out);
        } else if unknown_rw {
            if !state.timer_running {
                state.timer_running = true;
                out.set_timer(
                    TimerKey::VerifierAbort { seq },
                    self.params.abort_base + request.compute_cost(),
                );
            } else if replied >= self.params.expected_executors {
                out.cancel_timer(TimerKey::VerifierAbort { seq });
                self.decide_unmatched(seq, storage, out);
            }
        }
    }

    fn on_settled(&mut self, seq: u64, entry: Parked, storage: &mut VersionedStore, out: &mut Outbox) {
        if seq == self.k_max {
            self.ccheck(seq, entry, storage, out);
            while let Some(next) = self.parked.remove(&self.k_max) {
                self.ccheck(self.k_max, next, storage, out);
            }
        } else {
            self.parked.insert(seq, entry);
        }
    }

    /// Validates the entry at `k_max`, answers clients, applies writes and
    /// advances `k_max`.
    fn ccheck(&mut self, seq: u64, entry: Parked, storage: &mut VersionedStore, out: &mut Outbox) {
        debug_assert_eq!(seq, self.k_max);
        let check_reads = self.params.conflict_mode != ConflictMode::NonConflicting;
        let mut overlay: BTreeMap<Key, (Value, Version)> = BTreeMap::new();
        let mut writes: Vec<(Key, Value)> = Vec::new();
        let mut verdicts = Vec::with_capacity(entry.request.txns().len());
        let (mut validated, mut aborted) = (0u32, 0u32);
        for (i, stxn) in entry.request.txns().iter().enumerate() {
            let txn = stxn.payload();
            let id = txn.id();
            out.work.txn_check += 1;
            if self.decided.contains_key(&id) {
                verdicts.push(TxnVerdict::Duplicate);
                continue;
            }
            let fresh = match &entry.output {
                None => None,
                Some(o) => {
                    let o = &o.outputs()[i];
                    let ok = !check_reads
                        || o.rw.reads.iter().all(|(k, ver)| {
                            overlay.get(k).copied().unwrap_or_else(|| storage.get(*k)).1 == *ver
                        });
                    ok.then_some(o)
                }
            };
            let client = txn.client_identity();
            match fresh {
                Some(o) => {
                    for (&k, &v) in &o.rw.writes {
                        let ver = overlay.get(&k).copied().unwrap_or_else(|| storage.get(k)).1;
                        overlay.insert(k, (v, ver + 1));
                        writes.push((k, v));
                    }
                    validated += 1;
                    verdicts.push(TxnVerdict::Validated);
                    self.decided.insert(id, Decided::Validated { seq, result: o.result.clone() });
                    let msg = Message::Response {
                        seq,
                        digest: entry.digest,
                        outcome: Outcome::Txn { id, result: o.result.clone() },
                        view_hint: self.view_hint,
                    };
                    out.sign_send(&self.key, client, msg, Scheme::Ds);
                }
                None => {
                    aborted += 1;
                    verdicts.push(TxnVerdict::Aborted);
                    self.decided.insert(id, Decided::Aborted { seq });
                    let msg = Message::Abort { seq, txn: id, view_hint: self.view_hint };
                    out.sign_send(&self.key, client, msg, Scheme::Ds);
                }
            }
        }
        storage
            .apply(&writes, seq, self.key.identity())
            .expect("verifier applies in strictly increasing order");
        self.notify_shim(seq, entry.digest, validated, aborted, out);
        out.observe(Observation::Decided { seq, request: entry.request.clone(), verdicts });
        self.seqs.remove(&seq);
        self.replaced.remove(&seq);
        self.k_max += 1;
        self.send_acks(out);
    }

    fn notify_shim(&mut self, seq: u64, digest: Digest, validated: u32, aborted: u32, out: &mut Outbox) {
        let msg = Message::Response {
            seq,
            digest,
            outcome: Outcome::Batch { validated, aborted },
            view_hint: self.view_hint,
        };
        if self.params.notify_all {
            out.broadcast_nodes(&self.key, self.params.n_r, None, msg, Scheme::Ds);
        } else {
            let primary = (self.view_hint % self.params.n_r as u64) as u32;
            out.sign_send(&self.key, Identity::node(primary), msg, Scheme::Ds);
        }
    }

    fn send_acks(&mut self, out: &mut Outbox) {
        let done: Vec<ErrorKey> = self
            .flagged
            .keys()
            .filter(|k| match k {
                ErrorKey::MissingSeq(s) => *s < self.k_max,
                ErrorKey::MissingRequest(id) => self.decided.contains_key(id),
            })
            .copied()
            .collect();
        for k in done {
            self.flagged.remove(&k);
            out.broadcast_nodes(&self.key, self.params.n_r, None, Message::Ack(k), Scheme::Ds);
        }
    }

    pub fn on_timer(&mut self, key: &TimerKey, storage: &mut VersionedStore, out: &mut Outbox) {
        if let TimerKey::VerifierAbort { seq } = *key {
            let Some(state) = self.seqs.get_mut(&seq) else { return };
            if state.settled || !state.timer_running || seq < self.k_max {
                return;
            }
            state.timer_running = false;
            self.decide_unmatched(seq, storage, out);
        }
    }

    /// Abort-timer decision rule for an unmatched request.
    fn decide_unmatched(&mut self, seq: u64, storage: &mut VersionedStore, out: &mut Outbox) {
        let Some(state) = self.seqs.get_mut(&seq) else { return };
        let Some((digest, cand)) = state.candidates.iter().max_by_key(|(_, c)| c.senders.len())
        else {
            return;
        };
        let digest = *digest;
        let senders = cand.senders.len();
        let mut output_digests = cand.outputs.clone();
        output_digests.sort();
        let request = cand.request.clone();
        let decision = if senders < 2 * self.params.f_e + 1 {
            AbortDecision::Replace
        } else if seq == self.k_max {
            AbortDecision::AbortNow
        } else {
            AbortDecision::ParkAbort
        };
        out.observe(Observation::AbortTimer(AbortTimerRecord {
            seq,
            digest,
            senders: senders as u32,
            output_digests,
            decision,
        }));
        match decision {
            AbortDecision::Replace => {
                let txn = request.txns().first().map(|t| t.payload().id());
                self.replaced.insert(seq, out.now);
                let msg = Message::Replace { seq: Some(seq), txn };
                out.broadcast_nodes(&self.key, self.params.n_r, None, msg, Scheme::Ds);
            }
            AbortDecision::AbortNow | AbortDecision::ParkAbort => {
                state.settled = true;
                let entry = Parked { digest, request, output: None };
                self.on_settled(seq, entry, storage, out);
            }
        }
    }

    fn cooled_down(last: Option<&SimTime>, now: SimTime, cooldown: SimTime) -> bool {
        last.is_none_or(|&t| now >= t + cooldown)
    }

    /// Four-way branch on a client resubmission.
    pub fn on_client_resubmit(&mut self, stxn: &SignedTxn, out: &mut Outbox) {
        out.work.ds_verify += 1;
        if !verify_signed(stxn, Some(stxn.payload().client_identity())) {
            return;
        }
        let id = stxn.payload().id();
        let client = stxn.payload().client_identity();
        if let Some(d) = self.decided.get(&id) {
            out.observe(Observation::ResubmitBranch { txn: id, branch: "resend" });
            let msg = match d {
                Decided::Validated { seq, result } => Message::Response {
                    seq: *seq,
                    digest: Digest::ZERO,
                    outcome: Outcome::Txn { id, result: result.clone() },
                    view_hint: self.view_hint,
                },
                Decided::Aborted { seq } => {
                    Message::Abort { seq: *seq, txn: id, view_hint: self.view_hint }
                }
            };
            out.sign_send(&self.key, client, msg, Scheme::Ds);
            return;
        }
        let now = out.now;
        let cooldown = self.params.resend_cooldown;
        match self.seen_txn.get(&id).copied() {
            Some(seq) if self.parked.contains_key(&seq) => {
                out.observe(Observation::ResubmitBranch { txn: id, branch: "missing-seq" });
                let key = ErrorKey::MissingSeq(self.k_max);
                if Self::cooled_down(self.flagged.get(&key), now, cooldown) {
                    self.flagged.insert(key, now);
                    let msg = Message::Error(ErrorKind::MissingSeq(self.k_max));
                    out.broadcast_nodes(&self.key, self.params.n_r, None, msg, Scheme::Ds);
                }
            }
            Some(seq) => {
                out.observe(Observation::ResubmitBranch { txn: id, branch: "replace" });
                if Self::cooled_down(self.replaced.get(&seq), now, cooldown) {
                    self.replaced.insert(seq, now);
                    let msg = Message::Replace { seq: Some(seq), txn: Some(id) };
                    out.broadcast_nodes(&self.key, self.params.n_r, None, msg, Scheme::Ds);
                }
            }
            None => {
                out.observe(Observation::ResubmitBranch { txn: id, branch: "missing-request" });
                let key = ErrorKey::MissingRequest(id);
                if Self::cooled_down(self.flagged.get(&key), now, cooldown) {
                    self.flagged.insert(key, now);
                    let msg = Message::Error(ErrorKind::MissingRequest(stxn.clone()));
                    out.broadcast_nodes(&self.key, self.params.n_r, None, msg, Scheme::Ds);
                }
            }
        }
    }
}
