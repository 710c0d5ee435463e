//! One shim node: three-phase ordering, spawning, suspicion timers, view
//! change and checkpoints.
//!
//! The primary's Preprepare stands in for its own Prepare, so a request is
//! prepared once the Preprepare and Prepares from distinct backups reach
//! `2f+1` votes.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use crate::effects::{Observation, Outbox, TimerKey};
use crate::model::{
    digest_of, execute_txn, verify_signed, CheckpointBundle, CommitCertificate, Config, ConflictMode,
    Digest, Envelope, ErrorKey, ErrorKind, Identity, Key, Keypair, Message, Outcome,
    PreparedProof, Request, Role, Scheme, SignedTxn, SimTime, TxnId, Value, Version,
};
use crate::storage::initial_value;

use super::checkpoint::validate_bundle;
use super::known_rw::{KeySets, KnownRwPlanner};
use super::spawn::decentralized_share;
use super::view_change::{compute_assignments, validate_view_change, Assignments};

#[derive(Clone, Debug)]
pub struct NodeParams {
    pub cfg: Arc<Config>,
    /// Execute committed batches locally and reply to clients instead of
    /// spawning executors.
    pub execute_locally: bool,
    pub keyspace: u64,
    pub store_seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Normal,
    ViewChanging { target: u64 },
}

#[derive(Default)]
struct Votes {
    preprepare: Option<(Envelope, Arc<Request>)>,
    prepares: BTreeMap<Digest, BTreeMap<u32, Envelope>>,
    commits: BTreeMap<Digest, BTreeMap<u32, Envelope>>,
    prepared: bool,
    committed: bool,
}

#[derive(Clone)]
struct Committed {
    digest: Digest,
    cert: Arc<CommitCertificate>,
    request: Option<Arc<Request>>,
}

struct LocalReplica {
    records: BTreeMap<Key, (Value, Version)>,
    next: u64,
}

pub struct ShimNode {
    me: u32,
    key: Keypair,
    p: NodeParams,
    view: u64,
    status: Status,
    vc_attempt: u32,
    next_seq: u64,
    batch: Vec<SignedTxn>,
    txn_seq: HashMap<TxnId, u64>,
    votes: BTreeMap<(u64, u64), Votes>,
    requests: HashMap<Digest, Arc<Request>>,
    committed: BTreeMap<u64, Committed>,
    contiguous: u64,
    prefix: Digest,
    prefix_at: BTreeMap<u64, Digest>,
    stable: u64,
    ckpt_sent: u64,
    ckpt_votes: BTreeMap<u64, BTreeMap<u32, Digest>>,
    vc_votes: BTreeMap<u64, BTreeMap<u32, Envelope>>,
    new_view_sent: BTreeSet<u64>,
    future: Vec<Envelope>,
    errors: BTreeMap<ErrorKey, ErrorKind>,
    validated: BTreeSet<u64>,
    validated_upto: u64,
    spawned_in_view: BTreeSet<u64>,
    last_respawn: BTreeMap<u64, SimTime>,
    request_timers: BTreeSet<u64>,
    planner: KnownRwPlanner,
    local: Option<LocalReplica>,
}

impl ShimNode {
    pub fn new(me: u32, key: Keypair, p: NodeParams) -> Self {
        let local = p.execute_locally.then(|| LocalReplica { records: BTreeMap::new(), next: 1 });
        Self {
            me,
            key,
            p,
            view: 0,
            status: Status::Normal,
            vc_attempt: 0,
            next_seq: 0,
            batch: Vec::new(),
            txn_seq: HashMap::new(),
            votes: BTreeMap::new(),
            requests: HashMap::new(),
            committed: BTreeMap::new(),
            contiguous: 0,
            prefix: Digest::ZERO,
            prefix_at: BTreeMap::new(),
            stable: 0,
            ckpt_sent: 0,
            ckpt_votes: BTreeMap::new(),
            vc_votes: BTreeMap::new(),
            new_view_sent: BTreeSet::new(),
            future: Vec::new(),
            errors: BTreeMap::new(),
            validated: BTreeSet::new(),
            validated_upto: 0,
            spawned_in_view: BTreeSet::new(),
            last_respawn: BTreeMap::new(),
            request_timers: BTreeSet::new(),
            planner: KnownRwPlanner::new(1),
            local,
        }
    }

    fn cfg(&self) -> &Config {
        &self.p.cfg
    }

    pub fn id(&self) -> u32 {
        self.me
    }

    pub fn identity(&self) -> Identity {
        Identity::node(self.me)
    }

    pub fn keypair(&self) -> &Keypair {
        &self.key
    }

    pub fn view(&self) -> u64 {
        self.view
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn stable_checkpoint(&self) -> u64 {
        self.stable
    }

    pub fn is_primary(&self) -> bool {
        self.status == Status::Normal && self.cfg().primary_of(self.view) == self.me
    }

    /// Digest over every committed digest up to the stable checkpoint.
    pub fn stable_prefix(&self) -> (u64, Digest) {
        (self.stable, self.prefix_at.get(&self.stable).copied().unwrap_or(Digest::ZERO))
    }

    /// Highest `s` such that every seq in `1..=s` is committed here.
    pub fn contiguous(&self) -> u64 {
        self.contiguous
    }

    pub fn committed_digest(&self, seq: u64) -> Option<Digest> {
        self.committed.get(&seq).map(|c| c.digest)
    }

    pub fn committed_seqs(&self) -> BTreeMap<u64, Digest> {
        self.committed.iter().map(|(s, c)| (*s, c.digest)).collect()
    }

    /// Certificates this node holds, newest first.
    pub fn certificates(&self) -> Vec<(Arc<CommitCertificate>, Option<Arc<Request>>)> {
        self.committed.values().rev().map(|c| (c.cert.clone(), c.request.clone())).collect()
    }

    pub fn view_change_votes(&self, view: u64) -> usize {
        self.vc_votes.get(&view).map_or(0, |v| v.len())
    }

    fn n_r(&self) -> usize {
        self.cfg().n_r
    }

    fn quorum(&self) -> usize {
        self.cfg().quorum()
    }

    fn primary(&self) -> u32 {
        self.cfg().primary_of(self.view)
    }

    fn broadcast(&self, out: &mut Outbox, msg: Message, scheme: Scheme) -> Envelope {
        out.broadcast_nodes(&self.key, self.n_r(), Some(self.me), msg, scheme)
    }

    // ----- inputs -----

    pub fn on_message(&mut self, env: Envelope, out: &mut Outbox) {
        if !verify_signed(&env, None) {
            return;
        }
        let from = env.signer();
        match env.payload() {
            Message::ClientRequest(stxn) => {
                let stxn = stxn.clone();
                self.on_client_request(from, stxn, out);
            }
            Message::Preprepare { .. } if from.is_node() => self.on_preprepare(env, false, out),
            Message::Prepare { .. } if from.is_node() => self.on_prepare(env, out),
            Message::Commit { .. } if from.is_node() => self.on_commit(env, out),
            Message::Response { seq, outcome: Outcome::Batch { .. }, .. }
                if from == Identity::VERIFIER =>
            {
                let seq = *seq;
                self.on_validated(seq, out);
            }
            Message::Error(kind) if from == Identity::VERIFIER || from.is_node() => {
                let kind = kind.clone();
                self.on_error(from, kind, out);
            }
            Message::Ack(key) if from == Identity::VERIFIER => {
                let key = *key;
                if self.errors.remove(&key).is_some() {
                    out.cancel_timer(TimerKey::Retransmit(key));
                }
            }
            Message::Replace { seq, .. } if from == Identity::VERIFIER => {
                let stale = seq.is_some_and(|s| self.validated.contains(&s) || s <= self.validated_upto);
                if self.status == Status::Normal && !stale {
                    self.start_view_change(self.view + 1, out);
                }
            }
            Message::ViewChange { .. } if from.is_node() => self.on_view_change(env, out),
            Message::NewView { .. } if from.is_node() => self.on_new_view(env, out),
            Message::Checkpoint(bundle) if from.is_node() && env.scheme() == Scheme::Ds => {
                let bundle = bundle.clone();
                self.on_checkpoint(from.id, &bundle, out);
            }
            _ => {}
        }
    }

    pub fn on_timer(&mut self, key: &TimerKey, out: &mut Outbox) {
        match *key {
            TimerKey::Batch => {
                if self.is_primary() {
                    self.propose_batch(out);
                }
            }
            TimerKey::Request { seq } => {
                self.request_timers.remove(&seq);
                if self.status == Status::Normal && !self.committed.contains_key(&seq) {
                    self.start_view_change(self.view + 1, out);
                }
            }
            TimerKey::Retransmit(k) => {
                if self.errors.contains_key(&k) && self.status == Status::Normal {
                    self.start_view_change(self.view + 1, out);
                }
            }
            TimerKey::ViewChange { view }
                if self.status == (Status::ViewChanging { target: view }) => {
                    self.start_view_change(view + 1, out);
                }
            _ => {}
        }
    }

    // ----- ordering -----

    fn client_txn_ok(&self, stxn: &SignedTxn, out: &mut Outbox) -> bool {
        out.work.ds_verify += 1;
        verify_signed(stxn, Some(stxn.payload().client_identity())) && stxn.payload().well_formed()
    }

    fn on_client_request(&mut self, from: Identity, stxn: SignedTxn, out: &mut Outbox) {
        let direct = from.role == Role::Client && from == stxn.payload().client_identity();
        if !direct && !from.is_node() {
            return;
        }
        if !self.is_primary() {
            if direct && self.status == Status::Normal {
                let primary = Identity::node(self.primary());
                out.sign_send(&self.key, primary, Message::ClientRequest(stxn), Scheme::Mac);
            }
            return;
        }
        if !self.client_txn_ok(&stxn, out) {
            return;
        }
        self.admit_txn(stxn, false, out);
    }

    /// Primary-side dedup by (client, nonce), then batching.
    fn admit_txn(&mut self, stxn: SignedTxn, flush: bool, out: &mut Outbox) {
        let id = stxn.payload().id();
        match self.txn_seq.get(&id).copied() {
            Some(0) => {}
            Some(seq) => {
                if self.committed.contains_key(&seq) {
                    self.respawn(seq, out);
                }
                return;
            }
            None => {
                self.txn_seq.insert(id, 0);
                self.batch.push(stxn);
            }
        }
        if flush || self.batch.len() >= self.cfg().batch_size {
            self.propose_batch(out);
        } else if self.batch.len() == 1 {
            out.set_timer(TimerKey::Batch, self.cfg().batch_timeout);
        }
    }

    fn propose_batch(&mut self, out: &mut Outbox) {
        if self.batch.is_empty() {
            return;
        }
        out.cancel_timer(TimerKey::Batch);
        let txns = std::mem::take(&mut self.batch);
        self.next_seq += 1;
        let seq = self.next_seq;
        for t in &txns {
            self.txn_seq.insert(t.payload().id(), seq);
        }
        let request = Request::batch(txns);
        let msg = Message::Preprepare { view: self.view, seq, digest: request.digest(), request };
        let env = self.broadcast(out, msg, Scheme::Mac);
        self.record_preprepare(env, out);
    }

    fn record_preprepare(&mut self, env: Envelope, out: &mut Outbox) {
        let Message::Preprepare { view, seq, digest, request } = env.payload() else { return };
        let (view, seq, digest, request) = (*view, *seq, *digest, request.clone());
        self.requests.insert(digest, request.clone());
        for t in request.txns() {
            let id = t.payload().id();
            if self.txn_seq.get(&id).is_none_or(|s| *s == 0 || *s > seq) {
                self.txn_seq.insert(id, seq);
            }
        }
        self.votes.entry((view, seq)).or_default().preprepare = Some((env, request));
        self.check_prepared(view, seq, out);
    }

    fn on_preprepare(&mut self, env: Envelope, from_new_view: bool, out: &mut Outbox) {
        let Message::Preprepare { view, seq, digest, request } = env.payload() else { return };
        let (view, seq, digest) = (*view, *seq, *digest);
        if !from_new_view && (view > self.view || self.status != Status::Normal) {
            if view >= self.view {
                self.future.push(env);
            }
            return;
        }
        if view != self.view || env.signer().id != self.cfg().primary_of(view) {
            return;
        }
        if seq <= self.stable || request.recompute_digest() != digest {
            return;
        }
        if request.is_noop() && !from_new_view {
            return;
        }
        if self.votes.get(&(view, seq)).is_some_and(|v| v.preprepare.is_some()) {
            return;
        }
        if !request.is_noop() {
            let txns = request.txns().to_vec();
            let mut ok = !txns.is_empty();
            for t in &txns {
                ok &= self.client_txn_ok(t, out);
            }
            if !ok {
                return;
            }
        }
        let me_primary = self.cfg().primary_of(view) == self.me;
        if !me_primary {
            let msg = Message::Prepare { view, seq, digest };
            let mine = self.broadcast(out, msg, Scheme::Mac);
            self.votes
                .entry((view, seq))
                .or_default()
                .prepares
                .entry(digest)
                .or_default()
                .insert(self.me, mine);
            if !self.committed.contains_key(&seq) {
                self.request_timers.insert(seq);
                out.set_timer(TimerKey::Request { seq }, self.cfg().timers.node);
            }
        }
        self.record_preprepare(env, out);
    }

    fn on_prepare(&mut self, env: Envelope, out: &mut Outbox) {
        let Message::Prepare { view, seq, digest } = *env.payload() else { return };
        let from = env.signer().id;
        if view > self.view || (view == self.view && self.status != Status::Normal) {
            self.future.push(env);
            return;
        }
        if view < self.view || from == self.cfg().primary_of(view) || seq <= self.stable {
            return;
        }
        self.votes
            .entry((view, seq))
            .or_default()
            .prepares
            .entry(digest)
            .or_default()
            .entry(from)
            .or_insert(env);
        self.check_prepared(view, seq, out);
    }

    fn check_prepared(&mut self, view: u64, seq: u64, out: &mut Outbox) {
        let quorum = self.quorum();
        let Some(v) = self.votes.get_mut(&(view, seq)) else { return };
        if v.prepared {
            return;
        }
        let Some((_, req)) = &v.preprepare else { return };
        let digest = req.digest();
        let backups = v.prepares.get(&digest).map_or(0, |p| p.len());
        if backups + 1 < quorum {
            return;
        }
        v.prepared = true;
        let msg = Message::Commit { view, seq, digest };
        let mine = out.broadcast_nodes(&self.key, self.p.cfg.n_r, Some(self.me), msg, Scheme::Ds);
        v.commits.entry(digest).or_default().insert(self.me, mine);
        self.check_committed(view, seq, out);
    }

    fn on_commit(&mut self, env: Envelope, out: &mut Outbox) {
        let Message::Commit { view, seq, digest } = *env.payload() else { return };
        if env.scheme() != Scheme::Ds {
            return;
        }
        if view > self.view {
            self.future.push(env);
            return;
        }
        if seq <= self.stable {
            return;
        }
        let from = env.signer().id;
        self.votes
            .entry((view, seq))
            .or_default()
            .commits
            .entry(digest)
            .or_default()
            .entry(from)
            .or_insert(env);
        self.check_committed(view, seq, out);
    }

    fn check_committed(&mut self, view: u64, seq: u64, out: &mut Outbox) {
        let quorum = self.quorum();
        let Some(v) = self.votes.get_mut(&(view, seq)) else { return };
        if v.committed || !v.prepared {
            return;
        }
        let Some((_, req)) = &v.preprepare else { return };
        let req = req.clone();
        let digest = req.digest();
        let Some(commits) = v.commits.get(&digest) else { return };
        if commits.len() < quorum {
            return;
        }
        v.committed = true;
        let attestations = commits.values().take(quorum).cloned().collect();
        let cert = Arc::new(CommitCertificate { view, seq, digest, attestations });
        self.on_committed(cert, Some(req), false, out);
    }

    fn on_committed(
        &mut self,
        cert: Arc<CommitCertificate>,
        request: Option<Arc<Request>>,
        via_checkpoint: bool,
        out: &mut Outbox,
    ) {
        let (seq, digest) = (cert.seq, cert.digest);
        if let Some(prev) = self.committed.get(&seq) {
            if prev.digest != digest {
                out.observe(Observation::Committed {
                    node: self.me,
                    view: cert.view,
                    seq,
                    digest,
                    via_checkpoint,
                });
            }
            return;
        }
        out.observe(Observation::Committed { node: self.me, view: cert.view, seq, digest, via_checkpoint });
        if let Some(r) = &request {
            for t in r.txns() {
                self.txn_seq.insert(t.payload().id(), seq);
            }
        }
        self.committed.insert(seq, Committed { digest, cert, request });
        let interval = self.cfg().checkpoint_interval;
        while let Some(c) = self.committed.get(&(self.contiguous + 1)) {
            self.contiguous += 1;
            self.prefix = digest_of(&(self.prefix, self.contiguous, c.digest));
            if self.contiguous.is_multiple_of(interval) {
                self.prefix_at.insert(self.contiguous, self.prefix);
            }
        }
        if self.request_timers.remove(&seq) {
            out.cancel_timer(TimerKey::Request { seq });
        }
        if self.local.is_some() {
            self.execute_local(out);
        } else if self.is_spawner() {
            self.schedule_spawn(seq, out);
        }
        self.maybe_checkpoint(out);
    }

    // ----- spawning -----

    fn is_spawner(&self) -> bool {
        self.status == Status::Normal
            && (self.cfg().decentralized_spawning || self.cfg().primary_of(self.view) == self.me)
    }

    fn spawn_count(&self) -> usize {
        let c = self.cfg();
        if c.decentralized_spawning {
            decentralized_share(c.n_e, c.n_r, c.f_r, c.dark_pessimism)
        } else {
            c.n_e
        }
    }

    fn schedule_spawn(&mut self, seq: u64, out: &mut Outbox) {
        if self.spawned_in_view.contains(&seq) || self.validated.contains(&seq) || seq <= self.validated_upto {
            return;
        }
        if self.cfg().conflict_mode == ConflictMode::KnownRw {
            let Some(req) = self.committed.get(&seq).and_then(|c| c.request.clone()) else { return };
            for ready in self.planner.offer(seq, KeySets::of(&req)) {
                self.spawn_now(ready, out);
            }
        } else {
            self.spawn_now(seq, out);
        }
    }

    fn spawn_now(&mut self, seq: u64, out: &mut Outbox) {
        let Some(c) = self.committed.get(&seq) else { return };
        let Some(request) = c.request.clone() else { return };
        let msg = Message::Execute { seq, digest: c.digest, request, cert: Some(c.cert.clone()) };
        let env = self.key.sign(msg, Scheme::Ds);
        let count = self.spawn_count();
        for _ in 0..count {
            out.spawn(env.clone());
        }
        self.spawned_in_view.insert(seq);
        self.last_respawn.insert(seq, out.now);
        out.observe(Observation::Spawned { spawner: self.me, seq, count: count as u32 });
    }

    /// Spawns again for a committed seq the verifier reports missing.
    fn respawn(&mut self, seq: u64, out: &mut Outbox) {
        if self.validated.contains(&seq) || seq <= self.validated_upto || self.local.is_some() {
            return;
        }
        let cooldown = self.cfg().timers.retransmit / 2;
        if self.last_respawn.get(&seq).is_some_and(|t| out.now < t + cooldown) {
            return;
        }
        self.spawn_now(seq, out);
    }

    fn on_validated(&mut self, seq: u64, out: &mut Outbox) {
        if !self.validated.insert(seq) {
            return;
        }
        while self.validated.remove(&(self.validated_upto + 1)) {
            self.validated_upto += 1;
        }
        self.last_respawn.remove(&seq);
        if self.cfg().conflict_mode == ConflictMode::KnownRw && self.is_spawner() {
            for ready in self.planner.release(seq) {
                self.spawn_now(ready, out);
            }
        }
    }

    // ----- local execution (execute-on-shim baseline) -----

    fn execute_local(&mut self, out: &mut Outbox) {
        let seed = self.p.store_seed;
        let keyspace = self.p.keyspace;
        let key = &self.key;
        let Some(local) = self.local.as_mut() else { return };
        while let Some(c) = self.committed.get(&local.next) {
            let Some(req) = c.request.clone() else { break };
            let seq = local.next;
            for stxn in req.txns() {
                let txn = stxn.payload();
                let records = &local.records;
                let o = execute_txn(txn, |k| {
                    records.get(&k).copied().unwrap_or_else(|| {
                        (if k < keyspace { initial_value(seed, k) } else { 0 }, 0)
                    })
                });
                for (&k, &v) in &o.rw.writes {
                    let ver = local.records.get(&k).map_or(0, |e| e.1);
                    local.records.insert(k, (v, ver + 1));
                }
                let msg = Message::Reply { seq, txn: txn.id(), result: o.result };
                out.sign_send(key, txn.client_identity(), msg, Scheme::Mac);
            }
            out.work.txn_exec += req.txns().len() as u32;
            out.work.compute += req.compute_cost();
            out.observe(Observation::ExecutedLocally { node: self.me, seq });
            local.next += 1;
        }
    }

    // ----- verifier-driven recovery -----

    fn on_error(&mut self, from: Identity, kind: ErrorKind, out: &mut Outbox) {
        if self.is_primary() {
            self.primary_handle_error(kind, out);
            return;
        }
        if from != Identity::VERIFIER || self.status != Status::Normal {
            return;
        }
        let key = kind.key();
        let primary = Identity::node(self.primary());
        out.sign_send(&self.key, primary, Message::Error(kind.clone()), Scheme::Mac);
        if let std::collections::btree_map::Entry::Vacant(e) = self.errors.entry(key) {
            e.insert(kind);
            out.set_timer(TimerKey::Retransmit(key), self.cfg().timers.retransmit);
        }
    }

    fn primary_handle_error(&mut self, kind: ErrorKind, out: &mut Outbox) {
        match kind {
            ErrorKind::MissingRequest(stxn) => {
                if self.client_txn_ok(&stxn, out) {
                    self.admit_txn(stxn, true, out);
                }
            }
            ErrorKind::MissingSeq(k) => {
                if self.committed.contains_key(&k) {
                    self.respawn(k, out);
                }
            }
        }
    }

    // ----- view change -----

    fn start_view_change(&mut self, target: u64, out: &mut Outbox) {
        if let Status::ViewChanging { target: t } = self.status {
            if t >= target {
                return;
            }
        }
        if target <= self.view {
            return;
        }
        self.status = Status::ViewChanging { target };
        self.vc_attempt += 1;
        out.cancel_timer(TimerKey::Batch);
        for t in std::mem::take(&mut self.batch) {
            self.txn_seq.remove(&t.payload().id());
        }
        let mut best: BTreeMap<u64, PreparedProof> = BTreeMap::new();
        for ((view, seq), v) in &self.votes {
            if *seq <= self.stable || !v.prepared {
                continue;
            }
            let Some((pp, req)) = &v.preprepare else { continue };
            let digest = req.digest();
            let prepares = v.prepares.get(&digest).map(|m| m.values().cloned().collect()).unwrap_or_default();
            let proof = PreparedProof {
                view: *view,
                seq: *seq,
                digest,
                request: req.clone(),
                preprepare: pp.clone(),
                prepares,
            };
            if best.get(seq).is_none_or(|b| b.view < *view) {
                best.insert(*seq, proof);
            }
        }
        let msg = Message::ViewChange {
            new_view: target,
            stable_seq: self.stable,
            proofs: best.into_values().collect(),
        };
        let mine = self.broadcast(out, msg, Scheme::Ds);
        self.vc_votes.entry(target).or_default().insert(self.me, mine);
        out.observe(Observation::ViewChangeVote { node: self.me, view: target });
        let backoff = self.cfg().timers.view_change << (self.vc_attempt - 1).min(6);
        out.set_timer(TimerKey::ViewChange { view: target }, backoff);
        self.try_new_view(target, out);
    }

    fn target_view(&self) -> u64 {
        match self.status {
            Status::Normal => self.view,
            Status::ViewChanging { target } => target,
        }
    }

    fn on_view_change(&mut self, env: Envelope, out: &mut Outbox) {
        let Message::ViewChange { new_view, .. } = env.payload() else { return };
        let v = *new_view;
        if v <= self.view {
            return;
        }
        let (n_r, f_r) = (self.n_r(), self.cfg().f_r);
        out.work.ds_verify += 1;
        let Some(from) = validate_view_change(&env, v, n_r, f_r) else { return };
        self.vc_votes.entry(v).or_default().insert(from, env);
        if self.vc_votes[&v].len() > f_r && v > self.target_view() {
            self.start_view_change(v, out);
        }
        self.try_new_view(v, out);
    }

    fn try_new_view(&mut self, v: u64, out: &mut Outbox) {
        if self.cfg().primary_of(v) != self.me
            || self.status != (Status::ViewChanging { target: v })
            || self.new_view_sent.contains(&v)
        {
            return;
        }
        let Some(votes) = self.vc_votes.get(&v) else { return };
        if votes.len() < self.quorum() {
            return;
        }
        let chosen: Vec<Envelope> = votes.values().take(self.quorum()).cloned().collect();
        let assignments = compute_assignments(&chosen, v);
        let preprepares: Vec<Envelope> = assignments
            .entries
            .iter()
            .map(|(seq, req)| {
                let msg = Message::Preprepare { view: v, seq: *seq, digest: req.digest(), request: req.clone() };
                self.key.sign(msg, Scheme::Mac)
            })
            .collect();
        self.new_view_sent.insert(v);
        let msg = Message::NewView { new_view: v, votes: chosen, preprepares: preprepares.clone() };
        self.broadcast(out, msg, Scheme::Ds);
        self.install_view(v, &assignments, preprepares, out);
    }

    fn on_new_view(&mut self, env: Envelope, out: &mut Outbox) {
        let Message::NewView { new_view, votes, preprepares } = env.payload() else { return };
        let v = *new_view;
        if v < self.view || (v == self.view && self.status == Status::Normal) {
            return;
        }
        let (n_r, f_r) = (self.n_r(), self.cfg().f_r);
        let primary = self.cfg().primary_of(v);
        if env.signer().id != primary || env.scheme() != Scheme::Ds {
            return;
        }
        out.work.ds_verify += votes.len() as u32;
        let mut voters = BTreeSet::new();
        for vote in votes {
            match validate_view_change(vote, v, n_r, f_r) {
                Some(id) => {
                    voters.insert(id);
                }
                None => return,
            }
        }
        if voters.len() < self.quorum() || voters.len() != votes.len() {
            return;
        }
        let assignments = compute_assignments(votes, v);
        if assignments.entries.len() != preprepares.len() {
            return;
        }
        for ((seq, req), pp) in assignments.entries.iter().zip(preprepares) {
            let ok = pp.signer().id == primary
                && pp.signer().role == Role::ShimNode
                && verify_signed(pp, None)
                && matches!(pp.payload(),
                    Message::Preprepare { view, seq: s, digest, .. }
                        if *view == v && s == seq && *digest == req.digest());
            if !ok {
                return;
            }
        }
        let preprepares = preprepares.clone();
        self.install_view(v, &assignments, preprepares, out);
    }

    fn install_view(
        &mut self,
        v: u64,
        assignments: &Assignments,
        preprepares: Vec<Envelope>,
        out: &mut Outbox,
    ) {
        out.cancel_timer(TimerKey::ViewChange { view: v });
        self.view = v;
        self.status = Status::Normal;
        self.vc_attempt = 0;
        out.observe(Observation::ViewInstalled { node: self.me, view: v });
        for seq in std::mem::take(&mut self.request_timers) {
            out.cancel_timer(TimerKey::Request { seq });
        }
        self.next_seq = assignments.last_seq().max(self.stable).max(self.contiguous);
        self.txn_seq.clear();
        for (seq, c) in &self.committed {
            for t in c.request.iter().flat_map(|r| r.txns()) {
                self.txn_seq.insert(t.payload().id(), *seq);
            }
        }
        self.spawned_in_view.clear();
        self.planner.reset(self.validated_upto + 1);
        self.vc_votes.retain(|view, _| *view > v);
        for pp in preprepares {
            if self.cfg().primary_of(v) == self.me {
                self.record_preprepare(pp, out);
            } else {
                self.on_preprepare(pp, true, out);
            }
        }
        if self.local.is_none() && self.is_spawner() {
            let pending: Vec<u64> = self
                .committed
                .keys()
                .copied()
                .filter(|s| *s > self.validated_upto && !self.validated.contains(s))
                .collect();
            for seq in pending {
                self.schedule_spawn(seq, out);
            }
        }
        let outstanding = std::mem::take(&mut self.errors);
        for (key, kind) in outstanding {
            out.cancel_timer(TimerKey::Retransmit(key));
            if self.is_primary() {
                self.primary_handle_error(kind, out);
            } else {
                let primary = Identity::node(self.primary());
                out.sign_send(&self.key, primary, Message::Error(kind.clone()), Scheme::Mac);
                self.errors.insert(key, kind);
                out.set_timer(TimerKey::Retransmit(key), self.cfg().timers.retransmit);
            }
        }
        let pending = std::mem::take(&mut self.future);
        for env in pending {
            let view = match env.payload() {
                Message::Preprepare { view, .. }
                | Message::Prepare { view, .. }
                | Message::Commit { view, .. } => *view,
                _ => continue,
            };
            if view > v {
                self.future.push(env);
            } else if view == v {
                self.on_message(env, out);
            }
        }
    }

    // ----- checkpoints -----

    fn maybe_checkpoint(&mut self, out: &mut Outbox) {
        let interval = self.cfg().checkpoint_interval;
        while self.contiguous >= self.ckpt_sent + interval {
            let from = self.ckpt_sent;
            let to = from + interval;
            let certificates = (from + 1..=to).map(|s| self.committed[&s].cert.clone()).collect();
            let bundle = Arc::new(CheckpointBundle { from_seq: from, to_seq: to, certificates });
            let state = bundle.state_digest();
            self.broadcast(out, Message::Checkpoint(bundle), Scheme::Ds);
            self.ckpt_votes.entry(to).or_default().insert(self.me, state);
            self.ckpt_sent = to;
            self.check_stable(to, out);
        }
    }

    fn on_checkpoint(&mut self, from: u32, bundle: &CheckpointBundle, out: &mut Outbox) {
        let to = bundle.to_seq;
        if to <= self.stable {
            return;
        }
        let (interval, n_r, f_r) = (self.cfg().checkpoint_interval, self.n_r(), self.cfg().f_r);
        let missing: Vec<Arc<CommitCertificate>> =
            bundle.certificates.iter().filter(|c| !self.committed.contains_key(&c.seq)).cloned().collect();
        // A node holding every certificate only compares state digests.
        if !missing.is_empty() {
            out.work.ds_verify += missing.iter().map(|c| c.attestations.len() as u32).sum::<u32>();
            if validate_bundle(bundle, interval, n_r, f_r).is_err() {
                return;
            }
        }
        for cert in missing {
            let req = self.requests.get(&cert.digest).cloned();
            self.on_committed(cert, req, true, out);
        }
        self.ckpt_votes.entry(to).or_default().insert(from, bundle.state_digest());
        self.maybe_checkpoint(out);
        self.check_stable(to, out);
    }

    fn check_stable(&mut self, to: u64, out: &mut Outbox) {
        if to <= self.stable {
            return;
        }
        let Some(votes) = self.ckpt_votes.get(&to) else { return };
        let Some(mine) = votes.get(&self.me) else { return };
        let matching = votes.values().filter(|d| *d == mine).count();
        if matching < self.quorum() {
            return;
        }
        self.stable = to;
        out.observe(Observation::StableCheckpoint { node: self.me, seq: to });
        self.votes.retain(|(_, seq), _| *seq > to);
        self.ckpt_votes.retain(|s, _| *s > to);
        self.prefix_at.retain(|s, _| *s >= to);
        let keep_from = to.min(self.validated_upto);
        let requests = &mut self.requests;
        self.committed.retain(|s, c| {
            let keep = *s > keep_from;
            if !keep {
                requests.remove(&c.digest);
            }
            keep
        });
    }
}
