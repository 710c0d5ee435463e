//! Ordering front ends for the unreplicated and crash-tolerant baselines.
//!
//! Node 0 leads. Without replication it spawns as soon as a batch closes;
//! in the crash-tolerant variant it first collects Accepted replies from a
//! majority of the `2f_R+1` members (itself included).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use crate::effects::{Observation, Outbox, TimerKey};
use crate::model::{
    verify_signed, Config, Envelope, ErrorKind, Identity, Keypair, Message, Outcome, Request, Role,
    Scheme, SignedTxn, SimTime, TxnId,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SequencerKind {
    NoShim,
    Cft { members: usize },
}

pub struct Sequencer {
    me: u32,
    key: Keypair,
    kind: SequencerKind,
    cfg: Arc<Config>,
    verify_client_ds: bool,
    batch: Vec<SignedTxn>,
    next_seq: u64,
    txn_seq: HashMap<TxnId, u64>,
    requests: BTreeMap<u64, Arc<Request>>,
    accepted: BTreeMap<u64, BTreeSet<u32>>,
    spawned: BTreeSet<u64>,
    validated: BTreeSet<u64>,
    last_spawn: BTreeMap<u64, SimTime>,
}

impl Sequencer {
    pub fn new(me: u32, key: Keypair, kind: SequencerKind, cfg: Arc<Config>, verify_client_ds: bool) -> Self {
        Self {
            me,
            key,
            kind,
            cfg,
            verify_client_ds,
            batch: Vec::new(),
            next_seq: 0,
            txn_seq: HashMap::new(),
            requests: BTreeMap::new(),
            accepted: BTreeMap::new(),
            spawned: BTreeSet::new(),
            validated: BTreeSet::new(),
            last_spawn: BTreeMap::new(),
        }
    }

    fn leader(&self) -> bool {
        self.me == 0
    }

    pub fn on_message(&mut self, env: Envelope, out: &mut Outbox) {
        if !verify_signed(&env, None) {
            return;
        }
        let from = env.signer();
        match env.payload() {
            Message::ClientRequest(stxn) if self.leader() && from.role == Role::Client => {
                let stxn = stxn.clone();
                if self.client_ok(&stxn, out) {
                    self.admit(stxn, false, out);
                }
            }
            Message::Accept { seq, digest, .. } if from == Identity::node(0) => {
                let msg = Message::Accepted { seq: *seq, digest: *digest };
                out.sign_send(&self.key, from, msg, Scheme::Mac);
            }
            Message::Accepted { seq, digest } if self.leader() && from.is_node() => {
                let ok = self.requests.get(seq).is_some_and(|r| r.digest() == *digest);
                if ok {
                    let seq = *seq;
                    self.accepted.entry(seq).or_default().insert(from.id);
                    self.maybe_spawn(seq, out);
                }
            }
            Message::Response { seq, outcome: Outcome::Batch { .. }, .. } if from == Identity::VERIFIER => {
                self.validated.insert(*seq);
            }
            Message::Error(kind) if self.leader() && from == Identity::VERIFIER => match kind.clone() {
                ErrorKind::MissingRequest(stxn) => {
                    if self.client_ok(&stxn, out) {
                        self.admit(stxn, true, out);
                    }
                }
                ErrorKind::MissingSeq(k) => self.respawn(k, out),
            },
            Message::Replace { seq: Some(seq), .. } if self.leader() && from == Identity::VERIFIER => {
                let seq = *seq;
                self.respawn(seq, out);
            }
            _ => {}
        }
    }

    pub fn on_timer(&mut self, key: &TimerKey, out: &mut Outbox) {
        if *key == TimerKey::Batch && self.leader() {
            self.propose(out);
        }
    }

    fn client_ok(&self, stxn: &SignedTxn, out: &mut Outbox) -> bool {
        if self.verify_client_ds {
            out.work.ds_verify += 1;
        }
        verify_signed(stxn, Some(stxn.payload().client_identity())) && stxn.payload().well_formed()
    }

    fn admit(&mut self, stxn: SignedTxn, flush: bool, out: &mut Outbox) {
        let id = stxn.payload().id();
        match self.txn_seq.get(&id).copied() {
            Some(0) => {}
            Some(seq) => {
                self.respawn(seq, out);
                return;
            }
            None => {
                self.txn_seq.insert(id, 0);
                self.batch.push(stxn);
            }
        }
        if flush || self.batch.len() >= self.cfg.batch_size {
            self.propose(out);
        } else if self.batch.len() == 1 {
            out.set_timer(TimerKey::Batch, self.cfg.batch_timeout);
        }
    }

    fn propose(&mut self, out: &mut Outbox) {
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
        self.requests.insert(seq, request.clone());
        match self.kind {
            SequencerKind::NoShim => self.spawn(seq, out),
            SequencerKind::Cft { members } => {
                let msg = Message::Accept { seq, digest: request.digest(), request };
                out.broadcast_nodes(&self.key, members, Some(self.me), msg, Scheme::Mac);
                self.maybe_spawn(seq, out);
            }
        }
    }

    fn maybe_spawn(&mut self, seq: u64, out: &mut Outbox) {
        let SequencerKind::Cft { members } = self.kind else { return };
        let votes = self.accepted.get(&seq).map_or(0, |s| s.len()) + 1;
        if votes > members / 2 && !self.spawned.contains(&seq) {
            self.spawn(seq, out);
        }
    }

    fn spawn(&mut self, seq: u64, out: &mut Outbox) {
        let Some(request) = self.requests.get(&seq).cloned() else { return };
        let msg = Message::Execute { seq, digest: request.digest(), request, cert: None };
        let env = self.key.sign(msg, Scheme::Ds);
        for _ in 0..self.cfg.n_e {
            out.spawn(env.clone());
        }
        self.spawned.insert(seq);
        self.last_spawn.insert(seq, out.now);
        out.observe(Observation::Spawned { spawner: self.me, seq, count: self.cfg.n_e as u32 });
    }

    fn respawn(&mut self, seq: u64, out: &mut Outbox) {
        if self.validated.contains(&seq) || !self.spawned.contains(&seq) {
            return;
        }
        let cooldown = self.cfg.timers.retransmit / 2;
        if self.last_spawn.get(&seq).is_some_and(|t| out.now < t + cooldown) {
            return;
        }
        self.spawn(seq, out);
    }
}
