//! Key-value transaction generator and client state machines.
//!
//! Keys `[0, hot_keys)` are shared. Every other key belongs to exactly one
//! client's cold region, so only hot-key transactions can conflict across
//! clients. A conflicting transaction performs one read-modify-write on a
//! uniformly chosen hot key.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::effects::{Outbox, TimerKey};
use crate::model::{
    digest_of, ms, verify_signed, Digest, Envelope, Identity, Key, Keypair, Message, Op,
    Operand, Outcome, Scheme, SignedTxn, SimTime, Transaction, TxnId,
};
use crate::model::config::millis;
use crate::simnet::rng::StreamRng;
use crate::storage::DEFAULT_KEYSPACE;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ComputeDist {
    Fixed {
        #[serde(with = "millis")]
        ms: SimTime,
    },
    Uniform {
        #[serde(with = "millis")]
        min_ms: SimTime,
        #[serde(with = "millis")]
        max_ms: SimTime,
    },
}

impl Default for ComputeDist {
    fn default() -> Self {
        ComputeDist::Fixed { ms: ms(0.5) }
    }
}

impl ComputeDist {
    fn sample(&self, rng: &mut StreamRng) -> SimTime {
        match *self {
            ComputeDist::Fixed { ms } => ms,
            ComputeDist::Uniform { min_ms, max_ms } => rng.gen_range(min_ms..=max_ms.max(min_ms)),
        }
    }
}

/// A fixed transaction list for one client, issued closed-loop from `start`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientScript {
    #[serde(rename = "start_ms", with = "millis", default)]
    pub start: SimTime,
    pub txns: Vec<Vec<Op>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadSpec {
    pub num_clients: usize,
    pub keyspace: u64,
    pub hot_keys: u64,
    pub ops_per_txn: usize,
    /// Fraction of non-hot operations that are writes.
    pub write_ratio: f64,
    /// Fraction of transactions that read-modify-write a hot key.
    pub conflict_rate: f64,
    pub compute: ComputeDist,
    pub closed_loop: bool,
    /// Per-client issue rate for open-loop clients.
    pub open_rate_per_sec: f64,
    /// Stop issuing after this many transactions per client.
    pub txns_per_client: Option<u64>,
    /// Client `i` runs `scripts[i]` instead of generated transactions.
    pub scripts: Vec<ClientScript>,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self {
            num_clients: 4,
            keyspace: DEFAULT_KEYSPACE,
            hot_keys: 16,
            ops_per_txn: 4,
            write_ratio: 0.5,
            conflict_rate: 0.0,
            compute: ComputeDist::default(),
            closed_loop: true,
            open_rate_per_sec: 100.0,
            txns_per_client: None,
            scripts: Vec::new(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum WorkloadError {
    #[error("{0} must be within [0, 1]")]
    Fraction(&'static str),
    #[error("conflict rate {0} exceeds 0.5")]
    ConflictRate(f64),
    #[error("keyspace too small for {clients} clients and {hot} hot keys")]
    Keyspace { clients: usize, hot: u64 },
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("{scripts} scripts for {clients} clients")]
    Scripts { scripts: usize, clients: usize },
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if !(0.0..=1.0).contains(&self.write_ratio) {
            return Err(WorkloadError::Fraction("write_ratio"));
        }
        if !(0.0..=0.5).contains(&self.conflict_rate) {
            return Err(WorkloadError::ConflictRate(self.conflict_rate));
        }
        if self.num_clients == 0 {
            return Err(WorkloadError::NonPositive("num_clients"));
        }
        if self.ops_per_txn == 0 {
            return Err(WorkloadError::NonPositive("ops_per_txn"));
        }
        if self.hot_keys == 0 {
            return Err(WorkloadError::NonPositive("hot_keys"));
        }
        if !self.closed_loop && self.open_rate_per_sec <= 0.0 {
            return Err(WorkloadError::NonPositive("open_rate_per_sec"));
        }
        if self.scripts.len() > self.num_clients {
            return Err(WorkloadError::Scripts { scripts: self.scripts.len(), clients: self.num_clients });
        }
        let cold = self.keyspace.saturating_sub(self.hot_keys);
        if cold < self.num_clients as u64 * self.ops_per_txn as u64 {
            return Err(WorkloadError::Keyspace { clients: self.num_clients, hot: self.hot_keys });
        }
        Ok(())
    }

    fn cold_region(&self, client: u32) -> (Key, u64) {
        let size = (self.keyspace - self.hot_keys) / self.num_clients as u64;
        (self.hot_keys + client as u64 * size, size)
    }
}

pub struct TxnGenerator {
    spec: WorkloadSpec,
    client: u32,
    rng: StreamRng,
}

impl TxnGenerator {
    pub fn new(spec: WorkloadSpec, client: u32, rng: StreamRng) -> Self {
        Self { spec, client, rng }
    }

    pub fn next_transaction(&mut self, nonce: u64) -> Transaction {
        let (base, size) = self.spec.cold_region(self.client);
        let mut ops = Vec::with_capacity(self.spec.ops_per_txn + 1);
        let mut cold_ops = self.spec.ops_per_txn;
        if self.rng.gen_bool(self.spec.conflict_rate) {
            let key = self.rng.gen_range(0..self.spec.hot_keys);
            ops.push(Op::Write { key, value: Operand::ReadPlus { key, delta: 1 } });
            cold_ops -= 1;
        }
        for _ in 0..cold_ops {
            let key = base + self.rng.gen_range(0..size);
            if self.rng.gen_bool(self.spec.write_ratio) {
                let value = self.rng.gen_range(0..10_000);
                ops.push(Op::Write { key, value: Operand::Lit { value } });
            } else {
                ops.push(Op::Read { key });
            }
        }
        let micros = self.spec.compute.sample(&mut self.rng);
        if micros > 0 {
            ops.push(Op::Compute { micros });
        }
        Transaction { client: self.client, nonce, ops }
    }
}

/// Fraction of transactions sharing a key with a transaction of another
/// client, where at least one side writes it.
pub fn cross_client_conflict_fraction(txns: &[Transaction]) -> f64 {
    if txns.is_empty() {
        return 0.0;
    }
    let mut readers: BTreeMap<Key, BTreeSet<u32>> = BTreeMap::new();
    let mut writers: BTreeMap<Key, BTreeSet<u32>> = BTreeMap::new();
    for t in txns {
        for k in t.read_keys() {
            readers.entry(k).or_default().insert(t.client);
        }
        for k in t.write_keys() {
            writers.entry(k).or_default().insert(t.client);
        }
    }
    let other = |set: Option<&BTreeSet<u32>>, me: u32| set.is_some_and(|s| s.iter().any(|c| *c != me));
    let conflicting = txns
        .iter()
        .filter(|t| {
            t.write_keys().iter().any(|k| other(readers.get(k), t.client) || other(writers.get(k), t.client))
                || t.read_keys().iter().any(|k| other(writers.get(k), t.client))
        })
        .count();
    conflicting as f64 / txns.len() as f64
}

/// Where a client collects its answer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReplyMode {
    /// One signed verifier Response or Abort settles a transaction.
    Verifier,
    /// `f_R+1` matching Replies from shim nodes settle a transaction.
    ShimReplies { f_r: usize },
}

#[derive(Clone, Copy, Debug)]
pub struct ClientParams {
    pub n_r: usize,
    pub timeout: SimTime,
    pub reply_mode: ReplyMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Completion {
    pub nonce: u64,
    pub issued_at: SimTime,
    pub at: SimTime,
    pub aborted: bool,
}

impl Completion {
    pub fn latency(&self) -> SimTime {
        self.at - self.issued_at
    }
}

struct Pending {
    stxn: SignedTxn,
    issued_at: SimTime,
    backoff: u32,
    replies: BTreeMap<u32, Digest>,
}

pub struct Client {
    id: u32,
    key: Keypair,
    gen: TxnGenerator,
    spec: WorkloadSpec,
    params: ClientParams,
    primary_hint: u32,
    next_nonce: u64,
    pending: BTreeMap<u64, Pending>,
    completed: Vec<Completion>,
    max_concurrent: usize,
    script: Option<ClientScript>,
}

impl Client {
    pub fn new(key: Keypair, spec: WorkloadSpec, params: ClientParams, rng: StreamRng) -> Self {
        let id = key.identity().id;
        let script = spec.scripts.get(id as usize).cloned();
        Self {
            id,
            key,
            gen: TxnGenerator::new(spec.clone(), id, rng),
            spec,
            params,
            primary_hint: 0,
            next_nonce: 1,
            pending: BTreeMap::new(),
            completed: Vec::new(),
            max_concurrent: 0,
            script,
        }
    }

    pub fn identity(&self) -> Identity {
        Identity::client(self.id)
    }

    pub fn issued(&self) -> u64 {
        self.next_nonce - 1
    }

    pub fn completions(&self) -> &[Completion] {
        &self.completed
    }

    pub fn pending(&self) -> impl Iterator<Item = TxnId> + '_ {
        self.pending.keys().map(|n| TxnId { client: self.id, nonce: *n })
    }

    /// Largest number of simultaneously pending transactions seen so far.
    pub fn max_concurrent(&self) -> usize {
        self.max_concurrent
    }

    pub fn exhausted(&self) -> bool {
        match &self.script {
            Some(s) => self.issued() >= s.txns.len() as u64,
            None => self.spec.txns_per_client.is_some_and(|n| self.issued() >= n),
        }
    }

    fn closed_loop(&self) -> bool {
        self.script.is_some() || self.spec.closed_loop
    }

    fn interval(&self) -> SimTime {
        (1_000_000.0 / self.spec.open_rate_per_sec).round().max(1.0) as SimTime
    }

    pub fn start(&mut self, out: &mut Outbox) {
        if let Some(s) = &self.script {
            if s.start > 0 {
                out.set_timer(TimerKey::ClientIssue, s.start);
            } else {
                self.issue(out);
            }
            return;
        }
        self.issue(out);
        if !self.spec.closed_loop {
            out.set_timer(TimerKey::ClientIssue, self.interval());
        }
    }

    fn issue(&mut self, out: &mut Outbox) {
        if self.exhausted() {
            return;
        }
        let nonce = self.next_nonce;
        self.next_nonce += 1;
        let txn = match &self.script {
            Some(s) => Transaction { client: self.id, nonce, ops: s.txns[(nonce - 1) as usize].clone() },
            None => self.gen.next_transaction(nonce),
        };
        let stxn = self.key.sign(txn, Scheme::Ds);
        let msg = Message::ClientRequest(stxn.clone());
        out.sign_send(&self.key, Identity::node(self.primary_hint), msg, Scheme::Mac);
        self.pending.insert(nonce, Pending { stxn, issued_at: out.now, backoff: 0, replies: BTreeMap::new() });
        self.max_concurrent = self.max_concurrent.max(self.pending.len());
        out.set_timer(TimerKey::Client { nonce }, self.params.timeout);
    }

    fn complete(&mut self, nonce: u64, aborted: bool, out: &mut Outbox) {
        let Some(p) = self.pending.remove(&nonce) else { return };
        out.cancel_timer(TimerKey::Client { nonce });
        self.completed.push(Completion { nonce, issued_at: p.issued_at, at: out.now, aborted });
        if self.closed_loop() {
            self.issue(out);
        }
    }

    pub fn on_message(&mut self, env: Envelope, out: &mut Outbox) {
        if !verify_signed(&env, None) {
            return;
        }
        let from = env.signer();
        match (env.payload(), self.params.reply_mode) {
            (Message::Response { outcome: Outcome::Txn { id, .. }, view_hint, .. }, ReplyMode::Verifier)
                if from == Identity::VERIFIER && id.client == self.id =>
            {
                self.primary_hint = (*view_hint % self.params.n_r as u64) as u32;
                self.complete(id.nonce, false, out);
            }
            (Message::Abort { txn, view_hint, .. }, ReplyMode::Verifier)
                if from == Identity::VERIFIER && txn.client == self.id =>
            {
                self.primary_hint = (*view_hint % self.params.n_r as u64) as u32;
                self.complete(txn.nonce, true, out);
            }
            (Message::Reply { txn, result, .. }, ReplyMode::ShimReplies { f_r })
                if from.is_node() && txn.client == self.id =>
            {
                let Some(p) = self.pending.get_mut(&txn.nonce) else { return };
                p.replies.insert(from.id, digest_of(result));
                let d = p.replies[&from.id];
                if p.replies.values().filter(|x| **x == d).count() > f_r {
                    self.complete(txn.nonce, false, out);
                }
            }
            _ => {}
        }
    }

    pub fn on_timer(&mut self, key: &TimerKey, out: &mut Outbox) {
        match *key {
            TimerKey::ClientIssue => {
                self.issue(out);
                if !self.closed_loop() && !self.exhausted() {
                    out.set_timer(TimerKey::ClientIssue, self.interval());
                }
            }
            TimerKey::Client { nonce } => {
                let Some(p) = self.pending.get_mut(&nonce) else { return };
                p.backoff += 1;
                let msg = Message::ClientRequest(p.stxn.clone());
                let after = self.params.timeout << p.backoff.min(6);
                match self.params.reply_mode {
                    ReplyMode::Verifier => out.sign_send(&self.key, Identity::VERIFIER, msg, Scheme::Mac),
                    ReplyMode::ShimReplies { .. } => {
                        out.broadcast_nodes(&self.key, self.params.n_r, None, msg, Scheme::Mac);
                    }
                }
                out.set_timer(TimerKey::Client { nonce }, after);
            }
            _ => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simnet::rng::stream;

    fn generate(spec: &WorkloadSpec, per_client: u64) -> Vec<Transaction> {
        let mut out = Vec::new();
        for c in 0..spec.num_clients as u32 {
            let mut g = TxnGenerator::new(spec.clone(), c, stream(3, "workload", c as u64));
            out.extend((1..=per_client).map(|n| g.next_transaction(n)));
        }
        out
    }

    #[test]
    fn zero_conflict_rate_shares_no_keys_across_clients() {
        let spec = WorkloadSpec::default();
        let txns = generate(&spec, 250);
        assert_eq!(cross_client_conflict_fraction(&txns), 0.0);
    }

    #[test]
    fn read_only_mix_writes_nothing() {
        let spec = WorkloadSpec { write_ratio: 0.0, ..WorkloadSpec::default() };
        assert!(generate(&spec, 100).iter().all(|t| t.write_keys().is_empty()));
    }

    #[test]
    fn generator_is_deterministic_per_stream() {
        let spec = WorkloadSpec { conflict_rate: 0.3, ..WorkloadSpec::default() };
        assert_eq!(generate(&spec, 20), generate(&spec, 20));
    }

    #[test]
    fn validation_rejects_bad_fractions() {
        let spec = WorkloadSpec { conflict_rate: 0.7, ..WorkloadSpec::default() };
        assert_eq!(spec.validate(), Err(WorkloadError::ConflictRate(0.7)));
        let spec = WorkloadSpec { write_ratio: -0.1, ..WorkloadSpec::default() };
        assert!(spec.validate().is_err());
    }
}
