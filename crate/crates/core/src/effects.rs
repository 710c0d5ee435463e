//! What a component handler may ask of the world.

use std::sync::Arc;

use crate::model::{
    Digest, Encode, Envelope, ErrorKey, Identity, Keypair, Message, Request, Scheme, SimTime,
    TxnId,
};
use crate::simnet::TimerKeyLike;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum TimerKey {
    /// Primary's batch fill deadline.
    Batch,
    /// Node timer started on an accepted Preprepare.
    Request { seq: u64 },
    /// Retransmit timer started when forwarding a verifier Error.
    Retransmit(ErrorKey),
    ViewChange { view: u64 },
    Client { nonce: u64 },
    ClientIssue,
    VerifierAbort { seq: u64 },
}

impl Encode for TimerKey {
    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            TimerKey::Batch => out.push(0),
            TimerKey::Request { seq } => {
                out.push(1);
                seq.encode(out);
            }
            TimerKey::Retransmit(k) => {
                out.push(2);
                k.encode(out);
            }
            TimerKey::ViewChange { view } => {
                out.push(3);
                view.encode(out);
            }
            TimerKey::Client { nonce } => {
                out.push(4);
                nonce.encode(out);
            }
            TimerKey::ClientIssue => out.push(5),
            TimerKey::VerifierAbort { seq } => {
                out.push(6);
                seq.encode(out);
            }
        }
    }
}

impl TimerKeyLike for TimerKey {
    fn label(&self) -> &'static str {
        match self {
            TimerKey::Batch => "batch",
            TimerKey::Request { .. } => "request",
            TimerKey::Retransmit(_) => "retransmit",
            TimerKey::ViewChange { .. } => "view-change",
            TimerKey::Client { .. } => "client",
            TimerKey::ClientIssue => "client-issue",
            TimerKey::VerifierAbort { .. } => "verifier-abort",
        }
    }
}

/// Per-transaction verdict reached by the verifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TxnVerdict {
    Validated,
    Aborted,
    /// Already decided at an earlier sequence number.
    Duplicate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AbortDecision {
    Replace,
    AbortNow,
    ParkAbort,
}

/// The verifier's evidence when its abort timer fires.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AbortTimerRecord {
    pub seq: u64,
    pub digest: Digest,
    pub senders: u32,
    pub output_digests: Vec<Digest>,
    pub decision: AbortDecision,
}

impl Encode for AbortTimerRecord {
    fn encode(&self, out: &mut Vec<u8>) {
        (self.seq, self.digest, self.senders).encode(out);
        self.output_digests.encode(out);
        out.push(match self.decision {
            AbortDecision::Replace => 0,
            AbortDecision::AbortNow => 1,
            AbortDecision::ParkAbort => 2,
        });
    }
}

#[derive(Clone, Debug)]
pub enum Observation {
    Committed { node: u32, view: u64, seq: u64, digest: Digest, via_checkpoint: bool },
    ViewChangeVote { node: u32, view: u64 },
    ViewInstalled { node: u32, view: u64 },
    StableCheckpoint { node: u32, seq: u64 },
    CertificateAccepted { by: Identity, seq: u64, signers: Vec<u32> },
    CertificateRejected { by: Identity, seq: u64 },
    Spawned { spawner: u32, seq: u64, count: u32 },
    /// The verifier settled `seq`. `verdicts` is empty for no-ops.
    Decided { seq: u64, request: Arc<Request>, verdicts: Vec<TxnVerdict> },
    AbortTimer(AbortTimerRecord),
    VerifyIgnored { from: Identity, seq: u64 },
    ResubmitBranch { txn: TxnId, branch: &'static str },
    ExecutedLocally { node: u32, seq: u64 },
}

#[derive(Clone, Debug)]
pub enum Action {
    Send { to: Identity, msg: Envelope, delay: SimTime },
    /// Launch a fresh executor and deliver `execute` to it.
    Spawn { execute: Envelope, delay: SimTime },
    SetTimer { key: TimerKey, after: SimTime },
    CancelTimer { key: TimerKey },
    /// Executor compute completes after `after`.
    Done { after: SimTime },
    Observe(Observation),
}

/// Counted CPU work performed by a handler beyond the per-message defaults.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Work {
    pub ds_verify: u32,
    pub mac_verify: u32,
    pub txn_exec: u32,
    pub txn_check: u32,
    pub compute: SimTime,
}

#[derive(Debug, Default)]
pub struct Outbox {
    pub now: SimTime,
    pub actions: Vec<Action>,
    pub work: Work,
}

impl Outbox {
    pub fn new(now: SimTime) -> Self {
        Self { now, actions: Vec::new(), work: Work::default() }
    }

    pub fn send(&mut self, to: Identity, msg: Envelope) {
        self.actions.push(Action::Send { to, msg, delay: 0 });
    }

    pub fn sign_send(&mut self, key: &Keypair, to: Identity, msg: Message, scheme: Scheme) {
        self.send(to, key.sign(msg, scheme));
    }

    /// Signs once and sends to every shim node except `except`.
    pub fn broadcast_nodes(
        &mut self,
        key: &Keypair,
        n_r: usize,
        except: Option<u32>,
        msg: Message,
        scheme: Scheme,
    ) -> Envelope {
        let env = key.sign(msg, scheme);
        for i in 0..n_r as u32 {
            if Some(i) != except {
                self.send(Identity::node(i), env.clone());
            }
        }
        env
    }

    pub fn spawn(&mut self, execute: Envelope) {
        self.actions.push(Action::Spawn { execute, delay: 0 });
    }

    pub fn set_timer(&mut self, key: TimerKey, after: SimTime) {
        self.actions.push(Action::SetTimer { key, after });
    }

    pub fn cancel_timer(&mut self, key: TimerKey) {
        self.actions.push(Action::CancelTimer { key });
    }

    pub fn observe(&mut self, o: Observation) {
        self.actions.push(Action::Observe(o));
    }

    pub fn sent(&self) -> impl Iterator<Item = (&Identity, &Envelope)> {
        self.actions.iter().filter_map(|a| match a {
            Action::Send { to, msg, .. } => Some((to, msg)),
            _ => None,
        })
    }
}
