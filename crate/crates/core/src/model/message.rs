use std::sync::Arc;

use super::cert::CommitCertificate;
use super::digest::{digest_of, Digest};
use super::encode::Encode;
use super::ident::SimTime;
use super::signed::SignedMessage;
use super::txn::{Key, SignedTxn, TxnId, TxnOutput, TxnResult, Value, Version};

pub type Envelope = SignedMessage<Message>;

#[derive(Clone, Debug)]
pub enum RequestBody {
    Batch(Vec<SignedTxn>),
    /// Gap filler installed by a new view.
    NoOp { view: u64, seq: u64 },
}

/// A batch of client transactions ordered under one digest and sequence number.
#[derive(Clone, Debug)]
pub struct Request {
    body: RequestBody,
    digest: Digest,
}

impl Encode for RequestBody {
    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            RequestBody::Batch(txns) => {
                out.push(0);
                txns.encode(out);
            }
            RequestBody::NoOp { view, seq } => {
                out.push(1);
                view.encode(out);
                seq.encode(out);
            }
        }
    }
}

impl Request {
    pub fn new(body: RequestBody) -> Arc<Self> {
        let digest = digest_of(&body);
        Arc::new(Self { body, digest })
    }

    pub fn batch(txns: Vec<SignedTxn>) -> Arc<Self> {
        Self::new(RequestBody::Batch(txns))
    }

    pub fn noop(view: u64, seq: u64) -> Arc<Self> {
        Self::new(RequestBody::NoOp { view, seq })
    }

    pub fn body(&self) -> &RequestBody {
        &self.body
    }

    pub fn digest(&self) -> Digest {
        self.digest
    }

    pub fn recompute_digest(&self) -> Digest {
        digest_of(&self.body)
    }

    pub fn is_noop(&self) -> bool {
        matches!(self.body, RequestBody::NoOp { .. })
    }

    pub fn txns(&self) -> &[SignedTxn] {
        match &self.body {
            RequestBody::Batch(t) => t,
            RequestBody::NoOp { .. } => &[],
        }
    }

    pub fn compute_cost(&self) -> SimTime {
        self.txns().iter().map(|t| t.payload().compute_cost()).sum()
    }
}

/// Per-transaction outputs of one executed batch, with a cached digest.
#[derive(Clone, Debug)]
pub struct BatchOutput {
    outputs: Vec<TxnOutput>,
    digest: Digest,
}

impl BatchOutput {
    pub fn new(outputs: Vec<TxnOutput>) -> Arc<Self> {
        let digest = digest_of(&outputs);
        Arc::new(Self { outputs, digest })
    }

    pub fn outputs(&self) -> &[TxnOutput] {
        &self.outputs
    }

    pub fn digest(&self) -> Digest {
        self.digest
    }

    pub fn recompute_digest(&self) -> Digest {
        digest_of(&self.outputs)
    }

    /// Keeps the cached digest while swapping the contents.
    pub fn with_stale_digest(&self, outputs: Vec<TxnOutput>) -> Arc<Self> {
        Arc::new(Self { outputs, digest: self.digest })
    }
}

#[derive(Clone, Debug)]
pub enum ErrorKind {
    MissingSeq(u64),
    MissingRequest(SignedTxn),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ErrorKey {
    MissingSeq(u64),
    MissingRequest(TxnId),
}

impl ErrorKind {
    pub fn key(&self) -> ErrorKey {
        match self {
            ErrorKind::MissingSeq(k) => ErrorKey::MissingSeq(*k),
            ErrorKind::MissingRequest(t) => ErrorKey::MissingRequest(t.payload().id()),
        }
    }
}

#[derive(Clone, Debug)]
pub enum Outcome {
    Txn { id: TxnId, result: TxnResult },
    Batch { validated: u32, aborted: u32 },
}

/// Evidence that `request` prepared at (view, seq).
#[derive(Clone, Debug)]
pub struct PreparedProof {
    pub view: u64,
    pub seq: u64,
    pub digest: Digest,
    pub request: Arc<Request>,
    pub preprepare: Envelope,
    pub prepares: Vec<Envelope>,
}

#[derive(Clone, Debug)]
pub struct CheckpointBundle {
    pub from_seq: u64,
    pub to_seq: u64,
    pub certificates: Vec<Arc<CommitCertificate>>,
}

impl CheckpointBundle {
    /// Digest over the (seq, digest) pairs of the covered range.
    pub fn state_digest(&self) -> Digest {
        let pairs: Vec<(u64, Digest)> =
            self.certificates.iter().map(|c| (c.seq, c.digest)).collect();
        digest_of(&(self.from_seq, self.to_seq, pairs))
    }
}

#[derive(Clone, Debug)]
pub enum Message {
    ClientRequest(SignedTxn),
    Preprepare { view: u64, seq: u64, digest: Digest, request: Arc<Request> },
    Prepare { view: u64, seq: u64, digest: Digest },
    Commit { view: u64, seq: u64, digest: Digest },
    Execute { seq: u64, digest: Digest, request: Arc<Request>, cert: Option<Arc<CommitCertificate>> },
    Verify {
        seq: u64,
        digest: Digest,
        request: Arc<Request>,
        cert: Option<Arc<CommitCertificate>>,
        output: Arc<BatchOutput>,
    },
    Response { seq: u64, digest: Digest, outcome: Outcome, view_hint: u64 },
    Abort { seq: u64, txn: TxnId, view_hint: u64 },
    Error(ErrorKind),
    Ack(ErrorKey),
    Replace { seq: Option<u64>, txn: Option<TxnId> },
    ViewChange { new_view: u64, stable_seq: u64, proofs: Vec<PreparedProof> },
    NewView { new_view: u64, votes: Vec<Envelope>, preprepares: Vec<Envelope> },
    Checkpoint(Arc<CheckpointBundle>),
    Fetch { keys: Vec<Key> },
    FetchReply { values: Vec<(Key, Value, Version)> },
    /// Locally executed result, sent by a replica that executes after ordering.
    Reply { seq: u64, txn: TxnId, result: TxnResult },
    Accept { seq: u64, digest: Digest, request: Arc<Request> },
    Accepted { seq: u64, digest: Digest },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MessageKind {
    ClientRequest,
    Preprepare,
    Prepare,
    Commit,
    Execute,
    Verify,
    Response,
    Abort,
    Error,
    Ack,
    Replace,
    ViewChange,
    NewView,
    Checkpoint,
    Fetch,
    FetchReply,
    Reply,
    Accept,
    Accepted,
}

impl MessageKind {
    pub const ALL: [MessageKind; 19] = [
        MessageKind::ClientRequest,
        MessageKind::Preprepare,
        MessageKind::Prepare,
        MessageKind::Commit,
        MessageKind::Execute,
        MessageKind::Verify,
        MessageKind::Response,
        MessageKind::Abort,
        MessageKind::Error,
        MessageKind::Ack,
        MessageKind::Replace,
        MessageKind::ViewChange,
        MessageKind::NewView,
        MessageKind::Checkpoint,
        MessageKind::Fetch,
        MessageKind::FetchReply,
        MessageKind::Reply,
        MessageKind::Accept,
        MessageKind::Accepted,
    ];

    pub fn label(self) -> &'static str {
        match self {
            MessageKind::ClientRequest => "client-request",
            MessageKind::Preprepare => "preprepare",
            MessageKind::Prepare => "prepare",
            MessageKind::Commit => "commit",
            MessageKind::Execute => "execute",
            MessageKind::Verify => "verify",
            MessageKind::Response => "response",
            MessageKind::Abort => "abort",
            MessageKind::Error => "error",
            MessageKind::Ack => "ack",
            MessageKind::Replace => "replace",
            MessageKind::ViewChange => "view-change",
            MessageKind::NewView => "new-view",
            MessageKind::Checkpoint => "checkpoint",
            MessageKind::Fetch => "fetch",
            MessageKind::FetchReply => "fetch-reply",
            MessageKind::Reply => "reply",
            MessageKind::Accept => "accept",
            MessageKind::Accepted => "accepted",
        }
    }

    /// Wire size in bytes used for traffic accounting.
    pub fn wire_size(self) -> u64 {
        match self {
            MessageKind::Preprepare => 5392,
            MessageKind::Prepare => 216,
            MessageKind::Commit => 220,
            MessageKind::Execute => 3320,
            MessageKind::Response => 2270,
            MessageKind::ClientRequest => 320,
            MessageKind::Verify => 3600,
            MessageKind::Abort => 250,
            MessageKind::Error => 420,
            MessageKind::Ack => 120,
            MessageKind::Replace => 200,
            MessageKind::ViewChange => 1200,
            MessageKind::NewView => 4000,
            MessageKind::Checkpoint => 2400,
            MessageKind::Fetch => 120,
            MessageKind::FetchReply => 640,
            MessageKind::Reply => 260,
            MessageKind::Accept => 5392,
            MessageKind::Accepted => 216,
        }
    }
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::ClientRequest(_) => MessageKind::ClientRequest,
            Message::Preprepare { .. } => MessageKind::Preprepare,
            Message::Prepare { .. } => MessageKind::Prepare,
            Message::Commit { .. } => MessageKind::Commit,
            Message::Execute { .. } => MessageKind::Execute,
            Message::Verify { .. } => MessageKind::Verify,
            Message::Response { .. } => MessageKind::Response,
            Message::Abort { .. } => MessageKind::Abort,
            Message::Error(_) => MessageKind::Error,
            Message::Ack(_) => MessageKind::Ack,
            Message::Replace { .. } => MessageKind::Replace,
            Message::ViewChange { .. } => MessageKind::ViewChange,
            Message::NewView { .. } => MessageKind::NewView,
            Message::Checkpoint(_) => MessageKind::Checkpoint,
            Message::Fetch { .. } => MessageKind::Fetch,
            Message::FetchReply { .. } => MessageKind::FetchReply,
            Message::Reply { .. } => MessageKind::Reply,
            Message::Accept { .. } => MessageKind::Accept,
            Message::Accepted { .. } => MessageKind::Accepted,
        }
    }
}

impl Encode for ErrorKey {
    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            ErrorKey::MissingSeq(k) => {
                out.push(0);
                k.encode(out);
            }
            ErrorKey::MissingRequest(t) => {
                out.push(1);
                t.encode(out);
            }
        }
    }
}

impl Encode for ErrorKind {
    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            ErrorKind::MissingSeq(k) => {
                out.push(0);
                k.encode(out);
            }
            ErrorKind::MissingRequest(t) => {
                out.push(1);
                t.encode(out);
            }
        }
    }
}

impl Encode for Outcome {
    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            Outcome::Txn { id, result } => {
                out.push(0);
                id.encode(out);
                result.encode(out);
            }
            Outcome::Batch { validated, aborted } => {
                out.push(1);
                validated.encode(out);
                aborted.encode(out);
            }
        }
    }
}

impl Encode for PreparedProof {
    fn encode(&self, out: &mut Vec<u8>) {
        self.view.encode(out);
        self.seq.encode(out);
        self.digest.encode(out);
        self.preprepare.encode(out);
        self.prepares.encode(out);
    }
}

impl Encode for CheckpointBundle {
    fn encode(&self, out: &mut Vec<u8>) {
        self.from_seq.encode(out);
        self.to_seq.encode(out);
        self.certificates.encode(out);
    }
}

impl Encode for Message {
    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            Message::ClientRequest(t) => {
                out.push(0);
                t.encode(out);
            }
            Message::Preprepare { view, seq, digest, .. } => {
                out.push(1);
                (view, seq, digest).encode(out);
            }
            Message::Prepare { view, seq, digest } => {
                out.push(2);
                (view, seq, digest).encode(out);
            }
            Message::Commit { view, seq, digest } => {
                out.push(3);
                (view, seq, digest).encode(out);
            }
            Message::Execute { seq, digest, cert, .. } => {
                out.push(4);
                (seq, digest).encode(out);
                cert.encode(out);
            }
            Message::Verify { seq, digest, cert, output, .. } => {
                out.push(5);
                (seq, digest, output.digest()).encode(out);
                cert.encode(out);
            }
            Message::Response { seq, digest, outcome, view_hint } => {
                out.push(6);
                (seq, digest, view_hint).encode(out);
                outcome.encode(out);
            }
            Message::Abort { seq, txn, view_hint } => {
                out.push(7);
                (seq, txn, view_hint).encode(out);
            }
            Message::Error(k) => {
                out.push(8);
                k.encode(out);
            }
            Message::Ack(k) => {
                out.push(9);
                k.encode(out);
            }
            Message::Replace { seq, txn } => {
                out.push(10);
                seq.encode(out);
                txn.encode(out);
            }
            Message::ViewChange { new_view, stable_seq, proofs } => {
                out.push(11);
                (new_view, stable_seq).encode(out);
                proofs.encode(out);
            }
            Message::NewView { new_view, votes, preprepares } => {
                out.push(12);
                new_view.encode(out);
                votes.encode(out);
                preprepares.encode(out);
            }
            Message::Checkpoint(b) => {
                out.push(13);
                b.encode(out);
            }
            Message::Fetch { keys } => {
                out.push(14);
                keys.encode(out);
            }
            Message::FetchReply { values } => {
                out.push(15);
                values.encode(out);
            }
            Message::Reply { seq, txn, result } => {
                out.push(16);
                (seq, txn).encode(out);
                result.encode(out);
            }
            Message::Accept { seq, digest, .. } => {
                out.push(17);
                (seq, digest).encode(out);
            }
            Message::Accepted { seq, digest } => {
                out.push(18);
                (seq, digest).encode(out);
            }
        }
    }
}
