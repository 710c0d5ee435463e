//! Spawned, stateless executors.
//!
//! An executor handles exactly one Execute: it checks the commit certificate,
//! fetches every key the batch may read in one round trip, runs the batch
//! against a private overlay, waits out the batch's compute cost and reports
//! to the verifier. It never writes to storage.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::effects::{Action, Observation, Outbox};
use crate::model::{
    execute_txn, validate_certificate, verify_signed, BatchOutput, CommitCertificate, Digest,
    Envelope, Identity, Key, Keypair, Message, Request, Role, Scheme, TxnOutput, Value, Version,
};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ExecStrategy {
    WrongResult,
    Silent,
    Duplicate { copies: u32 },
    StaleRead,
}

#[derive(Clone, Copy, Debug)]
pub struct ExecutorParams {
    pub n_r: usize,
    pub f_r: usize,
    /// Baselines without a BFT shim send no certificate.
    pub require_certificate: bool,
}

#[derive(Debug)]
enum State {
    Idle,
    Fetching(Job),
    Computing(Job, Arc<BatchOutput>),
    Finished,
}

#[derive(Debug)]
struct Job {
    seq: u64,
    digest: Digest,
    request: Arc<Request>,
    cert: Option<Arc<CommitCertificate>>,
}

pub struct Executor {
    key: Keypair,
    params: ExecutorParams,
    strategy: Option<ExecStrategy>,
    state: State,
}

/// Runs a batch in order over `fetched` values, letting later transactions
/// see earlier writes at the version storage would assign them.
pub fn execute_batch(
    request: &Request,
    fetched: &BTreeMap<Key, (Value, Version)>,
) -> Vec<TxnOutput> {
    let mut overlay = fetched.clone();
    let mut outputs = Vec::with_capacity(request.txns().len());
    for stxn in request.txns() {
        let out = execute_txn(stxn.payload(), |k| overlay.get(&k).copied().unwrap_or((0, 0)));
        for (&k, &v) in &out.rw.writes {
            let ver = overlay.get(&k).map_or(0, |e| e.1);
            overlay.insert(k, (v, ver + 1));
        }
        outputs.push(out);
    }
    outputs
}

fn corrupt_result(outputs: &mut [TxnOutput]) {
    for o in outputs.iter_mut() {
        for v in o.rw.writes.values_mut() {
            *v = v.wrapping_add(1);
        }
    }
    if let Some(o) = outputs.first_mut() { o.result.reads.push((u64::MAX, -1)) }
}

fn fabricate_versions(outputs: &mut [TxnOutput]) {
    for o in outputs.iter_mut() {
        for ver in o.rw.reads.values_mut() {
            *ver = ver.wrapping_add(1_000);
        }
        if o.rw.reads.is_empty() {
            o.rw.reads.insert(u64::MAX, 1_000);
        }
    }
}

impl Executor {
    pub fn new(key: Keypair, params: ExecutorParams, strategy: Option<ExecStrategy>) -> Self {
        Self { key, params, strategy, state: State::Idle }
    }

    pub fn identity(&self) -> Identity {
        self.key.identity()
    }

    pub fn is_finished(&self) -> bool {
        matches!(self.state, State::Finished)
    }

    pub fn on_message(&mut self, env: Envelope, out: &mut Outbox) {
        match (env.payload(), &self.state) {
            (Message::Execute { .. }, State::Idle) => self.on_execute(env, out),
            (Message::FetchReply { values }, State::Fetching(_)) => {
                if env.signer() != Identity::STORAGE || !verify_signed(&env, None) {
                    return;
                }
                let fetched = values.iter().map(|&(k, v, ver)| (k, (v, ver))).collect();
                let State::Fetching(job) = std::mem::replace(&mut self.state, State::Finished) else {
                    unreachable!()
                };
                self.compute(job, &fetched, out);
            }
            _ => {}
        }
    }

    fn on_execute(&mut self, env: Envelope, out: &mut Outbox) {
        let Message::Execute { seq, digest, request, cert } = env.payload() else {
            return;
        };
        let me = self.identity();
        if env.signer().role != Role::ShimNode || !verify_signed(&env, None) {
            self.state = State::Finished;
            return;
        }
        let cert_ok = if self.params.require_certificate {
            match cert {
                Some(c) => {
                    out.work.ds_verify += c.attestations.len() as u32;
                    c.seq == *seq
                        && c.digest == *digest
                        && validate_certificate(c, self.params.n_r, self.params.f_r)
                }
                None => false,
            }
        } else {
            true
        };
        if !cert_ok || request.recompute_digest() != *digest {
            out.observe(Observation::CertificateRejected { by: me, seq: *seq });
            self.state = State::Finished;
            return;
        }
        if let Some(c) = cert {
            out.observe(Observation::CertificateAccepted {
                by: me,
                seq: *seq,
                signers: c.signers().into_iter().collect(),
            });
        }
        let job = Job { seq: *seq, digest: *digest, request: request.clone(), cert: cert.clone() };
        let mut keys: Vec<Key> = job
            .request
            .txns()
            .iter()
            .flat_map(|t| t.payload().read_keys())
            .collect();
        keys.sort_unstable();
        keys.dedup();
        if keys.is_empty() {
            self.compute(job, &BTreeMap::new(), out);
        } else {
            out.sign_send(&self.key, Identity::STORAGE, Message::Fetch { keys }, Scheme::Mac);
            self.state = State::Fetching(job);
        }
    }

    fn compute(&mut self, job: Job, fetched: &BTreeMap<Key, (Value, Version)>, out: &mut Outbox) {
        let mut outputs = execute_batch(&job.request, fetched);
        out.work.txn_exec += outputs.len() as u32;
        match self.strategy {
            Some(ExecStrategy::WrongResult) => corrupt_result(&mut outputs),
            Some(ExecStrategy::StaleRead) => fabricate_versions(&mut outputs),
            _ => {}
        }
        let output = BatchOutput::new(outputs);
        let cost = job.request.compute_cost();
        self.state = State::Computing(job, output);
        out.actions.push(Action::Done { after: cost });
    }

    pub fn on_done(&mut self, out: &mut Outbox) {
        let State::Computing(job, output) = std::mem::replace(&mut self.state, State::Finished)
        else {
            return;
        };
        let copies = match self.strategy {
            Some(ExecStrategy::Silent) => 0,
            Some(ExecStrategy::Duplicate { copies }) => copies.max(1),
            _ => 1,
        };
        let msg = Message::Verify {
            seq: job.seq,
            digest: job.digest,
            request: job.request,
            cert: job.cert,
            output,
        };
        let env = self.key.sign(msg, Scheme::Ds);
        for _ in 0..copies {
            out.send(Identity::VERIFIER, env.clone());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{KeyRegistry, Op, Operand, Transaction};

    fn signed_batch(reg: &mut KeyRegistry, txns: Vec<Transaction>) -> Arc<Request> {
        let signed = txns
            .into_iter()
            .map(|t| reg.issue(t.client_identity()).unwrap().sign(t, Scheme::Ds))
            .collect();
        Request::batch(signed)
    }

    #[test]
    fn overlay_exposes_earlier_writes_with_next_version() {
        let mut reg = KeyRegistry::new();
        let req = signed_batch(
            &mut reg,
            vec![
                Transaction {
                    client: 0,
                    nonce: 1,
                    ops: vec![Op::Write { key: 1, value: Operand::Lit { value: 9 } }],
                },
                Transaction { client: 1, nonce: 1, ops: vec![Op::Read { key: 1 }] },
            ],
        );
        let fetched = BTreeMap::from([(1, (4, 6))]);
        let outs = execute_batch(&req, &fetched);
        assert_eq!(outs[1].result.reads, vec![(1, 9)]);
        assert_eq!(outs[1].rw.reads.get(&1), Some(&7));
    }

    #[test]
    fn corrupted_output_differs_even_when_read_only() {
        let mut o = vec![TxnOutput::default()];
        let before = o.clone();
        corrupt_result(&mut o);
        assert_ne!(o, before);
        let mut s = vec![TxnOutput::default()];
        fabricate_versions(&mut s);
        assert_ne!(s, before);
    }
}
