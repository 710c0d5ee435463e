//! Byzantine behaviour for shim nodes and executors.
//!
//! A byzantine node runs the honest state machine; its adversary filters what
//! reaches it and rewrites what it emits. Everything it sends is signed with
//! its own key, so forgery stays impossible.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::effects::{Action, Outbox};
use crate::executor::ExecStrategy;
use crate::model::{ms, Config, Envelope, ErrorKind, Message, Request, Scheme, SimTime};
use crate::shim::ShimNode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AttackStrategy {
    /// Drop every request from these clients.
    RequestIgnorance { clients: Vec<u32> },
    /// Send Preprepares to only `reach` backups (default `f_R`).
    UnsuccessfulConsensus {
        #[serde(default)]
        reach: Option<usize>,
    },
    /// Spawn only `spawn` executors per request.
    LessExecutors { spawn: usize },
    /// Withhold Preprepares from the dark nodes. With `rotate_every` the
    /// dark set shifts every that many sequence numbers (experimental).
    NodeExclusion {
        dark: Vec<u32>,
        #[serde(default)]
        rotate_every: Option<u64>,
    },
    /// Send an alternative request under the same sequence number to
    /// `group_b`. Empty `seqs` targets every sequence number.
    Equivocation {
        group_b: Vec<u32>,
        #[serde(default)]
        seqs: Vec<u64>,
    },
    DuplicateSpawnPrimary { extra: usize },
    /// After losing the primary role, replay the newest certificate held.
    DuplicateSpawnOldPrimary { copies: usize },
    /// Delay spawning per slot for the targeted seqs. Missing delays leave the
    /// first `f_E+1` slots on time and push the rest well past the verifier's
    /// abort timer.
    ByzantineAbortDelay {
        #[serde(default)]
        seqs: Vec<u64>,
        #[serde(default)]
        slot_delays_ms: Vec<f64>,
    },
    /// Emit nothing.
    Silent,
}

impl AttackStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            Self::RequestIgnorance { .. } => "request-ignorance",
            Self::UnsuccessfulConsensus { .. } => "unsuccessful-consensus",
            Self::LessExecutors { .. } => "less-executors",
            Self::NodeExclusion { .. } => "node-exclusion",
            Self::Equivocation { .. } => "equivocation",
            Self::DuplicateSpawnPrimary { .. } => "duplicate-spawn-primary",
            Self::DuplicateSpawnOldPrimary { .. } => "duplicate-spawn-old-primary",
            Self::ByzantineAbortDelay { .. } => "byzantine-abort-delay",
            Self::Silent => "silent",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeAssignment {
    pub node: u32,
    /// Applied in listed order.
    pub strategies: Vec<AttackStrategy>,
}

/// Makes the executors in the given slots byzantine. Slots number every
/// executor launched for one sequence number, by any spawner and across
/// respawns, starting at 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecutorFault {
    pub strategy: ExecStrategy,
    pub slots: Vec<u32>,
    #[serde(default)]
    pub seqs: Vec<u64>,
}

impl ExecutorFault {
    pub fn applies(&self, seq: u64, slot: u32) -> bool {
        self.slots.contains(&slot) && (self.seqs.is_empty() || self.seqs.contains(&seq))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdversarySpec {
    pub nodes: Vec<NodeAssignment>,
    pub executors: Vec<ExecutorFault>,
    /// Allow more faults than the model tolerates.
    pub out_of_model: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AdversaryError {
    #[error("node {0} does not exist")]
    UnknownNode(u32),
    #[error("{count} byzantine nodes exceed f_R = {f_r}")]
    TooManyNodes { count: usize, f_r: usize },
    #[error("{count} byzantine executor slots exceed f_E = {f_e}")]
    TooManyExecutors { count: usize, f_e: usize },
    #[error("dark set of {count} exceeds f_R = {f_r}")]
    DarkSetTooLarge { count: usize, f_r: usize },
}

impl AdversarySpec {
    pub fn byzantine_nodes(&self) -> BTreeSet<u32> {
        self.nodes.iter().map(|a| a.node).collect()
    }

    pub fn executor_strategy(&self, seq: u64, slot: u32) -> Option<ExecStrategy> {
        self.executors.iter().find(|f| f.applies(seq, slot)).map(|f| f.strategy.clone())
    }

    pub fn validate(&self, cfg: &Config) -> Result<(), AdversaryError> {
        for a in &self.nodes {
            if a.node as usize >= cfg.n_r {
                return Err(AdversaryError::UnknownNode(a.node));
            }
            for s in &a.strategies {
                if let AttackStrategy::NodeExclusion { dark, .. } = s {
                    if let Some(d) = dark.iter().find(|d| **d as usize >= cfg.n_r) {
                        return Err(AdversaryError::UnknownNode(*d));
                    }
                    if dark.len() > cfg.f_r && !self.out_of_model {
                        return Err(AdversaryError::DarkSetTooLarge { count: dark.len(), f_r: cfg.f_r });
                    }
                }
            }
        }
        if self.out_of_model {
            return Ok(());
        }
        let count = self.byzantine_nodes().len();
        if count > cfg.f_r {
            return Err(AdversaryError::TooManyNodes { count, f_r: cfg.f_r });
        }
        let slots: BTreeSet<u32> = self.executors.iter().flat_map(|f| f.slots.iter().copied()).collect();
        if slots.len() > cfg.f_e {
            return Err(AdversaryError::TooManyExecutors { count: slots.len(), f_e: cfg.f_e });
        }
        Ok(())
    }
}

/// Runtime state of one byzantine node.
pub struct NodeAdversary {
    strategies: Vec<AttackStrategy>,
    replayed_in_view: Option<u64>,
}

fn execute_seq(env: &Envelope) -> Option<u64> {
    match env.payload() {
        Message::Execute { seq, .. } => Some(*seq),
        _ => None,
    }
}

fn preprepare_seq(env: &Envelope) -> Option<u64> {
    match env.payload() {
        Message::Preprepare { seq, .. } => Some(*seq),
        _ => None,
    }
}

fn client_of(msg: &Message) -> Option<u32> {
    match msg {
        Message::ClientRequest(t) | Message::Error(ErrorKind::MissingRequest(t)) => Some(t.payload().client),
        _ => None,
    }
}

impl NodeAdversary {
    pub fn new(strategies: Vec<AttackStrategy>) -> Self {
        Self { strategies, replayed_in_view: None }
    }

    pub fn strategies(&self) -> &[AttackStrategy] {
        &self.strategies
    }

    /// Returns false to drop an inbound message before the node sees it.
    pub fn admit(&self, env: &Envelope) -> bool {
        self.strategies.iter().all(|s| match s {
            AttackStrategy::RequestIgnorance { clients } => {
                client_of(env.payload()).is_none_or(|c| !clients.contains(&c))
            }
            _ => true,
        })
    }

    /// Rewrites the actions one handler invocation produced.
    pub fn intercept(&mut self, node: &ShimNode, cfg: &Config, out: &mut Outbox) {
        let mut actions = std::mem::take(&mut out.actions);
        for i in 0..self.strategies.len() {
            let s = self.strategies[i].clone();
            actions = self.apply(&s, node, cfg, actions);
        }
        out.actions = actions;
    }

    fn apply(
        &mut self,
        s: &AttackStrategy,
        node: &ShimNode,
        cfg: &Config,
        actions: Vec<Action>,
    ) -> Vec<Action> {
        let me = node.id();
        let n_r = cfg.n_r as u32;
        match s {
            AttackStrategy::RequestIgnorance { .. } => actions,
            AttackStrategy::Silent => actions
                .into_iter()
                .filter(|a| !matches!(a, Action::Send { .. } | Action::Spawn { .. }))
                .collect(),
            AttackStrategy::UnsuccessfulConsensus { reach } => {
                let reach = reach.unwrap_or(cfg.f_r) as u32;
                let allowed: BTreeSet<u32> = (1..=reach).map(|k| (me + k) % n_r).collect();
                actions
                    .into_iter()
                    .filter(|a| match a {
                        Action::Send { to, msg, .. } if preprepare_seq(msg).is_some() => {
                            allowed.contains(&to.id)
                        }
                        _ => true,
                    })
                    .collect()
            }
            AttackStrategy::NodeExclusion { dark, rotate_every } => actions
                .into_iter()
                .filter(|a| match a {
                    Action::Send { to, msg, .. } => match preprepare_seq(msg) {
                        Some(seq) => {
                            let shift = rotate_every.map_or(0, |r| (seq / r.max(1)) as u32);
                            !dark.iter().any(|d| rotate(*d, shift, me, n_r) == to.id)
                        }
                        None => true,
                    },
                    _ => true,
                })
                .collect(),
            AttackStrategy::Equivocation { group_b, seqs } => {
                let mut alt: BTreeMap<u64, Envelope> = BTreeMap::new();
                actions
                    .into_iter()
                    .map(|a| match a {
                        Action::Send { to, msg, delay } if group_b.contains(&to.id) => {
                            let Message::Preprepare { view, seq, request, .. } = msg.payload() else {
                                return Action::Send { to, msg, delay };
                            };
                            if (!seqs.is_empty() && !seqs.contains(seq)) || request.is_noop() {
                                return Action::Send { to, msg, delay };
                            }
                            let env = alt
                                .entry(*seq)
                                .or_insert_with(|| {
                                    let other = alternative(request);
                                    let m = Message::Preprepare {
                                        view: *view,
                                        seq: *seq,
                                        digest: other.digest(),
                                        request: other,
                                    };
                                    node.keypair().sign(m, Scheme::Mac)
                                })
                                .clone();
                            Action::Send { to, msg: env, delay }
                        }
                        other => other,
                    })
                    .collect()
            }
            AttackStrategy::LessExecutors { spawn } => {
                let mut seen: BTreeMap<u64, usize> = BTreeMap::new();
                actions
                    .into_iter()
                    .filter(|a| match a {
                        Action::Spawn { execute, .. } => {
                            let c = seen.entry(execute_seq(execute).unwrap_or(0)).or_default();
                            *c += 1;
                            *c <= *spawn
                        }
                        _ => true,
                    })
                    .collect()
            }
            AttackStrategy::DuplicateSpawnPrimary { extra } => {
                let mut done = BTreeSet::new();
                let mut out = Vec::with_capacity(actions.len());
                for a in actions {
                    if let Action::Spawn { execute, delay } = &a {
                        if done.insert(execute_seq(execute)) {
                            for _ in 0..*extra {
                                out.push(Action::Spawn { execute: execute.clone(), delay: *delay });
                            }
                        }
                    }
                    out.push(a);
                }
                out
            }
            AttackStrategy::DuplicateSpawnOldPrimary { copies } => {
                let mut actions = actions;
                let view = node.view();
                let was_primary_before = view > 0 && !node.is_primary();
                if was_primary_before && self.replayed_in_view != Some(view) {
                    let newest = node.certificates().into_iter().find(|(_, r)| r.is_some());
                    if let Some((cert, Some(request))) = newest {
                        self.replayed_in_view = Some(view);
                        let msg = Message::Execute {
                            seq: cert.seq,
                            digest: cert.digest,
                            request,
                            cert: Some(cert),
                        };
                        let env = node.keypair().sign(msg, Scheme::Ds);
                        for _ in 0..*copies {
                            actions.push(Action::Spawn { execute: env.clone(), delay: 0 });
                        }
                    }
                }
                actions
            }
            AttackStrategy::ByzantineAbortDelay { seqs, slot_delays_ms } => {
                let mut slot: BTreeMap<u64, usize> = BTreeMap::new();
                actions
                    .into_iter()
                    .map(|a| match a {
                        Action::Spawn { execute, delay } => {
                            let seq = execute_seq(&execute).unwrap_or(0);
                            if !seqs.is_empty() && !seqs.contains(&seq) {
                                return Action::Spawn { execute, delay };
                            }
                            let i = slot.entry(seq).or_default();
                            let extra = match slot_delays_ms.get(*i) {
                                Some(d) => ms(*d),
                                None if *i > cfg.f_e => past_abort_timer(cfg, &execute),
                                None => 0,
                            };
                            *i += 1;
                            Action::Spawn { execute, delay: delay + extra }
                        }
                        other => other,
                    })
                    .collect()
            }
        }
    }
}

/// Maps a dark node forward by `shift`, skipping the sender itself.
fn rotate(d: u32, shift: u32, me: u32, n_r: u32) -> u32 {
    if shift == 0 || n_r < 2 {
        return d;
    }
    let others: Vec<u32> = (0..n_r).filter(|i| *i != me).collect();
    let pos = others.iter().position(|i| *i == d).unwrap_or(0);
    others[(pos + shift as usize) % others.len()]
}

/// A different request for the same slot: the batch reversed, or a single
/// transaction repeated.
fn alternative(request: &Request) -> std::sync::Arc<Request> {
    let mut txns = request.txns().to_vec();
    if txns.len() >= 2 {
        txns.reverse();
    } else if let Some(t) = txns.first().cloned() {
        txns.push(t);
    }
    Request::batch(txns)
}

fn past_abort_timer(cfg: &Config, execute: &Envelope) -> SimTime {
    let compute = match execute.payload() {
        Message::Execute { request, .. } => request.compute_cost(),
        _ => 0,
    };
    2 * (cfg.timers.verifier_abort + compute)
}
