//! The simulated deployment: every component, the network between them and
//! the per-component CPU queues.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use crate::adversary::NodeAdversary;
use crate::effects::{Action, Observation, Outbox, TimerKey};
use crate::executor::{Executor, ExecutorParams};
use crate::model::{
    Config, Digest, Envelope, Identity, KeyRegistry, Keypair, Message, Role, Scheme, SimTime, TxnId,
};
use crate::shim::{decentralized_share, NodeParams, ShimNode};
use crate::simnet::{stream, EventKind, NetStats, RunTrace, SimNet};
use crate::storage::VersionedStore;
use crate::verifier::{Verifier, VerifierParams};
use crate::workload::{Client, ClientParams, Completion, ReplyMode};

use super::baseline::{Sequencer, SequencerKind};
use super::metrics::{MetricsCollector, MetricsReport, RunSummary};
use super::monitors::{Monitors, Verdict};
use super::oracle::{serializability_oracle, DecidedRecord};
use super::scenario::{Mode, Scenario, ScenarioError};

enum Front {
    Shim { node: Box<ShimNode>, adversary: Option<NodeAdversary> },
    Sequencer(Sequencer),
}

/// End-of-run view of one shim node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeSummary {
    pub id: u32,
    pub byzantine: bool,
    pub view: u64,
    pub contiguous: u64,
    pub stable: u64,
    pub stable_prefix: Digest,
}

pub struct RunOutput {
    pub metrics: MetricsReport,
    pub verdicts: Vec<Verdict>,
    pub trace: RunTrace,
    pub observations: Vec<(SimTime, Observation)>,
    pub decided: Vec<DecidedRecord>,
    pub storage: VersionedStore,
    pub nodes: Vec<NodeSummary>,
    pub completions: BTreeMap<u32, Vec<Completion>>,
    pub unfinished: Vec<TxnId>,
    pub max_view_change_votes: usize,
    pub installed_views: Vec<u64>,
    /// Executors spawned per seq and spawner.
    pub spawns: BTreeMap<u64, BTreeMap<u32, u32>>,
    pub net: NetStats,
    pub end: SimTime,
}

impl RunOutput {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    pub fn verdict(&self, name: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }

    /// Observations emitted by the verifier at its abort-timer decisions,
    /// one line each, without timestamps.
    pub fn abort_timer_evidence(&self) -> String {
        let mut s = String::new();
        for (_, o) in &self.observations {
            if let Observation::AbortTimer(r) = o {
                let outs: Vec<String> = r.output_digests.iter().map(|d| d.short()).collect();
                s.push_str(&format!(
                    "seq={} request={} senders={} outputs=[{}] decision={:?}\n",
                    r.seq,
                    r.digest.short(),
                    r.senders,
                    outs.join(","),
                    r.decision
                ));
            }
        }
        s
    }

    pub fn verdict_summary(&self) -> String {
        self.verdicts
            .iter()
            .map(|v| match &v.detail {
                None => format!("PASS {}\n", v.name),
                Some(d) => format!("FAIL {}: {}\n", v.name, d),
            })
            .collect()
    }
}

struct ExecSlot {
    exec: Executor,
}

pub struct World {
    sc: Scenario,
    cfg: Arc<Config>,
    net: SimNet<Envelope, TimerKey>,
    registry: KeyRegistry,
    fronts: Vec<Front>,
    clients: Vec<Client>,
    verifier: Verifier,
    storage: VersionedStore,
    storage_key: Keypair,
    executors: HashMap<u32, ExecSlot>,
    exec_params: ExecutorParams,
    next_exec: u32,
    slots: HashMap<(u32, u64), u32>,
    /// Executors launched per seq by any spawner.
    launched: HashMap<u64, u32>,
    busy: HashMap<Identity, SimTime>,
    metrics: MetricsCollector,
    monitors: Monitors,
    observations: Vec<(SimTime, Observation)>,
    decided: Vec<DecidedRecord>,
}

pub fn run_scenario(sc: &Scenario) -> Result<RunOutput, ScenarioError> {
    sc.validate()?;
    let mut w = World::new(sc.clone());
    w.run();
    Ok(w.finish())
}

impl World {
    pub fn new(sc: Scenario) -> Self {
        let cfg = Arc::new(sc.config.clone());
        let mut registry = KeyRegistry::new();
        let mut net = SimNet::new(sc.network.clone(), stream(sc.seed, "network", 0), sc.retain_trace);
        let front_count = match sc.mode {
            Mode::ServerlessBft | Mode::PbftOnShim => cfg.n_r,
            Mode::NoShim => 1,
            Mode::ServerlessCft => 2 * cfg.f_r + 1,
        };
        let byzantine = sc.adversary.byzantine_nodes();
        let mut fronts = Vec::with_capacity(front_count);
        for i in 0..front_count as u32 {
            let id = Identity::node(i);
            net.register(id, sc.placement.node_region(i));
            let key = registry.issue(id).expect("fresh identity");
            let front = match sc.mode {
                Mode::ServerlessBft | Mode::PbftOnShim => {
                    let params = NodeParams {
                        cfg: cfg.clone(),
                        execute_locally: sc.mode == Mode::PbftOnShim,
                        keyspace: sc.workload.keyspace,
                        store_seed: sc.seed,
                    };
                    let adversary = sc
                        .adversary
                        .nodes
                        .iter()
                        .filter(|a| a.node == i)
                        .map(|a| a.strategies.clone())
                        .reduce(|mut a, b| {
                            a.extend(b);
                            a
                        })
                        .map(NodeAdversary::new);
                    debug_assert_eq!(adversary.is_some(), byzantine.contains(&i));
                    Front::Shim { node: Box::new(ShimNode::new(i, key, params)), adversary }
                }
                Mode::NoShim | Mode::ServerlessCft => {
                    let kind = match sc.mode {
                        Mode::NoShim => SequencerKind::NoShim,
                        _ => SequencerKind::Cft { members: front_count },
                    };
                    let verify_ds = !sc.processing.baseline_skips_client_ds;
                    Front::Sequencer(Sequencer::new(i, key, kind, cfg.clone(), verify_ds))
                }
            };
            fronts.push(front);
        }
        net.register(Identity::VERIFIER, sc.placement.verifier_region);
        net.register(Identity::STORAGE, sc.placement.storage_region);
        let verifier_key = registry.issue(Identity::VERIFIER).expect("fresh identity");
        let storage_key = registry.issue(Identity::STORAGE).expect("fresh identity");
        let expected_executors = if cfg.decentralized_spawning {
            decentralized_share(cfg.n_e, cfg.n_r, cfg.f_r, cfg.dark_pessimism) * cfg.n_r
        } else {
            cfg.n_e
        };
        let verifier = Verifier::new(
            verifier_key,
            VerifierParams {
                n_r: front_count,
                f_r: cfg.f_r,
                f_e: cfg.f_e,
                conflict_mode: cfg.conflict_mode,
                require_certificate: sc.mode == Mode::ServerlessBft,
                expected_executors,
                abort_base: cfg.timers.verifier_abort,
                resend_cooldown: cfg.timers.retransmit / 2,
                notify_all: true,
            },
        );
        let reply_mode = match sc.mode {
            Mode::PbftOnShim => ReplyMode::ShimReplies { f_r: cfg.f_r },
            _ => ReplyMode::Verifier,
        };
        let client_params = ClientParams { n_r: front_count, timeout: cfg.timers.client, reply_mode };
        let clients = (0..sc.workload.num_clients as u32)
            .map(|c| {
                let id = Identity::client(c);
                net.register(id, sc.placement.client_region);
                let key = registry.issue(id).expect("fresh identity");
                Client::new(key, sc.workload.clone(), client_params, stream(sc.seed, "workload", c as u64))
            })
            .collect();
        let exec_params = ExecutorParams {
            n_r: cfg.n_r,
            f_r: cfg.f_r,
            require_certificate: sc.mode == Mode::ServerlessBft,
        };
        Self {
            storage: VersionedStore::new(sc.workload.keyspace, sc.seed),
            monitors: Monitors::new(byzantine),
            sc,
            cfg,
            net,
            registry,
            fronts,
            clients,
            verifier,
            storage_key,
            executors: HashMap::new(),
            exec_params,
            next_exec: 0,
            slots: HashMap::new(),
            launched: HashMap::new(),
            busy: HashMap::new(),
            metrics: MetricsCollector::default(),
            observations: Vec::new(),
            decided: Vec::new(),
        }
    }

    fn clients_done(&self) -> bool {
        let bounded = self.sc.workload.txns_per_client.is_some() || !self.sc.workload.scripts.is_empty();
        bounded && self.clients.iter().all(|c| c.exhausted() && c.pending().next().is_none())
    }

    pub fn run(&mut self) {
        for i in 0..self.clients.len() {
            let mut out = Outbox::new(0);
            self.clients[i].start(&mut out);
            self.apply(Identity::client(i as u32), 0, None, out);
        }
        let mut stop = self.sc.duration;
        while let Some(ev) = self.net.next_event(stop) {
            let now = ev.at;
            match ev.kind {
                EventKind::Deliver { to, msg, .. } => self.deliver(now, to, msg),
                EventKind::TimerFire { owner, key, .. } => self.timer(now, owner, key),
                EventKind::ExecutorDone { executor } => self.executor_done(now, executor),
            }
            if stop == self.sc.duration && self.clients_done() {
                stop = stop.min(now + self.sc.settle);
            }
        }
    }

    fn deliver(&mut self, now: SimTime, to: Identity, env: Envelope) {
        let mut out = Outbox::new(now);
        let scheme = Some(env.scheme());
        match to.role {
            Role::ShimNode => match &mut self.fronts[to.id as usize] {
                Front::Shim { node, adversary } => {
                    if adversary.as_ref().is_some_and(|a| !a.admit(&env)) {
                        return;
                    }
                    node.on_message(env, &mut out);
                    if let Some(a) = adversary {
                        a.intercept(node, &self.cfg, &mut out);
                    }
                }
                Front::Sequencer(s) => s.on_message(env, &mut out),
            },
            Role::Client => self.clients[to.id as usize].on_message(env, &mut out),
            Role::Verifier => self.verifier.on_message(env, &mut self.storage, &mut out),
            Role::Storage => {
                if let Message::Fetch { keys } = env.payload() {
                    if env.signer().role == Role::Executor {
                        let values = self.storage.fetch(keys);
                        out.sign_send(&self.storage_key, env.signer(), Message::FetchReply { values }, Scheme::Mac);
                    }
                }
            }
            Role::Executor => {
                let Some(slot) = self.executors.get_mut(&to.id) else { return };
                slot.exec.on_message(env, &mut out);
                if slot.exec.is_finished() {
                    self.executors.remove(&to.id);
                }
            }
        }
        self.apply(to, now, scheme, out);
    }

    fn timer(&mut self, now: SimTime, owner: Identity, key: TimerKey) {
        let mut out = Outbox::new(now);
        match owner.role {
            Role::ShimNode => match &mut self.fronts[owner.id as usize] {
                Front::Shim { node, adversary } => {
                    node.on_timer(&key, &mut out);
                    if let Some(a) = adversary {
                        a.intercept(node, &self.cfg, &mut out);
                    }
                }
                Front::Sequencer(s) => s.on_timer(&key, &mut out),
            },
            Role::Client => self.clients[owner.id as usize].on_timer(&key, &mut out),
            Role::Verifier => self.verifier.on_timer(&key, &mut self.storage, &mut out),
            _ => {}
        }
        self.apply(owner, now, None, out);
    }

    fn executor_done(&mut self, now: SimTime, executor: Identity) {
        let mut out = Outbox::new(now);
        if let Some(slot) = self.executors.get_mut(&executor.id) {
            slot.exec.on_done(&mut out);
            if slot.exec.is_finished() {
                self.executors.remove(&executor.id);
            }
        }
        self.apply(executor, now, None, out);
    }

    fn apply(&mut self, emitter: Identity, now: SimTime, inbound: Option<Scheme>, out: Outbox) {
        let service = match emitter.role {
            Role::Client => 0,
            _ => self.sc.processing.service_time(inbound, &out.work, &out.actions),
        };
        let busy = self.busy.entry(emitter).or_insert(0);
        let finish = (*busy).max(now) + service;
        *busy = finish;
        for action in out.actions {
            match action {
                Action::Send { to, msg, delay } => {
                    self.monitors.check_send(emitter, &msg);
                    self.metrics.record_send(msg.payload().kind());
                    // Messages to components that do not exist in this mode are lost.
                    let _ = self.net.schedule_send_delayed(emitter, to, msg, finish, delay);
                }
                Action::Spawn { execute, delay } => self.spawn(emitter, execute, finish, delay),
                Action::SetTimer { key, after } => self.net.set_timer_at(emitter, key, finish + after),
                Action::CancelTimer { key } => self.net.cancel_timer(emitter, &key),
                Action::Done { after } => self.net.schedule_executor_done(emitter, finish + after),
                Action::Observe(o) => {
                    self.monitors.observe(&o);
                    if let Observation::Decided { seq, request, verdicts } = &o {
                        self.decided.push(DecidedRecord {
                            seq: *seq,
                            request: request.clone(),
                            verdicts: verdicts.clone(),
                        });
                    }
                    self.observations.push((finish, o));
                }
            }
        }
    }

    fn spawn(&mut self, spawner: Identity, execute: Envelope, depart: SimTime, delay: SimTime) {
        let seq = match execute.payload() {
            Message::Execute { seq, .. } => *seq,
            _ => return,
        };
        let slot = self.slots.entry((spawner.id, seq)).or_insert(0);
        let this_slot = *slot;
        *slot += 1;
        let id = Identity::executor(self.next_exec);
        self.next_exec += 1;
        self.net.register(id, self.sc.placement.executor_region(this_slot));
        let key = self.registry.issue(id).expect("fresh executor identity");
        let index = self.launched.entry(seq).or_insert(0);
        let strategy = self.sc.adversary.executor_strategy(seq, *index);
        *index += 1;
        self.executors.insert(id.id, ExecSlot { exec: Executor::new(key, self.exec_params, strategy) });
        self.metrics.record_spawn(spawner.id);
        self.monitors.record_spawn(spawner.id, seq);
        self.metrics.record_send(execute.payload().kind());
        self.monitors.check_send(spawner, &execute);
        let cold = self.net.sample_cold_start(id);
        let _ = self.net.schedule_send_delayed(spawner, id, execute, depart, delay + cold);
    }

    pub fn finish(self) -> RunOutput {
        let end = if self.clients_done() { self.net.now() } else { self.sc.duration };
        let completions: BTreeMap<u32, Vec<Completion>> = self
            .clients
            .iter()
            .enumerate()
            .map(|(i, c)| (i as u32, c.completions().to_vec()))
            .collect();
        let unfinished: Vec<TxnId> = self.clients.iter().flat_map(|c| c.pending().collect::<Vec<_>>()).collect();
        let closed_loop = if self.sc.workload.closed_loop {
            self.clients
                .iter()
                .find(|c| c.max_concurrent() > 1)
                .map(|c| format!("{} had {} pending transactions", c.identity(), c.max_concurrent()))
        } else {
            None
        };
        let serializability = if self.sc.mode == Mode::PbftOnShim {
            None
        } else {
            serializability_oracle(self.sc.workload.keyspace, self.sc.seed, &self.decided, &self.storage)
                .err()
                .map(|c| c.to_string())
        };
        let verdicts = self.monitors.verdicts(
            &self.storage,
            self.sc.mode == Mode::ServerlessBft,
            closed_loop,
            serializability,
        );
        let byzantine = self.sc.adversary.byzantine_nodes();
        let nodes = self
            .fronts
            .iter()
            .filter_map(|f| match f {
                Front::Shim { node, .. } => {
                    let (stable, stable_prefix) = node.stable_prefix();
                    Some(NodeSummary {
                        id: node.id(),
                        byzantine: byzantine.contains(&node.id()),
                        view: node.view(),
                        contiguous: node.contiguous(),
                        stable,
                        stable_prefix,
                    })
                }
                Front::Sequencer(_) => None,
            })
            .collect();
        let issued = self.clients.iter().map(|c| c.issued()).sum();
        let all: Vec<Completion> = completions.values().flatten().copied().collect();
        let metrics = self.metrics.report(RunSummary {
            scenario: &self.sc.name,
            mode: self.sc.mode.label(),
            seed: self.sc.seed,
            warmup: self.sc.warmup,
            end,
            n_nodes: self.fronts.len(),
            cost: &self.cfg.cost,
            issued,
            completions: all,
            max_view: self.monitors.max_view(),
        });
        let spawns = self.monitors.spawned_seqs().map(|s| (s, self.monitors.spawns_for(s))).collect();
        RunOutput {
            metrics,
            verdicts,
            trace: self.net.trace().clone(),
            observations: self.observations,
            decided: self.decided,
            storage: self.storage,
            nodes,
            completions,
            unfinished,
            max_view_change_votes: self.monitors.max_view_change_votes(),
            installed_views: self.monitors.installed_views(),
            spawns,
            net: self.net.stats(),
            end,
        }
    }
}
