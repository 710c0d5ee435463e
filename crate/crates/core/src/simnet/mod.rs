//! Deterministic discrete-event network simulator.
//!
//! Events are processed in `(at, seqno)` order where `seqno` is assigned at
//! insertion. Timers are keyed by `(owner, key)`; re-arming or cancelling a
//! timer bumps its generation so stale fires are skipped.

pub mod policy;
pub mod rng;
pub mod trace;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fmt::Debug;
use std::hash::Hash;

use rand::Rng;
use thiserror::Error;

use crate::model::{digest_of, Digest, Encode, Envelope, Identity, SimTime};

pub use policy::{LatencyRange, LinkLatency, NetworkPolicy, Partition, PolicyError, RegionColdStart};
pub use rng::{stream, stream_seed, StreamRng};
pub use trace::{RecordKind, RunTrace, TraceRecord};

/// What the trace needs to know about a message.
pub trait Traceable {
    fn label(&self) -> &'static str;
    fn trace_tag(&self) -> Digest;
}

impl Traceable for Envelope {
    fn label(&self) -> &'static str {
        self.payload().kind().label()
    }

    fn trace_tag(&self) -> Digest {
        self.tag()
    }
}

pub trait TimerKeyLike: Clone + Debug + Eq + Hash + Encode {
    fn label(&self) -> &'static str;
}

#[derive(Clone, Debug)]
pub enum EventKind<M, K> {
    Deliver { from: Identity, to: Identity, msg: M },
    TimerFire { owner: Identity, key: K, generation: u64 },
    ExecutorDone { executor: Identity },
}

#[derive(Clone, Debug)]
pub struct SimEvent<M, K> {
    pub at: SimTime,
    pub seqno: u64,
    pub kind: EventKind<M, K>,
}

struct Queued<M, K>(SimEvent<M, K>);

impl<M, K> PartialEq for Queued<M, K> {
    fn eq(&self, other: &Self) -> bool {
        (self.0.at, self.0.seqno) == (other.0.at, other.0.seqno)
    }
}

impl<M, K> Eq for Queued<M, K> {}

impl<M, K> PartialOrd for Queued<M, K> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<M, K> Ord for Queued<M, K> {
    // Reversed so the max-heap pops the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.0.at, other.0.seqno).cmp(&(self.0.at, self.0.seqno))
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("unknown identity {0}")]
    UnknownIdentity(Identity),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NetStats {
    pub sends: u64,
    pub deliveries_enqueued: u64,
    pub dropped: u64,
    pub duplicated: u64,
    pub processed: u64,
    pub stale_timers: u64,
    pub timers_set: u64,
}

pub struct SimNet<M, K> {
    now: SimTime,
    next_seqno: u64,
    queue: BinaryHeap<Queued<M, K>>,
    timers: HashMap<(Identity, K), u64>,
    next_generation: u64,
    policy: NetworkPolicy,
    rng: StreamRng,
    regions: HashMap<Identity, u32>,
    trace: RunTrace,
    stats: NetStats,
}

impl<M: Clone + Traceable, K: TimerKeyLike> SimNet<M, K> {
    pub fn new(policy: NetworkPolicy, rng: StreamRng, retain_trace: bool) -> Self {
        Self {
            now: 0,
            next_seqno: 0,
            queue: BinaryHeap::new(),
            timers: HashMap::new(),
            next_generation: 0,
            policy,
            rng,
            regions: HashMap::new(),
            trace: RunTrace::new(retain_trace),
            stats: NetStats::default(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn policy(&self) -> &NetworkPolicy {
        &self.policy
    }

    pub fn stats(&self) -> NetStats {
        self.stats
    }

    pub fn trace(&self) -> &RunTrace {
        &self.trace
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn register(&mut self, id: Identity, region: u32) {
        self.regions.insert(id, region);
    }

    pub fn region_of(&self, id: Identity) -> Option<u32> {
        self.regions.get(&id).copied()
    }

    pub fn rng(&mut self) -> &mut StreamRng {
        &mut self.rng
    }

    fn push(&mut self, at: SimTime, kind: EventKind<M, K>) {
        let seqno = self.next_seqno;
        self.next_seqno += 1;
        self.queue.push(Queued(SimEvent { at, seqno, kind }));
    }

    /// Enqueues zero or more deliveries of `msg` departing at `depart`.
    pub fn schedule_send(
        &mut self,
        from: Identity,
        to: Identity,
        msg: M,
        depart: SimTime,
    ) -> Result<usize, SimError> {
        self.schedule_send_delayed(from, to, msg, depart, 0)
    }

    /// Like [`schedule_send`](Self::schedule_send) with `extra` added to the
    /// sampled latency.
    pub fn schedule_send_delayed(
        &mut self,
        from: Identity,
        to: Identity,
        msg: M,
        depart: SimTime,
        extra: SimTime,
    ) -> Result<usize, SimError> {
        let from_region = self.region_of(from).ok_or(SimError::UnknownIdentity(from))?;
        let to_region = self.region_of(to).ok_or(SimError::UnknownIdentity(to))?;
        self.stats.sends += 1;
        let unstable = self.policy.before_gst(depart);
        if unstable {
            if self.policy.partitioned(from, to, depart) {
                self.stats.dropped += 1;
                return Ok(0);
            }
            if self.policy.drop_prob > 0.0 && self.rng.gen_bool(self.policy.drop_prob) {
                self.stats.dropped += 1;
                return Ok(0);
            }
        }
        let copies = if unstable && self.policy.dup_prob > 0.0 && self.rng.gen_bool(self.policy.dup_prob) {
            self.stats.duplicated += 1;
            2
        } else {
            1
        };
        let range = self.policy.link(from_region, to_region);
        for _ in 0..copies {
            let latency = range.sample(&mut self.rng);
            self.push(depart + latency + extra, EventKind::Deliver { from, to, msg: msg.clone() });
            self.stats.deliveries_enqueued += 1;
        }
        Ok(copies)
    }

    pub fn sample_cold_start(&mut self, executor: Identity) -> SimTime {
        let region = self.region_of(executor).unwrap_or(0);
        self.policy.cold_start_for(region).sample(&mut self.rng)
    }

    /// Arms `(owner, key)` to fire at `deadline`, replacing any active timer.
    pub fn set_timer_at(&mut self, owner: Identity, key: K, deadline: SimTime) {
        let generation = self.next_generation;
        self.next_generation += 1;
        self.timers.insert((owner, key.clone()), generation);
        self.stats.timers_set += 1;
        self.push(deadline, EventKind::TimerFire { owner, key, generation });
    }

    pub fn set_timer(&mut self, owner: Identity, key: K, duration: SimTime) {
        self.set_timer_at(owner, key, self.now + duration);
    }

    pub fn cancel_timer(&mut self, owner: Identity, key: &K) {
        self.timers.remove(&(owner, key.clone()));
    }

    pub fn timer_active(&self, owner: Identity, key: &K) -> bool {
        self.timers.contains_key(&(owner, key.clone()))
    }

    pub fn schedule_executor_done(&mut self, executor: Identity, at: SimTime) {
        self.push(at, EventKind::ExecutorDone { executor });
    }

    /// Pops the next live event at or before `stop`, advancing the clock.
    pub fn next_event(&mut self, stop: SimTime) -> Option<SimEvent<M, K>> {
        loop {
            let head = self.queue.peek()?;
            if head.0.at > stop {
                return None;
            }
            let ev = self.queue.pop().expect("peeked").0;
            if let EventKind::TimerFire { owner, key, generation } = &ev.kind {
                let live = self.timers.get(&(*owner, key.clone())) == Some(generation);
                if !live {
                    self.stats.stale_timers += 1;
                    continue;
                }
                self.timers.remove(&(*owner, key.clone()));
            }
            self.now = ev.at;
            self.stats.processed += 1;
            self.trace.push(record_of(&ev));
            return Some(ev);
        }
    }

    /// Processes events up to `stop` or until the queue drains.
    pub fn run_until<F>(&mut self, stop: SimTime, mut handler: F) -> &RunTrace
    where
        F: FnMut(&mut Self, SimEvent<M, K>),
    {
        while let Some(ev) = self.next_event(stop) {
            handler(self, ev);
        }
        &self.trace
    }
}

fn record_of<M: Traceable, K: TimerKeyLike>(ev: &SimEvent<M, K>) -> TraceRecord {
    match &ev.kind {
        EventKind::Deliver { from, to, msg } => TraceRecord {
            at: ev.at,
            seqno: ev.seqno,
            kind: RecordKind::Deliver,
            src: *from,
            dst: Some(*to),
            label: msg.label(),
            tag: msg.trace_tag(),
        },
        EventKind::TimerFire { owner, key, .. } => TraceRecord {
            at: ev.at,
            seqno: ev.seqno,
            kind: RecordKind::Timer,
            src: *owner,
            dst: None,
            label: key.label(),
            tag: digest_of(key),
        },
        EventKind::ExecutorDone { executor } => TraceRecord {
            at: ev.at,
            seqno: ev.seqno,
            kind: RecordKind::ExecutorDone,
            src: *executor,
            dst: None,
            label: "executor-done",
            tag: Digest::ZERO,
        },
    }
}
