//! Validation of view-change evidence and NewView sequence assignments.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::model::{verify_signed, Envelope, Message, PreparedProof, Request, Role, Scheme};

fn primary_of(view: u64, n_r: usize) -> u32 {
    (view % n_r as u64) as u32
}

/// A proof holds the view's Preprepare plus Prepares from distinct backups,
/// together reaching `2f+1` votes for one (view, seq, digest).
pub fn validate_proof(p: &PreparedProof, n_r: usize, f_r: usize) -> bool {
    let primary = primary_of(p.view, n_r);
    let pp = &p.preprepare;
    if pp.signer().role != Role::ShimNode || pp.signer().id != primary || !verify_signed(pp, None) {
        return false;
    }
    match pp.payload() {
        Message::Preprepare { view, seq, digest, request }
            if *view == p.view
                && *seq == p.seq
                && *digest == p.digest
                && request.digest() == p.digest
                && p.request.digest() == p.digest
                && p.request.recompute_digest() == p.digest => {}
        _ => return false,
    }
    let mut backups = BTreeSet::new();
    for e in &p.prepares {
        let s = e.signer();
        if s.role != Role::ShimNode || s.id as usize >= n_r || s.id == primary {
            return false;
        }
        if !verify_signed(e, None) {
            return false;
        }
        match e.payload() {
            Message::Prepare { view, seq, digest }
                if *view == p.view && *seq == p.seq && *digest == p.digest => {}
            _ => return false,
        }
        backups.insert(s.id);
    }
    backups.len() + 1 > 2 * f_r
}

/// Checks a ViewChange envelope for `new_view`; returns its sender.
pub fn validate_view_change(env: &Envelope, new_view: u64, n_r: usize, f_r: usize) -> Option<u32> {
    let s = env.signer();
    if s.role != Role::ShimNode || s.id as usize >= n_r || env.scheme() != Scheme::Ds {
        return None;
    }
    if !verify_signed(env, None) {
        return None;
    }
    match env.payload() {
        Message::ViewChange { new_view: v, stable_seq, proofs } if *v == new_view => proofs
            .iter()
            .all(|p| p.view < new_view && p.seq > *stable_seq && validate_proof(p, n_r, f_r))
            .then_some(s.id),
        _ => None,
    }
}

#[derive(Clone, Debug)]
pub struct Assignments {
    /// Highest stable checkpoint among the votes.
    pub base: u64,
    pub entries: Vec<(u64, Arc<Request>)>,
}

impl Assignments {
    pub fn last_seq(&self) -> u64 {
        self.entries.last().map_or(self.base, |(s, _)| *s)
    }
}

/// Per sequence number above the highest stable checkpoint, the request of
/// the highest-view proof, with no-ops filling the gaps.
pub fn compute_assignments(votes: &[Envelope], new_view: u64) -> Assignments {
    let mut base = 0;
    let mut best: BTreeMap<u64, &PreparedProof> = BTreeMap::new();
    for v in votes {
        if let Message::ViewChange { stable_seq, .. } = v.payload() {
            base = base.max(*stable_seq);
        }
    }
    for v in votes {
        if let Message::ViewChange { proofs, .. } = v.payload() {
            for p in proofs.iter().filter(|p| p.seq > base) {
                let keep = best.get(&p.seq).is_none_or(|b| p.view > b.view);
                if keep {
                    best.insert(p.seq, p);
                }
            }
        }
    }
    let top = best.keys().next_back().copied().unwrap_or(base);
    let entries = (base + 1..=top)
        .map(|s| match best.get(&s) {
            Some(p) => (s, p.request.clone()),
            None => (s, Request::noop(new_view, s)),
        })
        .collect();
    Assignments { base, entries }
}
