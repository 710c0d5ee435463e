//! Run metrics: throughput, latency, aborts, message volume and cost.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::model::{to_ms, CostModel, MessageKind, SimTime};
use crate::workload::Completion;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct MessageTally {
    pub count: u64,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub mode: String,
    pub seed: u64,
    /// Validated transactions per simulated second after warmup.
    pub throughput: f64,
    pub latency_p50_ms: f64,
    pub latency_p90_ms: f64,
    pub latency_p99_ms: f64,
    pub latency_mean_ms: f64,
    pub issued: u64,
    pub committed: u64,
    pub aborted: u64,
    pub abort_rate: f64,
    /// Highest view installed by an honest node.
    pub max_view: u64,
    pub spawned: u64,
    pub messages: BTreeMap<String, MessageTally>,
    pub total_bytes: u64,
    pub cost_cents: BTreeMap<String, f64>,
    pub total_cost_cents: f64,
    pub cents_per_ktxn: f64,
}

pub const CSV_COLUMNS: &[&str] = &[
    "scenario",
    "mode",
    "seed",
    "throughput",
    "latency_p50_ms",
    "latency_p90_ms",
    "latency_p99_ms",
    "latency_mean_ms",
    "issued",
    "committed",
    "aborted",
    "abort_rate",
    "max_view",
    "spawned",
    "total_bytes",
    "total_cost_cents",
    "cents_per_ktxn",
];

impl MetricsReport {
    pub fn csv_header() -> String {
        CSV_COLUMNS.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut s = String::new();
        write!(
            s,
            "{},{},{},{:.3},{:.3},{:.3},{:.3},{:.3},{},{},{},{:.5},{},{},{},{:.6},{:.6}",
            self.scenario,
            self.mode,
            self.seed,
            self.throughput,
            self.latency_p50_ms,
            self.latency_p90_ms,
            self.latency_p99_ms,
            self.latency_mean_ms,
            self.issued,
            self.committed,
            self.aborted,
            self.abort_rate,
            self.max_view,
            self.spawned,
            self.total_bytes,
            self.total_cost_cents,
            self.cents_per_ktxn,
        )
        .expect("writing to a String");
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[SimTime], p: f64) -> SimTime {
    if sorted.is_empty() {
        return 0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Debug, Default)]
pub struct MetricsCollector {
    messages: BTreeMap<MessageKind, MessageTally>,
    spawns: BTreeMap<u32, u64>,
}

pub struct RunSummary<'a> {
    pub scenario: &'a str,
    pub mode: &'a str,
    pub seed: u64,
    pub warmup: SimTime,
    pub end: SimTime,
    pub n_nodes: usize,
    pub cost: &'a CostModel,
    pub issued: u64,
    pub completions: Vec<Completion>,
    pub max_view: u64,
}

impl MetricsCollector {
    pub fn record_send(&mut self, kind: MessageKind) {
        let t = self.messages.entry(kind).or_default();
        t.count += 1;
        t.bytes += kind.wire_size();
    }

    pub fn record_spawn(&mut self, node: u32) {
        *self.spawns.entry(node).or_default() += 1;
    }

    pub fn spawns_by(&self, node: u32) -> u64 {
        self.spawns.get(&node).copied().unwrap_or(0)
    }

    pub fn report(&self, run: RunSummary<'_>) -> MetricsReport {
        let window = run.end.saturating_sub(run.warmup).max(1);
        let measured: Vec<&Completion> = run.completions.iter().filter(|c| c.at >= run.warmup).collect();
        let committed_in_window = measured.iter().filter(|c| !c.aborted).count() as f64;
        let mut lat: Vec<SimTime> = measured.iter().map(|c| c.latency()).collect();
        lat.sort_unstable();
        let mean = if lat.is_empty() {
            0.0
        } else {
            lat.iter().map(|l| to_ms(*l)).sum::<f64>() / lat.len() as f64
        };
        let committed = run.completions.iter().filter(|c| !c.aborted).count() as u64;
        let aborted = run.completions.len() as u64 - committed;
        let finished = committed + aborted;
        let messages: BTreeMap<String, MessageTally> =
            self.messages.iter().map(|(k, t)| (k.label().to_string(), *t)).collect();
        let total_bytes = messages.values().map(|t| t.bytes).sum();
        let secs = run.end as f64 / 1e6;
        let cost_cents: BTreeMap<String, f64> = (0..run.n_nodes as u32)
            .map(|n| {
                let spawn = self.spawns_by(n) as f64 * run.cost.spawn_cents;
                (format!("n{n}"), spawn + secs * run.cost.node_cents_per_sec)
            })
            .collect();
        let total_cost_cents: f64 = cost_cents.values().sum();
        MetricsReport {
            scenario: run.scenario.to_string(),
            mode: run.mode.to_string(),
            seed: run.seed,
            throughput: committed_in_window / (window as f64 / 1e6),
            latency_p50_ms: to_ms(percentile(&lat, 50.0)),
            latency_p90_ms: to_ms(percentile(&lat, 90.0)),
            latency_p99_ms: to_ms(percentile(&lat, 99.0)),
            latency_mean_ms: mean,
            issued: run.issued,
            committed,
            aborted,
            abort_rate: if finished == 0 { 0.0 } else { aborted as f64 / finished as f64 },
            max_view: run.max_view,
            spawned: self.spawns.values().sum(),
            messages,
            total_bytes,
            cost_cents,
            total_cost_cents,
            cents_per_ktxn: if committed == 0 { 0.0 } else { total_cost_cents / (committed as f64 / 1000.0) },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_percentiles() {
        let v: Vec<SimTime> = (1..=10).collect();
        assert_eq!(percentile(&v, 50.0), 5);
        assert_eq!(percentile(&v, 90.0), 9);
        assert_eq!(percentile(&v, 99.0), 10);
        assert_eq!(percentile(&[], 50.0), 0);
    }

    #[test]
    fn bytes_are_count_times_size() {
        let mut m = MetricsCollector::default();
        for _ in 0..3 {
            m.record_send(MessageKind::Preprepare);
        }
        m.record_send(MessageKind::Commit);
        let cost = CostModel::default();
        let r = m.report(RunSummary {
            scenario: "t",
            mode: "serverless-bft",
            seed: 0,
            warmup: 0,
            end: 1_000_000,
            n_nodes: 1,
            cost: &cost,
            issued: 0,
            completions: Vec::new(),
            max_view: 0,
        });
        assert_eq!(r.total_bytes, 3 * 5392 + 220);
        assert_eq!(r.messages["preprepare"].count, 3);
    }

    #[test]
    fn csv_row_matches_header_width() {
        let m = MetricsCollector::default();
        let cost = CostModel::default();
        let r = m.report(RunSummary {
            scenario: "t",
            mode: "no-shim",
            seed: 0,
            warmup: 0,
            end: 10,
            n_nodes: 2,
            cost: &cost,
            issued: 0,
            completions: Vec::new(),
            max_view: 0,
        });
        assert_eq!(r.csv_row().split(',').count(), CSV_COLUMNS.len());
    }
}
