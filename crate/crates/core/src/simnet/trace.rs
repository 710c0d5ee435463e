use std::fmt::Write as _;

use crate::model::{to_ms, Digest, Encode, Identity, SimTime};
use crate::model::digest::StreamDigest;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecordKind {
    Deliver,
    Timer,
    ExecutorDone,
}

impl RecordKind {
    fn tag(self) -> u8 {
        match self {
            RecordKind::Deliver => 0,
            RecordKind::Timer => 1,
            RecordKind::ExecutorDone => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceRecord {
    pub at: SimTime,
    pub seqno: u64,
    pub kind: RecordKind,
    pub src: Identity,
    pub dst: Option<Identity>,
    pub label: &'static str,
    pub tag: Digest,
}

impl Encode for TraceRecord {
    fn encode(&self, out: &mut Vec<u8>) {
        self.at.encode(out);
        self.seqno.encode(out);
        out.push(self.kind.tag());
        self.src.encode(out);
        self.dst.encode(out);
        self.label.encode(out);
        self.tag.encode(out);
    }
}

impl TraceRecord {
    pub fn to_line(&self) -> String {
        let mut s = format!("{:.3} #{} ", to_ms(self.at), self.seqno);
        match self.kind {
            RecordKind::Deliver => {
                let dst = self.dst.expect("deliver has a destination");
                let _ = write!(s, "deliver {}->{} {}", self.src, dst, self.label);
            }
            RecordKind::Timer => {
                let _ = write!(s, "timer {} {}", self.src, self.label);
            }
            RecordKind::ExecutorDone => {
                let _ = write!(s, "done {}", self.src);
            }
        }
        let _ = write!(s, " {}", self.tag.short());
        s
    }
}

/// Append-only log of processed events with a running digest.
#[derive(Clone, Default)]
pub struct RunTrace {
    hash: StreamDigest,
    count: u64,
    retain: bool,
    records: Vec<TraceRecord>,
}

impl RunTrace {
    pub fn new(retain: bool) -> Self {
        Self { hash: StreamDigest::new(), count: 0, retain, records: Vec::new() }
    }

    pub fn push(&mut self, record: TraceRecord) {
        let mut bytes = Vec::with_capacity(96);
        record.encode(&mut bytes);
        self.hash.update(&bytes);
        self.count += 1;
        if self.retain {
            self.records.push(record);
        }
    }

    pub fn len(&self) -> u64 {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn digest(&self) -> Digest {
        self.hash.finish()
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&r.to_line());
            s.push('\n');
        }
        s
    }
}
