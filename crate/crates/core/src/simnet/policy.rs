use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::config::millis;
use crate::model::{ms, Identity, Role, SimTime};

use super::rng::StreamRng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyRange {
    #[serde(rename = "min_ms", with = "millis")]
    pub min: SimTime,
    #[serde(rename = "max_ms", with = "millis")]
    pub max: SimTime,
}

impl LatencyRange {
    pub fn new(min_ms: f64, max_ms: f64) -> Self {
        Self { min: ms(min_ms), max: ms(max_ms) }
    }

    pub fn constant(v_ms: f64) -> Self {
        Self::new(v_ms, v_ms)
    }

    pub fn sample(&self, rng: &mut StreamRng) -> SimTime {
        if self.max <= self.min {
            self.min
        } else {
            rng.gen_range(self.min..=self.max)
        }
    }
}

/// Latency override for messages from one region to another.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkLatency {
    pub from_region: u32,
    pub to_region: u32,
    #[serde(flatten)]
    pub range: LatencyRange,
}

/// Cuts the listed shim nodes off from everyone for a window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Partition {
    pub nodes: Vec<u32>,
    #[serde(rename = "from_ms", with = "millis")]
    pub from: SimTime,
    #[serde(rename = "until_ms", with = "millis")]
    pub until: SimTime,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionColdStart {
    pub region: u32,
    #[serde(flatten)]
    pub range: LatencyRange,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkPolicy {
    pub latency: LatencyRange,
    pub links: Vec<LinkLatency>,
    pub drop_prob: f64,
    pub dup_prob: f64,
    /// Global stabilization time. Drops, duplicates and partitions stop here.
    #[serde(rename = "gst_ms", with = "opt_millis")]
    pub gst: Option<SimTime>,
    pub partitions: Vec<Partition>,
    pub cold_start: LatencyRange,
    pub region_cold_start: Vec<RegionColdStart>,
}

mod opt_millis {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::model::{ms, to_ms, SimTime};

    pub fn serialize<S: Serializer>(t: &Option<SimTime>, s: S) -> Result<S::Ok, S::Error> {
        match t {
            Some(t) => s.serialize_some(&to_ms(*t)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<SimTime>, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.map(ms))
    }
}

impl Default for NetworkPolicy {
    fn default() -> Self {
        Self {
            latency: LatencyRange::new(1.0, 3.0),
            links: Vec::new(),
            drop_prob: 0.0,
            dup_prob: 0.0,
            gst: None,
            partitions: Vec::new(),
            cold_start: LatencyRange::new(3.0, 6.0),
            region_cold_start: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("{name} = {value} is outside [0, 1]")]
    Probability { name: &'static str, value: f64 },
    #[error("latency range min exceeds max")]
    InvertedRange,
}

impl NetworkPolicy {
    pub fn constant(latency_ms: f64) -> Self {
        Self {
            latency: LatencyRange::constant(latency_ms),
            cold_start: LatencyRange::constant(0.0),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        for (name, value) in [("drop_prob", self.drop_prob), ("dup_prob", self.dup_prob)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(PolicyError::Probability { name, value });
            }
        }
        let ranges = std::iter::once(&self.latency)
            .chain(std::iter::once(&self.cold_start))
            .chain(self.links.iter().map(|l| &l.range))
            .chain(self.region_cold_start.iter().map(|c| &c.range));
        for r in ranges {
            if r.min > r.max {
                return Err(PolicyError::InvertedRange);
            }
        }
        Ok(())
    }

    pub fn before_gst(&self, t: SimTime) -> bool {
        self.gst.is_none_or(|g| t < g)
    }

    pub fn link(&self, from_region: u32, to_region: u32) -> LatencyRange {
        self.links
            .iter()
            .find(|l| l.from_region == from_region && l.to_region == to_region)
            .map_or(self.latency, |l| l.range)
    }

    pub fn cold_start_for(&self, region: u32) -> LatencyRange {
        self.region_cold_start
            .iter()
            .find(|c| c.region == region)
            .map_or(self.cold_start, |c| c.range)
    }

    pub fn max_latency(&self) -> SimTime {
        self.links.iter().map(|l| l.range.max).fold(self.latency.max, SimTime::max)
    }

    pub fn partitioned(&self, from: Identity, to: Identity, t: SimTime) -> bool {
        let cut = |id: Identity| {
            self.partitions.iter().any(|p| {
                id.role == Role::ShimNode && p.nodes.contains(&id.id) && p.from <= t && t < p.until
            })
        };
        cut(from) || cut(to)
    }
}
