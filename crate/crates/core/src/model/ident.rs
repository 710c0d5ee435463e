use std::fmt;

use serde::{Deserialize, Serialize};

use super::encode::Encode;

/// Simulated time in microseconds.
pub type SimTime = u64;

pub const MICROS_PER_MS: u64 = 1_000;
pub const MICROS_PER_SEC: u64 = 1_000_000;

pub fn ms(v: f64) -> SimTime {
    (v * MICROS_PER_MS as f64).round().max(0.0) as SimTime
}

pub fn to_ms(t: SimTime) -> f64 {
    t as f64 / MICROS_PER_MS as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Client,
    ShimNode,
    Executor,
    Verifier,
    Storage,
}

impl Role {
    fn tag(self) -> u8 {
        match self {
            Role::Client => 0,
            Role::ShimNode => 1,
            Role::Executor => 2,
            Role::Verifier => 3,
            Role::Storage => 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Identity {
    pub role: Role,
    pub id: u32,
}

impl Identity {
    pub const VERIFIER: Identity = Identity { role: Role::Verifier, id: 0 };
    pub const STORAGE: Identity = Identity { role: Role::Storage, id: 0 };

    pub const fn node(id: u32) -> Self {
        Identity { role: Role::ShimNode, id }
    }

    pub const fn client(id: u32) -> Self {
        Identity { role: Role::Client, id }
    }

    pub const fn executor(id: u32) -> Self {
        Identity { role: Role::Executor, id }
    }

    pub fn is_node(&self) -> bool {
        self.role == Role::ShimNode
    }
}

impl fmt::Display for Identity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.role {
            Role::Client => write!(f, "c{}", self.id),
            Role::ShimNode => write!(f, "n{}", self.id),
            Role::Executor => write!(f, "e{}", self.id),
            Role::Verifier => f.write_str("verifier"),
            Role::Storage => f.write_str("storage"),
        }
    }
}

impl Encode for Identity {
    fn encode(&self, out: &mut Vec<u8>) {
        out.push(self.role.tag());
        self.id.encode(out);
    }
}
