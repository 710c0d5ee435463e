//! Deterministic simulation of byzantine fault-tolerant transaction
//! processing over a shim of edge nodes, spawned serverless executors and a
//! trusted verifier in front of storage.

pub mod adversary;
pub mod effects;
pub mod executor;
pub mod harness;
pub mod model;
pub mod shim;
pub mod simnet;
pub mod storage;
pub mod verifier;
pub mod workload;
