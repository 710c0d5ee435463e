//! Shim nodes and the helpers they use for spawning, view change and checkpoints.

pub mod checkpoint;
pub mod known_rw;
pub mod node;
pub mod spawn;
pub mod view_change;

pub use node::{NodeParams, ShimNode, Status};
pub use spawn::decentralized_share;
