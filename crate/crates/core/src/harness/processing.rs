//! CPU cost of handling one event at a component.
//!
//! A component handles one event at a time. The handler's outputs leave when
//! its service time has elapsed after the later of the arrival and the end of
//! the previous handler.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::effects::{Action, Work};
use crate::model::{Digest, Scheme, SimTime};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProcessingModel {
    pub handler_us: f64,
    pub ds_sign_us: f64,
    pub ds_verify_us: f64,
    pub mac_us: f64,
    pub send_us: f64,
    pub txn_exec_us: f64,
    pub txn_check_us: f64,
    pub spawn_us: f64,
    /// Shim nodes of the unreplicated and crash-tolerant baselines skip the
    /// client signature check.
    pub baseline_skips_client_ds: bool,
}

impl Default for ProcessingModel {
    fn default() -> Self {
        Self {
            handler_us: 2.0,
            ds_sign_us: 10.0,
            ds_verify_us: 25.0,
            mac_us: 1.0,
            send_us: 2.0,
            txn_exec_us: 5.0,
            txn_check_us: 2.0,
            spawn_us: 150.0,
            baseline_skips_client_ds: true,
        }
    }
}

impl ProcessingModel {
    /// Zero-cost processing, for tests that reason about latency alone.
    pub fn instant() -> Self {
        Self {
            handler_us: 0.0,
            ds_sign_us: 0.0,
            ds_verify_us: 0.0,
            mac_us: 0.0,
            send_us: 0.0,
            txn_exec_us: 0.0,
            txn_check_us: 0.0,
            spawn_us: 0.0,
            baseline_skips_client_ds: true,
        }
    }

    pub fn service_time(&self, inbound: Option<Scheme>, work: &Work, actions: &[Action]) -> SimTime {
        let mut us = self.handler_us;
        us += match inbound {
            Some(Scheme::Ds) => self.ds_verify_us,
            Some(Scheme::Mac) => self.mac_us,
            None => 0.0,
        };
        us += work.ds_verify as f64 * self.ds_verify_us;
        us += work.mac_verify as f64 * self.mac_us;
        us += work.txn_exec as f64 * self.txn_exec_us;
        us += work.txn_check as f64 * self.txn_check_us;
        let mut signed: BTreeSet<Digest> = BTreeSet::new();
        for a in actions {
            match a {
                Action::Send { msg, .. } => {
                    us += self.send_us;
                    if signed.insert(msg.tag()) {
                        us += match msg.scheme() {
                            Scheme::Ds => self.ds_sign_us,
                            Scheme::Mac => self.mac_us,
                        };
                    }
                }
                Action::Spawn { execute, .. } => {
                    us += self.spawn_us;
                    if signed.insert(execute.tag()) {
                        us += self.ds_sign_us;
                    }
                }
                _ => {}
            }
        }
        (us.round() as SimTime) + work.compute
    }
}
