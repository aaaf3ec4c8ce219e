//! The executable scenarios: a two-car chicane race, a three-planet
//! tracking system with cooperating nodes, and a chart atlas on the
//! circle. Each is a single-threaded deterministic loop wired through
//! the mode registry, transition table, supervisor and oracle bus.

pub mod chicane;
pub mod custom;
pub mod manifold;
pub mod solar;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::modes::{ModeState, VarEntry};
use crate::oracle::QualityFlag;
use crate::trace::VarSnapshot;

/// One fault-injection window, addressed to a named system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemFault {
    pub system: String,
    pub variable: String,
    pub from: f64,
    pub until: f64,
    pub flag: QualityFlag,
}

pub(crate) fn state_snapshot(state: &ModeState) -> BTreeMap<String, Option<VarSnapshot>> {
    state
        .variables()
        .map(|(name, entry)| {
            let snap = match entry {
                VarEntry::Defined { value, error_bound, timestamp } => {
                    Some(VarSnapshot { value: *value, error: *error_bound, time: *timestamp })
                }
                VarEntry::Undefined => None,
            };
            (name.to_owned(), snap)
        })
        .collect()
}

/// Shortest distance between two positions on a circular track.
pub(crate) fn circular_distance(a: f64, b: f64, length: f64) -> f64 {
    let d = (a - b).rem_euclid(length);
    d.min(length - d)
}
