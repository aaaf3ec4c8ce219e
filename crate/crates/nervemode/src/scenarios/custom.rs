//! A configuration-defined scenario: an arbitrary nerve, a constant
//! score table standing in for the evaluation functions, and declared
//! transition pairs realised as identity maps. Useful for validating
//! portfolio designs and for driving the supervisor into chosen corners
//! (partiality, contradiction, missing transitions) from a file.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::modes::{ModeRegistry, ModeState, Orders, ScoreVector, Thresholds};
use crate::nerve::{ModeId, Nerve};
use crate::supervisor::{self, Decision, Strategy, SupervisorConfig, SupervisorState};
use crate::trace::{SystemRecord, Trace, TraceRecord};
use crate::transitions::{TransitionMap, TransitionRegistry};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CustomError {
    #[error("invalid custom scenario: {0}")]
    ConfigInvalid(String),
}

#[derive(Debug, Clone)]
pub struct CustomScenario {
    pub nerve: Nerve,
    pub initial_mode: ModeId,
    /// Constant evaluation scores, total over the nerve vertices.
    pub scores: BTreeMap<ModeId, f64>,
    /// (from, to, degraded_only) pairs, realised as identity maps.
    pub transition_pairs: Vec<(ModeId, ModeId, bool)>,
    pub safety_orders: BTreeMap<ModeId, Orders>,
    pub strategy: Strategy,
    pub thresholds: Thresholds,
    pub dt: f64,
}

impl CustomScenario {
    pub fn validate(&self) -> Result<(), CustomError> {
        if !self.nerve.has_vertex(&self.initial_mode) {
            return Err(CustomError::ConfigInvalid(format!(
                "initial mode `{}` is not a nerve vertex",
                self.initial_mode
            )));
        }
        for v in self.nerve.vertices() {
            match self.scores.get(v) {
                None => {
                    return Err(CustomError::ConfigInvalid(format!(
                        "no score for mode `{v}`"
                    )))
                }
                Some(s) if !(0.0..=1.0).contains(s) => {
                    return Err(CustomError::ConfigInvalid(format!(
                        "score {s} for `{v}` is outside [0,1]"
                    )))
                }
                _ => {}
            }
        }
        for (from, to, _) in &self.transition_pairs {
            for m in [from, to] {
                if !self.nerve.has_vertex(m) {
                    return Err(CustomError::ConfigInvalid(format!(
                        "transition endpoint `{m}` is not a nerve vertex"
                    )));
                }
            }
        }
        if let Strategy::FailSafe(safe) = &self.strategy {
            if !self.nerve.has_vertex(safe) {
                return Err(CustomError::ConfigInvalid(format!(
                    "fail-safe mode `{safe}` is not a nerve vertex"
                )));
            }
        }
        if self.dt <= 0.0 {
            return Err(CustomError::ConfigInvalid(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        Ok(())
    }

    fn registries(&self) -> (ModeRegistry, TransitionRegistry) {
        let mut modes = ModeRegistry::new(self.nerve.clone());
        let table: Vec<(ModeId, f64)> =
            self.scores.iter().map(|(m, &s)| (m.clone(), s)).collect();
        for v in self.nerve.vertices() {
            let table = table.clone();
            modes
                .register_mode(
                    v.clone(),
                    Box::new(move |_: &ModeId, _: &ModeState, _: &Orders| {
                        ScoreVector::new(table.iter().cloned()).expect("validated scores")
                    }),
                )
                .expect("vertices are unique");
        }
        let mut transitions = TransitionRegistry::new();
        for (from, to, degraded_only) in &self.transition_pairs {
            let map: TransitionMap =
                Box::new(|s: &ModeState, o: &Orders| (s.clone(), o.clone()));
            if *degraded_only {
                transitions.register_degraded_only(from.clone(), to.clone(), map);
            } else {
                transitions.register(from.clone(), to.clone(), map);
            }
        }
        (modes, transitions)
    }
}

/// Steps the supervisor over the constant score table.
pub fn run_custom(scenario: &CustomScenario, seed: u64, steps: u64) -> Result<Trace, CustomError> {
    scenario.validate()?;
    let (modes, transitions) = scenario.registries();

    let mut sup_config = SupervisorConfig::new(scenario.thresholds);
    sup_config.strategy = scenario.strategy.clone();
    sup_config.safety_orders = scenario.safety_orders.clone();

    let mut sup = SupervisorState::new(scenario.initial_mode.clone());
    let picture = ModeState::new();
    let orders = Orders::new();

    let mut trace = Trace::new("custom", seed);
    for step_index in 0..steps {
        let now = step_index as f64 * scenario.dt;
        let mode_before = sup.current.clone();
        let outcome =
            supervisor::step(&sup_config, &mut sup, now, &picture, &orders, &modes, &transitions)
                .expect("evaluators registered for every vertex");
        let target = match &outcome.decision {
            Decision::Transition { to, .. } | Decision::DegradedTransition { to, .. } => {
                Some(to.as_str().to_owned())
            }
            _ => None,
        };
        trace.records.push(TraceRecord {
            step: step_index,
            time: now,
            systems: vec![SystemRecord {
                id: "system".into(),
                mode: mode_before.as_str().to_owned(),
                scores: outcome
                    .scores
                    .iter()
                    .map(|(m, s)| (m.as_str().to_owned(), s))
                    .collect(),
                outcome: outcome.outcome_tag().to_owned(),
                decision: outcome.decision.tag().to_owned(),
                target,
                flags: vec![],
                undefined: vec![],
                urgent_queries: vec![],
                state: BTreeMap::new(),
                truth: BTreeMap::new(),
            }],
            events: vec![],
        });
    }
    Ok(trace)
}
