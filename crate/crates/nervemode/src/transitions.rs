//! Guarded partial transition functions between modes: applying a
//! registered transition redraws one mode's picture and orders in the
//! target mode's terms. Outputs the map could not determine are explicit
//! undefined markers, flagged so a supervisor can query for them at high
//! priority.
//!
//! Two paths from one mode to another — direct, or through an
//! intermediate mode — should agree where both are defined;
//! [`TransitionRegistry::check_composition`] audits that numerically.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::modes::{Directive, ModeState, Orders, ScoreVector, Thresholds};
use crate::nerve::{ModeId, Nerve};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransitionError {
    #[error("no transition registered from `{from}` to `{to}`")]
    NoSuchTransition { from: String, to: String },
    #[error("guard violated: score {score} for `{to}` is not above p_low {p_low}")]
    GuardViolation { to: String, score: f64, p_low: f64 },
}

/// The state/orders conversion of one registered transition.
pub type TransitionMap = Box<dyn Fn(&ModeState, &Orders) -> (ModeState, Orders) + Send + Sync>;

/// Result of a successful transition application.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionOutput {
    pub state: ModeState,
    pub orders: Orders,
    /// Variables the map left undefined in the produced state; these are
    /// the ones worth querying for urgently.
    pub undefined_outputs: Vec<String>,
}

struct TransitionEntry {
    map: TransitionMap,
    /// Marked in configuration as usable only on the degraded path.
    degraded_only: bool,
}

/// Registry of transition functions, keyed by (from, to). Immutable once
/// a scenario is set up; application is pure.
#[derive(Default)]
pub struct TransitionRegistry {
    entries: BTreeMap<(ModeId, ModeId), TransitionEntry>,
}

impl TransitionRegistry {
    pub fn new() -> Self {
        TransitionRegistry::default()
    }

    pub fn register(&mut self, from: ModeId, to: ModeId, map: TransitionMap) {
        self.entries.insert((from, to), TransitionEntry { map, degraded_only: false });
    }

    pub fn register_degraded_only(&mut self, from: ModeId, to: ModeId, map: TransitionMap) {
        self.entries.insert((from, to), TransitionEntry { map, degraded_only: true });
    }

    pub fn has(&self, from: &ModeId, to: &ModeId) -> bool {
        self.entries.contains_key(&(from.clone(), to.clone()))
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&ModeId, &ModeId)> {
        self.entries.keys().map(|(f, t)| (f, t))
    }

    pub fn is_degraded_only(&self, from: &ModeId, to: &ModeId) -> bool {
        self.entries
            .get(&(from.clone(), to.clone()))
            .map(|e| e.degraded_only)
            .unwrap_or(false)
    }

    /// Applies the registered transition `from → to`.
    ///
    /// The guard requires the target's score strictly above `p_low`;
    /// `allow_degraded` overrides it for the partiality path, where the
    /// supervisor knowingly moves to an uncertified description.
    #[allow(clippy::too_many_arguments)]
    pub fn apply(
        &self,
        from: &ModeId,
        to: &ModeId,
        state: &ModeState,
        orders: &Orders,
        scores: &ScoreVector,
        thresholds: Thresholds,
        allow_degraded: bool,
    ) -> Result<TransitionOutput, TransitionError> {
        let entry = self.entries.get(&(from.clone(), to.clone())).ok_or_else(|| {
            TransitionError::NoSuchTransition {
                from: from.as_str().to_owned(),
                to: to.as_str().to_owned(),
            }
        })?;
        let score = scores.get(to);
        if score <= thresholds.p_low && !allow_degraded {
            return Err(TransitionError::GuardViolation {
                to: to.as_str().to_owned(),
                score,
                p_low: thresholds.p_low,
            });
        }
        let (new_state, new_orders) = (entry.map)(state, orders);
        let undefined_outputs = new_state.undefined_variables();
        Ok(TransitionOutput { state: new_state, orders: new_orders, undefined_outputs })
    }

    /// Registered pairs that do not share an edge of the nerve and are
    /// not marked degraded-only. A gap here is a design smell, not an
    /// error: configuration validation reports it as a warning.
    pub fn adjacency_gaps(&self, nerve: &Nerve) -> Vec<(ModeId, ModeId)> {
        self.entries
            .iter()
            .filter(|((from, to), entry)| {
                !entry.degraded_only && !nerve.is_simplex([from, to])
            })
            .map(|((from, to), _)| (from.clone(), to.clone()))
            .collect()
    }

    /// Modes reachable by some registered transition that have no
    /// registered way out. Transferring into such a mode strands the
    /// supervisor, so setup rejects them.
    pub fn dead_end_modes(&self) -> Vec<ModeId> {
        let mut reachable: BTreeSet<&ModeId> = BTreeSet::new();
        let mut has_exit: BTreeSet<&ModeId> = BTreeSet::new();
        for (from, to) in self.entries.keys() {
            reachable.insert(to);
            has_exit.insert(from);
        }
        reachable
            .into_iter()
            .filter(|m| !has_exit.contains(*m))
            .cloned()
            .collect()
    }

    /// Numerically audits `τ_to_from` against `τ_to_via ∘ τ_via_from` on
    /// the given samples.
    ///
    /// A sample is checked only when all three guards hold: `via` and
    /// `to` adequate from `from`'s viewpoint, and `to` adequate from
    /// `via`'s viewpoint after the first hop; other samples count as
    /// skipped. States are compared on variables defined in both results;
    /// numeric directives by absolute difference, discrete ones by
    /// equality.
    #[allow(clippy::too_many_arguments)]
    pub fn check_composition<F>(
        &self,
        from: &ModeId,
        via: &ModeId,
        to: &ModeId,
        samples: &[(ModeState, Orders)],
        score_fn: F,
        thresholds: Thresholds,
        tolerance: f64,
    ) -> Result<CompositionReport, TransitionError>
    where
        F: Fn(&ModeId, &ModeState, &Orders) -> ScoreVector,
    {
        assert!(tolerance > 0.0, "tolerance must be positive");
        for (a, b) in [(from, via), (via, to), (from, to)] {
            if !self.has(a, b) {
                return Err(TransitionError::NoSuchTransition {
                    from: a.as_str().to_owned(),
                    to: b.as_str().to_owned(),
                });
            }
        }

        let mut report = CompositionReport {
            tolerance,
            ..CompositionReport::default()
        };
        for (state, orders) in samples {
            let scores_at_start = score_fn(from, state, orders);
            if scores_at_start.get(via) <= thresholds.p_low
                || scores_at_start.get(to) <= thresholds.p_low
            {
                report.skipped += 1;
                continue;
            }
            let hop = self.apply(from, via, state, orders, &scores_at_start, thresholds, false)?;
            let scores_at_via = score_fn(via, &hop.state, &hop.orders);
            if scores_at_via.get(to) <= thresholds.p_low {
                report.skipped += 1;
                continue;
            }
            let composed =
                self.apply(via, to, &hop.state, &hop.orders, &scores_at_via, thresholds, false)?;
            let direct =
                self.apply(from, to, state, orders, &scores_at_start, thresholds, false)?;

            report.checked += 1;
            compare_states(&direct.state, &composed.state, &mut report);
            compare_orders(&direct.orders, &composed.orders, &mut report);
        }
        Ok(report)
    }
}

/// Outcome of a composition-consistency audit.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CompositionReport {
    pub checked: usize,
    pub skipped: usize,
    /// Largest absolute difference over compared values and numeric
    /// directives; 0 when nothing was compared.
    pub max_deviation: f64,
    /// Variables defined in one composed result but not the other.
    pub definedness_mismatches: usize,
    /// Discrete directives that differ or exist on one side only.
    pub discrete_mismatches: usize,
    pub tolerance: f64,
}

impl CompositionReport {
    pub fn consistent(&self) -> bool {
        self.max_deviation <= self.tolerance
            && self.definedness_mismatches == 0
            && self.discrete_mismatches == 0
    }
}

fn compare_states(direct: &ModeState, composed: &ModeState, report: &mut CompositionReport) {
    let names: BTreeSet<&str> = direct
        .variables()
        .map(|(n, _)| n)
        .chain(composed.variables().map(|(n, _)| n))
        .collect();
    for name in names {
        let a = direct.get(name).and_then(|e| e.value());
        let b = composed.get(name).and_then(|e| e.value());
        match (a, b) {
            (Some(x), Some(y)) => {
                report.max_deviation = report.max_deviation.max((x - y).abs());
            }
            (None, None) => {}
            _ => report.definedness_mismatches += 1,
        }
    }
}

fn compare_orders(direct: &Orders, composed: &Orders, report: &mut CompositionReport) {
    let names: BTreeSet<&str> = direct
        .directives()
        .map(|(n, _)| n)
        .chain(composed.directives().map(|(n, _)| n))
        .collect();
    for name in names {
        match (direct.get(name), composed.get(name)) {
            (Some(Directive::Number(x)), Some(Directive::Number(y))) => {
                report.max_deviation = report.max_deviation.max((x - y).abs());
            }
            (Some(a), Some(b)) if a == b => {}
            _ => report.discrete_mismatches += 1,
        }
    }
}

/// Builds the common schema-projection transition: the target picture
/// keeps `target_vars`, copying each from the source where defined and
/// marking the rest undefined. Orders pass through unchanged.
pub fn projection(target_vars: &[&str]) -> TransitionMap {
    let vars: Vec<String> = target_vars.iter().map(|s| (*s).to_owned()).collect();
    Box::new(move |state: &ModeState, orders: &Orders| {
        let mut out = ModeState::new();
        for name in &vars {
            match state.get(name) {
                Some(crate::modes::VarEntry::Defined { value, error_bound, timestamp }) => {
                    out.update(name, *value, *error_bound, *timestamp)
                        .expect("fresh state accepts any timestamp");
                }
                _ => out.set_undefined(name),
            }
        }
        (out, orders.clone())
    })
}
