//! The supervising decision component: normal running with hysteresis,
//! trend-based tie-breaking, partiality handling biased towards nearby
//! modes, and the four contradiction strategies.
//!
//! One supervisor instance governs one simulated system and is stepped
//! by a single driver; each step yields exactly one decision.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::modes::{
    classify, ClassificationOutcome, ModeError, ModeRegistry, ModeState, Orders, ScoreVector,
    Thresholds,
};
use crate::nerve::{ModeId, Nerve, NervePoint};
use crate::transitions::{TransitionError, TransitionOutput, TransitionRegistry};

/// Default history window for the approach-trend tie-break.
pub const DEFAULT_HISTORY_WINDOW: usize = 3;
/// Default score penalty per 1-skeleton edge when searching for a mode
/// under partiality.
pub const DEFAULT_PARTIALITY_BIAS: f64 = 0.05;

const SLOPE_TIE: f64 = 1e-12;

/// What to do when the adequate modes are not jointly certified.
#[derive(Debug, Clone, PartialEq)]
pub enum Strategy {
    /// Take the most likely mode under its normal orders.
    Hawk,
    /// Take the most likely mode under its safety orders.
    Dove,
    /// Prefer the designated safe mode whenever it is in the support.
    FailSafe(ModeId),
    /// Most likely mode under pre-agreed consensus orders for the
    /// support, falling back to the merged safety orders.
    Consensus,
}

#[derive(Debug, Clone)]
pub struct SupervisorConfig {
    pub thresholds: Thresholds,
    /// Number of recent nerve points consulted by the tie-break.
    pub history_window: usize,
    pub strategy: Strategy,
    /// Orders to run a mode under when it is used despite being an
    /// unreliable description.
    pub safety_orders: BTreeMap<ModeId, Orders>,
    /// Pre-agreed orders per contradiction support set.
    pub consensus_orders: BTreeMap<BTreeSet<ModeId>, Orders>,
    /// Score penalty per edge of nerve distance under partiality.
    pub partiality_bias: f64,
}

impl SupervisorConfig {
    pub fn new(thresholds: Thresholds) -> Self {
        SupervisorConfig {
            thresholds,
            history_window: DEFAULT_HISTORY_WINDOW,
            strategy: Strategy::Dove,
            safety_orders: BTreeMap::new(),
            consensus_orders: BTreeMap::new(),
            partiality_bias: DEFAULT_PARTIALITY_BIAS,
        }
    }

    fn safety_for(&self, mode: &ModeId) -> Orders {
        self.safety_orders.get(mode).cloned().unwrap_or_default()
    }
}

/// Why the supervisor raised an exception.
#[derive(Debug, Clone, PartialEq)]
pub enum ExceptionKind {
    Partiality { best: Option<(ModeId, f64)> },
    Contradiction { support: Vec<ModeId> },
    MissingTransition { from: ModeId, to: ModeId },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExceptionRecord {
    pub kind: ExceptionKind,
    /// Variables worth re-measuring at maximal priority.
    pub info_requests: Vec<String>,
}

/// The conservative stance taken while an alarm stands: remain where we
/// are under safety orders and wait for better information.
#[derive(Debug, Clone, PartialEq)]
pub struct HoldingAction {
    pub remain_in: ModeId,
    pub safety: Option<Orders>,
}

/// One decision per supervisor step.
#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    /// Keep the current mode. Carries replacement orders when staying is
    /// itself a degraded choice.
    Stay { safety: Option<Orders> },
    /// Guarded change of mode; the target scored above `p_low`.
    Transition { to: ModeId, output: TransitionOutput },
    /// Change of mode under the degraded override, with safety orders.
    DegradedTransition { to: ModeId, output: TransitionOutput, safety: Orders },
    /// No registered handler could produce a target mode.
    Alarm { record: ExceptionRecord, holding: HoldingAction },
}

impl Decision {
    pub fn tag(&self) -> &'static str {
        match self {
            Decision::Stay { .. } => "stay",
            Decision::Transition { .. } => "transition",
            Decision::DegradedTransition { .. } => "degraded-transition",
            Decision::Alarm { .. } => "alarm",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SupervisorState {
    pub current: ModeId,
    /// Most recent classification points, newest last.
    recent_points: VecDeque<NervePoint>,
    pub mode_entry_time: f64,
    pub alarm_log: Vec<(f64, ExceptionRecord)>,
}

impl SupervisorState {
    pub fn new(initial: ModeId) -> Self {
        SupervisorState {
            current: initial,
            recent_points: VecDeque::new(),
            mode_entry_time: 0.0,
            alarm_log: Vec::new(),
        }
    }

    pub fn recent_points(&self) -> impl Iterator<Item = &NervePoint> {
        self.recent_points.iter()
    }

    fn push_point(&mut self, point: NervePoint, window: usize) {
        self.recent_points.push_back(point);
        while self.recent_points.len() > window.max(1) {
            self.recent_points.pop_front();
        }
    }
}

/// Setup problems that would strand or confuse the supervisor at runtime.
pub fn check_setup(modes: &ModeRegistry, transitions: &TransitionRegistry) -> Vec<String> {
    let mut issues = Vec::new();
    for dead_end in transitions.dead_end_modes() {
        issues.push(format!(
            "mode `{dead_end}` is transition-reachable but has no outgoing transition"
        ));
    }
    for v in modes.nerve().vertices() {
        if !modes.has_evaluator(v) {
            issues.push(format!("mode `{v}` has no registered evaluator"));
        }
    }
    issues
}

/// Everything one supervision step produced: the decision, the scores it
/// was based on, and the classification outcome when one was computed.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub decision: Decision,
    pub scores: ScoreVector,
    /// `None` when the current mode scored above `p_high` and
    /// classification was skipped.
    pub classified: Option<ClassificationOutcome>,
}

impl StepOutcome {
    pub fn outcome_tag(&self) -> &'static str {
        self.classified.as_ref().map(|c| c.tag()).unwrap_or("well")
    }
}

/// Runs one supervision step: evaluate, classify, decide.
///
/// Returns the decision and mutates the supervisor state (current mode,
/// recent points, alarm log, entry time). The caller owns the system
/// picture and orders and applies transition outputs itself.
pub fn step(
    config: &SupervisorConfig,
    state: &mut SupervisorState,
    now: f64,
    x: &ModeState,
    o: &Orders,
    modes: &ModeRegistry,
    transitions: &TransitionRegistry,
) -> Result<StepOutcome, ModeError> {
    let scores = modes.evaluate(&state.current, x, o)?;
    let nerve = modes.nerve();

    // Hysteresis: a mode that still describes the system well is kept.
    if scores.get(&state.current) > config.thresholds.p_high {
        return Ok(StepOutcome {
            decision: Decision::Stay { safety: None },
            scores,
            classified: None,
        });
    }

    let outcome = classify(&scores, config.thresholds, nerve);
    let decision = match &outcome {
        ClassificationOutcome::Point(point) => {
            let max = nerve
                .vertices()
                .map(|v| scores.get(v))
                .fold(f64::NEG_INFINITY, f64::max);
            let candidates: BTreeSet<ModeId> = nerve
                .vertices()
                .filter(|v| scores.get(v) == max)
                .cloned()
                .collect();
            let target = tie_break(&candidates, state.recent_points.iter(), &state.current);
            let decision = if target == state.current {
                Decision::Stay { safety: None }
            } else {
                match transitions.apply(
                    &state.current,
                    &target,
                    x,
                    o,
                    &scores,
                    config.thresholds,
                    false,
                ) {
                    Ok(output) => {
                        state.current = target.clone();
                        state.mode_entry_time = now;
                        Decision::Transition { to: target, output }
                    }
                    Err(TransitionError::NoSuchTransition { .. })
                    | Err(TransitionError::GuardViolation { .. }) => {
                        let record = ExceptionRecord {
                            kind: ExceptionKind::MissingTransition {
                                from: state.current.clone(),
                                to: target,
                            },
                            info_requests: all_variables(x),
                        };
                        state.alarm_log.push((now, record.clone()));
                        Decision::Alarm {
                            record,
                            holding: HoldingAction {
                                remain_in: state.current.clone(),
                                safety: Some(config.safety_for(&state.current)),
                            },
                        }
                    }
                }
            };
            state.push_point(point.clone(), config.history_window);
            decision
        }
        ClassificationOutcome::Partiality { best } => {
            let record = ExceptionRecord {
                kind: ExceptionKind::Partiality { best: best.clone() },
                info_requests: all_variables(x),
            };
            state.alarm_log.push((now, record.clone()));
            handle_partiality(config, &scores, state, nerve, transitions, x, o, now, record)
        }
        ClassificationOutcome::Contradiction { support, .. } => {
            let record = ExceptionRecord {
                kind: ExceptionKind::Contradiction { support: support.clone() },
                info_requests: all_variables(x),
            };
            state.alarm_log.push((now, record.clone()));
            handle_contradiction(config, support, &scores, state, transitions, x, o, now, record)
        }
    };
    Ok(StepOutcome { decision, scores, classified: Some(outcome) })
}

fn all_variables(x: &ModeState) -> Vec<String> {
    x.variables().map(|(name, _)| name.to_owned()).collect()
}

/// Picks one candidate out of the modes attaining the maximal score.
///
/// With several candidates the recent classification points decide: the
/// candidate whose coordinate shows the steepest rising trend (least
/// squares over the window) is the mode the state is entering. Without a
/// usable trend the current mode is preferred, then the lexicographically
/// smallest identifier.
pub fn tie_break<'a>(
    candidates: &BTreeSet<ModeId>,
    history: impl Iterator<Item = &'a NervePoint>,
    current: &ModeId,
) -> ModeId {
    assert!(!candidates.is_empty(), "tie_break needs at least one candidate");
    if candidates.len() == 1 {
        return candidates.iter().next().unwrap().clone();
    }
    let points: Vec<&NervePoint> = history.collect();
    let mut winners: BTreeSet<&ModeId> = BTreeSet::new();
    let mut max_slope = f64::NEG_INFINITY;
    if points.len() >= 2 {
        for candidate in candidates {
            let series: Vec<f64> = points.iter().map(|p| p.coordinate(candidate)).collect();
            let slope = least_squares_slope(&series);
            if slope > max_slope + SLOPE_TIE {
                max_slope = slope;
                winners = BTreeSet::from([candidate]);
            } else if (slope - max_slope).abs() <= SLOPE_TIE {
                winners.insert(candidate);
            }
        }
    }
    if max_slope <= SLOPE_TIE {
        // No rising trend distinguishes the candidates.
        winners = candidates.iter().collect();
    }
    if winners.contains(current) {
        return current.clone();
    }
    (*winners.iter().next().expect("non-empty winner set")).clone()
}

fn least_squares_slope(series: &[f64]) -> f64 {
    let n = series.len() as f64;
    let x_mean = (n - 1.0) / 2.0;
    let y_mean = series.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, y) in series.iter().enumerate() {
        let dx = i as f64 - x_mean;
        num += dx * (y - y_mean);
        den += dx * dx;
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Handles the case where no mode is adequate: pick the best of a lot of
/// bad choices, biased towards modes nearby in the 1-skeleton, and move
/// there under the degraded override with safety orders attached.
#[allow(clippy::too_many_arguments)]
fn handle_partiality(
    config: &SupervisorConfig,
    scores: &ScoreVector,
    state: &mut SupervisorState,
    nerve: &Nerve,
    transitions: &TransitionRegistry,
    x: &ModeState,
    o: &Orders,
    now: f64,
    record: ExceptionRecord,
) -> Decision {
    let mut ranked: Vec<(ModeId, f64)> = nerve
        .vertices()
        .map(|v| {
            let distance = nerve
                .edge_distance(&state.current, v)
                .ok()
                .flatten()
                .map(|d| d as f64)
                .unwrap_or(f64::INFINITY);
            (v.clone(), scores.get(v) - config.partiality_bias * distance)
        })
        .collect();
    ranked.sort_by(|(ma, ra), (mb, rb)| {
        rb.partial_cmp(ra).expect("finite ranks").then_with(|| ma.cmp(mb))
    });

    if let Some((top, _)) = ranked.first() {
        if top == &state.current {
            return Decision::Stay { safety: Some(config.safety_for(&state.current)) };
        }
    }
    for (target, _) in &ranked {
        if target == &state.current {
            continue;
        }
        let safety = config.safety_for(target);
        match transitions.apply(&state.current, target, x, o, scores, config.thresholds, true) {
            Ok(mut output) => {
                let mut orders = safety.clone();
                orders.merge(&output.orders);
                output.orders = orders;
                state.current = target.clone();
                state.mode_entry_time = now;
                return Decision::DegradedTransition { to: target.clone(), output, safety };
            }
            Err(_) => continue,
        }
    }
    Decision::Alarm {
        record,
        holding: HoldingAction {
            remain_in: state.current.clone(),
            safety: Some(config.safety_for(&state.current)),
        },
    }
}

/// Resolves a contradiction per the configured strategy. The chosen mode
/// scored above `p_low` (it is in the support), so the normal guard
/// holds; what varies is which mode wins and under which orders it runs.
#[allow(clippy::too_many_arguments)]
fn handle_contradiction(
    config: &SupervisorConfig,
    support: &[ModeId],
    scores: &ScoreVector,
    state: &mut SupervisorState,
    transitions: &TransitionRegistry,
    x: &ModeState,
    o: &Orders,
    now: f64,
    record: ExceptionRecord,
) -> Decision {
    let argmax = support
        .iter()
        .max_by(|a, b| {
            scores
                .get(a)
                .partial_cmp(&scores.get(b))
                .expect("finite scores")
                .then_with(|| b.cmp(a))
        })
        .expect("contradiction support is non-empty")
        .clone();

    let (target, attached) = match &config.strategy {
        Strategy::Hawk => (argmax, None),
        Strategy::Dove => {
            let safety = config.safety_for(&argmax);
            (argmax, Some(safety))
        }
        Strategy::FailSafe(safe_mode) => {
            if support.contains(safe_mode) {
                (safe_mode.clone(), Some(config.safety_for(safe_mode)))
            } else {
                let safety = config.safety_for(&argmax);
                (argmax, Some(safety))
            }
        }
        Strategy::Consensus => {
            let key: BTreeSet<ModeId> = support.iter().cloned().collect();
            let orders = config.consensus_orders.get(&key).cloned().unwrap_or_else(|| {
                let mut merged = Orders::new();
                for m in support {
                    merged.merge(&config.safety_for(m));
                }
                merged
            });
            (argmax, Some(orders))
        }
    };

    if target == state.current {
        return Decision::Stay { safety: attached };
    }
    match transitions.apply(&state.current, &target, x, o, scores, config.thresholds, false) {
        Ok(mut output) => {
            if let Some(orders) = &attached {
                let mut merged = orders.clone();
                merged.merge(&output.orders);
                output.orders = merged;
            }
            state.current = target.clone();
            state.mode_entry_time = now;
            Decision::Transition { to: target, output }
        }
        Err(_) => Decision::Alarm {
            record,
            holding: HoldingAction {
                remain_in: state.current.clone(),
                safety: Some(config.safety_for(&state.current)),
            },
        },
    }
}
