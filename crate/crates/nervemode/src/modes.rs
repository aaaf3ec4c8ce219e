//! Mode registry, partial state valuations, orders and the barycentric
//! mode classification map.
//!
//! Every mode carries an evaluation function scoring, from its own
//! viewpoint, how well each mode of the portfolio could describe the
//! current state and orders. Classification thresholds the scores at
//! `p_low`, normalises the surplus into barycentric coordinates, and
//! reports the two degenerate cases — no adequate mode (partiality) and
//! an adequate set the designers never certified jointly (contradiction)
//! — as outcome variants rather than errors.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nerve::{ModeId, Nerve, NervePoint};

/// Default per-variable history ring length.
pub const DEFAULT_HISTORY_LEN: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModeError {
    #[error("mode `{0}` is already registered")]
    DuplicateMode(String),
    #[error("mode `{0}` is not a vertex of the nerve")]
    ModeNotInNerve(String),
    #[error("no evaluator registered for mode `{0}`")]
    EvaluatorNotRegistered(String),
    #[error("score {score} for mode `{mode}` is outside [0,1]")]
    ScoreOutOfRange { mode: String, score: f64 },
    #[error("score vector is missing mode `{0}`")]
    MissingScore(String),
    #[error("error bound {0} must be non-negative")]
    NegativeErrorBound(f64),
    #[error("timestamp {new} for `{variable}` regresses behind {prior}")]
    TimestampRegression { variable: String, prior: f64, new: f64 },
}

/// The adequacy and quality thresholds: a mode scoring above `p_low`
/// describes the system adequately, above `p_high` it describes it well.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub p_low: f64,
    pub p_high: f64,
}

impl Thresholds {
    pub fn new(p_low: f64, p_high: f64) -> Result<Self, String> {
        if !(0.0 < p_low && p_low < p_high && p_high < 1.0) {
            return Err(format!(
                "thresholds must satisfy 0 < p_low < p_high < 1, got ({p_low}, {p_high})"
            ));
        }
        Ok(Thresholds { p_low, p_high })
    }
}

/// One state-variable entry: a measured or estimated value with its error
/// bound and measurement time, or an explicit undefined marker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum VarEntry {
    Undefined,
    Defined { value: f64, error_bound: f64, timestamp: f64 },
}

impl VarEntry {
    pub fn is_undefined(&self) -> bool {
        matches!(self, VarEntry::Undefined)
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            VarEntry::Undefined => None,
            VarEntry::Defined { value, .. } => Some(*value),
        }
    }

    pub fn timestamp(&self) -> Option<f64> {
        match self {
            VarEntry::Undefined => None,
            VarEntry::Defined { timestamp, .. } => Some(*timestamp),
        }
    }

    /// The value as a closed interval `value ± error_bound`.
    pub fn interval(&self) -> Option<(f64, f64)> {
        match self {
            VarEntry::Undefined => None,
            VarEntry::Defined { value, error_bound, .. } => {
                Some((value - error_bound, value + error_bound))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Variable {
    current: VarEntry,
    /// Most recent previous entries, newest last.
    history: VecDeque<VarEntry>,
    /// High-water mark of defined timestamps, kept across undefined spells.
    last_timestamp: Option<f64>,
}

/// A mode's partial picture of the physical system: named variables with
/// values, error bounds and measurement times, or explicit undefined
/// markers. Previous entries are kept in a bounded per-variable history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeState {
    variables: BTreeMap<String, Variable>,
    history_len: usize,
}

impl Default for ModeState {
    fn default() -> Self {
        ModeState::new()
    }
}

impl ModeState {
    pub fn new() -> Self {
        Self::with_history_len(DEFAULT_HISTORY_LEN)
    }

    pub fn with_history_len(history_len: usize) -> Self {
        ModeState { variables: BTreeMap::new(), history_len: history_len.max(1) }
    }

    pub fn get(&self, variable: &str) -> Option<&VarEntry> {
        self.variables.get(variable).map(|v| &v.current)
    }

    pub fn value(&self, variable: &str) -> Option<f64> {
        self.get(variable).and_then(VarEntry::value)
    }

    pub fn variables(&self) -> impl Iterator<Item = (&str, &VarEntry)> {
        self.variables.iter().map(|(k, v)| (k.as_str(), &v.current))
    }

    /// Names of variables currently marked undefined.
    pub fn undefined_variables(&self) -> Vec<String> {
        self.variables
            .iter()
            .filter(|(_, v)| v.current.is_undefined())
            .map(|(k, _)| k.clone())
            .collect()
    }

    /// Previous entries for a variable, newest last.
    pub fn history(&self, variable: &str) -> &[VarEntry] {
        self.variables
            .get(variable)
            .map(|v| v.history.as_slices().0)
            .unwrap_or(&[])
    }

    /// Replaces the entry for `variable`, retiring the previous entry to
    /// the history ring. Timestamps must not regress per variable.
    pub fn update(
        &mut self,
        variable: &str,
        value: f64,
        error_bound: f64,
        timestamp: f64,
    ) -> Result<(), ModeError> {
        if error_bound < 0.0 {
            return Err(ModeError::NegativeErrorBound(error_bound));
        }
        if let Some(var) = self.variables.get(variable) {
            if let Some(prior) = var.last_timestamp {
                if timestamp < prior {
                    return Err(ModeError::TimestampRegression {
                        variable: variable.to_owned(),
                        prior,
                        new: timestamp,
                    });
                }
            }
        }
        let entry = VarEntry::Defined { value, error_bound, timestamp };
        self.push_entry(variable, entry, Some(timestamp));
        Ok(())
    }

    /// Marks a variable undefined; the previous entry stays in history.
    pub fn set_undefined(&mut self, variable: &str) {
        self.push_entry(variable, VarEntry::Undefined, None);
    }

    fn push_entry(&mut self, variable: &str, entry: VarEntry, timestamp: Option<f64>) {
        let history_len = self.history_len;
        let var = self.variables.entry(variable.to_owned()).or_insert(Variable {
            current: VarEntry::Undefined,
            history: VecDeque::new(),
            last_timestamp: None,
        });
        let prior = std::mem::replace(&mut var.current, entry);
        var.history.push_back(prior);
        while var.history.len() > history_len {
            var.history.pop_front();
        }
        if let Some(t) = timestamp {
            var.last_timestamp = Some(t);
        }
    }
}

/// One directive value: a numeric setpoint, a boolean prohibition or
/// permission, or free text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Directive {
    Flag(bool),
    Number(f64),
    Text(String),
}

/// Standing instructions for a mode: named directives.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Orders {
    directives: BTreeMap<String, Directive>,
}

impl Orders {
    pub fn new() -> Self {
        Orders::default()
    }

    pub fn set(&mut self, name: &str, value: Directive) {
        self.directives.insert(name.to_owned(), value);
    }

    pub fn with(mut self, name: &str, value: Directive) -> Self {
        self.set(name, value);
        self
    }

    pub fn get(&self, name: &str) -> Option<&Directive> {
        self.directives.get(name)
    }

    pub fn directives(&self) -> impl Iterator<Item = (&str, &Directive)> {
        self.directives.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn is_empty(&self) -> bool {
        self.directives.is_empty()
    }

    pub fn contains_all(&self, other: &Orders) -> bool {
        other
            .directives
            .iter()
            .all(|(k, v)| self.directives.get(k) == Some(v))
    }

    /// Merges `other` into `self`. An absent key is inserted; boolean
    /// flags combine by OR, so prohibitions from either side survive;
    /// for other collisions the existing value wins.
    pub fn merge(&mut self, other: &Orders) {
        for (k, v) in &other.directives {
            match (self.directives.get_mut(k), v) {
                (None, _) => {
                    self.directives.insert(k.clone(), v.clone());
                }
                (Some(Directive::Flag(mine)), Directive::Flag(theirs)) => {
                    *mine = *mine || *theirs;
                }
                _ => {}
            }
        }
    }
}

/// A total score assignment over the mode portfolio, each in [0,1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScoreVector {
    scores: BTreeMap<ModeId, f64>,
}

impl ScoreVector {
    pub fn new(scores: impl IntoIterator<Item = (ModeId, f64)>) -> Result<Self, ModeError> {
        let scores: BTreeMap<ModeId, f64> = scores.into_iter().collect();
        for (m, &s) in &scores {
            if !(0.0..=1.0).contains(&s) || s.is_nan() {
                return Err(ModeError::ScoreOutOfRange { mode: m.as_str().to_owned(), score: s });
            }
        }
        Ok(ScoreVector { scores })
    }

    /// Verifies the vector assigns a score to every nerve vertex.
    pub fn check_total(&self, nerve: &Nerve) -> Result<(), ModeError> {
        for v in nerve.vertices() {
            if !self.scores.contains_key(v) {
                return Err(ModeError::MissingScore(v.as_str().to_owned()));
            }
        }
        Ok(())
    }

    pub fn get(&self, mode: &ModeId) -> f64 {
        self.scores.get(mode).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ModeId, f64)> {
        self.scores.iter().map(|(m, &s)| (m, s))
    }

    /// The highest-scoring mode, ties broken by lexicographically
    /// smallest identifier. `None` only for an empty vector.
    pub fn argmax(&self) -> Option<(&ModeId, f64)> {
        let mut best: Option<(&ModeId, f64)> = None;
        for (m, &s) in &self.scores {
            match best {
                None => best = Some((m, s)),
                Some((_, bs)) if s > bs => best = Some((m, s)),
                _ => {}
            }
        }
        best
    }
}

/// Result of classifying a score vector against the nerve.
#[derive(Debug, Clone, PartialEq)]
pub enum ClassificationOutcome {
    /// The adequate modes form a simplex; the barycentric point locates
    /// the system within it.
    Point(NervePoint),
    /// No mode is adequate. Carries the best sub-threshold candidate so a
    /// supervisor can still pick the best of a lot of bad choices.
    Partiality { best: Option<(ModeId, f64)> },
    /// The adequate modes were never certified as jointly valid.
    Contradiction { support: Vec<ModeId>, scores: ScoreVector },
}

impl ClassificationOutcome {
    pub fn tag(&self) -> &'static str {
        match self {
            ClassificationOutcome::Point(_) => "point",
            ClassificationOutcome::Partiality { .. } => "partiality",
            ClassificationOutcome::Contradiction { .. } => "contradiction",
        }
    }
}

impl fmt::Display for ClassificationOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassificationOutcome::Point(p) => {
                write!(f, "point")?;
                for (m, t) in p.coords() {
                    write!(f, " {m}={t:.12}")?;
                }
                Ok(())
            }
            ClassificationOutcome::Partiality { best } => match best {
                Some((m, s)) => write!(f, "partiality best={m} score={s:.12}"),
                None => write!(f, "partiality"),
            },
            ClassificationOutcome::Contradiction { support, .. } => {
                write!(f, "contradiction support={{")?;
                for (i, m) in support.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{m}")?;
                }
                write!(f, "}}")
            }
        }
    }
}

/// Classifies a score vector to a point of the nerve.
///
/// The support is the set of modes scoring strictly above `p_low`. An
/// empty support is the partiality exception; a support that is not a
/// simplex is the contradiction exception. Otherwise each supported mode
/// gets barycentric coordinate `(score − p_low) / Σ (score − p_low)`.
///
/// Scores are read for nerve vertices only; callers are expected to pass
/// a vector that is total over them.
pub fn classify(
    scores: &ScoreVector,
    thresholds: Thresholds,
    nerve: &Nerve,
) -> ClassificationOutcome {
    debug_assert!(scores.check_total(nerve).is_ok(), "score vector not total over nerve");
    let support: Vec<(&ModeId, f64)> = nerve
        .vertices()
        .map(|v| (v, scores.get(v)))
        .filter(|&(_, s)| s > thresholds.p_low)
        .collect();

    if support.is_empty() {
        let best = nerve
            .vertices()
            .map(|v| (v, scores.get(v)))
            .fold(None::<(&ModeId, f64)>, |best, (m, s)| match best {
                None => Some((m, s)),
                Some((_, bs)) if s > bs => Some((m, s)),
                other => other,
            });
        return ClassificationOutcome::Partiality {
            best: best.map(|(m, s)| (m.clone(), s)),
        };
    }

    if !nerve.is_simplex(support.iter().map(|(m, _)| *m)) {
        return ClassificationOutcome::Contradiction {
            support: support.iter().map(|(m, _)| (*m).clone()).collect(),
            scores: scores.clone(),
        };
    }

    let total: f64 = support.iter().map(|(_, s)| s - thresholds.p_low).sum();
    let point = NervePoint::new(
        support
            .iter()
            .map(|(m, s)| ((*m).clone(), (s - thresholds.p_low) / total)),
    )
    .expect("surplus coordinates are positive and normalised by construction");
    ClassificationOutcome::Point(point)
}

/// An evaluation function: scores every mode of the portfolio from the
/// viewpoint of `viewpoint`, given the current picture and orders.
pub type Evaluator = Box<dyn Fn(&ModeId, &ModeState, &Orders) -> ScoreVector + Send + Sync>;

/// The frozen mode portfolio: the nerve plus one evaluator per mode.
pub struct ModeRegistry {
    nerve: Nerve,
    evaluators: BTreeMap<ModeId, Evaluator>,
}

impl ModeRegistry {
    pub fn new(nerve: Nerve) -> Self {
        ModeRegistry { nerve, evaluators: BTreeMap::new() }
    }

    pub fn nerve(&self) -> &Nerve {
        &self.nerve
    }

    /// Registers the evaluation function for `mode`. Evaluators must be
    /// pure: identical inputs must produce identical score vectors.
    pub fn register_mode(&mut self, mode: ModeId, evaluator: Evaluator) -> Result<(), ModeError> {
        if !self.nerve.has_vertex(&mode) {
            return Err(ModeError::ModeNotInNerve(mode.as_str().to_owned()));
        }
        if self.evaluators.contains_key(&mode) {
            return Err(ModeError::DuplicateMode(mode.as_str().to_owned()));
        }
        self.evaluators.insert(mode, evaluator);
        Ok(())
    }

    pub fn has_evaluator(&self, mode: &ModeId) -> bool {
        self.evaluators.contains_key(mode)
    }

    /// Runs the evaluator of `viewpoint` on the given picture and orders.
    pub fn evaluate(
        &self,
        viewpoint: &ModeId,
        state: &ModeState,
        orders: &Orders,
    ) -> Result<ScoreVector, ModeError> {
        let eval = self
            .evaluators
            .get(viewpoint)
            .ok_or_else(|| ModeError::EvaluatorNotRegistered(viewpoint.as_str().to_owned()))?;
        let scores = eval(viewpoint, state, orders);
        scores.check_total(&self.nerve)?;
        Ok(scores)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nerve::mode;
    use proptest::prelude::*;

    fn edge_nerve() -> Nerve {
        Nerve::build(&[vec![mode("alpha"), mode("beta")]]).unwrap()
    }

    fn fig5() -> Nerve {
        Nerve::build(&[
            vec![mode("alpha"), mode("beta"), mode("gamma")],
            vec![mode("alpha"), mode("delta")],
            vec![mode("gamma"), mode("delta")],
            vec![mode("delta"), mode("epsilon")],
            vec![mode("epsilon"), mode("theta")],
            vec![mode("epsilon"), mode("zeta")],
            vec![mode("zeta"), mode("theta")],
            vec![mode("theta"), mode("phi")],
        ])
        .unwrap()
    }

    fn th(p_low: f64, p_high: f64) -> Thresholds {
        Thresholds::new(p_low, p_high).unwrap()
    }

    #[test]
    fn thresholds_validate_ordering() {
        assert!(Thresholds::new(0.2, 0.9).is_ok());
        assert!(Thresholds::new(0.9, 0.2).is_err());
        assert!(Thresholds::new(0.0, 0.5).is_err());
        assert!(Thresholds::new(0.2, 1.0).is_err());
    }

    #[test]
    fn classify_surplus_normalisation() {
        // (0.7-0.2, 0.5-0.2) = (0.5, 0.3), total 0.8 -> (0.625, 0.375).
        let scores =
            ScoreVector::new([(mode("alpha"), 0.7), (mode("beta"), 0.5)]).unwrap();
        match classify(&scores, th(0.2, 0.9), &edge_nerve()) {
            ClassificationOutcome::Point(p) => {
                assert!((p.coordinate(&mode("alpha")) - 0.625).abs() < 1e-12);
                assert!((p.coordinate(&mode("beta")) - 0.375).abs() < 1e-12);
            }
            other => panic!("expected point, got {other:?}"),
        }
    }

    #[test]
    fn classify_partiality_picks_best() {
        let scores =
            ScoreVector::new([(mode("alpha"), 0.1), (mode("beta"), 0.15)]).unwrap();
        match classify(&scores, th(0.2, 0.9), &edge_nerve()) {
            ClassificationOutcome::Partiality { best: Some((m, s)) } => {
                assert_eq!(m, mode("beta"));
                assert!((s - 0.15).abs() < 1e-15);
            }
            other => panic!("expected partiality, got {other:?}"),
        }
    }

    #[test]
    fn classify_partiality_tie_breaks_lexicographically() {
        let scores =
            ScoreVector::new([(mode("beta"), 0.1), (mode("alpha"), 0.1)]).unwrap();
        match classify(&scores, th(0.2, 0.9), &edge_nerve()) {
            ClassificationOutcome::Partiality { best: Some((m, _)) } => {
                assert_eq!(m, mode("alpha"));
            }
            other => panic!("expected partiality, got {other:?}"),
        }
    }

    #[test]
    fn classify_contradiction_on_non_simplex_support() {
        let nerve = fig5();
        let mut entries: Vec<(ModeId, f64)> =
            nerve.vertices().map(|v| (v.clone(), 0.0)).collect();
        for (m, s) in &mut entries {
            if *m == mode("beta") || *m == mode("delta") {
                *s = 0.6;
            }
        }
        let scores = ScoreVector::new(entries).unwrap();
        match classify(&scores, th(0.2, 0.9), &nerve) {
            ClassificationOutcome::Contradiction { support, .. } => {
                assert_eq!(support, vec![mode("beta"), mode("delta")]);
            }
            other => panic!("expected contradiction, got {other:?}"),
        }
    }

    #[test]
    fn classify_single_support_is_the_vertex() {
        let scores =
            ScoreVector::new([(mode("alpha"), 0.5), (mode("beta"), 0.1)]).unwrap();
        match classify(&scores, th(0.2, 0.9), &edge_nerve()) {
            ClassificationOutcome::Point(p) => {
                assert_eq!(p.coordinate(&mode("alpha")), 1.0);
                assert_eq!(p.support().count(), 1);
            }
            other => panic!("expected point, got {other:?}"),
        }
    }

    #[test]
    fn score_exactly_at_p_low_is_excluded() {
        let scores =
            ScoreVector::new([(mode("alpha"), 0.2), (mode("beta"), 0.5)]).unwrap();
        match classify(&scores, th(0.2, 0.9), &edge_nerve()) {
            ClassificationOutcome::Point(p) => {
                assert_eq!(p.coordinate(&mode("beta")), 1.0);
                assert_eq!(p.coordinate(&mode("alpha")), 0.0);
            }
            other => panic!("expected point, got {other:?}"),
        }
    }

    #[test]
    fn state_update_round_trip() {
        let mut state = ModeState::new();
        state.update("speed", 12.0, 0.5, 3.0).unwrap();
        assert_eq!(
            state.get("speed"),
            Some(&VarEntry::Defined { value: 12.0, error_bound: 0.5, timestamp: 3.0 })
        );
    }

    #[test]
    fn state_rejects_timestamp_regression() {
        let mut state = ModeState::new();
        state.update("speed", 12.0, 0.5, 3.0).unwrap();
        let err = state.update("speed", 11.0, 0.5, 2.0).unwrap_err();
        assert!(matches!(err, ModeError::TimestampRegression { .. }));
        // Equal timestamps are allowed (re-measurement within one step).
        state.update("speed", 11.5, 0.5, 3.0).unwrap();
    }

    #[test]
    fn undefined_keeps_history_and_timestamp_floor() {
        let mut state = ModeState::new();
        state.update("q", 1.0, 0.1, 5.0).unwrap();
        state.set_undefined("q");
        assert!(state.get("q").unwrap().is_undefined());
        assert_eq!(state.undefined_variables(), vec!["q".to_owned()]);
        let hist = state.history("q");
        assert_eq!(hist.last().unwrap().value(), Some(1.0));
        // Regression still detected across the undefined spell.
        assert!(state.update("q", 2.0, 0.1, 4.0).is_err());
        assert!(state.update("q", 2.0, 0.1, 6.0).is_ok());
    }

    #[test]
    fn history_ring_is_bounded() {
        let mut state = ModeState::with_history_len(3);
        for i in 0..10 {
            state.update("x", i as f64, 0.0, i as f64).unwrap();
        }
        assert!(state.history("x").len() <= 3);
    }

    #[test]
    fn orders_merge_combines_prohibitions() {
        let mut a = Orders::new().with("no-missiles", Directive::Flag(true));
        let b = Orders::new()
            .with("no-missiles", Directive::Flag(false))
            .with("evade", Directive::Flag(true));
        a.merge(&b);
        assert_eq!(a.get("no-missiles"), Some(&Directive::Flag(true)));
        assert_eq!(a.get("evade"), Some(&Directive::Flag(true)));
    }

    #[test]
    fn registry_rejects_duplicates_and_strangers() {
        let mut registry = ModeRegistry::new(edge_nerve());
        let flat = |_: &ModeId, _: &ModeState, _: &Orders| {
            ScoreVector::new([(mode("alpha"), 0.5), (mode("beta"), 0.5)]).unwrap()
        };
        registry.register_mode(mode("alpha"), Box::new(flat)).unwrap();
        assert!(matches!(
            registry.register_mode(mode("alpha"), Box::new(flat)),
            Err(ModeError::DuplicateMode(_))
        ));
        assert!(matches!(
            registry.register_mode(mode("gamma"), Box::new(flat)),
            Err(ModeError::ModeNotInNerve(_))
        ));
        let scores = registry
            .evaluate(&mode("alpha"), &ModeState::new(), &Orders::new())
            .unwrap();
        assert_eq!(scores.get(&mode("beta")), 0.5);
    }

    /// Test-only classification oracle: recomputes support, simplex
    /// membership (against the declared family) and coordinates directly.
    fn oracle_classify(
        declared: &[Vec<ModeId>],
        scores: &ScoreVector,
        thresholds: Thresholds,
    ) -> (String, Vec<ModeId>, BTreeMap<ModeId, f64>) {
        let mut verts: Vec<ModeId> = Vec::new();
        for set in declared {
            for v in set {
                if !verts.contains(v) {
                    verts.push(v.clone());
                }
            }
        }
        verts.sort();
        let support: Vec<ModeId> = verts
            .iter()
            .filter(|v| scores.get(v) > thresholds.p_low)
            .cloned()
            .collect();
        if support.is_empty() {
            return ("partiality".into(), vec![], BTreeMap::new());
        }
        let is_simplex = declared.iter().any(|set| support.iter().all(|v| set.contains(v)));
        if !is_simplex {
            return ("contradiction".into(), support, BTreeMap::new());
        }
        let total: f64 = support.iter().map(|v| scores.get(v) - thresholds.p_low).sum();
        let coords = support
            .iter()
            .map(|v| (v.clone(), (scores.get(v) - thresholds.p_low) / total))
            .collect();
        ("point".into(), support, coords)
    }

    fn declared_family() -> impl Strategy<Value = Vec<Vec<ModeId>>> {
        let vertex = (0usize..8).prop_map(|i| mode(&format!("m{i}")));
        let set = proptest::collection::btree_set(vertex, 1..=4)
            .prop_map(|s| s.into_iter().collect::<Vec<_>>());
        proptest::collection::vec(set, 1..=4)
    }

    proptest! {
        #[test]
        fn classification_matches_oracle(
            declared in declared_family(),
            raw_scores in proptest::collection::vec(0.0f64..1.0, 8),
            p_low in 0.05f64..0.8,
        ) {
            let nerve = Nerve::build(&declared).unwrap();
            let thresholds = th(p_low, 0.9f64.max(p_low + 0.05));
            let scores = ScoreVector::new(
                nerve.vertices().enumerate().map(|(i, v)| (v.clone(), raw_scores[i % 8])),
            ).unwrap();
            let outcome = classify(&scores, thresholds, &nerve);
            let (tag, support, coords) = oracle_classify(&declared, &scores, thresholds);
            prop_assert_eq!(outcome.tag(), tag.as_str());
            match outcome {
                ClassificationOutcome::Point(p) => {
                    let got: Vec<ModeId> = p.support().cloned().collect();
                    prop_assert_eq!(&got, &support);
                    for (m, t) in &coords {
                        prop_assert!((p.coordinate(m) - t).abs() < 1e-12);
                    }
                    // Normalisation: strictly positive, sum 1 within 1e-12.
                    let sum: f64 = p.coords().values().sum();
                    prop_assert!((sum - 1.0).abs() < 1e-12);
                    prop_assert!(p.coords().values().all(|&t| t > 0.0));
                }
                ClassificationOutcome::Contradiction { support: got, .. } => {
                    prop_assert_eq!(got, support);
                }
                ClassificationOutcome::Partiality { best } => {
                    prop_assert!(support.is_empty());
                    // Best is the argmax over vertices.
                    if let Some((m, s)) = best {
                        for v in nerve.vertices() {
                            prop_assert!(scores.get(v) <= s || *v == m);
                        }
                    }
                }
            }
        }

        #[test]
        fn classify_is_deterministic(
            declared in declared_family(),
            raw_scores in proptest::collection::vec(0.0f64..1.0, 8),
        ) {
            let nerve = Nerve::build(&declared).unwrap();
            let thresholds = th(0.2, 0.9);
            let scores = ScoreVector::new(
                nerve.vertices().enumerate().map(|(i, v)| (v.clone(), raw_scores[i % 8])),
            ).unwrap();
            let a = classify(&scores, thresholds, &nerve);
            let b = classify(&scores, thresholds, &nerve);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn argmax_invariant_under_constant_shift(
            declared in declared_family(),
            raw_scores in proptest::collection::vec(0.3f64..0.6, 8),
            delta in 0.0f64..0.3,
        ) {
            let nerve = Nerve::build(&declared).unwrap();
            let scores = ScoreVector::new(
                nerve.vertices().enumerate().map(|(i, v)| (v.clone(), raw_scores[i % 8])),
            ).unwrap();
            let shifted = ScoreVector::new(
                scores.iter().map(|(m, s)| (m.clone(), s + delta)),
            ).unwrap();
            prop_assert_eq!(scores.argmax().map(|(m, _)| m.clone()),
                            shifted.argmax().map(|(m, _)| m.clone()));
        }
    }
}
