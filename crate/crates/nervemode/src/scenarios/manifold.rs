//! An atlas of overlapping coordinate charts on the unit circle, turned
//! into a mode system: one mode per chart, evaluation functions from a
//! partition of unity, and transition functions that are the chart
//! coordinate changes.
//!
//! Charts are arcs centred at `k/m` with a common half-width, wide
//! enough that consecutive arcs overlap (and, for three or more charts,
//! consecutive triples share a region). Each chart carries a triangular
//! bump; normalising the bumps by their sum gives the partition of
//! unity. A point always lies in some chart whose normalised bump is at
//! least `1/(m+1)`, which is why that value is the adequacy threshold.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use thiserror::Error;

use crate::modes::{ModeRegistry, ModeState, Orders, ScoreVector, Thresholds};
use crate::nerve::{ModeId, Nerve};
use crate::supervisor::{self, Decision, SupervisorConfig, SupervisorState};
use crate::trace::{SystemRecord, Trace, TraceRecord};
use crate::transitions::{TransitionMap, TransitionRegistry};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AtlasError {
    #[error("an atlas needs at least 2 charts, got {0}")]
    InvalidChartCount(usize),
    #[error("chart count {0} exceeds the supported 99")]
    TooManyCharts(usize),
}

/// Geometry of the chart cover: arcs on the circle parameterised by
/// [0, 1) with wraparound.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartAtlas {
    centers: Vec<f64>,
    half_width: f64,
}

/// Signed wrap of a circle offset into (-0.5, 0.5].
fn wrap_signed(x: f64) -> f64 {
    let r = x - x.round();
    if r == -0.5 {
        0.5
    } else {
        r
    }
}

/// Wrap a position into [0, 1).
fn wrap_unit(x: f64) -> f64 {
    x.rem_euclid(1.0)
}

impl ChartAtlas {
    pub fn new(m: usize) -> Result<Self, AtlasError> {
        if m < 2 {
            return Err(AtlasError::InvalidChartCount(m));
        }
        if m > 99 {
            return Err(AtlasError::TooManyCharts(m));
        }
        // Two charts: fixed generous overlap on both sides. Three or
        // more: wide enough for triple overlaps (w > 1/m), narrow enough
        // that no four arcs meet (w < 1.5/m).
        let half_width = if m == 2 { 0.35 } else { 1.25 / m as f64 };
        let centers = (0..m).map(|k| k as f64 / m as f64).collect();
        Ok(ChartAtlas { centers, half_width })
    }

    pub fn chart_count(&self) -> usize {
        self.centers.len()
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    /// Chart coordinate of circle position `x` in chart `k`.
    pub fn to_chart(&self, k: usize, x: f64) -> f64 {
        wrap_signed(x - self.centers[k])
    }

    /// Circle position of chart coordinate `y` of chart `k`.
    pub fn from_chart(&self, k: usize, y: f64) -> f64 {
        wrap_unit(self.centers[k] + y)
    }

    pub fn in_domain(&self, k: usize, x: f64) -> bool {
        self.to_chart(k, x).abs() < self.half_width
    }

    /// Unnormalised triangular bump of chart `k` at circle position `x`.
    fn bump(&self, k: usize, x: f64) -> f64 {
        (1.0 - self.to_chart(k, x).abs() / self.half_width).max(0.0)
    }

    /// The partition-of-unity value of chart `k` at `x`.
    pub fn theta(&self, k: usize, x: f64) -> f64 {
        let total: f64 = (0..self.centers.len()).map(|j| self.bump(j, x)).sum();
        self.bump(k, x) / total
    }

    /// All partition values at `x`; sums to 1.
    pub fn thetas(&self, x: f64) -> Vec<f64> {
        let bumps: Vec<f64> = (0..self.centers.len()).map(|j| self.bump(j, x)).collect();
        let total: f64 = bumps.iter().sum();
        bumps.into_iter().map(|b| b / total).collect()
    }

    /// Triple-overlap region of consecutive charts `(k, k+1, k+2)` as
    /// circle positions `(lo, hi)`; empty for two-chart atlases.
    pub fn triple_overlap(&self, k: usize) -> Option<(f64, f64)> {
        let m = self.centers.len();
        if m < 3 {
            return None;
        }
        // In the frame of chart k: the third chart begins to overlap at
        // 2/m − w and chart k ends at +w.
        let lo = 2.0 / m as f64 - self.half_width;
        let hi = self.half_width;
        if lo >= hi {
            return None;
        }
        Some((wrap_unit(self.centers[k] + lo), wrap_unit(self.centers[k] + hi)))
    }
}

/// A chart atlas wired into a full mode system.
pub struct AtlasSystem {
    pub atlas: ChartAtlas,
    pub modes: ModeRegistry,
    pub transitions: TransitionRegistry,
    pub thresholds: Thresholds,
    pub chart_modes: Vec<ModeId>,
}

pub fn chart_mode(k: usize) -> ModeId {
    crate::nerve::mode(&format!("chart{k:02}"))
}

/// Builds the atlas and the derived mode system: evaluators from the
/// partition of unity, transitions from the chart coordinate changes,
/// and the adequacy threshold `p_low = 1/(m+1)`.
pub fn build_atlas(m: usize) -> Result<AtlasSystem, AtlasError> {
    let atlas = ChartAtlas::new(m)?;
    let chart_modes: Vec<ModeId> = (0..m).map(chart_mode).collect();

    // Declared intersections: every point lies in at most three
    // consecutive charts, so consecutive triples (pairs for m = 2)
    // certify every support that can occur.
    let declared: Vec<Vec<ModeId>> = if m == 2 {
        vec![vec![chart_mode(0), chart_mode(1)]]
    } else {
        (0..m)
            .map(|k| vec![chart_mode(k), chart_mode((k + 1) % m), chart_mode((k + 2) % m)])
            .collect()
    };
    let nerve = Nerve::build(&declared).expect("atlas nerve construction");

    let thresholds = Thresholds::new(1.0 / (m as f64 + 1.0), 0.75)
        .expect("atlas thresholds are well-ordered for m >= 2");

    let mut modes = ModeRegistry::new(nerve);
    for (k, id) in chart_modes.iter().enumerate() {
        let atlas_for_eval = atlas.clone();
        let names = chart_modes.clone();
        modes
            .register_mode(
                id.clone(),
                Box::new(move |_: &ModeId, state: &ModeState, _: &Orders| {
                    let scores: Vec<(ModeId, f64)> = match state.value("y") {
                        Some(y) if y.abs() < atlas_for_eval.half_width() => {
                            let x = atlas_for_eval.from_chart(k, y);
                            let thetas = atlas_for_eval.thetas(x);
                            names.iter().cloned().zip(thetas).collect()
                        }
                        // Outside the chart domain (or unknown) the
                        // evaluation functions extend by zero.
                        _ => names.iter().cloned().map(|n| (n, 0.0)).collect(),
                    };
                    ScoreVector::new(scores).expect("partition values lie in [0,1]")
                }),
            )
            .expect("chart modes are nerve vertices");
    }

    let mut transitions = TransitionRegistry::new();
    for j in 0..m {
        for k in 0..m {
            if j == k {
                continue;
            }
            // Transition defined wherever the arcs overlap; the map is
            // the offset between chart origins, wrapped.
            let offset = atlas.centers[j] - atlas.centers[k];
            let map: TransitionMap = Box::new(move |state: &ModeState, orders: &Orders| {
                let mut out = ModeState::new();
                match state.get("y") {
                    Some(crate::modes::VarEntry::Defined { value, error_bound, timestamp }) => {
                        out.update("y", wrap_signed(value + offset), *error_bound, *timestamp)
                            .expect("fresh state accepts the timestamp");
                    }
                    _ => out.set_undefined("y"),
                }
                (out, orders.clone())
            });
            transitions.register(chart_mode(j), chart_mode(k), map);
        }
    }

    Ok(AtlasSystem { atlas, modes, transitions, thresholds, chart_modes })
}

impl AtlasSystem {
    /// Scoring closure for composition audits.
    pub fn score_fn(&self) -> impl Fn(&ModeId, &ModeState, &Orders) -> ScoreVector + '_ {
        |viewpoint, state, orders| {
            self.modes
                .evaluate(viewpoint, state, orders)
                .expect("chart evaluators are total")
        }
    }

    /// Evenly spaced samples strictly inside the triple overlap of
    /// consecutive charts `(k, k+1, k+2)`, expressed in chart `k`'s
    /// coordinates. The 15% margin keeps all three partition values
    /// comfortably positive.
    pub fn triple_overlap_samples(&self, k: usize, count: usize) -> Vec<(ModeState, Orders)> {
        let Some((lo, hi)) = self.atlas.triple_overlap(k) else {
            return Vec::new();
        };
        let len = wrap_unit(hi - lo);
        let margin = 0.15 * len;
        (0..count)
            .map(|i| {
                let frac = (i as f64 + 0.5) / count as f64;
                let x = wrap_unit(lo + margin + frac * (len - 2.0 * margin));
                let mut state = ModeState::new();
                state
                    .update("y", self.atlas.to_chart(k, x), 0.0, 0.0)
                    .expect("fresh state accepts the sample");
                (state, Orders::new())
            })
            .collect()
    }
}

/// Advances a point at constant angular speed and lets the supervisor
/// keep the tracked coordinate inside the current chart's domain.
pub fn run_manifold(system: &AtlasSystem, flow: f64, seed: u64, steps: u64) -> Trace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x_true = rng.gen_range(0.0..1.0);

    // Start in the chart whose partition value is largest there.
    let thetas = system.atlas.thetas(x_true);
    let start = thetas
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| a.partial_cmp(b).expect("finite theta"))
        .map(|(k, _)| k)
        .unwrap_or(0);

    let mut sup_state = SupervisorState::new(chart_mode(start));
    let mut chart_index = start;
    let mut picture = ModeState::new();
    picture
        .update("y", system.atlas.to_chart(start, x_true), 0.0, 0.0)
        .expect("initial coordinate");
    let orders = Orders::new();

    let config = SupervisorConfig::new(system.thresholds);
    let mut trace = Trace::new("manifold", seed);

    for step_index in 0..steps {
        let now = step_index as f64;
        let mode_before = sup_state.current.clone();
        let outcome = supervisor::step(
            &config,
            &mut sup_state,
            now,
            &picture,
            &orders,
            &system.modes,
            &system.transitions,
        )
        .expect("chart evaluators registered");

        let mut target = None;
        match &outcome.decision {
            Decision::Transition { to, output }
            | Decision::DegradedTransition { to, output, .. } => {
                target = Some(to.as_str().to_owned());
                picture = output.state.clone();
                chart_index = system
                    .chart_modes
                    .iter()
                    .position(|m| m == to)
                    .expect("transition target is a chart mode");
            }
            Decision::Stay { .. } | Decision::Alarm { .. } => {}
        }

        trace.records.push(TraceRecord {
            step: step_index,
            time: now,
            systems: vec![SystemRecord {
                id: "tracker".into(),
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
                undefined: picture.undefined_variables(),
                urgent_queries: vec![],
                state: super::state_snapshot(&picture),
                truth: BTreeMap::from([("x".to_owned(), x_true)]),
            }],
            events: vec![],
        });

        // Advance the flow; chart frames share the circle's metric, so
        // the coordinate advances by the same amount.
        x_true = wrap_unit(x_true + flow);
        let y = system.atlas.to_chart(chart_index, x_true);
        picture
            .update("y", y, 0.0, now + 1.0)
            .expect("time advances monotonically");
    }
    trace
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_degenerate_chart_counts() {
        assert!(matches!(build_atlas(0), Err(AtlasError::InvalidChartCount(0))));
        assert!(matches!(build_atlas(1), Err(AtlasError::InvalidChartCount(1))));
        assert!(build_atlas(2).is_ok());
    }

    #[test]
    fn partition_of_unity_sums_to_one() {
        for m in 2..=6 {
            let atlas = ChartAtlas::new(m).unwrap();
            for i in 0..10_000 {
                let x = i as f64 / 10_000.0;
                let sum: f64 = atlas.thetas(x).iter().sum();
                assert!(
                    (sum - 1.0).abs() < 1e-9,
                    "partition sum {sum} at x={x} for m={m}"
                );
            }
        }
    }

    #[test]
    fn theta_vanishes_outside_its_chart() {
        for m in 2..=6 {
            let atlas = ChartAtlas::new(m).unwrap();
            for i in 0..1000 {
                let x = i as f64 / 1000.0;
                for k in 0..m {
                    if !atlas.in_domain(k, x) {
                        assert_eq!(atlas.theta(k, x), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn transition_maps_are_mutually_inverse_on_overlaps() {
        let atlas = ChartAtlas::new(4).unwrap();
        for i in 0..1000 {
            let x = i as f64 / 1000.0;
            for j in 0..4 {
                for k in 0..4 {
                    if atlas.in_domain(j, x) && atlas.in_domain(k, x) {
                        let y = atlas.to_chart(j, x);
                        let forth = wrap_signed(y + atlas.centers[j] - atlas.centers[k]);
                        let back = wrap_signed(forth + atlas.centers[k] - atlas.centers[j]);
                        assert!((back - y).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn single_chart_region_classifies_to_that_vertex() {
        let system = build_atlas(2).unwrap();
        // x = 0 is the centre of chart 0; chart 1's bump is zero there.
        let mut state = ModeState::new();
        state.update("y", 0.0, 0.0, 0.0).unwrap();
        let scores = system
            .modes
            .evaluate(&chart_mode(0), &state, &Orders::new())
            .unwrap();
        assert_eq!(scores.get(&chart_mode(0)), 1.0);
        assert_eq!(scores.get(&chart_mode(1)), 0.0);
        match crate::modes::classify(&scores, system.thresholds, system.modes.nerve()) {
            crate::modes::ClassificationOutcome::Point(p) => {
                assert_eq!(p.coordinate(&chart_mode(0)), 1.0);
            }
            other => panic!("expected point, got {other:?}"),
        }
    }

    #[test]
    fn overlap_midpoint_classifies_to_equal_coordinates() {
        let system = build_atlas(2).unwrap();
        // Midpoint between centres 0 and 0.5: both bumps equal.
        let x = 0.25;
        let mut state = ModeState::new();
        state.update("y", system.atlas.to_chart(0, x), 0.0, 0.0).unwrap();
        let scores = system
            .modes
            .evaluate(&chart_mode(0), &state, &Orders::new())
            .unwrap();
        assert!((scores.get(&chart_mode(0)) - 0.5).abs() < 1e-12);
        assert!((scores.get(&chart_mode(1)) - 0.5).abs() < 1e-12);
        match crate::modes::classify(&scores, system.thresholds, system.modes.nerve()) {
            crate::modes::ClassificationOutcome::Point(p) => {
                // (0.5 - 1/3) / (2 (0.5 - 1/3)) = 0.5 each.
                assert!((p.coordinate(&chart_mode(0)) - 0.5).abs() < 1e-12);
                assert!((p.coordinate(&chart_mode(1)) - 0.5).abs() < 1e-12);
            }
            other => panic!("expected point, got {other:?}"),
        }
    }

    #[test]
    fn cocycle_consistency_on_triple_overlaps() {
        let system = build_atlas(4).unwrap();
        // A permissive audit threshold: the guard only needs the charts
        // defined at the sample, which the interior margin guarantees.
        let audit = Thresholds::new(0.02, 0.5).unwrap();
        for k in 0..4 {
            let samples = system.triple_overlap_samples(k, 25);
            assert_eq!(samples.len(), 25);
            let report = system
                .transitions
                .check_composition(
                    &chart_mode(k),
                    &chart_mode((k + 1) % 4),
                    &chart_mode((k + 2) % 4),
                    &samples,
                    system.score_fn(),
                    audit,
                    1e-9,
                )
                .unwrap();
            assert_eq!(report.checked, 25, "all samples pass the audit guards");
            assert!(report.max_deviation < 1e-9, "deviation {}", report.max_deviation);
        }
    }

    #[test]
    fn full_revolution_visits_charts_in_order() {
        let system = build_atlas(3).unwrap();
        let trace = run_manifold(&system, 0.001, 11, 1100);
        let mut sequence: Vec<String> = Vec::new();
        for record in &trace.records {
            let mode = &record.systems[0].mode;
            if sequence.last() != Some(mode) {
                sequence.push(mode.clone());
            }
        }
        assert!(sequence.len() >= 4, "one revolution crosses every chart: {sequence:?}");
        let index = |name: &str| name[5..].parse::<usize>().unwrap();
        for pair in sequence.windows(2) {
            let (a, b) = (index(&pair[0]), index(&pair[1]));
            assert_eq!((a + 1) % 3, b, "charts must advance cyclically: {sequence:?}");
        }
    }

    #[test]
    fn zero_flow_stays_forever() {
        let system = build_atlas(3).unwrap();
        let trace = run_manifold(&system, 0.0, 5, 200);
        assert!(trace
            .records
            .iter()
            .all(|r| r.systems[0].decision == "stay"));
    }

    #[test]
    fn no_partiality_across_chart_counts() {
        for m in 2..=6 {
            let system = build_atlas(m).unwrap();
            let trace = run_manifold(&system, 0.0017, 23, 2000);
            assert!(
                trace
                    .records
                    .iter()
                    .all(|r| r.systems[0].outcome != "partiality"),
                "partiality in m={m}"
            );
        }
    }
}
