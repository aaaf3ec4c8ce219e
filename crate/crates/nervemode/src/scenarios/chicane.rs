//! Two cars on a circular slot track with a single-lane narrows. Away
//! from the narrows a car needs only its own position and speed; near it
//! the picture widens to include the other car, whose data starts out
//! undefined and is found by prioritised queries. The yield rule brakes
//! the follower until the leader has cleared the narrows.
//!
//! Cooperation policies control how a car learns the other's position:
//! with its own camera (always answered), through the mandatory
//! disclosure rule (answered only while the other car is itself running
//! its near-narrows mode), or through a merged team process that fixes
//! the entry order outright.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::modes::{Directive, ModeRegistry, ModeState, Orders, ScoreVector, Thresholds};
use crate::nerve::{mode, ModeId, Nerve};
use crate::oracle::{
    Action, FaultWindow, OracleInterface, Outcome, Priority, QualityFlag, QueryTask, Schedule,
    SensorSpec,
};
use crate::supervisor::{self, Decision, SupervisorConfig, SupervisorState};
use crate::trace::{SystemRecord, Trace, TraceRecord};
use crate::transitions::{projection, TransitionRegistry};

use super::{circular_distance, SystemFault};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChicaneError {
    #[error("invalid chicane configuration: {0}")]
    ConfigInvalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CooperationPolicy {
    /// Own camera: position queries about the other car always answer.
    Autonomous,
    /// Disclosure rule: the other car answers only while it is itself in
    /// the near-narrows mode.
    Communal,
    /// Merged team process decides the entry order; car 1 goes first.
    Priority,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChicaneConfig {
    pub track_length: f64,
    pub chicane_center: f64,
    /// Half-length of the single-lane interval.
    pub chicane_half_width: f64,
    /// Distance below which the indicator sits at its floor; matched to
    /// the car's stopping distance.
    pub stopping_distance: f64,
    /// Distance at which the indicator reaches 1.
    pub ramp_distance: f64,
    pub max_speed: f64,
    pub braking_rate: f64,
    pub dt: f64,
    pub policy: CooperationPolicy,
    pub thresholds: Thresholds,
    pub position_accuracy: f64,
    pub speed_accuracy: f64,
    pub self_latency: f64,
    pub other_latency: f64,
    pub standing_period: f64,
    pub stale_after: f64,
    pub min_initial_separation: f64,
    pub faults: Vec<SystemFault>,
}

impl Default for ChicaneConfig {
    fn default() -> Self {
        ChicaneConfig {
            track_length: 100.0,
            chicane_center: 50.0,
            chicane_half_width: 2.0,
            stopping_distance: 5.0,
            ramp_distance: 15.0,
            max_speed: 1.0,
            braking_rate: 0.2,
            dt: 0.1,
            policy: CooperationPolicy::Autonomous,
            thresholds: Thresholds::new(0.2, 0.9).expect("default chicane thresholds"),
            position_accuracy: 0.1,
            speed_accuracy: 0.05,
            self_latency: 0.2,
            other_latency: 0.5,
            standing_period: 0.5,
            stale_after: 1.5,
            min_initial_separation: 15.0,
            faults: Vec::new(),
        }
    }
}

impl ChicaneConfig {
    pub fn validate(&self) -> Result<(), ChicaneError> {
        if !(0.0 < self.stopping_distance && self.stopping_distance < self.ramp_distance) {
            return Err(ChicaneError::ConfigInvalid(format!(
                "need 0 < stopping_distance < ramp_distance, got ({}, {})",
                self.stopping_distance, self.ramp_distance
            )));
        }
        if self.chicane_half_width <= 0.0
            || 2.0 * self.ramp_distance >= self.track_length
            || self.chicane_half_width >= self.stopping_distance
        {
            return Err(ChicaneError::ConfigInvalid(
                "narrows must fit inside the track and within the indicator floor".into(),
            ));
        }
        if self.dt <= 0.0 || self.max_speed <= 0.0 || self.braking_rate <= 0.0 {
            return Err(ChicaneError::ConfigInvalid(
                "dt, max_speed and braking_rate must be positive".into(),
            ));
        }
        // Braking from the indicator floor must suffice to stop short of
        // the narrows.
        let stopping = self.max_speed * self.max_speed / (2.0 * self.braking_rate);
        if stopping > self.stopping_distance {
            return Err(ChicaneError::ConfigInvalid(format!(
                "stopping distance {stopping:.2} exceeds the declared floor {}",
                self.stopping_distance
            )));
        }
        Ok(())
    }

    /// The single-lane interval as (entry distance from centre).
    pub fn inside_narrows(&self, position: f64) -> bool {
        circular_distance(position, self.chicane_center, self.track_length)
            <= self.chicane_half_width
    }
}

/// The near-narrows indicator: at its floor `p_low` out to the stopping
/// distance, rising linearly to 1 at the ramp distance, 1 beyond.
pub fn chicane_indicator_f(x: f64, p_low: f64, d: f64, d_ramp: f64) -> f64 {
    assert!(x >= 0.0, "distance is non-negative");
    if x <= d {
        p_low
    } else if x >= d_ramp {
        1.0
    } else {
        p_low + (1.0 - p_low) * (x - d) / (d_ramp - d)
    }
}

pub fn cruise_mode() -> ModeId {
    mode("cruise")
}

pub fn chicane_mode() -> ModeId {
    mode("chicane")
}

/// What a car currently knows about the other car.
enum OtherKnowledge {
    Unknown,
    /// The disclosure rule answered "not near the narrows".
    CertifiedFar,
    Known { distance_to_centre: f64, speed: f64 },
}

struct Car {
    id: String,
    index: usize,
    cruise_speed: f64,
    modes: ModeRegistry,
    transitions: TransitionRegistry,
    measurement: BTreeMap<ModeId, OracleInterface>,
    actuator: OracleInterface,
    sup: SupervisorState,
    picture: ModeState,
    accel: f64,
    /// Time of the last disclosure refusal for the other car's position.
    refusal_at: Option<f64>,
}

fn build_car(config: &ChicaneConfig, index: usize, seed: u64) -> Car {
    let nerve = Nerve::build(&[vec![cruise_mode(), chicane_mode()]]).expect("two-mode nerve");
    let mut modes = ModeRegistry::new(nerve);
    let p_low = config.thresholds.p_low;
    let (q_c, length, d, d_ramp) = (
        config.chicane_center,
        config.track_length,
        config.stopping_distance,
        config.ramp_distance,
    );
    for id in [cruise_mode(), chicane_mode()] {
        modes
            .register_mode(
                id,
                Box::new(move |_: &ModeId, state: &ModeState, _: &Orders| {
                    let scores = match state.value("q_self") {
                        Some(q) => {
                            let f = chicane_indicator_f(
                                circular_distance(q, q_c, length),
                                p_low,
                                d,
                                d_ramp,
                            );
                            [(cruise_mode(), f), (chicane_mode(), 1.0 - f)]
                        }
                        // No position, no certified description.
                        None => [(cruise_mode(), 0.0), (chicane_mode(), 0.0)],
                    };
                    ScoreVector::new(scores).expect("indicator values lie in [0,1]")
                }),
            )
            .expect("car modes are nerve vertices");
    }

    let mut transitions = TransitionRegistry::new();
    transitions.register(
        cruise_mode(),
        chicane_mode(),
        projection(&["q_self", "v_self", "q_other", "v_other"]),
    );
    transitions.register(chicane_mode(), cruise_mode(), projection(&["q_self", "v_self"]));
    debug_assert!(supervisor::check_setup(&modes, &transitions).is_empty());

    let id = format!("car{}", index + 1);
    let faults_for = |vars: &[&str]| -> Vec<FaultWindow> {
        config
            .faults
            .iter()
            .filter(|f| f.system == id && vars.contains(&f.variable.as_str()))
            .map(|f| FaultWindow {
                variable: f.variable.clone(),
                from: f.from,
                until: f.until,
                flag: f.flag,
            })
            .collect()
    };

    let self_sensors = BTreeMap::from([
        (
            "q_self".to_owned(),
            SensorSpec { latency: config.self_latency, accuracy: config.position_accuracy },
        ),
        (
            "v_self".to_owned(),
            SensorSpec { latency: config.self_latency, accuracy: config.speed_accuracy },
        ),
    ]);
    let mut wide_sensors = self_sensors.clone();
    wide_sensors.insert(
        "q_other".to_owned(),
        SensorSpec { latency: config.other_latency, accuracy: 2.0 * config.position_accuracy },
    );
    wide_sensors.insert(
        "v_other".to_owned(),
        SensorSpec { latency: config.other_latency, accuracy: 2.0 * config.speed_accuracy },
    );

    let mut measurement = BTreeMap::new();
    measurement.insert(
        cruise_mode(),
        OracleInterface::new(
            self_sensors,
            config.standing_period,
            faults_for(&["q_self", "v_self"]),
            seed ^ ((index as u64 + 1) << 4),
        ),
    );
    measurement.insert(
        chicane_mode(),
        OracleInterface::new(
            wide_sensors,
            config.standing_period,
            faults_for(&["q_self", "v_self", "q_other", "v_other"]),
            seed ^ ((index as u64 + 1) << 5),
        ),
    );
    let actuator =
        OracleInterface::new(BTreeMap::new(), config.standing_period, vec![], seed ^ 0xacc);

    Car {
        id,
        index,
        cruise_speed: config.max_speed,
        modes,
        transitions,
        measurement,
        actuator,
        sup: SupervisorState::new(cruise_mode()),
        picture: ModeState::new(),
        accel: 0.0,
        refusal_at: None,
    }
}

impl Car {
    fn other_knowledge(&self, config: &ChicaneConfig, now: f64) -> OtherKnowledge {
        let fresh_refusal = self
            .refusal_at
            .map(|t| now - t <= 2.0 * config.standing_period + 1.5)
            .unwrap_or(false);
        match (self.picture.value("q_other"), self.picture.value("v_other")) {
            (Some(q), v) => OtherKnowledge::Known {
                distance_to_centre: circular_distance(q, config.chicane_center, config.track_length),
                speed: v.unwrap_or(config.max_speed),
            },
            _ if config.policy == CooperationPolicy::Communal && fresh_refusal => {
                OtherKnowledge::CertifiedFar
            }
            _ => OtherKnowledge::Unknown,
        }
    }

    /// Yield rule for the near-narrows mode: enter only when permitted,
    /// otherwise brake to a stop short of the narrows.
    fn permitted_to_enter(
        &self,
        config: &ChicaneConfig,
        my_distance: f64,
        my_speed: f64,
        knowledge: &OtherKnowledge,
        merged_go: Option<bool>,
    ) -> bool {
        if let Some(go) = merged_go {
            return go;
        }
        let extended = config.chicane_half_width + 3.0;
        match knowledge {
            OtherKnowledge::Unknown => false,
            OtherKnowledge::CertifiedFar => true,
            OtherKnowledge::Known { distance_to_centre: other, speed } => {
                if *other <= extended {
                    // Contender in or at the narrows: only the closer of
                    // two stopped cars may move.
                    let both_stopped = my_speed < 0.05 && *speed < 0.05;
                    both_stopped
                        && (my_distance + 0.2 < *other
                            || ((my_distance - other).abs() <= 0.2 && self.index == 0))
                } else if *other <= config.ramp_distance {
                    // Contested approach: asymmetric margins keep the two
                    // views from ever both concluding leadership.
                    if self.index == 0 {
                        my_distance <= other + 1.0
                    } else {
                        my_distance + 3.0 < *other
                    }
                } else {
                    true
                }
            }
        }
    }

    fn target_speed(
        &self,
        config: &ChicaneConfig,
        effective_orders: &Orders,
        now: f64,
        merged_go: Option<bool>,
    ) -> f64 {
        if effective_orders.get("stop") == Some(&Directive::Flag(true)) {
            return 0.0;
        }
        let reduced = effective_orders.get("reduce-speed") == Some(&Directive::Flag(true));
        let cruise = if reduced { 0.3 * self.cruise_speed } else { self.cruise_speed };

        if self.sup.current != chicane_mode() {
            return cruise;
        }
        let (Some(my_q), my_v) = (self.picture.value("q_self"), self.picture.value("v_self"))
        else {
            // Blind near the narrows: stop.
            return 0.0;
        };
        let my_distance = circular_distance(my_q, config.chicane_center, config.track_length);
        if my_distance <= config.chicane_half_width {
            // Already in the narrows: clear them promptly.
            return cruise;
        }
        let knowledge = self.other_knowledge(config, now);
        let my_speed = my_v.unwrap_or(self.cruise_speed);
        if self.permitted_to_enter(config, my_distance, my_speed, &knowledge, merged_go) {
            cruise
        } else {
            let brake_zone = config.chicane_half_width
                + my_speed * my_speed / (2.0 * config.braking_rate)
                + 3.0;
            if my_distance <= brake_zone {
                0.0
            } else {
                cruise
            }
        }
    }
}

/// Runs the two-car race for `steps` steps of `config.dt`.
pub fn run_chicane(config: &ChicaneConfig, seed: u64, steps: u64) -> Result<Trace, ChicaneError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Starting grid: both cars clear of the approach region and apart
    // from each other.
    let length = config.track_length;
    let mut positions = [0.0_f64; 2];
    let mut placed = false;
    for _ in 0..200 {
        let q1 = rng.gen_range(0.0..length);
        let q2 = (q1 + rng.gen_range(0.2 * length..0.8 * length)).rem_euclid(length);
        let clear = |q: f64| {
            circular_distance(q, config.chicane_center, length) >= config.ramp_distance + 2.0
        };
        if clear(q1)
            && clear(q2)
            && circular_distance(q1, q2, length) >= config.min_initial_separation
        {
            positions = [q1, q2];
            placed = true;
            break;
        }
    }
    if !placed {
        positions = [
            (config.chicane_center + length / 2.0).rem_euclid(length),
            (config.chicane_center + length / 2.0 + config.min_initial_separation)
                .rem_euclid(length),
        ];
    }
    let cruise_speeds = [
        rng.gen_range(0.8..1.0) * config.max_speed,
        rng.gen_range(0.8..1.0) * config.max_speed,
    ];

    let mut cars: Vec<Car> = (0..2).map(|i| build_car(config, i, seed)).collect();
    let mut truth_q = positions;
    let mut truth_v = cruise_speeds;
    for (i, car) in cars.iter_mut().enumerate() {
        car.cruise_speed = cruise_speeds[i];
        car.picture
            .update("q_self", truth_q[i], config.position_accuracy, 0.0)
            .expect("fresh picture");
        car.picture
            .update("v_self", truth_v[i], config.speed_accuracy, 0.0)
            .expect("fresh picture");
    }

    let mut sup_config = SupervisorConfig::new(config.thresholds);
    sup_config
        .safety_orders
        .insert(cruise_mode(), Orders::new().with("reduce-speed", Directive::Flag(true)));
    sup_config
        .safety_orders
        .insert(chicane_mode(), Orders::new().with("stop", Directive::Flag(true)));

    let mut trace = Trace::new("chicane", seed);
    let mut merged_active = false;

    for step_index in 0..steps {
        let now = step_index as f64 * config.dt;
        let modes_before = [cars[0].sup.current.clone(), cars[1].sup.current.clone()];
        let mut systems = Vec::with_capacity(2);
        let mut events = Vec::new();

        // Merged team process under the priority policy: while both cars
        // run the near-narrows mode, car 1 is granted the narrows.
        let both_near = modes_before.iter().all(|m| *m == chicane_mode());
        let merged_now = config.policy == CooperationPolicy::Priority && both_near;
        if merged_now != merged_active {
            events.push(if merged_now {
                "team-merge:started".to_owned()
            } else {
                "team-merge:ended".to_owned()
            });
            merged_active = merged_now;
        }

        for i in 0..2 {
            let other_index = 1 - i;
            let other_in_chicane = modes_before[other_index] == chicane_mode();
            let policy = config.policy;
            let (q_snapshot, v_snapshot) = (truth_q, truth_v);
            let truth = move |var: &str| -> Option<f64> {
                match var {
                    "q_self" => Some(q_snapshot[i]),
                    "v_self" => Some(v_snapshot[i]),
                    "q_other" | "v_other" => {
                        let visible = match policy {
                            CooperationPolicy::Autonomous | CooperationPolicy::Priority => true,
                            CooperationPolicy::Communal => other_in_chicane,
                        };
                        if visible {
                            Some(if var == "q_other" {
                                q_snapshot[other_index]
                            } else {
                                v_snapshot[other_index]
                            })
                        } else {
                            None
                        }
                    }
                    _ => None,
                }
            };

            let car = &mut cars[i];

            // Drain actuations commanded last step.
            car.actuator.poll(now, &|_| None);
            for actuation in car.actuator.take_actuations() {
                if let Some(value) = actuation.command.strip_prefix("accel:") {
                    if let Ok(a) = value.parse::<f64>() {
                        car.accel = a;
                    }
                }
            }

            // Measurements through the current mode's interface view.
            let iface = car
                .measurement
                .get_mut(&car.sup.current)
                .expect("interface per mode");
            let responses = iface.poll(now, &truth);
            let mut flags = Vec::new();
            for response in &responses {
                if response.flag != QualityFlag::Normal {
                    let name = response.flag.as_str().to_owned();
                    if !flags.contains(&name) {
                        flags.push(name);
                    }
                }
                match (&response.variable, &response.outcome) {
                    (Some(var), Outcome::Value { lo, hi, timestamp }) => {
                        if var == "q_other" {
                            car.refusal_at = None;
                        }
                        let value = (lo + hi) / 2.0;
                        let error = (hi - lo) / 2.0;
                        let _ = car.picture.update(var, value, error, *timestamp);
                    }
                    (Some(var), Outcome::Timeout) if var == "q_other" => {
                        car.refusal_at = Some(now);
                    }
                    _ => {}
                }
            }

            // Staleness bookkeeping.
            let stale: Vec<String> = car
                .picture
                .variables()
                .filter_map(|(name, entry)| match entry.timestamp() {
                    Some(t) if now - t > config.stale_after => Some(name.to_owned()),
                    _ => None,
                })
                .collect();
            for var in stale {
                car.picture.set_undefined(&var);
            }

            let outcome = supervisor::step(
                &sup_config,
                &mut car.sup,
                now,
                &car.picture,
                &Orders::new(),
                &car.modes,
                &car.transitions,
            )
            .expect("car evaluators registered");

            let mut target = None;
            let mut urgent_queries = Vec::new();
            let mut effective_orders = Orders::new();
            match &outcome.decision {
                Decision::Stay { safety } => {
                    if let Some(orders) = safety {
                        effective_orders = orders.clone();
                    }
                }
                Decision::Transition { to, output }
                | Decision::DegradedTransition { to, output, .. } => {
                    target = Some(to.as_str().to_owned());
                    car.picture = output.state.clone();
                    effective_orders = output.orders.clone();
                    let iface = car.measurement.get_mut(to).expect("interface per mode");
                    for var in &output.undefined_outputs {
                        iface.enqueue_at(
                            QueryTask {
                                schedule: Schedule::SingleAction,
                                priority: Priority::Urgent,
                                action: Action::Measure {
                                    variable: var.clone(),
                                    required_accuracy: 2.0 * config.position_accuracy,
                                },
                                condition: None,
                            },
                            now,
                        );
                        urgent_queries.push(var.clone());
                    }
                }
                Decision::Alarm { holding, .. } => {
                    if let Some(orders) = &holding.safety {
                        effective_orders = orders.clone();
                    }
                }
            }

            // Control: pick a target speed and command the actuator.
            let merged_go = if merged_now { Some(car.index == 0) } else { None };
            let target_speed = car.target_speed(config, &effective_orders, now, merged_go);
            let measured_v = car.picture.value("v_self").unwrap_or(0.0);
            let accel = ((target_speed - measured_v) / config.dt)
                .clamp(-config.braking_rate, config.braking_rate);
            let braking_hard = accel <= -0.9 * config.braking_rate;
            car.actuator.enqueue_at(
                QueryTask::actuate(
                    &format!("accel:{accel}"),
                    if braking_hard { Priority::Urgent } else { Priority::Standard },
                ),
                now,
            );

            systems.push(SystemRecord {
                id: car.id.clone(),
                mode: modes_before[i].as_str().to_owned(),
                scores: outcome
                    .scores
                    .iter()
                    .map(|(m, s)| (m.as_str().to_owned(), s))
                    .collect(),
                outcome: outcome.outcome_tag().to_owned(),
                decision: outcome.decision.tag().to_owned(),
                target,
                flags,
                undefined: car.picture.undefined_variables(),
                urgent_queries,
                state: super::state_snapshot(&car.picture),
                truth: BTreeMap::from([
                    ("q".to_owned(), truth_q[i]),
                    ("v".to_owned(), truth_v[i]),
                ]),
            });
        }

        trace.records.push(TraceRecord { step: step_index, time: now, systems, events });

        // Physics: semi-implicit Euler on both cars.
        for i in 0..2 {
            truth_v[i] = (truth_v[i] + cars[i].accel * config.dt).clamp(0.0, cars[i].cruise_speed);
            truth_q[i] = (truth_q[i] + truth_v[i] * config.dt).rem_euclid(length);
        }
    }
    Ok(trace)
}

/// Steps at which both cars were inside the single-lane interval, by
/// ground truth. Empty means the run was safe.
pub fn narrows_violations(trace: &Trace, config: &ChicaneConfig) -> Vec<u64> {
    trace
        .records
        .iter()
        .filter(|record| {
            record.systems.len() == 2
                && record
                    .systems
                    .iter()
                    .all(|s| s.truth.get("q").map(|&q| config.inside_narrows(q)).unwrap_or(false))
        })
        .map(|record| record.step)
        .collect()
}

/// True when the trace contains a full widen-then-narrow mode cycle with
/// the other car's data initially undefined and urgently queried.
pub fn has_full_mode_cycle(trace: &Trace, system: &str) -> bool {
    let mut widened_with_queries = false;
    for record in &trace.records {
        for s in &record.systems {
            if s.id != system {
                continue;
            }
            if s.decision == "transition" || s.decision == "degraded-transition" {
                match s.target.as_deref() {
                    Some("chicane") => {
                        if s.undefined.iter().any(|v| v == "q_other")
                            && s.urgent_queries.iter().any(|v| v == "q_other")
                        {
                            widened_with_queries = true;
                        }
                    }
                    Some("cruise") if widened_with_queries => return true,
                    _ => {}
                }
            }
        }
    }
    false
}
