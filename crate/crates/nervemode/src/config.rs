//! Scenario configuration files: a TOML schema covering the four
//! scenario kinds, with strict field checking (unknown keys are
//! rejected) and conversion into the runnable configurations.

use std::collections::{BTreeMap, BTreeSet};

use serde::Deserialize;
use thiserror::Error;

use crate::modes::{Directive, Orders, Thresholds};
use crate::nerve::{ModeId, Nerve, NerveError};
use crate::oracle::QualityFlag;
use crate::scenarios::chicane::{ChicaneConfig, CooperationPolicy};
use crate::scenarios::custom::CustomScenario;
use crate::scenarios::solar::{PlanetConfig, SolarConfig};
use crate::scenarios::SystemFault;
use crate::supervisor::Strategy;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Nerve(#[from] NerveError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Chicane,
    Solar,
    Manifold,
    Custom,
}

impl ScenarioKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::Chicane => "chicane",
            ScenarioKind::Solar => "solar",
            ScenarioKind::Manifold => "manifold",
            ScenarioKind::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdsSection {
    pub p_low: f64,
    pub p_high: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSection {
    pub system: String,
    pub variable: String,
    pub from: f64,
    pub until: f64,
    pub flag: QualityFlag,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChicaneSection {
    pub track_length: Option<f64>,
    pub chicane_center: Option<f64>,
    pub chicane_half_width: Option<f64>,
    pub stopping_distance: Option<f64>,
    pub ramp_distance: Option<f64>,
    pub max_speed: Option<f64>,
    pub braking_rate: Option<f64>,
    pub dt: Option<f64>,
    pub policy: Option<CooperationPolicy>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanetSection {
    pub radius: f64,
    pub angular_speed: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolarSection {
    #[serde(default)]
    pub planet: Vec<PlanetSection>,
    pub near: Option<f64>,
    pub far: Option<f64>,
    pub dt: Option<f64>,
    pub cooperation: Option<bool>,
    pub coop_failure_prob: Option<f64>,
    pub phase_jitter: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifoldSection {
    pub charts: usize,
    pub flow: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NerveSection {
    /// Designer-declared nonempty intersection sets.
    pub sets: Vec<Vec<String>>,
    /// Additional isolated vertices.
    #[serde(default)]
    pub vertices: Vec<String>,
}

impl NerveSection {
    pub fn build(&self) -> Result<Nerve, ConfigError> {
        let mut declared: Vec<Vec<ModeId>> = Vec::new();
        for set in &self.sets {
            declared.push(
                set.iter()
                    .map(|s| ModeId::new(s.clone()))
                    .collect::<Result<_, _>>()?,
            );
        }
        for v in &self.vertices {
            declared.push(vec![ModeId::new(v.clone())?]);
        }
        Ok(Nerve::build(&declared)?)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionSection {
    pub from: String,
    pub to: String,
    #[serde(default)]
    pub degraded_only: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefinementSection {
    /// fine mode → coarse parent.
    pub containment: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomSection {
    pub nerve: NerveSection,
    pub initial_mode: String,
    #[serde(default)]
    pub scores: BTreeMap<String, f64>,
    #[serde(default)]
    pub transition: Vec<TransitionSection>,
    #[serde(default)]
    pub safety_orders: BTreeMap<String, BTreeMap<String, toml::Value>>,
    /// "hawk" | "dove" | "consensus" | "failsafe:<mode>"
    pub strategy: Option<String>,
    pub dt: Option<f64>,
    pub refinement: Option<RefinementSection>,
}

/// A parsed scenario file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub kind: ScenarioKind,
    pub seed: Option<u64>,
    pub steps: Option<u64>,
    pub thresholds: Option<ThresholdsSection>,
    pub chicane: Option<ChicaneSection>,
    pub solar: Option<SolarSection>,
    pub manifold: Option<ManifoldSection>,
    pub custom: Option<CustomSection>,
    #[serde(default)]
    pub fault: Vec<FaultSection>,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let file: ScenarioFile = toml::from_str(text)?;
        file.check_sections()?;
        Ok(file)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    fn check_sections(&self) -> Result<(), ConfigError> {
        let required = |ok: bool, name: &str| {
            if ok {
                Ok(())
            } else {
                Err(ConfigError::Invalid(format!(
                    "kind = \"{}\" requires a [{}] section",
                    self.kind.as_str(),
                    name
                )))
            }
        };
        match self.kind {
            // The chicane and solar sections are optional: defaults apply.
            ScenarioKind::Chicane | ScenarioKind::Solar => Ok(()),
            ScenarioKind::Manifold => required(self.manifold.is_some(), "manifold"),
            ScenarioKind::Custom => required(self.custom.is_some(), "custom"),
        }?;
        let stray: &[(&str, bool)] = &[
            ("chicane", self.chicane.is_some() && self.kind != ScenarioKind::Chicane),
            ("solar", self.solar.is_some() && self.kind != ScenarioKind::Solar),
            ("manifold", self.manifold.is_some() && self.kind != ScenarioKind::Manifold),
            ("custom", self.custom.is_some() && self.kind != ScenarioKind::Custom),
        ];
        for (name, bad) in stray {
            if *bad {
                return Err(ConfigError::Invalid(format!(
                    "section [{name}] does not belong to kind \"{}\"",
                    self.kind.as_str()
                )));
            }
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn steps(&self) -> u64 {
        self.steps.unwrap_or(1000)
    }

    fn thresholds_or(&self, default: Thresholds) -> Result<Thresholds, ConfigError> {
        match &self.thresholds {
            None => Ok(default),
            Some(t) => Thresholds::new(t.p_low, t.p_high).map_err(ConfigError::Invalid),
        }
    }

    fn faults(&self) -> Vec<SystemFault> {
        self.fault
            .iter()
            .map(|f| SystemFault {
                system: f.system.clone(),
                variable: f.variable.clone(),
                from: f.from,
                until: f.until,
                flag: f.flag,
            })
            .collect()
    }

    pub fn to_chicane(&self) -> Result<ChicaneConfig, ConfigError> {
        let section = self.chicane.clone().unwrap_or_default();
        let defaults = ChicaneConfig::default();
        let config = ChicaneConfig {
            track_length: section.track_length.unwrap_or(defaults.track_length),
            chicane_center: section.chicane_center.unwrap_or(defaults.chicane_center),
            chicane_half_width: section
                .chicane_half_width
                .unwrap_or(defaults.chicane_half_width),
            stopping_distance: section
                .stopping_distance
                .unwrap_or(defaults.stopping_distance),
            ramp_distance: section.ramp_distance.unwrap_or(defaults.ramp_distance),
            max_speed: section.max_speed.unwrap_or(defaults.max_speed),
            braking_rate: section.braking_rate.unwrap_or(defaults.braking_rate),
            dt: section.dt.unwrap_or(defaults.dt),
            policy: section.policy.unwrap_or(defaults.policy),
            thresholds: self.thresholds_or(defaults.thresholds)?,
            faults: self.faults(),
            ..defaults
        };
        config.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(config)
    }

    pub fn to_solar(&self) -> Result<SolarConfig, ConfigError> {
        let section = self.solar.clone().unwrap_or_default();
        let defaults = SolarConfig::default();
        let planets = if section.planet.is_empty() {
            defaults.planets.clone()
        } else {
            section
                .planet
                .iter()
                .map(|p| PlanetConfig {
                    radius: p.radius,
                    angular_speed: p.angular_speed,
                    phase: p.phase,
                })
                .collect()
        };
        let config = SolarConfig {
            planets,
            near: section.near.unwrap_or(defaults.near),
            far: section.far.unwrap_or(defaults.far),
            dt: section.dt.unwrap_or(defaults.dt),
            cooperation: section.cooperation.unwrap_or(defaults.cooperation),
            coop_failure_prob: section
                .coop_failure_prob
                .unwrap_or(defaults.coop_failure_prob),
            phase_jitter: section.phase_jitter.unwrap_or(defaults.phase_jitter),
            thresholds: self.thresholds_or(defaults.thresholds)?,
            faults: self.faults(),
            ..defaults
        };
        config.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(config)
    }

    pub fn to_manifold(&self) -> Result<(usize, f64), ConfigError> {
        let section = self
            .manifold
            .as_ref()
            .ok_or_else(|| ConfigError::Invalid("missing [manifold] section".into()))?;
        Ok((section.charts, section.flow.unwrap_or(0.001)))
    }

    pub fn to_custom(&self) -> Result<CustomScenario, ConfigError> {
        let section = self
            .custom
            .as_ref()
            .ok_or_else(|| ConfigError::Invalid("missing [custom] section".into()))?;
        let nerve = section.nerve.build()?;
        let initial_mode = ModeId::new(section.initial_mode.clone())?;
        let mut scores = BTreeMap::new();
        for (name, &value) in &section.scores {
            scores.insert(ModeId::new(name.clone())?, value);
        }
        let mut transition_pairs = Vec::new();
        for t in &section.transition {
            transition_pairs.push((
                ModeId::new(t.from.clone())?,
                ModeId::new(t.to.clone())?,
                t.degraded_only,
            ));
        }
        let mut safety_orders = BTreeMap::new();
        for (mode_name, directives) in &section.safety_orders {
            let mut orders = Orders::new();
            for (key, value) in directives {
                let directive = match value {
                    toml::Value::Boolean(b) => Directive::Flag(*b),
                    toml::Value::Float(f) => Directive::Number(*f),
                    toml::Value::Integer(i) => Directive::Number(*i as f64),
                    toml::Value::String(s) => Directive::Text(s.clone()),
                    other => {
                        return Err(ConfigError::Invalid(format!(
                            "unsupported directive value {other} for `{key}`"
                        )))
                    }
                };
                orders.set(key, directive);
            }
            safety_orders.insert(ModeId::new(mode_name.clone())?, orders);
        }
        let strategy = match section.strategy.as_deref() {
            None | Some("dove") => Strategy::Dove,
            Some("hawk") => Strategy::Hawk,
            Some("consensus") => Strategy::Consensus,
            Some(other) => match other.strip_prefix("failsafe:") {
                Some(mode_name) => Strategy::FailSafe(ModeId::new(mode_name.to_owned())?),
                None => {
                    return Err(ConfigError::Invalid(format!(
                        "unknown strategy `{other}` (hawk, dove, consensus, failsafe:<mode>)"
                    )))
                }
            },
        };
        let scenario = CustomScenario {
            nerve,
            initial_mode,
            scores,
            transition_pairs,
            safety_orders,
            strategy,
            thresholds: self
                .thresholds_or(Thresholds::new(0.2, 0.9).expect("default custom thresholds"))?,
            dt: section.dt.unwrap_or(1.0),
        };
        Ok(scenario)
    }

    /// Refinement containment declared for a custom scenario, as typed
    /// identifiers together with the declared fine modes.
    pub fn refinement(
        &self,
    ) -> Result<Option<(BTreeMap<ModeId, ModeId>, BTreeSet<ModeId>)>, ConfigError> {
        let Some(section) = self.custom.as_ref().and_then(|c| c.refinement.as_ref()) else {
            return Ok(None);
        };
        let mut containment = BTreeMap::new();
        let mut fine = BTreeSet::new();
        for (f, parent) in &section.containment {
            let fine_mode = ModeId::new(f.clone())?;
            fine.insert(fine_mode.clone());
            containment.insert(fine_mode, ModeId::new(parent.clone())?);
        }
        Ok(Some((containment, fine)))
    }
}
