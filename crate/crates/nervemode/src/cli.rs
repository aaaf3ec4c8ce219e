//! Command implementations behind the binary: run scenarios, validate
//! configuration files, and classify score vectors against a nerve.
//!
//! Exit codes are total and fixed: 0 clean, 1 an alarm occurred during a
//! run, 2 invalid configuration, 3 unreadable or unparsable input.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::config::{ConfigError, NerveSection, ScenarioFile, ScenarioKind};
use crate::modes::{classify, ClassificationOutcome, ScoreVector, Thresholds};
use crate::nerve::{validate_refinement, ModeId};
use crate::scenarios::chicane::{self, ChicaneConfig};
use crate::scenarios::{custom, manifold, solar};
use crate::trace::{Trace, TraceSummary};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ALARM: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_PARSE: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Structured,
    TextTable,
}

impl std::str::FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "structured" => Ok(OutputFormat::Structured),
            "text-table" => Ok(OutputFormat::TextTable),
            other => Err(format!("unknown format `{other}` (structured, text-table)")),
        }
    }
}

fn config_exit(err: &ConfigError) -> i32 {
    match err {
        ConfigError::Parse(_) | ConfigError::Io(_) => EXIT_PARSE,
        ConfigError::Invalid(_) | ConfigError::Nerve(_) => EXIT_INVALID,
    }
}

/// Checks a scenario file: nerve well-formedness, refinement blocks,
/// transition adjacency (warnings) and the transfer-out rule (errors).
pub fn cmd_validate(path: &Path, out: &mut dyn Write) -> i32 {
    let file = match ScenarioFile::load(path) {
        Ok(file) => file,
        Err(err) => {
            let _ = writeln!(out, "error: {err}");
            return config_exit(&err);
        }
    };

    let mut errors = 0usize;
    let mut warnings = 0usize;
    match file.kind {
        ScenarioKind::Chicane => match file.to_chicane() {
            Ok(_) => {
                let _ = writeln!(out, "ok: chicane configuration valid");
            }
            Err(err) => {
                let _ = writeln!(out, "error: {err}");
                errors += 1;
            }
        },
        ScenarioKind::Solar => match file.to_solar() {
            Ok(_) => {
                let _ = writeln!(out, "ok: solar configuration valid");
            }
            Err(err) => {
                let _ = writeln!(out, "error: {err}");
                errors += 1;
            }
        },
        ScenarioKind::Manifold => match file
            .to_manifold()
            .and_then(|(m, _)| manifold::build_atlas(m).map_err(|e| ConfigError::Invalid(e.to_string())))
        {
            Ok(system) => {
                let _ = writeln!(
                    out,
                    "ok: atlas with {} charts, p_low = {:.6}",
                    system.atlas.chart_count(),
                    system.thresholds.p_low
                );
            }
            Err(err) => {
                let _ = writeln!(out, "error: {err}");
                errors += 1;
            }
        },
        ScenarioKind::Custom => match file.to_custom() {
            Err(err) => {
                let _ = writeln!(out, "error: {err}");
                errors += 1;
            }
            Ok(scenario) => {
                if let Err(err) = scenario.validate() {
                    let _ = writeln!(out, "error: {err}");
                    errors += 1;
                } else {
                    let _ = writeln!(
                        out,
                        "ok: nerve with {} vertices, {} simplices",
                        scenario.nerve.vertex_count(),
                        scenario.nerve.simplices().count()
                    );
                }

                // Refinement block, when present.
                match file.refinement() {
                    Err(err) => {
                        let _ = writeln!(out, "error: {err}");
                        errors += 1;
                    }
                    Ok(Some((containment, fine))) => {
                        let violations =
                            validate_refinement(&scenario.nerve, &containment, &fine);
                        for violation in &violations {
                            let _ = writeln!(out, "error: refinement: {violation}");
                        }
                        if violations.is_empty() {
                            let _ = writeln!(
                                out,
                                "ok: refinement with {} fine modes",
                                fine.len()
                            );
                        }
                        errors += violations.len();
                    }
                    Ok(None) => {}
                }

                // Transition table checks: adjacency gaps warn, dead ends
                // (reachable modes without an exit) are errors.
                let mut incoming: BTreeMap<&ModeId, usize> = BTreeMap::new();
                let mut outgoing: BTreeMap<&ModeId, usize> = BTreeMap::new();
                for (from, to, degraded_only) in &scenario.transition_pairs {
                    *incoming.entry(to).or_default() += 1;
                    *outgoing.entry(from).or_default() += 1;
                    if !degraded_only && !scenario.nerve.is_simplex([from, to]) {
                        let _ = writeln!(
                            out,
                            "warning: transition {from} -> {to} crosses a non-edge; mark it degraded_only or certify the intersection"
                        );
                        warnings += 1;
                    }
                }
                for (mode, _) in incoming {
                    if !outgoing.contains_key(mode) {
                        let _ = writeln!(
                            out,
                            "error: mode `{mode}` is transition-reachable but has no outgoing transition"
                        );
                        errors += 1;
                    }
                }
            }
        },
    }

    let _ = writeln!(out, "{errors} error(s), {warnings} warning(s)");
    if errors > 0 {
        EXIT_INVALID
    } else {
        EXIT_OK
    }
}

fn run_one(file: &ScenarioFile, seed: u64, steps: u64) -> Result<Trace, ConfigError> {
    match file.kind {
        ScenarioKind::Chicane => {
            let config = file.to_chicane()?;
            chicane::run_chicane(&config, seed, steps)
                .map_err(|e| ConfigError::Invalid(e.to_string()))
        }
        ScenarioKind::Solar => {
            let config = file.to_solar()?;
            solar::run_solar(&config, seed, steps).map_err(|e| ConfigError::Invalid(e.to_string()))
        }
        ScenarioKind::Manifold => {
            let (charts, flow) = file.to_manifold()?;
            let system =
                manifold::build_atlas(charts).map_err(|e| ConfigError::Invalid(e.to_string()))?;
            Ok(manifold::run_manifold(&system, flow, seed, steps))
        }
        ScenarioKind::Custom => {
            let scenario = file.to_custom()?;
            custom::run_custom(&scenario, seed, steps)
                .map_err(|e| ConfigError::Invalid(e.to_string()))
        }
    }
}

fn write_trace(trace: &Trace, path: &Path, format: OutputFormat) -> std::io::Result<()> {
    let file = std::fs::File::create(path)?;
    let mut writer = std::io::BufWriter::new(file);
    match format {
        OutputFormat::Structured => trace.write_structured(&mut writer),
        OutputFormat::TextTable => trace.write_text_table(&mut writer),
    }
}

fn summarise(file: &ScenarioFile, trace: &Trace, out: &mut dyn Write) {
    let summary = TraceSummary::from_trace(trace);
    let _ = writeln!(
        out,
        "run: scenario={} seed={} steps={}",
        trace.header.scenario,
        trace.header.seed,
        trace.records.len()
    );
    for ((system, mode), count) in &summary.occupancy {
        let _ = writeln!(out, "occupancy: {system} {mode} {count}");
    }
    let _ = writeln!(
        out,
        "decisions: transitions={} degraded={} alarms={}",
        summary.transitions, summary.degraded_transitions, summary.alarms
    );
    let _ = writeln!(
        out,
        "exceptions: partiality={} contradiction={}",
        summary.partialities, summary.contradictions
    );
    if !summary.flags.is_empty() {
        let _ = writeln!(out, "flags: {}", summary.flags.join(","));
    }
    match file.kind {
        ScenarioKind::Chicane => {
            let config = file.to_chicane().unwrap_or_else(|_| ChicaneConfig::default());
            let violations = chicane::narrows_violations(trace, &config);
            let _ = writeln!(
                out,
                "safety narrows-exclusive: {} ({} co-occupied steps)",
                if violations.is_empty() { "PASS" } else { "FAIL" },
                violations.len()
            );
        }
        ScenarioKind::Solar => {
            let _ = writeln!(
                out,
                "safety no-contradiction: {} ({} contradiction outcomes)",
                if summary.contradictions == 0 { "PASS" } else { "FAIL" },
                summary.contradictions
            );
        }
        ScenarioKind::Manifold => {
            let _ = writeln!(
                out,
                "safety adequacy: {} ({} partiality outcomes)",
                if summary.partialities == 0 { "PASS" } else { "FAIL" },
                summary.partialities
            );
        }
        ScenarioKind::Custom => {}
    }
}

/// Runs a scenario file for one seed or a seed range, writing traces and
/// printing one summary per run.
#[allow(clippy::too_many_arguments)]
pub fn cmd_run(
    path: &Path,
    seed: Option<u64>,
    seed_range: Option<(u64, u64)>,
    steps: Option<u64>,
    out_path: Option<&Path>,
    format: OutputFormat,
    out: &mut dyn Write,
) -> i32 {
    let file = match ScenarioFile::load(path) {
        Ok(file) => file,
        Err(err) => {
            let _ = writeln!(out, "error: {err}");
            return config_exit(&err);
        }
    };
    let steps = steps.unwrap_or_else(|| file.steps());
    let seeds: Vec<u64> = match seed_range {
        Some((start, end)) => (start..end).collect(),
        None => vec![seed.unwrap_or_else(|| file.seed())],
    };

    // Independent runs may execute concurrently; results are reported in
    // seed order regardless.
    let results: Vec<(u64, Result<Trace, ConfigError>)> = if seeds.len() > 1 {
        std::thread::scope(|scope| {
            let handles: Vec<_> = seeds
                .iter()
                .map(|&s| {
                    let file = &file;
                    scope.spawn(move || (s, run_one(file, s, steps)))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("run thread")).collect()
        })
    } else {
        seeds.iter().map(|&s| (s, run_one(&file, s, steps))).collect()
    };

    let mut exit = EXIT_OK;
    for (s, result) in results {
        match result {
            Err(err) => {
                let _ = writeln!(out, "error: {err}");
                return config_exit(&err);
            }
            Ok(trace) => {
                if let Some(base) = out_path {
                    let target: PathBuf = if seeds.len() > 1 {
                        let mut name = base.as_os_str().to_owned();
                        name.push(format!(".seed{s}"));
                        PathBuf::from(name)
                    } else {
                        base.to_path_buf()
                    };
                    if let Err(err) = write_trace(&trace, &target, format) {
                        let _ = writeln!(out, "error: writing {}: {err}", target.display());
                        return EXIT_PARSE;
                    }
                }
                summarise(&file, &trace, out);
                if TraceSummary::from_trace(&trace).alarms > 0 {
                    exit = exit.max(EXIT_ALARM);
                }
            }
        }
    }
    exit
}

/// Classifies a score vector against a nerve, printing the point or the
/// exception.
pub fn cmd_classify(
    scores_path: &Path,
    nerve_path: &Path,
    p_low: f64,
    p_high: f64,
    out: &mut dyn Write,
) -> i32 {
    let thresholds = match Thresholds::new(p_low, p_high) {
        Ok(t) => t,
        Err(err) => {
            let _ = writeln!(out, "error: {err}");
            return EXIT_INVALID;
        }
    };
    let nerve_text = match std::fs::read_to_string(nerve_path) {
        Ok(text) => text,
        Err(err) => {
            let _ = writeln!(out, "error: reading {}: {err}", nerve_path.display());
            return EXIT_PARSE;
        }
    };
    let nerve = match toml::from_str::<NerveSection>(&nerve_text)
        .map_err(ConfigError::from)
        .and_then(|section| section.build())
    {
        Ok(nerve) => nerve,
        Err(err) => {
            let _ = writeln!(out, "error: {err}");
            return config_exit(&err);
        }
    };
    let scores_text = match std::fs::read_to_string(scores_path) {
        Ok(text) => text,
        Err(err) => {
            let _ = writeln!(out, "error: reading {}: {err}", scores_path.display());
            return EXIT_PARSE;
        }
    };
    let raw: BTreeMap<String, f64> = match toml::from_str(&scores_text) {
        Ok(map) => map,
        Err(err) => {
            let _ = writeln!(out, "error: {err}");
            return EXIT_PARSE;
        }
    };
    let mut entries = Vec::new();
    for (name, value) in raw {
        match ModeId::new(name) {
            Ok(id) => entries.push((id, value)),
            Err(err) => {
                let _ = writeln!(out, "error: {err}");
                return EXIT_INVALID;
            }
        }
    }
    let scores = match ScoreVector::new(entries) {
        Ok(scores) => scores,
        Err(err) => {
            let _ = writeln!(out, "error: {err}");
            return EXIT_INVALID;
        }
    };
    if let Err(err) = scores.check_total(&nerve) {
        let _ = writeln!(out, "error: {err}");
        return EXIT_INVALID;
    }

    match classify(&scores, thresholds, &nerve) {
        ClassificationOutcome::Point(point) => {
            let _ = writeln!(out, "point");
            for (mode, t) in point.coords() {
                let _ = writeln!(out, "  {mode} = {t:.11e}");
            }
        }
        ClassificationOutcome::Partiality { best } => {
            let _ = writeln!(out, "partiality");
            if let Some((mode, score)) = best {
                let _ = writeln!(out, "  best {mode} = {score:.11e}");
            }
        }
        ClassificationOutcome::Contradiction { support, .. } => {
            let names: Vec<&str> = support.iter().map(|m| m.as_str()).collect();
            let _ = writeln!(out, "contradiction");
            let _ = writeln!(out, "  support {{{}}}", names.join(", "));
        }
    }
    EXIT_OK
}
