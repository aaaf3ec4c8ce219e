//! Simulation trace records and their two serialisations: a structured
//! line-delimited format for replay and diffing, and a text table for
//! humans.
//!
//! The structured format is UTF-8, one JSON document per line: a header
//! with schema version, scenario and seed, then one record per step.
//! Serialisation is deterministic (ordered maps, fixed field order), so
//! identical runs produce byte-identical files.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TRACE_SCHEMA: &str = "nervemode.trace";
pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {0}: {1}")]
    Malformed(usize, serde_json::Error),
    #[error("missing header line")]
    MissingHeader,
    #[error("unsupported schema `{schema}` version {version}")]
    UnsupportedSchema { schema: String, version: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema: String,
    pub version: u32,
    pub scenario: String,
    pub seed: u64,
}

/// Snapshot of one defined state variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarSnapshot {
    pub value: f64,
    pub error: f64,
    pub time: f64,
}

/// Per-system slice of one step. `None` state entries are variables the
/// mode currently marks undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemRecord {
    pub id: String,
    /// Mode at the start of the step, before any decision.
    pub mode: String,
    pub scores: BTreeMap<String, f64>,
    /// Classification outcome tag: well | point | partiality | contradiction.
    pub outcome: String,
    /// Decision tag: stay | transition | degraded-transition | alarm.
    pub decision: String,
    pub target: Option<String>,
    /// Non-normal quality flags observed in this step's responses.
    pub flags: Vec<String>,
    /// Variables undefined after the step.
    pub undefined: Vec<String>,
    /// Variables queried at urgent priority during the step.
    pub urgent_queries: Vec<String>,
    pub state: BTreeMap<String, Option<VarSnapshot>>,
    /// Ground-truth values, for safety audits of the simulation.
    pub truth: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: u64,
    pub time: f64,
    pub systems: Vec<SystemRecord>,
    /// Scenario-level events (cooperation attempts and the like).
    pub events: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn new(scenario: &str, seed: u64) -> Self {
        Trace {
            header: TraceHeader {
                schema: TRACE_SCHEMA.to_owned(),
                version: TRACE_VERSION,
                scenario: scenario.to_owned(),
                seed,
            },
            records: Vec::new(),
        }
    }

    pub fn write_structured(&self, mut w: impl Write) -> io::Result<()> {
        let header = serde_json::to_string(&self.header)?;
        writeln!(w, "{header}")?;
        for record in &self.records {
            let line = serde_json::to_string(record)?;
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_structured(r: impl BufRead) -> Result<Self, TraceError> {
        let mut lines = r.lines().enumerate();
        let header: TraceHeader = match lines.next() {
            None => return Err(TraceError::MissingHeader),
            Some((n, line)) => {
                serde_json::from_str(&line?).map_err(|e| TraceError::Malformed(n + 1, e))?
            }
        };
        if header.schema != TRACE_SCHEMA || header.version != TRACE_VERSION {
            return Err(TraceError::UnsupportedSchema {
                schema: header.schema,
                version: header.version,
            });
        }
        let mut records = Vec::new();
        for (n, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(
                serde_json::from_str(&line).map_err(|e| TraceError::Malformed(n + 1, e))?,
            );
        }
        Ok(Trace { header, records })
    }

    pub fn write_text_table(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(
            w,
            "# scenario={} seed={} records={}",
            self.header.scenario,
            self.header.seed,
            self.records.len()
        )?;
        writeln!(
            w,
            "{:>6} {:>9}  {:<10} {:<14} {:<13} {:<20} {}",
            "step", "time", "system", "mode", "outcome", "decision", "notes"
        )?;
        for record in &self.records {
            for system in &record.systems {
                let mut notes = Vec::new();
                if let Some(target) = &system.target {
                    notes.push(format!("-> {target}"));
                }
                if !system.flags.is_empty() {
                    notes.push(format!("flags={}", system.flags.join(",")));
                }
                if !system.undefined.is_empty() {
                    notes.push(format!("undef={}", system.undefined.join(",")));
                }
                writeln!(
                    w,
                    "{:>6} {:>9.3}  {:<10} {:<14} {:<13} {:<20} {}",
                    record.step,
                    record.time,
                    system.id,
                    system.mode,
                    system.outcome,
                    system.decision,
                    notes.join(" ")
                )?;
            }
            for event in &record.events {
                writeln!(w, "{:>6} {:>9.3}  event: {event}", record.step, record.time)?;
            }
        }
        Ok(())
    }
}

/// Aggregate counts a run summary is built from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraceSummary {
    /// (system, mode) → steps spent in that mode.
    pub occupancy: BTreeMap<(String, String), u64>,
    pub transitions: u64,
    pub degraded_transitions: u64,
    pub alarms: u64,
    pub partialities: u64,
    pub contradictions: u64,
    /// Distinct non-normal flags seen.
    pub flags: Vec<String>,
}

impl TraceSummary {
    pub fn from_trace(trace: &Trace) -> Self {
        let mut summary = TraceSummary::default();
        let mut flags: Vec<String> = Vec::new();
        for record in &trace.records {
            for system in &record.systems {
                *summary
                    .occupancy
                    .entry((system.id.clone(), system.mode.clone()))
                    .or_default() += 1;
                match system.decision.as_str() {
                    "transition" => summary.transitions += 1,
                    "degraded-transition" => summary.degraded_transitions += 1,
                    "alarm" => summary.alarms += 1,
                    _ => {}
                }
                match system.outcome.as_str() {
                    "partiality" => summary.partialities += 1,
                    "contradiction" => summary.contradictions += 1,
                    _ => {}
                }
                for flag in &system.flags {
                    if !flags.contains(flag) {
                        flags.push(flag.clone());
                    }
                }
            }
        }
        flags.sort();
        summary.flags = flags;
        summary
    }
}
