//! Supervision of analogue-digital systems with multiple modes of
//! physical behaviour.
//!
//! A system is described by a portfolio of modes, each with its own
//! partial picture of the physical world, evaluation function and
//! orders. The portfolio's geometry is the nerve: an abstract simplicial
//! complex whose simplices are the mode subsets certified as
//! simultaneously valid. Classification maps evaluation scores to a
//! barycentric point of the nerve; a supervisor uses it to keep the
//! system in a mode that describes reality, moving along guarded
//! transition functions and handling the two exceptions — partiality and
//! contradiction — that signal the unknown.
//!
//! The crate ships three executable scenarios (a two-car chicane race, a
//! three-planet tracking system, and an atlas of overlapping charts on
//! the circle) plus a command-line driver for running, validating and
//! classifying against configuration files.

pub mod cli;
pub mod config;
pub mod modes;
pub mod nerve;
pub mod oracle;
pub mod scenarios;
pub mod supervisor;
pub mod trace;
pub mod transitions;

pub use modes::{
    classify, ClassificationOutcome, ModeRegistry, ModeState, Orders, ScoreVector, Thresholds,
};
pub use nerve::{mode, ModeId, Nerve, NervePoint, Simplex};
pub use supervisor::{Decision, Strategy, SupervisorConfig, SupervisorState};
pub use transitions::TransitionRegistry;
