//! Paired-evaluation toolkit for LLM migration decisions.
//!
//! The crate turns raw evaluation artifacts (run logs, judge verdicts, human
//! labels) into calibrated accuracy posteriors, Monte-Carlo comparisons
//! between a baseline and candidate model, style and schema-conformance
//! summaries, and a staged gate/selection pipeline that narrows a candidate
//! pool to a minimal covering set.
//!
//! Data flows roughly as: [`dataset`] loads and joins JSONL records,
//! [`calibration`] fits Beta posteriors for judge true/false-positive rates,
//! [`comparison`] propagates them through paired verdicts ([`stochastics`]
//! supplies the deterministic samplers), [`quality_checks`] covers the
//! non-accuracy signals, and [`pipeline`] applies the gates. [`judge`] talks
//! to a chat-completion endpoint to produce verdicts in the first place, and
//! [`report`] renders everything for humans or machines.

pub mod calibration;
pub mod cli;
pub mod comparison;
pub mod dataset;
pub mod error;
pub mod judge;
pub mod pipeline;
pub mod quality_checks;
pub mod report;
pub mod stochastics;

pub use error::{Error, Result};
