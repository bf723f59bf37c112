//! Statistical action selection from observed event counts.
//!
//! The engine keeps occurrence counts for a catalog of events, turns pairs
//! (or triples) of counts into binomial confidence intervals, and commits to
//! an action, a set of preconditions, or a plan step only when those
//! intervals are strictly separated. When they overlap it falls back to
//! explicit advice rules, or reports that it cannot decide.
//!
//! Modules, bottom up:
//!
//! - [`interval_stats`]: approximate and exact binomial intervals, the
//!   interval order.
//! - [`temporal`]: tick intervals and Allen relations.
//! - [`event_model`]: events as feature conjunctions, subsumption,
//!   classification.
//! - [`knowledge_base`]: occurrence counting and confidence queries.
//! - [`decision_engine`]: action choice, advice, preconditions, sequences.
//! - [`rail_sim`]: a seeded railroad-coupling world and scenario runner.

pub mod decision_engine;
pub mod event_model;
pub mod interval_stats;
pub mod knowledge_base;
pub mod rail_sim;
pub mod temporal;
