//! Operator surface for the magellan engine: warm-up, batch runs,
//! ablation sweeps, synthetic world generation, trace inspection, and
//! grading. Exposed as a library so the commands and fixtures are
//! drivable from integration tests.

pub mod adapters;
pub mod commands;
pub mod config;
pub mod error;
pub mod policy;
pub mod report;
pub mod world;
