//! Skill evolution for embodied agents.
//!
//! A skill is an ordered list of natural-language rules plus an appendix of
//! execution reminders. Episodes run against an environment produce
//! trajectories; typed reflections on those trajectories drive revisions of
//! the body (discoveries, optimizations, defect fixes) and of the appendix
//! (execution lapses), never both from the same record.

pub mod catalog;
pub mod env;
pub mod episode;
pub mod evolution;
pub mod executor;
pub mod gateway;
pub mod microworld;
pub mod reflection;
pub mod revision;
pub mod skill;
pub mod store;
pub mod trajectory;
pub mod vocab;
