//! Language-to-vision-to-action navigation engine over a deterministic
//! synthetic world.

pub mod agent;
pub mod cli;
pub mod geometry;
pub mod mapping;
pub mod metrics;
pub mod planner;
pub mod remote;
pub mod runner;
pub mod scb;
pub mod tdm;
pub mod world;
