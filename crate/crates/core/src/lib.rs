//! Proactive streaming video dialogue: a turn-taking protocol with an
//! explicit "no reply" sentinel, PAUC scoring of timed replies, composite
//! RL rewards, dialogue dataset construction and a session simulator.

pub mod cli;
pub mod dataset;
pub mod harness;
pub mod metrics;
pub mod protocol;
pub mod rewards;
pub mod scoring;
