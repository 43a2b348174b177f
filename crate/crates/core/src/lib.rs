//! Crowd-scale robot teleoperation platform: a coordination service that
//! queues operators onto a small fleet of simulated arms, per-session command
//! pipelines, multi-rate session logs and demonstration analytics.

pub mod protocol;
pub mod sim;
pub mod teleop;
pub mod recorder;
pub mod coordination;
pub mod fleet;
pub mod scenario;
pub mod server;
pub mod analytics;
