//! Deterministic closed-loop log-replay evaluation of driving policies.

pub mod batch;
pub mod cli;
pub mod config;
pub mod forge;
pub mod geometry;
pub mod map;
pub mod metrics;
pub mod par;
pub mod policy;
pub mod replay;
pub mod scenario;
