//! Discrete-event simulation of distributed dispatching of serverless
//! functions over edge computers.

pub mod engine;
pub mod estimator;
pub mod factorial;
pub mod network;
pub mod policies;
pub mod scenario;
pub mod simcomputer;
pub mod stats;
pub mod suites;
pub mod types;
