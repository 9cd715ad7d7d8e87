//! Discrete-event simulation of concurrent smart-home routines under
//! different visibility models.

pub mod batch;
pub mod clock;
pub mod config;
pub mod engine;
pub mod error;
pub mod fabric;
pub mod lineage;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod scheduler;
pub mod trace;
pub mod workload;

pub use error::{Error, Result};
