use serde::{Deserialize, Serialize};

use crate::model::DEFAULT_SHORT_BOUND_MS;

/// Knobs of the lineage table, the schedulers and the device fabric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Lock-hold estimate for short commands.
    pub tau_timeout_ms: u64,
    /// Lease revocation slack multiplier.
    pub leniency: f64,
    pub short_bound_ms: u64,
    /// Timeline scheduling defers an admission that would stretch a running
    /// routine past this multiple of its ideal runtime.
    pub stretch_threshold: f64,
    pub ttl_init: u32,
    pub pre_lease: bool,
    pub post_lease: bool,
    /// Under EV, abort a routine at its start point when one of its Must
    /// commands targets a device already known to be down.
    pub fail_fast: bool,
    pub detector: DetectorConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            tau_timeout_ms: 100,
            leniency: 1.1,
            short_bound_ms: DEFAULT_SHORT_BOUND_MS,
            stretch_threshold: 2.0,
            ttl_init: 5,
            pre_lease: true,
            post_lease: true,
            fail_fast: true,
            detector: DetectorConfig::default(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> crate::Result<()> {
        use crate::Error::InvalidParam;
        if !(self.leniency >= 1.0) {
            return Err(InvalidParam(format!("leniency {} < 1", self.leniency)));
        }
        if self.tau_timeout_ms == 0 || self.short_bound_ms == 0 {
            return Err(InvalidParam("durations must be positive".into()));
        }
        if !(self.stretch_threshold > 0.0) {
            return Err(InvalidParam("stretch threshold must be positive".into()));
        }
        self.detector.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub ping_interval_ms: u64,
    pub ack_timeout_ms: u64,
    pub implicit_ack: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig { ping_interval_ms: 1000, ack_timeout_ms: 100, implicit_ack: true }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if self.ack_timeout_ms == 0 || self.ack_timeout_ms >= self.ping_interval_ms {
            return Err(crate::Error::InvalidParam("ack timeout must be in (0, ping interval)".into()));
        }
        Ok(())
    }
}
