use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use oamalloc::{BackendKind, ReclaimConfig, ReclaimScheme};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("insert and remove percentages must be equal (got {insert} and {remove})")]
    UnbalancedMix { insert: u32, remove: u32 },
    #[error("operation percentages must sum to 100 (got {0})")]
    BadMixTotal(u32),
    #[error("prefill must be at least 1")]
    EmptyPrefill,
    #[error("thread count must be at least 1")]
    NoThreads,
    #[error("runs must be at least 1")]
    NoRuns,
    #[error("duration must be positive unless an operation limit is set")]
    NoDuration,
    #[error("backend `{0}` is not supported on this platform")]
    UnsupportedBackend(BackendKind),
    #[error("unknown structure `{0}` (expected list or map)")]
    UnknownStructure(String),
    #[error("invalid reclamation settings: {0}")]
    Reclaim(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Structure {
    List,
    Map,
}

impl Structure {
    pub fn as_str(self) -> &'static str {
        match self {
            Structure::List => "list",
            Structure::Map => "map",
        }
    }
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Structure {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "list" => Ok(Structure::List),
            "map" => Ok(Structure::Map),
            other => Err(ConfigError::UnknownStructure(other.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkloadConfig {
    pub structure: Structure,
    pub prefill: usize,
    pub search_pct: u32,
    pub insert_pct: u32,
    pub remove_pct: u32,
    pub threads: usize,
    pub duration: Duration,
    pub runs: usize,
    pub scheme: ReclaimScheme,
    pub backend: BackendKind,
    pub seed: u64,
    /// Per-thread operation budget. When set, a run ends once every thread
    /// has completed its budget, and the warm-up is skipped so that runs
    /// are reproducible.
    pub ops_limit: Option<u64>,
    pub warmup: Duration,
    pub limbo_capacity: usize,
    pub scan_threshold: usize,
    pub hazard_slots: usize,
    pub audit: bool,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        let reclaim = ReclaimConfig::default();
        WorkloadConfig {
            structure: Structure::List,
            prefill: 5000,
            search_pct: 50,
            insert_pct: 25,
            remove_pct: 25,
            threads: 1,
            duration: Duration::from_secs(1),
            runs: 10,
            scheme: ReclaimScheme::Ver,
            backend: BackendKind::KeepResident,
            seed: 1,
            ops_limit: None,
            warmup: Duration::from_millis(100),
            limbo_capacity: reclaim.limbo_capacity,
            scan_threshold: reclaim.scan_threshold,
            hazard_slots: reclaim.hazard_slots,
            audit: false,
        }
    }
}

impl WorkloadConfig {
    /// Keys are drawn from `0..key_range()`.
    pub fn key_range(&self) -> u64 {
        2 * self.prefill as u64
    }

    pub fn reclaim_config(&self) -> ReclaimConfig {
        ReclaimConfig {
            scheme: self.scheme,
            limbo_capacity: self.limbo_capacity,
            scan_threshold: self.scan_threshold,
            hazard_slots: self.hazard_slots,
            audit: self.audit,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.insert_pct != self.remove_pct {
            return Err(ConfigError::UnbalancedMix { insert: self.insert_pct, remove: self.remove_pct });
        }
        let total = self.search_pct + self.insert_pct + self.remove_pct;
        if total != 100 {
            return Err(ConfigError::BadMixTotal(total));
        }
        if self.prefill == 0 {
            return Err(ConfigError::EmptyPrefill);
        }
        if self.threads == 0 {
            return Err(ConfigError::NoThreads);
        }
        if self.runs == 0 {
            return Err(ConfigError::NoRuns);
        }
        if self.duration.is_zero() && self.ops_limit.is_none() {
            return Err(ConfigError::NoDuration);
        }
        if !self.backend.is_supported() {
            return Err(ConfigError::UnsupportedBackend(self.backend));
        }
        self.reclaim_config().validate().map_err(|e| ConfigError::Reclaim(e.to_string()))
    }
}
