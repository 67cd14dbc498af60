use std::path::PathBuf;

use thiserror::Error;

use crate::simcore::SimTime;

/// Errors raised by the simulator and its supporting modules.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("causality violation: event at {event} precedes clock {clock}")]
    Causality { event: SimTime, clock: SimTime },

    #[error("livelock: event cap of {cap} exceeded")]
    Livelock { cap: u64 },

    #[error("frequency {mhz} MHz outside table range [{min}, {max}] on device {device}")]
    FrequencyOutOfRange {
        device: String,
        mhz: f64,
        min: f64,
        max: f64,
    },

    #[error("cannot change frequency of device {device} while {active} request(s) are in service")]
    FrequencyChangeMidService { device: String, active: u32 },

    #[error("invalid profile {name}: {reason}")]
    InvalidProfile { name: String, reason: String },

    #[error("invalid service model: {0}")]
    InvalidServiceModel(String),

    #[error("kv cache admission failed: all {capacity} blocks referenced")]
    KvAdmission { capacity: usize },

    #[error("object {key} ({size} bytes) cannot fit: {pinned} pinned bytes, capacity {capacity}")]
    CannotFit {
        key: String,
        size: u64,
        pinned: u64,
        capacity: u64,
    },

    #[error("duplicate sort_key {0} among dynamic segments")]
    DuplicateSortKey(i64),

    #[error("empty prompt template")]
    EmptyTemplate,

    #[error("duplicate program id {0}")]
    DuplicateProgram(String),

    #[error("program database is empty")]
    EmptyDatabase,

    #[error("request {0} has no content key; required by key-based routing")]
    MissingContentKey(u64),

    #[error("no replicas to route to")]
    NoReplicas,

    #[error("invalid workflow: {0}")]
    InvalidWorkflow(String),

    #[error("invalid load: {0}")]
    InvalidLoad(String),

    #[error("{path}:{line}: {reason}")]
    TraceParse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("empty input to {0}")]
    EmptyInput(&'static str),

    #[error("percentile {0} outside (0, 100]")]
    InvalidPercentile(f64),

    #[error("breakpoints not sorted by time at index {0}")]
    UnsortedBreakpoints(usize),

    #[error("config error at `{path}`: {reason}")]
    Config { path: String, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SimError {
    pub fn config(path: impl Into<String>, reason: impl Into<String>) -> Self {
        SimError::Config {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SimError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors that stem from an invalid scenario rather than a
    /// failure while the simulation was running.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            SimError::Config { .. }
                | SimError::InvalidProfile { .. }
                | SimError::InvalidServiceModel(_)
                | SimError::InvalidWorkflow(_)
                | SimError::InvalidLoad(_)
                | SimError::TraceParse { .. }
                | SimError::FrequencyOutOfRange { .. }
        )
    }
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;
