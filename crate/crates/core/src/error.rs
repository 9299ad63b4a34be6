//! Shared error type for the planning toolkit.

/// Errors produced by the latency model, workload handling, simulator, and
/// placement search.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A parallelism or model configuration is invalid (e.g. a divisibility
    /// violation when sharding).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A queueing-model utilization condition is violated; the queue has no
    /// finite steady state.
    #[error("unstable queue: utilization {utilization:.4} >= {limit:.4}")]
    UnstableQueue { utilization: f64, limit: f64 },

    /// Coefficient fitting failed.
    #[error("fit error: {0}")]
    Fit(#[from] FitError),

    /// A trace or profile row could not be parsed.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A workload generator was given an empty source trace.
    #[error("empty workload source")]
    EmptySource,

    /// No feasible placement exists, or a placement fails validation.
    #[error("placement error: {0}")]
    Placement(String),

    /// A single request's KV cache cannot fit the instance budget; the
    /// simulation would deadlock.
    #[error(
        "capacity error: request {request_id} needs {needed_bytes} B of KV cache \
         but the instance budget is {budget_bytes} B"
    )]
    Capacity {
        request_id: u64,
        needed_bytes: u64,
        budget_bytes: u64,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Failure modes of the least-squares coefficient fit.
#[derive(Debug, thiserror::Error)]
pub enum FitError {
    /// The design matrix is rank-deficient; `feature` names the column that
    /// carries no independent information.
    #[error("rank-deficient design matrix: feature '{feature}' is degenerate")]
    Degenerate { feature: &'static str },

    /// Too few profile rows for the requested phase.
    #[error("need at least {needed} {phase} rows with distinct features, got {got}")]
    Insufficient {
        phase: &'static str,
        needed: usize,
        got: usize,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
