//! M/D/1 queueing estimates for the prefill phase.
//!
//! With uniform prompt lengths a prefill instance behaves as a single server
//! with deterministic service time `D` under Poisson arrivals at rate `R`,
//! which has a closed-form mean waiting time. Variants cover 2-way pipeline
//! parallelism (halved stage time) and 2-way tensor parallelism (execution
//! time divided by an imperfect speedup `K`).

use crate::error::{Error, Result};

/// Mean TTFT of an M/D/1 queue: `D + R*D^2 / (2*(1 - R*D))`.
///
/// Requires the utilization condition `R*D < 1`.
pub fn mdl_avg_ttft(exec_d: f64, rate_r: f64) -> Result<f64> {
    let util = rate_r * exec_d;
    if util >= 1.0 {
        return Err(Error::UnstableQueue {
            utilization: util,
            limit: 1.0,
        });
    }
    Ok(exec_d + rate_r * exec_d * exec_d / (2.0 * (1.0 - util)))
}

/// Mean TTFT under 2-way inter-op (pipeline) parallelism:
/// `D + R*D^2 / (4*(2 - R*D))`, stable while `R*D < 2`.
///
/// The request-level latency stays `D` (two stages of `D/2`), but the
/// bottleneck stage serves at twice the rate.
pub fn mdl_avg_ttft_inter(exec_d: f64, rate_r: f64) -> Result<f64> {
    let util = rate_r * exec_d;
    if util >= 2.0 {
        return Err(Error::UnstableQueue {
            utilization: util / 2.0,
            limit: 1.0,
        });
    }
    Ok(exec_d + rate_r * exec_d * exec_d / (4.0 * (2.0 - util)))
}

/// Mean TTFT under 2-way intra-op (tensor) parallelism with speedup
/// `K in (1, 2]`: `D/K + R*D^2 / (2*K*(K - R*D))`, stable while `R*D < K`.
pub fn mdl_avg_ttft_intra(exec_d: f64, rate_r: f64, speedup_k: f64) -> Result<f64> {
    if !(speedup_k > 1.0 && speedup_k <= 2.0) {
        return Err(Error::Config(format!(
            "speedup K must be in (1, 2], got {speedup_k}"
        )));
    }
    let util = rate_r * exec_d;
    if util >= speedup_k {
        return Err(Error::UnstableQueue {
            utilization: util / speedup_k,
            limit: 1.0,
        });
    }
    Ok(exec_d / speedup_k + rate_r * exec_d * exec_d / (2.0 * speedup_k * (speedup_k - util)))
}
