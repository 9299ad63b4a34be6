//! Maximum-goodput search: the largest arrival rate whose simulated SLO
//! attainment still meets the target.
//!
//! Every probe resamples a fresh workload at the probed rate with a seed
//! derived from the trial index, so a search is reproducible end to end.

use crate::cluster::{ClusterSpec, InstanceConfig, SloSpec};
use crate::error::{Error, Result};
use crate::latency::LatencyCoefficients;
use crate::model::ModelSpec;
use crate::placement::Placement;
use crate::workload::{sample_workload, Request, WorkloadSpec};

use super::{simulate_instances, simulate_with_limits, BatchLimits, SimMode};

/// Request counts for one goodput trial: a warmup prefix fills the pipeline,
/// attainment is measured over the rest.
#[derive(Debug, Clone, Copy)]
pub struct TrialConfig {
    pub warmup: usize,
    pub measured: usize,
}

impl Default for TrialConfig {
    fn default() -> Self {
        TrialConfig {
            warmup: 100,
            measured: 900,
        }
    }
}

impl TrialConfig {
    pub fn total(&self) -> usize {
        self.warmup + self.measured
    }
}

/// Termination and seeding knobs for the rate search.
#[derive(Debug, Clone, Copy)]
pub struct SearchParams {
    /// Base seed; each trial derives its own seed from this and its index.
    pub seed: u64,
    /// Stop when the bracket is narrower than `max(abs_tol_rps, rel_tol * lo)`.
    pub abs_tol_rps: f64,
    pub rel_tol: f64,
    /// The rate probed first; failing here means goodput 0.
    pub floor_rate_rps: f64,
    pub max_doublings: u32,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams {
            seed: 0,
            abs_tol_rps: 0.01,
            rel_tol: 0.01,
            floor_rate_rps: 1e-3,
            max_doublings: 60,
        }
    }
}

impl SearchParams {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Outcome of a goodput search.
#[derive(Debug, Clone, Copy)]
pub struct GoodputResult {
    /// Largest tested rate whose attainment met the target.
    pub goodput_rps: f64,
    /// Simulation trials spent.
    pub trials: u32,
    /// True when some trial aborted because a single request exceeded the
    /// KV budget; such trials count as zero attainment.
    pub capacity_limited: bool,
}

fn mix_seed(base: u64, index: u64) -> u64 {
    // splitmix64 over the pair keeps per-trial streams independent
    let mut z = base ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Binary-search driver shared by every goodput probe. `attain` runs one
/// trial at (rate, seed) and returns the measured attainment.
fn search_max_rate(
    mut attain: impl FnMut(f64, u64) -> Result<f64>,
    target: f64,
    params: &SearchParams,
) -> Result<GoodputResult> {
    let mut trials = 0u32;
    let mut capacity_limited = false;
    let mut probe = |rate: f64, trials: &mut u32, flag: &mut bool| -> Result<f64> {
        let seed = mix_seed(params.seed, *trials as u64);
        *trials += 1;
        match attain(rate, seed) {
            Ok(a) => Ok(a),
            Err(Error::Capacity { .. }) => {
                *flag = true;
                Ok(0.0)
            }
            Err(e) => Err(e),
        }
    };

    let floor = params.floor_rate_rps.max(1e-9);
    if probe(floor, &mut trials, &mut capacity_limited)? < target {
        return Ok(GoodputResult {
            goodput_rps: 0.0,
            trials,
            capacity_limited,
        });
    }

    // Exponential bracket: double until the target fails.
    let mut lo = floor;
    let mut hi = floor;
    let mut bracketed = false;
    for _ in 0..params.max_doublings {
        let next = hi * 2.0;
        if probe(next, &mut trials, &mut capacity_limited)? >= target {
            lo = next;
            hi = next;
        } else {
            hi = next;
            bracketed = true;
            break;
        }
    }
    if !bracketed {
        return Ok(GoodputResult {
            goodput_rps: lo,
            trials,
            capacity_limited,
        });
    }

    while hi - lo > params.abs_tol_rps.max(params.rel_tol * lo) {
        let mid = 0.5 * (lo + hi);
        if probe(mid, &mut trials, &mut capacity_limited)? >= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    Ok(GoodputResult {
        goodput_rps: lo,
        trials,
        capacity_limited,
    })
}

/// Maximum rate a full placement sustains at the SLO attainment target.
#[allow(clippy::too_many_arguments)]
pub fn max_goodput(
    model: &ModelSpec,
    placement: &Placement,
    source: &[Request],
    slo: &SloSpec,
    coef: &LatencyCoefficients,
    cluster: &ClusterSpec,
    trial: &TrialConfig,
    params: &SearchParams,
) -> Result<GoodputResult> {
    max_goodput_with_limits(
        model,
        placement,
        source,
        slo,
        coef,
        cluster,
        trial,
        params,
        &BatchLimits::default(),
    )
}

/// [`max_goodput`] with explicit batching-limit overrides.
#[allow(clippy::too_many_arguments)]
pub fn max_goodput_with_limits(
    model: &ModelSpec,
    placement: &Placement,
    source: &[Request],
    slo: &SloSpec,
    coef: &LatencyCoefficients,
    cluster: &ClusterSpec,
    trial: &TrialConfig,
    params: &SearchParams,
    limits: &BatchLimits,
) -> Result<GoodputResult> {
    if source.is_empty() {
        return Err(Error::EmptySource);
    }
    search_max_rate(
        |rate, seed| {
            let workload = sample_workload(
                &WorkloadSpec {
                    rate_r: rate,
                    num_requests: trial.total(),
                    seed,
                },
                source,
            )?;
            let result =
                simulate_with_limits(model, placement, &workload, slo, coef, cluster, limits)?;
            Ok(result.attainment_after(trial.warmup))
        },
        slo.attainment_target,
        params,
    )
}

/// Goodput of one standalone instance under a single-phase simulation.
#[allow(clippy::too_many_arguments)]
fn simu_phase(
    model: &ModelSpec,
    instance: &InstanceConfig,
    mode: SimMode,
    source: &[Request],
    slo: &SloSpec,
    coef: &LatencyCoefficients,
    trial: &TrialConfig,
    params: &SearchParams,
) -> Result<GoodputResult> {
    if source.is_empty() {
        return Err(Error::EmptySource);
    }
    let instances = [instance.clone()];
    search_max_rate(
        |rate, seed| {
            let workload = sample_workload(
                &WorkloadSpec {
                    rate_r: rate,
                    num_requests: trial.total(),
                    seed,
                },
                source,
            )?;
            let result = simulate_instances(model, &instances, mode, &workload, slo, coef)?;
            Ok(result.attainment_after(trial.warmup))
        },
        slo.attainment_target,
        params,
    )
}

/// Prefill-only goodput: a request is satisfied when its TTFT meets the
/// scaled target. Decoding and KV transfer are not simulated.
pub fn simu_prefill(
    model: &ModelSpec,
    instance: &InstanceConfig,
    source: &[Request],
    slo: &SloSpec,
    coef: &LatencyCoefficients,
    trial: &TrialConfig,
    params: &SearchParams,
) -> Result<GoodputResult> {
    simu_phase(
        model,
        instance,
        SimMode::PrefillOnly,
        source,
        slo,
        coef,
        trial,
        params,
    )
}

/// Decoding-only goodput: requests arrive with KV already materialized and
/// are satisfied when their TPOT meets the scaled target.
pub fn simu_decode(
    model: &ModelSpec,
    instance: &InstanceConfig,
    source: &[Request],
    slo: &SloSpec,
    coef: &LatencyCoefficients,
    trial: &TrialConfig,
    params: &SearchParams,
) -> Result<GoodputResult> {
    simu_phase(
        model,
        instance,
        SimMode::DecodeOnly,
        source,
        slo,
        coef,
        trial,
        params,
    )
}
