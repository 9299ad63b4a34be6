//! Request traces, workload resampling, and pattern-shift detection.
//!
//! Traces are JSON Lines of `{"arrival_s": float?, "input_len": int,
//! "output_len": int}`. Workloads for simulation are resampled from a source
//! trace: length pairs are drawn by paired bootstrap (keeping input/output
//! correlation intact) and arrivals follow a Poisson process at the target
//! rate. Everything is deterministic under a fixed seed.

use std::io::BufRead;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One serving request: arrival time plus prompt/output token counts.
/// `output_len` includes the first token produced by prefill.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub arrival_s: f64,
    pub input_len: u32,
    pub output_len: u32,
}

/// Parameters for resampling a workload from a source trace.
#[derive(Debug, Clone)]
pub struct WorkloadSpec {
    /// Mean arrival rate in requests per second.
    pub rate_r: f64,
    pub num_requests: usize,
    pub seed: u64,
}

/// Aggregate statistics over a monitoring window, used for replanning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkloadStats {
    pub mean_input_len: f64,
    pub mean_output_len: f64,
    pub mean_rate: f64,
    pub window_s: f64,
}

impl WorkloadStats {
    /// Summarize a trace slice, deriving the rate from its arrival span.
    pub fn from_requests(requests: &[Request]) -> Self {
        if requests.is_empty() {
            return WorkloadStats {
                mean_input_len: 0.0,
                mean_output_len: 0.0,
                mean_rate: 0.0,
                window_s: 0.0,
            };
        }
        let n = requests.len() as f64;
        let first = requests.first().unwrap().arrival_s;
        let last = requests.last().unwrap().arrival_s;
        let window = (last - first).max(f64::EPSILON);
        WorkloadStats {
            mean_input_len: requests.iter().map(|r| r.input_len as f64).sum::<f64>() / n,
            mean_output_len: requests.iter().map(|r| r.output_len as f64).sum::<f64>() / n,
            mean_rate: n / window,
            window_s: window,
        }
    }
}

#[derive(Deserialize)]
struct TraceRow {
    arrival_s: Option<f64>,
    input_len: u32,
    output_len: u32,
}

/// Load a JSONL trace, sorted by arrival time. Rows without `arrival_s` are
/// stamped 0 and must be re-stamped by [`sample_workload`] before simulation.
pub fn load_trace(path: &Path) -> Result<Vec<Request>> {
    let file = std::fs::File::open(path)?;
    read_trace(std::io::BufReader::new(file))
}

/// Parse a JSONL trace from any reader; see [`load_trace`].
pub fn read_trace<R: BufRead>(reader: R) -> Result<Vec<Request>> {
    let mut requests = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: TraceRow = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        let arrival = row.arrival_s.unwrap_or(0.0);
        if row.input_len < 1 || row.output_len < 1 {
            return Err(Error::Parse {
                line: lineno,
                msg: "input_len and output_len must be >= 1".into(),
            });
        }
        if arrival < 0.0 || arrival.is_nan() {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("arrival_s must be >= 0, got {arrival}"),
            });
        }
        requests.push(Request {
            id: 0,
            arrival_s: arrival,
            input_len: row.input_len,
            output_len: row.output_len,
        });
    }
    requests.sort_by(|a, b| a.arrival_s.total_cmp(&b.arrival_s));
    for (i, r) in requests.iter_mut().enumerate() {
        r.id = i as u64;
    }
    Ok(requests)
}

/// Write requests as a JSONL trace.
pub fn write_trace<W: std::io::Write>(mut w: W, requests: &[Request]) -> Result<()> {
    for r in requests {
        let row = serde_json::json!({
            "arrival_s": r.arrival_s,
            "input_len": r.input_len,
            "output_len": r.output_len,
        });
        writeln!(w, "{row}")?;
    }
    Ok(())
}

/// Resample a workload: length pairs bootstrap jointly from `lengths_from`,
/// inter-arrival gaps are i.i.d. exponential with mean `1/rate_r`, and
/// arrivals are strictly increasing (exact ties nudged by one ulp).
pub fn sample_workload(spec: &WorkloadSpec, lengths_from: &[Request]) -> Result<Vec<Request>> {
    if lengths_from.is_empty() {
        return Err(Error::EmptySource);
    }
    if spec.rate_r <= 0.0 || spec.rate_r.is_nan() {
        return Err(Error::Config(format!(
            "rate_r must be > 0, got {}",
            spec.rate_r
        )));
    }
    let mut rng = Pcg64::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.num_requests);
    let mut clock = 0.0f64;
    for id in 0..spec.num_requests {
        // Inverse-transform exponential sampling; 1-u avoids ln(0).
        let u: f64 = rng.gen();
        let gap = -(1.0 - u).ln() / spec.rate_r;
        let mut arrival = clock + gap;
        if arrival <= clock {
            arrival = next_up(clock);
        }
        clock = arrival;
        let src = lengths_from[rng.gen_range(0..lengths_from.len())];
        out.push(Request {
            id: id as u64,
            arrival_s: arrival,
            input_len: src.input_len,
            output_len: src.output_len,
        });
    }
    Ok(out)
}

fn next_up(x: f64) -> f64 {
    // f64::next_up is unstable on older toolchains; bit-increment does it.
    if x == 0.0 {
        return f64::from_bits(1);
    }
    f64::from_bits(x.to_bits() + 1)
}

/// True when any of the three monitored means moved by more than `threshold`
/// relative to the history (an epsilon guard makes any growth from a zero
/// baseline count as a shift).
pub fn detect_shift(history: &WorkloadStats, current: &WorkloadStats, threshold: f64) -> bool {
    let rel = |old: f64, new: f64| (new - old).abs() / old.max(1e-9);
    rel(history.mean_input_len, current.mean_input_len) > threshold
        || rel(history.mean_output_len, current.mean_output_len) > threshold
        || rel(history.mean_rate, current.mean_rate) > threshold
}

/// Default relative-change threshold for [`detect_shift`].
pub const DEFAULT_SHIFT_THRESHOLD: f64 = 0.3;

/// Built-in synthetic length pools for desk-scale experiments.
///
/// `fixed512x64` is the 512-token-prompt / 64-token-output workload;
/// `uniform512` is the prefill-analysis workload of uniform 512-token
/// prompts with a single output token.
pub fn preset_pool(name: &str) -> Option<Vec<Request>> {
    let pair = |input_len, output_len| Request {
        id: 0,
        arrival_s: 0.0,
        input_len,
        output_len,
    };
    match name {
        "fixed512x64" => Some(vec![pair(512, 64)]),
        "uniform512" => Some(vec![pair(512, 1)]),
        _ => None,
    }
}

/// Resolve a workload source: a preset name or a JSONL trace path.
pub fn resolve_source(source: &str) -> Result<Vec<Request>> {
    if let Some(pool) = preset_pool(source) {
        return Ok(pool);
    }
    let path = Path::new(source);
    if !path.exists() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("workload source '{source}' is neither a preset nor a file"),
        )));
    }
    load_trace(path)
}
