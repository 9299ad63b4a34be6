//! Coefficient fitting from profiled execution times.
//!
//! Measured iteration times regress onto the latency-model features of each
//! batch (least squares with column scaling and a QR solve, constrained to
//! non-negative coefficients). Profile tables arrive as CSV rows of
//! `phase,batch_size,token_lens,measured_s` with semicolon-separated lengths.

use std::io::BufRead;

use crate::error::{Error, FitError, Result};
use crate::latency::{BatchProfile, LatencyCoefficients};
use crate::model::ModelSpec;

/// Which phase a profile row measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Prefill,
    Decode,
}

/// One measured execution of a batch.
#[derive(Debug, Clone)]
pub struct ProfileRow {
    pub batch: BatchProfile,
    pub phase: Phase,
    pub measured_s: f64,
}

const PREFILL_FEATURES: [&str; 3] = ["gemm_flops", "attention_bytes", "overhead"];
const DECODE_FEATURES: [&str; 2] = ["weight_bytes", "kv_bytes"];

/// Outcome of a coefficient fit.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub coefficients: LatencyCoefficients,
    /// Relative RMS residual over the prefill rows.
    pub prefill_residual_rel: f64,
    /// Relative RMS residual over the decoding rows.
    pub decode_residual_rel: f64,
    /// Features whose fitted coefficient was negative and clamped to zero.
    pub clamped: Vec<&'static str>,
    pub prefill_rows: usize,
    pub decode_rows: usize,
}

// Feature construction mirrors the latency formulas, including the one
// factor of `intra_op` that restores the linear GEMM split on a shard.
fn prefill_features(shard: &ModelSpec, batch: &BatchProfile, intra_op: u32) -> [f64; 3] {
    let h = shard.hidden_h as f64;
    let m = shard.ffn_m as f64;
    let b = shard.attn_block_b as f64;
    let layers = shard.num_layers as f64;
    let t = batch.tokens_t as f64;
    let t2 = batch.sq_sum_t2 as f64;
    [
        (4.0 * t * h * h + 2.0 * t * h * m) * intra_op as f64 * layers,
        (3.0 * h * t2 / b) * layers,
        layers,
    ]
}

fn decode_features(shard: &ModelSpec, batch: &BatchProfile, intra_op: u32) -> [f64; 2] {
    let h = shard.hidden_h as f64;
    let m = shard.ffn_m as f64;
    let layers = shard.num_layers as f64;
    [
        (4.0 * h * h + 2.0 * h * m) * intra_op as f64 * layers,
        3.0 * h * batch.context_sum() as f64 * layers,
    ]
}

/// Least-squares fit of `c1..c3` (prefill rows) and `c4..c5` (decoding rows)
/// against the model features evaluated on `shard`. Negative solutions are
/// clamped to zero by re-solving without the offending column; clamps are
/// reported in the output. The penalty table is left at its default and must
/// be overridden separately; fitting a tensor-parallel profile therefore
/// folds that degree's penalty into the constants.
pub fn fit_coefficients(shard: &ModelSpec, rows: &[ProfileRow]) -> Result<FitReport> {
    fit_coefficients_sharded(shard, 1, rows)
}

/// [`fit_coefficients`] for a profile measured on a tensor-parallel shard.
pub fn fit_coefficients_sharded(
    shard: &ModelSpec,
    intra_op: u32,
    rows: &[ProfileRow],
) -> Result<FitReport> {
    let prefill: Vec<&ProfileRow> = rows.iter().filter(|r| r.phase == Phase::Prefill).collect();
    let decode: Vec<&ProfileRow> = rows.iter().filter(|r| r.phase == Phase::Decode).collect();
    if prefill.len() < 3 {
        return Err(FitError::Insufficient {
            phase: "prefill",
            needed: 3,
            got: prefill.len(),
        }
        .into());
    }
    if decode.len() < 2 {
        return Err(FitError::Insufficient {
            phase: "decode",
            needed: 2,
            got: decode.len(),
        }
        .into());
    }

    let mut clamped = Vec::new();

    let pf_rows: Vec<Vec<f64>> = prefill
        .iter()
        .map(|r| prefill_features(shard, &r.batch, intra_op).to_vec())
        .collect();
    let pf_y: Vec<f64> = prefill.iter().map(|r| r.measured_s).collect();
    let (wf_rows, wf_y) = weight_rows(&pf_rows, &pf_y);
    let pf = nnls(&wf_rows, &wf_y, &PREFILL_FEATURES, &mut clamped)?;

    let dc_rows: Vec<Vec<f64>> = decode
        .iter()
        .map(|r| decode_features(shard, &r.batch, intra_op).to_vec())
        .collect();
    let dc_y: Vec<f64> = decode.iter().map(|r| r.measured_s).collect();
    let (wd_rows, wd_y) = weight_rows(&dc_rows, &dc_y);
    let dc = nnls(&wd_rows, &wd_y, &DECODE_FEATURES, &mut clamped)?;

    let coefficients = LatencyCoefficients::new(pf[0], pf[1], pf[2], dc[0], dc[1]);
    let prefill_residual_rel = rel_residual(&pf_rows, &pf, &pf_y);
    let decode_residual_rel = rel_residual(&dc_rows, &dc, &dc_y);

    Ok(FitReport {
        coefficients,
        prefill_residual_rel,
        decode_residual_rel,
        clamped,
        prefill_rows: prefill.len(),
        decode_rows: decode.len(),
    })
}

/// Scale each row by 1/measured so the fit minimizes *relative* error;
/// measurement noise is multiplicative and the targets span orders of
/// magnitude.
fn weight_rows(rows: &[Vec<f64>], y: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let wrows = rows
        .iter()
        .zip(y)
        .map(|(row, &m)| {
            let w = if m > 0.0 { 1.0 / m } else { 1.0 };
            row.iter().map(|v| v * w).collect()
        })
        .collect();
    let wy = y.iter().map(|&m| if m > 0.0 { 1.0 } else { 0.0 }).collect();
    (wrows, wy)
}

fn rel_residual(rows: &[Vec<f64>], coef: &[f64], y: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (row, &meas) in rows.iter().zip(y) {
        let pred: f64 = row.iter().zip(coef).map(|(a, c)| a * c).sum();
        num += (pred - meas) * (pred - meas);
        den += meas * meas;
    }
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        num.sqrt()
    }
}

/// Non-negative least squares over named columns: solve, and while any
/// coefficient is negative, pin the most negative one at zero and re-solve
/// the rest.
fn nnls(
    rows: &[Vec<f64>],
    y: &[f64],
    names: &[&'static str],
    clamped: &mut Vec<&'static str>,
) -> Result<Vec<f64>> {
    let ncols = names.len();
    let mut active: Vec<usize> = (0..ncols).collect();
    loop {
        let sub: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| active.iter().map(|&j| r[j]).collect())
            .collect();
        let active_names: Vec<&'static str> = active.iter().map(|&j| names[j]).collect();
        let sol = lstsq_qr(&sub, y, &active_names)?;

        let most_negative = sol
            .iter()
            .enumerate()
            .filter(|(_, &v)| v < 0.0)
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i);
        match most_negative {
            None => {
                let mut full = vec![0.0; ncols];
                for (k, &j) in active.iter().enumerate() {
                    full[j] = sol[k];
                }
                return Ok(full);
            }
            Some(k) => {
                clamped.push(names[active[k]]);
                active.remove(k);
                if active.is_empty() {
                    return Ok(vec![0.0; ncols]);
                }
            }
        }
    }
}

/// Dense least squares via Householder QR with per-column scaling. Columns
/// whose scaled diagonal collapses are reported as degenerate by name.
#[allow(clippy::needless_range_loop)] // column-major access over row-major storage
fn lstsq_qr(rows: &[Vec<f64>], y: &[f64], names: &[&'static str]) -> Result<Vec<f64>> {
    let n = rows.len();
    let p = names.len();
    if n < p {
        return Err(FitError::Degenerate {
            feature: names[p - 1],
        }
        .into());
    }

    // Column scaling keeps the QR well conditioned despite features that
    // differ by many orders of magnitude.
    let mut scale = vec![0.0f64; p];
    for row in rows {
        for (j, &v) in row.iter().enumerate() {
            scale[j] = scale[j].max(v.abs());
        }
    }
    for (j, s) in scale.iter().enumerate() {
        if *s == 0.0 {
            return Err(FitError::Degenerate { feature: names[j] }.into());
        }
    }

    let mut a: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(&scale).map(|(v, s)| v / s).collect())
        .collect();
    let mut b: Vec<f64> = y.to_vec();

    for j in 0..p {
        // Householder reflection for column j.
        let mut norm = 0.0;
        for row in a.iter().skip(j) {
            norm += row[j] * row[j];
        }
        let norm = norm.sqrt();
        if norm < 1e-10 {
            return Err(FitError::Degenerate { feature: names[j] }.into());
        }
        let alpha = if a[j][j] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (j..n).map(|i| a[i][j]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 > 0.0 {
            for col in j..p {
                let dot: f64 = (j..n).map(|i| v[i - j] * a[i][col]).sum();
                let f = 2.0 * dot / vnorm2;
                for i in j..n {
                    a[i][col] -= f * v[i - j];
                }
            }
            let dot: f64 = (j..n).map(|i| v[i - j] * b[i]).sum();
            let f = 2.0 * dot / vnorm2;
            for i in j..n {
                b[i] -= f * v[i - j];
            }
        }
        a[j][j] = alpha;
        if a[j][j].abs() < 1e-10 {
            return Err(FitError::Degenerate { feature: names[j] }.into());
        }
    }

    // Back substitution on the upper-triangular system.
    let mut x = vec![0.0f64; p];
    for j in (0..p).rev() {
        let mut s = b[j];
        for k in j + 1..p {
            s -= a[j][k] * x[k];
        }
        x[j] = s / a[j][j];
    }
    for (j, s) in scale.iter().enumerate() {
        x[j] /= s;
    }
    Ok(x)
}

/// Parse a profile table. An optional header line starting with `phase` is
/// skipped; every other line must be `phase,batch_size,token_lens,measured_s`.
pub fn parse_profile_csv<R: BufRead>(reader: R) -> Result<Vec<ProfileRow>> {
    let mut rows = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if idx == 0 && trimmed.to_ascii_lowercase().starts_with("phase") {
            continue;
        }
        let parts: Vec<&str> = trimmed.split(',').collect();
        if parts.len() != 4 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 4 columns, got {}", parts.len()),
            });
        }
        let phase = match parts[0].trim() {
            "prefill" => Phase::Prefill,
            "decode" => Phase::Decode,
            other => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("unknown phase '{other}'"),
                })
            }
        };
        let batch_size: usize = parts[1].trim().parse().map_err(|e| Error::Parse {
            line: lineno,
            msg: format!("bad batch_size: {e}"),
        })?;
        let lens: Vec<u32> = parts[2]
            .trim()
            .split(';')
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.trim().parse::<u32>().map_err(|e| Error::Parse {
                    line: lineno,
                    msg: format!("bad token length '{s}': {e}"),
                })
            })
            .collect::<Result<_>>()?;
        if lens.len() != batch_size {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("batch_size {} but {} token_lens", batch_size, lens.len()),
            });
        }
        let measured_s: f64 = parts[3].trim().parse().map_err(|e| Error::Parse {
            line: lineno,
            msg: format!("bad measured_s: {e}"),
        })?;
        if measured_s < 0.0 || measured_s.is_nan() {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("measured_s must be >= 0, got {measured_s}"),
            });
        }
        let batch = match phase {
            Phase::Prefill => BatchProfile::prefill(&lens),
            Phase::Decode => BatchProfile::decode(&lens),
        };
        rows.push(ProfileRow {
            batch,
            phase,
            measured_s,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latency::{decode_iter_time, prefill_iter_time};
    use rand::{Rng, SeedableRng};
    use rand_pcg::Pcg64;

    fn shard() -> ModelSpec {
        ModelSpec {
            name: "fit-toy".into(),
            num_layers: 4,
            hidden_h: 64,
            num_heads_n: 4,
            head_size_s: 16,
            ffn_m: 256,
            weight_bytes: 1_000_000,
            kv_elem_bytes: 2,
            attn_block_b: 16,
        }
    }

    fn truth() -> LatencyCoefficients {
        let mut c = LatencyCoefficients::new(3.1e-10, 2.0e-9, 2.4e-4, 5.5e-9, 1.9e-11);
        c.intra_penalty = LatencyCoefficients::default_penalty();
        c
    }

    // Profile points chosen so each feature dominates somewhere: tiny
    // batches isolate the overhead, long single prompts the attention term,
    // wide short batches the GEMM term, and large contexts the KV term.
    fn synthetic_rows(noise: f64, seed: u64) -> Vec<ProfileRow> {
        let shard = shard();
        let truth = truth();
        let mut rng = Pcg64::seed_from_u64(seed);
        let mut rows = Vec::new();
        for lens in [
            vec![1u32],
            vec![2],
            vec![16],
            vec![64],
            vec![256],
            vec![1024],
            vec![4096],
            vec![8192],
            vec![128, 128],
            vec![512, 64, 64],
            vec![2048, 2048],
            vec![32; 32],
        ] {
            let batch = BatchProfile::prefill(&lens);
            let base = prefill_iter_time(&shard, &batch, &truth, 1);
            let factor = 1.0 + noise * (rng.gen::<f64>() * 2.0 - 1.0);
            rows.push(ProfileRow {
                batch,
                phase: Phase::Prefill,
                measured_s: base * factor,
            });
        }
        for lens in [
            vec![8u32],
            vec![64; 2],
            vec![512; 4],
            vec![128; 16],
            vec![1024; 32],
            vec![2048; 128],
            vec![4096; 256],
        ] {
            let batch = BatchProfile::decode(&lens);
            let base = decode_iter_time(&shard, &batch, &truth, 1);
            let factor = 1.0 + noise * (rng.gen::<f64>() * 2.0 - 1.0);
            rows.push(ProfileRow {
                batch,
                phase: Phase::Decode,
                measured_s: base * factor,
            });
        }
        rows
    }

    #[test]
    fn noiseless_fit_recovers_exactly() {
        let report = fit_coefficients(&shard(), &synthetic_rows(0.0, 1)).unwrap();
        let truth = truth();
        let got = report.coefficients;
        for (g, t) in [
            (got.c1, truth.c1),
            (got.c2, truth.c2),
            (got.c3, truth.c3),
            (got.c4, truth.c4),
            (got.c5, truth.c5),
        ] {
            assert!((g - t).abs() / t < 1e-9, "got {g}, want {t}");
        }
        assert!(report.prefill_residual_rel < 1e-9);
        assert!(report.decode_residual_rel < 1e-9);
        assert!(report.clamped.is_empty());
    }

    #[test]
    fn noiseless_fit_reproduces_training_rows() {
        let rows = synthetic_rows(0.0, 2);
        let report = fit_coefficients(&shard(), &rows).unwrap();
        let shard = shard();
        for row in &rows {
            let pred = match row.phase {
                Phase::Prefill => prefill_iter_time(&shard, &row.batch, &report.coefficients, 1),
                Phase::Decode => decode_iter_time(&shard, &row.batch, &report.coefficients, 1),
            };
            assert!(
                (pred - row.measured_s).abs() / row.measured_s < 1e-9,
                "residual too large: {pred} vs {}",
                row.measured_s
            );
        }
    }

    #[test]
    fn one_percent_noise_recovers_within_five_percent() {
        let report = fit_coefficients(&shard(), &synthetic_rows(0.01, 42)).unwrap();
        let truth = truth();
        let got = report.coefficients;
        for (name, g, t) in [
            ("c1", got.c1, truth.c1),
            ("c2", got.c2, truth.c2),
            ("c3", got.c3, truth.c3),
            ("c4", got.c4, truth.c4),
            ("c5", got.c5, truth.c5),
        ] {
            assert!((g - t).abs() / t < 0.05, "{name}: got {g}, want {t}");
        }
    }

    #[test]
    fn duplicate_rows_are_rank_deficient() {
        let shard = shard();
        let batch = BatchProfile::prefill(&[128]);
        let mut rows: Vec<ProfileRow> = (0..3)
            .map(|_| ProfileRow {
                batch: batch.clone(),
                phase: Phase::Prefill,
                measured_s: 0.5,
            })
            .collect();
        // enough decode rows so the prefill matrix is what fails
        rows.push(ProfileRow {
            batch: BatchProfile::decode(&[64]),
            phase: Phase::Decode,
            measured_s: 0.1,
        });
        rows.push(ProfileRow {
            batch: BatchProfile::decode(&[512; 4]),
            phase: Phase::Decode,
            measured_s: 0.2,
        });
        let err = fit_coefficients(&shard, &rows).unwrap_err();
        match err {
            Error::Fit(FitError::Degenerate { feature }) => {
                assert!(PREFILL_FEATURES.contains(&feature));
            }
            other => panic!("expected degenerate fit, got {other:?}"),
        }
    }

    #[test]
    fn too_few_rows_is_an_error() {
        let rows = vec![ProfileRow {
            batch: BatchProfile::prefill(&[128]),
            phase: Phase::Prefill,
            measured_s: 0.5,
        }];
        assert!(matches!(
            fit_coefficients(&shard(), &rows),
            Err(Error::Fit(FitError::Insufficient { .. }))
        ));
    }

    #[test]
    fn negative_solution_is_clamped_and_reported() {
        let shard = shard();
        // Measurements consistent with a *negative* attention coefficient.
        let mk = |lens: &[u32]| BatchProfile::prefill(lens);
        let truth = LatencyCoefficients::new(1e-9, 0.0, 1e-3, 1e-8, 1e-11);
        let mut rows = Vec::new();
        for lens in [vec![64u32], vec![512], vec![2048], vec![128, 128]] {
            let batch = mk(&lens);
            let h = shard.hidden_h as f64;
            let b = shard.attn_block_b as f64;
            let attn = 3.0 * h * batch.sq_sum_t2 as f64 / b * shard.num_layers as f64;
            let base = prefill_iter_time(&shard, &batch, &truth, 1) - 1e-13 * attn;
            rows.push(ProfileRow {
                batch,
                phase: Phase::Prefill,
                measured_s: base,
            });
        }
        for lens in [vec![8u32], vec![512; 4], vec![128; 16]] {
            let batch = BatchProfile::decode(&lens);
            let base = decode_iter_time(&shard, &batch, &truth, 1);
            rows.push(ProfileRow {
                batch,
                phase: Phase::Decode,
                measured_s: base,
            });
        }
        let report = fit_coefficients(&shard, &rows).unwrap();
        assert!(report.clamped.contains(&"attention_bytes"));
        assert_eq!(report.coefficients.c2, 0.0);
        assert!(report.coefficients.c1 > 0.0);
    }

    #[test]
    fn csv_roundtrip_and_errors() {
        let csv = "phase,batch_size,token_lens,measured_s\n\
                   prefill,2,128;256,0.0125\n\
                   decode,3,64;64;128,0.003\n";
        let rows = parse_profile_csv(csv.as_bytes()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].phase, Phase::Prefill);
        assert_eq!(rows[0].batch.tokens_t, 384);
        assert_eq!(rows[1].batch.tokens_t, 3); // decode: new tokens = batch size
        assert_eq!(rows[1].batch.context_sum(), 256);

        let bad = "prefill,2,128,0.5\n";
        let err = parse_profile_csv(bad.as_bytes()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }

        let bad_phase = "prefill,1,128,0.5\nwarmup,1,128,0.5\n";
        match parse_profile_csv(bad_phase.as_bytes()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn coefficients_json_roundtrip() {
        let report = fit_coefficients(&shard(), &synthetic_rows(0.0, 3)).unwrap();
        let json = serde_json::to_string_pretty(&report.coefficients).unwrap();
        assert!(json.contains("\"c1\""));
        assert!(json.contains("\"intra_penalty\""));
        let back: LatencyCoefficients = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report.coefficients);
    }
}
