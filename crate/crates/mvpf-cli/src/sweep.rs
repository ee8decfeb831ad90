//! MSE-versus-cost sweep over discretization levels plus slope fitting.
//!
//! For each sweep cell (estimator, level) the harness runs `replications`
//! independent estimates of pi_T(phi), phi(x) = x, against a cached
//! high-level reference, then fits log(cost) against log(MSE) per estimator.
//! Costs are the closed-form kernel-evaluation counts, never wall time; wall
//! time is telemetry and stays out of the CSV unless explicitly requested so
//! that equal-seed runs are byte-identical.

use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use mvpf::filter::run_pf;
use mvpf::lattice::{derive_seed, LevelGrid};
use mvpf::ml::{run_mlpf, select_params, theoretical_cost};

use crate::config::{fmt_f64, ExperimentConfig};
use crate::data::simulate_data;
use crate::reference::reference_filter;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Estimator {
    #[serde(rename = "SL")]
    Sl,
    #[serde(rename = "ML")]
    Ml,
}

impl Estimator {
    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::Sl => "SL",
            Estimator::Ml => "ML",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub estimator: Estimator,
    pub level: u32,
    pub mse: f64,
    pub cost: f64,
    pub wall_time_s: f64,
    pub replications: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct PerTimeRow {
    pub estimator: Estimator,
    pub level: u32,
    pub t: usize,
    pub mse: f64,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    pub points: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct CellTiming {
    pub estimator: Estimator,
    pub level: u32,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub per_time: Vec<PerTimeRow>,
    pub sl_fit: Option<SlopeFit>,
    pub ml_fit: Option<SlopeFit>,
    pub reference: Vec<f64>,
    pub failures: Vec<String>,
    pub timings: Vec<CellTiming>,
}

/// Least-squares fit of y = ln(cost) on x = ln(mse). Needs two points; the
/// standard error is reported for diagnostics only.
pub fn fit_log_slope(points: &[(f64, f64)]) -> Option<SlopeFit> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let (mut sx, mut sy) = (0.0, 0.0);
    for (mse, cost) in points {
        sx += mse.ln();
        sy += cost.ln();
    }
    let (mx, my) = (sx / n, sy / n);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (mse, cost) in points {
        let dx = mse.ln() - mx;
        sxx += dx * dx;
        sxy += dx * (cost.ln() - my);
    }
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let mut ss_res = 0.0;
    for (mse, cost) in points {
        let fitted = intercept + slope * mse.ln();
        ss_res += (cost.ln() - fitted).powi(2);
    }
    let stderr = if points.len() > 2 {
        (ss_res / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Some(SlopeFit {
        slope,
        intercept,
        stderr,
        points: points.len(),
    })
}

pub fn cell_seed(base: u64, estimator: Estimator, level: u32, rep: u64) -> u64 {
    let tag = match estimator {
        Estimator::Sl => "sweep-sl",
        Estimator::Ml => "sweep-ml",
    };
    derive_seed(base, tag, &[level as u64, rep])
}

struct CellOutcome {
    row: SweepRow,
    per_time: Vec<PerTimeRow>,
    seconds: f64,
    failures: Vec<String>,
}

fn run_cell(
    cfg: &ExperimentConfig,
    obs: &mvpf::filter::ObservationSeries,
    reference: &[f64],
    estimator: Estimator,
    level: u32,
) -> Result<CellOutcome> {
    let model = cfg.build_model();
    let phi = |x: &[f64]| x[0];
    let t_len = obs.len();

    let (cost, runs): (f64, Vec<(u64, Result<Vec<f64>, String>, f64)>) = match estimator {
        Estimator::Sl => {
            let count = cfg.single_level_count(level);
            let grid = LevelGrid::new(level);
            let cost =
                t_len as f64 * grid.steps_per_unit() as f64 * count as f64 * (2 * count) as f64;
            let runs = (0..cfg.replications as u64)
                .into_par_iter()
                .map(|rep| {
                    let seed = cell_seed(cfg.seed, estimator, level, rep);
                    let start = Instant::now();
                    let out = run_pf(&model, grid, count, count, obs, phi, seed)
                        .map(|r| r.estimates)
                        .map_err(|e| e.to_string());
                    (rep, out, start.elapsed().as_secs_f64())
                })
                .collect();
            (cost, runs)
        }
        Estimator::Ml => {
            let eps = 0.5f64.powi(level as i32);
            let ml_cfg = select_params(eps, cfg.constants())?;
            let cost = theoretical_cost(&ml_cfg, t_len);
            let runs = (0..cfg.replications as u64)
                .into_par_iter()
                .map(|rep| {
                    let seed = cell_seed(cfg.seed, estimator, level, rep);
                    let start = Instant::now();
                    let out = run_mlpf(&model, obs, phi, &ml_cfg, seed)
                        .map(|r| r.estimates)
                        .map_err(|e| e.to_string());
                    (rep, out, start.elapsed().as_secs_f64())
                })
                .collect();
            (cost, runs)
        }
    };

    let mut seconds = 0.0;
    let mut failures = Vec::new();
    let mut sq_sum = 0.0;
    let mut per_time_sq = vec![0.0; t_len];
    let mut used = 0usize;
    for (rep, outcome, secs) in &runs {
        seconds += secs;
        match outcome {
            Ok(estimates) => {
                used += 1;
                let err = estimates[t_len - 1] - reference[t_len - 1];
                sq_sum += err * err;
                for (acc, (e, r)) in per_time_sq.iter_mut().zip(estimates.iter().zip(reference)) {
                    let d = e - r;
                    *acc += d * d;
                }
            }
            Err(msg) => failures.push(format!(
                "{} level {} rep {}: {}",
                estimator.as_str(),
                level,
                rep,
                msg
            )),
        }
    }
    if used == 0 {
        bail!(
            "every replication of {} level {} failed",
            estimator.as_str(),
            level
        );
    }
    let mse = sq_sum / used as f64;
    let per_time = if cfg.per_time_mse {
        per_time_sq
            .iter()
            .enumerate()
            .map(|(t, sq)| PerTimeRow {
                estimator,
                level,
                t: t + 1,
                mse: sq / used as f64,
            })
            .collect()
    } else {
        Vec::new()
    };

    Ok(CellOutcome {
        row: SweepRow {
            estimator,
            level,
            mse,
            cost,
            wall_time_s: if cfg.measure_wall_time { seconds } else { 0.0 },
            replications: used,
        },
        per_time,
        seconds,
        failures,
    })
}

/// Runs the full sweep: data, reference (cached), every (estimator, level)
/// cell, slope fits. Per-replication failures are recorded and skipped; a
/// cell only fails if every replication fails.
pub fn mse_sweep(cfg: &ExperimentConfig, cache_dir: &Path) -> Result<SweepResult> {
    cfg.validate()?;
    if cfg.tau == 0.0 {
        bail!("sweeps need tau > 0 (noiseless data cannot be filtered)");
    }
    let data = simulate_data(cfg).context("simulating data")?;
    let obs = data.obs_series()?;
    let reference = reference_filter(cfg, &obs, cache_dir).context("computing the reference")?;

    let mut cells: Vec<(Estimator, u32)> = Vec::new();
    for l in cfg.sl_levels() {
        cells.push((Estimator::Sl, l));
    }
    for l in cfg.ml_levels() {
        cells.push((Estimator::Ml, l));
    }

    let mut rows = Vec::new();
    let mut per_time = Vec::new();
    let mut failures = Vec::new();
    let mut timings = Vec::new();
    for (estimator, level) in cells {
        let outcome = run_cell(cfg, &obs, &reference, estimator, level)?;
        rows.push(outcome.row);
        per_time.extend(outcome.per_time);
        failures.extend(outcome.failures);
        timings.push(CellTiming {
            estimator,
            level,
            seconds: outcome.seconds,
        });
    }
    rows.sort_by(|a, b| {
        (a.estimator.as_str(), a.level).cmp(&(b.estimator.as_str(), b.level))
    });

    let points = |wanted: Estimator| -> Vec<(f64, f64)> {
        rows.iter()
            .filter(|r| r.estimator == wanted && r.mse > 0.0)
            .map(|r| (r.mse, r.cost))
            .collect()
    };
    let sl_fit = fit_log_slope(&points(Estimator::Sl));
    let ml_fit = fit_log_slope(&points(Estimator::Ml));

    Ok(SweepResult {
        rows,
        per_time,
        sl_fit,
        ml_fit,
        reference,
        failures,
        timings,
    })
}

/// The sweep CSV: pinned header, rows sorted by (estimator, level), floats at
/// 17 significant digits.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("estimator,level,mse,cost,wall_time_s,replications\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.estimator.as_str(),
            r.level,
            fmt_f64(r.mse),
            fmt_f64(r.cost),
            fmt_f64(r.wall_time_s),
            r.replications
        ));
    }
    out
}

pub fn per_time_csv(rows: &[PerTimeRow]) -> String {
    let mut out = String::from("estimator,level,t,mse\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.estimator.as_str(),
            r.level,
            r.t,
            fmt_f64(r.mse)
        ));
    }
    out
}

/// Parses a sweep CSV back into rows (used by `fit`).
pub fn parse_sweep_csv(text: &str) -> Result<Vec<(String, u32, f64, f64)>> {
    let mut lines = text.lines();
    let header = lines.next().context("empty CSV")?;
    if header != "estimator,level,mse,cost,wall_time_s,replications" {
        bail!("unexpected CSV header: {header}");
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 6 {
            bail!("row {} has {} fields, expected 6", i + 2, parts.len());
        }
        rows.push((
            parts[0].to_string(),
            parts[1].parse().with_context(|| format!("level in row {}", i + 2))?,
            parts[2].parse().with_context(|| format!("mse in row {}", i + 2))?,
            parts[3].parse().with_context(|| format!("cost in row {}", i + 2))?,
        ));
    }
    Ok(rows)
}

/// Slope fits per estimator label from parsed CSV rows.
pub fn fits_from_rows(rows: &[(String, u32, f64, f64)]) -> Vec<(String, Option<SlopeFit>)> {
    let mut labels: Vec<String> = rows.iter().map(|r| r.0.clone()).collect();
    labels.sort();
    labels.dedup();
    labels
        .into_iter()
        .map(|label| {
            let pts: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.0 == label && r.2 > 0.0)
                .map(|r| (r.2, r.3))
                .collect();
            let fit = fit_log_slope(&pts);
            (label, fit)
        })
        .collect()
}
