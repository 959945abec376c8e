//! Per-cell summaries and the CSV interchange formats.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::diagnostics::{normality_check, MIN_NORMALITY_VALUES};
use crate::error::{Error, Result};
use crate::numerics::{mean, sample_sd};

use super::experiment::ReplicationRow;

/// Header of the results CSV, in order.
pub const RESULTS_COLUMNS: [&str; 19] = [
    "dgp",
    "moment",
    "learner",
    "n",
    "rep",
    "theta_hat",
    "se",
    "ci_lo",
    "ci_hi",
    "covered",
    "D_abs",
    "E_abs",
    "E_bound",
    "E_bound_pass",
    "converged",
    "theta0",
    "A_dev",
    "C",
    "BCDE_residual",
];

/// Summary of one `(dgp, moment, learner, n)` cell over converged replications.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub dgp: String,
    pub moment: String,
    pub learner: String,
    pub n: usize,
    pub replications: usize,
    pub converged: usize,
    pub excluded: usize,
    pub theta0: f64,
    pub bias: f64,
    pub sd: f64,
    pub rmse: f64,
    pub sqrt_n_rmse: f64,
    pub coverage: f64,
    pub coverage_se: f64,
    pub mean_d_abs: f64,
    pub mean_e_abs: f64,
    pub mean_a_dev: f64,
    pub sd_c: f64,
    pub e_bound_pass_rate: f64,
    /// Present when at least 200 replications converged.
    pub ks_stat: Option<f64>,
    pub ks_pass: Option<bool>,
}

/// Groups rows by cell in order of first appearance and summarizes each.
///
/// Rows are sorted by `(cell, rep)` within each group first, so the result
/// does not depend on input order within a cell.
pub fn aggregate(rows: &[ReplicationRow]) -> Vec<AggregateRow> {
    let mut keys: Vec<(&str, &str, &str, usize)> = Vec::new();
    for r in rows {
        let k = (r.dgp.as_str(), r.moment.as_str(), r.learner.as_str(), r.n);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|k| {
            let mut group: Vec<&ReplicationRow> = rows
                .iter()
                .filter(|r| (r.dgp.as_str(), r.moment.as_str(), r.learner.as_str(), r.n) == k)
                .collect();
            group.sort_by_key(|r| r.rep);
            summarize(&group)
        })
        .collect()
}

fn summarize(group: &[&ReplicationRow]) -> AggregateRow {
    let first = group[0];
    let ok: Vec<&ReplicationRow> = group.iter().copied().filter(|r| r.converged).collect();
    let col = |f: fn(&ReplicationRow) -> f64| -> Vec<f64> { ok.iter().map(|r| f(r)).collect() };
    let theta0 = first.theta0;
    let thetas = col(|r| r.theta_hat);
    let bias = mean(&thetas) - theta0;
    let sd = sample_sd(&thetas);
    let rmse = (bias * bias + sd * sd).sqrt();
    let k = ok.len() as f64;
    let coverage = ok.iter().filter(|r| r.covered).count() as f64 / k;
    let (ks_stat, ks_pass) = if ok.len() >= MIN_NORMALITY_VALUES {
        let z: Vec<f64> = ok.iter().map(|r| (r.theta_hat - r.theta0) / r.se).collect();
        match normality_check(&z) {
            Ok(rep) => (Some(rep.ks_stat), Some(rep.pass)),
            Err(_) => (None, None),
        }
    } else {
        (None, None)
    };
    AggregateRow {
        dgp: first.dgp.clone(),
        moment: first.moment.clone(),
        learner: first.learner.clone(),
        n: first.n,
        replications: group.len(),
        converged: ok.len(),
        excluded: group.len() - ok.len(),
        theta0,
        bias,
        sd,
        rmse,
        sqrt_n_rmse: (first.n as f64).sqrt() * rmse,
        coverage,
        coverage_se: (coverage * (1.0 - coverage) / k).sqrt(),
        mean_d_abs: mean(&col(|r| r.d_abs)),
        mean_e_abs: mean(&col(|r| r.e_abs)),
        mean_a_dev: mean(&col(|r| r.a_dev)),
        sd_c: sample_sd(&col(|r| r.c)),
        e_bound_pass_rate: ok.iter().filter(|r| r.e_bound_pass).count() as f64 / k,
        ks_stat,
        ks_pass,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub std_error: f64,
}

/// Least-squares slope of `ln y` on `ln x` with its standard error.
pub fn log_log_slope(points: &[(f64, f64)]) -> Result<SlopeFit> {
    if points.len() < 3 {
        return Err(Error::contract("a slope needs at least three points"));
    }
    if points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(Error::contract("log-log slope needs positive values"));
    }
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let (mx, my) = (mean(&lx), mean(&ly));
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::contract("log-log slope needs distinct x values"));
    }
    let slope = sxy / sxx;
    let icept = my - slope * mx;
    let ssr: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - icept - slope * x).powi(2)).sum();
    let dof = (points.len() - 2) as f64;
    Ok(SlopeFit {
        slope,
        std_error: (ssr / dof / sxx).sqrt(),
    })
}

/// Slope of `ln rmse` on `ln n` for one (moment, learner) pair.
pub fn rate_slope(aggregates: &[AggregateRow], moment: &str, learner: &str) -> Result<SlopeFit> {
    let pts: Vec<(f64, f64)> = aggregates
        .iter()
        .filter(|a| a.moment == moment && a.learner == learner)
        .map(|a| (a.n as f64, a.rmse))
        .collect();
    log_log_slope(&pts)
}

pub fn write_results_csv<W: Write>(rows: &[ReplicationRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(RESULTS_COLUMNS)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: "<results>".into(),
        source: e,
    })
}

/// Reads a results CSV, naming any missing columns.
pub fn read_results_csv<R: Read>(input: R) -> Result<Vec<ReplicationRow>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::contract("results file has no rows"));
    }
    let missing: Vec<&str> = RESULTS_COLUMNS
        .iter()
        .copied()
        .filter(|c| !headers.iter().any(|h| h == *c))
        .collect();
    if !missing.is_empty() {
        return Err(Error::contract(format!(
            "results file is missing columns: {}",
            missing.join(", ")
        )));
    }
    let rows = r.deserialize().collect::<std::result::Result<Vec<ReplicationRow>, _>>()?;
    if rows.is_empty() {
        return Err(Error::contract("results file has no rows"));
    }
    Ok(rows)
}

pub fn write_aggregate_csv<W: Write>(rows: &[AggregateRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: "<aggregate>".into(),
        source: e,
    })
}

pub fn read_aggregate_csv<R: Read>(input: R) -> Result<Vec<AggregateRow>> {
    Ok(csv::Reader::from_reader(input)
        .deserialize()
        .collect::<std::result::Result<Vec<AggregateRow>, _>>()?)
}
