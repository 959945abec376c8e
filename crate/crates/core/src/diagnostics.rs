//! Realized terms of the asymptotic expansion, on simulated data where `θ0`
//! and `h0` are known.
//!
//! With `δ_t = ĥ(X_t) − h0(X_t)`:
//!
//! * `B = (1/√n) Σ m(Z_t, θ0, ĥ(X_t))`
//! * `C = (1/√n) Σ m(Z_t, θ0, h0(X_t))`
//! * `D = (1/√n) Σ ∇γ m(Z_t, θ0, h0(X_t)) δ_t`
//! * `E = B − C − D`, the exact second-order remainder
//! * `E_bound = (λ*/2) √n (1/n) Σ ‖δ_t‖²`
//!
//! and `Â = [(1/n) Σ ∇θ m(Z_t, θ̂, ĥ(X_t))]⁻¹` is compared against the
//! population `J⁻¹`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::firststage::{LearnerChoice, NuisanceFunction};
use crate::moments::{eval_grad_gamma, eval_moment, MomentModel, Observation};
use crate::montecarlo::{run_cells, CellRef, ExperimentConfig, NamedLearner, ReplicationRow};
use crate::numerics::{ks_statistic, mean, normal_cdf, sample_sd, Matrix};
use crate::secondstage::{empirical_jacobian, PluggedSample};

/// Absolute slack allowed in the `|E| ≤ E_bound` comparison.
pub const E_BOUND_SLACK: f64 = 1e-12;
/// Minimum replications for a trajectory table.
pub const MIN_TRAJECTORY_REPLICATIONS: usize = 50;
/// Minimum standardized values for a normality verdict.
pub const MIN_NORMALITY_VALUES: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProofDecomposition {
    /// Population `J⁻¹`, when supplied.
    pub a_inv_target: Option<Matrix>,
    /// `None` when no `θ̂` was supplied or the empirical Jacobian is singular.
    pub a_hat: Option<Matrix>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
    pub e: Vec<f64>,
    pub e_bound: f64,
    pub lambda_star: f64,
}

impl ProofDecomposition {
    /// `‖Â − J⁻¹‖_F`, or `NaN` when either side is missing.
    pub fn a_dev(&self) -> f64 {
        match (&self.a_hat, &self.a_inv_target) {
            (Some(a), Some(t)) => {
                let mut diff = a.clone();
                diff.add_scaled(t, -1.0);
                diff.frobenius()
            }
            _ => f64::NAN,
        }
    }

    pub fn with_target(mut self, j_inv: Matrix) -> Self {
        self.a_inv_target = Some(j_inv);
        self
    }
}

/// Decomposition from precomputed `ĥ(X_t)` and `h0(X_t)` on `main`.
pub fn decompose_plugged(
    model: &dyn MomentModel,
    main: &[Observation],
    theta0: &[f64],
    theta_hat: Option<&[f64]>,
    gamma_hat: &[Vec<f64>],
    gamma0: &[Vec<f64>],
    lambda_star: f64,
) -> Result<ProofDecomposition> {
    if !(lambda_star >= 0.0) {
        return Err(Error::contract("lambda_star must be non-negative"));
    }
    if main.is_empty() || gamma_hat.len() != main.len() || gamma0.len() != main.len() {
        return Err(Error::contract("one nuisance value per main observation required"));
    }
    let d = model.theta_dim();
    let (mut b, mut c, mut dd) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let mut sq = 0.0;
    for (i, ((obs, gh), g0)) in main.iter().zip(gamma_hat).zip(gamma0).enumerate() {
        let wrap = |e| Error::AtObservation {
            index: i,
            source: Box::new(e),
        };
        let mb = eval_moment(model, obs, theta0, gh).map_err(wrap)?;
        let mc = eval_moment(model, obs, theta0, g0).map_err(wrap)?;
        let grad = eval_grad_gamma(model, obs, theta0, g0).map_err(wrap)?;
        let delta: Vec<f64> = gh.iter().zip(g0).map(|(a, b)| a - b).collect();
        let md = grad.mul_vec(&delta);
        for k in 0..d {
            b[k] += mb[k];
            c[k] += mc[k];
            dd[k] += md[k];
        }
        sq += delta.iter().map(|v| v * v).sum::<f64>();
    }
    let n = main.len() as f64;
    let root = n.sqrt();
    for v in b.iter_mut().chain(c.iter_mut()).chain(dd.iter_mut()) {
        *v /= root;
    }
    let e = if model.gamma_linear() {
        vec![0.0; d]
    } else {
        (0..d).map(|k| b[k] - c[k] - dd[k]).collect()
    };
    let a_hat = match theta_hat {
        Some(t) => {
            let sample = PluggedSample::from_values(main, gamma_hat.to_vec())?;
            empirical_jacobian(model, &sample, t)?.inverse().ok()
        }
        None => None,
    };
    Ok(ProofDecomposition {
        a_inv_target: None,
        a_hat,
        b,
        c,
        d: dd,
        e,
        e_bound: 0.5 * lambda_star * root * (sq / n),
        lambda_star,
    })
}

pub fn decompose(
    model: &dyn MomentModel,
    main: &[Observation],
    theta0: &[f64],
    theta_hat: Option<&[f64]>,
    h_hat: &NuisanceFunction,
    h0: &NuisanceFunction,
    lambda_star: f64,
) -> Result<ProofDecomposition> {
    decompose_plugged(
        model,
        main,
        theta0,
        theta_hat,
        &h_hat.predict_all(main),
        &h0.predict_all(main),
        lambda_star,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EBoundCheck {
    pub e_abs: Vec<f64>,
    pub e_bound: f64,
    pub pass: bool,
}

pub fn check_e_bound(dec: &ProofDecomposition) -> EBoundCheck {
    let e_abs: Vec<f64> = dec.e.iter().map(|v| v.abs()).collect();
    EBoundCheck {
        pass: e_abs.iter().all(|&v| v <= dec.e_bound + E_BOUND_SLACK),
        e_abs,
        e_bound: dec.e_bound,
    }
}

/// Largest relative violation of `B = C + D + E` over coordinates.
pub fn identity_residual(dec: &ProofDecomposition) -> f64 {
    (0..dec.b.len())
        .map(|k| {
            let r = dec.b[k] - dec.c[k] - dec.d[k] - dec.e[k];
            let scale = dec.b[k].abs().max(dec.c[k].abs()).max(dec.d[k].abs()).max(1.0);
            r.abs() / scale
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub n: usize,
    pub replications: usize,
    pub mean_d_abs: f64,
    pub mean_e_abs: f64,
    pub mean_a_dev: f64,
    pub sd_c: f64,
}

/// Per-`n` means of `|D|`, `|E|`, `‖Â − J⁻¹‖` and the spread of `C` for one
/// (moment, learner) pair. `A_dev` uses converged replications only.
pub fn term_trajectories(
    model_name: &str,
    dgp_name: &str,
    theta0: f64,
    learner: &LearnerChoice,
    n_grid: &[usize],
    replications: usize,
    seed: u64,
) -> Result<Vec<TrajectoryRow>> {
    if replications < MIN_TRAJECTORY_REPLICATIONS {
        return Err(Error::contract(format!(
            "term trajectories need at least {MIN_TRAJECTORY_REPLICATIONS} replications"
        )));
    }
    let config = ExperimentConfig {
        dgp: dgp_name.into(),
        theta0,
        moments: vec![model_name.into()],
        learners: vec![NamedLearner::new("learner", learner.clone())],
        n_grid: n_grid.to_vec(),
        replications,
        master_seed: seed,
        ..ExperimentConfig::default()
    };
    let rows = run_cells(&config, &[CellRef { moment: 0, learner: 0 }], None)?;
    Ok(n_grid
        .iter()
        .map(|&n| trajectory_row(n, rows.iter().filter(|r| r.n == n)))
        .collect())
}

fn trajectory_row<'a>(n: usize, rows: impl Iterator<Item = &'a ReplicationRow>) -> TrajectoryRow {
    let rows: Vec<&ReplicationRow> = rows.collect();
    let d: Vec<f64> = rows.iter().map(|r| r.d_abs).collect();
    let e: Vec<f64> = rows.iter().map(|r| r.e_abs).collect();
    let a: Vec<f64> = rows.iter().filter(|r| r.converged).map(|r| r.a_dev).collect();
    let c: Vec<f64> = rows.iter().map(|r| r.c).collect();
    TrajectoryRow {
        n,
        replications: rows.len(),
        mean_d_abs: mean(&d),
        mean_e_abs: mean(&e),
        mean_a_dev: mean(&a),
        sd_c: sample_sd(&c),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalityReport {
    pub ks_stat: f64,
    pub mean: f64,
    pub sd: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// `1.36/√R + 0.03`.
pub fn ks_threshold(count: usize) -> f64 {
    1.36 / (count as f64).sqrt() + 0.03
}

/// Kolmogorov–Smirnov distance of standardized estimates from `N(0, 1)`.
pub fn normality_check(standardized: &[f64]) -> Result<NormalityReport> {
    if standardized.len() < MIN_NORMALITY_VALUES {
        return Err(Error::contract(format!(
            "normality check needs at least {MIN_NORMALITY_VALUES} values, got {}",
            standardized.len()
        )));
    }
    if standardized.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("normality check received a non-finite value"));
    }
    let ks_stat = ks_statistic(standardized, normal_cdf);
    let threshold = ks_threshold(standardized.len());
    Ok(NormalityReport {
        ks_stat,
        mean: mean(standardized),
        sd: sample_sd(standardized),
        threshold,
        pass: ks_stat < threshold,
    })
}
