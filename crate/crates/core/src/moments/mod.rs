//! Moment functions `m(z, θ, γ)` with analytic derivatives.
//!
//! A [`MomentModel`] fixes the parameter dimension `d`, the nuisance
//! dimension `ℓ`, which coordinates of `z` form `X`, and what each nuisance
//! coordinate is the conditional expectation of (its [`Target`]).

mod check;
mod models;
mod orthogonality;

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::firststage::Target;
use crate::numerics::Matrix;

pub use check::{derivative_check, DerivativeCheck};
pub use models::{model_by_name, MeanMoment, NaivePlrMoment, PlrMoment, BUILTIN_MODELS};
pub use orthogonality::{
    check_conditional_orthogonality, estimate_bounds, orthogonality_score, BoundEstimate, Interval,
    ConditionalOrthogonalityReport, GridPointEstimate, OrthogonalityScore,
};

/// Standardized deviation above which an orthogonality check fails.
pub const ORTHOGONALITY_THRESHOLD: f64 = 4.0;

/// One data point `z` together with its designated subvector `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub z: Vec<f64>,
    pub x: Vec<f64>,
}

impl Observation {
    /// Builds an observation, extracting `x = z[indices]`.
    pub fn new(z: Vec<f64>, x_indices: &[usize]) -> Result<Self> {
        if let Some(i) = z.iter().position(|v| !v.is_finite()) {
            return Err(Error::Evaluation {
                what: "observation".into(),
                coordinate: i,
            });
        }
        let x = x_indices
            .iter()
            .map(|&i| {
                z.get(i).copied().ok_or_else(|| {
                    Error::contract(format!("x index {i} out of range for z of length {}", z.len()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Observation { z, x })
    }

    pub fn for_model(z: Vec<f64>, model: &dyn MomentModel) -> Result<Self> {
        let idx = model.x_indices(z.len());
        Self::new(z, &idx)
    }
}

/// A moment function `m(z, θ, γ) ∈ ℝ^d` with analytic derivatives.
///
/// Implementations may assume the slices have the declared lengths; the
/// checked free functions ([`eval_moment`] and friends) enforce them.
pub trait MomentModel: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn theta_dim(&self) -> usize;
    fn nuisance_dim(&self) -> usize;
    /// Minimum length of `z`.
    fn z_dim_min(&self) -> usize;
    /// Coordinates of `z` forming `X`.
    fn x_indices(&self, z_len: usize) -> Vec<usize>;
    /// What nuisance coordinate `j` is the conditional expectation of, given `X`.
    fn nuisance_targets(&self) -> Vec<Target>;

    fn moment(&self, z: &[f64], theta: &[f64], gamma: &[f64]) -> Vec<f64>;
    /// `∇θ m`, `d × d`.
    fn grad_theta(&self, z: &[f64], theta: &[f64], gamma: &[f64]) -> Matrix;
    /// `∇γ m`, `d × ℓ`.
    fn grad_gamma(&self, z: &[f64], theta: &[f64], gamma: &[f64]) -> Matrix;
    /// `∇γγ m_i` for each output coordinate `i`, each `ℓ × ℓ` symmetric.
    fn hessian_gamma(&self, z: &[f64], theta: &[f64], gamma: &[f64]) -> Vec<Matrix>;

    /// Known uniform bound on `‖∇γ m‖`.
    fn declared_sigma(&self) -> Option<f64> {
        None
    }
    /// Known uniform bound on the largest absolute eigenvalue of `∇γγ m`.
    fn declared_lambda(&self) -> Option<f64> {
        None
    }
    /// True when `m` is affine in `γ`, so every second-order remainder vanishes.
    fn gamma_linear(&self) -> bool {
        false
    }
    /// False when `m` does not depend on `γ` at all; such models skip the
    /// first stage and estimate on the full sample.
    fn uses_nuisance(&self) -> bool {
        true
    }
    /// Whether `E[∇γ m | X] = 0` is expected to hold at the true parameters.
    fn conditionally_orthogonal(&self) -> bool {
        false
    }
}

pub type SharedModel = Arc<dyn MomentModel>;

fn check_dims(model: &dyn MomentModel, obs: &Observation, theta: &[f64], gamma: &[f64]) -> Result<()> {
    if theta.len() != model.theta_dim() {
        return Err(Error::contract(format!(
            "{}: theta has length {}, expected {}",
            model.name(),
            theta.len(),
            model.theta_dim()
        )));
    }
    if gamma.len() != model.nuisance_dim() {
        return Err(Error::contract(format!(
            "{}: gamma has length {}, expected {}",
            model.name(),
            gamma.len(),
            model.nuisance_dim()
        )));
    }
    if obs.z.len() < model.z_dim_min() {
        return Err(Error::contract(format!(
            "{}: observation has {} coordinates, expected at least {}",
            model.name(),
            obs.z.len(),
            model.z_dim_min()
        )));
    }
    Ok(())
}

fn finite_vec(what: &str, v: Vec<f64>) -> Result<Vec<f64>> {
    match v.iter().position(|e| !e.is_finite()) {
        None => Ok(v),
        Some(coordinate) => Err(Error::Evaluation {
            what: what.into(),
            coordinate,
        }),
    }
}

fn finite_mat(what: &str, m: Matrix) -> Result<Matrix> {
    match m.as_slice().iter().position(|e| !e.is_finite()) {
        None => Ok(m),
        Some(coordinate) => Err(Error::Evaluation {
            what: what.into(),
            coordinate,
        }),
    }
}

pub fn eval_moment(model: &dyn MomentModel, obs: &Observation, theta: &[f64], gamma: &[f64]) -> Result<Vec<f64>> {
    check_dims(model, obs, theta, gamma)?;
    finite_vec("moment", model.moment(&obs.z, theta, gamma))
}

pub fn eval_grad_theta(model: &dyn MomentModel, obs: &Observation, theta: &[f64], gamma: &[f64]) -> Result<Matrix> {
    check_dims(model, obs, theta, gamma)?;
    finite_mat("theta gradient", model.grad_theta(&obs.z, theta, gamma))
}

pub fn eval_grad_gamma(model: &dyn MomentModel, obs: &Observation, theta: &[f64], gamma: &[f64]) -> Result<Matrix> {
    check_dims(model, obs, theta, gamma)?;
    finite_mat("gamma gradient", model.grad_gamma(&obs.z, theta, gamma))
}

pub fn eval_hessian_gamma(
    model: &dyn MomentModel,
    obs: &Observation,
    theta: &[f64],
    gamma: &[f64],
) -> Result<Vec<Matrix>> {
    check_dims(model, obs, theta, gamma)?;
    model
        .hessian_gamma(&obs.z, theta, gamma)
        .into_iter()
        .map(|h| finite_mat("gamma Hessian", h))
        .collect()
}
