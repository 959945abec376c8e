use std::sync::Arc;

use crate::firststage::Target;
use crate::numerics::Matrix;

use super::MomentModel;

/// Names accepted by [`model_by_name`].
pub const BUILTIN_MODELS: &[&str] = &["plr", "plr-naive", "mean"];

/// Looks up a built-in model. `reference_slope` is only used by `plr-naive`.
pub fn model_by_name(name: &str, reference_slope: f64) -> Option<Arc<dyn MomentModel>> {
    match name {
        "plr" => Some(Arc::new(PlrMoment)),
        "plr-naive" => Some(Arc::new(NaivePlrMoment::new(reference_slope))),
        "mean" => Some(Arc::new(MeanMoment)),
        _ => None,
    }
}

/// Residual-on-residual moment for the partially linear model
/// `Y = θ W + g(X) + ε`:
///
/// `m = (y − γ_Y − θ (w − γ_W)) (w − γ_W)` with `γ = (E[Y|X], E[W|X])`
/// and `z = (y, w, x…)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct PlrMoment;

impl MomentModel for PlrMoment {
    fn name(&self) -> &str {
        "plr"
    }
    fn theta_dim(&self) -> usize {
        1
    }
    fn nuisance_dim(&self) -> usize {
        2
    }
    fn z_dim_min(&self) -> usize {
        3
    }
    fn x_indices(&self, z_len: usize) -> Vec<usize> {
        (2..z_len).collect()
    }
    fn nuisance_targets(&self) -> Vec<Target> {
        vec![Target::Column(0), Target::Column(1)]
    }

    fn moment(&self, z: &[f64], theta: &[f64], gamma: &[f64]) -> Vec<f64> {
        let v = z[1] - gamma[1];
        let u = z[0] - gamma[0] - theta[0] * v;
        vec![u * v]
    }

    fn grad_theta(&self, z: &[f64], _theta: &[f64], gamma: &[f64]) -> Matrix {
        let v = z[1] - gamma[1];
        raw(1, 1, vec![-v * v])
    }

    fn grad_gamma(&self, z: &[f64], theta: &[f64], gamma: &[f64]) -> Matrix {
        let v = z[1] - gamma[1];
        let u = z[0] - gamma[0] - theta[0] * v;
        // ∂/∂γ_Y = −v ; ∂/∂γ_W = θ v − u
        raw(1, 2, vec![-v, theta[0] * v - u])
    }

    fn hessian_gamma(&self, _z: &[f64], theta: &[f64], _gamma: &[f64]) -> Vec<Matrix> {
        vec![raw(2, 2, vec![0.0, 1.0, 1.0, -2.0 * theta[0]])]
    }

    fn conditionally_orthogonal(&self) -> bool {
        true
    }
}

/// Non-orthogonal plug-in moment `m = (y − θ w − γ) w` with `γ = g(X)`.
///
/// The nuisance target is the partial residual `y − s·w` for a fixed
/// reference slope `s`; at `s = θ0` its conditional mean is exactly `g(X)`.
#[derive(Clone, Copy, Debug)]
pub struct NaivePlrMoment {
    pub reference_slope: f64,
}

impl NaivePlrMoment {
    pub fn new(reference_slope: f64) -> Self {
        NaivePlrMoment { reference_slope }
    }
}

impl MomentModel for NaivePlrMoment {
    fn name(&self) -> &str {
        "plr-naive"
    }
    fn theta_dim(&self) -> usize {
        1
    }
    fn nuisance_dim(&self) -> usize {
        1
    }
    fn z_dim_min(&self) -> usize {
        3
    }
    fn x_indices(&self, z_len: usize) -> Vec<usize> {
        (2..z_len).collect()
    }
    fn nuisance_targets(&self) -> Vec<Target> {
        vec![Target::PartialResidual {
            outcome: 0,
            regressor: 1,
            slope: self.reference_slope,
        }]
    }

    fn moment(&self, z: &[f64], theta: &[f64], gamma: &[f64]) -> Vec<f64> {
        vec![(z[0] - theta[0] * z[1] - gamma[0]) * z[1]]
    }
    fn grad_theta(&self, z: &[f64], _theta: &[f64], _gamma: &[f64]) -> Matrix {
        raw(1, 1, vec![-z[1] * z[1]])
    }
    fn grad_gamma(&self, z: &[f64], _theta: &[f64], _gamma: &[f64]) -> Matrix {
        raw(1, 1, vec![-z[1]])
    }
    fn hessian_gamma(&self, _z: &[f64], _theta: &[f64], _gamma: &[f64]) -> Vec<Matrix> {
        vec![Matrix::zeros(1, 1)]
    }
    fn declared_lambda(&self) -> Option<f64> {
        Some(0.0)
    }
    fn gamma_linear(&self) -> bool {
        true
    }
}

/// Population mean `m = y − θ`, with a nuisance slot it ignores.
#[derive(Clone, Copy, Debug, Default)]
pub struct MeanMoment;

impl MomentModel for MeanMoment {
    fn name(&self) -> &str {
        "mean"
    }
    fn theta_dim(&self) -> usize {
        1
    }
    fn nuisance_dim(&self) -> usize {
        1
    }
    fn z_dim_min(&self) -> usize {
        1
    }
    fn x_indices(&self, z_len: usize) -> Vec<usize> {
        (1..z_len).collect()
    }
    fn nuisance_targets(&self) -> Vec<Target> {
        vec![Target::Column(0)]
    }
    fn moment(&self, z: &[f64], theta: &[f64], _gamma: &[f64]) -> Vec<f64> {
        vec![z[0] - theta[0]]
    }
    fn grad_theta(&self, _z: &[f64], _theta: &[f64], _gamma: &[f64]) -> Matrix {
        raw(1, 1, vec![-1.0])
    }
    fn grad_gamma(&self, _z: &[f64], _theta: &[f64], _gamma: &[f64]) -> Matrix {
        Matrix::zeros(1, 1)
    }
    fn hessian_gamma(&self, _z: &[f64], _theta: &[f64], _gamma: &[f64]) -> Vec<Matrix> {
        vec![Matrix::zeros(1, 1)]
    }
    fn declared_sigma(&self) -> Option<f64> {
        Some(0.0)
    }
    fn declared_lambda(&self) -> Option<f64> {
        Some(0.0)
    }
    fn uses_nuisance(&self) -> bool {
        false
    }
    fn gamma_linear(&self) -> bool {
        true
    }
    fn conditionally_orthogonal(&self) -> bool {
        true
    }
}

/// Builds a matrix without the finiteness check; the checked evaluators
/// validate the output afterwards.
fn raw(rows: usize, cols: usize, data: Vec<f64>) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for (i, v) in data.into_iter().enumerate() {
        m[(i / cols, i % cols)] = v;
    }
    m
}
