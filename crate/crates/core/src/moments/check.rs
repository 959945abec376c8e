use rand::Rng;

use crate::error::Result;
use crate::numerics::{fd_hessian, fd_jacobian, Matrix};

use super::MomentModel;

/// Worst discrepancies between analytic derivatives and finite differences.
#[derive(Clone, Debug, PartialEq)]
pub struct DerivativeCheck {
    pub model: String,
    pub points: usize,
    pub max_rel_err_theta: f64,
    pub max_rel_err_gamma: f64,
    pub max_err_hessian: f64,
    pub hessian_symmetric: bool,
    pub pass: bool,
}

/// Relative tolerance for first derivatives.
pub const GRADIENT_TOL: f64 = 1e-5;
/// Tolerance for second derivatives against second differences.
pub const HESSIAN_TOL: f64 = 1e-4;

fn scaled_err(analytic: &Matrix, numeric: &Matrix) -> f64 {
    analytic
        .as_slice()
        .iter()
        .zip(numeric.as_slice())
        .map(|(a, f)| (a - f).abs() / 1f64.max(a.abs()).max(f.abs()))
        .fold(0.0, f64::max)
}

/// Compares `∇θ m`, `∇γ m` and `∇γγ m` of `model` with central differences
/// at `points` random `(z, θ, γ)` drawn uniformly from `[-3, 3]`.
pub fn derivative_check(model: &dyn MomentModel, points: usize, rng: &mut impl Rng) -> Result<DerivativeCheck> {
    let d = model.theta_dim();
    let l = model.nuisance_dim();
    let zlen = model.z_dim_min() + 1;
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-3.0..3.0)).collect() };

    let mut worst_theta = 0.0f64;
    let mut worst_gamma = 0.0f64;
    let mut worst_hess = 0.0f64;
    let mut symmetric = true;
    for _ in 0..points {
        let z = draw(zlen);
        let theta = draw(d);
        let gamma = draw(l);

        let analytic = model.grad_theta(&z, &theta, &gamma);
        let numeric = fd_jacobian(|t| model.moment(&z, t, &gamma), &theta)?;
        worst_theta = worst_theta.max(scaled_err(&analytic, &numeric));

        let analytic = model.grad_gamma(&z, &theta, &gamma);
        let numeric = fd_jacobian(|g| model.moment(&z, &theta, g), &gamma)?;
        worst_gamma = worst_gamma.max(scaled_err(&analytic, &numeric));

        for (i, h) in model.hessian_gamma(&z, &theta, &gamma).iter().enumerate() {
            symmetric &= h.is_symmetric(1e-10);
            let numeric = fd_hessian(|g| model.moment(&z, &theta, g)[i], &gamma)?;
            worst_hess = worst_hess.max(scaled_err(h, &numeric));
        }
    }
    Ok(DerivativeCheck {
        model: model.name().to_string(),
        points,
        max_rel_err_theta: worst_theta,
        max_rel_err_gamma: worst_gamma,
        max_err_hessian: worst_hess,
        hessian_symmetric: symmetric,
        pass: symmetric && worst_theta < GRADIENT_TOL && worst_gamma < GRADIENT_TOL && worst_hess < HESSIAN_TOL,
    })
}
