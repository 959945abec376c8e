//! Shared numeric primitives.

mod diff;
pub(crate) mod linalg;
mod normal;
pub(crate) mod rng;

pub use diff::{default_step, fd_gradient, fd_hessian, fd_jacobian};
pub use linalg::{eigen_bound_sym, solve_linear, sym_eigenvalues, Matrix, Vector};
pub use normal::{ks_statistic, normal_cdf, normal_quantile};
pub use rng::{RngStream, StreamRng};

/// Arithmetic mean; `NaN` on an empty slice.
pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation with divisor `n - 1`; zero for fewer than two values.
pub fn sample_sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}
