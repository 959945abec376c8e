//! Data-generating processes with known `θ0` and nuisance truth.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::firststage::{NuisanceFunction, Target};
use crate::moments::{MomentModel, Observation};
use crate::numerics::rng::truncated_normal;
use crate::numerics::StreamRng;

/// A simulation design: a sampler for `Z` plus closed-form conditional means.
pub trait Dgp: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn theta0(&self) -> &[f64];
    /// Length of each sampled `z`.
    fn z_dim(&self) -> usize;
    fn sample(&self, rng: &mut StreamRng, n: usize) -> Vec<Vec<f64>>;

    /// Draws `count` values of `z` from the conditional law given `X = x`.
    fn sample_given_x(&self, _rng: &mut StreamRng, _x: &[f64], _count: usize) -> Result<Vec<Vec<f64>>> {
        Err(Error::Unsupported(format!("{} has no conditional sampler", self.name())))
    }

    /// `E[target(Z) | X = x]`.
    fn conditional_mean(&self, target: &Target, x: &[f64]) -> Result<f64>;

    /// Draws `x` values covering the support, used for orthogonality grids.
    fn x_grid(&self, points: usize) -> Vec<Vec<f64>>;
}

/// The true nuisance `h0` of `model` under `dgp`, as an exact function.
pub fn nuisance_truth(dgp: &Arc<dyn Dgp>, model: &dyn MomentModel) -> Result<NuisanceFunction> {
    let targets = model.nuisance_targets();
    // fail early rather than on the first prediction
    let probe = dgp.x_grid(1).into_iter().next().unwrap_or_default();
    for t in &targets {
        dgp.conditional_mean(t, &probe)?;
    }
    let dgp = Arc::clone(dgp);
    let dim = targets.len();
    Ok(NuisanceFunction::exact(
        format!("truth[{}]", dgp.name()),
        dim,
        move |x: &[f64]| {
            targets
                .iter()
                .map(|t| dgp.conditional_mean(t, x).unwrap_or(f64::NAN))
                .collect()
        },
    ))
}

/// Samples `n` observations and lays them out for `model`.
pub fn sample_observations(
    dgp: &dyn Dgp,
    model: &dyn MomentModel,
    rng: &mut StreamRng,
    n: usize,
) -> Result<Vec<Observation>> {
    dgp.sample(rng, n)
        .into_iter()
        .map(|z| Observation::for_model(z, model))
        .collect()
}

/// Partially linear design:
///
/// * `X ~ U(−1, 1)`
/// * `W = m0(X) + ν`, `ν ~ N(0, 0.5²)` truncated to `[−3, 3]`
/// * `Y = θ0 W + g0(X) + ε`, `ε ~ N(0, 1)` truncated to `[−4, 4]`
///
/// with `z = (y, w, x)`.
#[derive(Clone)]
pub struct PlrDgp {
    theta0: [f64; 1],
    g0: fn(f64) -> f64,
    m0: fn(f64) -> f64,
    name: String,
}

pub const NU_SD: f64 = 0.5;
pub const NU_BOUND: f64 = 3.0;
pub const EPS_SD: f64 = 1.0;
pub const EPS_BOUND: f64 = 4.0;

pub fn default_g0(x: f64) -> f64 {
    (PI * x).sin() * x * x
}

pub fn default_m0(x: f64) -> f64 {
    x + 0.5 * (PI * x).cos()
}

impl PlrDgp {
    pub fn new(theta0: f64) -> Self {
        Self::with_functions(theta0, default_g0, default_m0, "plr")
    }

    pub fn with_functions(theta0: f64, g0: fn(f64) -> f64, m0: fn(f64) -> f64, name: impl Into<String>) -> Self {
        PlrDgp {
            theta0: [theta0],
            g0,
            m0,
            name: name.into(),
        }
    }

    pub fn g0(&self, x: f64) -> f64 {
        (self.g0)(x)
    }

    pub fn m0(&self, x: f64) -> f64 {
        (self.m0)(x)
    }

    fn draw_given(&self, rng: &mut StreamRng, x: f64) -> Vec<f64> {
        let nu = truncated_normal(rng, NU_SD, NU_BOUND);
        let eps = truncated_normal(rng, EPS_SD, EPS_BOUND);
        let w = self.m0(x) + nu;
        let y = self.theta0[0] * w + self.g0(x) + eps;
        vec![y, w, x]
    }

    fn column_mean(&self, col: usize, x: f64) -> Result<f64> {
        match col {
            0 => Ok(self.theta0[0] * self.m0(x) + self.g0(x)),
            1 => Ok(self.m0(x)),
            2 => Ok(x),
            _ => Err(Error::contract(format!("{}: no column {col}", self.name))),
        }
    }
}

impl Default for PlrDgp {
    fn default() -> Self {
        Self::new(1.0)
    }
}

impl fmt::Debug for PlrDgp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PlrDgp")
            .field("name", &self.name)
            .field("theta0", &self.theta0[0])
            .finish()
    }
}

impl Dgp for PlrDgp {
    fn name(&self) -> &str {
        &self.name
    }
    fn theta0(&self) -> &[f64] {
        &self.theta0
    }
    fn z_dim(&self) -> usize {
        3
    }

    fn sample(&self, rng: &mut StreamRng, n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                let x = rng.random_range(-1.0..1.0);
                self.draw_given(rng, x)
            })
            .collect()
    }

    fn sample_given_x(&self, rng: &mut StreamRng, x: &[f64], count: usize) -> Result<Vec<Vec<f64>>> {
        let x = *x.first().ok_or_else(|| Error::contract("plr design needs a scalar x"))?;
        Ok((0..count).map(|_| self.draw_given(rng, x)).collect())
    }

    fn conditional_mean(&self, target: &Target, x: &[f64]) -> Result<f64> {
        let x = *x.first().ok_or_else(|| Error::contract("plr design needs a scalar x"))?;
        match *target {
            Target::Column(c) => self.column_mean(c, x),
            Target::PartialResidual {
                outcome,
                regressor,
                slope,
            } => Ok(self.column_mean(outcome, x)? - slope * self.column_mean(regressor, x)?),
        }
    }

    fn x_grid(&self, points: usize) -> Vec<Vec<f64>> {
        if points == 1 {
            return vec![vec![0.0]];
        }
        (0..points)
            .map(|i| vec![-0.9 + 1.8 * i as f64 / (points - 1) as f64])
            .collect()
    }
}

/// Built-in designs by name.
pub fn dgp_by_name(name: &str, theta0: f64) -> Option<Arc<dyn Dgp>> {
    match name {
        "plr" => Some(Arc::new(PlrDgp::new(theta0))),
        "plr-linear-m0" => Some(Arc::new(PlrDgp::with_functions(
            theta0,
            default_g0,
            |x| x,
            "plr-linear-m0",
        ))),
        _ => None,
    }
}
