use std::sync::Arc;

use crate::error::{Error, Result};
use crate::moments::MomentModel;
use crate::montecarlo::{nuisance_truth, sample_observations, Dgp};
use crate::numerics::{mean, RngStream};

use super::{LearnerChoice, NuisanceFunction};

/// Size of the independent evaluation sample used by [`rate_certificate`].
pub const RATE_EVAL_POINTS: usize = 2000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MseReport {
    /// Mean of `‖ĥ(x) − h0(x)‖²` over the evaluation sample.
    pub mse: f64,
    /// `√n · mse`.
    pub scaled: f64,
}

/// Mean squared error of `h_hat` against the truth on `eval_x`.
///
/// `n` is the sample size used for the `√n` scaling; it defaults to the
/// evaluation sample size.
pub fn mse_against_truth(
    h_hat: &NuisanceFunction,
    h0: &NuisanceFunction,
    eval_x: &[Vec<f64>],
    n: Option<usize>,
) -> Result<MseReport> {
    if eval_x.is_empty() {
        return Err(Error::contract("mse evaluation sample is empty"));
    }
    if h_hat.dim() != h0.dim() {
        return Err(Error::contract("nuisance dimensions differ"));
    }
    let sq: Vec<f64> = eval_x
        .iter()
        .map(|x| {
            h_hat
                .predict(x)
                .iter()
                .zip(h0.predict(x))
                .map(|(a, b)| (a - b) * (a - b))
                .sum()
        })
        .collect();
    let mse = mean(&sq);
    let n = n.unwrap_or(eval_x.len()) as f64;
    Ok(MseReport {
        mse,
        scaled: n.sqrt() * mse,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateRow {
    pub n: usize,
    pub mean_mse: f64,
    pub mean_scaled: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateCertificate {
    pub rows: Vec<RateRow>,
    /// Mean `√n · mse` is non-increasing across the top half of the grid.
    pub rate_ok: bool,
}

/// Monte Carlo surrogate for the `n^{1/4}` first-stage rate condition.
///
/// At each `n` the learner is trained on `n` fresh draws and scored against
/// the truth on [`RATE_EVAL_POINTS`] independent points; the verdict asks
/// that the replication-averaged `√n · mse` does not increase over the upper
/// half of the grid.
pub fn rate_certificate(
    learner: &LearnerChoice,
    model: &dyn MomentModel,
    dgp: &Arc<dyn Dgp>,
    n_grid: &[usize],
    replications: usize,
    seed: u64,
) -> Result<RateCertificate> {
    if replications < 10 {
        return Err(Error::contract("rate certificate needs at least 10 replications"));
    }
    if n_grid.is_empty() || n_grid.windows(2).any(|w| w[0] >= w[1]) || n_grid[0] == 0 {
        return Err(Error::contract("n grid must be positive and strictly increasing"));
    }
    let h0 = nuisance_truth(dgp, model)?;
    let mut rows = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let mut mses = Vec::with_capacity(replications);
        let mut scaled = Vec::with_capacity(replications);
        for rep in 0..replications as u64 {
            let mut rng = RngStream::new(seed, rep, format!("rate/aux/{n}")).rng();
            let aux = sample_observations(dgp.as_ref(), model, &mut rng, n)?;
            let h_hat = learner.train(model, Some(dgp), &aux)?;
            let mut rng = RngStream::new(seed, rep, format!("rate/eval/{n}")).rng();
            let eval: Vec<Vec<f64>> = sample_observations(dgp.as_ref(), model, &mut rng, RATE_EVAL_POINTS)?
                .into_iter()
                .map(|o| o.x)
                .collect();
            let r = mse_against_truth(&h_hat, &h0, &eval, Some(n))?;
            mses.push(r.mse);
            scaled.push(r.scaled);
        }
        rows.push(RateRow {
            n,
            mean_mse: mean(&mses),
            mean_scaled: mean(&scaled),
        });
    }
    let top = &rows[rows.len() / 2..];
    let rate_ok = top.windows(2).all(|w| w[1].mean_scaled <= w[0].mean_scaled);
    Ok(RateCertificate { rows, rate_ok })
}
