use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::firststage::NuisanceFunction;
use crate::montecarlo::{nuisance_truth, Dgp};
use crate::numerics::{eigen_bound_sym, RngStream};

use super::{eval_grad_gamma, eval_hessian_gamma, MomentModel, Observation, ORTHOGONALITY_THRESHOLD};

/// Running mean/variance (Welford) for a fixed number of coordinates.
#[derive(Clone, Debug)]
struct Moments {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(dim: usize) -> Self {
        Moments {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn push(&mut self, v: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(v) {
            let delta = x - *m;
            *m += delta / n;
            *s += delta * (x - *m);
        }
    }

    /// Standard errors of the means.
    fn std_errors(&self) -> Vec<f64> {
        let n = self.count as f64;
        if self.count < 2 {
            return vec![0.0; self.mean.len()];
        }
        self.m2.iter().map(|s| (s / (n - 1.0) / n).sqrt()).collect()
    }
}

fn standardized(mean: f64, se: f64) -> f64 {
    if mean == 0.0 {
        0.0
    } else if se == 0.0 {
        f64::INFINITY
    } else {
        mean.abs() / se
    }
}

/// Monte Carlo estimate of `E[∇γ m(Z, θ, h0(x)) | X = x]` at one grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct GridPointEstimate {
    pub x: Vec<f64>,
    /// Row-major `d × ℓ`.
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
    pub max_standardized: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalOrthogonalityReport {
    pub model: String,
    pub points: Vec<GridPointEstimate>,
    pub max_standardized: f64,
    pub orthogonal: bool,
}

/// Checks `E[∇γ m(Z, θ, h0(X)) | X = x] = 0` on a grid of `x` values.
///
/// The flag is set when every entry at every grid point is within
/// [`ORTHOGONALITY_THRESHOLD`] standard errors of zero.
pub fn check_conditional_orthogonality(
    model: &dyn MomentModel,
    dgp: &Arc<dyn Dgp>,
    theta: &[f64],
    grid: &[Vec<f64>],
    draws_per_point: usize,
    stream: &RngStream,
) -> Result<ConditionalOrthogonalityReport> {
    if draws_per_point < 1000 {
        return Err(Error::contract("conditional orthogonality needs at least 1000 draws per point"));
    }
    let h0 = nuisance_truth(dgp, model)?;
    let dim = model.theta_dim() * model.nuisance_dim();
    let mut points = Vec::with_capacity(grid.len());
    for (i, x) in grid.iter().enumerate() {
        let mut rng = RngStream::new(stream.seed, stream.index, format!("{}/x{i}", stream.tag)).rng();
        let gamma = h0.predict(x);
        let mut acc = Moments::new(dim);
        // draw in blocks to bound memory at 10^6 draws per point
        let mut remaining = draws_per_point;
        while remaining > 0 {
            let block = remaining.min(16_384);
            for z in dgp.sample_given_x(&mut rng, x, block)? {
                let obs = Observation::for_model(z, model)?;
                let g = eval_grad_gamma(model, &obs, theta, &gamma)?;
                acc.push(g.as_slice());
            }
            remaining -= block;
        }
        let se = acc.std_errors();
        let max_standardized = acc
            .mean
            .iter()
            .zip(&se)
            .map(|(&m, &s)| standardized(m, s))
            .fold(0.0, f64::max);
        points.push(GridPointEstimate {
            x: x.clone(),
            mean: acc.mean,
            std_error: se,
            max_standardized,
        });
    }
    let max_standardized = points.iter().map(|p| p.max_standardized).fold(0.0, f64::max);
    Ok(ConditionalOrthogonalityReport {
        model: model.name().to_string(),
        points,
        max_standardized,
        orthogonal: max_standardized < ORTHOGONALITY_THRESHOLD,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrthogonalityScore {
    /// Sample mean of `∇γ m(Z, θ, h0(X)) · (ĥ(X) − h0(X))`.
    pub score: Vec<f64>,
    pub std_error: Vec<f64>,
    pub max_standardized: f64,
    pub orthogonal: bool,
}

/// Empirical orthogonality score on a sample independent of `h_hat`'s training data.
pub fn orthogonality_score(
    model: &dyn MomentModel,
    theta: &[f64],
    h_hat: &NuisanceFunction,
    h0: &NuisanceFunction,
    sample: &[Observation],
) -> Result<OrthogonalityScore> {
    if sample.is_empty() {
        return Err(Error::contract("orthogonality score on an empty sample"));
    }
    let mut acc = Moments::new(model.theta_dim());
    for (index, obs) in sample.iter().enumerate() {
        let g0 = h0.predict(&obs.x);
        let gh = h_hat.predict(&obs.x);
        let delta: Vec<f64> = gh.iter().zip(&g0).map(|(a, b)| a - b).collect();
        let grad = eval_grad_gamma(model, obs, theta, &g0).map_err(|e| Error::AtObservation {
            index,
            source: Box::new(e),
        })?;
        acc.push(&grad.mul_vec(&delta));
    }
    let se = acc.std_errors();
    let max_standardized = acc
        .mean
        .iter()
        .zip(&se)
        .map(|(&m, &s)| standardized(m, s))
        .fold(0.0, f64::max);
    Ok(OrthogonalityScore {
        score: acc.mean,
        std_error: se,
        max_standardized,
        orthogonal: max_standardized < ORTHOGONALITY_THRESHOLD,
    })
}

/// Closed interval `[lo, hi]` for one coordinate of a probe box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval {
            lo: lo.min(hi),
            hi: lo.max(hi),
        }
    }

    pub fn point(v: f64) -> Self {
        Interval { lo: v, hi: v }
    }

    /// Smallest interval containing every value.
    pub fn hull(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        values.into_iter().fold(None, |acc, v| match acc {
            None => Some(Interval::point(v)),
            Some(i) => Some(Interval::new(i.lo.min(v), i.hi.max(v))),
        })
    }

    fn draw(&self, rng: &mut impl Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundEstimate {
    /// Largest observed `‖∇γ m‖` (Frobenius).
    pub sigma_hat: f64,
    /// Largest observed absolute eigenvalue of any `∇γγ m_i`.
    pub lambda_hat: f64,
}

/// Probes `‖∇γ m‖` and the eigenvalues of `∇γγ m` at random
/// `(observation, θ, γ)`; the maxima are lower bounds on the true suprema.
pub fn estimate_bounds(
    model: &dyn MomentModel,
    samples: &[Observation],
    theta_box: &[Interval],
    gamma_box: &[Interval],
    probes: usize,
    rng: &mut impl Rng,
) -> Result<BoundEstimate> {
    if probes == 0 {
        return Err(Error::contract("estimate_bounds needs at least one probe"));
    }
    if samples.is_empty() {
        return Err(Error::contract("estimate_bounds needs observations"));
    }
    if theta_box.len() != model.theta_dim() || gamma_box.len() != model.nuisance_dim() {
        return Err(Error::contract("probe box dimensions do not match the model"));
    }
    let mut sigma_hat = 0.0f64;
    let mut lambda_hat = 0.0f64;
    for _ in 0..probes {
        let obs = &samples[rng.random_range(0..samples.len())];
        let theta: Vec<f64> = theta_box.iter().map(|b| b.draw(rng)).collect();
        let gamma: Vec<f64> = gamma_box.iter().map(|b| b.draw(rng)).collect();
        sigma_hat = sigma_hat.max(eval_grad_gamma(model, obs, &theta, &gamma)?.frobenius());
        for h in eval_hessian_gamma(model, obs, &theta, &gamma)? {
            lambda_hat = lambda_hat.max(eigen_bound_sym(&h)?);
        }
    }
    Ok(BoundEstimate { sigma_hat, lambda_hat })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::{MeanMoment, NaivePlrMoment, PlrMoment};
    use crate::montecarlo::{dgp_by_name, sample_observations, PlrDgp};

    fn plr_dgp() -> Arc<dyn Dgp> {
        Arc::new(PlrDgp::default())
    }

    #[test]
    fn plr_passes_and_naive_fails_with_same_seed_and_grid() {
        let dgp = plr_dgp();
        let grid = dgp.x_grid(3);
        let stream = RngStream::new(2024, 0, "cond-orth");
        let plr = check_conditional_orthogonality(&PlrMoment, &dgp, &[1.0], &grid, 20_000, &stream).unwrap();
        assert!(plr.orthogonal, "{plr:?}");
        let naive = NaivePlrMoment::new(1.0);
        let bad = check_conditional_orthogonality(&naive, &dgp, &[1.0], &grid, 20_000, &stream).unwrap();
        assert!(!bad.orthogonal);
    }

    #[test]
    fn naive_gradient_mean_matches_minus_m0() {
        // with m0(x) = x, E[∇γ m | X = 1] = E[-W | X = 1] = -1
        let dgp = dgp_by_name("plr-linear-m0", 1.0).unwrap();
        let naive = NaivePlrMoment::new(1.0);
        let stream = RngStream::new(7, 0, "naive");
        let r = check_conditional_orthogonality(&naive, &dgp, &[1.0], &[vec![1.0]], 100_000, &stream).unwrap();
        let p = &r.points[0];
        assert!((p.mean[0] + 1.0).abs() < 3.0 * p.std_error[0], "{p:?}");
        assert!(!r.orthogonal);
    }

    #[test]
    fn zero_gradient_model_gives_exact_zeros() {
        let dgp = plr_dgp();
        let stream = RngStream::new(1, 0, "mean");
        let r = check_conditional_orthogonality(&MeanMoment, &dgp, &[0.0], &dgp.x_grid(2), 1000, &stream).unwrap();
        assert!(r.points.iter().all(|p| p.mean.iter().all(|&m| m == 0.0)));
        assert_eq!(r.max_standardized, 0.0);
        assert!(r.orthogonal);
    }

    #[test]
    fn too_few_draws_rejected() {
        let dgp = plr_dgp();
        let stream = RngStream::new(1, 0, "x");
        assert!(matches!(
            check_conditional_orthogonality(&PlrMoment, &dgp, &[1.0], &dgp.x_grid(2), 999, &stream),
            Err(Error::Contract(_))
        ));
    }

    #[derive(Debug)]
    struct NoConditional;
    impl Dgp for NoConditional {
        fn name(&self) -> &str {
            "no-conditional"
        }
        fn theta0(&self) -> &[f64] {
            &[0.0]
        }
        fn z_dim(&self) -> usize {
            3
        }
        fn sample(&self, _: &mut crate::numerics::StreamRng, n: usize) -> Vec<Vec<f64>> {
            vec![vec![0.0; 3]; n]
        }
        fn conditional_mean(&self, _: &crate::firststage::Target, _: &[f64]) -> Result<f64> {
            Ok(0.0)
        }
        fn x_grid(&self, points: usize) -> Vec<Vec<f64>> {
            vec![vec![0.0]; points]
        }
    }

    #[test]
    fn missing_conditional_sampler_is_unsupported() {
        let dgp: Arc<dyn Dgp> = Arc::new(NoConditional);
        let stream = RngStream::new(1, 0, "x");
        assert!(matches!(
            check_conditional_orthogonality(&PlrMoment, &dgp, &[1.0], &[vec![0.0]], 1000, &stream),
            Err(Error::Unsupported(_))
        ));
    }

    fn plr_sample(n: usize, seed: u64, model: &dyn MomentModel) -> Vec<Observation> {
        let mut rng = RngStream::new(seed, 0, "sample").rng();
        sample_observations(&PlrDgp::default(), model, &mut rng, n).unwrap()
    }

    #[test]
    fn score_is_exactly_zero_when_h_hat_is_h0() {
        let dgp = plr_dgp();
        let models: Vec<Box<dyn MomentModel>> =
            vec![Box::new(PlrMoment), Box::new(NaivePlrMoment::new(1.0)), Box::new(MeanMoment)];
        for m in &models {
            let h0 = nuisance_truth(&dgp, m.as_ref()).unwrap();
            let sample = plr_sample(2000, 3, m.as_ref());
            let s = orthogonality_score(m.as_ref(), &[1.0], &h0, &h0, &sample).unwrap();
            assert!(s.score.iter().all(|&v| v == 0.0));
            assert!(s.orthogonal);
        }
    }

    #[test]
    fn offset_perturbation_plr_vs_naive() {
        // constant offset: the PLR score has population value zero
        let dgp = plr_dgp();
        let h0 = nuisance_truth(&dgp, &PlrMoment).unwrap();
        let h_hat = h0.clone().offset(vec![0.1, 0.1]);
        let sample = plr_sample(100_000, 4, &PlrMoment);
        let s = orthogonality_score(&PlrMoment, &[1.0], &h_hat, &h0, &sample).unwrap();
        assert!(s.score[0].abs() < 4.0 * s.std_error[0], "{s:?}");

        // shifted design with E[W] = 1: the naive score is about -0.1 E[W] = -0.1
        let shifted: Arc<dyn Dgp> = Arc::new(PlrDgp::with_functions(
            1.0,
            crate::montecarlo::default_g0,
            |x| 1.0 + x,
            "plr-shifted",
        ));
        let naive = NaivePlrMoment::new(1.0);
        let h0 = nuisance_truth(&shifted, &naive).unwrap();
        let h_hat = h0.clone().offset(vec![0.1]);
        let mut rng = RngStream::new(4, 0, "shifted").rng();
        let sample = sample_observations(shifted.as_ref(), &naive, &mut rng, 100_000).unwrap();
        let s = orthogonality_score(&naive, &[1.0], &h_hat, &h0, &sample).unwrap();
        assert!((s.score[0] + 0.1).abs() < 4.0 * s.std_error[0], "{s:?}");
        assert!(!s.orthogonal);
    }

    #[test]
    fn bounds_for_builtin_models() {
        let sample = plr_sample(100, 5, &PlrMoment);
        let mut rng = RngStream::new(5, 0, "probe").rng();
        let gbox = [Interval::new(-2.0, 2.0), Interval::new(-2.0, 2.0)];
        let b = estimate_bounds(&PlrMoment, &sample, &[Interval::point(0.0)], &gbox, 50, &mut rng).unwrap();
        assert!((b.lambda_hat - 1.0).abs() < 1e-10);
        let b = estimate_bounds(&PlrMoment, &sample, &[Interval::point(1.0)], &gbox, 50, &mut rng).unwrap();
        assert!((b.lambda_hat - (1.0 + 2f64.sqrt())).abs() < 1e-10);
        assert!(b.sigma_hat > 0.0);

        let b = estimate_bounds(&MeanMoment, &sample, &[Interval::point(0.0)], &[Interval::new(-1.0, 1.0)], 10, &mut rng)
            .unwrap();
        assert_eq!(b.sigma_hat, 0.0);
        assert!(estimate_bounds(&MeanMoment, &sample, &[Interval::point(0.0)], &[Interval::point(0.0)], 0, &mut rng).is_err());
    }
}
