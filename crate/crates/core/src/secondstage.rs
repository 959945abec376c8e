//! The second-stage Z-estimator.
//!
//! `θ̂` solves `(1/n) Σ m(Z_t, θ, ĥ(X_t)) = 0` on the main split, with `ĥ`
//! fitted on the auxiliary split only. Inference uses the sandwich
//! `Σ = J⁻¹ V J⁻ᵀ` evaluated at `(θ̂, ĥ)`.

use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::firststage::{LearnerChoice, NuisanceFunction, Provenance};
use crate::moments::{eval_grad_theta, eval_moment, MomentModel, Observation};
use crate::montecarlo::Dgp;
use crate::numerics::linalg::norm2;
use crate::numerics::{normal_quantile, solve_linear, Matrix, RngStream, Vector};

/// Most step halvings tried in one Newton iteration.
pub const MAX_HALVINGS: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    /// Share of the data assigned to the auxiliary (first-stage) split.
    pub aux_fraction: f64,
    pub seed: u64,
}

impl SplitPlan {
    pub fn new(aux_fraction: f64, seed: u64) -> Self {
        SplitPlan { aux_fraction, seed }
    }
}

/// Disjoint, sorted auxiliary and main index sets covering `0..n`.
pub fn split_indices(n: usize, plan: &SplitPlan) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::contract("sample splitting needs at least two observations"));
    }
    if !(plan.aux_fraction > 0.0 && plan.aux_fraction < 1.0) {
        return Err(Error::contract("aux_fraction must lie in (0, 1)"));
    }
    let n_aux = (plan.aux_fraction * n as f64).round() as usize;
    if n_aux == 0 || n_aux == n {
        return Err(Error::contract(format!(
            "aux_fraction {} leaves an empty split of {n} observations",
            plan.aux_fraction
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut RngStream::new(plan.seed, 0, "split").rng());
    let (aux, main) = perm.split_at(n_aux);
    let (mut aux, mut main) = (aux.to_vec(), main.to_vec());
    aux.sort_unstable();
    main.sort_unstable();
    Ok((aux, main))
}

/// Splits `data` into `(aux, main)`.
pub fn split(data: &[Observation], plan: &SplitPlan) -> Result<(Vec<Observation>, Vec<Observation>)> {
    let (aux, main) = split_indices(data.len(), plan)?;
    Ok((
        aux.iter().map(|&i| data[i].clone()).collect(),
        main.iter().map(|&i| data[i].clone()).collect(),
    ))
}

/// Main-split observations with the first-stage values `ĥ(X_t)` attached.
#[derive(Clone, Debug)]
pub struct PluggedSample<'a> {
    obs: &'a [Observation],
    gamma: Vec<Vec<f64>>,
}

impl<'a> PluggedSample<'a> {
    pub fn new(obs: &'a [Observation], h_hat: &NuisanceFunction) -> Self {
        PluggedSample {
            gamma: h_hat.predict_all(obs),
            obs,
        }
    }

    pub fn from_values(obs: &'a [Observation], gamma: Vec<Vec<f64>>) -> Result<Self> {
        if obs.len() != gamma.len() {
            return Err(Error::contract("one nuisance value per observation required"));
        }
        Ok(PluggedSample { obs, gamma })
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn observations(&self) -> &[Observation] {
        self.obs
    }

    pub fn gamma(&self) -> &[Vec<f64>] {
        &self.gamma
    }

    fn iter(&self) -> impl Iterator<Item = (usize, &Observation, &[f64])> {
        self.obs
            .iter()
            .zip(&self.gamma)
            .enumerate()
            .map(|(i, (o, g))| (i, o, g.as_slice()))
    }
}

fn at_index(index: usize) -> impl FnOnce(Error) -> Error {
    move |e| Error::AtObservation {
        index,
        source: Box::new(e),
    }
}

fn non_empty(sample: &PluggedSample<'_>) -> Result<()> {
    if sample.is_empty() {
        Err(Error::contract("main sample is empty"))
    } else {
        Ok(())
    }
}

/// `(1/n) Σ m(Z_t, θ, ĥ(X_t))`.
pub fn empirical_moment_plugged(model: &dyn MomentModel, sample: &PluggedSample<'_>, theta: &[f64]) -> Result<Vec<f64>> {
    non_empty(sample)?;
    let mut acc = vec![0.0; model.theta_dim()];
    for (i, obs, g) in sample.iter() {
        let m = eval_moment(model, obs, theta, g).map_err(at_index(i))?;
        acc.iter_mut().zip(&m).for_each(|(a, v)| *a += v);
    }
    let n = sample.len() as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}

pub fn empirical_moment(
    model: &dyn MomentModel,
    main: &[Observation],
    theta: &[f64],
    h_hat: &NuisanceFunction,
) -> Result<Vector> {
    Vector::new(empirical_moment_plugged(model, &PluggedSample::new(main, h_hat), theta)?)
}

/// `(1/n) Σ ∇θ m(Z_t, θ, ĥ(X_t))`.
pub fn empirical_jacobian(model: &dyn MomentModel, sample: &PluggedSample<'_>, theta: &[f64]) -> Result<Matrix> {
    non_empty(sample)?;
    let d = model.theta_dim();
    let mut acc = Matrix::zeros(d, d);
    for (i, obs, g) in sample.iter() {
        acc.add_scaled(&eval_grad_theta(model, obs, theta, g).map_err(at_index(i))?, 1.0);
    }
    Ok(acc.scale(1.0 / sample.len() as f64))
}

fn singular_jacobian(e: Error) -> Error {
    match e {
        Error::SingularMatrix { condition } => Error::SingularJacobian { condition },
        other => other,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iter: usize,
    /// Defaults to the zero vector.
    pub theta_init: Option<Vec<f64>>,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tol: 1e-10,
            max_iter: 100,
            theta_init: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewtonTrace {
    pub iterations: usize,
    pub halvings: usize,
    pub residual_norm: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Inference {
    pub alpha: f64,
    pub z_critical: f64,
    pub j_hat: Matrix,
    pub v_hat: Matrix,
    pub sigma_hat: Matrix,
    pub std_errors: Vec<f64>,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub theta_hat: Vector,
    pub n: usize,
    pub trace: NewtonTrace,
    /// Filled by [`infer`].
    pub inference: Option<Inference>,
}

/// Newton's method with residual-norm step halving on the empirical moment.
pub fn solve_z_plugged(
    model: &dyn MomentModel,
    sample: &PluggedSample<'_>,
    settings: &SolverSettings,
) -> Result<EstimateResult> {
    if !(settings.tol > 0.0) {
        return Err(Error::contract("solver tolerance must be positive"));
    }
    let d = model.theta_dim();
    let mut theta = settings.theta_init.clone().unwrap_or_else(|| vec![0.0; d]);
    if theta.len() != d {
        return Err(Error::contract(format!("theta_init has length {}, expected {d}", theta.len())));
    }
    let mut mbar = empirical_moment_plugged(model, sample, &theta)?;
    let mut resid = norm2(&mbar);
    let mut iterations = 0;
    let mut halvings = 0;
    while resid > settings.tol {
        if iterations == settings.max_iter {
            return Err(Error::NoConvergence {
                theta,
                residual: resid,
                iterations,
            });
        }
        let jac = empirical_jacobian(model, sample, &theta)?;
        let step = solve_linear(&jac, &mbar).map_err(singular_jacobian)?;
        let mut scale = 1.0;
        let mut accepted = None;
        for attempt in 0..=MAX_HALVINGS {
            let cand: Vec<f64> = theta.iter().zip(&step).map(|(t, s)| t - scale * s).collect();
            if let Ok(m) = empirical_moment_plugged(model, sample, &cand) {
                let r = norm2(&m);
                if r < resid {
                    halvings += attempt;
                    accepted = Some((cand, m, r));
                    break;
                }
            }
            scale *= 0.5;
        }
        iterations += 1;
        match accepted {
            Some((t, m, r)) => {
                theta = t;
                mbar = m;
                resid = r;
            }
            None => {
                return Err(Error::NoConvergence {
                    theta,
                    residual: resid,
                    iterations,
                })
            }
        }
    }
    // a root with a singular Jacobian does not identify θ
    let jac = empirical_jacobian(model, sample, &theta)?;
    solve_linear(&jac, &mbar).map_err(singular_jacobian)?;
    Ok(EstimateResult {
        theta_hat: Vector::new(theta)?,
        n: sample.len(),
        trace: NewtonTrace {
            iterations,
            halvings,
            residual_norm: resid,
            converged: true,
        },
        inference: None,
    })
}

pub fn solve_z(
    model: &dyn MomentModel,
    main: &[Observation],
    h_hat: &NuisanceFunction,
    settings: &SolverSettings,
) -> Result<EstimateResult> {
    solve_z_plugged(model, &PluggedSample::new(main, h_hat), settings)
}

/// Sandwich inference at `(θ̂, ĥ)`:
/// `J = (1/n) Σ ∇θ m`, `V = (1/n) Σ m mᵀ`, `Σ = J⁻¹ V J⁻ᵀ`, `se = √(diag Σ / n)`.
pub fn infer_plugged(
    model: &dyn MomentModel,
    sample: &PluggedSample<'_>,
    result: EstimateResult,
    alpha: f64,
) -> Result<EstimateResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::contract("alpha must lie in (0, 1)"));
    }
    if !result.trace.converged {
        return Err(Error::contract("inference requested for a non-converged estimate"));
    }
    let theta = result.theta_hat.as_slice();
    let d = model.theta_dim();
    let j_hat = empirical_jacobian(model, sample, theta)?;
    let mut v_hat = Matrix::zeros(d, d);
    for (i, obs, g) in sample.iter() {
        let m = eval_moment(model, obs, theta, g).map_err(at_index(i))?;
        for a in 0..d {
            for b in 0..d {
                v_hat[(a, b)] += m[a] * m[b];
            }
        }
    }
    let n = sample.len() as f64;
    let v_hat = v_hat.scale(1.0 / n);
    let j_inv = j_hat.inverse().map_err(singular_jacobian)?;
    let sigma_hat = j_inv.matmul(&v_hat).matmul(&j_inv.transpose()).symmetrized();
    let std_errors: Vec<f64> = sigma_hat.diagonal().iter().map(|s| (s.max(0.0) / n).sqrt()).collect();
    let z_critical = normal_quantile(1.0 - alpha / 2.0);
    let ci_lower = theta.iter().zip(&std_errors).map(|(t, s)| t - z_critical * s).collect();
    let ci_upper = theta.iter().zip(&std_errors).map(|(t, s)| t + z_critical * s).collect();
    Ok(EstimateResult {
        inference: Some(Inference {
            alpha,
            z_critical,
            j_hat,
            v_hat,
            sigma_hat,
            std_errors,
            ci_lower,
            ci_upper,
        }),
        ..result
    })
}

pub fn infer(
    model: &dyn MomentModel,
    main: &[Observation],
    result: EstimateResult,
    h_hat: &NuisanceFunction,
    alpha: f64,
) -> Result<EstimateResult> {
    infer_plugged(model, &PluggedSample::new(main, h_hat), result, alpha)
}

#[derive(Clone, Debug)]
pub struct TwoStageOutput {
    pub estimate: EstimateResult,
    pub provenance: Provenance,
    pub aux_indices: Vec<usize>,
    pub main_indices: Vec<usize>,
}

/// Split → fit `ĥ` on the auxiliary part → solve and infer on the main part.
///
/// A model that ignores `γ` skips the split and uses every observation.
/// `dgp` is only consulted by [`LearnerChoice::Oracle`].
pub fn two_stage(
    model: &dyn MomentModel,
    data: &[Observation],
    learner: &LearnerChoice,
    dgp: Option<&Arc<dyn Dgp>>,
    plan: &SplitPlan,
    settings: &SolverSettings,
    alpha: f64,
) -> Result<TwoStageOutput> {
    let (aux_indices, main_indices, h_hat) = if model.uses_nuisance() {
        let (aux_indices, main_indices) = split_indices(data.len(), plan)?;
        let aux: Vec<Observation> = aux_indices.iter().map(|&i| data[i].clone()).collect();
        let h_hat = learner.train(model, dgp, &aux)?;
        (aux_indices, main_indices, h_hat)
    } else {
        let h_hat = NuisanceFunction::constant(vec![0.0; model.nuisance_dim()]);
        (Vec::new(), (0..data.len()).collect(), h_hat)
    };
    let main: Vec<Observation> = main_indices.iter().map(|&i| data[i].clone()).collect();
    let sample = PluggedSample::new(&main, &h_hat);
    let estimate = solve_z_plugged(model, &sample, settings)?;
    let estimate = infer_plugged(model, &sample, estimate, alpha)?;
    Ok(TwoStageOutput {
        estimate,
        provenance: h_hat.provenance(),
        aux_indices,
        main_indices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::firststage::LearnerKind;
    use crate::moments::{MeanMoment, PlrMoment};
    use crate::montecarlo::{sample_observations, PlrDgp};
    use crate::numerics::{mean, sample_sd};
    use proptest::prelude::*;

    fn mean_data(ys: &[f64]) -> Vec<Observation> {
        ys.iter().map(|&y| Observation::for_model(vec![y], &MeanMoment).unwrap()).collect()
    }

    fn zero() -> NuisanceFunction {
        NuisanceFunction::constant(vec![0.0])
    }

    #[test]
    fn split_sizes_and_determinism() {
        let (a, m) = split_indices(10, &SplitPlan::new(0.5, 1)).unwrap();
        assert_eq!((a.len(), m.len()), (5, 5));
        let (a, m) = split_indices(10, &SplitPlan::new(0.3, 1)).unwrap();
        assert_eq!((a.len(), m.len()), (3, 7));
        let mut all: Vec<usize> = a.iter().chain(&m).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(split_indices(10, &SplitPlan::new(0.3, 1)).unwrap(), (a, m));
        assert_ne!(
            split_indices(100, &SplitPlan::new(0.5, 1)).unwrap(),
            split_indices(100, &SplitPlan::new(0.5, 2)).unwrap()
        );
    }

    #[test]
    fn degenerate_splits_rejected() {
        assert!(split_indices(1, &SplitPlan::new(0.5, 1)).is_err());
        assert!(split_indices(10, &SplitPlan::new(0.01, 1)).is_err());
        assert!(split_indices(10, &SplitPlan::new(0.99, 1)).is_err());
        assert!(split_indices(10, &SplitPlan::new(1.0, 1)).is_err());
    }

    #[test]
    fn empirical_moment_examples() {
        let data = mean_data(&[1.0, 2.0, 3.0]);
        assert_eq!(empirical_moment(&MeanMoment, &data, &[2.0], &zero()).unwrap().as_slice(), &[0.0]);
        let one = mean_data(&[5.0]);
        assert_eq!(empirical_moment(&MeanMoment, &one, &[1.5], &zero()).unwrap().as_slice(), &[3.5]);
        assert!(empirical_moment(&MeanMoment, &[], &[1.5], &zero()).is_err());
    }

    #[test]
    fn plr_with_zero_nuisance_reduces_to_ls_moment() {
        let pts = [(1.0, 0.5), (2.0, -1.0), (0.3, 2.0), (-1.0, 1.5)];
        let data: Vec<Observation> = pts
            .iter()
            .map(|&(y, w)| Observation::for_model(vec![y, w, 0.0], &PlrMoment).unwrap())
            .collect();
        let h = NuisanceFunction::constant(vec![0.0, 0.0]);
        let theta = 0.7;
        let want: f64 = pts.iter().map(|(y, w)| (y - theta * w) * w).sum::<f64>() / 4.0;
        let got = empirical_moment(&PlrMoment, &data, &[theta], &h).unwrap()[0];
        assert!((got - want).abs() < 1e-15);
    }

    #[test]
    fn mean_moment_converges_in_one_step() {
        let data = mean_data(&[1.0, 2.0, 3.0]);
        let r = solve_z(&MeanMoment, &data, &zero(), &SolverSettings::default()).unwrap();
        assert_eq!(r.theta_hat.as_slice(), &[2.0]);
        assert_eq!(r.trace.iterations, 1);
        assert!(r.trace.converged);
    }

    #[test]
    fn plr_oracle_zero_nuisance_is_least_squares_slope() {
        let pts = [(1.0, 0.5), (2.0, -1.0), (0.3, 2.0), (-1.0, 1.5), (0.2, 0.1)];
        let data: Vec<Observation> = pts
            .iter()
            .map(|&(y, w)| Observation::for_model(vec![y, w, 0.0], &PlrMoment).unwrap())
            .collect();
        let h = NuisanceFunction::constant(vec![0.0, 0.0]);
        let r = solve_z(&PlrMoment, &data, &h, &SolverSettings::default()).unwrap();
        let sxy: f64 = pts.iter().map(|(y, w)| y * w).sum();
        let sxx: f64 = pts.iter().map(|(_, w)| w * w).sum();
        assert!((r.theta_hat[0] - sxy / sxx).abs() < 1e-10);
    }

    #[test]
    fn zero_residualized_regressor_is_singular() {
        let data: Vec<Observation> = (0..5)
            .map(|i| Observation::for_model(vec![i as f64, 2.0, 0.0], &PlrMoment).unwrap())
            .collect();
        let h = NuisanceFunction::constant(vec![0.0, 2.0]);
        assert!(matches!(
            solve_z(&PlrMoment, &data, &h, &SolverSettings::default()),
            Err(Error::SingularJacobian { .. })
        ));
    }

    #[test]
    fn iteration_budget_exhaustion_reports_best_iterate() {
        let data = mean_data(&[1.0, 2.0, 3.0]);
        let settings = SolverSettings {
            max_iter: 0,
            ..SolverSettings::default()
        };
        match solve_z(&MeanMoment, &data, &zero(), &settings) {
            Err(Error::NoConvergence { theta, iterations, .. }) => {
                assert_eq!(theta, vec![0.0]);
                assert_eq!(iterations, 0);
            }
            other => panic!("{other:?}"),
        }
    }

    /// A moment with a root only reachable by damped steps: m = atan(θ - 3).
    #[derive(Debug)]
    struct Arctan;
    impl MomentModel for Arctan {
        fn name(&self) -> &str {
            "atan"
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
        fn x_indices(&self, _: usize) -> Vec<usize> {
            vec![]
        }
        fn nuisance_targets(&self) -> Vec<crate::firststage::Target> {
            vec![crate::firststage::Target::Column(0)]
        }
        fn moment(&self, _: &[f64], t: &[f64], _: &[f64]) -> Vec<f64> {
            vec![(t[0] - 3.0).atan()]
        }
        fn grad_theta(&self, _: &[f64], t: &[f64], _: &[f64]) -> Matrix {
            Matrix::new(1, 1, vec![1.0 / (1.0 + (t[0] - 3.0).powi(2))]).unwrap()
        }
        fn grad_gamma(&self, _: &[f64], _: &[f64], _: &[f64]) -> Matrix {
            Matrix::zeros(1, 1)
        }
        fn hessian_gamma(&self, _: &[f64], _: &[f64], _: &[f64]) -> Vec<Matrix> {
            vec![Matrix::zeros(1, 1)]
        }
    }

    #[test]
    fn step_halving_rescues_overshooting_newton() {
        // undamped Newton diverges for atan from |θ - root| > 1.39
        let data = mean_data(&[0.0]);
        let r = solve_z(&Arctan, &data, &zero(), &SolverSettings::default()).unwrap();
        assert!((r.theta_hat[0] - 3.0).abs() < 1e-10);
        assert!(r.trace.halvings > 0);
        assert!(r.trace.residual_norm <= 1e-10);
    }

    #[test]
    fn mean_inference_is_textbook() {
        let ys = [1.0, 2.0, 3.0, 7.0, -2.0];
        let data = mean_data(&ys);
        let r = solve_z(&MeanMoment, &data, &zero(), &SolverSettings::default()).unwrap();
        let r = infer(&MeanMoment, &data, r, &zero(), 0.05).unwrap();
        let inf = r.inference.as_ref().unwrap();
        let n = ys.len() as f64;
        let m = mean(&ys);
        // plug-in variance (divisor n), as in V = (1/n) Σ m m'
        let var = ys.iter().map(|y| (y - m) * (y - m)).sum::<f64>() / n;
        assert!((r.theta_hat[0] - m).abs() < 1e-12);
        assert_eq!(inf.j_hat.as_slice(), &[-1.0]);
        assert!((inf.v_hat[(0, 0)] - var).abs() < 1e-12);
        assert!((inf.sigma_hat[(0, 0)] - var).abs() < 1e-12);
        assert!((inf.std_errors[0] - (var / n).sqrt()).abs() < 1e-12);
        assert!((inf.z_critical - 1.959964).abs() < 5e-7);
        assert!(inf.ci_lower[0] <= r.theta_hat[0] && r.theta_hat[0] <= inf.ci_upper[0]);
    }

    #[test]
    fn symmetric_data_inference() {
        let ys: Vec<f64> = (0..10).map(|i| if i % 2 == 0 { -1.0 } else { 1.0 }).collect();
        let data = mean_data(&ys);
        let r = solve_z(&MeanMoment, &data, &zero(), &SolverSettings::default()).unwrap();
        let r = infer(&MeanMoment, &data, r, &zero(), 0.05).unwrap();
        let inf = r.inference.unwrap();
        assert_eq!(r.theta_hat[0], 0.0);
        assert_eq!(inf.v_hat[(0, 0)], 1.0);
        assert!((inf.std_errors[0] - 1.0 / 10f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn bad_alpha_rejected() {
        let data = mean_data(&[1.0, 2.0]);
        let r = solve_z(&MeanMoment, &data, &zero(), &SolverSettings::default()).unwrap();
        assert!(infer(&MeanMoment, &data, r, &zero(), 1.0).is_err());
    }

    #[test]
    fn two_stage_oracle_matches_true_residual_slope() {
        let dgp: Arc<dyn Dgp> = Arc::new(PlrDgp::default());
        let mut rng = RngStream::new(8, 0, "data").rng();
        let data = sample_observations(dgp.as_ref(), &PlrMoment, &mut rng, 500).unwrap();
        let plan = SplitPlan::new(0.5, 3);
        let out = two_stage(
            &PlrMoment,
            &data,
            &LearnerChoice::Oracle,
            Some(&dgp),
            &plan,
            &SolverSettings::default(),
            0.05,
        )
        .unwrap();
        let pdgp = PlrDgp::default();
        let (mut num, mut den) = (0.0, 0.0);
        for &i in &out.main_indices {
            let z = &data[i].z;
            let x = z[2];
            let v = z[1] - pdgp.m0(x);
            let u = z[0] - (pdgp.m0(x) + pdgp.g0(x));
            num += u * v;
            den += v * v;
        }
        assert!((out.estimate.theta_hat[0] - num / den).abs() < 1e-10);
    }

    #[test]
    fn two_stage_keeps_splits_disjoint_and_is_deterministic() {
        let dgp: Arc<dyn Dgp> = Arc::new(PlrDgp::default());
        let mut rng = RngStream::new(9, 0, "data").rng();
        let data = sample_observations(dgp.as_ref(), &PlrMoment, &mut rng, 400).unwrap();
        let learner = LearnerChoice::fitted(LearnerKind::fast_kernel());
        let plan = SplitPlan::new(0.5, 4);
        let run = || two_stage(&PlrMoment, &data, &learner, None, &plan, &SolverSettings::default(), 0.05).unwrap();
        let a = run();
        let b = run();
        assert!(a.aux_indices.iter().all(|i| !a.main_indices.contains(i)));
        assert_eq!(a.provenance.n_train, a.aux_indices.len());
        assert_eq!(a.estimate, b.estimate);
        assert_eq!(a.provenance, b.provenance);
    }

    #[test]
    fn nuisance_free_model_uses_every_row() {
        let data = mean_data(&[1.0, 2.0, 3.0]);
        let learner = LearnerChoice::fitted(LearnerKind::fast_kernel());
        let plan = SplitPlan::new(0.5, 1);
        let out = two_stage(&MeanMoment, &data, &learner, None, &plan, &SolverSettings::default(), 0.05).unwrap();
        assert!(out.aux_indices.is_empty());
        assert_eq!(out.estimate.theta_hat.as_slice(), &[2.0]);
        let se = out.estimate.inference.unwrap().std_errors[0];
        assert!((se - (2.0f64 / 3.0 / 3.0).sqrt()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn mean_estimator_is_translation_equivariant(
            ys in prop::collection::vec(-100.0f64..100.0, 2..50),
            c in -1e3f64..1e3,
        ) {
            let fit = |ys: &[f64]| {
                let data = mean_data(ys);
                let r = solve_z(&MeanMoment, &data, &zero(), &SolverSettings::default()).unwrap();
                infer(&MeanMoment, &data, r, &zero(), 0.05).unwrap()
            };
            let a = fit(&ys);
            let shifted: Vec<f64> = ys.iter().map(|y| y + c).collect();
            let b = fit(&shifted);
            prop_assert!((b.theta_hat[0] - a.theta_hat[0] - c).abs() < 1e-9 * (1.0 + c.abs()));
            let (sa, sb) = (a.inference.unwrap().std_errors[0], b.inference.unwrap().std_errors[0]);
            prop_assert!((sa - sb).abs() < 1e-9 * (1.0 + sa));
            prop_assert!((a.theta_hat[0] - mean(&ys)).abs() < 1e-9);
            let _ = sample_sd(&ys);
        }
    }
}
