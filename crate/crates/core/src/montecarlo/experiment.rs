//! The replication engine.
//!
//! A replication is identified by `(n, rep)`: it draws `n` observations from
//! `RngStream(master, rep, "data")` (so smaller samples are prefixes of
//! larger ones), splits them with a seed from `RngStream(master, rep,
//! "split/{n}")` and evaluates every (moment, learner) cell on that split.
//! Rows are emitted sorted by `(moment, learner, n, rep)` whatever the
//! worker count.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{check_e_bound, decompose_plugged, identity_residual, ProofDecomposition};
use crate::error::{Error, Result};
use crate::firststage::{LearnerChoice, LearnerKind, NuisanceFunction, Target};
use crate::moments::{
    estimate_bounds, eval_grad_theta, model_by_name, Interval, MomentModel, Observation, SharedModel,
};
use crate::numerics::linalg::norm2;
use crate::numerics::{Matrix, RngStream};
use crate::secondstage::{
    infer_plugged, solve_z_plugged, split_indices, EstimateResult, PluggedSample, SolverSettings, SplitPlan,
};

use super::dgp::{dgp_by_name, nuisance_truth, Dgp};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedLearner {
    pub name: String,
    pub choice: LearnerChoice,
}

impl NamedLearner {
    pub fn new(name: impl Into<String>, choice: LearnerChoice) -> Self {
        NamedLearner {
            name: name.into(),
            choice,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dgp: String,
    pub theta0: f64,
    pub moments: Vec<String>,
    /// Slope used by the naive PLR moment's partial residual; defaults to `theta0`.
    pub naive_reference_slope: Option<f64>,
    pub learners: Vec<NamedLearner>,
    pub n_grid: Vec<usize>,
    pub aux_fraction: f64,
    pub replications: usize,
    pub master_seed: u64,
    pub alpha: f64,
    pub solver: SolverSettings,
    /// Random probes per replication for the `λ*` estimate.
    pub bound_probes: usize,
    /// Oracle draws for the population `J⁻¹`.
    pub population_draws: usize,
}

impl Default for ExperimentConfig {
    /// The shipped experiment: PLR design, orthogonal and naive moments,
    /// fast, slow and oracle first stages.
    fn default() -> Self {
        ExperimentConfig {
            dgp: "plr".into(),
            theta0: 1.0,
            moments: vec!["plr".into(), "plr-naive".into()],
            naive_reference_slope: None,
            learners: vec![
                NamedLearner::new("fast", LearnerChoice::fitted(LearnerKind::fast_kernel())),
                NamedLearner::new("slow", LearnerChoice::fitted(LearnerKind::slow_kernel())),
                NamedLearner::new("oracle", LearnerChoice::Oracle),
            ],
            n_grid: vec![500, 1000, 2000, 4000, 8000],
            aux_fraction: 0.5,
            replications: 1000,
            master_seed: 20_240_601,
            alpha: 0.05,
            solver: SolverSettings::default(),
            bound_probes: 200,
            population_draws: 1_000_000,
        }
    }
}

impl ExperimentConfig {
    /// Every problem found, not just the first.
    pub fn validate(&self) -> std::result::Result<(), Vec<String>> {
        let mut errs = Vec::new();
        if dgp_by_name(&self.dgp, self.theta0).is_none() {
            errs.push(format!("unknown dgp '{}'", self.dgp));
        }
        if !self.theta0.is_finite() {
            errs.push("theta0 must be finite".into());
        }
        if self.moments.is_empty() {
            errs.push("at least one moment model is required".into());
        }
        for m in &self.moments {
            if model_by_name(m, 0.0).is_none() {
                errs.push(format!("unknown moment model '{m}'"));
            }
        }
        if has_duplicates(&self.moments) {
            errs.push("moment models must be distinct".into());
        }
        if self.learners.is_empty() {
            errs.push("at least one learner is required".into());
        }
        let names: Vec<String> = self.learners.iter().map(|l| l.name.clone()).collect();
        if has_duplicates(&names) {
            errs.push("learner names must be distinct".into());
        }
        if names.iter().any(|n| n.is_empty() || n.contains(',')) {
            errs.push("learner names must be non-empty and contain no commas".into());
        }
        if self.n_grid.is_empty() {
            errs.push("n grid must not be empty".into());
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            errs.push("n grid must be strictly increasing".into());
        }
        if !(self.aux_fraction > 0.0 && self.aux_fraction < 1.0) {
            errs.push("aux_fraction must lie in (0, 1)".into());
        }
        if let Some(&n) = self.n_grid.first() {
            let aux = (self.aux_fraction * n as f64).round() as usize;
            if n < 4 || aux == 0 || aux >= n {
                errs.push(format!("smallest n = {n} leaves an empty split"));
            }
        }
        if self.replications < 1 {
            errs.push("replications must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            errs.push("alpha must lie in (0, 1)".into());
        }
        if !(self.solver.tol > 0.0) {
            errs.push("solver tolerance must be positive".into());
        }
        if self.bound_probes < 1 {
            errs.push("bound_probes must be at least 1".into());
        }
        if self.population_draws < 1000 {
            errs.push("population_draws must be at least 1000".into());
        }
        if self.naive_reference_slope.is_some_and(|s| !s.is_finite()) {
            errs.push("naive reference slope must be finite".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }
}

fn has_duplicates(items: &[String]) -> bool {
    items.iter().enumerate().any(|(i, a)| items[..i].contains(a))
}

/// One replication of one (moment, learner) cell. Vector quantities are
/// reported for the first coordinate of `θ`; `D_abs` and `E_abs` are norms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub dgp: String,
    pub moment: String,
    pub learner: String,
    pub n: usize,
    pub rep: u64,
    pub theta_hat: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub covered: bool,
    #[serde(rename = "D_abs")]
    pub d_abs: f64,
    #[serde(rename = "E_abs")]
    pub e_abs: f64,
    #[serde(rename = "E_bound")]
    pub e_bound: f64,
    #[serde(rename = "E_bound_pass")]
    pub e_bound_pass: bool,
    pub converged: bool,
    pub theta0: f64,
    #[serde(rename = "A_dev")]
    pub a_dev: f64,
    #[serde(rename = "C")]
    pub c: f64,
    /// Largest relative violation of `B = C + D + E`.
    #[serde(rename = "BCDE_residual")]
    pub identity_residual: f64,
}

/// Indices into the config's moment and learner lists.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CellRef {
    pub moment: usize,
    pub learner: usize,
}

/// Resolved designs, models and population quantities for a config.
#[derive(Debug)]
pub struct ExperimentContext {
    pub config: ExperimentConfig,
    pub dgp: Arc<dyn Dgp>,
    pub models: Vec<SharedModel>,
    pub truths: Vec<NuisanceFunction>,
    /// Population `J⁻¹` per model, `None` when singular.
    pub j_inv: Vec<Option<Matrix>>,
}

impl ExperimentContext {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config
            .validate()
            .map_err(|errs| Error::contract(errs.join("; ")))?;
        let dgp = dgp_by_name(&config.dgp, config.theta0).expect("validated");
        let slope = config.naive_reference_slope.unwrap_or(config.theta0);
        let models: Vec<SharedModel> = config
            .moments
            .iter()
            .map(|m| model_by_name(m, slope).expect("validated"))
            .collect();
        let truths = models
            .iter()
            .map(|m| nuisance_truth(&dgp, m.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        let j_inv = models
            .iter()
            .zip(&truths)
            .map(|(m, h0)| population_j_inverse(m.as_ref(), &dgp, h0, config.population_draws, config.master_seed))
            .collect::<Result<Vec<_>>>()?;
        Ok(ExperimentContext {
            config: config.clone(),
            dgp,
            models,
            truths,
            j_inv,
        })
    }

    pub fn cells(&self) -> Vec<CellRef> {
        (0..self.models.len())
            .flat_map(|moment| (0..self.config.learners.len()).map(move |learner| CellRef { moment, learner }))
            .collect()
    }

    fn sample(&self, n: usize, rep: u64) -> Vec<Vec<f64>> {
        let mut rng = RngStream::new(self.config.master_seed, rep, "data").rng();
        self.dgp.sample(&mut rng, n)
    }

    fn split(&self, n: usize, rep: u64) -> Result<(Vec<usize>, Vec<usize>)> {
        let seed = RngStream::new(self.config.master_seed, rep, format!("split/{n}"))
            .rng()
            .random::<u64>();
        split_indices(n, &SplitPlan::new(self.config.aux_fraction, seed))
    }
}

/// `[E ∇θ m(Z, θ0, h0(X))]⁻¹` by oracle Monte Carlo; `None` if singular.
pub fn population_j_inverse(
    model: &dyn MomentModel,
    dgp: &Arc<dyn Dgp>,
    h0: &NuisanceFunction,
    draws: usize,
    seed: u64,
) -> Result<Option<Matrix>> {
    let d = model.theta_dim();
    let mut acc = Matrix::zeros(d, d);
    let mut rng = RngStream::new(seed, 0, format!("population/{}", model.name())).rng();
    let mut left = draws;
    while left > 0 {
        let block = left.min(65_536);
        for z in dgp.sample(&mut rng, block) {
            let obs = Observation::for_model(z, model)?;
            acc.add_scaled(&eval_grad_theta(model, &obs, dgp.theta0(), &h0.predict(&obs.x))?, 1.0);
        }
        left -= block;
    }
    Ok(acc.scale(1.0 / draws as f64).inverse().ok())
}

struct SplitData {
    aux: Vec<Vec<f64>>,
    main: Vec<Vec<f64>>,
}

fn observations(zs: &[Vec<f64>], model: &dyn MomentModel) -> Result<Vec<Observation>> {
    zs.iter().map(|z| Observation::for_model(z.clone(), model)).collect()
}

/// Predictions on the main split for each model in `models`, from one fit of
/// `learner` on the union of their targets per distinct `x` layout.
fn shared_predictions(
    ctx: &ExperimentContext,
    learner: &LearnerChoice,
    models: &[usize],
    data: &SplitData,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let z_len = data.aux.first().map_or(0, Vec::len);
    let mut out: Vec<Option<Vec<Vec<f64>>>> = vec![None; models.len()];
    for (slot, &mi) in models.iter().enumerate() {
        if out[slot].is_some() {
            continue;
        }
        let layout = ctx.models[mi].x_indices(z_len);
        let group: Vec<usize> = (slot..models.len())
            .filter(|&s| out[s].is_none() && ctx.models[models[s]].x_indices(z_len) == layout)
            .collect();
        let mut union: Vec<Target> = Vec::new();
        for &s in &group {
            for t in ctx.models[models[s]].nuisance_targets() {
                if !union.contains(&t) {
                    union.push(t);
                }
            }
        }
        let lead = ctx.models[mi].as_ref();
        let aux = observations(&data.aux, lead)?;
        let main = observations(&data.main, lead)?;
        let h = learner.train_targets(union.clone(), lead, Some(&ctx.dgp), &aux)?;
        let values = h.predict_all(&main);
        for &s in &group {
            let coords: Vec<usize> = ctx.models[models[s]]
                .nuisance_targets()
                .iter()
                .map(|t| union.iter().position(|u| u == t).expect("in union"))
                .collect();
            out[s] = Some(
                values
                    .iter()
                    .map(|v| coords.iter().map(|&c| v[c]).collect())
                    .collect(),
            );
        }
    }
    Ok(out.into_iter().map(|v| v.expect("filled")).collect())
}

fn evaluate_cell(
    ctx: &ExperimentContext,
    cell: CellRef,
    n: usize,
    rep: u64,
    main_z: &[Vec<f64>],
    gamma_hat: Vec<Vec<f64>>,
) -> Result<ReplicationRow> {
    let cfg = &ctx.config;
    let model = ctx.models[cell.moment].as_ref();
    let learner = &cfg.learners[cell.learner].name;
    let theta0 = ctx.dgp.theta0();
    let main = observations(main_z, model)?;
    let gamma0 = ctx.truths[cell.moment].predict_all(&main);

    let sample = PluggedSample::from_values(&main, gamma_hat)?;
    let estimate: Option<EstimateResult> = match solve_z_plugged(model, &sample, &cfg.solver)
        .and_then(|r| infer_plugged(model, &sample, r, cfg.alpha))
    {
        Ok(r) => Some(r),
        Err(e) if e.is_solver_failure() => None,
        Err(e) => return Err(e),
    };

    let gamma_box: Vec<Interval> = (0..model.nuisance_dim())
        .map(|j| {
            Interval::hull(sample.gamma().iter().chain(&gamma0).map(|g| g[j])).expect("main split is non-empty")
        })
        .collect();
    let theta_box: Vec<Interval> = theta0.iter().map(|&t| Interval::point(t)).collect();
    let mut rng = RngStream::new(cfg.master_seed, rep, format!("bounds/{}/{learner}/{n}", model.name())).rng();
    let lambda_star = estimate_bounds(model, &main, &theta_box, &gamma_box, cfg.bound_probes, &mut rng)?.lambda_hat;

    let theta_hat = estimate.as_ref().map(|r| r.theta_hat.as_slice());
    let mut dec: ProofDecomposition =
        decompose_plugged(model, &main, theta0, theta_hat, sample.gamma(), &gamma0, lambda_star)?;
    if let Some(j) = &ctx.j_inv[cell.moment] {
        dec = dec.with_target(j.clone());
    }
    let bound = check_e_bound(&dec);

    let (theta_hat, se, ci_lo, ci_hi) = match &estimate {
        Some(r) => {
            let inf = r.inference.as_ref().expect("inferred");
            (r.theta_hat[0], inf.std_errors[0], inf.ci_lower[0], inf.ci_upper[0])
        }
        None => (f64::NAN, f64::NAN, f64::NAN, f64::NAN),
    };
    Ok(ReplicationRow {
        dgp: cfg.dgp.clone(),
        moment: model.name().to_string(),
        learner: learner.clone(),
        n,
        rep,
        theta_hat,
        se,
        ci_lo,
        ci_hi,
        covered: estimate.is_some() && ci_lo <= theta0[0] && theta0[0] <= ci_hi,
        d_abs: norm2(&dec.d),
        e_abs: norm2(&dec.e),
        e_bound: dec.e_bound,
        e_bound_pass: bound.pass,
        converged: estimate.is_some(),
        theta0: theta0[0],
        a_dev: dec.a_dev(),
        c: dec.c[0],
        identity_residual: identity_residual(&dec),
    })
}

fn split_data(ctx: &ExperimentContext, n: usize, rep: u64) -> Result<SplitData> {
    let zs = ctx.sample(n, rep);
    let (aux, main) = ctx.split(n, rep)?;
    Ok(SplitData {
        aux: aux.iter().map(|&i| zs[i].clone()).collect(),
        main: main.iter().map(|&i| zs[i].clone()).collect(),
    })
}

/// Evaluates a single cell at `(n, rep)` with its own first-stage fit.
pub fn run_replication(ctx: &ExperimentContext, cell: CellRef, n: usize, rep: u64) -> Result<ReplicationRow> {
    let data = split_data(ctx, n, rep)?;
    let model = ctx.models[cell.moment].as_ref();
    let aux = observations(&data.aux, model)?;
    let main = observations(&data.main, model)?;
    let h = ctx.config.learners[cell.learner]
        .choice
        .train(model, Some(&ctx.dgp), &aux)?;
    evaluate_cell(ctx, cell, n, rep, &data.main, h.predict_all(&main))
}

/// All requested cells at `(n, rep)`, fitting each learner once.
fn run_task(ctx: &ExperimentContext, cells: &[CellRef], n: usize, rep: u64) -> Result<Vec<ReplicationRow>> {
    let data = split_data(ctx, n, rep)?;
    let mut rows = Vec::with_capacity(cells.len());
    let mut learners: Vec<usize> = cells.iter().map(|c| c.learner).collect();
    learners.sort_unstable();
    learners.dedup();
    let mut by_cell: Vec<Option<ReplicationRow>> = vec![None; cells.len()];
    for li in learners {
        let slots: Vec<usize> = (0..cells.len()).filter(|&s| cells[s].learner == li).collect();
        let models: Vec<usize> = slots.iter().map(|&s| cells[s].moment).collect();
        let preds = shared_predictions(ctx, &ctx.config.learners[li].choice, &models, &data)?;
        for (&s, gamma_hat) in slots.iter().zip(preds) {
            by_cell[s] = Some(evaluate_cell(ctx, cells[s], n, rep, &data.main, gamma_hat)?);
        }
    }
    rows.extend(by_cell.into_iter().map(|r| r.expect("evaluated")));
    Ok(rows)
}

/// Runs `cells` over the config's grid and replications.
///
/// `workers = None` uses every available core; results do not depend on it.
pub fn run_cells(config: &ExperimentConfig, cells: &[CellRef], workers: Option<usize>) -> Result<Vec<ReplicationRow>> {
    let ctx = ExperimentContext::new(config)?;
    run_cells_in(&ctx, cells, workers)
}

fn run_cells_in(ctx: &ExperimentContext, cells: &[CellRef], workers: Option<usize>) -> Result<Vec<ReplicationRow>> {
    let reps = ctx.config.replications as u64;
    let tasks: Vec<(usize, u64)> = (0..ctx.config.n_grid.len())
        .flat_map(|ni| (0..reps).map(move |r| (ni, r)))
        .collect();
    let run = |&(ni, rep): &(usize, u64)| run_task(ctx, cells, ctx.config.n_grid[ni], rep);
    let per_task: Vec<Vec<ReplicationRow>> = execute(&tasks, run, workers)?;

    // reorder to (cell, n, rep)
    let n_len = ctx.config.n_grid.len();
    let r_len = reps as usize;
    let mut slots: Vec<Option<ReplicationRow>> = vec![None; cells.len() * n_len * r_len];
    for ((ni, rep), rows) in tasks.iter().zip(per_task) {
        for (ci, row) in rows.into_iter().enumerate() {
            slots[(ci * n_len + ni) * r_len + *rep as usize] = Some(row);
        }
    }
    Ok(slots.into_iter().map(|r| r.expect("every task ran")).collect())
}

#[cfg(feature = "parallel")]
fn execute<T, F>(tasks: &[(usize, u64)], run: F, workers: Option<usize>) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&(usize, u64)) -> Result<T> + Sync + Send,
{
    use rayon::prelude::*;
    if workers == Some(1) {
        return tasks.iter().map(run).collect();
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Unsupported(format!("cannot start worker pool: {e}")))?;
    pool.install(|| tasks.par_iter().map(&run).collect())
}

#[cfg(not(feature = "parallel"))]
fn execute<T, F>(tasks: &[(usize, u64)], run: F, _workers: Option<usize>) -> Result<Vec<T>>
where
    F: Fn(&(usize, u64)) -> Result<T>,
{
    tasks.iter().map(run).collect()
}

/// Every cell of the config, rows sorted by `(moment, learner, n, rep)`.
pub fn run_experiment(config: &ExperimentConfig, workers: Option<usize>) -> Result<Vec<ReplicationRow>> {
    let ctx = ExperimentContext::new(config)?;
    let cells = ctx.cells();
    run_cells_in(&ctx, &cells, workers)
}
