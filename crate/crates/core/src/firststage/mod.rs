//! Nonparametric first stage: learners that produce a [`NuisanceFunction`].

mod learners;
mod rate;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::{MomentModel, Observation};
use crate::montecarlo::{nuisance_truth, Dgp};
use crate::numerics::rng::fnv1a;
use crate::numerics::sample_sd;

use learners::{KernelFit, KnnFit, SeriesFit};
pub use rate::{mse_against_truth, rate_certificate, MseReport, RateCertificate, RateRow};

/// Bandwidth multiplier of the rate-optimal ("fast") kernel learner.
pub const FAST_BANDWIDTH_SCALE: f64 = 1.06;
/// Bandwidth multiplier of the oversmoothed ("slow") kernel learner.
pub const SLOW_BANDWIDTH_SCALE: f64 = 2.5;
/// Default clip: `max|target| + CLIP_SDS · sd(target)` per coordinate.
pub const CLIP_SDS: f64 = 10.0;

/// The quantity whose conditional mean given `X` a nuisance coordinate estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Target {
    /// `z[i]`
    Column(usize),
    /// `z[outcome] − slope · z[regressor]`
    PartialResidual {
        outcome: usize,
        regressor: usize,
        slope: f64,
    },
}

impl Target {
    pub fn eval(&self, z: &[f64]) -> Result<f64> {
        let col = |i: usize| {
            z.get(i)
                .copied()
                .ok_or_else(|| Error::contract(format!("target column {i} out of range")))
        };
        match *self {
            Target::Column(i) => col(i),
            Target::PartialResidual {
                outcome,
                regressor,
                slope,
            } => Ok(col(outcome)? - slope * col(regressor)?),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bandwidth {
    Fixed(f64),
    /// `scale · sd(x_j) · n^(−exponent)`, exponent defaulting to `1/(4 + dim x)`.
    Rule { scale: f64, exponent: Option<f64> },
}

impl Bandwidth {
    pub fn silverman(scale: f64) -> Self {
        Bandwidth::Rule { scale, exponent: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LearnerKind {
    /// Nadaraya–Watson with a product Gaussian kernel.
    Kernel { bandwidth: Bandwidth },
    Knn { k: usize },
    /// Additive polynomial series with ridge penalty on the non-intercept terms.
    Series { degree: usize, ridge: f64 },
    /// Ignores the data and predicts `value` in every coordinate.
    Constant { value: f64 },
}

impl LearnerKind {
    pub fn fast_kernel() -> Self {
        LearnerKind::Kernel {
            bandwidth: Bandwidth::silverman(FAST_BANDWIDTH_SCALE),
        }
    }

    pub fn slow_kernel() -> Self {
        LearnerKind::Kernel {
            bandwidth: Bandwidth::silverman(SLOW_BANDWIDTH_SCALE),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LearnerKind::Kernel {
                bandwidth: Bandwidth::Fixed(h),
            } if !(*h > 0.0 && h.is_finite()) => Err(Error::contract("kernel bandwidth must be positive")),
            LearnerKind::Kernel {
                bandwidth: Bandwidth::Rule { scale, exponent },
            } if !(*scale > 0.0) || exponent.is_some_and(|e| !e.is_finite()) => {
                Err(Error::contract("kernel bandwidth scale must be positive"))
            }
            LearnerKind::Knn { k: 0 } => Err(Error::contract("knn needs k >= 1")),
            LearnerKind::Series { ridge, .. } if !(*ridge >= 0.0) => {
                Err(Error::contract("series ridge penalty must be non-negative"))
            }
            LearnerKind::Constant { value } if !value.is_finite() => {
                Err(Error::contract("constant learner value must be finite"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClipSpec {
    #[default]
    Auto,
    Fixed(f64),
    None,
}

/// A learner together with what it regresses on `X`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerSpec {
    pub kind: LearnerKind,
    pub targets: Vec<Target>,
    #[serde(default)]
    pub clip: ClipSpec,
}

impl LearnerSpec {
    pub fn new(kind: LearnerKind, targets: Vec<Target>) -> Self {
        LearnerSpec {
            kind,
            targets,
            clip: ClipSpec::Auto,
        }
    }

    pub fn for_model(kind: LearnerKind, model: &dyn MomentModel) -> Self {
        Self::new(kind, model.nuisance_targets())
    }

    pub fn with_clip(mut self, clip: ClipSpec) -> Self {
        self.clip = clip;
        self
    }
}

/// First-stage choice in experiments: a fitted learner or the known truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LearnerChoice {
    Fitted { kind: LearnerKind, clip: ClipSpec },
    Oracle,
}

impl LearnerChoice {
    pub fn fitted(kind: LearnerKind) -> Self {
        LearnerChoice::Fitted {
            kind,
            clip: ClipSpec::Auto,
        }
    }

    /// Trains on `aux`. The oracle needs the design that generated the data.
    pub fn train(
        &self,
        model: &dyn MomentModel,
        dgp: Option<&Arc<dyn Dgp>>,
        aux: &[Observation],
    ) -> Result<NuisanceFunction> {
        self.train_targets(model.nuisance_targets(), model, dgp, aux)
    }

    pub(crate) fn train_targets(
        &self,
        targets: Vec<Target>,
        model: &dyn MomentModel,
        dgp: Option<&Arc<dyn Dgp>>,
        aux: &[Observation],
    ) -> Result<NuisanceFunction> {
        match self {
            LearnerChoice::Fitted { kind, clip } => fit(
                &LearnerSpec {
                    kind: kind.clone(),
                    targets,
                    clip: clip.clone(),
                },
                aux,
            ),
            LearnerChoice::Oracle => {
                let dgp = dgp.ok_or_else(|| Error::contract("the oracle learner needs a known design"))?;
                if targets == model.nuisance_targets() {
                    nuisance_truth(dgp, model)
                } else {
                    oracle_for_targets(dgp, targets)
                }
            }
        }
    }
}

fn oracle_for_targets(dgp: &Arc<dyn Dgp>, targets: Vec<Target>) -> Result<NuisanceFunction> {
    let dgp = Arc::clone(dgp);
    let dim = targets.len();
    Ok(NuisanceFunction::exact(format!("truth[{}]", dgp.name()), dim, move |x| {
        targets
            .iter()
            .map(|t| dgp.conditional_mean(t, x).unwrap_or(f64::NAN))
            .collect()
    }))
}

/// Where a nuisance function came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub learner: String,
    pub hyperparameters: String,
    pub n_train: usize,
    /// FNV-1a of the training `x` and target values, hex.
    pub fingerprint: String,
    /// Queries where every kernel weight underflowed and 1-NN was used instead.
    pub nn_fallbacks: u64,
}

pub(crate) enum Predictor {
    Kernel(KernelFit),
    Knn(KnnFit),
    Series(SeriesFit),
    Constant(Vec<f64>),
    Exact(Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>),
}

impl Predictor {
    fn predict(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        match self {
            Predictor::Kernel(k) => k.predict(x, out),
            Predictor::Knn(k) => k.predict(x, out),
            Predictor::Series(s) => s.predict(x, out),
            Predictor::Constant(c) => out.extend_from_slice(c),
            Predictor::Exact(f) => out.extend(f(x)),
        }
    }
}

/// A fitted map `x ↦ ĥ(x) ∈ ℝ^ℓ`, immutable and cheap to clone.
#[derive(Clone)]
pub struct NuisanceFunction {
    predictor: Arc<Predictor>,
    fallbacks: Arc<AtomicU64>,
    dim: usize,
    clip: Option<Vec<f64>>,
    select: Option<Vec<usize>>,
    offset: Option<Vec<f64>>,
    provenance: Provenance,
}

impl fmt::Debug for NuisanceFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NuisanceFunction")
            .field("dim", &self.dim())
            .field("clip", &self.clip)
            .field("provenance", &self.provenance)
            .finish()
    }
}

impl NuisanceFunction {
    fn from_predictor(predictor: Predictor, dim: usize, clip: Option<Vec<f64>>, provenance: Provenance) -> Self {
        let fallbacks = match &predictor {
            Predictor::Kernel(k) => Arc::clone(&k.fallbacks),
            _ => Arc::new(AtomicU64::new(0)),
        };
        NuisanceFunction {
            predictor: Arc::new(predictor),
            fallbacks,
            dim,
            clip,
            select: None,
            offset: None,
            provenance,
        }
    }

    /// Wraps a known closed-form function (no clipping).
    pub fn exact<F>(name: impl Into<String>, dim: usize, f: F) -> Self
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        let provenance = Provenance {
            learner: name.into(),
            hyperparameters: String::new(),
            n_train: 0,
            fingerprint: String::new(),
            nn_fallbacks: 0,
        };
        Self::from_predictor(Predictor::Exact(Box::new(f)), dim, None, provenance)
    }

    pub fn constant(values: Vec<f64>) -> Self {
        let provenance = Provenance {
            learner: "constant".into(),
            hyperparameters: format!("value={values:?}"),
            n_train: 0,
            fingerprint: String::new(),
            nn_fallbacks: 0,
        };
        let dim = values.len();
        Self::from_predictor(Predictor::Constant(values), dim, None, provenance)
    }

    /// Output dimension `ℓ`.
    pub fn dim(&self) -> usize {
        self.select.as_ref().map_or(self.dim, Vec::len)
    }

    /// Largest per-coordinate clip bound, if clipping is active.
    pub fn clip_bound(&self) -> Option<f64> {
        self.clip.as_ref().map(|c| match &self.select {
            Some(sel) => sel.iter().map(|&i| c[i]).fold(0.0, f64::max),
            None => c.iter().copied().fold(0.0, f64::max),
        })
    }

    pub fn provenance(&self) -> Provenance {
        Provenance {
            nn_fallbacks: self.fallbacks.load(Ordering::Relaxed),
            ..self.provenance.clone()
        }
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let mut raw = Vec::with_capacity(self.dim);
        self.predictor.predict(x, &mut raw);
        if let Some(c) = &self.clip {
            for (v, &bound) in raw.iter_mut().zip(c) {
                *v = v.clamp(-bound, bound);
            }
        }
        let mut out = match &self.select {
            Some(sel) => sel.iter().map(|&i| raw[i]).collect(),
            None => raw,
        };
        if let Some(off) = &self.offset {
            for (v, o) in out.iter_mut().zip(off) {
                *v += o;
            }
        }
        out
    }

    pub fn predict_all(&self, obs: &[Observation]) -> Vec<Vec<f64>> {
        obs.iter().map(|o| self.predict(&o.x)).collect()
    }

    /// Keeps only the listed output coordinates.
    pub fn select(mut self, coords: Vec<usize>) -> Self {
        let base: Vec<usize> = match &self.select {
            Some(sel) => coords.iter().map(|&i| sel[i]).collect(),
            None => coords,
        };
        assert!(base.iter().all(|&i| i < self.dim), "selected coordinate out of range");
        assert!(self.offset.is_none(), "select after offset");
        self.select = Some(base);
        self
    }

    /// Adds a fixed displacement to every prediction (for perturbation studies).
    pub fn offset(mut self, delta: Vec<f64>) -> Self {
        assert_eq!(delta.len(), self.dim(), "offset dimension");
        self.offset = Some(match self.offset.take() {
            Some(prev) => prev.iter().zip(&delta).map(|(a, b)| a + b).collect(),
            None => delta,
        });
        self.provenance.learner = format!("{}+offset", self.provenance.learner);
        self
    }
}

fn fingerprint(xs: &[Vec<f64>], targets: &[Vec<f64>]) -> String {
    let mut bytes = Vec::with_capacity(xs.len() * 16);
    for (x, t) in xs.iter().zip(targets) {
        for v in x.iter().chain(t) {
            bytes.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    format!("{:016x}", fnv1a(&bytes))
}

/// Fits `spec` on the auxiliary sample.
///
/// Each output coordinate `j` regresses `targets[j](Z)` on `X`; clipping is
/// applied coordinatewise to `[−C_j, C_j]`.
pub fn fit(spec: &LearnerSpec, aux: &[Observation]) -> Result<NuisanceFunction> {
    if aux.is_empty() {
        return Err(Error::contract("cannot fit a learner on an empty auxiliary sample"));
    }
    if spec.targets.is_empty() {
        return Err(Error::contract("learner has no targets"));
    }
    spec.kind.validate()?;
    let dim = spec.targets.len();
    let xs: Vec<Vec<f64>> = aux.iter().map(|o| o.x.clone()).collect();
    let ys: Vec<Vec<f64>> = aux
        .iter()
        .map(|o| spec.targets.iter().map(|t| t.eval(&o.z)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    if let Some(dx) = xs.first().map(Vec::len) {
        if xs.iter().any(|x| x.len() != dx) {
            return Err(Error::contract("auxiliary observations have differing x dimensions"));
        }
    }

    let clip = match spec.clip {
        ClipSpec::None => None,
        ClipSpec::Fixed(c) if !(c > 0.0) => return Err(Error::contract("clip bound must be positive")),
        ClipSpec::Fixed(c) => Some(vec![c; dim]),
        ClipSpec::Auto => Some(
            (0..dim)
                .map(|j| {
                    let col: Vec<f64> = ys.iter().map(|y| y[j]).collect();
                    let max_abs = col.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    max_abs + CLIP_SDS * sample_sd(&col)
                })
                .collect(),
        ),
    };

    let (predictor, name, hyper) = match &spec.kind {
        LearnerKind::Kernel { bandwidth } => {
            let k = KernelFit::new(&xs, &ys, bandwidth)?;
            let hyper = format!("bandwidth={:?}", k.bandwidths());
            (Predictor::Kernel(k), "kernel", hyper)
        }
        LearnerKind::Knn { k } => {
            if *k > aux.len() {
                return Err(Error::contract(format!("knn with k={k} but only {} training points", aux.len())));
            }
            (Predictor::Knn(KnnFit::new(&xs, &ys, *k)?), "knn", format!("k={k}"))
        }
        LearnerKind::Series { degree, ridge } => (
            Predictor::Series(SeriesFit::new(&xs, &ys, *degree, *ridge)?),
            "series",
            format!("degree={degree},ridge={ridge}"),
        ),
        LearnerKind::Constant { value } => (Predictor::Constant(vec![*value; dim]), "constant", format!("value={value}")),
    };
    let provenance = Provenance {
        learner: name.into(),
        hyperparameters: hyper,
        n_train: aux.len(),
        fingerprint: fingerprint(&xs, &ys),
        nn_fallbacks: 0,
    };
    Ok(NuisanceFunction::from_predictor(predictor, dim, clip, provenance))
}
