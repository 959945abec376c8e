//! Browser demo: three interactive operations exported through wasm-bindgen.
//!
//! Each export takes plain numbers and strings and returns a JSON document;
//! the page in `www/` draws it on a canvas.

use std::sync::Arc;

use ortho_core::diagnostics::decompose;
use ortho_core::firststage::Bandwidth;
use ortho_core::moments::{model_by_name, PlrMoment};
use ortho_core::montecarlo::{
    aggregate, nuisance_truth, run_cells, sample_observations, CellRef, Dgp, ExperimentConfig, NamedLearner, PlrDgp,
};
use ortho_core::secondstage::{infer, solve_z, split, SolverSettings, SplitPlan};
use ortho_core::{LearnerChoice, LearnerKind, MomentModel, RngStream};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const CURVE_POINTS: usize = 101;
const MAX_N: usize = 20_000;
const MAX_REPS: usize = 2_000;

fn learner(name: &str, scale: f64) -> Result<LearnerChoice, String> {
    match name {
        "kernel" if scale > 0.0 && scale.is_finite() => Ok(LearnerChoice::fitted(LearnerKind::Kernel {
            bandwidth: Bandwidth::silverman(scale),
        })),
        "kernel" => Err("bandwidth scale must be positive".into()),
        "knn" => Ok(LearnerChoice::fitted(LearnerKind::Knn {
            k: scale.round().max(1.0) as usize,
        })),
        "series" => Ok(LearnerChoice::fitted(LearnerKind::Series {
            degree: scale.round().clamp(1.0, 12.0) as usize,
            ridge: 1e-6,
        })),
        "oracle" => Ok(LearnerChoice::Oracle),
        other => Err(format!("unknown learner '{other}'")),
    }
}

fn check_n(n: usize, lo: usize) -> Result<(), String> {
    if (lo..=MAX_N).contains(&n) {
        Ok(())
    } else {
        Err(format!("n must lie in [{lo}, {MAX_N}]"))
    }
}

fn json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Curve {
    x: Vec<f64>,
    truth: Vec<[f64; 2]>,
    fitted: Vec<[f64; 2]>,
    sample: Vec<[f64; 3]>,
    hyperparameters: String,
}

/// First-stage fit of `(E[Y|X], E[W|X])` on `n` draws from the PLR design.
pub fn fit_curve_json(n: usize, learner_name: &str, scale: f64, seed: u64) -> Result<String, String> {
    check_n(n, 10)?;
    let dgp: Arc<dyn Dgp> = Arc::new(PlrDgp::default());
    let mut rng = RngStream::new(seed, 0, "demo/curve").rng();
    let obs = sample_observations(dgp.as_ref(), &PlrMoment, &mut rng, n).map_err(|e| e.to_string())?;
    let choice = learner(learner_name, scale)?;
    let h = choice.train(&PlrMoment, Some(&dgp), &obs).map_err(|e| e.to_string())?;
    let h0 = nuisance_truth(&dgp, &PlrMoment).map_err(|e| e.to_string())?;
    let x: Vec<f64> = (0..CURVE_POINTS)
        .map(|i| -1.0 + 2.0 * i as f64 / (CURVE_POINTS - 1) as f64)
        .collect();
    let pair = |v: Vec<f64>| [v[0], v[1]];
    json(&Curve {
        truth: x.iter().map(|&v| pair(h0.predict(&[v]))).collect(),
        fitted: x.iter().map(|&v| pair(h.predict(&[v]))).collect(),
        sample: obs.iter().take(2_000).map(|o| [o.z[2], o.z[0], o.z[1]]).collect(),
        hyperparameters: h.provenance().hyperparameters,
        x,
    })
}

#[derive(Serialize)]
struct Histogram {
    standardized: Vec<f64>,
    coverage: f64,
    bias: f64,
    sd: f64,
    mean_d_abs: f64,
    ks_stat: Option<f64>,
    excluded: usize,
}

/// Replicates one (moment, learner) cell and returns `(θ̂ − θ0)/se` draws.
pub fn simulate_histogram_json(
    n: usize,
    replications: usize,
    moment: &str,
    learner_name: &str,
    scale: f64,
    seed: u64,
) -> Result<String, String> {
    check_n(n, 20)?;
    if !(1..=MAX_REPS).contains(&replications) {
        return Err(format!("replications must lie in [1, {MAX_REPS}]"));
    }
    let config = ExperimentConfig {
        moments: vec![moment.to_string()],
        learners: vec![NamedLearner::new(learner_name, learner(learner_name, scale)?)],
        n_grid: vec![n],
        replications,
        master_seed: seed,
        population_draws: 20_000,
        bound_probes: 50,
        ..ExperimentConfig::default()
    };
    let rows = run_cells(&config, &[CellRef { moment: 0, learner: 0 }], Some(1)).map_err(|e| e.to_string())?;
    let agg = aggregate(&rows).remove(0);
    json(&Histogram {
        standardized: rows
            .iter()
            .filter(|r| r.converged)
            .map(|r| (r.theta_hat - r.theta0) / r.se)
            .collect(),
        coverage: agg.coverage,
        bias: agg.bias,
        sd: agg.sd,
        mean_d_abs: agg.mean_d_abs,
        ks_stat: agg.ks_stat,
        excluded: agg.excluded,
    })
}

#[derive(Serialize)]
struct Terms {
    moment: String,
    theta_hat: f64,
    se: f64,
    b: f64,
    c: f64,
    d: f64,
    e: f64,
    e_bound: f64,
}

/// One split of one sample: the realized `B = C + D + E` terms for both moments.
pub fn proof_terms_json(n: usize, learner_name: &str, scale: f64, seed: u64) -> Result<String, String> {
    check_n(n, 20)?;
    let dgp: Arc<dyn Dgp> = Arc::new(PlrDgp::default());
    let choice = learner(learner_name, scale)?;
    let mut out = Vec::new();
    for name in ["plr", "plr-naive"] {
        let model = model_by_name(name, 1.0).expect("built-in");
        let m: &dyn MomentModel = model.as_ref();
        let mut rng = RngStream::new(seed, 0, "demo/terms").rng();
        let obs = sample_observations(dgp.as_ref(), m, &mut rng, n).map_err(|e| e.to_string())?;
        let (aux, main) = split(&obs, &SplitPlan::new(0.5, seed)).map_err(|e| e.to_string())?;
        let h = choice.train(m, Some(&dgp), &aux).map_err(|e| e.to_string())?;
        let h0 = nuisance_truth(&dgp, m).map_err(|e| e.to_string())?;
        let est = solve_z(m, &main, &h, &SolverSettings::default())
            .and_then(|r| infer(m, &main, r, &h, 0.05))
            .map_err(|e| e.to_string())?;
        // [[0, 1], [1, −2θ]] at θ0 = 1 has spectral radius 1 + √2
        let lambda = if m.gamma_linear() { 0.0 } else { 1.0 + 2f64.sqrt() };
        let dec = decompose(m, &main, &[1.0], None, &h, &h0, lambda).map_err(|e| e.to_string())?;
        out.push(Terms {
            moment: name.into(),
            theta_hat: est.theta_hat[0],
            se: est.inference.as_ref().map_or(f64::NAN, |i| i.std_errors[0]),
            b: dec.b[0],
            c: dec.c[0],
            d: dec.d[0],
            e: dec.e[0],
            e_bound: dec.e_bound,
        });
    }
    json(&out)
}

#[wasm_bindgen]
pub fn fit_curve(n: usize, learner: &str, scale: f64, seed: u64) -> Result<String, JsValue> {
    fit_curve_json(n, learner, scale, seed).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn simulate_histogram(
    n: usize,
    replications: usize,
    moment: &str,
    learner: &str,
    scale: f64,
    seed: u64,
) -> Result<String, JsValue> {
    simulate_histogram_json(n, replications, moment, learner, scale, seed).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn proof_terms(n: usize, learner: &str, scale: f64, seed: u64) -> Result<String, JsValue> {
    proof_terms_json(n, learner, scale, seed).map_err(|e| JsValue::from_str(&e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn curve_has_matching_lengths() {
        let v: Value = serde_json::from_str(&fit_curve_json(300, "kernel", 1.06, 1).unwrap()).unwrap();
        assert_eq!(v["x"].as_array().unwrap().len(), CURVE_POINTS);
        assert_eq!(v["fitted"].as_array().unwrap().len(), CURVE_POINTS);
        assert_eq!(v["sample"].as_array().unwrap().len(), 300);
    }

    #[test]
    fn oracle_curve_is_the_truth() {
        let v: Value = serde_json::from_str(&fit_curve_json(50, "oracle", 1.0, 1).unwrap()).unwrap();
        assert_eq!(v["fitted"], v["truth"]);
    }

    #[test]
    fn histogram_counts_replications() {
        let v: Value = serde_json::from_str(&simulate_histogram_json(200, 12, "plr", "kernel", 1.06, 3).unwrap()).unwrap();
        assert_eq!(v["standardized"].as_array().unwrap().len() + v["excluded"].as_u64().unwrap() as usize, 12);
        assert!(v["ks_stat"].is_null());
    }

    #[test]
    fn terms_add_up() {
        let v: Value = serde_json::from_str(&proof_terms_json(400, "kernel", 1.06, 9).unwrap()).unwrap();
        for t in v.as_array().unwrap() {
            let f = |k: &str| t[k].as_f64().unwrap();
            assert!((f("b") - f("c") - f("d") - f("e")).abs() < 1e-10);
            assert!(f("e").abs() <= f("e_bound") + 1e-12);
        }
        assert_eq!(v[1]["e"].as_f64().unwrap(), 0.0);
    }

    #[test]
    fn bad_inputs_are_errors() {
        assert!(fit_curve_json(5, "kernel", 1.0, 1).is_err());
        assert!(fit_curve_json(100, "forest", 1.0, 1).is_err());
        assert!(fit_curve_json(100, "kernel", -1.0, 1).is_err());
        assert!(simulate_histogram_json(100, 0, "plr", "kernel", 1.0, 1).is_err());
        assert!(simulate_histogram_json(100, 5, "nope", "kernel", 1.0, 1).is_err());
    }
}
