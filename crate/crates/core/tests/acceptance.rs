//! End-to-end acceptance suite.
//!
//! Runs the full default experiment (R = 1000 over n = 500..8000) twice, so
//! expect several minutes per run on one core. Every criterion prints one
//! `PASS`/`FAIL` line; the test fails if any line is `FAIL`.

use std::sync::Arc;
use std::time::{Duration, Instant};

use ortho_core::diagnostics::ks_threshold;
use ortho_core::moments::{
    check_conditional_orthogonality, derivative_check, orthogonality_score, MeanMoment, PlrMoment, BUILTIN_MODELS,
};
use ortho_core::montecarlo::{
    aggregate, dgp_by_name, nuisance_truth, rate_slope, run_experiment, sample_observations, write_aggregate_csv,
    write_results_csv, AggregateRow, Dgp, ExperimentConfig, ReplicationRow,
};
use ortho_core::secondstage::{solve_z, SolverSettings};
use ortho_core::{MomentModel, NuisanceFunction, Observation, RngStream};

struct Line {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn cell<'a>(aggs: &'a [AggregateRow], moment: &str, learner: &str, n: usize) -> &'a AggregateRow {
    aggs.iter()
        .find(|a| a.moment == moment && a.learner == learner && a.n == n)
        .unwrap_or_else(|| panic!("missing cell {moment}/{learner}/{n}"))
}

fn csv_bytes(rows: &[ReplicationRow]) -> (Vec<u8>, Vec<u8>) {
    let mut results = Vec::new();
    write_results_csv(rows, &mut results).unwrap();
    let mut agg = Vec::new();
    write_aggregate_csv(&aggregate(rows), &mut agg).unwrap();
    (results, agg)
}

fn derivatives() -> Line {
    let start = Instant::now();
    let mut pass = true;
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    for (i, name) in BUILTIN_MODELS.iter().enumerate() {
        let model = ortho_core::moments::model_by_name(name, 1.0).unwrap();
        let mut rng = RngStream::new(11, i as u64, "acceptance/derivatives").rng();
        let d = derivative_check(model.as_ref(), 100, &mut rng).unwrap();
        pass &= d.pass && d.max_rel_err_theta <= 1e-5 && d.max_rel_err_gamma <= 1e-5 && d.max_err_hessian <= 1e-4;
        worst = (
            worst.0.max(d.max_rel_err_theta),
            worst.1.max(d.max_rel_err_gamma),
            worst.2.max(d.max_err_hessian),
        );
    }
    let took = start.elapsed();
    Line {
        id: 1,
        name: "derivative correctness",
        pass: pass && took < Duration::from_secs(1),
        detail: format!(
            "max rel err θ {:.1e}, γ {:.1e}, Hessian {:.1e} over {} models in {took:.2?}",
            worst.0,
            worst.1,
            worst.2,
            BUILTIN_MODELS.len()
        ),
    }
}

fn oracle_equivalence() -> Line {
    let start = Instant::now();
    let dgp: Arc<dyn Dgp> = dgp_by_name("plr", 1.0).unwrap();

    let mut rng = RngStream::new(12, 0, "acceptance/mean").rng();
    let values: Vec<f64> = sample_observations(dgp.as_ref(), &PlrMoment, &mut rng, 1000)
        .unwrap()
        .iter()
        .map(|o| o.z[0])
        .collect();
    let data: Vec<Observation> = values
        .iter()
        .map(|&y| Observation::for_model(vec![y], &MeanMoment).unwrap())
        .collect();
    let fit = solve_z(&MeanMoment, &data, &NuisanceFunction::constant(vec![0.0]), &SolverSettings::default()).unwrap();
    let sample_mean = values.iter().sum::<f64>() / values.len() as f64;
    let mean_err = (fit.theta_hat[0] - sample_mean).abs();

    let mut rng = RngStream::new(12, 1, "acceptance/plr").rng();
    let obs = sample_observations(dgp.as_ref(), &PlrMoment, &mut rng, 2000).unwrap();
    let h0 = nuisance_truth(&dgp, &PlrMoment).unwrap();
    let fit = solve_z(&PlrMoment, &obs, &h0, &SolverSettings::default()).unwrap();
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for o in &obs {
        let g = h0.predict(&o.x);
        let (ry, rw) = (o.z[0] - g[0], o.z[1] - g[1]);
        sxy += ry * rw;
        sxx += rw * rw;
    }
    let closed = sxy / sxx;
    let slope_err = (fit.theta_hat[0] - closed).abs() / closed.abs().max(1.0);
    let took = start.elapsed();
    Line {
        id: 2,
        name: "oracle equivalence",
        pass: mean_err <= 1e-12 && slope_err <= 1e-10 && took < Duration::from_secs(1),
        detail: format!("mean err {mean_err:.1e}, residual-slope rel err {slope_err:.1e} in {took:.2?}"),
    }
}

fn exact_decomposition(rows: &[ReplicationRow]) -> Line {
    let worst = rows.iter().map(|r| r.identity_residual).fold(0.0, f64::max);
    let oracle_bad = rows
        .iter()
        .filter(|r| r.learner == "oracle" && (r.d_abs != 0.0 || r.e_abs != 0.0))
        .count();
    let naive_bad = rows.iter().filter(|r| r.moment == "plr-naive" && r.e_abs != 0.0).count();
    Line {
        id: 3,
        name: "exact decomposition",
        pass: worst <= 1e-10 && oracle_bad == 0 && naive_bad == 0,
        detail: format!(
            "{} replications, max relative residual {worst:.1e}, oracle rows with D or E ≠ 0: {oracle_bad}, naive rows with E ≠ 0: {naive_bad}",
            rows.len()
        ),
    }
}

fn e_bound(rows: &[ReplicationRow]) -> Line {
    let plr: Vec<&ReplicationRow> = rows.iter().filter(|r| r.moment.starts_with("plr")).collect();
    let failures = plr.iter().filter(|r| !r.e_bound_pass).count();
    Line {
        id: 4,
        name: "E bound",
        pass: !plr.is_empty() && failures == 0,
        detail: format!("{failures} of {} PLR replications exceed the bound", plr.len()),
    }
}

fn normality(aggs: &[AggregateRow]) -> Line {
    let a = cell(aggs, "plr", "fast", 4000);
    let threshold = ks_threshold(a.converged);
    let ks = a.ks_stat.unwrap_or(f64::INFINITY);
    Line {
        id: 5,
        name: "normality and coverage",
        pass: (0.92..=0.975).contains(&a.coverage) && ks < threshold && a.replications == 1000,
        detail: format!(
            "plr/fast n=4000: coverage {:.3} (want [0.92, 0.975]), KS {ks:.4} (want < {threshold:.4})",
            a.coverage
        ),
    }
}

fn root_n(aggs: &[AggregateRow]) -> Line {
    let s = rate_slope(aggs, "plr", "fast").unwrap();
    Line {
        id: 6,
        name: "root-n rate",
        pass: (-0.6..=-0.4).contains(&s.slope),
        detail: format!("log-rmse slope {:.4} ± {:.4} (want [−0.6, −0.4])", s.slope, s.std_error),
    }
}

fn decay(aggs: &[AggregateRow]) -> Line {
    let (lo, hi) = (cell(aggs, "plr", "fast", 500), cell(aggs, "plr", "fast", 8000));
    Line {
        id: 7,
        name: "proof-term decay",
        pass: hi.mean_d_abs < lo.mean_d_abs && hi.mean_e_abs < lo.mean_e_abs && hi.mean_a_dev < lo.mean_a_dev,
        detail: format!(
            "n=500→8000: |D| {:.4}→{:.4}, |E| {:.4}→{:.4}, ‖Â − J⁻¹‖ {:.4}→{:.4}",
            lo.mean_d_abs, hi.mean_d_abs, lo.mean_e_abs, hi.mean_e_abs, lo.mean_a_dev, hi.mean_a_dev
        ),
    }
}

fn orthogonality_matters(aggs: &[AggregateRow]) -> Line {
    let naive = cell(aggs, "plr-naive", "slow", 4000);
    let (d_lo, d_hi) = (
        cell(aggs, "plr-naive", "slow", 500).mean_d_abs,
        cell(aggs, "plr-naive", "slow", 8000).mean_d_abs,
    );
    let ortho = cell(aggs, "plr", "slow", 4000);
    Line {
        id: 8,
        name: "orthogonality matters",
        pass: naive.coverage < 0.90 && d_hi >= d_lo && ortho.coverage >= 0.92,
        detail: format!(
            "naive/slow n=4000 coverage {:.3}, |D| n=500→8000 {d_lo:.4}→{d_hi:.4}; plr/slow n=4000 coverage {:.3}",
            naive.coverage, ortho.coverage
        ),
    }
}

fn conditional_orthogonality() -> Line {
    let dgp: Arc<dyn Dgp> = dgp_by_name("plr", 1.0).unwrap();
    let grid = dgp.x_grid(5);
    let mut details = Vec::new();
    let mut pass = true;
    for name in ["plr", "plr-naive"] {
        let model = ortho_core::moments::model_by_name(name, 1.0).unwrap();
        let m: &dyn MomentModel = model.as_ref();
        let stream = RngStream::new(13, 0, format!("acceptance/conditional/{name}"));
        let r = check_conditional_orthogonality(m, &dgp, dgp.theta0(), &grid, 1_000_000, &stream).unwrap();
        pass &= r.orthogonal == (name == "plr");

        let h0 = nuisance_truth(&dgp, m).unwrap();
        let mut rng = RngStream::new(13, 1, format!("acceptance/score/{name}")).rng();
        let sample = sample_observations(dgp.as_ref(), m, &mut rng, 10_000).unwrap();
        let s = orthogonality_score(m, dgp.theta0(), &h0, &h0, &sample).unwrap();
        let zero = s.score.iter().all(|&v| v == 0.0);
        pass &= zero;
        details.push(format!(
            "{name}: max |t| {:.1} ({}), score at truth {}",
            r.max_standardized,
            if r.orthogonal { "orthogonal" } else { "not orthogonal" },
            if zero { "exactly 0" } else { "nonzero" }
        ));
    }
    Line {
        id: 9,
        name: "conditional orthogonality",
        pass,
        detail: details.join("; "),
    }
}

#[test]
fn acceptance_criteria() {
    let config = ExperimentConfig::default();
    assert_eq!(config.replications, 1000);

    let mut lines = vec![derivatives(), oracle_equivalence()];

    let start = Instant::now();
    let rows = run_experiment(&config, Some(4)).unwrap();
    let first = start.elapsed();
    let aggs = aggregate(&rows);
    lines.push(exact_decomposition(&rows));
    lines.push(e_bound(&rows));
    lines.push(normality(&aggs));
    lines.push(root_n(&aggs));
    lines.push(decay(&aggs));
    lines.push(orthogonality_matters(&aggs));
    lines.push(conditional_orthogonality());

    let sequential = run_experiment(&config, Some(1)).unwrap();
    let identical = csv_bytes(&rows) == csv_bytes(&sequential);
    lines.push(Line {
        id: 10,
        name: "determinism",
        pass: identical,
        detail: format!(
            "four workers vs one: {} ({} rows, first run {first:.0?})",
            if identical { "byte-identical CSVs" } else { "CSVs differ" },
            rows.len()
        ),
    });

    for l in &lines {
        println!("[{}] {:>2}. {}: {}", if l.pass { "PASS" } else { "FAIL" }, l.id, l.name, l.detail);
    }
    let failed: Vec<usize> = lines.iter().filter(|l| !l.pass).map(|l| l.id).collect();
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
