//! `check`: derivative, orthogonality, bound and rate diagnostics.

use std::path::Path;
use std::sync::Arc;

use anyhow::anyhow;
use ortho_core::firststage::{rate_certificate, Bandwidth};
use ortho_core::moments::{
    check_conditional_orthogonality, derivative_check, estimate_bounds, model_by_name, orthogonality_score, Interval,
};
use ortho_core::montecarlo::{dgp_by_name, nuisance_truth, sample_observations, Dgp};
use ortho_core::{LearnerChoice, LearnerKind, RngStream};

use crate::{load_config, CmdResult, Failure};

/// What a check is expected to conclude; `None` is informational.
struct Outcome {
    label: String,
    pass: bool,
    expected: Option<bool>,
    detail: String,
}

impl Outcome {
    fn ok(&self) -> bool {
        self.expected.is_none_or(|e| e == self.pass)
    }
}

fn rate_expectation(choice: &LearnerChoice) -> Option<bool> {
    match choice {
        LearnerChoice::Oracle => Some(true),
        LearnerChoice::Fitted {
            kind: LearnerKind::Kernel {
                bandwidth: Bandwidth::Rule { exponent: None, .. },
            },
            ..
        } => Some(true),
        LearnerChoice::Fitted {
            kind: LearnerKind::Constant { .. },
            ..
        } => Some(false),
        LearnerChoice::Fitted { .. } => None,
    }
}

fn expectation_word(e: Option<bool>) -> &'static str {
    match e {
        Some(true) => "expected pass",
        Some(false) => "expected fail",
        None => "informational",
    }
}

pub fn run(config: &Path) -> CmdResult {
    let cfg = load_config(config)?;
    let exp = &cfg.experiment;
    let chk = &cfg.check;
    let dgp: Arc<dyn Dgp> = dgp_by_name(&exp.dgp, exp.theta0).ok_or_else(|| anyhow!("unknown dgp"))?;
    let slope = exp.naive_reference_slope.unwrap_or(exp.theta0);
    let seed = exp.master_seed;
    let mut outcomes = Vec::new();
    let fail = |e: ortho_core::Error| Failure::Input(e.into());

    for name in &exp.moments {
        let model = model_by_name(name, slope).ok_or_else(|| anyhow!("unknown moment '{name}'"))?;
        let m = model.as_ref();

        let mut rng = RngStream::new(seed, 0, format!("check/derivatives/{name}")).rng();
        let d = derivative_check(m, chk.derivative_points, &mut rng).map_err(fail)?;
        outcomes.push(Outcome {
            label: format!("{name}: analytic derivatives"),
            pass: d.pass,
            expected: Some(true),
            detail: format!(
                "{} points, rel err θ {:.2e}, γ {:.2e}, Hessian {:.2e}",
                d.points, d.max_rel_err_theta, d.max_rel_err_gamma, d.max_err_hessian
            ),
        });

        let stream = RngStream::new(seed, 0, format!("check/conditional/{name}"));
        let grid = dgp.x_grid(chk.grid_points);
        let r = check_conditional_orthogonality(m, &dgp, dgp.theta0(), &grid, chk.draws_per_point, &stream)
            .map_err(fail)?;
        outcomes.push(Outcome {
            label: format!("{name}: conditional orthogonality"),
            pass: r.orthogonal,
            expected: Some(m.conditionally_orthogonal()),
            detail: format!(
                "max |mean|/se {:.2} over {} grid points × {} draws",
                r.max_standardized,
                grid.len(),
                chk.draws_per_point
            ),
        });

        let h0 = nuisance_truth(&dgp, m).map_err(fail)?;
        let mut rng = RngStream::new(seed, 0, format!("check/sample/{name}")).rng();
        let sample = sample_observations(dgp.as_ref(), m, &mut rng, chk.score_sample).map_err(fail)?;
        let s = orthogonality_score(m, dgp.theta0(), &h0, &h0, &sample).map_err(fail)?;
        outcomes.push(Outcome {
            label: format!("{name}: orthogonality score at the truth"),
            pass: s.score.iter().all(|&v| v == 0.0),
            expected: Some(true),
            detail: format!("score {:?}", s.score),
        });

        let theta_box: Vec<Interval> = dgp.theta0().iter().map(|t| Interval::new(t - 1.0, t + 1.0)).collect();
        let g0 = h0.predict_all(&sample);
        let gamma_box: Vec<Interval> = (0..m.nuisance_dim())
            .map(|j| {
                let h = Interval::hull(g0.iter().map(|g| g[j])).expect("non-empty sample");
                Interval::new(h.lo - 1.0, h.hi + 1.0)
            })
            .collect();
        let mut rng = RngStream::new(seed, 0, format!("check/bounds/{name}")).rng();
        let b = estimate_bounds(m, &sample, &theta_box, &gamma_box, chk.bound_probes, &mut rng).map_err(fail)?;
        let declared = m.declared_lambda();
        outcomes.push(Outcome {
            label: format!("{name}: second-derivative bound"),
            pass: declared.is_none_or(|l| b.lambda_hat <= l + 1e-9),
            expected: declared.map(|_| true),
            detail: format!(
                "σ̂ {:.4}, λ̂ {:.4}{}",
                b.sigma_hat,
                b.lambda_hat,
                declared.map_or_else(String::new, |l| format!(" (declared λ {l})"))
            ),
        });

        if !m.uses_nuisance() {
            continue;
        }
        for l in &exp.learners {
            let c = rate_certificate(&l.choice, m, &dgp, &chk.rate_grid, chk.rate_replications, seed).map_err(fail)?;
            let trail: Vec<String> = c
                .rows
                .iter()
                .map(|r| format!("n={} √n·mse={:.4}", r.n, r.mean_scaled))
                .collect();
            outcomes.push(Outcome {
                label: format!("{name}: first-stage rate of '{}'", l.name),
                pass: c.rate_ok,
                expected: rate_expectation(&l.choice),
                detail: trail.join(", "),
            });
        }
    }

    let mut all_ok = true;
    for o in &outcomes {
        all_ok &= o.ok();
        println!(
            "[{}] {} ({}{}): {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.label,
            expectation_word(o.expected),
            if o.ok() { "" } else { ", UNEXPECTED" },
            o.detail
        );
    }
    println!("overall: {}", if all_ok { "PASS" } else { "FAIL" });
    if all_ok {
        Ok(())
    } else {
        Err(Failure::Estimation(anyhow!("some checks did not match their expected outcome")))
    }
}
