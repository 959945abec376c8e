//! `estimate` on user data.

use std::fs::File;
use std::path::Path;

use anyhow::{anyhow, bail, Context};
use ortho_core::moments::model_by_name;
use ortho_core::secondstage::{two_stage, SplitPlan};
use ortho_core::{MomentModel, Observation};
use serde_json::json;

use crate::config::DataSpec;
use crate::{load_config, write_file, CmdResult, Failure};

/// Reads the mapped columns as `z = (y, [w,] x…)`.
pub fn read_data(path: &Path, spec: &DataSpec, model: &dyn MomentModel) -> anyhow::Result<Vec<Observation>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut reader = csv::Reader::from_reader(file);
    let headers = reader.headers().with_context(|| format!("reading header of {}", path.display()))?.clone();
    let mut names: Vec<&str> = vec![spec.y.as_str()];
    names.extend(spec.w.as_deref());
    names.extend(spec.x.iter().map(String::as_str));
    let cols: Vec<usize> = names
        .iter()
        .map(|n| {
            headers
                .iter()
                .position(|h| h == *n)
                .ok_or_else(|| anyhow!("column '{n}' not found in {}", path.display()))
        })
        .collect::<anyhow::Result<_>>()?;
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.with_context(|| format!("row {row}: malformed record"))?;
        let z = cols
            .iter()
            .zip(&names)
            .map(|(&c, name)| {
                let cell = record.get(c).unwrap_or("").trim();
                match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(anyhow!("row {row}, column '{name}': '{cell}' is not a finite number")),
                }
            })
            .collect::<anyhow::Result<Vec<f64>>>()?;
        out.push(Observation::for_model(z, model).with_context(|| format!("row {row}"))?);
    }
    if out.len() < 2 {
        bail!("{} has {} data rows; at least 2 required", path.display(), out.len());
    }
    Ok(out)
}

pub fn run(data: &Path, config: &Path, out: Option<&Path>) -> CmdResult {
    let cfg = load_config(config)?;
    let spec = cfg
        .data
        .clone()
        .ok_or_else(|| anyhow!("{} has no [data] section mapping columns", config.display()))?;
    let exp = &cfg.experiment;
    let slope = exp.naive_reference_slope.unwrap_or(exp.theta0);
    let model = model_by_name(&spec.moment, slope).ok_or_else(|| anyhow!("unknown moment model '{}'", spec.moment))?;
    let needs_w = model.z_dim_min() >= 3;
    match (&spec.w, needs_w) {
        (None, true) => return Err(anyhow!("[data]: moment '{}' needs a 'w' column mapping", spec.moment).into()),
        (Some(_), false) => {
            return Err(anyhow!("[data]: moment '{}' takes no 'w' column", spec.moment).into())
        }
        _ => {}
    }
    let learner = &exp
        .learners
        .iter()
        .find(|l| l.name == spec.learner)
        .ok_or_else(|| anyhow!("no learner named '{}'", spec.learner))?
        .choice;
    let obs = read_data(data, &spec, model.as_ref())?;
    let plan = SplitPlan::new(exp.aux_fraction, spec.seed);
    let out_res = two_stage(model.as_ref(), &obs, learner, None, &plan, &exp.solver, exp.alpha);
    let res = match out_res {
        Ok(r) => r,
        Err(e) if e.is_solver_failure() => return Err(Failure::Estimation(e.into())),
        Err(e) => return Err(Failure::Input(e.into())),
    };
    let est = &res.estimate;
    let inf = est.inference.as_ref().expect("two_stage infers");
    let summary = json!({
        "moment": spec.moment,
        "learner": spec.learner,
        "n": obs.len(),
        "n_aux": res.aux_indices.len(),
        "n_main": res.main_indices.len(),
        "theta_hat": est.theta_hat.as_slice(),
        "std_errors": inf.std_errors,
        "ci_lower": inf.ci_lower,
        "ci_upper": inf.ci_upper,
        "alpha": inf.alpha,
        "sigma_hat": inf.sigma_hat,
        "newton": est.trace,
        "provenance": res.provenance,
    });
    println!("moment   {} (learner {})", spec.moment, spec.learner);
    println!(
        "samples  {} total, {} auxiliary, {} main",
        obs.len(),
        res.aux_indices.len(),
        res.main_indices.len()
    );
    for k in 0..est.theta_hat.len() {
        println!(
            "theta[{k}] {:.6}  se {:.6}  {:.0}% CI [{:.6}, {:.6}]",
            est.theta_hat[k],
            inf.std_errors[k],
            100.0 * (1.0 - inf.alpha),
            inf.ci_lower[k],
            inf.ci_upper[k]
        );
    }
    println!(
        "newton   {} iterations, {} halvings, residual {:.3e}",
        est.trace.iterations, est.trace.halvings, est.trace.residual_norm
    );
    println!(
        "learner  {} {} trained on {} rows, fingerprint {}",
        res.provenance.learner, res.provenance.hyperparameters, res.provenance.n_train, res.provenance.fingerprint
    );
    let text = serde_json::to_string_pretty(&summary).context("encoding summary")?;
    match out {
        Some(path) => write_file(path, text.as_bytes())?,
        None => println!("{text}"),
    }
    Ok(())
}
