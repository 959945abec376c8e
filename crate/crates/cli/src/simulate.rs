//! `simulate` and `report`.

use std::fs::File;
use std::path::Path;
use std::time::Instant;

use anyhow::Context;
use ortho_core::montecarlo::{
    aggregate, read_results_csv, render_report, run_experiment, write_aggregate_csv, write_results_csv,
};

use crate::{load_config, write_file, CmdResult, Failure};

pub fn simulate(config: &Path, workers: Option<usize>, out_dir: Option<&Path>) -> CmdResult {
    let cfg = load_config(config)?;
    let mut paths = cfg.output.clone();
    if let Some(dir) = out_dir {
        paths.dir = dir.to_path_buf();
    }
    let exp = &cfg.experiment;
    eprintln!(
        "simulating {} moments × {} learners × {} sizes × {} replications",
        exp.moments.len(),
        exp.learners.len(),
        exp.n_grid.len(),
        exp.replications
    );
    let started = Instant::now();
    let rows = run_experiment(exp, workers).map_err(|e| Failure::Input(e.into()))?;
    let aggs = aggregate(&rows);

    let mut buf = Vec::new();
    write_results_csv(&rows, &mut buf).context("encoding results")?;
    write_file(&paths.results(), &buf)?;
    let mut buf = Vec::new();
    write_aggregate_csv(&aggs, &mut buf).context("encoding aggregates")?;
    write_file(&paths.aggregate(), &buf)?;
    let report = render_report(&aggs);
    write_file(&paths.report(), report.as_bytes())?;

    println!("{report}");
    eprintln!(
        "{} rows in {:.1}s; wrote {}, {}, {}",
        rows.len(),
        started.elapsed().as_secs_f64(),
        paths.results().display(),
        paths.aggregate().display(),
        paths.report().display()
    );
    Ok(())
}

pub fn report(results: &Path, out: &Path, aggregate_out: Option<&Path>) -> CmdResult {
    let file = File::open(results).with_context(|| format!("opening {}", results.display()))?;
    let rows = read_results_csv(file).with_context(|| format!("reading {}", results.display()))?;
    let aggs = aggregate(&rows);
    let report = render_report(&aggs);
    write_file(out, report.as_bytes())?;
    if let Some(path) = aggregate_out {
        let mut buf = Vec::new();
        write_aggregate_csv(&aggs, &mut buf).context("encoding aggregates")?;
        write_file(path, &buf)?;
    }
    println!("{report}");
    Ok(())
}
