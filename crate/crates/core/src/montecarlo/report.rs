//! Verdicts over an aggregate table and the text report.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::aggregate::{rate_slope, AggregateRow};

/// Sample size at which coverage and normality are judged, when on the grid.
pub const VERDICT_N: usize = 4000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    /// `None` when the table lacks the cells the verdict needs.
    pub pass: Option<bool>,
    pub detail: String,
}

impl Verdict {
    fn new(name: &str, pass: Option<bool>, detail: String) -> Self {
        Verdict {
            name: name.into(),
            pass,
            detail,
        }
    }

    fn missing(name: &str, what: &str) -> Self {
        Self::new(name, None, format!("not evaluated: no {what} cells"))
    }

    pub fn label(&self) -> &'static str {
        match self.pass {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "SKIP",
        }
    }
}

fn cells<'a>(aggs: &'a [AggregateRow], moment: &str, learner: &str) -> Vec<&'a AggregateRow> {
    aggs.iter()
        .filter(|a| a.moment == moment && a.learner == learner)
        .collect()
}

fn at_verdict_n<'a>(cells: &[&'a AggregateRow]) -> Option<&'a AggregateRow> {
    cells
        .iter()
        .find(|a| a.n == VERDICT_N)
        .or_else(|| cells.iter().max_by_key(|a| a.n))
        .copied()
}

fn ends<'a>(cells: &[&'a AggregateRow]) -> Option<(&'a AggregateRow, &'a AggregateRow)> {
    let lo = cells.iter().min_by_key(|a| a.n)?;
    let hi = cells.iter().max_by_key(|a| a.n)?;
    (lo.n < hi.n).then_some((*lo, *hi))
}

/// Monte Carlo verdicts for the orthogonal (`plr`) and naive (`plr-naive`)
/// moments under the `fast` and `slow` learners.
pub fn verdicts(aggs: &[AggregateRow]) -> Vec<Verdict> {
    let mut out = Vec::new();

    let plr: Vec<&AggregateRow> = aggs.iter().filter(|a| a.moment == "plr").collect();
    out.push(if plr.is_empty() {
        Verdict::missing("E bound", "plr")
    } else {
        let worst = plr.iter().map(|a| a.e_bound_pass_rate).fold(1.0, f64::min);
        Verdict::new("E bound", Some(worst == 1.0), format!("lowest pass rate {worst}"))
    });

    let fast = cells(aggs, "plr", "fast");
    match at_verdict_n(&fast) {
        None => {
            out.push(Verdict::missing("coverage", "plr/fast"));
            out.push(Verdict::missing("normality", "plr/fast"));
        }
        Some(a) => {
            let ok = (0.92..=0.975).contains(&a.coverage);
            out.push(Verdict::new(
                "coverage",
                Some(ok),
                format!("plr/fast n={}: coverage {:.4} (want [0.92, 0.975])", a.n, a.coverage),
            ));
            out.push(match (a.ks_stat, a.ks_pass) {
                (Some(ks), Some(p)) => Verdict::new("normality", Some(p), format!("plr/fast n={}: KS {ks:.4}", a.n)),
                _ => Verdict::new("normality", None, "not evaluated: fewer than 200 converged rows".into()),
            });
        }
    }

    out.push(match rate_slope(aggs, "plr", "fast") {
        Ok(s) => Verdict::new(
            "root-n rate",
            Some((-0.6..=-0.4).contains(&s.slope)),
            format!("slope {:.4} ± {:.4} (want [−0.6, −0.4])", s.slope, s.std_error),
        ),
        Err(_) => Verdict::missing("root-n rate", "three or more plr/fast"),
    });

    out.push(match ends(&fast) {
        Some((lo, hi)) => {
            let ok = hi.mean_d_abs < lo.mean_d_abs && hi.mean_e_abs < lo.mean_e_abs && hi.mean_a_dev < lo.mean_a_dev;
            Verdict::new(
                "proof-term decay",
                Some(ok),
                format!(
                    "n={}→{}: |D| {:.4}→{:.4}, |E| {:.4}→{:.4}, A_dev {:.4}→{:.4}",
                    lo.n, hi.n, lo.mean_d_abs, hi.mean_d_abs, lo.mean_e_abs, hi.mean_e_abs, lo.mean_a_dev, hi.mean_a_dev
                ),
            )
        }
        None => Verdict::missing("proof-term decay", "two or more plr/fast"),
    });

    let naive_slow = cells(aggs, "plr-naive", "slow");
    let plr_slow = cells(aggs, "plr", "slow");
    out.push(match (at_verdict_n(&naive_slow), ends(&naive_slow), at_verdict_n(&plr_slow)) {
        (Some(ns), Some((lo, hi)), Some(ps)) => {
            let ok = ns.coverage < 0.90 && hi.mean_d_abs >= lo.mean_d_abs && ps.coverage >= 0.92;
            Verdict::new(
                "orthogonality matters",
                Some(ok),
                format!(
                    "naive/slow n={}: coverage {:.4}, |D| {:.4}→{:.4}; plr/slow coverage {:.4}",
                    ns.n, ns.coverage, lo.mean_d_abs, hi.mean_d_abs, ps.coverage
                ),
            )
        }
        _ => Verdict::missing("orthogonality matters", "plr-naive/slow and plr/slow"),
    });
    out
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

/// Markdown table of the aggregates followed by the verdict list.
pub fn render_report(aggs: &[AggregateRow]) -> String {
    let mut s = String::new();
    s.push_str("| moment | learner | n | conv | excl | bias | sd | rmse | √n·rmse | coverage | ±se | |D| | |E| | A_dev | sd C | E ok | KS | normal |\n");
    s.push_str("|---|---|---:|---:|---:|---:|---:|---:|---:|---:|---:|---:|---:|---:|---:|---:|---:|---|\n");
    for a in aggs {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {:.4} | {:.4} | {:.4} | {:.3} | {:.3} | {:.3} | {:.4} | {:.4} | {:.4} | {:.4} | {:.3} | {} | {} |",
            a.moment,
            a.learner,
            a.n,
            a.converged,
            a.excluded,
            a.bias,
            a.sd,
            a.rmse,
            a.sqrt_n_rmse,
            a.coverage,
            a.coverage_se,
            a.mean_d_abs,
            a.mean_e_abs,
            a.mean_a_dev,
            a.sd_c,
            a.e_bound_pass_rate,
            opt(a.ks_stat),
            match a.ks_pass {
                Some(true) => "yes",
                Some(false) => "no",
                None => "-",
            }
        );
    }
    s.push_str("\nVerdicts:\n");
    for v in verdicts(aggs) {
        let _ = writeln!(s, "  [{}] {}: {}", v.label(), v.name, v.detail);
    }
    s
}
