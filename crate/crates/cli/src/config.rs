//! Config file parsing. Every problem is collected before reporting.

use std::path::PathBuf;

use ortho_core::firststage::Bandwidth;
use ortho_core::montecarlo::{ExperimentConfig, NamedLearner};
use ortho_core::secondstage::SolverSettings;
use ortho_core::{ClipSpec, LearnerChoice, LearnerKind};
use toml::{Table, Value};

const TOP_LEVEL: &[&str] = &["dgp", "moments", "learners", "experiment", "output", "data", "check"];

#[derive(Clone, Debug, PartialEq)]
pub struct OutputPaths {
    pub dir: PathBuf,
    pub results: String,
    pub aggregate: String,
    pub report: String,
}

impl OutputPaths {
    pub fn results(&self) -> PathBuf {
        self.dir.join(&self.results)
    }
    pub fn aggregate(&self) -> PathBuf {
        self.dir.join(&self.aggregate)
    }
    pub fn report(&self) -> PathBuf {
        self.dir.join(&self.report)
    }
}

/// Column roles for `estimate`.
#[derive(Clone, Debug, PartialEq)]
pub struct DataSpec {
    pub y: String,
    pub w: Option<String>,
    pub x: Vec<String>,
    pub moment: String,
    pub learner: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckSpec {
    pub derivative_points: usize,
    pub grid_points: usize,
    pub draws_per_point: usize,
    pub score_sample: usize,
    pub bound_probes: usize,
    pub rate_grid: Vec<usize>,
    pub rate_replications: usize,
}

impl Default for CheckSpec {
    fn default() -> Self {
        CheckSpec {
            derivative_points: 100,
            grid_points: 5,
            draws_per_point: 1_000_000,
            score_sample: 10_000,
            bound_probes: 10_000,
            rate_grid: vec![250, 500, 1000, 2000],
            rate_replications: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub experiment: ExperimentConfig,
    pub output: OutputPaths,
    pub data: Option<DataSpec>,
    pub check: CheckSpec,
}

struct Walker {
    errs: Vec<String>,
}

impl Walker {
    fn keys(&mut self, t: &Table, section: &str, allowed: &[&str]) {
        for k in t.keys() {
            if !allowed.contains(&k.as_str()) {
                self.errs.push(format!("[{section}]: unknown key '{k}'"));
            }
        }
    }

    fn table<'a>(&mut self, t: &'a Table, key: &str) -> Option<&'a Table> {
        match t.get(key) {
            None => None,
            Some(Value::Table(inner)) => Some(inner),
            Some(_) => {
                self.errs.push(format!("'{key}' must be a table"));
                None
            }
        }
    }

    fn f64(&mut self, t: &Table, section: &str, key: &str) -> Option<f64> {
        match t.get(key)? {
            Value::Float(v) => Some(*v),
            Value::Integer(v) => Some(*v as f64),
            _ => {
                self.errs.push(format!("[{section}] {key}: expected a number"));
                None
            }
        }
    }

    fn u64(&mut self, t: &Table, section: &str, key: &str) -> Option<u64> {
        match t.get(key)? {
            Value::Integer(v) if *v >= 0 => Some(*v as u64),
            _ => {
                self.errs.push(format!("[{section}] {key}: expected a non-negative integer"));
                None
            }
        }
    }

    fn usize(&mut self, t: &Table, section: &str, key: &str) -> Option<usize> {
        self.u64(t, section, key).map(|v| v as usize)
    }

    fn string(&mut self, t: &Table, section: &str, key: &str) -> Option<String> {
        match t.get(key)? {
            Value::String(s) => Some(s.clone()),
            _ => {
                self.errs.push(format!("[{section}] {key}: expected a string"));
                None
            }
        }
    }

    fn strings(&mut self, t: &Table, section: &str, key: &str) -> Option<Vec<String>> {
        match t.get(key)? {
            Value::Array(items) if items.iter().all(Value::is_str) => {
                Some(items.iter().map(|v| v.as_str().unwrap_or_default().to_string()).collect())
            }
            _ => {
                self.errs.push(format!("[{section}] {key}: expected a list of strings"));
                None
            }
        }
    }

    fn usizes(&mut self, t: &Table, section: &str, key: &str) -> Option<Vec<usize>> {
        match t.get(key)? {
            Value::Array(items) if items.iter().all(|v| v.as_integer().is_some_and(|i| i >= 0)) => {
                Some(items.iter().map(|v| v.as_integer().unwrap_or_default() as usize).collect())
            }
            _ => {
                self.errs.push(format!("[{section}] {key}: expected a list of non-negative integers"));
                None
            }
        }
    }
}

fn learner(w: &mut Walker, name: &str, t: &Table) -> Option<LearnerChoice> {
    let section = format!("learners.{name}");
    let kind = w.string(t, &section, "kind");
    let allowed: &[&str] = match kind.as_deref() {
        Some("kernel") => &["kind", "bandwidth", "bandwidth_scale", "bandwidth_exponent", "clip"],
        Some("knn") => &["kind", "k", "clip"],
        Some("series") => &["kind", "degree", "ridge", "clip"],
        Some("constant") => &["kind", "value", "clip"],
        Some("oracle") => &["kind"],
        Some(other) => {
            w.errs.push(format!(
                "[{section}] kind: unknown learner '{other}' (expected kernel, knn, series, constant or oracle)"
            ));
            return None;
        }
        None => {
            w.errs.push(format!("[{section}]: missing 'kind'"));
            return None;
        }
    };
    w.keys(t, &section, allowed);
    let clip = match t.get("clip") {
        None => ClipSpec::Auto,
        Some(Value::String(s)) if s == "auto" => ClipSpec::Auto,
        Some(Value::String(s)) if s == "none" => ClipSpec::None,
        Some(Value::Float(v)) => ClipSpec::Fixed(*v),
        Some(Value::Integer(v)) => ClipSpec::Fixed(*v as f64),
        Some(_) => {
            w.errs.push(format!("[{section}] clip: expected \"auto\", \"none\" or a number"));
            ClipSpec::Auto
        }
    };
    let kind = match kind.as_deref() {
        Some("oracle") => return Some(LearnerChoice::Oracle),
        Some("kernel") => {
            let fixed = w.f64(t, &section, "bandwidth");
            let scale = w.f64(t, &section, "bandwidth_scale");
            let exponent = w.f64(t, &section, "bandwidth_exponent");
            let bandwidth = match (fixed, scale) {
                (Some(_), Some(_)) => {
                    w.errs.push(format!("[{section}]: give either bandwidth or bandwidth_scale, not both"));
                    return None;
                }
                (Some(h), None) => Bandwidth::Fixed(h),
                (None, s) => Bandwidth::Rule {
                    scale: s.unwrap_or(ortho_core::firststage::FAST_BANDWIDTH_SCALE),
                    exponent,
                },
            };
            LearnerKind::Kernel { bandwidth }
        }
        Some("knn") => LearnerKind::Knn {
            k: w.usize(t, &section, "k").unwrap_or(10),
        },
        Some("series") => LearnerKind::Series {
            degree: w.usize(t, &section, "degree").unwrap_or(4),
            ridge: w.f64(t, &section, "ridge").unwrap_or(1e-6),
        },
        _ => LearnerKind::Constant {
            value: w.f64(t, &section, "value").unwrap_or(0.0),
        },
    };
    if let Err(e) = kind.validate() {
        w.errs.push(format!("[{section}]: {e}"));
    }
    Some(LearnerChoice::Fitted { kind, clip })
}

/// Parses and validates a config document.
pub fn parse_config(text: &str) -> Result<Config, Vec<String>> {
    let doc: Table = text.parse().map_err(|e: toml::de::Error| vec![format!("invalid TOML: {e}")])?;
    let mut w = Walker { errs: Vec::new() };
    w.keys(&doc, "top level", TOP_LEVEL);
    let mut exp = ExperimentConfig::default();
    let empty = Table::new();

    let dgp = w.table(&doc, "dgp").unwrap_or(&empty);
    w.keys(dgp, "dgp", &["name", "theta0"]);
    if let Some(v) = w.string(dgp, "dgp", "name") {
        exp.dgp = v;
    }
    if let Some(v) = w.f64(dgp, "dgp", "theta0") {
        exp.theta0 = v;
    }

    let moments = w.table(&doc, "moments").unwrap_or(&empty);
    w.keys(moments, "moments", &["models", "naive_reference_slope"]);
    if let Some(v) = w.strings(moments, "moments", "models") {
        exp.moments = v;
    }
    exp.naive_reference_slope = w.f64(moments, "moments", "naive_reference_slope");

    if let Some(learners) = w.table(&doc, "learners") {
        exp.learners = learners
            .iter()
            .filter_map(|(name, v)| match v {
                Value::Table(t) => learner(&mut w, name, t).map(|c| NamedLearner::new(name.clone(), c)),
                _ => {
                    w.errs.push(format!("[learners] {name}: expected a table"));
                    None
                }
            })
            .collect();
    }

    let e = w.table(&doc, "experiment").unwrap_or(&empty);
    let s = "experiment";
    w.keys(
        e,
        s,
        &[
            "n_grid",
            "aux_fraction",
            "replications",
            "master_seed",
            "alpha",
            "tol",
            "max_iter",
            "bound_probes",
            "population_draws",
        ],
    );
    if let Some(v) = w.usizes(e, s, "n_grid") {
        exp.n_grid = v;
    }
    if let Some(v) = w.f64(e, s, "aux_fraction") {
        exp.aux_fraction = v;
    }
    if let Some(v) = w.usize(e, s, "replications") {
        exp.replications = v;
    }
    if let Some(v) = w.u64(e, s, "master_seed") {
        exp.master_seed = v;
    }
    if let Some(v) = w.f64(e, s, "alpha") {
        exp.alpha = v;
    }
    let mut solver = SolverSettings::default();
    if let Some(v) = w.f64(e, s, "tol") {
        solver.tol = v;
    }
    if let Some(v) = w.usize(e, s, "max_iter") {
        solver.max_iter = v;
    }
    exp.solver = solver;
    if let Some(v) = w.usize(e, s, "bound_probes") {
        exp.bound_probes = v;
    }
    if let Some(v) = w.usize(e, s, "population_draws") {
        exp.population_draws = v;
    }

    let o = w.table(&doc, "output").unwrap_or(&empty);
    w.keys(o, "output", &["dir", "results", "aggregate", "report"]);
    let output = OutputPaths {
        dir: w.string(o, "output", "dir").unwrap_or_else(|| ".".into()).into(),
        results: w.string(o, "output", "results").unwrap_or_else(|| "results.csv".into()),
        aggregate: w.string(o, "output", "aggregate").unwrap_or_else(|| "aggregate.csv".into()),
        report: w.string(o, "output", "report").unwrap_or_else(|| "report.md".into()),
    };

    let data = w.table(&doc, "data").map(|d| {
        w.keys(d, "data", &["y", "w", "x", "moment", "learner", "seed"]);
        let y = w.string(d, "data", "y");
        if y.is_none() {
            w.errs.push("[data]: missing 'y' column mapping".into());
        }
        let spec = DataSpec {
            y: y.unwrap_or_default(),
            w: w.string(d, "data", "w"),
            x: w.strings(d, "data", "x").unwrap_or_default(),
            moment: w
                .string(d, "data", "moment")
                .unwrap_or_else(|| exp.moments.first().cloned().unwrap_or_default()),
            learner: w
                .string(d, "data", "learner")
                .unwrap_or_else(|| exp.learners.first().map(|l| l.name.clone()).unwrap_or_default()),
            seed: w.u64(d, "data", "seed").unwrap_or(exp.master_seed),
        };
        if !spec.learner.is_empty() && !exp.learners.iter().any(|l| l.name == spec.learner) {
            w.errs.push(format!("[data] learner: no learner named '{}'", spec.learner));
        }
        spec
    });

    let c = w.table(&doc, "check").unwrap_or(&empty);
    let s = "check";
    w.keys(
        c,
        s,
        &[
            "derivative_points",
            "grid_points",
            "draws_per_point",
            "score_sample",
            "bound_probes",
            "rate_grid",
            "rate_replications",
        ],
    );
    let d = CheckSpec::default();
    let check = CheckSpec {
        derivative_points: w.usize(c, s, "derivative_points").unwrap_or(d.derivative_points),
        grid_points: w.usize(c, s, "grid_points").unwrap_or(d.grid_points),
        draws_per_point: w.usize(c, s, "draws_per_point").unwrap_or(d.draws_per_point),
        score_sample: w.usize(c, s, "score_sample").unwrap_or(d.score_sample),
        bound_probes: w.usize(c, s, "bound_probes").unwrap_or(d.bound_probes),
        rate_grid: w.usizes(c, s, "rate_grid").unwrap_or(d.rate_grid),
        rate_replications: w.usize(c, s, "rate_replications").unwrap_or(d.rate_replications),
    };
    if check.derivative_points == 0 || check.grid_points == 0 || check.score_sample == 0 || check.bound_probes == 0 {
        w.errs.push("[check]: point counts must be positive".into());
    }
    if check.draws_per_point < 1000 {
        w.errs.push("[check] draws_per_point: at least 1000 required".into());
    }
    if check.rate_replications < 10 {
        w.errs.push("[check] rate_replications: at least 10 required".into());
    }
    if check.rate_grid.len() < 2 || check.rate_grid.windows(2).any(|p| p[0] >= p[1]) || check.rate_grid[0] == 0 {
        w.errs.push("[check] rate_grid: needs two or more strictly increasing positive sizes".into());
    }

    if let Err(errs) = exp.validate() {
        w.errs.extend(errs);
    }
    if w.errs.is_empty() {
        Ok(Config {
            experiment: exp,
            output,
            data,
            check,
        })
    } else {
        Err(w.errs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default_experiment() {
        let c = parse_config("").unwrap();
        assert_eq!(c.experiment, ExperimentConfig::default());
        assert!(c.data.is_none());
    }

    #[test]
    fn learners_keep_file_order() {
        let c = parse_config(
            r#"
            [learners.zeta]
            kind = "knn"
            k = 5
            [learners.alpha]
            kind = "oracle"
            "#,
        )
        .unwrap();
        let names: Vec<&str> = c.experiment.learners.iter().map(|l| l.name.as_str()).collect();
        assert_eq!(names, ["zeta", "alpha"]);
    }

    #[test]
    fn all_errors_are_reported() {
        let errs = parse_config(
            r#"
            bogus = 1
            [dgp]
            name = "nope"
            colour = "red"
            [experiment]
            replications = 0
            alpha = "x"
            [learners.a]
            kind = "forest"
            "#,
        )
        .unwrap_err();
        let joined = errs.join("\n");
        for needle in ["bogus", "colour", "unknown dgp", "replications", "alpha", "forest"] {
            assert!(joined.contains(needle), "missing {needle} in {joined}");
        }
    }

    #[test]
    fn kernel_options() {
        let c = parse_config(
            r#"
            [learners.fixed]
            kind = "kernel"
            bandwidth = 0.2
            clip = "none"
            [learners.rule]
            kind = "kernel"
            bandwidth_scale = 2.0
            clip = 50
            "#,
        )
        .unwrap();
        assert_eq!(
            c.experiment.learners[0].choice,
            LearnerChoice::Fitted {
                kind: LearnerKind::Kernel {
                    bandwidth: Bandwidth::Fixed(0.2)
                },
                clip: ClipSpec::None
            }
        );
        assert!(matches!(
            c.experiment.learners[1].choice,
            LearnerChoice::Fitted {
                clip: ClipSpec::Fixed(c),
                ..
            } if c == 50.0
        ));
        assert!(parse_config("[learners.x]\nkind = \"kernel\"\nbandwidth = -1.0\n").is_err());
    }

    #[test]
    fn data_section_defaults() {
        let c = parse_config("[data]\ny = \"out\"\nw = \"d\"\nx = [\"a\"]\n").unwrap();
        let d = c.data.unwrap();
        assert_eq!((d.moment.as_str(), d.learner.as_str()), ("plr", "fast"));
        assert!(parse_config("[data]\nw = \"d\"\n").is_err());
        assert!(parse_config("[data]\ny = \"y\"\nlearner = \"ghost\"\n").is_err());
    }

    #[test]
    fn shipped_configs_parse() {
        let default = parse_config(include_str!("../../../configs/default.toml")).unwrap();
        assert_eq!(default.experiment, ExperimentConfig::default());
        assert_eq!(default.check, CheckSpec::default());
        let smoke = parse_config(include_str!("../../../configs/smoke.toml")).unwrap();
        assert_eq!(smoke.experiment.replications, 1);
        let est = parse_config(include_str!("../../../configs/estimate-plr.toml")).unwrap();
        assert_eq!(est.data.unwrap().w.as_deref(), Some("w"));
    }
}
