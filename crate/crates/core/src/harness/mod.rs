//! Config-driven experiment runner.
//!
//! [`run`] executes one registered experiment and returns an
//! [`ExperimentReport`]; when the config names an output directory the
//! report is also written there as `<experiment>.csv` and `<experiment>.json`.

mod config;
mod experiments;
pub mod spec;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

pub use config::ExperimentConfig;
pub use experiments::{descriptions, registry};

use crate::analysis::Relation;
use crate::error::{Error, Result};
use crate::fit::DecayFit;

/// CSV header, in column order.
pub const CSV_COLUMNS: [&str; 12] =
    ["experiment", "field_id", "n", "L", "h", "p", "t", "r", "quantity", "value", "witness_norm", "solver_iters"];

/// One CSV row. Missing dimensions are written as empty cells.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Record {
    pub field_id: String,
    pub n: Option<usize>,
    #[serde(rename = "L")]
    pub half_width: Option<f64>,
    pub h: Option<f64>,
    pub p: Option<f64>,
    pub t: Option<f64>,
    pub r: Option<f64>,
    pub quantity: String,
    pub value: f64,
    /// `||T f||_p / ||f||_p` of the witness `f` for norm estimates.
    pub witness_norm: Option<f64>,
    pub solver_iters: Option<usize>,
}

impl Record {
    pub fn new(field_id: &str, quantity: &str, value: f64) -> Self {
        Self {
            field_id: field_id.to_string(),
            n: None,
            half_width: None,
            h: None,
            p: None,
            t: None,
            r: None,
            quantity: quantity.to_string(),
            value,
            witness_norm: None,
            solver_iters: None,
        }
    }

    pub fn mesh(mut self, n: usize, half_width: f64, h: f64) -> Self {
        self.n = Some(n);
        self.half_width = Some(half_width);
        self.h = Some(h);
        self
    }

    pub fn dim(mut self, n: usize) -> Self {
        self.n = Some(n);
        self
    }

    pub fn p(mut self, p: f64) -> Self {
        self.p = Some(p);
        self
    }

    pub fn t(mut self, t: f64) -> Self {
        self.t = Some(t);
        self
    }

    pub fn r(mut self, r: f64) -> Self {
        self.r = Some(r);
        self
    }

    pub fn witness(mut self, v: f64) -> Self {
        self.witness_norm = Some(v);
        self
    }

    pub fn iters(mut self, k: usize) -> Self {
        self.solver_iters = Some(k);
        self
    }
}

/// A pass/fail judgement on one recorded quantity.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Verdict {
    pub name: String,
    /// Recorded quantity the verdict reads.
    pub quantity: String,
    pub value: f64,
    pub relation: Relation,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub passed: bool,
    pub verdicts: Vec<Verdict>,
    pub thresholds: BTreeMap<String, f64>,
    pub fits: BTreeMap<String, DecayFit>,
    /// Samples that failed; the experiment is failed but keeps its other data.
    pub failures: Vec<String>,
    pub wall_clock_seconds: f64,
    pub solver_iterations: usize,
    pub config: toml::Table,
    pub records: Vec<Record>,
}

impl ExperimentReport {
    /// CSV bytes, one row per record.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(CSV_COLUMNS).map_err(csv_err)?;
        let opt_f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let opt_u = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            w.write_record([
                self.experiment.clone(),
                r.field_id.clone(),
                opt_u(r.n),
                opt_f(r.half_width),
                opt_f(r.h),
                opt_f(r.p),
                opt_f(r.t),
                opt_f(r.r),
                r.quantity.clone(),
                r.value.to_string(),
                opt_f(r.witness_norm),
                opt_u(r.solver_iters),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `<experiment>.csv` and `<experiment>.json` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let csv_path = dir.join(format!("{}.csv", self.experiment));
        let json_path = dir.join(format!("{}.json", self.experiment));
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(&csv_path)?))?;
        let json = serde_json::to_vec_pretty(self).map_err(|e| Error::Io(std::io::Error::other(e)))?;
        std::fs::write(&json_path, json)?;
        Ok((csv_path, json_path))
    }

    /// One line per verdict.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for v in &self.verdicts {
            let rel = match v.relation {
                Relation::AtMost { bound } => format!("<= {bound}"),
                Relation::AtLeast { bound } => format!(">= {bound}"),
                Relation::Within { target, tol } => format!("= {target} ± {tol}"),
            };
            s.push_str(&format!("{} {}: {} {rel}\n", if v.pass { "PASS" } else { "FAIL" }, v.name, v.value));
        }
        for f in &self.failures {
            s.push_str(&format!("FAIL sample: {f}\n"));
        }
        s
    }
}

/// Collects records, fits and verdicts while an experiment runs.
pub struct Recorder<'a> {
    cfg: &'a ExperimentConfig,
    records: Vec<Record>,
    fits: BTreeMap<String, DecayFit>,
    verdicts: Vec<Verdict>,
    failures: Vec<String>,
    solver_iterations: usize,
    /// Prefix added to verdict, fit and failure names.
    scope: String,
}

impl<'a> Recorder<'a> {
    fn new(cfg: &'a ExperimentConfig) -> Self {
        Self {
            cfg,
            records: Vec::new(),
            fits: BTreeMap::new(),
            verdicts: Vec::new(),
            failures: Vec::new(),
            solver_iterations: 0,
            scope: String::new(),
        }
    }

    fn scoped(&self, name: &str) -> String {
        format!("{}{name}", self.scope)
    }

    pub fn record(&mut self, r: Record) {
        if let Some(k) = r.solver_iters {
            self.solver_iterations += k;
        }
        self.records.push(r);
    }

    pub fn fit(&mut self, name: &str, fit: DecayFit) {
        let name = self.scoped(name);
        self.fits.insert(name, fit);
    }

    /// Runs a sample; an error is logged as a failure instead of aborting.
    pub fn attempt<T>(&mut self, label: &str, f: impl FnOnce() -> Result<T>) -> Option<T> {
        match f() {
            Ok(v) => Some(v),
            Err(e) => {
                let msg = format!("{}: {e}", self.scoped(label));
                eprintln!("[{}] {msg}", self.cfg.experiment);
                self.failures.push(msg);
                None
            }
        }
    }

    pub fn verdict(&mut self, name: &str, quantity: &str, value: f64, relation: Relation) {
        let name = self.scoped(name);
        eprintln!(
            "[{}] {} {name}: {value}",
            self.cfg.experiment,
            if relation.holds(value) { "pass" } else { "fail" }
        );
        self.verdicts.push(Verdict { name, quantity: quantity.to_string(), value, relation, pass: relation.holds(value) });
    }

    /// `value <= threshold_<key>`.
    pub fn at_most(&mut self, name: &str, quantity: &str, value: f64, key: &str) -> Result<()> {
        let bound = self.cfg.threshold(key)?;
        self.verdict(name, quantity, value, Relation::AtMost { bound });
        Ok(())
    }

    /// `value >= threshold_<key>`.
    pub fn at_least(&mut self, name: &str, quantity: &str, value: f64, key: &str) -> Result<()> {
        let bound = self.cfg.threshold(key)?;
        self.verdict(name, quantity, value, Relation::AtLeast { bound });
        Ok(())
    }

    pub fn progress(&self, msg: &str) {
        eprintln!("[{}] {}{msg}", self.cfg.experiment, self.scope);
    }
}

/// Runs the configured experiment on a dedicated thread pool.
pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let def = experiments::lookup(&cfg.experiment).ok_or_else(|| Error::UnknownExperiment(cfg.experiment.clone()))?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let start = Instant::now();
    let mut rec = Recorder::new(cfg);
    pool.install(|| (def.run)(cfg, &mut rec))?;
    let passed = rec.failures.is_empty() && !rec.verdicts.is_empty() && rec.verdicts.iter().all(|v| v.pass);
    let report = ExperimentReport {
        experiment: cfg.experiment.clone(),
        passed,
        verdicts: rec.verdicts,
        thresholds: cfg.thresholds(),
        fits: rec.fits,
        failures: rec.failures,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        solver_iterations: rec.solver_iterations,
        config: cfg.params().clone(),
        records: rec.records,
    };
    if let Some(dir) = &cfg.output_dir {
        report.write_to(dir)?;
    }
    Ok(report)
}
