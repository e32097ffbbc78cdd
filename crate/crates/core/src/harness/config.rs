//! Flat TOML experiment configs.
//!
//! Every experiment ships a default table; a config file names the
//! experiment and overrides any of its keys. Keys starting with
//! `threshold_` are verdict thresholds.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use toml::{Table, Value};

use crate::analysis::NormConfig;
use crate::error::{Error, Result};
use crate::funcalc::SolverConfig;

/// Keys accepted by every experiment, with their defaults.
const COMMON: &str = r#"
seed = 20240601
cg_tol = 1e-10
random_starts = 8
warmup_iters = 2
max_iters = 30
rel_tol = 1e-3
"#;

/// A resolved experiment configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub output_dir: Option<PathBuf>,
    pub threads: Option<usize>,
    params: Table,
}

fn config_err(detail: impl Into<String>) -> Error {
    Error::Config(detail.into())
}

impl ExperimentConfig {
    /// Defaults of a registered experiment.
    pub fn defaults(experiment: &str) -> Result<Self> {
        let own = super::experiments::default_table(experiment)
            .ok_or_else(|| Error::UnknownExperiment(experiment.to_string()))?;
        let mut params: Table = COMMON.parse().expect("common defaults parse");
        let own: Table = own.parse().map_err(|e| config_err(format!("defaults of {experiment}: {e}")))?;
        params.extend(own);
        Ok(Self { experiment: experiment.to_string(), output_dir: None, threads: None, params })
    }

    /// Parses a config file body: `experiment = "…"` plus overrides.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut table: Table = text.parse().map_err(|e| config_err(format!("{e}")))?;
        let experiment = match table.remove("experiment") {
            Some(Value::String(s)) => s,
            Some(_) => return Err(config_err("`experiment` must be a string")),
            None => return Err(config_err("missing `experiment`")),
        };
        let mut cfg = Self::defaults(&experiment)?;
        if let Some(v) = table.remove("output_dir") {
            cfg.output_dir = Some(PathBuf::from(v.as_str().ok_or_else(|| config_err("`output_dir` must be a string"))?));
        }
        if let Some(v) = table.remove("threads") {
            cfg.threads = Some(as_count("threads", &v)?);
        }
        for (key, value) in table {
            cfg.set(&key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Overrides one key; the key must exist in the experiment's defaults.
    pub fn set(&mut self, key: &str, value: impl Into<Value>) -> Result<()> {
        let value = value.into();
        let Some(old) = self.params.get(key) else {
            return Err(config_err(format!("unknown key `{key}` for experiment {}", self.experiment)));
        };
        let compatible = match (old, &value) {
            (Value::Float(_) | Value::Integer(_), Value::Float(_) | Value::Integer(_) | Value::Array(_)) => true,
            (Value::Array(_), b) => b.is_array(),
            (a, b) => a.type_str() == b.type_str(),
        };
        if !compatible {
            return Err(config_err(format!("`{key}` expects {}, got {}", old.type_str(), value.type_str())));
        }
        self.params.insert(key.to_string(), value);
        Ok(())
    }

    /// Merged parameter table (defaults plus overrides).
    pub fn params(&self) -> &Table {
        &self.params
    }

    fn get(&self, key: &str) -> Result<&Value> {
        self.params.get(key).ok_or_else(|| config_err(format!("missing key `{key}`")))
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        as_f64(key, self.get(key)?)
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        as_count(key, self.get(key)?)
    }

    pub fn string(&self, key: &str) -> Result<String> {
        match self.get(key)? {
            Value::String(s) => Ok(s.clone()),
            _ => Err(config_err(format!("`{key}` must be a string"))),
        }
    }

    /// A scalar is read as a one-element list.
    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>> {
        let out = match self.get(key)? {
            Value::Array(items) => items.iter().map(|v| as_f64(key, v)).collect::<Result<Vec<_>>>()?,
            v => vec![as_f64(key, v)?],
        };
        if out.is_empty() {
            return Err(config_err(format!("`{key}` must not be empty")));
        }
        Ok(out)
    }

    pub fn usize_list(&self, key: &str) -> Result<Vec<usize>> {
        match self.get(key)? {
            Value::Array(items) => items.iter().map(|v| as_count_or_zero(key, v)).collect(),
            v => Ok(vec![as_count_or_zero(key, v)?]),
        }
    }

    pub fn strings(&self, key: &str) -> Result<Vec<String>> {
        let out: Vec<String> = match self.get(key)? {
            Value::String(s) => vec![s.clone()],
            Value::Array(items) => items
                .iter()
                .map(|v| v.as_str().map(str::to_string).ok_or_else(|| config_err(format!("`{key}` must hold strings"))))
                .collect::<Result<_>>()?,
            _ => return Err(config_err(format!("`{key}` must be a string or a list of strings"))),
        };
        if out.is_empty() {
            return Err(config_err(format!("`{key}` must not be empty")));
        }
        Ok(out)
    }

    /// A list of points, e.g. `[[0, 0], [1, 0.5]]`.
    pub fn points(&self, key: &str) -> Result<Vec<Vec<f64>>> {
        let Value::Array(items) = self.get(key)? else {
            return Err(config_err(format!("`{key}` must be a list of points")));
        };
        if items.is_empty() {
            return Err(config_err(format!("`{key}` must not be empty")));
        }
        items
            .iter()
            .map(|p| match p {
                Value::Array(xs) => xs.iter().map(|v| as_f64(key, v)).collect(),
                _ => Err(config_err(format!("`{key}` must be a list of points"))),
            })
            .collect()
    }

    pub fn seed(&self) -> Result<u64> {
        match self.get("seed")? {
            Value::Integer(i) if *i >= 0 => Ok(*i as u64),
            _ => Err(config_err("`seed` must be a non-negative integer")),
        }
    }

    pub fn set_seed(&mut self, seed: u64) -> Result<()> {
        let seed = i64::try_from(seed).map_err(|_| config_err("seed too large"))?;
        self.set("seed", seed)
    }

    pub fn threshold(&self, name: &str) -> Result<f64> {
        self.f64(&format!("threshold_{name}"))
    }

    /// All `threshold_*` keys without the prefix.
    pub fn thresholds(&self) -> BTreeMap<String, f64> {
        self.params
            .iter()
            .filter_map(|(k, v)| Some((k.strip_prefix("threshold_")?.to_string(), as_f64(k, v).ok()?)))
            .collect()
    }

    pub fn solver(&self) -> Result<SolverConfig> {
        let cfg = SolverConfig { cg_tol: self.f64("cg_tol")?, ..SolverConfig::default() };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn norm(&self) -> Result<NormConfig> {
        Ok(NormConfig {
            random_starts: self.usize("random_starts")?,
            warmup_iters: self.usize("warmup_iters")?,
            max_iters: self.usize("max_iters")?,
            rel_tol: self.f64("rel_tol")?,
            seed: self.seed()?,
        })
    }

    /// Checks types, list lengths and that every spec string resolves.
    pub fn validate(&self) -> Result<()> {
        self.seed()?;
        self.solver()?;
        self.norm()?;
        if self.norm()?.random_starts < 8 {
            return Err(config_err("random_starts must be at least 8"));
        }
        for (k, v) in &self.params {
            if k.starts_with("threshold_") {
                as_f64(k, v)?;
            }
            if let Value::Array(items) = v {
                if items.is_empty() {
                    return Err(config_err(format!("`{k}` must not be empty")));
                }
            }
        }
        super::experiments::validate(self)
    }
}

fn as_f64(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Float(x) => Ok(*x),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(config_err(format!("`{key}` must be a number"))),
    }
}

fn as_count_or_zero(key: &str, v: &Value) -> Result<usize> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        _ => Err(config_err(format!("`{key}` must hold non-negative integers"))),
    }
}

fn as_count(key: &str, v: &Value) -> Result<usize> {
    match v {
        Value::Integer(i) if *i > 0 => Ok(*i as usize),
        _ => Err(config_err(format!("`{key}` must be a positive integer"))),
    }
}
