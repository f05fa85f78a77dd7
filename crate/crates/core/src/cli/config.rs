//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment; blank lines are ignored.
//! Model and sampler keys are the names of [`TrainConfig`] and
//! [`HmcConfig`]; the remaining keys name files and experiment grids.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::inference::HmcConfig;
use crate::training::{parse_value, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub hmc: HmcConfig,
    pub out: PathBuf,
    pub quiet: bool,
    pub data_x: Option<PathBuf>,
    pub data_mask: Option<PathBuf>,
    pub data_header: bool,
    pub checkpoint: Option<PathBuf>,
    pub sim_n: usize,
    pub sim_p: usize,
    pub sim_rate: f64,
    pub eval_imputed: Option<PathBuf>,
    pub eval_truth: Option<PathBuf>,
    pub eval_intervals: Option<PathBuf>,
    pub eval_sd: Option<PathBuf>,
    pub eval_oracle: Option<PathBuf>,
    pub bench_n: Vec<usize>,
    pub bench_p: usize,
    pub bench_rates: Vec<f64>,
    pub bench_betas: Vec<f64>,
    pub bench_repeats: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            hmc: HmcConfig::default(),
            out: PathBuf::from("."),
            quiet: false,
            data_x: None,
            data_mask: None,
            data_header: false,
            checkpoint: None,
            sim_n: 500,
            sim_p: 50,
            sim_rate: 0.5,
            eval_imputed: None,
            eval_truth: None,
            eval_intervals: None,
            eval_sd: None,
            eval_oracle: None,
            bench_n: vec![500],
            bench_p: 50,
            bench_rates: vec![0.5],
            bench_betas: vec![0.0, 0.01, 1.0],
            bench_repeats: 3,
        }
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    let inner = value.trim().trim_start_matches('[').trim_end_matches(']');
    let items: Result<Vec<T>> = inner
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_value(key, s))
        .collect();
    let items = items?;
    if items.is_empty() {
        return Err(Error::Config(format!("{key}: list must not be empty")));
    }
    Ok(items)
}

fn path(value: &str) -> Option<PathBuf> {
    let v = value.trim();
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl RunConfig {
    /// Sets one key; unknown keys are a configuration error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        if self.train.set(key, value)? {
            if key == "seed" {
                self.hmc.seed = self.train.seed;
            }
            return Ok(());
        }
        if self.hmc.set(key, value)? {
            return Ok(());
        }
        match key {
            "out" => self.out = path(value).unwrap_or_else(|| PathBuf::from(".")),
            "quiet" => self.quiet = parse_value(key, value)?,
            "data.x" => self.data_x = path(value),
            "data.mask" => self.data_mask = path(value),
            "data.header" => self.data_header = parse_value(key, value)?,
            "checkpoint" => self.checkpoint = path(value),
            "sim.n" => self.sim_n = parse_value(key, value)?,
            "sim.p" => self.sim_p = parse_value(key, value)?,
            "sim.rate" => self.sim_rate = parse_value(key, value)?,
            "eval.imputed" => self.eval_imputed = path(value),
            "eval.truth" => self.eval_truth = path(value),
            "eval.intervals" => self.eval_intervals = path(value),
            "eval.sd" => self.eval_sd = path(value),
            "eval.oracle" => self.eval_oracle = path(value),
            "bench.n" => self.bench_n = parse_list(key, value)?,
            "bench.p" => self.bench_p = parse_value(key, value)?,
            "bench.rates" => self.bench_rates = parse_list(key, value)?,
            "bench.betas" => self.bench_betas = parse_list(key, value)?,
            "bench.repeats" => self.bench_repeats = parse_value(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", no + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {}", no + 1, strip_prefix(&e))))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.hmc.validate()?;
        if self.bench_repeats == 0 {
            return Err(Error::Config("bench.repeats must be at least 1".into()));
        }
        Ok(())
    }

    pub fn out_file(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}
