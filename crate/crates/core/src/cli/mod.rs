//! Command-line front end: `simulate | fit | impute | evaluate | bench`.
//!
//! Settings resolve as flag > config file > default. Exit codes: 0 success,
//! 1 data or I/O failure, 2 invalid configuration or usage, 3 numerical
//! blow-up during training or sampling.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{
    cmd_bench, cmd_evaluate, cmd_fit, cmd_impute, cmd_simulate, load_intervals, save_intervals,
    BENCH_HEADER,
};
pub use config::RunConfig;

use crate::error::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "missbgm", version, about = "Bayesian generative imputation for data missing not at random")]
pub struct Cli {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random stream (key `seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (key `out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Suppress progress messages (key `quiet`).
    #[arg(long, global = true)]
    pub quiet: bool,
    /// Extra `KEY=VALUE` settings, applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct DataArgs {
    /// Input table (key `data.x`).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// 0/1 mask table; overrides missing markers (key `data.mask`).
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Input CSVs start with a header row (key `data.header`).
    #[arg(long)]
    pub header: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic benchmark table with its oracle parameters.
    Simulate {
        /// Rows (key `sim.n`).
        #[arg(long)]
        n: Option<usize>,
        /// Columns (key `sim.p`).
        #[arg(long)]
        p: Option<usize>,
        /// Missing rate (key `sim.rate`).
        #[arg(long)]
        rate: Option<f64>,
    },
    /// Train and write the checkpoint, MAP imputation and training log.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        /// Key `epochs`.
        #[arg(long)]
        epochs: Option<usize>,
        /// Key `beta`.
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Sample the posterior of the missing entries.
    Impute {
        #[command(flatten)]
        data: DataArgs,
        /// Key `checkpoint` (default `<out>/checkpoint.txt`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Key `posterior.n_mcmc`.
        #[arg(long)]
        n_mcmc: Option<usize>,
        /// Key `posterior.burn_in`.
        #[arg(long)]
        burn_in: Option<usize>,
        /// Key `posterior.alpha`.
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Score imputations and intervals against ground truth.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        /// Key `eval.imputed`.
        #[arg(long)]
        imputed: Option<PathBuf>,
        /// Key `eval.truth`.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Key `eval.intervals`.
        #[arg(long)]
        intervals: Option<PathBuf>,
        /// Key `eval.sd`.
        #[arg(long)]
        sd: Option<PathBuf>,
        /// Key `eval.oracle`.
        #[arg(long)]
        oracle: Option<PathBuf>,
        /// Key `posterior.alpha`.
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Run the synthetic benchmark grid.
    Bench,
}

fn path_str(p: &std::path::Path) -> String {
    p.to_string_lossy().into_owned()
}

impl Cli {
    /// Flag settings as `(key, value)` pairs.
    pub fn overrides(&self) -> Vec<(String, String)> {
        let mut kv: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: String| kv.push((k.to_string(), v));
        if let Some(s) = self.seed {
            put("seed", s.to_string());
        }
        if let Some(o) = &self.out {
            put("out", path_str(o));
        }
        if self.quiet {
            put("quiet", "true".into());
        }
        let data = |put: &mut dyn FnMut(&str, String), d: &DataArgs| {
            if let Some(p) = &d.data {
                put("data.x", path_str(p));
            }
            if let Some(p) = &d.mask {
                put("data.mask", path_str(p));
            }
            if d.header {
                put("data.header", "true".into());
            }
        };
        match &self.command {
            Command::Simulate { n, p, rate } => {
                if let Some(v) = n {
                    put("sim.n", v.to_string());
                }
                if let Some(v) = p {
                    put("sim.p", v.to_string());
                }
                if let Some(v) = rate {
                    put("sim.rate", v.to_string());
                }
            }
            Command::Fit { data: d, epochs, beta } => {
                data(&mut put, d);
                if let Some(v) = epochs {
                    put("epochs", v.to_string());
                }
                if let Some(v) = beta {
                    put("beta", v.to_string());
                }
            }
            Command::Impute { data: d, checkpoint, n_mcmc, burn_in, alpha } => {
                data(&mut put, d);
                if let Some(v) = checkpoint {
                    put("checkpoint", path_str(v));
                }
                if let Some(v) = n_mcmc {
                    put("posterior.n_mcmc", v.to_string());
                }
                if let Some(v) = burn_in {
                    put("posterior.burn_in", v.to_string());
                }
                if let Some(v) = alpha {
                    put("posterior.alpha", v.to_string());
                }
            }
            Command::Evaluate { data: d, imputed, truth, intervals, sd, oracle, alpha } => {
                data(&mut put, d);
                for (k, v) in [
                    ("eval.imputed", imputed),
                    ("eval.truth", truth),
                    ("eval.intervals", intervals),
                    ("eval.sd", sd),
                    ("eval.oracle", oracle),
                ] {
                    if let Some(p) = v {
                        put(k, path_str(p));
                    }
                }
                if let Some(v) = alpha {
                    put("posterior.alpha", v.to_string());
                }
            }
            Command::Bench => {}
        }
        kv
    }

    /// Defaults, then the config file, then `--set`, then dedicated flags.
    pub fn resolve(&self) -> Result<RunConfig, Error> {
        let mut cfg = RunConfig::default();
        if let Some(p) = &self.config {
            cfg.apply_file(p)?;
        }
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{s}`")))?;
            cfg.set(k, v)?;
        }
        for (k, v) in self.overrides() {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::Diverged { .. } | Error::NonFinite(_) => EXIT_NUMERIC,
        _ => EXIT_FAILURE,
    }
}

pub fn execute(cli: &Cli) -> Result<(), Error> {
    let cfg = cli.resolve()?;
    match cli.command {
        Command::Simulate { .. } => cmd_simulate(&cfg),
        Command::Fit { .. } => cmd_fit(&cfg),
        Command::Impute { .. } => cmd_impute(&cfg),
        Command::Evaluate { .. } => cmd_evaluate(&cfg),
        Command::Bench => cmd_bench(&cfg),
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("missbgm").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_beat_set_which_beats_defaults() {
        let cli = parse(&["--seed", "5", "--set", "seed=3", "--set", "lr_x=0.01", "fit", "--epochs", "4"]);
        let cfg = cli.resolve().unwrap();
        assert_eq!(cfg.train.seed, 5);
        assert_eq!(cfg.hmc.seed, 5);
        assert_eq!(cfg.train.lr_x, 0.01);
        assert_eq!(cfg.train.epochs, 4);
    }

    #[test]
    fn bad_set_is_a_config_error() {
        let cli = parse(&["--set", "nonsense=1", "bench"]);
        assert_eq!(exit_code(&cli.resolve().unwrap_err()), EXIT_CONFIG);
    }

    #[test]
    fn usage_errors_exit_with_config_code() {
        assert_eq!(run(["missbgm", "frobnicate"]), EXIT_CONFIG);
    }
}
