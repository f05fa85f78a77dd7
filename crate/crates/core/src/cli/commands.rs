use std::fs;
use std::io::Write as _;
use std::path::Path;

use super::config::RunConfig;
use crate::autodiff::Tensor;
use crate::data::{
    load_csv, load_dataset, load_mask_csv, oracle_conditional, save_csv, save_mask_csv, simulate_oracle, Dataset,
    OracleParams, Scaler,
};
use crate::error::{Error, Result};
use crate::inference::{
    hmc_within_gibbs, map_refine, posterior_mean, posterior_summaries, sample_sd, PredictionIntervals,
    SweepLog,
};
use crate::metrics::{interval_metrics, mean_impute, rmse_missing, sd_rmse, EvalReport};
use crate::networks::Checkpoint;
use crate::training::{fit_with, terminal_from_checkpoint, Model};

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn require<'a>(p: &'a Option<std::path::PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Config(format!("`{key}` is required for this command")))
}

fn ensure_out(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))
}

fn say(cfg: &RunConfig, msg: impl AsRef<str>) {
    if !cfg.quiet {
        eprintln!("{}", msg.as_ref());
    }
}

/// Maps a standardized completion back to raw units, keeping observed
/// entries bitwise equal to `raw`.
fn to_raw(x: &Tensor, scaler: &Scaler, raw: &Dataset) -> Result<Tensor> {
    let mut out = scaler.invert(x)?;
    for i in 0..raw.n() {
        for j in 0..raw.p() {
            if raw.is_observed(i, j) {
                out.set(i, j, raw.x_obs.get(i, j));
            }
        }
    }
    Ok(out)
}

/// `x_obs.csv`, `mask.csv`, `x_full.csv` and `oracle.txt` for the synthetic benchmark.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<()> {
    let (ds, oracle) = simulate_oracle(cfg.sim_n, cfg.sim_p, cfg.sim_rate, cfg.train.seed)?;
    ensure_out(cfg)?;
    save_csv(&cfg.out_file("x_obs.csv"), &ds.x_obs, None)?;
    save_mask_csv(&cfg.out_file("mask.csv"), &ds.mask, None)?;
    save_csv(&cfg.out_file("x_full.csv"), ds.x_full.as_ref().expect("simulated data is complete"), None)?;
    oracle.save(&cfg.out_file("oracle.txt"))?;
    say(cfg, format!("simulated {}x{} table, missing fraction {:.4}", ds.n(), ds.p(), ds.missing_fraction()));
    Ok(())
}

fn load_input(cfg: &RunConfig) -> Result<Dataset> {
    let x = require(&cfg.data_x, "data.x")?;
    load_dataset(x, cfg.data_mask.as_deref(), cfg.data_header)
}

/// Trains on `data.x`, writing `checkpoint.txt`, `x_map_imputed.csv` and `train_log.txt`.
pub fn cmd_fit(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let raw = load_input(cfg)?;
    let scaler = Scaler::fit(&raw.x_obs)?;
    let ds = raw.standardized_with(&scaler)?;
    ensure_out(cfg)?;
    let log_path = cfg.out_file("train_log.txt");
    let mut log = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut io_err = None;
    let state = fit_with(&ds, &cfg.train, |st| {
        let entry = st.log.last().expect("called after an epoch");
        say(cfg, entry.to_string());
        if let Err(e) = writeln!(log, "{entry}") {
            io_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = io_err {
        return Err(Error::io(&log_path, e));
    }
    state.to_checkpoint().save(&cfg.out_file("checkpoint.txt"))?;
    save_csv(&cfg.out_file("x_map_imputed.csv"), &to_raw(&state.x, &scaler, &raw)?, None)?;
    Ok(())
}

/// Posterior sampling for `data.x` with the model in `checkpoint`.
///
/// When the table is the training table, sampling starts from the stored
/// terminal state; otherwise from [`map_refine`]. Writes
/// `posterior_mean.csv`, `intervals.csv` (`row,col,lower,upper`),
/// `posterior_sd.csv` (`row,col,sd`) and `chain_log.csv`.
pub fn cmd_impute(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let default_ck = cfg.out_file("checkpoint.txt");
    let ck_path = cfg.checkpoint.as_deref().unwrap_or(&default_ck);
    let ck = Checkpoint::load(ck_path)?;
    let model = Model::from_checkpoint(&ck)?;
    let raw = load_input(cfg)?;
    if raw.p() != model.p() {
        return Err(Error::Data(format!(
            "table has {} features but the checkpoint expects {}",
            raw.p(),
            model.p()
        )));
    }
    let scaler = model
        .scaler
        .clone()
        .ok_or_else(|| Error::Data("checkpoint carries no scaler".into()))?;
    let ds = raw.standardized_with(&scaler)?;
    let (z, x) = match terminal_from_checkpoint(&ck)? {
        Some(t) if same_table(&t.x, &t.mask, &ds) => {
            say(cfg, "table matches the training table; starting from the terminal state");
            (t.z, t.x)
        }
        _ => {
            say(cfg, format!("refining latents for {} epochs", model.config.test_epochs));
            let r = map_refine(&ds, &model, model.config.test_epochs)?;
            (r.z, r.x)
        }
    };
    let mut draws = hmc_within_gibbs(&z, &x, &ds.x_obs, &ds.mask, &model, &cfg.hmc)?;
    draws.destandardize(&scaler, &raw.x_obs)?;
    ensure_out(cfg)?;
    let (point, intervals, sd) = if draws.n_draws >= 2 {
        let s = posterior_summaries(&draws, cfg.hmc.alpha)?;
        (s.point, s.intervals, Some(s.sd))
    } else {
        // one draw: the mean is that draw and every interval collapses onto it
        let point = posterior_mean(&draws);
        let v: Vec<f64> = draws.entries.iter().map(|&(i, j)| point.get(i, j)).collect();
        let pi = PredictionIntervals {
            entries: draws.entries.clone(),
            lower: v.clone(),
            upper: v,
            alpha: cfg.hmc.alpha,
        };
        (point, pi, None)
    };
    save_csv(&cfg.out_file("posterior_mean.csv"), &point, None)?;
    save_intervals(&cfg.out_file("intervals.csv"), &intervals)?;
    if let Some(sd) = sd {
        let mut s = String::from("row,col,sd\n");
        for (e, &(i, j)) in intervals.entries.iter().enumerate() {
            s.push_str(&format!("{i},{j},{}\n", sd[e]));
        }
        write_text(&cfg.out_file("posterior_sd.csv"), &s)?;
    }
    let mut s = String::from(SweepLog::CSV_HEADER);
    s.push('\n');
    for l in &draws.log {
        s.push_str(&l.csv_row());
        s.push('\n');
    }
    write_text(&cfg.out_file("chain_log.csv"), &s)?;
    let moved: Vec<f64> = draws.stats.iter().map(|st| st.z_accept_rate()).collect();
    if moved.len() > 1 {
        say(cfg, format!(
            "latent acceptance after adaptation: mean {:.3} (sd {:.3})",
            moved.iter().sum::<f64>() / moved.len() as f64,
            sample_sd(&moved)
        ));
    }
    Ok(())
}

fn same_table(x: &Tensor, mask: &Tensor, ds: &Dataset) -> bool {
    if x.shape() != ds.x_obs.shape() || !mask.bitwise_eq(&ds.mask) {
        return false;
    }
    (0..ds.n()).all(|i| {
        (0..ds.p()).all(|j| !ds.is_observed(i, j) || x.get(i, j).to_bits() == ds.x_obs.get(i, j).to_bits())
    })
}

pub fn save_intervals(path: &Path, pi: &PredictionIntervals) -> Result<()> {
    let mut s = String::from("row,col,lower,upper\n");
    for (e, &(i, j)) in pi.entries.iter().enumerate() {
        s.push_str(&format!("{i},{j},{},{}\n", pi.lower[e], pi.upper[e]));
    }
    write_text(path, &s)
}

fn read_entry_csv(path: &Path, want: usize) -> Result<Vec<(usize, usize, Vec<f64>)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let parse_err = |col: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            row: line + 2,
            col: col + 1,
            msg,
        };
        if rec.len() != 2 + want {
            return Err(parse_err(0, format!("expected {} fields, found {}", 2 + want, rec.len())));
        }
        let idx = |c: usize| rec[c].trim().parse::<usize>().map_err(|e| parse_err(c, e.to_string()));
        let vals = (2..2 + want)
            .map(|c| rec[c].trim().parse::<f64>().map_err(|e| parse_err(c, e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        out.push((idx(0)?, idx(1)?, vals));
    }
    Ok(out)
}

pub fn load_intervals(path: &Path, alpha: f64) -> Result<PredictionIntervals> {
    let rows = read_entry_csv(path, 2)?;
    Ok(PredictionIntervals {
        entries: rows.iter().map(|r| (r.0, r.1)).collect(),
        lower: rows.iter().map(|r| r.2[0]).collect(),
        upper: rows.iter().map(|r| r.2[1]).collect(),
        alpha,
    })
}

/// Scores `eval.imputed` (and optionally intervals and SDs) against `eval.truth`.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<()> {
    let truth = load_csv(require(&cfg.eval_truth, "eval.truth")?, cfg.data_header)?;
    let imputed = load_csv(require(&cfg.eval_imputed, "eval.imputed")?, cfg.data_header)?;
    let mask = match (&cfg.data_mask, &cfg.data_x) {
        (Some(m), _) => load_mask_csv(m, cfg.data_header)?,
        (None, Some(_)) => load_input(cfg)?.mask,
        (None, None) => return Err(Error::Config("`data.mask` or `data.x` is required to locate missing entries".into())),
    };
    if truth.shape() != mask.shape() {
        return Err(Error::shape("evaluate", &truth.shape(), &mask.shape()));
    }
    let mut report = EvalReport {
        rmse_missing: rmse_missing(&imputed, &truth, &mask)?,
        n_missing_entries: mask.data().iter().filter(|&&r| r == 0.0).count(),
        ..Default::default()
    };
    let oracle = match &cfg.eval_oracle {
        Some(p) => {
            let o = OracleParams::load(p)?;
            let anchors = Tensor::from_fn(truth.rows(), o.n_anchors(), |i, j| truth.get(i, j));
            Some(oracle_conditional(&anchors, &o, cfg.hmc.alpha)?)
        }
        None => None,
    };
    if let Some(p) = &cfg.eval_intervals {
        let pi = load_intervals(p, cfg.hmc.alpha)?;
        let widths: Option<Vec<f64>> = oracle
            .as_ref()
            .map(|o| pi.entries.iter().map(|&(i, j)| o.upper.get(i, j) - o.lower.get(i, j)).collect());
        let m = interval_metrics(&pi, &truth, &mask, widths.as_deref())?;
        report.avg_interval_width = Some(m.avg_width);
        report.coverage = Some(m.coverage);
        report.pcc = m.width_pcc;
        report.scc = m.width_scc;
    }
    if let (Some(p), Some(o)) = (&cfg.eval_sd, &oracle) {
        let rows = read_entry_csv(p, 1)?;
        let est: Vec<f64> = rows.iter().map(|r| r.2[0]).collect();
        let reference: Vec<f64> = rows.iter().map(|r| o.sd.get(r.0, r.1)).collect();
        report.sd_rmse = Some(sd_rmse(&est, &reference)?);
    }
    ensure_out(cfg)?;
    write_text(&cfg.out_file("report.txt"), &report.to_text())?;
    write_text(
        &cfg.out_file("report.csv"),
        &format!("{}\n{}\n", EvalReport::CSV_HEADER, report.csv_row()),
    )?;
    say(cfg, report.to_text().trim_end());
    Ok(())
}

/// Header of `bench.csv`.
pub const BENCH_HEADER: &str = "n,rate,beta,repeats,rmse_mean,rmse_sd,mean_baseline_rmse_mean,mean_baseline_rmse_sd";

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (m, if v.len() > 1 { sample_sd(v) } else { 0.0 })
}

/// Grid over `bench.n × bench.rates × bench.betas`, repeats with seeds
/// `seed, seed + 1, ...`; one `bench.csv` row per cell, in grid order.
pub fn cmd_bench(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    ensure_out(cfg)?;
    let mut out = String::from(BENCH_HEADER);
    out.push('\n');
    for &n in &cfg.bench_n {
        for &rate in &cfg.bench_rates {
            for &beta in &cfg.bench_betas {
                let (mut model_rmse, mut base_rmse) = (Vec::new(), Vec::new());
                for r in 0..cfg.bench_repeats {
                    let seed = cfg.train.seed + r as u64;
                    let (raw, _) = simulate_oracle(n, cfg.bench_p, rate, seed)?;
                    let full = raw.x_full.clone().expect("simulated data is complete");
                    let scaler = Scaler::fit(&full)?;
                    let ds = raw.standardized_with(&scaler)?;
                    let mut train = cfg.train.clone();
                    train.seed = seed;
                    train.beta = beta;
                    let st = fit_with(&ds, &train, |_| {})?;
                    let x = to_raw(&st.x, &scaler, &raw)?;
                    model_rmse.push(rmse_missing(&x, &full, &raw.mask)?);
                    base_rmse.push(rmse_missing(&mean_impute(&raw)?, &full, &raw.mask)?);
                    say(cfg, format!(
                        "n={n} rate={rate} beta={beta} seed={seed}: rmse {:.4} (mean baseline {:.4})",
                        model_rmse[r], base_rmse[r]
                    ));
                }
                let (m, s) = mean_sd(&model_rmse);
                let (bm, bs) = mean_sd(&base_rmse);
                out.push_str(&format!("{n},{rate},{beta},{},{m},{s},{bm},{bs}\n", cfg.bench_repeats));
            }
        }
    }
    write_text(&cfg.out_file("bench.csv"), &out)
}
