//! Accuracy and calibration metrics over missing entries, plus the
//! column-mean baseline.

use std::fmt::Write as _;

use crate::autodiff::Tensor;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::inference::PredictionIntervals;

fn check_shapes(a: &Tensor, b: &Tensor, mask: &Tensor) -> Result<()> {
    if a.shape() != b.shape() || a.shape() != mask.shape() {
        return Err(Error::shape("metric inputs", &a.shape(), &b.shape()));
    }
    Ok(())
}

/// `sqrt(mean((imputed - truth)^2))` over entries with mask 0.
pub fn rmse_missing(imputed: &Tensor, truth: &Tensor, mask: &Tensor) -> Result<f64> {
    check_shapes(imputed, truth, mask)?;
    let (mut sum, mut count) = (0.0, 0usize);
    for k in 0..mask.len() {
        if mask.data()[k] == 0.0 {
            let d = imputed.data()[k] - truth.data()[k];
            sum += d * d;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Data("no missing entries to score".into()));
    }
    Ok((sum / count as f64).sqrt())
}

/// RMSE between estimated and reference per-entry standard deviations.
pub fn sd_rmse(estimated: &[f64], oracle: &[f64]) -> Result<f64> {
    if estimated.len() != oracle.len() || estimated.is_empty() {
        return Err(Error::Data(format!(
            "sd vectors must be aligned and non-empty ({} vs {})",
            estimated.len(),
            oracle.len()
        )));
    }
    let s: f64 = estimated.iter().zip(oracle).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((s / estimated.len() as f64).sqrt())
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Data("correlation needs two aligned vectors of length >= 2".into()));
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Data("correlation of a constant vector".into()));
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Ranks starting at 1; tied values share the average of their ranks.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && v[idx[end]] == v[idx[start]] {
            end += 1;
        }
        let r = (start + end + 1) as f64 / 2.0;
        for &k in &idx[start..end] {
            ranks[k] = r;
        }
        start = end;
    }
    ranks
}

pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    pearson(&average_ranks(a), &average_ranks(b))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntervalMetrics {
    pub avg_width: f64,
    pub coverage: f64,
    /// Correlations of the widths with the reference widths; `None` when no
    /// reference is given.
    pub width_pcc: Option<f64>,
    pub width_scc: Option<f64>,
}

/// Width, closed-interval coverage of `truth`, and width correlations
/// against `oracle_widths` (aligned with `intervals.entries`).
pub fn interval_metrics(
    intervals: &PredictionIntervals,
    truth: &Tensor,
    mask: &Tensor,
    oracle_widths: Option<&[f64]>,
) -> Result<IntervalMetrics> {
    if truth.shape() != mask.shape() {
        return Err(Error::shape("interval metrics", &truth.shape(), &mask.shape()));
    }
    let k = intervals.len();
    if k == 0 || intervals.lower.len() != k || intervals.upper.len() != k {
        return Err(Error::Data("intervals must cover at least one entry".into()));
    }
    let mut covered = 0usize;
    for (e, &(i, j)) in intervals.entries.iter().enumerate() {
        if i >= truth.rows() || j >= truth.cols() || mask.get(i, j) != 0.0 {
            return Err(Error::Data(format!("interval entry ({i}, {j}) is not a missing entry")));
        }
        let t = truth.get(i, j);
        if intervals.lower[e] <= t && t <= intervals.upper[e] {
            covered += 1;
        }
    }
    let widths = intervals.width();
    let (width_pcc, width_scc) = match oracle_widths {
        Some(o) => (Some(pearson(&widths, o)?), Some(spearman(&widths, o)?)),
        None => (None, None),
    };
    Ok(IntervalMetrics {
        avg_width: widths.iter().sum::<f64>() / k as f64,
        coverage: covered as f64 / k as f64,
        width_pcc,
        width_scc,
    })
}

/// Fills each missing entry with its column's observed mean.
pub fn mean_impute(ds: &Dataset) -> Result<Tensor> {
    let mut out = ds.x_obs.clone();
    for j in 0..ds.p() {
        let obs: Vec<f64> = (0..ds.n()).filter(|&i| ds.is_observed(i, j)).map(|i| ds.x_obs.get(i, j)).collect();
        if obs.is_empty() {
            return Err(Error::Data(format!("column {j} has no observed entry")));
        }
        let m = obs.iter().sum::<f64>() / obs.len() as f64;
        for i in 0..ds.n() {
            if !ds.is_observed(i, j) {
                out.set(i, j, m);
            }
        }
    }
    Ok(out)
}

/// Everything `evaluate` reports. Uncertainty fields are `None` when the
/// inputs needed for them were not supplied.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rmse_missing: f64,
    pub sd_rmse: Option<f64>,
    pub avg_interval_width: Option<f64>,
    pub pcc: Option<f64>,
    pub scc: Option<f64>,
    pub coverage: Option<f64>,
    pub n_missing_entries: usize,
}

impl EvalReport {
    /// Column order of [`EvalReport::csv_row`].
    pub const CSV_HEADER: &'static str =
        "rmse_missing,sd_rmse,avg_interval_width,pcc,scc,coverage,n_missing_entries";

    fn fields(&self) -> [(&'static str, String); 7] {
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        [
            ("rmse_missing", self.rmse_missing.to_string()),
            ("sd_rmse", opt(self.sd_rmse)),
            ("avg_interval_width", opt(self.avg_interval_width)),
            ("pcc", opt(self.pcc)),
            ("scc", opt(self.scc)),
            ("coverage", opt(self.coverage)),
            ("n_missing_entries", self.n_missing_entries.to_string()),
        ]
    }

    /// `key = value` lines; absent metrics are omitted.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.fields() {
            if !v.is_empty() {
                let _ = writeln!(s, "{k} = {v}");
            }
        }
        s
    }

    /// One CSV line in [`EvalReport::CSV_HEADER`] order; absent metrics are empty cells.
    pub fn csv_row(&self) -> String {
        self.fields().map(|(_, v)| v).join(",")
    }
}
