use super::hmc::PosteriorDraws;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Empirical quantile by linear interpolation between order statistics at
/// position `q (S - 1)` (zero-based). `sorted` must be ascending.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation with the `S - 1` denominator.
pub fn sample_sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Effective sample size with Geyer's initial positive sequence estimator.
pub fn effective_sample_size(chain: &[f64]) -> f64 {
    let n = chain.len();
    if n < 4 {
        return n as f64;
    }
    let m = mean(chain);
    let c0 = chain.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return n as f64;
    }
    let rho = |k: usize| {
        (0..n - k).map(|t| (chain[t] - m) * (chain[t + k] - m)).sum::<f64>() / n as f64 / c0
    };
    let mut sum = 0.0;
    let mut k = 0;
    while k + 1 < n {
        let pair = rho(k) + rho(k + 1);
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        k += 2;
    }
    let tau = (2.0 * sum - 1.0).max(1.0 / n as f64);
    n as f64 / tau
}

/// Per-missing-entry prediction intervals.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionIntervals {
    pub entries: Vec<(usize, usize)>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub alpha: f64,
}

impl PredictionIntervals {
    pub fn width(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct PosteriorSummary {
    /// Completed table: observed entries as given, missing entries the
    /// posterior mean.
    pub point: Tensor,
    pub intervals: PredictionIntervals,
    /// Posterior standard deviation per missing entry, aligned with
    /// `intervals.entries`.
    pub sd: Vec<f64>,
}

/// Posterior-mean completion; defined for any number of draws.
pub fn posterior_mean(draws: &PosteriorDraws) -> Tensor {
    let mut point = draws.x_obs.clone();
    for (e, &(i, j)) in draws.entries.iter().enumerate() {
        point.set(i, j, mean(&draws.entry_draws(e)));
    }
    point
}

/// Posterior mean, standard deviation and `[Q(α/2), Q(1 - α/2)]` for every
/// missing entry. Needs at least two draws.
pub fn posterior_summaries(draws: &PosteriorDraws, alpha: f64) -> Result<PosteriorSummary> {
    if draws.n_draws < 2 {
        return Err(Error::Data(format!(
            "intervals need at least 2 draws, got {}",
            draws.n_draws
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let k = draws.entries.len();
    let mut point = draws.x_obs.clone();
    let (mut lower, mut upper, mut sd) = (Vec::with_capacity(k), Vec::with_capacity(k), Vec::with_capacity(k));
    for (e, &(i, j)) in draws.entries.iter().enumerate() {
        let mut v = draws.entry_draws(e);
        point.set(i, j, mean(&v));
        sd.push(sample_sd(&v));
        v.sort_by(f64::total_cmp);
        lower.push(quantile_sorted(&v, alpha / 2.0));
        upper.push(quantile_sorted(&v, 1.0 - alpha / 2.0));
    }
    Ok(PosteriorSummary {
        point,
        intervals: PredictionIntervals {
            entries: draws.entries.clone(),
            lower,
            upper,
            alpha,
        },
        sd,
    })
}
