//! Logistic self-masking for complete tables.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::Dataset;
use crate::autodiff::{sigmoid, Tensor};
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

/// The fitted masking mechanism.
///
/// Scores are `s = 0.6 x + 0.4 tanh(x W)` and an entry is observed with
/// probability `sigmoid(beta0 - s)`, so large values tend to go missing.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSpec {
    pub coupling: Tensor,
    pub beta0: f64,
    pub target_missing_rate: f64,
    /// Entries flipped back to observed by the repair pass.
    pub repaired: usize,
}

/// Masks a complete standardized table so that the fraction of missing
/// entries is `target_rate` on average, with every row and column keeping
/// at least one observed entry.
pub fn inject_mnar_mask(x_full: &Tensor, target_rate: f64, seed: u64) -> Result<(Dataset, MaskSpec)> {
    if !(target_rate > 0.0 && target_rate < 1.0) {
        return Err(Error::Config(format!("target rate must lie in (0, 1), got {target_rate}")));
    }
    if !x_full.is_finite() || x_full.is_empty() {
        return Err(Error::Data("mask injection needs a complete, non-empty table".into()));
    }
    let (n, p) = (x_full.rows(), x_full.cols());
    let mut rng = stream(seed, Stream::Mask);
    let wd = Normal::new(0.0, 0.3 / (p as f64).sqrt()).expect("valid normal");
    let coupling = Tensor::from_fn(p, p, |_, _| wd.sample(&mut rng));
    let mixed = x_full.matmul(&coupling)?;
    let scores = x_full.zip_map(&mixed, |x, m| 0.6 * x + 0.4 * m.tanh());
    let beta0 = calibrate(scores.data(), 1.0 - target_rate);

    let prob = scores.map(|s| sigmoid(beta0 - s));
    let mut mask = Tensor::zeros(n, p);
    for (r, &q) in mask.data_mut().iter_mut().zip(prob.data()) {
        *r = if rng.random::<f64>() < q { 1.0 } else { 0.0 };
    }

    let mut repaired = 0;
    for i in 0..n {
        if mask.row(i).iter().all(|&r| r == 0.0) {
            let j = argmax((0..p).map(|j| prob.get(i, j)));
            mask.set(i, j, 1.0);
            repaired += 1;
        }
    }
    for j in 0..p {
        if (0..n).all(|i| mask.get(i, j) == 0.0) {
            let i = argmax((0..n).map(|i| prob.get(i, j)));
            mask.set(i, j, 1.0);
            repaired += 1;
        }
    }
    let ds = Dataset::from_complete(x_full.clone(), mask)?;
    Ok((
        ds,
        MaskSpec {
            coupling,
            beta0,
            target_missing_rate: target_rate,
            repaired,
        },
    ))
}

fn argmax(it: impl Iterator<Item = f64>) -> usize {
    it.enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (k, v)| if v > best.1 { (k, v) } else { best })
        .0
}

/// Bisection for `beta0` with `mean(sigmoid(beta0 - s)) = target`.
fn calibrate(scores: &[f64], target: f64) -> f64 {
    let mean_prob = |b: f64| scores.iter().map(|&s| sigmoid(b - s)).sum::<f64>() / scores.len() as f64;
    let (mut lo, mut hi) = (-1.0, 1.0);
    while mean_prob(lo) > target {
        lo *= 2.0;
    }
    while mean_prob(hi) < target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_prob(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    0.5 * (lo + hi)
}
