use crate::autodiff::Tensor;
use crate::data::Dataset;
use crate::error::{Error, Result};

pub const KNN_NEIGHBORS: usize = 5;

/// Distance over co-observed coordinates, scaled by `sqrt(p / #co-observed)`;
/// `None` when the rows share no observed coordinate.
pub fn nan_euclidean(a: &[f64], b: &[f64]) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (x, y) in a.iter().zip(b) {
        if !x.is_nan() && !y.is_nan() {
            sum += (x - y) * (x - y);
            count += 1;
        }
    }
    (count > 0).then(|| (sum * a.len() as f64 / count as f64).sqrt())
}

fn column_means(x: &Tensor) -> Vec<f64> {
    (0..x.cols())
        .map(|j| {
            let (s, c) = (0..x.rows())
                .map(|i| x.get(i, j))
                .filter(|v| !v.is_nan())
                .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
            s / c as f64
        })
        .collect()
}

/// Fills each missing entry with the mean of that feature over the `k`
/// nearest rows observing it (ties broken by row index). Entries with no
/// eligible donor get the observed column mean.
pub fn knn_impute_with(ds: &Dataset, k: usize) -> Result<Tensor> {
    if ds.n() == 0 || ds.p() == 0 {
        return Err(Error::Data("cannot impute an empty dataset".into()));
    }
    let x = &ds.x_obs;
    let means = column_means(x);
    if let Some(j) = means.iter().position(|m| m.is_nan()) {
        return Err(Error::Data(format!("column {j} has no observed entry")));
    }
    let mut out = x.clone();
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(ds.n());
    for i in 0..ds.n() {
        let missing: Vec<usize> = (0..ds.p()).filter(|&j| x.get(i, j).is_nan()).collect();
        if missing.is_empty() {
            continue;
        }
        order.clear();
        order.extend(
            (0..ds.n())
                .filter(|&r| r != i)
                .filter_map(|r| nan_euclidean(x.row(i), x.row(r)).map(|d| (d, r))),
        );
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for j in missing {
            let (mut sum, mut used) = (0.0, 0usize);
            for &(_, r) in &order {
                let v = x.get(r, j);
                if !v.is_nan() {
                    sum += v;
                    used += 1;
                    if used == k {
                        break;
                    }
                }
            }
            out.set(i, j, if used > 0 { sum / used as f64 } else { means[j] });
        }
    }
    Ok(out)
}

pub fn knn_impute_init(ds: &Dataset) -> Result<Tensor> {
    knn_impute_with(ds, KNN_NEIGHBORS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn identical_rows_donate_their_value() {
        let mut rows = vec![vec![1.0, 2.0, 3.0]; 8];
        rows[3][1] = f64::NAN;
        let ds = Dataset::from_observed(Tensor::from_rows(&rows).unwrap()).unwrap();
        assert_eq!(knn_impute_init(&ds).unwrap().get(3, 1), 2.0);
    }

    #[test]
    fn complete_data_is_unchanged() {
        let t = Tensor::from_fn(6, 3, |i, j| (i * 3 + j) as f64);
        let ds = Dataset::from_observed(t.clone()).unwrap();
        assert_eq!(knn_impute_init(&ds).unwrap(), t);
    }

    // exhaustive oracle: for each missing entry, score every donor row and
    // take the k smallest (distance, index) pairs
    #[test]
    fn matches_brute_force_oracle() {
        let mut rng = crate::rng::Rng::seed_from_u64(12);
        for _ in 0..20 {
            let t = Tensor::from_fn(10, 3, |_, _| {
                if rng.random::<f64>() < 0.25 {
                    f64::NAN
                } else {
                    rng.random_range(-2.0..2.0)
                }
            });
            let Ok(ds) = Dataset::from_observed(t.clone()) else { continue };
            let got = knn_impute_init(&ds).unwrap();
            for i in 0..10 {
                for j in 0..3 {
                    if !t.get(i, j).is_nan() {
                        assert_eq!(got.get(i, j), t.get(i, j));
                        continue;
                    }
                    let mut donors: Vec<(f64, usize)> = Vec::new();
                    for r in 0..10 {
                        if r == i || t.get(r, j).is_nan() {
                            continue;
                        }
                        let mut s = 0.0;
                        let mut c = 0;
                        for q in 0..3 {
                            if !t.get(i, q).is_nan() && !t.get(r, q).is_nan() {
                                s += (t.get(i, q) - t.get(r, q)).powi(2);
                                c += 1;
                            }
                        }
                        if c > 0 {
                            donors.push(((s * 3.0 / c as f64).sqrt(), r));
                        }
                    }
                    donors.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                    let expect = if donors.is_empty() {
                        let obs: Vec<f64> = (0..10).map(|r| t.get(r, j)).filter(|v| !v.is_nan()).collect();
                        obs.iter().sum::<f64>() / obs.len() as f64
                    } else {
                        let take = &donors[..donors.len().min(5)];
                        take.iter().map(|&(_, r)| t.get(r, j)).sum::<f64>() / take.len() as f64
                    };
                    assert_eq!(got.get(i, j), expect);
                }
            }
        }
    }
}
