//! Datasets, the synthetic oracle benchmark, MNAR mask injection,
//! standardization and CSV files.

mod csv_io;
mod inject;
mod scaler;
mod simulate;
mod special;

pub use csv_io::{load_csv, load_dataset, load_mask_csv, save_csv, save_mask_csv};
pub use inject::{inject_mnar_mask, MaskSpec};
pub use scaler::{destandardize, standardize, Scaler};
pub use simulate::{oracle_conditional, simulate_oracle, OracleConditional, OracleParams, N_ANCHORS};
pub use special::{normal_cdf, normal_pdf, normal_quantile, upper_tail_moments};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// A table with missing entries.
///
/// Missing entries of `x_obs` hold NaN and the matching `mask` entry is 0;
/// observed entries have mask 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x_obs: Tensor,
    pub mask: Tensor,
    /// Complete ground truth, when known (synthetic data, benchmarks).
    pub x_full: Option<Tensor>,
    /// Statistics used to standardize `x_obs`, if it has been standardized.
    pub scaler: Option<Scaler>,
}

impl Dataset {
    /// Checks mask/NaN agreement and that no row or column is entirely missing.
    pub fn new(x_obs: Tensor, mask: Tensor, x_full: Option<Tensor>) -> Result<Self> {
        let ds = Self {
            x_obs,
            mask,
            x_full,
            scaler: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Mask inferred from the NaN markers.
    pub fn from_observed(x_obs: Tensor) -> Result<Self> {
        let mask = x_obs.map(|v| if v.is_nan() { 0.0 } else { 1.0 });
        Self::new(x_obs, mask, None)
    }

    /// Hides the entries of a complete table where `mask` is 0.
    pub fn from_complete(x_full: Tensor, mask: Tensor) -> Result<Self> {
        if x_full.shape() != mask.shape() {
            return Err(Error::shape("dataset", &x_full.shape(), &mask.shape()));
        }
        let x_obs = x_full.zip_map(&mask, |x, r| if r == 1.0 { x } else { f64::NAN });
        Self::new(x_obs, mask, Some(x_full))
    }

    pub fn validate(&self) -> Result<()> {
        let (n, p) = (self.n(), self.p());
        if n == 0 || p == 0 {
            return Err(Error::Data("empty dataset".into()));
        }
        if self.mask.shape() != self.x_obs.shape() {
            return Err(Error::shape("dataset mask", &self.x_obs.shape(), &self.mask.shape()));
        }
        if let Some(full) = &self.x_full {
            if full.shape() != self.x_obs.shape() {
                return Err(Error::shape("dataset ground truth", &self.x_obs.shape(), &full.shape()));
            }
        }
        let mut col_seen = vec![false; p];
        for i in 0..n {
            let mut row_seen = false;
            for j in 0..p {
                let (x, r) = (self.x_obs.get(i, j), self.mask.get(i, j));
                match (r == 1.0, r == 0.0) {
                    (true, _) if x.is_finite() => {
                        row_seen = true;
                        col_seen[j] = true;
                    }
                    (_, true) if x.is_nan() => {}
                    _ => {
                        return Err(Error::Data(format!(
                            "entry ({i}, {j}): mask {r} disagrees with value {x}"
                        )))
                    }
                }
            }
            if !row_seen {
                return Err(Error::Data(format!("row {i} has no observed entry")));
            }
        }
        if let Some(j) = col_seen.iter().position(|&s| !s) {
            return Err(Error::Data(format!("column {j} has no observed entry")));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.x_obs.rows()
    }

    pub fn p(&self) -> usize {
        self.x_obs.cols()
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.mask.get(i, j) == 1.0
    }

    /// Missing coordinates in row-major order.
    pub fn missing_entries(&self) -> Vec<(usize, usize)> {
        let p = self.p();
        self.mask
            .data()
            .iter()
            .enumerate()
            .filter(|(_, &r)| r == 0.0)
            .map(|(k, _)| (k / p, k % p))
            .collect()
    }

    pub fn n_missing(&self) -> usize {
        self.mask.data().iter().filter(|&&r| r == 0.0).count()
    }

    pub fn missing_fraction(&self) -> f64 {
        self.n_missing() as f64 / self.mask.len() as f64
    }

    /// Copy whose values (and ground truth) are standardized with `scaler`.
    pub fn standardized_with(&self, scaler: &Scaler) -> Result<Self> {
        Ok(Self {
            x_obs: scaler.apply(&self.x_obs)?,
            mask: self.mask.clone(),
            x_full: self.x_full.as_ref().map(|t| scaler.apply(t)).transpose()?,
            scaler: Some(scaler.clone()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_and_nan_must_agree() {
        let x = Tensor::from_rows(&[vec![1.0, f64::NAN], vec![2.0, 3.0]]).unwrap();
        let ds = Dataset::from_observed(x.clone()).unwrap();
        assert_eq!(ds.mask.data(), &[1.0, 0.0, 1.0, 1.0]);
        assert_eq!(ds.missing_entries(), vec![(0, 1)]);
        let bad_mask = Tensor::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(Dataset::new(x, bad_mask, None).is_err());
    }

    #[test]
    fn empty_rows_and_columns_are_rejected() {
        let row = Tensor::from_rows(&[vec![f64::NAN, f64::NAN], vec![2.0, 3.0]]).unwrap();
        assert!(Dataset::from_observed(row).is_err());
        let col = Tensor::from_rows(&[vec![1.0, f64::NAN], vec![2.0, f64::NAN]]).unwrap();
        assert!(Dataset::from_observed(col).is_err());
    }
}
