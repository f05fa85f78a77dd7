use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Per-feature location and scale.
#[derive(Clone, Debug, PartialEq)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    /// Statistics over the finite (observed) entries of each column, with the
    /// population (1/n) standard deviation.
    pub fn fit(table: &Tensor) -> Result<Self> {
        let (n, p) = (table.rows(), table.cols());
        let mut mean = vec![0.0; p];
        let mut std = vec![0.0; p];
        for j in 0..p {
            let col: Vec<f64> = (0..n)
                .map(|i| table.get(i, j))
                .filter(|v| !v.is_nan())
                .collect();
            if col.is_empty() {
                return Err(Error::Data(format!("column {j} has no observed values")));
            }
            let m = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / col.len() as f64;
            let s = var.sqrt();
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::Data(format!("column {j} is constant; cannot standardize")));
            }
            mean[j] = m;
            std[j] = s;
        }
        Ok(Self { mean, std })
    }

    pub fn p(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, table: &Tensor) -> Result<()> {
        if table.cols() != self.p() {
            return Err(Error::shape("scaler", &[table.rows(), self.p()], &table.shape()));
        }
        Ok(())
    }

    /// `(x - mean) / std`; NaN markers pass through.
    pub fn apply(&self, table: &Tensor) -> Result<Tensor> {
        self.check(table)?;
        Ok(Tensor::from_fn(table.rows(), table.cols(), |i, j| {
            (table.get(i, j) - self.mean[j]) / self.std[j]
        }))
    }

    pub fn invert(&self, table: &Tensor) -> Result<Tensor> {
        self.check(table)?;
        Ok(Tensor::from_fn(table.rows(), table.cols(), |i, j| {
            table.get(i, j) * self.std[j] + self.mean[j]
        }))
    }

    /// Maps standard deviations (or interval widths) back to original units.
    pub fn invert_scale(&self, table: &Tensor) -> Result<Tensor> {
        self.check(table)?;
        Ok(Tensor::from_fn(table.rows(), table.cols(), |i, j| {
            table.get(i, j) * self.std[j]
        }))
    }
}

/// Standardizes each column with statistics from its observed entries.
pub fn standardize(table: &Tensor) -> Result<(Tensor, Scaler)> {
    let scaler = Scaler::fit(table)?;
    Ok((scaler.apply(table)?, scaler))
}

pub fn destandardize(table: &Tensor, scaler: &Scaler) -> Result<Tensor> {
    scaler.invert(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_point_column() {
        let t = Tensor::from_rows(&[vec![0.0], vec![2.0]]).unwrap();
        let (s, _) = standardize(&t).unwrap();
        assert_eq!(s.data(), &[-1.0, 1.0]);
    }

    #[test]
    fn constant_column_is_named() {
        let t = Tensor::from_rows(&[vec![1.0, 5.0], vec![2.0, 5.0]]).unwrap();
        let err = standardize(&t).unwrap_err().to_string();
        assert!(err.contains("column 1"), "{err}");
    }

    #[test]
    fn missing_markers_survive() {
        let t = Tensor::from_rows(&[vec![1.0], vec![f64::NAN], vec![3.0]]).unwrap();
        let (s, sc) = standardize(&t).unwrap();
        assert!(s.get(1, 0).is_nan());
        assert!(destandardize(&s, &sc).unwrap().get(1, 0).is_nan());
        assert_eq!(sc.mean, vec![2.0]);
    }

    proptest! {
        #[test]
        fn round_trip(vals in proptest::collection::vec(-1e3f64..1e3, 6)) {
            let t = Tensor::new(3, 2, vals).unwrap();
            prop_assume!(Scaler::fit(&t).is_ok());
            let (s, sc) = standardize(&t).unwrap();
            let back = destandardize(&s, &sc).unwrap();
            for (a, b) in back.data().iter().zip(t.data()) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }
    }
}
