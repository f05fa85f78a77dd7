//! Synthetic anchor/target benchmark with a self-masking threshold rule and
//! closed-form conditional laws for the masked entries.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};

use super::special::{normal_cdf, normal_quantile, upper_tail_moments};
use super::Dataset;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

/// Number of always-observed anchor columns.
pub const N_ANCHORS: usize = 5;

/// Population parameters of one simulation replicate.
///
/// Targets follow `x_t | x_a ~ N(B^T x_a + b, diag(sigma^2))`; a target entry
/// is observed iff it lies at or below `mu + sigma * kappa`, so masked
/// entries sit in the upper tail.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleParams {
    pub seed: u64,
    pub missing_rate: f64,
    /// `p_a x p_t` loading matrix `B`.
    pub loading: Tensor,
    pub intercept: Vec<f64>,
    pub sigma: Vec<f64>,
    pub kappa: f64,
}

impl OracleParams {
    pub fn n_anchors(&self) -> usize {
        self.loading.rows()
    }

    pub fn n_targets(&self) -> usize {
        self.loading.cols()
    }

    pub fn p(&self) -> usize {
        self.n_anchors() + self.n_targets()
    }

    /// Untruncated conditional means `B^T x_a + b` for a batch of anchor rows.
    pub fn conditional_mean(&self, anchors: &Tensor) -> Result<Tensor> {
        let mut mu = anchors.matmul(&self.loading)?;
        for i in 0..mu.rows() {
            for (m, b) in mu.row_mut(i).iter_mut().zip(&self.intercept) {
                *m += b;
            }
        }
        Ok(mu)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(" ");
        let _ = writeln!(s, "seed {}", self.seed);
        let _ = writeln!(s, "missing_rate {:e}", self.missing_rate);
        let _ = writeln!(s, "kappa {:e}", self.kappa);
        let _ = writeln!(s, "n_anchors {}", self.n_anchors());
        let _ = writeln!(s, "n_targets {}", self.n_targets());
        let _ = writeln!(s, "intercept {}", list(&self.intercept));
        let _ = writeln!(s, "sigma {}", list(&self.sigma));
        for k in 0..self.n_anchors() {
            let _ = writeln!(s, "loading {}", list(self.loading.row(k)));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Data(format!("oracle file: {m}"));
        let mut seed = None;
        let mut rate = None;
        let mut kappa = None;
        let mut dims = (None, None);
        let mut intercept = None;
        let mut sigma = None;
        let mut loading: Vec<f64> = Vec::new();
        let mut loading_rows = 0;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let mut words = line.split_whitespace();
            let key = words.next().unwrap_or_default();
            let rest: Vec<&str> = words.collect();
            let floats = || {
                rest.iter()
                    .map(|w| w.parse::<f64>().map_err(|_| bad(format!("bad number `{w}`"))))
                    .collect::<Result<Vec<_>>>()
            };
            let one = || -> Result<&str> {
                match rest.as_slice() {
                    [v] => Ok(v),
                    _ => Err(bad(format!("`{key}` takes one value"))),
                }
            };
            match key {
                "seed" => seed = Some(one()?.parse().map_err(|_| bad("bad seed".into()))?),
                "missing_rate" => rate = Some(floats()?[0]),
                "kappa" => kappa = Some(floats()?[0]),
                "n_anchors" => dims.0 = Some(one()?.parse::<usize>().map_err(|_| bad("bad count".into()))?),
                "n_targets" => dims.1 = Some(one()?.parse::<usize>().map_err(|_| bad("bad count".into()))?),
                "intercept" => intercept = Some(floats()?),
                "sigma" => sigma = Some(floats()?),
                "loading" => {
                    loading.extend(floats()?);
                    loading_rows += 1;
                }
                other => return Err(bad(format!("unknown key `{other}`"))),
            }
        }
        let missing = |k: &str| bad(format!("missing `{k}`"));
        let (pa, pt) = (dims.0.ok_or_else(|| missing("n_anchors"))?, dims.1.ok_or_else(|| missing("n_targets"))?);
        if loading_rows != pa {
            return Err(bad(format!("expected {pa} loading rows, found {loading_rows}")));
        }
        let params = Self {
            seed: seed.ok_or_else(|| missing("seed"))?,
            missing_rate: rate.ok_or_else(|| missing("missing_rate"))?,
            kappa: kappa.ok_or_else(|| missing("kappa"))?,
            loading: Tensor::new(pa, pt, loading).map_err(|e| bad(e.to_string()))?,
            intercept: intercept.ok_or_else(|| missing("intercept"))?,
            sigma: sigma.ok_or_else(|| missing("sigma"))?,
        };
        if params.intercept.len() != pt || params.sigma.len() != pt {
            return Err(bad("intercept/sigma length differs from n_targets".into()));
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Draws one replicate: `n` rows of `p` columns, the first five of which are
/// always-observed anchors, with a per-target-column missing rate `r`.
pub fn simulate_oracle(n: usize, p: usize, r: f64, seed: u64) -> Result<(Dataset, OracleParams)> {
    if p <= N_ANCHORS {
        return Err(Error::Config(format!("need more than {N_ANCHORS} columns, got {p}")));
    }
    if n == 0 {
        return Err(Error::Config("need at least one row".into()));
    }
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::Config(format!("missing rate must lie in (0, 1), got {r}")));
    }
    let pt = p - N_ANCHORS;
    let mut rng = stream(seed, Stream::Simulate);
    let load_dist = Normal::new(0.0, 0.4).expect("valid normal");
    let int_dist = Normal::new(0.0, 0.3).expect("valid normal");
    let sig_dist = Uniform::new(0.6, 1.2).expect("valid range");
    let loading = Tensor::from_fn(N_ANCHORS, pt, |_, _| load_dist.sample(&mut rng));
    let intercept: Vec<f64> = (0..pt).map(|_| int_dist.sample(&mut rng)).collect();
    let sigma: Vec<f64> = (0..pt).map(|_| sig_dist.sample(&mut rng)).collect();
    let kappa = normal_quantile(1.0 - r)?;
    let params = OracleParams {
        seed,
        missing_rate: r,
        loading,
        intercept,
        sigma,
        kappa,
    };

    let anchors = Tensor::from_fn(n, N_ANCHORS, |_, _| rng.sample(StandardNormal));
    let mu = params.conditional_mean(&anchors)?;
    let mut full = Tensor::zeros(n, p);
    let mut mask = Tensor::full(n, p, 1.0);
    for i in 0..n {
        full.row_mut(i)[..N_ANCHORS].copy_from_slice(anchors.row(i));
        for l in 0..pt {
            let e: f64 = rng.sample(StandardNormal);
            let x = mu.get(i, l) + params.sigma[l] * e;
            full.set(i, N_ANCHORS + l, x);
            if x > mu.get(i, l) + params.sigma[l] * kappa {
                mask.set(i, N_ANCHORS + l, 0.0);
            }
        }
    }
    // a column can only end up fully masked for tiny n; keep the dataset
    // valid by revealing its smallest entry
    for l in 0..pt {
        let j = N_ANCHORS + l;
        if (0..n).all(|i| mask.get(i, j) == 0.0) {
            let i = (0..n)
                .min_by(|&a, &b| full.get(a, j).total_cmp(&full.get(b, j)))
                .expect("n > 0");
            mask.set(i, j, 1.0);
        }
    }
    Ok((Dataset::from_complete(full, mask)?, params))
}

/// Closed-form law of each target entry given its anchors and the event that
/// it was masked. Matrices are `n x p`; anchor columns hold NaN.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleConditional {
    pub mean: Tensor,
    pub sd: Tensor,
    pub lower: Tensor,
    pub upper: Tensor,
}

impl OracleConditional {
    pub fn width(&self) -> Tensor {
        self.upper.zip_map(&self.lower, |u, l| u - l)
    }
}

pub fn oracle_conditional(anchors: &Tensor, oracle: &OracleParams, alpha: f64) -> Result<OracleConditional> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if anchors.cols() != oracle.n_anchors() {
        return Err(Error::shape("oracle anchors", &[anchors.rows(), oracle.n_anchors()], &anchors.shape()));
    }
    let (n, pa, p) = (anchors.rows(), oracle.n_anchors(), oracle.p());
    let mu = oracle.conditional_mean(anchors)?;
    let phi_k = normal_cdf(oracle.kappa);
    let z_lo = normal_quantile(phi_k + 0.5 * alpha * (1.0 - phi_k))?;
    let z_hi = normal_quantile(phi_k + (1.0 - 0.5 * alpha) * (1.0 - phi_k))?;
    let (tm, ts) = upper_tail_moments(oracle.kappa);
    let mut out = OracleConditional {
        mean: Tensor::full(n, p, f64::NAN),
        sd: Tensor::full(n, p, f64::NAN),
        lower: Tensor::full(n, p, f64::NAN),
        upper: Tensor::full(n, p, f64::NAN),
    };
    for i in 0..n {
        for l in 0..oracle.n_targets() {
            let (m, s) = (mu.get(i, l), oracle.sigma[l]);
            out.mean.set(i, pa + l, m + s * tm);
            out.sd.set(i, pa + l, s * ts);
            out.lower.set(i, pa + l, m + s * z_lo);
            out.upper.set(i, pa + l, m + s * z_hi);
        }
    }
    Ok(out)
}
