use crate::error::{Error, Result};
use crate::training::{parse_value, TrainConfig};

/// Sampler settings. Keys live under `posterior.`.
#[derive(Clone, Debug, PartialEq)]
pub struct HmcConfig {
    /// Retained draws.
    pub n_mcmc: usize,
    pub burn_in: usize,
    /// Initial leapfrog step size for both blocks.
    pub step_size: f64,
    pub n_leapfrog: usize,
    pub target_accept: f64,
    /// Share of `burn_in` during which step sizes adapt.
    pub adapt_fraction: f64,
    pub alpha: f64,
    /// Redraw (θ, φ) from the variational posterior for every retained sweep
    /// (Bayesian layers only).
    pub resample_weights: bool,
    pub seed: u64,
}

impl Default for HmcConfig {
    fn default() -> Self {
        Self {
            n_mcmc: 1000,
            burn_in: 1000,
            step_size: 0.1,
            n_leapfrog: 5,
            target_accept: 0.75,
            adapt_fraction: 0.5,
            alpha: 0.05,
            resample_weights: true,
            seed: TrainConfig::default().seed,
        }
    }
}

impl HmcConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "posterior.n_mcmc" => self.n_mcmc = parse_value(key, value)?,
            "posterior.burn_in" => self.burn_in = parse_value(key, value)?,
            "posterior.step_size" => self.step_size = parse_value(key, value)?,
            "posterior.n_leapfrog" => self.n_leapfrog = parse_value(key, value)?,
            "posterior.target_accept" => self.target_accept = parse_value(key, value)?,
            "posterior.adapt_fraction" => self.adapt_fraction = parse_value(key, value)?,
            "posterior.alpha" => self.alpha = parse_value(key, value)?,
            "posterior.resample_weights" => self.resample_weights = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn pairs(&self) -> Vec<(String, String)> {
        [
            ("posterior.n_mcmc", self.n_mcmc.to_string()),
            ("posterior.burn_in", self.burn_in.to_string()),
            ("posterior.step_size", format!("{:e}", self.step_size)),
            ("posterior.n_leapfrog", self.n_leapfrog.to_string()),
            ("posterior.target_accept", format!("{:e}", self.target_accept)),
            ("posterior.adapt_fraction", format!("{:e}", self.adapt_fraction)),
            ("posterior.alpha", format!("{:e}", self.alpha)),
            ("posterior.resample_weights", self.resample_weights.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Sweeps during which dual averaging runs.
    pub fn adapt_sweeps(&self) -> usize {
        (self.adapt_fraction * self.burn_in as f64).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_mcmc == 0 {
            return bad("posterior.n_mcmc must be at least 1".into());
        }
        if self.n_leapfrog == 0 {
            return bad("posterior.n_leapfrog must be at least 1".into());
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad(format!("posterior.step_size must be positive, got {}", self.step_size));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return bad(format!("posterior.target_accept must lie in (0, 1), got {}", self.target_accept));
        }
        if !(0.0..=1.0).contains(&self.adapt_fraction) {
            return bad(format!("posterior.adapt_fraction must lie in [0, 1], got {}", self.adapt_fraction));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("posterior.alpha must lie in (0, 1), got {}", self.alpha));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_round_trip() {
        let c = HmcConfig::default();
        assert_eq!((c.n_mcmc, c.burn_in, c.n_leapfrog), (1000, 1000, 5));
        assert_eq!((c.step_size, c.alpha, c.target_accept), (0.1, 0.05, 0.75));
        assert_eq!(c.adapt_sweeps(), 500);
        c.validate().unwrap();
        let mut d = HmcConfig::default();
        d.alpha = 0.1;
        let mut back = HmcConfig::default();
        for (k, v) in d.pairs() {
            assert!(back.set(&k, &v).unwrap());
        }
        assert_eq!(back, d);
    }

    #[test]
    fn invalid_values() {
        let mut c = HmcConfig::default();
        c.target_accept = 1.0;
        assert!(c.validate().is_err());
        let mut c = HmcConfig::default();
        c.n_mcmc = 0;
        assert!(c.validate().is_err());
    }
}
