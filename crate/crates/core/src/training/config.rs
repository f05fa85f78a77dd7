use crate::error::{Error, Result};
use crate::networks::DEFAULT_VAR_FLOOR;

/// Adversarial warm start settings.
#[derive(Clone, Debug, PartialEq)]
pub struct EgmConfig {
    pub enabled: bool,
    pub n_iter: usize,
    pub e_units: Vec<usize>,
    pub dz_units: Vec<usize>,
    pub dx_units: Vec<usize>,
}

impl Default for EgmConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            n_iter: 1500,
            e_units: vec![120; 5],
            dz_units: vec![64, 32, 8],
            dx_units: vec![64, 32, 8],
        }
    }
}

/// Everything the optimizer needs. Key names follow the hyperparameter
/// table of the method; `Default` gives its defaults.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub z_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta: f64,
    pub g_units: Vec<usize>,
    pub missingness_units: Vec<usize>,
    pub lr_theta: f64,
    pub lr_phi: f64,
    pub lr_z: f64,
    pub lr_x: f64,
    pub n_inner_steps: usize,
    pub use_bnn: bool,
    pub kl_weight: f64,
    pub test_epochs: usize,
    pub egm_init: EgmConfig,
    /// L2 threshold applied to each gradient block.
    pub grad_clip: f64,
    pub var_floor: f64,
    /// Standard deviation of the Gaussian weight prior (variational layers).
    pub prior_scale: f64,
    /// Coefficient of `sum w^2` on deterministic layers.
    pub weight_decay: f64,
    /// Weight draws averaged per variational ELBO step.
    pub elbo_samples: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            z_dim: 5,
            epochs: 200,
            batch_size: 16,
            beta: 0.01,
            g_units: vec![120; 5],
            missingness_units: vec![64, 64],
            lr_theta: 0.005,
            lr_phi: 0.005,
            lr_z: 0.002,
            lr_x: 0.002,
            n_inner_steps: 3,
            use_bnn: false,
            kl_weight: 5e-5,
            test_epochs: 30,
            egm_init: EgmConfig::default(),
            grad_clip: 5.0,
            var_floor: DEFAULT_VAR_FLOOR,
            prior_scale: 1.0,
            weight_decay: 1e-4,
            elbo_samples: 1,
            seed: 42,
        }
    }
}

pub(crate) fn parse_units(key: &str, value: &str) -> Result<Vec<usize>> {
    let inner = value.trim().trim_start_matches('[').trim_end_matches(']');
    if inner.trim().is_empty() {
        return Ok(Vec::new());
    }
    inner
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .ok()
                .filter(|&u| u > 0)
                .ok_or_else(|| Error::Config(format!("{key}: `{value}` is not a list of positive widths")))
        })
        .collect()
}

pub(crate) fn format_units(u: &[usize]) -> String {
    let parts: Vec<String> = u.iter().map(ToString::to_string).collect();
    format!("[{}]", parts.join(","))
}

pub(crate) fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{value}`")))
}

impl TrainConfig {
    /// Sets one field by its key; `Ok(false)` if the key is not a training key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "z_dim" => self.z_dim = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "beta" => self.beta = parse_value(key, value)?,
            "g_units" => self.g_units = parse_units(key, value)?,
            "missingness_units" => self.missingness_units = parse_units(key, value)?,
            "lr_theta" => self.lr_theta = parse_value(key, value)?,
            "lr_phi" => self.lr_phi = parse_value(key, value)?,
            "lr_z" => self.lr_z = parse_value(key, value)?,
            "lr_x" => self.lr_x = parse_value(key, value)?,
            "n_inner_steps" => self.n_inner_steps = parse_value(key, value)?,
            "use_bnn" => self.use_bnn = parse_value(key, value)?,
            "kl_weight" => self.kl_weight = parse_value(key, value)?,
            "test_epochs" => self.test_epochs = parse_value(key, value)?,
            "egm_init.enabled" => self.egm_init.enabled = parse_value(key, value)?,
            "egm_init.n_iter" => self.egm_init.n_iter = parse_value(key, value)?,
            "egm_init.e_units" => self.egm_init.e_units = parse_units(key, value)?,
            "egm_init.dz_units" => self.egm_init.dz_units = parse_units(key, value)?,
            "egm_init.dx_units" => self.egm_init.dx_units = parse_units(key, value)?,
            "grad_clip" => self.grad_clip = parse_value(key, value)?,
            "var_floor" => self.var_floor = parse_value(key, value)?,
            "prior_scale" => self.prior_scale = parse_value(key, value)?,
            "weight_decay" => self.weight_decay = parse_value(key, value)?,
            "elbo_samples" => self.elbo_samples = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// All fields as `(key, value)` strings that [`TrainConfig::set`] accepts.
    /// Floats use the shortest round-trip form.
    pub fn pairs(&self) -> Vec<(String, String)> {
        let e = &self.egm_init;
        [
            ("z_dim", self.z_dim.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("beta", format!("{:e}", self.beta)),
            ("g_units", format_units(&self.g_units)),
            ("missingness_units", format_units(&self.missingness_units)),
            ("lr_theta", format!("{:e}", self.lr_theta)),
            ("lr_phi", format!("{:e}", self.lr_phi)),
            ("lr_z", format!("{:e}", self.lr_z)),
            ("lr_x", format!("{:e}", self.lr_x)),
            ("n_inner_steps", self.n_inner_steps.to_string()),
            ("use_bnn", self.use_bnn.to_string()),
            ("kl_weight", format!("{:e}", self.kl_weight)),
            ("test_epochs", self.test_epochs.to_string()),
            ("egm_init.enabled", e.enabled.to_string()),
            ("egm_init.n_iter", e.n_iter.to_string()),
            ("egm_init.e_units", format_units(&e.e_units)),
            ("egm_init.dz_units", format_units(&e.dz_units)),
            ("egm_init.dx_units", format_units(&e.dx_units)),
            ("grad_clip", format!("{:e}", self.grad_clip)),
            ("var_floor", format!("{:e}", self.var_floor)),
            ("prior_scale", format!("{:e}", self.prior_scale)),
            ("weight_decay", format!("{:e}", self.weight_decay)),
            ("elbo_samples", self.elbo_samples.to_string()),
            ("seed", self.seed.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, lr) in [
            ("lr_theta", self.lr_theta),
            ("lr_phi", self.lr_phi),
            ("lr_z", self.lr_z),
            ("lr_x", self.lr_x),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("{name} must be positive, got {lr}"));
            }
        }
        if self.z_dim == 0 {
            return bad("z_dim must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.n_inner_steps == 0 {
            return bad("n_inner_steps must be at least 1".into());
        }
        if self.elbo_samples == 0 {
            return bad("elbo_samples must be at least 1".into());
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be nonnegative, got {}", self.beta));
        }
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return bad(format!("kl_weight must be nonnegative, got {}", self.kl_weight));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be nonnegative, got {}", self.weight_decay));
        }
        if !(self.grad_clip > 0.0) {
            return bad(format!("grad_clip must be positive, got {}", self.grad_clip));
        }
        if !(self.var_floor > 0.0 && self.var_floor.is_finite()) {
            return bad(format!("var_floor must be positive, got {}", self.var_floor));
        }
        if !(self.prior_scale > 0.0 && self.prior_scale.is_finite()) {
            return bad(format!("prior_scale must be positive, got {}", self.prior_scale));
        }
        Ok(())
    }
}
