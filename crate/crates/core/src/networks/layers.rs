use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::autodiff::{softplus, Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const LEAKY_SLOPE: f64 = 0.2;

/// Initial posterior scale of variational weights.
pub const INITIAL_WEIGHT_SCALE: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    LeakyRelu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::LeakyRelu => "leaky_relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "leaky_relu" => Some(Activation::LeakyRelu),
            "tanh" => Some(Activation::Tanh),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }

    fn apply<'t>(self, x: Var<'t>) -> Var<'t> {
        match self {
            Activation::LeakyRelu => x.leaky_relu(LEAKY_SLOPE),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }
}

/// Fully connected layer, `y = act(x W + b)` with `W` stored `in x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn zeros(fan_in: usize, fan_out: usize, activation: Activation) -> Self {
        Self {
            weight: Tensor::zeros(fan_in, fan_out),
            bias: Tensor::zeros(1, fan_out),
            activation,
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn init(fan_in: usize, fan_out: usize, activation: Activation, rng: &mut Rng) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Self {
            weight: Tensor::from_fn(fan_in, fan_out, |_, _| rng.random_range(-limit..limit)),
            bias: Tensor::zeros(1, fan_out),
            activation,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols()
    }
}

/// Mean-field Gaussian posterior over the weights of a dense layer.
///
/// Scales are `softplus(raw)` so they stay positive under unconstrained
/// gradient steps. The prior is `N(0, prior_scale^2)` on every weight.
#[derive(Clone, Debug, PartialEq)]
pub struct VariationalDense {
    pub weight_mean: Tensor,
    pub weight_raw_scale: Tensor,
    pub bias_mean: Tensor,
    pub bias_raw_scale: Tensor,
    pub prior_scale: f64,
    pub activation: Activation,
}

impl VariationalDense {
    pub fn init(
        fan_in: usize,
        fan_out: usize,
        activation: Activation,
        prior_scale: f64,
        rng: &mut Rng,
    ) -> Self {
        let det = DenseLayer::init(fan_in, fan_out, activation, rng);
        Self::from_dense(&det, INITIAL_WEIGHT_SCALE, prior_scale)
    }

    pub fn from_dense(layer: &DenseLayer, scale: f64, prior_scale: f64) -> Self {
        let raw = inverse_softplus(scale);
        Self {
            weight_mean: layer.weight.clone(),
            weight_raw_scale: Tensor::full(layer.fan_in(), layer.fan_out(), raw),
            bias_mean: layer.bias.clone(),
            bias_raw_scale: Tensor::full(1, layer.fan_out(), raw),
            prior_scale,
            activation: layer.activation,
        }
    }

    pub fn mean_layer(&self) -> DenseLayer {
        DenseLayer {
            weight: self.weight_mean.clone(),
            bias: self.bias_mean.clone(),
            activation: self.activation,
        }
    }

    /// Closed-form `KL(q || prior)` summed over all weights and biases.
    pub fn kl(&self) -> f64 {
        let s2 = self.prior_scale * self.prior_scale;
        let part = |mean: &Tensor, raw: &Tensor| -> f64 {
            mean.data()
                .iter()
                .zip(raw.data())
                .map(|(&m, &r)| {
                    let ratio = softplus(r).powi(2) / s2;
                    0.5 * (ratio + m * m / s2 - 1.0 - ratio.ln())
                })
                .sum()
        };
        part(&self.weight_mean, &self.weight_raw_scale) + part(&self.bias_mean, &self.bias_raw_scale)
    }

    /// One reparameterized draw of the layer, together with the KL term.
    pub fn sample_and_kl(&self, rng: &mut Rng) -> (DenseLayer, f64) {
        let draw = |mean: &Tensor, raw: &Tensor, rng: &mut Rng| {
            let mut out = mean.clone();
            for (o, &r) in out.data_mut().iter_mut().zip(raw.data()) {
                let eps: f64 = rng.sample(StandardNormal);
                *o += softplus(r) * eps;
            }
            out
        };
        let weight = draw(&self.weight_mean, &self.weight_raw_scale, rng);
        let bias = draw(&self.bias_mean, &self.bias_raw_scale, rng);
        (
            DenseLayer {
                weight,
                bias,
                activation: self.activation,
            },
            self.kl(),
        )
    }
}

pub fn inverse_softplus(y: f64) -> f64 {
    // log(exp(y) - 1), stable for large y
    y + (-(-y).exp_m1()).ln()
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Dense(DenseLayer),
    Variational(VariationalDense),
}

impl Layer {
    pub fn fan_in(&self) -> usize {
        match self {
            Layer::Dense(l) => l.fan_in(),
            Layer::Variational(l) => l.weight_mean.rows(),
        }
    }

    pub fn fan_out(&self) -> usize {
        match self {
            Layer::Dense(l) => l.fan_out(),
            Layer::Variational(l) => l.weight_mean.cols(),
        }
    }

    pub fn activation(&self) -> Activation {
        match self {
            Layer::Dense(l) => l.activation,
            Layer::Variational(l) => l.activation,
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Dense(l) => vec![&l.weight, &l.bias],
            Layer::Variational(l) => vec![
                &l.weight_mean,
                &l.weight_raw_scale,
                &l.bias_mean,
                &l.bias_raw_scale,
            ],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Dense(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Variational(l) => vec![
                &mut l.weight_mean,
                &mut l.weight_raw_scale,
                &mut l.bias_mean,
                &mut l.bias_raw_scale,
            ],
        }
    }

    /// Deterministic layer at the posterior mean (identity for dense layers).
    pub fn mean_layer(&self) -> DenseLayer {
        match self {
            Layer::Dense(l) => l.clone(),
            Layer::Variational(l) => l.mean_layer(),
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> DenseLayer {
        match self {
            Layer::Dense(l) => l.clone(),
            Layer::Variational(l) => l.sample_and_kl(rng).0,
        }
    }

    pub(crate) fn bind_single<'t>(
        &self,
        tape: &'t Tape,
        trainable: bool,
        draw: &mut Draw<'_>,
        acc: &mut Bound<'t>,
    ) -> BoundLayer<'t> {
        let leaf = |t: &Tensor| {
            if trainable {
                tape.var(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        match self {
            Layer::Dense(l) => {
                let w = leaf(&l.weight);
                let b = leaf(&l.bias);
                if trainable {
                    acc.leaves.extend([w, b]);
                    acc.decay.extend([w, b]);
                }
                BoundLayer {
                    w,
                    b,
                    activation: l.activation,
                }
            }
            Layer::Variational(l) => {
                let wm = leaf(&l.weight_mean);
                let wr = leaf(&l.weight_raw_scale);
                let bm = leaf(&l.bias_mean);
                let br = leaf(&l.bias_raw_scale);
                if trainable {
                    acc.leaves.extend([wm, wr, bm, br]);
                    acc.kl_terms.push(kl_on_tape(wm, wr, l.prior_scale));
                    acc.kl_terms.push(kl_on_tape(bm, br, l.prior_scale));
                }
                let (w, b) = match draw {
                    Draw::Mean => (wm, bm),
                    Draw::Sample(rng) => (
                        reparameterize(tape, wm, wr, rng),
                        reparameterize(tape, bm, br, rng),
                    ),
                };
                BoundLayer {
                    w,
                    b,
                    activation: l.activation,
                }
            }
        }
    }
}

fn reparameterize<'t>(tape: &'t Tape, mean: Var<'t>, raw: Var<'t>, rng: &mut Rng) -> Var<'t> {
    let [r, c] = mean.shape();
    let eps = Tensor::from_fn(r, c, |_, _| rng.sample(StandardNormal));
    let noise = raw
        .softplus()
        .mul(tape.constant(eps))
        .expect("noise has the weight's shape");
    mean.add(noise).expect("noise has the weight's shape")
}

fn kl_on_tape<'t>(mean: Var<'t>, raw: Var<'t>, prior_scale: f64) -> Var<'t> {
    let inv = 1.0 / (prior_scale * prior_scale);
    let ratio = raw.softplus().square().scale(inv);
    let m2 = mean.square().scale(inv);
    let log_ratio = ratio.ln();
    ratio
        .add(m2)
        .and_then(|v| v.sub(log_ratio))
        .expect("same shapes")
        .offset(-1.0)
        .sum()
        .scale(0.5)
}

/// How variational layers pick their weights for one forward pass.
pub enum Draw<'r> {
    /// Posterior means; deterministic layers are unaffected either way.
    Mean,
    /// A single reparameterized sample per layer.
    Sample(&'r mut Rng),
}

/// Parameter leaves of a network bound to a tape.
pub struct Bound<'t> {
    pub leaves: Vec<Var<'t>>,
    decay: Vec<Var<'t>>,
    kl_terms: Vec<Var<'t>>,
}

impl<'t> Bound<'t> {
    pub fn new() -> Self {
        Self {
            leaves: Vec::new(),
            decay: Vec::new(),
            kl_terms: Vec::new(),
        }
    }

    /// `sum of squares` over deterministic kernels and biases.
    pub fn l2(&self) -> Option<Var<'t>> {
        sum_vars(self.decay.iter().map(|v| v.square().sum()))
    }

    /// Total KL of every variational layer against its prior.
    pub fn kl(&self) -> Option<Var<'t>> {
        sum_vars(self.kl_terms.iter().copied())
    }

    /// Gradients in the same order as the network's `params_mut()`.
    pub fn gradients(&self, grads: &Gradients) -> Vec<Tensor> {
        self.leaves.iter().map(|&v| grads.wrt(v)).collect()
    }
}

impl Default for Bound<'_> {
    fn default() -> Self {
        Self::new()
    }
}

fn sum_vars<'t>(mut it: impl Iterator<Item = Var<'t>>) -> Option<Var<'t>> {
    let first = it.next()?;
    Some(it.fold(first, |acc, v| acc.add(v).expect("scalars")))
}

pub struct BoundLayer<'t> {
    w: Var<'t>,
    b: Var<'t>,
    activation: Activation,
}

impl<'t> BoundLayer<'t> {
    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>> {
        Ok(self.activation.apply(x.affine(self.w, self.b)?))
    }
}

/// Stack of layers applied in order.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

impl Mlp {
    /// Hidden blocks `input -> units[0] -> ... -> units[k-1]`, all with the
    /// same activation, optionally variational.
    pub fn hidden(
        input: usize,
        units: &[usize],
        activation: Activation,
        variational: Option<f64>,
        rng: &mut Rng,
    ) -> Self {
        let mut layers = Vec::with_capacity(units.len());
        let mut fan_in = input;
        for &u in units {
            layers.push(make_layer(fan_in, u, activation, variational, rng));
            fan_in = u;
        }
        Self { layers }
    }

    pub fn output_dim(&self, input: usize) -> usize {
        self.layers.last().map_or(input, Layer::fan_out)
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn is_variational(&self) -> bool {
        self.layers
            .iter()
            .any(|l| matches!(l, Layer::Variational(_)))
    }

    pub fn mean_network(&self) -> Mlp {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Layer::Dense(l.mean_layer()))
                .collect(),
        }
    }

    pub fn sampled_network(&self, rng: &mut Rng) -> Mlp {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Layer::Dense(l.sample(rng)))
                .collect(),
        }
    }

    pub fn bind<'t>(
        &self,
        name: &'static str,
        tape: &'t Tape,
        trainable: bool,
        draw: &mut Draw<'_>,
        acc: &mut Bound<'t>,
    ) -> BoundMlp<'t> {
        BoundMlp {
            name,
            layers: self
                .layers
                .iter()
                .map(|l| l.bind_single(tape, trainable, draw, acc))
                .collect(),
        }
    }
}

pub(crate) fn make_layer(
    fan_in: usize,
    fan_out: usize,
    activation: Activation,
    variational: Option<f64>,
    rng: &mut Rng,
) -> Layer {
    match variational {
        Some(prior) => Layer::Variational(VariationalDense::init(
            fan_in, fan_out, activation, prior, rng,
        )),
        None => Layer::Dense(DenseLayer::init(fan_in, fan_out, activation, rng)),
    }
}

pub struct BoundMlp<'t> {
    name: &'static str,
    layers: Vec<BoundLayer<'t>>,
}

impl<'t> BoundMlp<'t> {
    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(h)?;
            if !h.value().is_finite() {
                return Err(Error::NonFinite(format!("{} layer {i}", self.name)));
            }
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn kl_closed_form_values() {
        let layer = VariationalDense {
            weight_mean: Tensor::scalar(0.0),
            weight_raw_scale: Tensor::scalar(inverse_softplus(1.0)),
            bias_mean: Tensor::zeros(1, 0),
            bias_raw_scale: Tensor::zeros(1, 0),
            prior_scale: 1.0,
            activation: Activation::Identity,
        };
        assert!(layer.kl().abs() < 1e-12);
        let shifted = VariationalDense {
            weight_mean: Tensor::scalar(1.0),
            ..layer
        };
        assert!((shifted.kl() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn kl_matches_monte_carlo() {
        // KL(N(m, s^2) || N(0, p^2)) = E_q[log q - log p]
        let (m, s, p) = (0.7, 0.4, 1.3);
        let layer = VariationalDense {
            weight_mean: Tensor::scalar(m),
            weight_raw_scale: Tensor::scalar(inverse_softplus(s)),
            bias_mean: Tensor::zeros(1, 0),
            bias_raw_scale: Tensor::zeros(1, 0),
            prior_scale: p,
            activation: Activation::Identity,
        };
        let mut rng = Rng::seed_from_u64(3);
        let n = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let e: f64 = rng.sample(StandardNormal);
            let w = m + s * e;
            let log_q = -0.5 * e * e - s.ln();
            let log_p = -0.5 * (w / p).powi(2) - p.ln();
            acc += log_q - log_p;
        }
        let mc = acc / n as f64;
        let exact = layer.kl();
        assert!((mc - exact).abs() / exact < 0.01, "mc {mc} exact {exact}");
    }

    #[test]
    fn inverse_softplus_round_trips() {
        for y in [1e-4, 0.05, 1.0, 7.5, 40.0] {
            assert!((softplus(inverse_softplus(y)) - y).abs() < 1e-12 * y.max(1.0));
        }
    }

    #[test]
    fn sampled_kl_is_nonnegative() {
        let mut rng = Rng::seed_from_u64(11);
        for _ in 0..20 {
            let l = VariationalDense::init(4, 3, Activation::Tanh, 0.5, &mut rng);
            let (drawn, kl) = l.sample_and_kl(&mut rng);
            assert!(kl >= 0.0);
            assert_eq!(drawn.weight.shape(), [4, 3]);
        }
    }
}
