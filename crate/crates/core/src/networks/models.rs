use super::layers::{make_layer, Activation, Bound, BoundLayer, BoundMlp, Draw, Layer, Mlp};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Lower bound added to every generator variance.
pub const DEFAULT_VAR_FLOOR: f64 = 1e-4;

/// Two-headed generator `z -> (mean(z), variance(z))` with a shared trunk.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorNet {
    pub trunk: Mlp,
    pub mean_head: Layer,
    pub var_head: Layer,
    pub var_floor: f64,
}

impl GeneratorNet {
    /// `variational = Some(prior_scale)` builds every layer as a
    /// mean-field Gaussian layer.
    pub fn new(
        z_dim: usize,
        p: usize,
        units: &[usize],
        variational: Option<f64>,
        var_floor: f64,
        rng: &mut Rng,
    ) -> Self {
        let trunk = Mlp::hidden(z_dim, units, Activation::LeakyRelu, variational, rng);
        let h = trunk.output_dim(z_dim);
        Self {
            mean_head: make_layer(h, p, Activation::Identity, variational, rng),
            var_head: make_layer(h, p, Activation::Identity, variational, rng),
            trunk,
            var_floor,
        }
    }

    pub fn z_dim(&self) -> usize {
        self.trunk
            .layers
            .first()
            .map_or_else(|| self.mean_head.fan_in(), Layer::fan_in)
    }

    pub fn output_dim(&self) -> usize {
        self.mean_head.fan_out()
    }

    pub fn is_variational(&self) -> bool {
        self.trunk.is_variational() || matches!(self.mean_head, Layer::Variational(_))
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = self.trunk.params();
        out.extend(self.mean_head.params());
        out.extend(self.var_head.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.trunk.params_mut();
        out.extend(self.mean_head.params_mut());
        out.extend(self.var_head.params_mut());
        out
    }

    /// Deterministic copy at the posterior mean of every variational layer.
    pub fn mean_network(&self) -> Self {
        Self {
            trunk: self.trunk.mean_network(),
            mean_head: Layer::Dense(self.mean_head.mean_layer()),
            var_head: Layer::Dense(self.var_head.mean_layer()),
            var_floor: self.var_floor,
        }
    }

    /// Deterministic network with one weight draw per variational layer.
    pub fn sampled_network(&self, rng: &mut Rng) -> Self {
        Self {
            trunk: self.trunk.sampled_network(rng),
            mean_head: Layer::Dense(self.mean_head.sample(rng)),
            var_head: Layer::Dense(self.var_head.sample(rng)),
            var_floor: self.var_floor,
        }
    }

    pub fn bind<'t>(
        &self,
        tape: &'t Tape,
        trainable: bool,
        draw: &mut Draw<'_>,
        acc: &mut Bound<'t>,
    ) -> BoundGenerator<'t> {
        BoundGenerator {
            trunk: self.trunk.bind("generator trunk", tape, trainable, draw, acc),
            mean: self.mean_head.bind_single(tape, trainable, draw, acc),
            var: self.var_head.bind_single(tape, trainable, draw, acc),
            var_floor: self.var_floor,
        }
    }

    /// Mean and variance for a batch of latent rows, evaluated at the
    /// posterior mean weights.
    pub fn forward(&self, z: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_input(z)?;
        let tape = Tape::new();
        let mut acc = Bound::new();
        let g = self.bind(&tape, false, &mut Draw::Mean, &mut acc);
        let (m, v) = g.forward(tape.constant(z.clone()))?;
        Ok(((*m.value()).clone(), (*v.value()).clone()))
    }

    fn check_input(&self, z: &Tensor) -> Result<()> {
        if z.cols() != self.z_dim() {
            return Err(Error::shape("generator input", &z.shape(), &[z.rows(), self.z_dim()]));
        }
        Ok(())
    }

    pub fn to_layers(&self) -> Vec<Layer> {
        let mut out = self.trunk.layers.clone();
        out.push(self.mean_head.clone());
        out.push(self.var_head.clone());
        out
    }

    pub fn from_layers(mut layers: Vec<Layer>, var_floor: f64) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::Data("generator needs two head layers".into()));
        }
        let var_head = layers.pop().expect("checked length");
        let mean_head = layers.pop().expect("checked length");
        let net = Self {
            trunk: Mlp { layers },
            mean_head,
            var_head,
            var_floor,
        };
        check_chain(&net.trunk.layers, Some(&net.mean_head))?;
        check_chain(&net.trunk.layers, Some(&net.var_head))?;
        Ok(net)
    }
}

pub struct BoundGenerator<'t> {
    trunk: BoundMlp<'t>,
    mean: BoundLayer<'t>,
    var: BoundLayer<'t>,
    var_floor: f64,
}

impl<'t> BoundGenerator<'t> {
    pub fn forward(&self, z: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let h = self.trunk.forward(z)?;
        let mean = self.mean.forward(h)?;
        if !mean.value().is_finite() {
            return Err(Error::NonFinite("generator mean head".into()));
        }
        let var = self.var.forward(h)?.softplus().offset(self.var_floor);
        if !var.value().is_finite() {
            return Err(Error::NonFinite("generator variance head".into()));
        }
        Ok((mean, var))
    }
}

/// Trunk of hidden layers followed by a linear head. Used for the
/// missingness network (`x -> logits`), the encoder (`x -> z`) and the
/// discriminators (`input -> one logit`).
#[derive(Clone, Debug, PartialEq)]
pub struct FeedForward {
    pub trunk: Mlp,
    pub head: Layer,
}

pub type MissingnessNet = FeedForward;
pub type EncoderNet = FeedForward;
pub type DiscriminatorNet = FeedForward;

impl FeedForward {
    pub fn new(
        input: usize,
        units: &[usize],
        output: usize,
        variational: Option<f64>,
        rng: &mut Rng,
    ) -> Self {
        let trunk = Mlp::hidden(input, units, Activation::LeakyRelu, variational, rng);
        let h = trunk.output_dim(input);
        Self {
            head: make_layer(h, output, Activation::Identity, variational, rng),
            trunk,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.trunk
            .layers
            .first()
            .map_or_else(|| self.head.fan_in(), Layer::fan_in)
    }

    pub fn output_dim(&self) -> usize {
        self.head.fan_out()
    }

    pub fn is_variational(&self) -> bool {
        self.trunk.is_variational() || matches!(self.head, Layer::Variational(_))
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = self.trunk.params();
        out.extend(self.head.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.trunk.params_mut();
        out.extend(self.head.params_mut());
        out
    }

    pub fn mean_network(&self) -> Self {
        Self {
            trunk: self.trunk.mean_network(),
            head: Layer::Dense(self.head.mean_layer()),
        }
    }

    pub fn sampled_network(&self, rng: &mut Rng) -> Self {
        Self {
            trunk: self.trunk.sampled_network(rng),
            head: Layer::Dense(self.head.sample(rng)),
        }
    }

    pub fn bind<'t>(
        &self,
        name: &'static str,
        tape: &'t Tape,
        trainable: bool,
        draw: &mut Draw<'_>,
        acc: &mut Bound<'t>,
    ) -> BoundFeedForward<'t> {
        BoundFeedForward {
            name,
            trunk: self.trunk.bind(name, tape, trainable, draw, acc),
            head: self.head.bind_single(tape, trainable, draw, acc),
        }
    }

    /// Batch forward pass at the posterior mean weights.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.input_dim() {
            return Err(Error::shape("network input", &x.shape(), &[x.rows(), self.input_dim()]));
        }
        let tape = Tape::new();
        let mut acc = Bound::new();
        let net = self.bind("network", &tape, false, &mut Draw::Mean, &mut acc);
        let out = net.forward(tape.constant(x.clone()))?;
        Ok((*out.value()).clone())
    }

    pub fn to_layers(&self) -> Vec<Layer> {
        let mut out = self.trunk.layers.clone();
        out.push(self.head.clone());
        out
    }

    pub fn from_layers(mut layers: Vec<Layer>) -> Result<Self> {
        let head = layers
            .pop()
            .ok_or_else(|| Error::Data("network has no layers".into()))?;
        check_chain(&layers, Some(&head))?;
        Ok(Self {
            trunk: Mlp { layers },
            head,
        })
    }
}

pub struct BoundFeedForward<'t> {
    name: &'static str,
    trunk: BoundMlp<'t>,
    head: BoundLayer<'t>,
}

impl<'t> BoundFeedForward<'t> {
    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>> {
        let out = self.head.forward(self.trunk.forward(x)?)?;
        if !out.value().is_finite() {
            return Err(Error::NonFinite(format!("{} head", self.name)));
        }
        Ok(out)
    }
}

fn check_chain(layers: &[Layer], head: Option<&Layer>) -> Result<()> {
    let all: Vec<&Layer> = layers.iter().chain(head).collect();
    for pair in all.windows(2) {
        if pair[0].fan_out() != pair[1].fan_in() {
            return Err(Error::Data(format!(
                "layer widths do not chain: {} then {}",
                pair[0].fan_out(),
                pair[1].fan_in()
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::layers::DenseLayer;
    use super::*;
    use rand::{Rng as _, SeedableRng};

    fn zero_generator(z_dim: usize, p: usize) -> GeneratorNet {
        GeneratorNet {
            trunk: Mlp {
                layers: vec![Layer::Dense(DenseLayer::zeros(z_dim, 4, Activation::LeakyRelu))],
            },
            mean_head: Layer::Dense(DenseLayer::zeros(4, p, Activation::Identity)),
            var_head: Layer::Dense(DenseLayer::zeros(4, p, Activation::Identity)),
            var_floor: DEFAULT_VAR_FLOOR,
        }
    }

    #[test]
    fn zero_generator_outputs() {
        let g = zero_generator(3, 2);
        let (m, v) = g.forward(&Tensor::from_fn(2, 3, |i, j| (i + j) as f64)).unwrap();
        assert!(m.data().iter().all(|&x| x == 0.0));
        for &x in v.data() {
            assert!((x - (std::f64::consts::LN_2 + 1e-4)).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_like_generator() {
        let mut g = GeneratorNet {
            trunk: Mlp { layers: vec![] },
            mean_head: Layer::Dense(DenseLayer::zeros(1, 1, Activation::Identity)),
            var_head: Layer::Dense(DenseLayer::zeros(1, 1, Activation::Identity)),
            var_floor: DEFAULT_VAR_FLOOR,
        };
        if let Layer::Dense(l) = &mut g.mean_head {
            l.weight.set(0, 0, 1.0);
        }
        let (m, _) = g.forward(&Tensor::scalar(1.0)).unwrap();
        assert_eq!(m.item(), 1.0);
    }

    #[test]
    fn batch_rows_equal_single_calls() {
        let mut rng = Rng::seed_from_u64(5);
        let g = GeneratorNet::new(3, 6, &[16, 16], None, DEFAULT_VAR_FLOOR, &mut rng);
        let m = FeedForward::new(6, &[8, 8], 6, None, &mut rng);
        let z = Tensor::from_fn(3, 3, |_, _| rng.random_range(-2.0..2.0));
        let x = Tensor::from_fn(3, 6, |_, _| rng.random_range(-2.0..2.0));
        let (bm, bv) = g.forward(&z).unwrap();
        let bl = m.forward(&x).unwrap();
        for i in 0..3 {
            let zi = z.select_rows(&[i]);
            let (sm, sv) = g.forward(&zi).unwrap();
            assert_eq!(sm.data(), bm.row(i));
            assert_eq!(sv.data(), bv.row(i));
            let sl = m.forward(&x.select_rows(&[i])).unwrap();
            assert_eq!(sl.data(), bl.row(i));
        }
        // permutation equivariance
        let perm = [2, 0, 1];
        let (pm, _) = g.forward(&z.select_rows(&perm)).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(pm.row(k), bm.row(i));
        }
    }

    #[test]
    fn variance_never_below_floor() {
        let mut rng = Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let g = GeneratorNet::new(2, 3, &[4], None, DEFAULT_VAR_FLOOR, &mut rng);
            let scale = rng.random_range(0.1..50.0);
            let z = Tensor::from_fn(1, 2, |_, _| scale * rng.random_range(-1.0..1.0));
            let (_, v) = g.forward(&z).unwrap();
            assert!(v.data().iter().all(|&x| x >= DEFAULT_VAR_FLOOR));
        }
    }

    #[test]
    fn missingness_zero_and_identity() {
        let zero = FeedForward {
            trunk: Mlp { layers: vec![] },
            head: Layer::Dense(DenseLayer::zeros(3, 3, Activation::Identity)),
        };
        let x = Tensor::row_vector(vec![0.3, -1.0, 2.0]);
        assert!(zero.forward(&x).unwrap().data().iter().all(|&l| l == 0.0));
        let mut eye = DenseLayer::zeros(3, 3, Activation::Identity);
        for j in 0..3 {
            eye.weight.set(j, j, 1.0);
        }
        let ident = FeedForward {
            trunk: Mlp { layers: vec![] },
            head: Layer::Dense(eye),
        };
        assert_eq!(ident.forward(&x).unwrap().data(), x.data());
    }

    #[test]
    fn mean_weights_reproduce_deterministic_net() {
        let mut rng = Rng::seed_from_u64(2);
        let bnn = GeneratorNet::new(3, 4, &[8], Some(1.0), DEFAULT_VAR_FLOOR, &mut rng);
        let det = bnn.mean_network();
        let z = Tensor::from_fn(5, 3, |_, _| rng.random_range(-1.0..1.0));
        assert_eq!(bnn.forward(&z).unwrap(), det.forward(&z).unwrap());
    }

    #[test]
    fn input_width_is_checked() {
        let mut rng = Rng::seed_from_u64(2);
        let g = GeneratorNet::new(3, 4, &[8], None, DEFAULT_VAR_FLOOR, &mut rng);
        assert!(matches!(
            g.forward(&Tensor::zeros(1, 2)),
            Err(Error::Shape { .. })
        ));
    }
}
