//! Scalar objectives differentiated by training and sampling.
//!
//! Training losses are batch means divided by the number of features. The
//! sampler log-densities are per-row sums without that normalization, so
//! they are the true log targets up to additive constants.

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::networks::{Bound, BoundFeedForward, BoundGenerator};

/// `½ log(2π)`.
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Tempering of the mask likelihood and weight of the variational KL.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TemperConfig {
    pub beta: f64,
    pub tau: f64,
}

impl TemperConfig {
    pub fn new(beta: f64, tau: f64) -> Result<Self> {
        if !(beta >= 0.0 && beta.is_finite()) || !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::Config(format!(
                "beta and tau must be finite and nonnegative, got {beta}, {tau}"
            )));
        }
        Ok(Self { beta, tau })
    }
}

/// Missing-entry layout of a batch: `x = observed + free * (1 - r)` where
/// `observed` holds the known values (zero where missing).
#[derive(Clone, Debug)]
pub struct MaskedBatch {
    pub observed: Tensor,
    pub mask: Tensor,
    pub free_mask: Tensor,
}

impl MaskedBatch {
    pub fn new(x_obs: &Tensor, mask: &Tensor) -> Result<Self> {
        if x_obs.shape() != mask.shape() {
            return Err(Error::shape("masked batch", &x_obs.shape(), &mask.shape()));
        }
        Ok(Self {
            observed: x_obs.zip_map(mask, |x, r| if r == 1.0 { x } else { 0.0 }),
            mask: mask.clone(),
            free_mask: mask.map(|r| 1.0 - r),
        })
    }

    pub fn rows(&self) -> usize {
        self.mask.rows()
    }

    pub fn cols(&self) -> usize {
        self.mask.cols()
    }

    /// Completed matrix on the tape; gradients reach only the missing
    /// coordinates of `free`.
    pub fn assemble<'t>(&self, free: Var<'t>) -> Result<Var<'t>> {
        let tape = free.tape();
        free.mul(tape.constant(self.free_mask.clone()))?
            .add(tape.constant(self.observed.clone()))
    }
}

/// Per-entry `(x - mean)^2 / (2 var) + ½ log var`.
fn gaussian_nll<'t>(x: Var<'t>, mean: Var<'t>, var: Var<'t>) -> Result<Var<'t>> {
    let quad = x.sub(mean)?.square().div(var.scale(2.0))?;
    quad.add(var.ln().scale(0.5))
}

/// Per-entry `-log Bernoulli(r | sigmoid(logit))`, written as
/// `r softplus(-logit) + (1 - r) softplus(logit)` so saturated logits keep
/// their tiny nonzero cost.
fn mask_nll<'t>(logits: Var<'t>, mask: &Tensor) -> Result<Var<'t>> {
    let tape = logits.tape();
    let observed = logits.neg().softplus().mul(tape.constant(mask.clone()))?;
    let missing = logits.softplus().mul(tape.constant(mask.map(|r| 1.0 - r)))?;
    observed.add(missing)
}

fn normalizer(v: Var<'_>) -> f64 {
    let [b, p] = v.shape();
    1.0 / (b * p) as f64
}

/// Latent-step loss: batch mean of `½|z|^2 + sum_j gaussian_nll`, over `p`.
pub fn loss_z<'t>(z: Var<'t>, x: Var<'t>, gen: &BoundGenerator<'t>) -> Result<Var<'t>> {
    let (mean, var) = gen.forward(z)?;
    let data = gaussian_nll(x, mean, var)?;
    let scale = normalizer(data);
    Ok(data.sum().add(z.square().sum().scale(0.5))?.scale(scale))
}

/// Missing-value loss: Gaussian term plus `beta` times the mask
/// cross-entropy, batch mean over `p`. With `beta == 0` the missingness
/// network is not evaluated at all.
pub fn loss_xmis<'t>(
    free: Var<'t>,
    batch: &MaskedBatch,
    z: Var<'t>,
    gen: &BoundGenerator<'t>,
    missnet: &BoundFeedForward<'t>,
    cfg: TemperConfig,
) -> Result<Var<'t>> {
    let x = batch.assemble(free)?;
    let (mean, var) = gen.forward(z)?;
    let mut total = gaussian_nll(x, mean, var)?.sum();
    if cfg.beta > 0.0 {
        let logits = missnet.forward(x)?;
        total = total.add(mask_nll(logits, &batch.mask)?.sum().scale(cfg.beta))?;
    }
    Ok(total.scale(normalizer(x)))
}

/// Weight penalty subtracted from the ELBOs: `weight_decay * sum w^2` over
/// deterministic layers plus `tau * KL` over variational layers.
pub fn penalty<'t>(bound: &Bound<'t>, weight_decay: f64, tau: f64) -> Result<Option<Var<'t>>> {
    let mut out: Option<Var<'t>> = None;
    if weight_decay > 0.0 {
        if let Some(l2) = bound.l2() {
            out = Some(l2.scale(weight_decay));
        }
    }
    if tau > 0.0 {
        if let Some(kl) = bound.kl() {
            let term = kl.scale(tau);
            out = Some(match out {
                Some(o) => o.add(term)?,
                None => term,
            });
        }
    }
    Ok(out)
}

/// Generator ELBO to maximize: mean Gaussian log-likelihood per entry
/// (including the `½ log 2π` constant) minus `penalty`.
pub fn elbo_theta<'t>(
    x: Var<'t>,
    z: Var<'t>,
    gen: &BoundGenerator<'t>,
    penalty: Option<Var<'t>>,
) -> Result<Var<'t>> {
    let (mean, var) = gen.forward(z)?;
    let nll = gaussian_nll(x, mean, var)?;
    let ll = nll.mean().offset(HALF_LN_2PI).neg();
    match penalty {
        Some(p) => ll.sub(p),
        None => Ok(ll),
    }
}

/// Missingness ELBO to maximize: mean Bernoulli log-likelihood of the mask
/// per entry minus `penalty`.
pub fn elbo_phi<'t>(
    x: Var<'t>,
    mask: &Tensor,
    missnet: &BoundFeedForward<'t>,
    penalty: Option<Var<'t>>,
) -> Result<Var<'t>> {
    let ll = mask_nll(missnet.forward(x)?, mask)?.mean().neg();
    match penalty {
        Some(p) => ll.sub(p),
        None => Ok(ll),
    }
}

/// Per-row log target of the latent block: `-(½|z_i|^2 + sum_j gaussian_nll)`
/// as a `B x 1` column.
pub fn hmc_logdensity_z<'t>(z: Var<'t>, x: Var<'t>, gen: &BoundGenerator<'t>) -> Result<Var<'t>> {
    let (mean, var) = gen.forward(z)?;
    let per_row = gaussian_nll(x, mean, var)?.row_sum();
    per_row.add(z.square().row_sum().scale(0.5)).map(Var::neg)
}

/// Per-row log target of the missing block with the generator evaluated at
/// the current latents.
pub fn hmc_logdensity_xmis<'t>(
    free: Var<'t>,
    batch: &MaskedBatch,
    z: Var<'t>,
    gen: &BoundGenerator<'t>,
    missnet: &BoundFeedForward<'t>,
    beta: f64,
) -> Result<Var<'t>> {
    let (mean, var) = gen.forward(z)?;
    let target = XmisTarget {
        batch,
        mean: (*mean.value()).clone(),
        var: (*var.value()).clone(),
        beta,
    };
    target.logdensity(free, missnet)
}

/// Missing-block target with the generator outputs precomputed, since the
/// latents stay fixed during an update of the missing values.
pub struct XmisTarget<'b> {
    pub batch: &'b MaskedBatch,
    pub mean: Tensor,
    pub var: Tensor,
    pub beta: f64,
}

impl XmisTarget<'_> {
    pub fn logdensity<'t>(&self, free: Var<'t>, missnet: &BoundFeedForward<'t>) -> Result<Var<'t>> {
        let tape = free.tape();
        let x = self.batch.assemble(free)?;
        let nll = gaussian_nll(x, tape.constant(self.mean.clone()), tape.constant(self.var.clone()))?;
        let mut per_row = nll.row_sum();
        if self.beta > 0.0 {
            let m = mask_nll(missnet.forward(x)?, &self.batch.mask)?.row_sum().scale(self.beta);
            per_row = per_row.add(m)?;
        }
        Ok(per_row.neg())
    }
}

/// Value and gradient of `sum_i f_i(v)` for a per-row objective `f`.
pub fn value_and_grad(
    start: &Tensor,
    f: impl for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
) -> Result<(Tensor, Tensor)> {
    let tape = Tape::new();
    let v = tape.var(start.clone());
    let out = f(&tape, v)?;
    let grads = tape.backward(out.sum())?;
    Ok(((*out.value()).clone(), grads.wrt(v)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::networks::{
        Activation, DenseLayer, Draw, FeedForward, GeneratorNet, Layer, Mlp, DEFAULT_VAR_FLOOR,
    };
    use crate::rng::Rng;
    use rand::{Rng as _, SeedableRng};

    fn rand_t(rng: &mut Rng, r: usize, c: usize) -> Tensor {
        Tensor::from_fn(r, c, |_, _| rng.random_range(-1.5..1.5))
    }

    /// Empty-trunk generator with mean head `z W + c` and unit variance.
    fn linear_generator(w: Tensor, c: Tensor) -> GeneratorNet {
        let p = w.cols();
        let unit = crate::networks::inverse_softplus(1.0 - DEFAULT_VAR_FLOOR);
        GeneratorNet {
            trunk: Mlp { layers: vec![] },
            mean_head: Layer::Dense(DenseLayer {
                weight: w.clone(),
                bias: c,
                activation: Activation::Identity,
            }),
            var_head: Layer::Dense(DenseLayer {
                weight: Tensor::zeros(w.rows(), p),
                bias: Tensor::full(1, p, unit),
                activation: Activation::Identity,
            }),
            var_floor: DEFAULT_VAR_FLOOR,
        }
    }

    fn eval<T>(f: impl for<'t> FnOnce(&'t Tape) -> Result<Var<'t>>) -> f64 {
        let tape = Tape::new();
        f(&tape).unwrap().item()
    }

    #[test]
    fn loss_z_closed_forms() {
        // mean(z) = x exactly, unit variance, z = 0: everything vanishes
        let g = linear_generator(Tensor::zeros(2, 3), Tensor::row_vector(vec![0.5, -1.0, 2.0]));
        let v = eval::<()>(|t| {
            let mut acc = Bound::new();
            let bg = g.bind(t, false, &mut Draw::Mean, &mut acc);
            loss_z(t.constant(Tensor::zeros(1, 2)), t.constant(Tensor::row_vector(vec![0.5, -1.0, 2.0])), &bg)
        });
        assert!(v.abs() < 1e-12, "{v}");
        // p = 1, d = 2, z = (1, 1), residual 1
        let g = linear_generator(Tensor::zeros(2, 1), Tensor::scalar(0.0));
        let v = eval::<()>(|t| {
            let mut acc = Bound::new();
            let bg = g.bind(t, false, &mut Draw::Mean, &mut acc);
            loss_z(t.constant(Tensor::row_vector(vec![1.0, 1.0])), t.constant(Tensor::scalar(1.0)), &bg)
        });
        assert!((v - 1.5).abs() < 1e-12);
    }

    #[test]
    fn loss_xmis_mask_term() {
        let g = linear_generator(Tensor::zeros(1, 2), Tensor::row_vector(vec![0.3, 0.7]));
        let m = FeedForward {
            trunk: Mlp { layers: vec![] },
            head: Layer::Dense(DenseLayer::zeros(2, 2, Activation::Identity)),
        };
        let batch = MaskedBatch::new(
            &Tensor::row_vector(vec![0.3, f64::NAN]),
            &Tensor::row_vector(vec![1.0, 0.0]),
        )
        .unwrap();
        let v = eval::<()>(|t| {
            let mut acc = Bound::new();
            let bg = g.bind(t, false, &mut Draw::Mean, &mut acc);
            let bm = m.bind("m", t, false, &mut Draw::Mean, &mut acc);
            loss_xmis(
                t.var(Tensor::row_vector(vec![0.0, 0.7])),
                &batch,
                t.constant(Tensor::zeros(1, 1)),
                &bg,
                &bm,
                TemperConfig::new(0.01, 0.0).unwrap(),
            )
        });
        assert!((v - 0.01 * std::f64::consts::LN_2).abs() < 1e-12, "{v}");
    }

    #[test]
    fn beta_zero_equals_loss_z_without_prior() {
        let mut rng = Rng::seed_from_u64(8);
        let g = GeneratorNet::new(3, 6, &[10], None, DEFAULT_VAR_FLOOR, &mut rng);
        let m = FeedForward::new(6, &[5], 6, None, &mut rng);
        for _ in 0..20 {
            let z = rand_t(&mut rng, 4, 3);
            let x = rand_t(&mut rng, 4, 6);
            let mask = Tensor::from_fn(4, 6, |_, _| f64::from(rng.random::<bool>()));
            let batch = MaskedBatch::new(&x, &mask).unwrap();
            let tape = Tape::new();
            let mut acc = Bound::new();
            let bg = g.bind(&tape, false, &mut Draw::Mean, &mut acc);
            let bm = m.bind("m", &tape, false, &mut Draw::Mean, &mut acc);
            let zv = tape.constant(z.clone());
            let lx = loss_xmis(tape.constant(x.clone()), &batch, zv, &bg, &bm, TemperConfig::new(0.0, 0.0).unwrap())
                .unwrap()
                .item();
            let lz = loss_z(zv, tape.constant(x.clone()), &bg).unwrap().item();
            let prior = 0.5 * z.sq_norm() / (4.0 * 6.0);
            assert!((lx - (lz - prior)).abs() < 1e-12 * lz.abs().max(1.0));
        }
    }

    #[test]
    fn xmis_argmin_is_generator_mean_under_flat_mask_term() {
        // p = 1, zero missingness net: the mask term does not depend on x
        let g = linear_generator(Tensor::zeros(1, 1), Tensor::scalar(0.42));
        let m = FeedForward {
            trunk: Mlp { layers: vec![] },
            head: Layer::Dense(DenseLayer::zeros(1, 1, Activation::Identity)),
        };
        let batch = MaskedBatch::new(&Tensor::scalar(f64::NAN), &Tensor::scalar(0.0)).unwrap();
        let (mut best, mut arg) = (f64::INFINITY, 0.0);
        for k in 0..=20_000 {
            let xv = -2.0 + 4.0 * k as f64 / 20_000.0;
            let v = eval::<()>(|t| {
                let mut acc = Bound::new();
                let bg = g.bind(t, false, &mut Draw::Mean, &mut acc);
                let bm = m.bind("m", t, false, &mut Draw::Mean, &mut acc);
                loss_xmis(t.var(Tensor::scalar(xv)), &batch, t.constant(Tensor::zeros(1, 1)), &bg, &bm, TemperConfig::new(1.0, 0.0).unwrap())
            });
            if v < best {
                best = v;
                arg = xv;
            }
        }
        assert!((arg - 0.42).abs() <= 2e-4, "{arg}");
    }

    #[test]
    fn elbo_constants() {
        let g = linear_generator(Tensor::zeros(1, 3), Tensor::row_vector(vec![1.0, 2.0, 3.0]));
        let v = eval::<()>(|t| {
            let mut acc = Bound::new();
            let bg = g.bind(t, true, &mut Draw::Mean, &mut acc);
            elbo_theta(t.constant(Tensor::row_vector(vec![1.0, 2.0, 3.0])), t.constant(Tensor::scalar(0.0)), &bg, None)
        });
        assert!((v + HALF_LN_2PI).abs() < 1e-12);

        let zero = FeedForward {
            trunk: Mlp { layers: vec![] },
            head: Layer::Dense(DenseLayer::zeros(2, 2, Activation::Identity)),
        };
        let mask = Tensor::row_vector(vec![1.0, 0.0]);
        let v = eval::<()>(|t| {
            let mut acc = Bound::new();
            let bm = zero.bind("m", t, true, &mut Draw::Mean, &mut acc);
            elbo_phi(t.constant(Tensor::zeros(1, 2)), &mask, &bm, None)
        });
        assert!((v + std::f64::consts::LN_2).abs() < 1e-12);

        let mut big = DenseLayer::zeros(2, 2, Activation::Identity);
        big.bias = Tensor::full(1, 2, 40.0);
        let sat = FeedForward {
            trunk: Mlp { layers: vec![] },
            head: Layer::Dense(big),
        };
        let ones = Tensor::full(1, 2, 1.0);
        let v = eval::<()>(|t| {
            let mut acc = Bound::new();
            let bm = sat.bind("m", t, true, &mut Draw::Mean, &mut acc);
            elbo_phi(t.constant(Tensor::zeros(1, 2)), &ones, &bm, None)
        });
        assert!(v < 0.0 && v > -1e-15);
    }

    #[test]
    fn kl_weight_lowers_elbo() {
        let mut rng = Rng::seed_from_u64(4);
        let g = GeneratorNet::new(2, 3, &[4], Some(1.0), DEFAULT_VAR_FLOOR, &mut rng);
        let x = rand_t(&mut rng, 5, 3);
        let z = rand_t(&mut rng, 5, 2);
        let at = |tau: f64| {
            let tape = Tape::new();
            let mut acc = Bound::new();
            let bg = g.bind(&tape, true, &mut Draw::Mean, &mut acc);
            let pen = penalty(&acc, 0.0, tau).unwrap();
            elbo_theta(tape.constant(x.clone()), tape.constant(z.clone()), &bg, pen).unwrap().item()
        };
        assert!(at(0.1) < at(0.0));
    }

    #[test]
    fn zero_variance_posterior_matches_deterministic_path() {
        let mut rng = Rng::seed_from_u64(6);
        let mut g = GeneratorNet::new(2, 3, &[4], Some(1.0), DEFAULT_VAR_FLOOR, &mut rng);
        for layer in g.trunk.layers.iter_mut().chain([&mut g.mean_head, &mut g.var_head]) {
            if let Layer::Variational(v) = layer {
                v.weight_raw_scale = v.weight_raw_scale.map(|_| -1e4);
                v.bias_raw_scale = v.bias_raw_scale.map(|_| -1e4);
            }
        }
        let det = g.mean_network();
        let x = rand_t(&mut rng, 5, 3);
        let z = rand_t(&mut rng, 5, 2);
        let tape = Tape::new();
        let mut acc = Bound::new();
        let mut srng = Rng::seed_from_u64(1);
        let bg = g.bind(&tape, true, &mut Draw::Sample(&mut srng), &mut acc);
        let sampled = elbo_theta(tape.constant(x.clone()), tape.constant(z.clone()), &bg, penalty(&acc, 0.0, 0.0).unwrap())
            .unwrap()
            .item();
        let tape2 = Tape::new();
        let mut acc2 = Bound::new();
        let bd = det.bind(&tape2, true, &mut Draw::Mean, &mut acc2);
        let plain = elbo_theta(tape2.constant(x), tape2.constant(z), &bd, None).unwrap().item();
        assert_eq!(sampled, plain);
    }

    #[test]
    fn hmc_density_is_unnormalized_loss() {
        let mut rng = Rng::seed_from_u64(10);
        let g = GeneratorNet::new(3, 7, &[8, 8], None, DEFAULT_VAR_FLOOR, &mut rng);
        for _ in 0..20 {
            let z = rand_t(&mut rng, 1, 3);
            let x = rand_t(&mut rng, 1, 7);
            let tape = Tape::new();
            let mut acc = Bound::new();
            let bg = g.bind(&tape, false, &mut Draw::Mean, &mut acc);
            let lp = hmc_logdensity_z(tape.constant(z.clone()), tape.constant(x.clone()), &bg).unwrap().item();
            let l = loss_z(tape.constant(z), tape.constant(x), &bg).unwrap().item();
            assert!((lp + 7.0 * l).abs() < 1e-10 * l.abs().max(1.0));
        }
    }

    #[test]
    fn saturated_logit_shift_changes_density_by_constant() {
        // all entries observed and logits huge: shifting all logits by c
        // moves each Bernoulli term by ~0, i.e. by a computable constant
        let g = linear_generator(Tensor::zeros(1, 2), Tensor::zeros(1, 2));
        let head = |b: f64| {
            let mut l = DenseLayer::zeros(2, 2, Activation::Identity);
            l.bias = Tensor::full(1, 2, b);
            FeedForward {
                trunk: Mlp { layers: vec![] },
                head: Layer::Dense(l),
            }
        };
        let mask = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let batch = MaskedBatch::new(&Tensor::row_vector(vec![0.5, f64::NAN]), &mask).unwrap();
        let at = |net: &FeedForward, x: f64| {
            eval::<()>(|t| {
                let mut acc = Bound::new();
                let bg = g.bind(t, false, &mut Draw::Mean, &mut acc);
                let bm = net.bind("m", t, false, &mut Draw::Mean, &mut acc);
                hmc_logdensity_xmis(t.constant(Tensor::row_vector(vec![0.0, x])), &batch, t.constant(Tensor::zeros(1, 1)), &bg, &bm, 1.0)
            })
        };
        let (a, b) = (head(30.0), head(35.0));
        // observed entry: softplus(f) - f ~ 0; missing entry: softplus(f) ~ f,
        // so the shift costs exactly 5 nats on the missing entry
        for x in [-1.0, 0.0, 2.0] {
            assert!(((at(&a, x) - at(&b, x)) - 5.0).abs() < 1e-9);
        }
    }

    // finite-difference checks of every objective on random instances
    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::seed_from_u64(21);
        let (d, p, b) = (3, 8, 4);
        for _ in 0..10 {
            let g = GeneratorNet::new(d, p, &[6, 6], None, DEFAULT_VAR_FLOOR, &mut rng);
            let m = FeedForward::new(p, &[5], p, None, &mut rng);
            let z = rand_t(&mut rng, b, d);
            let x = rand_t(&mut rng, b, p);
            let mask = Tensor::from_fn(b, p, |_, _| f64::from(rng.random::<bool>()));
            let batch = MaskedBatch::new(&x, &mask).unwrap();
            let cfg = TemperConfig::new(0.5, 0.0).unwrap();
            let tol = 1e-5;
            let e = grad_check(
                |t, zv| {
                    let mut acc = Bound::new();
                    let bg = g.bind(t, false, &mut Draw::Mean, &mut acc);
                    loss_z(zv, t.constant(x.clone()), &bg)
                },
                &z,
                1e-5,
            )
            .unwrap();
            assert!(e < tol, "loss_z {e}");
            let e = grad_check(
                |t, xv| {
                    let mut acc = Bound::new();
                    let bg = g.bind(t, false, &mut Draw::Mean, &mut acc);
                    let bm = m.bind("m", t, false, &mut Draw::Mean, &mut acc);
                    loss_xmis(xv, &batch, t.constant(z.clone()), &bg, &bm, cfg)
                },
                &x,
                1e-5,
            )
            .unwrap();
            assert!(e < tol, "loss_xmis {e}");
            let e = grad_check(
                |t, zv| {
                    let mut acc = Bound::new();
                    let bg = g.bind(t, false, &mut Draw::Mean, &mut acc);
                    Ok(hmc_logdensity_z(zv, t.constant(x.clone()), &bg)?.sum())
                },
                &z,
                1e-5,
            )
            .unwrap();
            assert!(e < tol, "logdensity_z {e}");
            let e = grad_check(
                |t, xv| {
                    let mut acc = Bound::new();
                    let bg = g.bind(t, false, &mut Draw::Mean, &mut acc);
                    let bm = m.bind("m", t, false, &mut Draw::Mean, &mut acc);
                    Ok(hmc_logdensity_xmis(xv, &batch, t.constant(z.clone()), &bg, &bm, 0.5)?.sum())
                },
                &x,
                1e-5,
            )
            .unwrap();
            assert!(e < tol, "logdensity_xmis {e}");
        }
    }
}
