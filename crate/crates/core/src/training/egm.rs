//! Encoder–generator adversarial warm start. The encoder maps data to
//! latents, two discriminators push `e(x)` towards `N(0, I)` and `g(z)`
//! towards the data, and a cycle term ties `g(e(x))` back to `x`. Only the
//! generator and `Z⁰ = e(X)` survive; the encoder is dropped.

use rand::Rng as _;
use rand_distr::StandardNormal;

use super::adam::{clip_by_global_norm, Adam};
use super::config::TrainConfig;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::networks::{Bound, BoundFeedForward, Draw, EncoderNet, FeedForward, GeneratorNet};
use crate::rng::{stream, Rng, Stream};

/// Weight of the cycle-consistency term against the adversarial terms.
pub const CYCLE_WEIGHT: f64 = 10.0;

#[derive(Clone, Debug)]
pub struct EgmOutcome {
    /// `e(X)`, one latent row per data row.
    pub z0: Tensor,
    /// Mean squared reconstruction error `‖g(e(x)) - x‖² / p` before training.
    pub cycle_before: f64,
    pub cycle_after: f64,
}

fn standard_normal(rng: &mut Rng, r: usize, c: usize) -> Tensor {
    Tensor::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

/// Mean of `-log sigmoid(l)` (label 1) or `-log(1 - sigmoid(l))` (label 0).
fn bce<'t>(logits: Var<'t>, label_one: bool) -> Var<'t> {
    if label_one {
        logits.neg().softplus().mean()
    } else {
        logits.softplus().mean()
    }
}

fn cycle_error(x: &Tensor, enc: &EncoderNet, gen: &GeneratorNet) -> Result<f64> {
    let (mean, _) = gen.forward(&enc.forward(x)?)?;
    let d = mean.zip_map(x, |a, b| (a - b) * (a - b));
    Ok(d.sum() / d.len() as f64)
}

fn diverged(iter: usize, what: impl Into<String>) -> Error {
    Error::Diverged {
        epoch: 0,
        batch: iter,
        what: what.into(),
    }
}

fn finite_loss(v: Var<'_>, iter: usize, what: &str) -> Result<()> {
    if v.item().is_finite() {
        Ok(())
    } else {
        Err(diverged(iter, format!("egm {what} loss is not finite")))
    }
}

/// Pretrains `gen` in place on the complete matrix `x` and returns the
/// encoded latents. All randomness comes from the `Egm` stream.
pub fn egm_pretrain(x: &Tensor, gen: &mut GeneratorNet, cfg: &TrainConfig) -> Result<EgmOutcome> {
    let [n, p] = x.shape();
    if n == 0 || !x.is_finite() {
        return Err(Error::Data("pretraining needs a complete, non-empty matrix".into()));
    }
    let d = gen.z_dim();
    let e = &cfg.egm_init;
    let mut rng = stream(cfg.seed, Stream::Egm);
    let mut enc = FeedForward::new(p, &e.e_units, d, None, &mut rng);
    let mut dz = FeedForward::new(d, &e.dz_units, 1, None, &mut rng);
    let mut dx = FeedForward::new(p, &e.dx_units, 1, None, &mut rng);
    let mut opt_enc = Adam::new(cfg.lr_theta, enc.params());
    let mut opt_gen = Adam::new(cfg.lr_theta, gen.params());
    let mut opt_dz = Adam::new(cfg.lr_theta, dz.params());
    let mut opt_dx = Adam::new(cfg.lr_theta, dx.params());
    let cycle_before = cycle_error(x, &enc, gen)?;
    let b = cfg.batch_size.min(n);
    let nonfinite = |iter: usize| move |err: Error| match err {
        Error::NonFinite(w) => diverged(iter, format!("egm: {w}")),
        other => other,
    };

    for iter in 0..e.n_iter {
        let idx: Vec<usize> = (0..b).map(|_| rng.random_range(0..n)).collect();
        let xb = x.select_rows(&idx);
        let prior = standard_normal(&mut rng, b, d);

        // discriminators
        {
            let tape = Tape::new();
            let mut frozen = Bound::new();
            let benc = enc.bind("encoder", &tape, false, &mut Draw::Mean, &mut frozen);
            let bgen = gen.bind(&tape, false, &mut Draw::Mean, &mut frozen);
            let mut accz = Bound::new();
            let mut accx = Bound::new();
            let bdz = dz.bind("latent discriminator", &tape, true, &mut Draw::Mean, &mut accz);
            let bdx = dx.bind("data discriminator", &tape, true, &mut Draw::Mean, &mut accx);
            let xv = tape.constant(xb.clone());
            let zp = tape.constant(prior.clone());
            let (fake_x, _) = bgen.forward(zp).map_err(nonfinite(iter))?;
            let fake_z = benc.forward(xv).map_err(nonfinite(iter))?;
            let loss = disc_loss(&bdz, zp, fake_z)
                .and_then(|l| l.add(disc_loss(&bdx, xv, fake_x)?))
                .map_err(nonfinite(iter))?;
            finite_loss(loss, iter, "discriminator")?;
            let grads = tape.backward(loss)?;
            let mut gz = accz.gradients(&grads);
            let mut gx = accx.gradients(&grads);
            clip_by_global_norm(&mut gz, cfg.grad_clip);
            clip_by_global_norm(&mut gx, cfg.grad_clip);
            opt_dz.step(dz.params_mut(), &gz);
            opt_dx.step(dx.params_mut(), &gx);
        }

        // encoder + generator
        {
            let tape = Tape::new();
            let mut frozen = Bound::new();
            let bdz = dz.bind("latent discriminator", &tape, false, &mut Draw::Mean, &mut frozen);
            let bdx = dx.bind("data discriminator", &tape, false, &mut Draw::Mean, &mut frozen);
            let mut acce = Bound::new();
            let mut accg = Bound::new();
            let benc = enc.bind("encoder", &tape, true, &mut Draw::Mean, &mut acce);
            let bgen = gen.bind(&tape, true, &mut Draw::Mean, &mut accg);
            let xv = tape.constant(xb);
            let zp = tape.constant(prior);
            let loss = (|| {
                let ez = benc.forward(xv)?;
                let (gz, _) = bgen.forward(zp)?;
                let adv = bce(bdz.forward(ez)?, true).add(bce(bdx.forward(gz)?, true))?;
                let (recon, _) = bgen.forward(ez)?;
                let cycle = recon.sub(xv)?.square().mean();
                adv.add(cycle.scale(CYCLE_WEIGHT))
            })()
            .map_err(nonfinite(iter))?;
            finite_loss(loss, iter, "encoder-generator")?;
            let grads = tape.backward(loss)?;
            let mut ge = acce.gradients(&grads);
            let mut gg = accg.gradients(&grads);
            clip_by_global_norm(&mut ge, cfg.grad_clip);
            clip_by_global_norm(&mut gg, cfg.grad_clip);
            opt_enc.step(enc.params_mut(), &ge);
            opt_gen.step(gen.params_mut(), &gg);
        }
    }

    let z0 = enc.forward(x)?;
    if !z0.is_finite() {
        return Err(diverged(e.n_iter, "egm: encoded latents are not finite"));
    }
    Ok(EgmOutcome {
        cycle_after: cycle_error(x, &enc, gen)?,
        cycle_before,
        z0,
    })
}

fn disc_loss<'t>(disc: &BoundFeedForward<'t>, real: Var<'t>, fake: Var<'t>) -> Result<Var<'t>> {
    bce(disc.forward(real)?, true).add(bce(disc.forward(fake)?, false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn small_cfg() -> TrainConfig {
        let mut c = TrainConfig::default();
        c.z_dim = 2;
        c.g_units = vec![16, 16];
        c.egm_init.e_units = vec![16, 16];
        c.egm_init.dz_units = vec![8];
        c.egm_init.dx_units = vec![8];
        c.egm_init.n_iter = 300;
        c.batch_size = 32;
        c
    }

    fn low_rank_data(n: usize) -> Tensor {
        let mut rng = Rng::seed_from_u64(3);
        let z = standard_normal(&mut rng, n, 2);
        let w = Tensor::from_rows(&[vec![1.0, -0.5, 0.3, 0.8], vec![0.2, 0.9, -0.7, 0.1]]).unwrap();
        z.matmul(&w).unwrap()
    }

    #[test]
    fn pretraining_reduces_cycle_error_and_is_reproducible() {
        let x = low_rank_data(200);
        let cfg = small_cfg();
        let mut g1 = GeneratorNet::new(2, 4, &cfg.g_units, None, cfg.var_floor, &mut Rng::seed_from_u64(1));
        let mut g2 = g1.clone();
        let a = egm_pretrain(&x, &mut g1, &cfg).unwrap();
        let b = egm_pretrain(&x, &mut g2, &cfg).unwrap();
        assert!(a.cycle_after < a.cycle_before, "{} vs {}", a.cycle_after, a.cycle_before);
        assert!(a.z0.bitwise_eq(&b.z0));
        assert_eq!(g1, g2);
        assert_eq!(a.z0.shape(), [200, 2]);
    }

    #[test]
    fn incomplete_input_is_rejected() {
        let mut x = low_rank_data(10);
        x.set(0, 0, f64::NAN);
        let cfg = small_cfg();
        let mut g = GeneratorNet::new(2, 4, &cfg.g_units, None, cfg.var_floor, &mut Rng::seed_from_u64(1));
        assert!(egm_pretrain(&x, &mut g, &cfg).is_err());
    }
}
