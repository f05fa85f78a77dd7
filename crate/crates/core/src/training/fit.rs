//! Alternating optimization: per mini-batch, a few gradient steps on the
//! latents and the missing values with the networks frozen, then one ascent
//! step on each network's ELBO.

use std::fmt;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

use super::adam::{clip_by_global_norm, Adam, RowAdam};
use super::config::TrainConfig;
use super::egm::egm_pretrain;
use super::knn::knn_impute_init;
use crate::autodiff::{Tape, Tensor};
use crate::data::{Dataset, Scaler};
use crate::error::{Error, Result};
use crate::networks::{Bound, Draw, GeneratorNet, MissingnessNet};
use crate::objectives::{elbo_phi, elbo_theta, loss_xmis, loss_z, penalty, MaskedBatch, TemperConfig};
use crate::rng::{stream, Rng, Stream};

/// Trained networks plus what is needed to apply them to new tables.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub generator: GeneratorNet,
    pub missingness: MissingnessNet,
    pub config: TrainConfig,
    /// Standardization used during training, if the input was standardized.
    pub scaler: Option<Scaler>,
}

impl Model {
    /// Fresh networks drawn from the `Init` stream (generator first).
    pub fn init(p: usize, cfg: &TrainConfig) -> Self {
        let mut rng = stream(cfg.seed, Stream::Init);
        let variational = cfg.use_bnn.then_some(cfg.prior_scale);
        let generator = GeneratorNet::new(cfg.z_dim, p, &cfg.g_units, variational, cfg.var_floor, &mut rng);
        let missingness = MissingnessNet::new(p, &cfg.missingness_units, p, variational, &mut rng);
        Self {
            generator,
            missingness,
            config: cfg.clone(),
            scaler: None,
        }
    }

    pub fn p(&self) -> usize {
        self.generator.output_dim()
    }

    pub fn temper(&self) -> TemperConfig {
        TemperConfig {
            beta: self.config.beta,
            tau: self.config.kl_weight,
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_z: f64,
    pub loss_xmis: f64,
    pub elbo_theta: f64,
    pub elbo_phi: f64,
    pub seconds: f64,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} loss_z={:.6} loss_xmis={:.6} elbo_theta={:.6} elbo_phi={:.6} seconds={:.3}",
            self.epoch, self.loss_z, self.loss_xmis, self.elbo_theta, self.elbo_phi, self.seconds
        )
    }
}

/// Adam buffers for every block that `fit` updates.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizers {
    pub theta: Adam,
    pub phi: Adam,
    pub z: RowAdam,
    pub x: RowAdam,
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: Model,
    /// Latents, one row per sample.
    pub z: Tensor,
    /// Completed table: observed entries are the input values, missing
    /// entries the current imputation.
    pub x: Tensor,
    pub mask: Tensor,
    pub optim: Optimizers,
    /// Epochs completed.
    pub epoch: usize,
    pub log: Vec<EpochLog>,
}

/// Frozen networks and the observed part of a table; the shared core of
/// training and test-time refinement.
pub(crate) struct InnerProblem<'a> {
    pub generator: &'a GeneratorNet,
    pub missingness: &'a MissingnessNet,
    pub x_obs: &'a Tensor,
    pub mask: &'a Tensor,
    pub temper: TemperConfig,
    pub grad_clip: f64,
}

impl InnerProblem<'_> {
    /// One latent step then one missing-value step on `rows`, the second
    /// using the just-updated latents. Returns the two losses before their
    /// respective updates.
    pub fn step(
        &self,
        rows: &[usize],
        z: &mut Tensor,
        x: &mut Tensor,
        zopt: &mut RowAdam,
        xopt: &mut RowAdam,
    ) -> Result<(f64, f64)> {
        let lz = {
            let tape = Tape::new();
            let mut acc = Bound::new();
            let gen = self.generator.bind(&tape, false, &mut Draw::Mean, &mut acc);
            let zv = tape.var(z.select_rows(rows));
            let loss = loss_z(zv, tape.constant(x.select_rows(rows)), &gen)?;
            let mut g = vec![tape.backward(loss)?.wrt(zv)];
            clip_by_global_norm(&mut g, self.grad_clip);
            zopt.step_rows(z, rows, &g[0]);
            loss.item()
        };
        let batch = MaskedBatch::new(&self.x_obs.select_rows(rows), &self.mask.select_rows(rows))?;
        let lx = {
            let tape = Tape::new();
            let mut acc = Bound::new();
            let gen = self.generator.bind(&tape, false, &mut Draw::Mean, &mut acc);
            let miss = self.missingness.bind("missingness", &tape, false, &mut Draw::Mean, &mut acc);
            let free = tape.var(x.select_rows(rows));
            let zc = tape.constant(z.select_rows(rows));
            let loss = loss_xmis(free, &batch, zc, &gen, &miss, self.temper)?;
            let mut g = vec![tape.backward(loss)?.wrt(free)];
            clip_by_global_norm(&mut g, self.grad_clip);
            xopt.step_rows(x, rows, &g[0]);
            loss.item()
        };
        self.project(rows, x);
        if !lz.is_finite() || !lx.is_finite() {
            return Err(Error::NonFinite("inner-step loss".into()));
        }
        Ok((lz, lx))
    }

    /// Restores the observed coordinates of `rows` bitwise.
    pub fn project(&self, rows: &[usize], x: &mut Tensor) {
        for &i in rows {
            let obs = self.x_obs.row(i);
            let mask = self.mask.row(i);
            for (j, v) in x.row_mut(i).iter_mut().enumerate() {
                if mask[j] == 1.0 {
                    *v = obs[j];
                }
            }
        }
    }
}

/// Fills missing entries with KNN, then pretrains or samples the latents.
fn warm_start(ds: &Dataset, model: &mut Model) -> Result<(Tensor, Tensor)> {
    let cfg = &model.config;
    let x0 = knn_impute_init(ds)?;
    let z0 = if cfg.egm_init.enabled {
        egm_pretrain(&x0, &mut model.generator, cfg)?.z0
    } else {
        let mut rng = stream(cfg.seed, Stream::Latent);
        Tensor::from_fn(ds.n(), cfg.z_dim, |_, _| rng.sample(StandardNormal))
    };
    Ok((z0, x0))
}

/// Runs the full optimization with the default log sink (none).
pub fn fit(ds: &Dataset, cfg: &TrainConfig) -> Result<TrainState> {
    fit_with(ds, cfg, |_| {})
}

/// Like [`fit`], calling `on_epoch` with the state at the end of every
/// epoch (its newest log entry is that epoch's).
pub fn fit_with(ds: &Dataset, cfg: &TrainConfig, mut on_epoch: impl FnMut(&TrainState)) -> Result<TrainState> {
    cfg.validate()?;
    ds.validate()?;
    let mut model = Model::init(ds.p(), cfg);
    model.scaler = ds.scaler.clone();
    let (z, x) = warm_start(ds, &mut model)?;
    let mut state = TrainState {
        optim: Optimizers {
            theta: Adam::new(cfg.lr_theta, model.generator.params()),
            phi: Adam::new(cfg.lr_phi, model.missingness.params()),
            z: RowAdam::new(cfg.lr_z, ds.n(), cfg.z_dim),
            x: RowAdam::new(cfg.lr_x, ds.n(), ds.p()),
        },
        model,
        z,
        x,
        mask: ds.mask.clone(),
        epoch: 0,
        log: Vec::new(),
    };
    let mut shuffle = stream(cfg.seed, Stream::Shuffle);
    let mut bnn = stream(cfg.seed, Stream::Bnn);
    let mut order: Vec<usize> = (0..ds.n()).collect();
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle);
        let mut sums = [0.0; 4];
        let mut inner_count = 0usize;
        let batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        for (b, rows) in batches.iter().enumerate() {
            let tag = |e: Error| match e {
                Error::NonFinite(what) => Error::Diverged { epoch, batch: b, what },
                other => other,
            };
            let (lz, lx, et, ep) = train_batch(&mut state, ds, rows, &mut bnn).map_err(tag)?;
            sums[0] += lz;
            sums[1] += lx;
            sums[2] += et;
            sums[3] += ep;
            inner_count += 1;
        }
        let k = inner_count.max(1) as f64;
        let entry = EpochLog {
            epoch,
            loss_z: sums[0] / k,
            loss_xmis: sums[1] / k,
            elbo_theta: sums[2] / k,
            elbo_phi: sums[3] / k,
            seconds: started.elapsed().as_secs_f64(),
        };
        state.log.push(entry);
        state.epoch = epoch;
        on_epoch(&state);
    }
    Ok(state)
}

/// K inner steps then one ascent step per network. Returns the batch's
/// mean inner losses and the two ELBO values.
fn train_batch(state: &mut TrainState, ds: &Dataset, rows: &[usize], bnn: &mut Rng) -> Result<(f64, f64, f64, f64)> {
    let cfg = state.model.config.clone();
    let (mut lz, mut lx) = (0.0, 0.0);
    {
        let problem = InnerProblem {
            generator: &state.model.generator,
            missingness: &state.model.missingness,
            x_obs: &ds.x_obs,
            mask: &ds.mask,
            temper: state.model.temper(),
            grad_clip: cfg.grad_clip,
        };
        for _ in 0..cfg.n_inner_steps {
            let (a, b) = problem.step(rows, &mut state.z, &mut state.x, &mut state.optim.z, &mut state.optim.x)?;
            lz += a;
            lx += b;
        }
    }
    let k = cfg.n_inner_steps as f64;
    let xb = state.x.select_rows(rows);
    let zb = state.z.select_rows(rows);
    let mb = ds.mask.select_rows(rows);
    let samples = if cfg.use_bnn { cfg.elbo_samples } else { 1 };
    let tau = if cfg.use_bnn { cfg.kl_weight } else { 0.0 };

    // generator
    let mut grads: Option<Vec<Tensor>> = None;
    let mut et = 0.0;
    for _ in 0..samples {
        let tape = Tape::new();
        let mut acc = Bound::new();
        let mut draw = if cfg.use_bnn { Draw::Sample(bnn) } else { Draw::Mean };
        let gen = state.model.generator.bind(&tape, true, &mut draw, &mut acc);
        let pen = penalty(&acc, cfg.weight_decay, tau)?;
        let elbo = elbo_theta(tape.constant(xb.clone()), tape.constant(zb.clone()), &gen, pen)?;
        et += elbo.item();
        let g = acc.gradients(&tape.backward(elbo.neg())?);
        accumulate(&mut grads, g);
    }
    let mut g = average(grads.expect("at least one sample"), samples);
    check_finite(&g, "generator gradient")?;
    clip_by_global_norm(&mut g, cfg.grad_clip);
    state.optim.theta.step(state.model.generator.params_mut(), &g);

    // missingness
    let mut grads: Option<Vec<Tensor>> = None;
    let mut ep = 0.0;
    for _ in 0..samples {
        let tape = Tape::new();
        let mut acc = Bound::new();
        let mut draw = if cfg.use_bnn { Draw::Sample(bnn) } else { Draw::Mean };
        let miss = state.model.missingness.bind("missingness", &tape, true, &mut draw, &mut acc);
        let pen = penalty(&acc, cfg.weight_decay, tau)?;
        let elbo = elbo_phi(tape.constant(xb.clone()), &mb, &miss, pen)?;
        ep += elbo.item();
        let g = acc.gradients(&tape.backward(elbo.neg())?);
        accumulate(&mut grads, g);
    }
    let mut g = average(grads.expect("at least one sample"), samples);
    check_finite(&g, "missingness gradient")?;
    clip_by_global_norm(&mut g, cfg.grad_clip);
    state.optim.phi.step(state.model.missingness.params_mut(), &g);

    let (et, ep) = (et / samples as f64, ep / samples as f64);
    if !et.is_finite() || !ep.is_finite() {
        return Err(Error::NonFinite("elbo".into()));
    }
    Ok((lz / k, lx / k, et, ep))
}

fn accumulate(total: &mut Option<Vec<Tensor>>, g: Vec<Tensor>) {
    match total {
        None => *total = Some(g),
        Some(t) => {
            for (a, b) in t.iter_mut().zip(&g) {
                for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                    *x += y;
                }
            }
        }
    }
}

fn average(mut g: Vec<Tensor>, n: usize) -> Vec<Tensor> {
    if n > 1 {
        for t in &mut g {
            for v in t.data_mut() {
                *v /= n as f64;
            }
        }
    }
    g
}

fn check_finite(g: &[Tensor], what: &str) -> Result<()> {
    if g.iter().all(Tensor::is_finite) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{simulate_oracle, standardize};

    pub(crate) fn tiny_cfg() -> TrainConfig {
        let mut c = TrainConfig::default();
        c.z_dim = 3;
        c.epochs = 3;
        c.batch_size = 16;
        c.g_units = vec![16, 16];
        c.missingness_units = vec![8];
        c.egm_init.enabled = false;
        c
    }

    fn tiny_data() -> Dataset {
        let (raw, _) = simulate_oracle(60, 8, 0.3, 5).unwrap();
        let (xs, scaler) = standardize(&raw.x_obs).unwrap();
        let mut ds = Dataset::new(xs, raw.mask.clone(), None).unwrap();
        ds.scaler = Some(scaler);
        ds
    }

    #[test]
    fn observed_coordinates_are_preserved_bitwise() {
        let ds = tiny_data();
        let st = fit(&ds, &tiny_cfg()).unwrap();
        for i in 0..ds.n() {
            for j in 0..ds.p() {
                if ds.is_observed(i, j) {
                    assert_eq!(st.x.get(i, j).to_bits(), ds.x_obs.get(i, j).to_bits());
                }
            }
        }
        assert!(st.x.is_finite());
        assert_eq!(st.log.len(), 3);
        assert_eq!(st.epoch, 3);
    }

    #[test]
    fn fit_is_deterministic() {
        let ds = tiny_data();
        let a = fit(&ds, &tiny_cfg()).unwrap();
        let b = fit(&ds, &tiny_cfg()).unwrap();
        assert!(a.x.bitwise_eq(&b.x));
        assert!(a.z.bitwise_eq(&b.z));
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn complete_data_leaves_x_unchanged() {
        let (raw, _) = simulate_oracle(40, 6, 0.3, 1).unwrap();
        let full = raw.x_full.unwrap();
        let ds = Dataset::from_observed(full.clone()).unwrap();
        let st = fit(&ds, &tiny_cfg()).unwrap();
        assert!(st.x.bitwise_eq(&full));
    }

    #[test]
    fn bnn_mode_trains() {
        let ds = tiny_data();
        let mut cfg = tiny_cfg();
        cfg.use_bnn = true;
        cfg.elbo_samples = 2;
        let st = fit(&ds, &cfg).unwrap();
        assert!(st.model.generator.is_variational());
        assert!(st.log.iter().all(|l| l.elbo_theta.is_finite()));
    }

    #[test]
    fn bad_config_is_rejected() {
        let mut cfg = tiny_cfg();
        cfg.batch_size = 0;
        assert!(matches!(fit(&tiny_data(), &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn log_line_has_every_field() {
        let l = EpochLog {
            epoch: 2,
            loss_z: 1.0,
            loss_xmis: 0.5,
            elbo_theta: -1.0,
            elbo_phi: -0.7,
            seconds: 0.1,
        };
        let s = l.to_string();
        for k in ["epoch=2", "loss_z=", "loss_xmis=", "elbo_theta=", "elbo_phi=", "seconds="] {
            assert!(s.contains(k), "{s}");
        }
    }
}
