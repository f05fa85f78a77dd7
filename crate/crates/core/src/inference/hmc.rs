//! HMC-within-Gibbs over per-sample posteriors.
//!
//! Every row `i` owns an independent chain with its own random substream and
//! its own pair of step-size adapters, so a row's trajectory does not depend
//! on which other rows share its chunk. Rows are advanced in chunks (one
//! tape evaluation per leapfrog step for the whole chunk) and chunks run on
//! the rayon pool.

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::config::HmcConfig;
use super::dual::DualAveraging;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::networks::{Bound, Draw, GeneratorNet, MissingnessNet};
use crate::objectives::{hmc_logdensity_z, value_and_grad, MaskedBatch, XmisTarget};
use crate::rng::{substream, Rng, Stream};
use crate::training::Model;

/// Rows advanced together through one tape.
pub const CHUNK_ROWS: usize = 64;

/// Outcome of one HMC transition for a batch of independent rows.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BlockStep {
    /// Metropolis acceptance probability per row (0 for inactive rows and
    /// non-finite trajectories).
    pub accept_prob: Vec<f64>,
    pub accepted: Vec<bool>,
    /// Trajectory hit a non-finite Hamiltonian and was rejected.
    pub nonfinite: Vec<bool>,
}

/// Per-row log density and gradient over a subset of rows (indices local
/// to the batch).
pub type RowTarget<'a> = dyn Fn(&[usize], &Tensor) -> Result<(Vec<f64>, Tensor)> + Sync + 'a;

/// Evaluates `target` on every row; if the batch evaluation fails on a
/// non-finite value, falls back to one row at a time and marks the failing
/// rows with `-inf` and a zero gradient.
fn eval_rows(target: &RowTarget<'_>, q: &Tensor) -> Result<(Vec<f64>, Tensor)> {
    let all: Vec<usize> = (0..q.rows()).collect();
    match target(&all, q) {
        Ok(out) if out.0.iter().all(|v| v.is_finite()) && out.1.is_finite() => Ok(out),
        Ok(_) | Err(Error::NonFinite(_)) => {
            let mut lp = vec![f64::NEG_INFINITY; q.rows()];
            let mut grad = Tensor::zeros(q.rows(), q.cols());
            for i in 0..q.rows() {
                if let Ok((v, g)) = target(&[i], &q.select_rows(&[i])) {
                    if v[0].is_finite() && g.is_finite() {
                        lp[i] = v[0];
                        grad.row_mut(i).copy_from_slice(g.row(0));
                    }
                }
            }
            Ok((lp, grad))
        }
        Err(e) => Err(e),
    }
}

/// One HMC transition with identity mass for every active row of `q`.
///
/// `movable` is 1 on coordinates that evolve and 0 elsewhere; those stay
/// bitwise fixed. For each active row the row's generator is consumed in the
/// order: momentum (movable coordinates, column order), then one uniform.
pub fn hmc_rows(
    q: &mut Tensor,
    movable: &Tensor,
    active: &[bool],
    eps: &[f64],
    n_leapfrog: usize,
    rngs: &mut [Rng],
    target: &RowTarget<'_>,
) -> Result<BlockStep> {
    let (b, m) = (q.rows(), q.cols());
    let mut mom = Tensor::zeros(b, m);
    for i in 0..b {
        if !active[i] {
            continue;
        }
        for j in 0..m {
            if movable.get(i, j) == 1.0 {
                mom.set(i, j, rngs[i].sample(StandardNormal));
            }
        }
    }
    let kinetic = |p: &Tensor, i: usize| 0.5 * p.row(i).iter().map(|v| v * v).sum::<f64>();
    let (lp0, mut grad) = eval_rows(target, q)?;
    let h0: Vec<f64> = (0..b).map(|i| -lp0[i] + kinetic(&mom, i)).collect();
    let mut dead: Vec<bool> = (0..b).map(|i| !active[i] || !h0[i].is_finite()).collect();

    let mut qn = q.clone();
    let mut lp = lp0.clone();
    let kick = |p: &mut Tensor, g: &Tensor, dead: &[bool], scale: f64| {
        for i in 0..b {
            if dead[i] {
                continue;
            }
            let e = scale * eps[i];
            let (pr, gr, mr) = (p.row_mut(i), g.row(i), movable.row(i));
            for j in 0..m {
                pr[j] += e * gr[j] * mr[j];
            }
        }
    };
    kick(&mut mom, &grad, &dead, 0.5);
    for l in 0..n_leapfrog {
        for i in 0..b {
            if dead[i] {
                continue;
            }
            let (qr, pr, mr) = (qn.row_mut(i), mom.row(i), movable.row(i));
            for j in 0..m {
                if mr[j] == 1.0 {
                    qr[j] += eps[i] * pr[j];
                }
            }
        }
        let out = eval_rows(target, &qn)?;
        lp = out.0;
        grad = out.1;
        for i in 0..b {
            if !lp[i].is_finite() {
                dead[i] = true;
            }
        }
        kick(&mut mom, &grad, &dead, if l + 1 == n_leapfrog { 0.5 } else { 1.0 });
    }

    let mut step = BlockStep {
        accept_prob: vec![0.0; b],
        accepted: vec![false; b],
        nonfinite: vec![false; b],
    };
    for i in 0..b {
        if !active[i] {
            continue;
        }
        let h1 = -lp[i] + kinetic(&mom, i);
        let a = if h0[i].is_finite() && h1.is_finite() && lp[i].is_finite() {
            (h0[i] - h1).exp().min(1.0)
        } else {
            step.nonfinite[i] = true;
            0.0
        };
        let u: f64 = rngs[i].random();
        step.accept_prob[i] = a;
        if u < a {
            step.accepted[i] = true;
            q.row_mut(i).copy_from_slice(qn.row(i));
        }
    }
    Ok(step)
}

/// Per-row acceptance bookkeeping after the adaptation window.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChainStats {
    pub z_accepted: usize,
    pub z_proposals: usize,
    pub x_accepted: usize,
    pub x_proposals: usize,
    pub nonfinite: usize,
    pub z_step: f64,
    pub x_step: f64,
}

impl ChainStats {
    pub fn z_accept_rate(&self) -> f64 {
        self.z_accepted as f64 / self.z_proposals.max(1) as f64
    }

    pub fn x_accept_rate(&self) -> f64 {
        self.x_accepted as f64 / self.x_proposals.max(1) as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Block {
    Latent,
    Missing,
}

impl Block {
    pub fn name(self) -> &'static str {
        match self {
            Block::Latent => "z",
            Block::Missing => "x",
        }
    }
}

/// One chain-log record: a block's step sizes and acceptances in one sweep,
/// aggregated over the rows that moved.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepLog {
    pub sweep: usize,
    pub block: Block,
    pub active_rows: usize,
    pub mean_step: f64,
    pub min_step: f64,
    pub max_step: f64,
    pub accept_rate: f64,
    pub mean_accept_prob: f64,
    /// Rows whose step size differs from the previous sweep.
    pub step_changed: usize,
    pub nonfinite: usize,
}

impl SweepLog {
    pub const CSV_HEADER: &'static str =
        "sweep,block,active_rows,mean_step,min_step,max_step,accept_rate,mean_accept_prob,step_changed,nonfinite";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.sweep,
            self.block.name(),
            self.active_rows,
            self.mean_step,
            self.min_step,
            self.max_step,
            self.accept_rate,
            self.mean_accept_prob,
            self.step_changed,
            self.nonfinite
        )
    }
}

#[derive(Clone, Debug, Default)]
struct Partial {
    active: usize,
    step_sum: f64,
    step_min: f64,
    step_max: f64,
    accepted: usize,
    prob_sum: f64,
    changed: usize,
    nonfinite: usize,
}

impl Partial {
    fn new() -> Self {
        Self {
            step_min: f64::INFINITY,
            step_max: f64::NEG_INFINITY,
            ..Self::default()
        }
    }

    fn merge(&mut self, o: &Partial) {
        self.active += o.active;
        self.step_sum += o.step_sum;
        self.step_min = self.step_min.min(o.step_min);
        self.step_max = self.step_max.max(o.step_max);
        self.accepted += o.accepted;
        self.prob_sum += o.prob_sum;
        self.changed += o.changed;
        self.nonfinite += o.nonfinite;
    }

    fn finish(self, sweep: usize, block: Block) -> SweepLog {
        let k = self.active.max(1) as f64;
        let nan_if_empty = |v: f64| if self.active == 0 { f64::NAN } else { v };
        SweepLog {
            sweep,
            block,
            active_rows: self.active,
            mean_step: nan_if_empty(self.step_sum / k),
            min_step: nan_if_empty(self.step_min),
            max_step: nan_if_empty(self.step_max),
            accept_rate: nan_if_empty(self.accepted as f64 / k),
            mean_accept_prob: nan_if_empty(self.prob_sum / k),
            step_changed: self.changed,
            nonfinite: self.nonfinite,
        }
    }
}

/// Retained posterior draws. Only missing entries and latents are stored;
/// observed entries are shared by every draw.
#[derive(Clone, Debug)]
pub struct PosteriorDraws {
    pub x_obs: Tensor,
    pub mask: Tensor,
    /// Missing entries `(row, col)` in row-major order.
    pub entries: Vec<(usize, usize)>,
    /// `n_draws × entries.len()`, draw-major.
    pub x_draws: Vec<f64>,
    /// `n_draws × (n · d)`, draw-major, each draw row-major.
    pub z_draws: Vec<f64>,
    pub n_draws: usize,
    pub z_dim: usize,
    pub stats: Vec<ChainStats>,
    pub log: Vec<SweepLog>,
}

impl PosteriorDraws {
    pub fn n(&self) -> usize {
        self.x_obs.rows()
    }

    pub fn p(&self) -> usize {
        self.x_obs.cols()
    }

    /// Draws of one missing entry across the retained sweeps.
    pub fn entry_draws(&self, e: usize) -> Vec<f64> {
        let k = self.entries.len();
        (0..self.n_draws).map(|s| self.x_draws[s * k + e]).collect()
    }

    /// Completed table of draw `s`.
    pub fn draw(&self, s: usize) -> Tensor {
        let k = self.entries.len();
        let mut t = self.x_obs.clone();
        for (e, &(i, j)) in self.entries.iter().enumerate() {
            t.set(i, j, self.x_draws[s * k + e]);
        }
        t
    }

    /// Latent draw `s`, `n × d`.
    pub fn latent(&self, s: usize) -> Tensor {
        let len = self.n() * self.z_dim;
        Tensor::new(self.n(), self.z_dim, self.z_draws[s * len..(s + 1) * len].to_vec())
            .expect("stored draw has n·d values")
    }

    /// Maps draws back to raw units: `x * std + mean` per column, and the
    /// observed entries are replaced by `raw_obs` so they stay bitwise equal
    /// to the input file.
    pub fn destandardize(&mut self, scaler: &crate::data::Scaler, raw_obs: &Tensor) -> Result<()> {
        if raw_obs.shape() != self.x_obs.shape() || scaler.p() != self.p() {
            return Err(Error::shape("destandardize draws", &raw_obs.shape(), &self.x_obs.shape()));
        }
        let k = self.entries.len();
        for s in 0..self.n_draws {
            for (e, &(_, j)) in self.entries.iter().enumerate() {
                let v = &mut self.x_draws[s * k + e];
                *v = *v * scaler.std[j] + scaler.mean[j];
            }
        }
        self.x_obs = raw_obs.clone();
        Ok(())
    }
}

/// Chain state and adapters for a contiguous block of rows.
struct Chunk {
    rows: std::ops::Range<usize>,
    z: Tensor,
    x: Tensor,
    batch: MaskedBatch,
    has_missing: Vec<bool>,
    rngs: Vec<Rng>,
    da_z: Vec<DualAveraging>,
    da_x: Vec<DualAveraging>,
    last_z: Vec<f64>,
    last_x: Vec<f64>,
    stats: Vec<ChainStats>,
    x_draws: Vec<f64>,
    z_draws: Vec<f64>,
}

struct Nets<'a> {
    generator: &'a GeneratorNet,
    missingness: &'a MissingnessNet,
}

impl Chunk {
    fn sweep(&mut self, sweep: usize, nets: &Nets<'_>, cfg: &HmcConfig, beta: f64, keep: bool) -> Result<[Partial; 2]> {
        let b = self.rows.len();
        let adapting = sweep < cfg.adapt_sweeps();
        let past_adapt = !adapting;

        // latent block
        let z_eps: Vec<f64> = self
            .da_z
            .iter()
            .map(|d| if adapting { d.current() } else { d.averaged() })
            .collect();
        let all_active = vec![true; b];
        let ones = Tensor::full(b, self.z.cols(), 1.0);
        let x_const = self.x.clone();
        let gen = nets.generator;
        let z_target = move |rows: &[usize], q: &Tensor| -> Result<(Vec<f64>, Tensor)> {
            let xr = if rows.len() == x_const.rows() { x_const.clone() } else { x_const.select_rows(rows) };
            let (v, g) = value_and_grad(q, |tape, zv| {
                let mut acc = Bound::new();
                let bg = gen.bind(tape, false, &mut Draw::Mean, &mut acc);
                hmc_logdensity_z(zv, tape.constant(xr.clone()), &bg)
            })?;
            Ok((v.into_data(), g))
        };
        let zs = hmc_rows(&mut self.z, &ones, &all_active, &z_eps, cfg.n_leapfrog, &mut self.rngs, &z_target)?;
        let mut pz = Partial::new();
        for i in 0..b {
            record(&mut pz, z_eps[i], self.last_z[i], zs.accepted[i], zs.accept_prob[i], zs.nonfinite[i]);
            self.last_z[i] = z_eps[i];
            if adapting {
                self.da_z[i].update(zs.accept_prob[i]);
            }
            let st = &mut self.stats[i];
            st.nonfinite += zs.nonfinite[i] as usize;
            st.z_step = z_eps[i];
            if past_adapt {
                st.z_proposals += 1;
                st.z_accepted += zs.accepted[i] as usize;
            }
        }

        // missing block, generator evaluated at the new latents
        let x_eps: Vec<f64> = self
            .da_x
            .iter()
            .map(|d| if adapting { d.current() } else { d.averaged() })
            .collect();
        let (mean, var) = gen.forward(&self.z)?;
        let batch = &self.batch;
        let miss = nets.missingness;
        let x_target = move |rows: &[usize], q: &Tensor| -> Result<(Vec<f64>, Tensor)> {
            let sub;
            let target = if rows.len() == batch.rows() {
                XmisTarget { batch, mean: mean.clone(), var: var.clone(), beta }
            } else {
                sub = MaskedBatch {
                    observed: batch.observed.select_rows(rows),
                    mask: batch.mask.select_rows(rows),
                    free_mask: batch.free_mask.select_rows(rows),
                };
                XmisTarget { batch: &sub, mean: mean.select_rows(rows), var: var.select_rows(rows), beta }
            };
            let (v, g) = value_and_grad(q, |tape, free| {
                let mut acc = Bound::new();
                let bm = miss.bind("missingness", tape, false, &mut Draw::Mean, &mut acc);
                target.logdensity(free, &bm)
            })?;
            Ok((v.into_data(), g))
        };
        let xs = hmc_rows(&mut self.x, &self.batch.free_mask, &self.has_missing, &x_eps, cfg.n_leapfrog, &mut self.rngs, &x_target)?;
        let mut px = Partial::new();
        for i in 0..b {
            if !self.has_missing[i] {
                continue;
            }
            record(&mut px, x_eps[i], self.last_x[i], xs.accepted[i], xs.accept_prob[i], xs.nonfinite[i]);
            self.last_x[i] = x_eps[i];
            if adapting {
                self.da_x[i].update(xs.accept_prob[i]);
            }
            let st = &mut self.stats[i];
            st.nonfinite += xs.nonfinite[i] as usize;
            st.x_step = x_eps[i];
            if past_adapt {
                st.x_proposals += 1;
                st.x_accepted += xs.accepted[i] as usize;
            }
        }

        if keep {
            for i in 0..b {
                for j in 0..self.x.cols() {
                    if self.batch.mask.get(i, j) == 0.0 {
                        self.x_draws.push(self.x.get(i, j));
                    }
                }
            }
            self.z_draws.extend_from_slice(self.z.data());
        }
        Ok([pz, px])
    }
}

fn record(p: &mut Partial, eps: f64, last: f64, accepted: bool, prob: f64, nonfinite: bool) {
    p.active += 1;
    p.step_sum += eps;
    p.step_min = p.step_min.min(eps);
    p.step_max = p.step_max.max(eps);
    p.accepted += accepted as usize;
    p.prob_sum += prob;
    p.changed += (eps.to_bits() != last.to_bits()) as usize;
    p.nonfinite += nonfinite as usize;
}

/// Runs the sampler from `(z, x)` (standardized units; `x` completed, its
/// observed entries must equal `x_obs`).
///
/// Sweeps `0..burn_in` are discarded; the next `n_mcmc` are kept. With a
/// variational model and `resample_weights`, every retained sweep uses one
/// joint weight draw for (θ, φ) taken from the `HmcWeights` substream of that
/// sweep; otherwise the posterior-mean networks are used throughout.
pub fn hmc_within_gibbs(
    z: &Tensor,
    x: &Tensor,
    x_obs: &Tensor,
    mask: &Tensor,
    model: &Model,
    cfg: &HmcConfig,
) -> Result<PosteriorDraws> {
    cfg.validate()?;
    let (n, p, d) = (x.rows(), x.cols(), model.generator.z_dim());
    if p != model.p() || z.shape() != [n, d] || x_obs.shape() != [n, p] || mask.shape() != [n, p] {
        return Err(Error::shape("sampler state", &[n, p, z.cols()], &[n, model.p(), d]));
    }
    let observed_zeroed = x_obs.zip_map(mask, |v, r| if r == 1.0 { v } else { 0.0 });
    let mut chunks: Vec<Chunk> = (0..n)
        .step_by(CHUNK_ROWS)
        .map(|start| {
            let rows = start..(start + CHUNK_ROWS).min(n);
            let idx: Vec<usize> = rows.clone().collect();
            let m = mask.select_rows(&idx);
            let has_missing = (0..idx.len()).map(|i| m.row(i).contains(&0.0)).collect();
            let mut xc = x.select_rows(&idx);
            // observed coordinates start exactly at the input values
            for (li, &gi) in idx.iter().enumerate() {
                for j in 0..p {
                    if mask.get(gi, j) == 1.0 {
                        xc.set(li, j, x_obs.get(gi, j));
                    }
                }
            }
            let b = idx.len();
            Chunk {
                z: z.select_rows(&idx),
                x: xc,
                batch: MaskedBatch {
                    observed: observed_zeroed.select_rows(&idx),
                    free_mask: m.map(|r| 1.0 - r),
                    mask: m,
                },
                has_missing,
                rngs: idx.iter().map(|&i| substream(cfg.seed, Stream::Hmc, i as u64)).collect(),
                da_z: vec![DualAveraging::new(cfg.step_size, cfg.target_accept); b],
                da_x: vec![DualAveraging::new(cfg.step_size, cfg.target_accept); b],
                last_z: vec![f64::NAN; b],
                last_x: vec![f64::NAN; b],
                stats: vec![ChainStats::default(); b],
                x_draws: Vec::new(),
                z_draws: Vec::new(),
                rows,
            }
        })
        .collect();

    let mean_gen = model.generator.mean_network();
    let mean_miss = model.missingness.mean_network();
    let bnn = model.generator.is_variational() || model.missingness.is_variational();
    let beta = model.config.beta;
    let total = cfg.burn_in + cfg.n_mcmc;
    let mut log = Vec::with_capacity(2 * total);
    for sweep in 0..total {
        let keep = sweep >= cfg.burn_in;
        let sampled;
        let nets = if bnn && cfg.resample_weights && keep {
            let mut wr = substream(cfg.seed, Stream::HmcWeights, sweep as u64);
            sampled = (model.generator.sampled_network(&mut wr), model.missingness.sampled_network(&mut wr));
            Nets { generator: &sampled.0, missingness: &sampled.1 }
        } else {
            Nets { generator: &mean_gen, missingness: &mean_miss }
        };
        let parts: Vec<[Partial; 2]> = chunks
            .par_iter_mut()
            .map(|c| c.sweep(sweep, &nets, cfg, beta, keep))
            .collect::<Result<_>>()?;
        for (k, block) in [Block::Latent, Block::Missing].into_iter().enumerate() {
            let mut acc = Partial::new();
            for part in &parts {
                acc.merge(&part[k]);
            }
            log.push(acc.finish(sweep, block));
        }
    }

    let entries: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..p).filter(move |&j| mask.get(i, j) == 0.0).map(move |j| (i, j)))
        .collect();
    let mut x_draws = Vec::with_capacity(cfg.n_mcmc * entries.len());
    let mut z_draws = Vec::with_capacity(cfg.n_mcmc * n * d);
    for s in 0..cfg.n_mcmc {
        for c in &chunks {
            let ke = c.x_draws.len() / cfg.n_mcmc;
            x_draws.extend_from_slice(&c.x_draws[s * ke..(s + 1) * ke]);
            let kz = c.rows.len() * d;
            z_draws.extend_from_slice(&c.z_draws[s * kz..(s + 1) * kz]);
        }
    }
    Ok(PosteriorDraws {
        x_obs: x_obs.clone(),
        mask: mask.clone(),
        entries,
        x_draws,
        z_draws,
        n_draws: cfg.n_mcmc,
        z_dim: d,
        stats: chunks.into_iter().flat_map(|c| c.stats).collect(),
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use rand::SeedableRng;

    fn quadratic(rows: &[usize], q: &Tensor) -> Result<(Vec<f64>, Tensor)> {
        let _ = rows;
        let (v, g) = value_and_grad(q, |_t: &Tape, x| Ok(x.square().row_sum().scale(-0.5)))?;
        Ok((v.into_data(), g))
    }

    #[test]
    fn tiny_steps_conserve_energy() {
        let mut q = Tensor::row_vector(vec![0.3, -1.2, 0.8]);
        let start = q.clone();
        let mut rngs = vec![Rng::seed_from_u64(4)];
        let ones = Tensor::full(1, 3, 1.0);
        let st = hmc_rows(&mut q, &ones, &[true], &[1e-4], 5, &mut rngs, &quadratic).unwrap();
        // acceptance probability is exp(-|ΔH|)
        assert!(1.0 - st.accept_prob[0] < 1e-6, "{}", st.accept_prob[0]);
        assert!(st.accepted[0]);
        assert_ne!(q, start);
    }

    #[test]
    fn frozen_coordinates_do_not_move() {
        let mut q = Tensor::row_vector(vec![0.3, -1.2, 0.8]);
        let movable = Tensor::row_vector(vec![1.0, 0.0, 1.0]);
        let mut rngs = vec![Rng::seed_from_u64(4)];
        for _ in 0..20 {
            hmc_rows(&mut q, &movable, &[true], &[0.5], 5, &mut rngs, &quadratic).unwrap();
            assert_eq!(q.get(0, 1).to_bits(), (-1.2f64).to_bits());
        }
    }

    #[test]
    fn inactive_rows_consume_no_randomness() {
        let mut q = Tensor::from_rows(&[vec![0.1], vec![0.2]]).unwrap();
        let mut rngs = vec![Rng::seed_from_u64(1), Rng::seed_from_u64(2)];
        let fresh = Rng::seed_from_u64(2);
        let ones = Tensor::full(2, 1, 1.0);
        hmc_rows(&mut q, &ones, &[true, false], &[0.1, 0.1], 3, &mut rngs, &quadratic).unwrap();
        assert_eq!(rngs[1], fresh);
        assert_eq!(q.get(1, 0), 0.2);
    }

    #[test]
    fn nonfinite_trajectories_are_rejected() {
        let blowup = |_rows: &[usize], q: &Tensor| -> Result<(Vec<f64>, Tensor)> {
            let v = q.data().iter().map(|&x| if x.abs() > 1.0 { f64::NAN } else { -0.5 * x * x }).collect();
            Ok((v, q.map(|x| -x)))
        };
        let mut q = Tensor::row_vector(vec![0.9]);
        let mut rngs = vec![Rng::seed_from_u64(0)];
        let ones = Tensor::full(1, 1, 1.0);
        let st = hmc_rows(&mut q, &ones, &[true], &[50.0], 3, &mut rngs, &blowup).unwrap();
        assert!(st.nonfinite[0]);
        assert!(!st.accepted[0]);
        assert_eq!(q.get(0, 0), 0.9);
    }
}
