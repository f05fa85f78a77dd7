use rand::seq::SliceRandom;

use crate::autodiff::Tensor;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};
use crate::training::{knn_impute_init, InnerProblem, Model, RowAdam};

/// Warm start for the sampler on a (possibly new) table.
#[derive(Clone, Debug)]
pub struct Refined {
    pub z: Tensor,
    /// Completed table in the model's standardized units.
    pub x: Tensor,
    /// Epoch means of the two inner losses, one entry per test epoch.
    pub loss_z: Vec<f64>,
    pub loss_xmis: Vec<f64>,
}

/// Latent and missing-value steps only, with the networks frozen, starting
/// from a KNN fill and `Z = 0`. `ds` must already be in the model's
/// standardized units.
pub fn map_refine(ds: &Dataset, model: &Model, test_epochs: usize) -> Result<Refined> {
    if ds.p() != model.p() {
        return Err(Error::Data(format!(
            "table has {} features but the model was trained on {}",
            ds.p(),
            model.p()
        )));
    }
    let cfg = &model.config;
    let mut x = knn_impute_init(ds)?;
    let mut z = Tensor::zeros(ds.n(), cfg.z_dim);
    let mut zopt = RowAdam::new(cfg.lr_z, ds.n(), cfg.z_dim);
    let mut xopt = RowAdam::new(cfg.lr_x, ds.n(), ds.p());
    let gen = model.generator.mean_network();
    let miss = model.missingness.mean_network();
    let problem = InnerProblem {
        generator: &gen,
        missingness: &miss,
        x_obs: &ds.x_obs,
        mask: &ds.mask,
        temper: model.temper(),
        grad_clip: cfg.grad_clip,
    };
    problem.project(&(0..ds.n()).collect::<Vec<_>>(), &mut x);
    let mut shuffle = stream(cfg.seed, Stream::Shuffle);
    let mut order: Vec<usize> = (0..ds.n()).collect();
    let (mut lz_log, mut lx_log) = (Vec::new(), Vec::new());
    for epoch in 1..=test_epochs {
        order.shuffle(&mut shuffle);
        let (mut lz, mut lx, mut count) = (0.0, 0.0, 0usize);
        for (b, rows) in order.chunks(cfg.batch_size).enumerate() {
            for _ in 0..cfg.n_inner_steps {
                let (a, c) = problem
                    .step(rows, &mut z, &mut x, &mut zopt, &mut xopt)
                    .map_err(|e| match e {
                        Error::NonFinite(what) => Error::Diverged { epoch, batch: b, what },
                        other => other,
                    })?;
                lz += a;
                lx += c;
                count += 1;
            }
        }
        lz_log.push(lz / count.max(1) as f64);
        lx_log.push(lx / count.max(1) as f64);
    }
    Ok(Refined {
        z,
        x,
        loss_z: lz_log,
        loss_xmis: lx_log,
    })
}
