use crate::autodiff::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Moment buffers for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamBuffers {
    pub m: Tensor,
    pub v: Tensor,
    pub t: u64,
}

impl AdamBuffers {
    pub fn for_shape(rows: usize, cols: usize) -> Self {
        Self {
            m: Tensor::zeros(rows, cols),
            v: Tensor::zeros(rows, cols),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `param` in place.
pub fn adam_step(param: &mut Tensor, grad: &Tensor, buf: &mut AdamBuffers, lr: f64) {
    assert_eq!(param.shape(), grad.shape(), "adam: gradient shape");
    assert_eq!(param.shape(), buf.m.shape(), "adam: buffer shape");
    buf.t += 1;
    let c1 = 1.0 - BETA1.powi(buf.t as i32);
    let c2 = 1.0 - BETA2.powi(buf.t as i32);
    update(param.data_mut(), grad.data(), buf.m.data_mut(), buf.v.data_mut(), lr, c1, c2);
}

fn update(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], lr: f64, c1: f64, c2: f64) {
    for k in 0..p.len() {
        m[k] = BETA1 * m[k] + (1.0 - BETA1) * g[k];
        v[k] = BETA2 * v[k] + (1.0 - BETA2) * g[k] * g[k];
        let mh = m[k] / c1;
        let vh = v[k] / c2;
        p[k] -= lr * mh / (vh.sqrt() + EPSILON);
    }
}

/// Adam over a list of parameter tensors sharing one step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub buffers: Vec<AdamBuffers>,
}

impl Adam {
    pub fn new<'a>(lr: f64, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        Self {
            lr,
            buffers: params
                .into_iter()
                .map(|t| AdamBuffers::for_shape(t.rows(), t.cols()))
                .collect(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor]) {
        assert_eq!(params.len(), self.buffers.len(), "adam: parameter count");
        assert_eq!(grads.len(), self.buffers.len(), "adam: gradient count");
        for ((p, g), b) in params.into_iter().zip(grads).zip(&mut self.buffers) {
            adam_step(p, g, b, self.lr);
        }
    }
}

/// Adam for per-sample state (latents, missing values): each row keeps its
/// own step counter, so a row's trajectory depends only on the updates it
/// received, not on how batches were composed.
#[derive(Clone, Debug, PartialEq)]
pub struct RowAdam {
    pub lr: f64,
    pub m: Tensor,
    pub v: Tensor,
    pub t: Vec<u64>,
}

impl RowAdam {
    pub fn new(lr: f64, rows: usize, cols: usize) -> Self {
        Self {
            lr,
            m: Tensor::zeros(rows, cols),
            v: Tensor::zeros(rows, cols),
            t: vec![0; rows],
        }
    }

    /// Applies `grad` (one row per entry of `rows`) to the given rows of `values`.
    pub fn step_rows(&mut self, values: &mut Tensor, rows: &[usize], grad: &Tensor) {
        assert_eq!(grad.rows(), rows.len(), "row adam: gradient rows");
        assert_eq!(grad.cols(), values.cols(), "row adam: gradient cols");
        for (b, &i) in rows.iter().enumerate() {
            self.t[i] += 1;
            let t = self.t[i] as i32;
            let c1 = 1.0 - BETA1.powi(t);
            let c2 = 1.0 - BETA2.powi(t);
            update(values.row_mut(i), grad.row(b), self.m.row_mut(i), self.v.row_mut(i), self.lr, c1, c2);
        }
    }
}

/// Rescales `grads` jointly so their global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_by_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}
