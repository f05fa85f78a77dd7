use std::cell::RefCell;
use std::rc::Rc;

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Recording of a single forward evaluation.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and `backward` simply walks it in reverse. A tape is
/// meant to be built, differentiated and dropped; it is never reused.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Affine { x: usize, w: usize, b: Option<usize> },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    Square(usize),
    Log(usize),
    Exp(usize),
    Tanh(usize),
    Sigmoid(usize),
    Softplus(usize),
    LeakyRelu(usize, f64),
    Sum(usize),
    Mean(usize),
    RowSum(usize),
    SliceCols(usize, usize),
    ConcatCols(Vec<usize>),
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf whose gradient is wanted.
    pub fn var(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as a constant; no gradient flows into it.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse sweep from a scalar output.
    ///
    /// The tape itself is left untouched, so calling this twice returns the
    /// same gradients.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let out_shape = nodes[output.id].value.shape();
        if out_shape != [1, 1] {
            return Err(Error::NonScalar(out_shape.to_vec()));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; output.id + 1];
        adj[output.id] = Some(Tensor::scalar(1.0));

        for id in (0..=output.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = adj[id].take() else { continue };
            let val = |i: usize| -> &Tensor { &nodes[i].value };
            let req = |i: usize| nodes[i].requires_grad;
            match &node.op {
                Op::Leaf => {
                    adj[id] = Some(g);
                    continue;
                }
                Op::Affine { x, w, b } => {
                    let xv = val(*x);
                    let wv = val(*w);
                    let (n, k, m) = (xv.rows(), xv.cols(), wv.cols());
                    if req(*x) {
                        let mut dx = Tensor::zeros(n, k);
                        gemm(false, true, n, m, k, g.data(), wv.data(), dx.data_mut(), 0.0);
                        accumulate(&mut adj, *x, dx);
                    }
                    if req(*w) {
                        let mut dw = Tensor::zeros(k, m);
                        gemm(true, false, k, n, m, xv.data(), g.data(), dw.data_mut(), 0.0);
                        accumulate(&mut adj, *w, dw);
                    }
                    if let Some(b) = b {
                        if req(*b) {
                            accumulate(&mut adj, *b, column_sums(&g));
                        }
                    }
                }
                Op::Add(a, b) => {
                    if req(*b) {
                        accumulate(&mut adj, *b, g.clone());
                    }
                    if req(*a) {
                        accumulate(&mut adj, *a, g);
                    }
                }
                Op::Sub(a, b) => {
                    if req(*b) {
                        accumulate(&mut adj, *b, g.map(|v| -v));
                    }
                    if req(*a) {
                        accumulate(&mut adj, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if req(*a) {
                        accumulate(&mut adj, *a, g.zip_map(val(*b), |g, y| g * y));
                    }
                    if req(*b) {
                        accumulate(&mut adj, *b, g.zip_map(val(*a), |g, x| g * x));
                    }
                }
                Op::Div(a, b) => {
                    let bv = val(*b);
                    if req(*a) {
                        accumulate(&mut adj, *a, g.zip_map(bv, |g, y| g / y));
                    }
                    if req(*b) {
                        let out = &node.value;
                        let t = g.zip_map(out, |g, q| g * q).zip_map(bv, |gq, y| -gq / y);
                        accumulate(&mut adj, *b, t);
                    }
                }
                Op::AddRow(a, row) => {
                    if req(*row) {
                        accumulate(&mut adj, *row, column_sums(&g));
                    }
                    if req(*a) {
                        accumulate(&mut adj, *a, g);
                    }
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    accumulate(&mut adj, *a, g.map(|v| v * c));
                }
                Op::Offset(a) => accumulate(&mut adj, *a, g),
                Op::Square(a) => {
                    accumulate(&mut adj, *a, g.zip_map(val(*a), |g, x| 2.0 * x * g));
                }
                Op::Log(a) => {
                    accumulate(&mut adj, *a, g.zip_map(val(*a), |g, x| g / x));
                }
                Op::Exp(a) => {
                    accumulate(&mut adj, *a, g.zip_map(&node.value, |g, y| g * y));
                }
                Op::Tanh(a) => {
                    accumulate(&mut adj, *a, g.zip_map(&node.value, |g, y| g * (1.0 - y * y)));
                }
                Op::Sigmoid(a) => {
                    accumulate(&mut adj, *a, g.zip_map(&node.value, |g, s| g * s * (1.0 - s)));
                }
                Op::Softplus(a) => {
                    accumulate(&mut adj, *a, g.zip_map(val(*a), |g, x| g * sigmoid(x)));
                }
                Op::LeakyRelu(a, slope) => {
                    let s = *slope;
                    accumulate(
                        &mut adj,
                        *a,
                        g.zip_map(val(*a), |g, x| if x > 0.0 { g } else { g * s }),
                    );
                }
                Op::Sum(a) => {
                    let [r, c] = val(*a).shape();
                    accumulate(&mut adj, *a, Tensor::full(r, c, g.item()));
                }
                Op::Mean(a) => {
                    let [r, c] = val(*a).shape();
                    let n = (r * c).max(1) as f64;
                    accumulate(&mut adj, *a, Tensor::full(r, c, g.item() / n));
                }
                Op::RowSum(a) => {
                    let [r, c] = val(*a).shape();
                    accumulate(&mut adj, *a, Tensor::from_fn(r, c, |i, _| g.get(i, 0)));
                }
                Op::SliceCols(a, start) => {
                    let [r, c] = val(*a).shape();
                    let w = g.cols();
                    let s = *start;
                    let t = Tensor::from_fn(r, c, |i, j| {
                        if j >= s && j < s + w {
                            g.get(i, j - s)
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut adj, *a, t);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let [r, c] = val(p).shape();
                        if req(p) {
                            let t = Tensor::from_fn(r, c, |i, j| g.get(i, offset + j));
                            accumulate(&mut adj, p, t);
                        }
                        offset += c;
                    }
                }
            }
        }
        Ok(Gradients { adj })
    }
}

fn accumulate(adj: &mut [Option<Tensor>], id: usize, g: Tensor) {
    match &mut adj[id] {
        Some(existing) => existing
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .for_each(|(e, v)| *e += v),
        slot @ None => *slot = Some(g),
    }
}

fn column_sums(g: &Tensor) -> Tensor {
    let mut out = vec![0.0; g.cols()];
    for i in 0..g.rows() {
        for (o, v) in out.iter_mut().zip(g.row(i)) {
            *o += v;
        }
    }
    Tensor::row_vector(out)
}

/// Logistic function, evaluated without overflow for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` in the overflow-free form `log1p(exp(-|x|)) + max(x, 0)`.
pub fn softplus(x: f64) -> f64 {
    (-x.abs()).exp().ln_1p() + x.max(0.0)
}

/// Adjoints of every node that required a gradient.
#[derive(Clone, Debug)]
pub struct Gradients {
    adj: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.adj.get(v.id).and_then(Option::as_ref)
    }

    /// Gradient with respect to `v`, zeros when nothing flowed into it.
    pub fn wrt(&self, v: Var<'_>) -> Tensor {
        match self.get(v) {
            Some(t) => t.clone(),
            None => {
                let [r, c] = v.value().shape();
                Tensor::zeros(r, c)
            }
        }
    }
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> [usize; 2] {
        self.tape.nodes.borrow()[self.id].value.shape()
    }

    /// Scalar value of a `1 x 1` node.
    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn same_tape(&self, other: &Var<'_>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "variables belong to different tapes"
        );
    }

    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let v = self.value().map(f);
        self.tape.push(v, op, self.tape.requires(self.id))
    }

    fn binary(
        &self,
        other: Var<'t>,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        self.same_tape(&other);
        let a = self.value();
        let b = other.value();
        if a.shape() != b.shape() {
            return Err(Error::shape(name, &a.shape(), &b.shape()));
        }
        let v = a.zip_map(&b, f);
        let rg = self.tape.requires(self.id) || self.tape.requires(other.id);
        Ok(self.tape.push(v, op, rg))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "div", Op::Div(self.id, other.id), |a, b| a / b)
    }

    /// Adds a `1 x m` row to every row of an `n x m` node.
    pub fn add_row(self, row: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&row);
        let a = self.value();
        let r = row.value();
        if r.rows() != 1 || r.cols() != a.cols() {
            return Err(Error::shape("add_row", &a.shape(), &r.shape()));
        }
        let mut out = (*a).clone();
        for i in 0..out.rows() {
            out.row_mut(i)
                .iter_mut()
                .zip(r.data())
                .for_each(|(o, b)| *o += b);
        }
        let rg = self.tape.requires(self.id) || self.tape.requires(row.id);
        Ok(self.tape.push(out, Op::AddRow(self.id, row.id), rg))
    }

    pub fn matmul(self, w: Var<'t>) -> Result<Var<'t>> {
        self.affine_impl(w, None)
    }

    /// `self * w + b` with `b` broadcast over rows.
    pub fn affine(self, w: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
        self.affine_impl(w, Some(b))
    }

    fn affine_impl(self, w: Var<'t>, b: Option<Var<'t>>) -> Result<Var<'t>> {
        self.same_tape(&w);
        let x = self.value();
        let wv = w.value();
        if x.cols() != wv.rows() {
            return Err(Error::shape("affine", &x.shape(), &wv.shape()));
        }
        let (n, k, m) = (x.rows(), x.cols(), wv.cols());
        let mut out = Tensor::zeros(n, m);
        let mut rg = self.tape.requires(self.id) || self.tape.requires(w.id);
        if let Some(b) = b {
            self.same_tape(&b);
            let bv = b.value();
            if bv.rows() != 1 || bv.cols() != m {
                return Err(Error::shape("affine bias", &[n, m], &bv.shape()));
            }
            for i in 0..n {
                out.row_mut(i).copy_from_slice(bv.data());
            }
            rg |= self.tape.requires(b.id);
        }
        let beta = if b.is_some() { 1.0 } else { 0.0 };
        gemm(false, false, n, k, m, x.data(), wv.data(), out.data_mut(), beta);
        let op = Op::Affine {
            x: self.id,
            w: w.id,
            b: b.map(|b| b.id),
        };
        Ok(self.tape.push(out, op, rg))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, c), |x| x * c)
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn offset(self, c: f64) -> Var<'t> {
        self.unary(Op::Offset(self.id), |x| x + c)
    }

    pub fn square(self) -> Var<'t> {
        self.unary(Op::Square(self.id), |x| x * x)
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(Op::Log(self.id), f64::ln)
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp(self.id), f64::exp)
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(Op::Tanh(self.id), f64::tanh)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), sigmoid)
    }

    pub fn softplus(self) -> Var<'t> {
        self.unary(Op::Softplus(self.id), softplus)
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        self.unary(
            Op::LeakyRelu(self.id, slope),
            move |x| if x > 0.0 { x } else { slope * x },
        )
    }

    /// Sum of all entries, as a `1 x 1` node.
    pub fn sum(self) -> Var<'t> {
        let s = self.value().sum();
        self.tape
            .push(Tensor::scalar(s), Op::Sum(self.id), self.tape.requires(self.id))
    }

    pub fn mean(self) -> Var<'t> {
        let v = self.value();
        let m = v.sum() / v.len().max(1) as f64;
        self.tape
            .push(Tensor::scalar(m), Op::Mean(self.id), self.tape.requires(self.id))
    }

    /// Per-row sums, `n x m -> n x 1`.
    pub fn row_sum(self) -> Var<'t> {
        let v = self.value();
        let out = Tensor::from_fn(v.rows(), 1, |i, _| v.row(i).iter().sum());
        self.tape
            .push(out, Op::RowSum(self.id), self.tape.requires(self.id))
    }

    /// Columns `start..end`.
    pub fn slice_cols(self, start: usize, end: usize) -> Result<Var<'t>> {
        let v = self.value();
        if start > end || end > v.cols() {
            return Err(Error::shape("slice_cols", &v.shape(), &[start, end]));
        }
        let out = Tensor::from_fn(v.rows(), end - start, |i, j| v.get(i, start + j));
        Ok(self
            .tape
            .push(out, Op::SliceCols(self.id, start), self.tape.requires(self.id)))
    }

    /// Horizontal concatenation of nodes with equal row counts.
    pub fn concat_cols(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat_cols", &[0], &[0]))?;
        let tape = first.tape;
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let rows = values[0].rows();
        for v in &values {
            if v.rows() != rows {
                return Err(Error::shape("concat_cols", &values[0].shape(), &v.shape()));
            }
        }
        let cols: usize = values.iter().map(|v| v.cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for v in &values {
                data.extend_from_slice(v.row(i));
            }
        }
        let rg = parts.iter().any(|p| tape.requires(p.id));
        let ids = parts.iter().map(|p| p.id).collect();
        Ok(tape.push(Tensor::new(rows, cols, data)?, Op::ConcatCols(ids), rg))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_of_zero_is_half() {
        let tape = Tape::new();
        let x = tape.var(Tensor::scalar(0.0));
        let y = x.sigmoid();
        assert_eq!(y.item(), 0.5);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).item(), 0.25);
    }

    #[test]
    fn leaky_relu_negative_branch() {
        let tape = Tape::new();
        let x = tape.var(Tensor::scalar(-1.0));
        let y = x.leaky_relu(0.2);
        assert!((y.item() + 0.2).abs() < 1e-15);
        let g = tape.backward(y).unwrap();
        assert!((g.wrt(x).item() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn softplus_at_zero_and_far_tails() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0 && softplus(-1000.0) < 1e-300);
        assert!(sigmoid(-1000.0).is_finite() && sigmoid(1000.0) == 1.0);
    }

    #[test]
    fn gradient_of_sum_of_squares() {
        let tape = Tape::new();
        let x = tape.var(Tensor::row_vector(vec![1.0, 2.0]));
        let y = x.square().sum();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_twice_gives_identical_adjoints() {
        let tape = Tape::new();
        let x = tape.var(Tensor::row_vector(vec![0.3, -1.2, 2.0]));
        let y = x.tanh().mul(x).unwrap().exp().sum();
        let g1 = tape.backward(y).unwrap();
        let g2 = tape.backward(y).unwrap();
        assert_eq!(g1.wrt(x), g2.wrt(x));
    }

    #[test]
    fn non_scalar_backward_is_rejected() {
        let tape = Tape::new();
        let x = tape.var(Tensor::row_vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x.square()), Err(Error::NonScalar(_))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let tape = Tape::new();
        let c = tape.constant(Tensor::row_vector(vec![1.0, 2.0]));
        let x = tape.var(Tensor::row_vector(vec![3.0, 4.0]));
        let y = c.mul(x).unwrap().sum();
        let g = tape.backward(y).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.wrt(x).data(), &[1.0, 2.0]);
    }

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let tape = Tape::new();
        let a = tape.var(Tensor::zeros(2, 3));
        let b = tape.var(Tensor::zeros(3, 2));
        let err = a.add(b).unwrap_err().to_string();
        assert!(err.contains("add") && err.contains("[2, 3]") && err.contains("[3, 2]"));
        assert!(a.matmul(a).is_err());
    }

    #[test]
    fn concat_and_slice_route_gradients() {
        let tape = Tape::new();
        let a = tape.var(Tensor::from_fn(2, 2, |i, j| (i + j) as f64));
        let b = tape.var(Tensor::from_fn(2, 1, |i, _| i as f64 + 5.0));
        let c = Var::concat_cols(&[a, b]).unwrap();
        assert_eq!(c.shape(), [2, 3]);
        assert_eq!(c.value().row(1), &[1.0, 2.0, 6.0]);
        let s = c.slice_cols(1, 3).unwrap();
        let y = s.square().sum();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(a).data(), &[0.0, 2.0, 0.0, 4.0]);
        assert_eq!(g.wrt(b).data(), &[10.0, 12.0]);
    }
}
