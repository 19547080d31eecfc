//! Tape-based reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Graph`] is an append-only tape. Every operation evaluates eagerly as
//! it is recorded, so after construction the forward pass is complete and
//! [`Graph::value`] holds the cached value of any node. [`Graph::backward`]
//! then sweeps the tape in reverse to produce exact first-order gradients
//! of a scalar node with respect to every node and every bound
//! [`ParamVector`].
//!
//! Binary element-wise operations broadcast a `1 × c` row, an `r × 1`
//! column, or a `1 × 1` scalar against a full matrix. Nothing else
//! broadcasts.
//!
//! ```
//! use ratiobench::autodiff::Graph;
//! use ratiobench::matrix::Matrix;
//!
//! let mut g = Graph::new();
//! let x = g.constant(Matrix::scalar(3.0));
//! let y = g.square(x).unwrap();
//! let grads = g.backward(y).unwrap();
//! assert_eq!(g.scalar_value(y), Some(9.0));
//! assert_eq!(grads.of(x).unwrap().item(), Some(6.0));
//! ```

mod gradcheck;
mod params;

pub use gradcheck::{finite_diff_check, GradCheck};
pub use params::{ParamSlice, ParamVector};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Handle to a [`ParamVector`] bound to a graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Binding(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Neg(Var),
    Scale(Var, f64),
    Offset(Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Square(Var),
    Sqrt(Var),
    Cos(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    ColMean(Var),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Matrix,
}

#[derive(Debug, Clone)]
struct Bound {
    params: ParamVector,
    slots: Vec<Option<Var>>,
}

/// Append-only computation tape.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bindings: Vec<Bound>,
    clamped: u64,
}

fn broadcast_shape(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Result<(usize, usize)> {
    let dim = |x: usize, y: usize| {
        if x == y {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else if y == 1 {
            Some(x)
        } else {
            None
        }
    };
    match (dim(a.0, b.0), dim(a.1, b.1)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(Error::Shape { op, lhs: a, rhs: b }),
    }
}

fn zip_broadcast(a: &Matrix, b: &Matrix, shape: (usize, usize), f: impl Fn(f64, f64) -> f64) -> Matrix {
    let (rows, cols) = shape;
    let mut out = Matrix::zeros(rows, cols);
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    for i in 0..rows {
        let ia = if ar == 1 { 0 } else { i };
        let ib = if br == 1 { 0 } else { i };
        for j in 0..cols {
            let ja = if ac == 1 { 0 } else { j };
            let jb = if bc == 1 { 0 } else { j };
            out.set(i, j, f(a.get(ia, ja), b.get(ib, jb)));
        }
    }
    out
}

/// Sums `grad` down to `shape`, undoing a broadcast.
fn reduce_to(grad: Matrix, shape: (usize, usize)) -> Matrix {
    if grad.shape() == shape {
        return grad;
    }
    let mut out = Matrix::zeros(shape.0, shape.1);
    for i in 0..grad.rows() {
        let oi = if shape.0 == 1 { 0 } else { i };
        for j in 0..grad.cols() {
            let oj = if shape.1 == 1 { 0 } else { j };
            let v = out.get(oi, oj) + grad.get(i, j);
            out.set(oi, oj, v);
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Value of a 1×1 node.
    pub fn scalar_value(&self, v: Var) -> Option<f64> {
        self.nodes[v.0].value.item()
    }

    /// Elements pushed to a bound by [`Graph::clamp`] so far.
    pub fn clamp_count(&self) -> u64 {
        self.clamped
    }

    fn push(&mut self, op: Op, value: Matrix) -> Result<Var> {
        let id = self.nodes.len();
        if !value.all_finite() {
            return Err(Error::GraphDomain {
                node: id,
                message: format!("{op:?} produced a non-finite value"),
            });
        }
        self.nodes.push(Node { op, value });
        Ok(Var(id))
    }

    fn domain(&self, message: String) -> Error {
        Error::GraphDomain {
            node: self.nodes.len(),
            message,
        }
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node { op: Op::Leaf, value });
        Var(id)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Matrix::scalar(value))
    }

    /// Registers a parameter vector. Its slices become leaves on demand via
    /// [`Graph::slot`].
    pub fn bind(&mut self, params: &ParamVector) -> Binding {
        self.bindings.push(Bound {
            params: params.clone(),
            slots: vec![None; params.layout().len()],
        });
        Binding(self.bindings.len() - 1)
    }

    /// Leaf node for slice `slot` of a bound vector. Repeated calls return
    /// the same node.
    pub fn slot(&mut self, binding: Binding, slot: usize) -> Var {
        if let Some(v) = self.bindings[binding.0].slots[slot] {
            return v;
        }
        let value = self.bindings[binding.0].params.matrix(slot);
        let id = self.nodes.len();
        self.nodes.push(Node {
            op: Op::Param,
            value,
        });
        self.bindings[binding.0].slots[slot] = Some(Var(id));
        Var(id)
    }

    pub fn params(&self, binding: Binding) -> &ParamVector {
        &self.bindings[binding.0].params
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        let shape = broadcast_shape(name, self.value(a).shape(), self.value(b).shape())?;
        Ok(zip_broadcast(self.value(a), self.value(b), shape, f))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("add", a, b, |x, y| x + y)?;
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("sub", a, b, |x, y| x - y)?;
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("mul", a, b, |x, y| x * y)?;
        self.push(Op::Mul(a, b), v)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        if let Some(i) = self.value(b).as_slice().iter().position(|&d| d == 0.0) {
            return Err(self.domain(format!("division by zero at element {i}")));
        }
        let v = self.binary("div", a, b, |x, y| x / y)?;
        self.push(Op::Div(a, b), v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push(Op::MatMul(a, b), v)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).transpose();
        self.push(Op::Transpose(a), v)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| -x);
        self.push(Op::Neg(a), v)
    }

    /// `c · a` for a constant `c`.
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).map(|x| c * x);
        self.push(Op::Scale(a, c), v)
    }

    /// `a + c` for a constant `c`.
    pub fn offset(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x + c);
        self.push(Op::Offset(a), v)
    }

    /// `c − a` for a constant `c`.
    pub fn rsub(&mut self, c: f64, a: Var) -> Result<Var> {
        let n = self.neg(a)?;
        self.offset(n, c)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), v)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(&x) = self.value(a).as_slice().iter().find(|&&x| !(x > 0.0)) {
            return Err(self.domain(format!("log of non-positive value {x}")));
        }
        let v = self.value(a).map(f64::ln);
        self.push(Op::Log(a), v)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    /// `max(0, a)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a), v)
    }

    /// Alias of [`Graph::relu`].
    pub fn max0(&mut self, a: Var) -> Result<Var> {
        self.relu(a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), v)
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(softplus);
        self.push(Op::Softplus(a), v)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x * x);
        self.push(Op::Square(a), v)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if let Some(&x) = self.value(a).as_slice().iter().find(|&&x| !(x > 0.0)) {
            return Err(self.domain(format!("sqrt of non-positive value {x}")));
        }
        let v = self.value(a).map(f64::sqrt);
        self.push(Op::Sqrt(a), v)
    }

    pub fn cos(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::cos);
        self.push(Op::Cos(a), v)
    }

    /// Clamps into `[lo, hi]` with zero gradient outside; every clamped
    /// element increments [`Graph::clamp_count`].
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let hits = self
            .value(a)
            .as_slice()
            .iter()
            .filter(|&&x| x < lo || x > hi)
            .count();
        self.clamped += hits as u64;
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(Op::Clamp { x: a, lo, hi }, v)
    }

    /// Sum of all elements, as 1×1.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Matrix::scalar(self.value(a).as_slice().iter().sum());
        self.push(Op::Sum(a), v)
    }

    /// Mean of all elements, as 1×1.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        if m.is_empty() {
            return Err(Error::Usage("mean of an empty node".into()));
        }
        let v = Matrix::scalar(m.as_slice().iter().sum::<f64>() / m.len() as f64);
        self.push(Op::Mean(a), v)
    }

    /// Per-row sums, as `r × 1`.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let sums: Vec<f64> = self.value(a).iter_rows().map(|r| r.iter().sum()).collect();
        self.push(Op::RowSum(a), Matrix::column(&sums))
    }

    /// Per-column means, as `1 × c`.
    pub fn col_mean(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        if m.rows() == 0 {
            return Err(Error::Usage("column mean of an empty node".into()));
        }
        let v = Matrix::from_vec(1, m.cols(), m.col_means())?;
        self.push(Op::ColMean(a), v)
    }

    /// Reverse sweep from a 1×1 `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).shape() != (1, 1) {
            return Err(Error::Usage(format!(
                "backward needs a scalar output, node {} has shape {:?}",
                output.0,
                self.value(output).shape()
            )));
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; output.0 + 1];
        adj[output.0] = Some(Matrix::scalar(1.0));

        fn accumulate(adj: &mut [Option<Matrix>], v: Var, g: Matrix) {
            match &mut adj[v.0] {
                Some(existing) => {
                    for (e, x) in existing.as_mut_slice().iter_mut().zip(g.as_slice()) {
                        *e += x;
                    }
                }
                slot @ None => *slot = Some(g),
            }
        }

        for id in (0..=output.0).rev() {
            let Some(grad) = adj[id].take() else { continue };
            let node = &self.nodes[id];
            let out = &node.value;
            let unary = |x: Var, f: &dyn Fn(f64, f64, f64) -> f64| -> Matrix {
                let xv = self.value(x);
                let data = grad
                    .as_slice()
                    .iter()
                    .zip(xv.as_slice())
                    .zip(out.as_slice())
                    .map(|((&g, &xi), &yi)| f(g, xi, yi))
                    .collect();
                Matrix::from_vec(xv.rows(), xv.cols(), data).expect("unary shape")
            };
            match node.op {
                Op::Leaf | Op::Param => {}
                Op::Add(a, b) => {
                    accumulate(&mut adj, a, reduce_to(grad.clone(), self.value(a).shape()));
                    accumulate(&mut adj, b, reduce_to(grad.clone(), self.value(b).shape()));
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, a, reduce_to(grad.clone(), self.value(a).shape()));
                    accumulate(&mut adj, b, reduce_to(grad.map(|g| -g), self.value(b).shape()));
                }
                Op::Mul(a, b) => {
                    let shape = grad.shape();
                    let ga = zip_broadcast(&grad, self.value(b), shape, |g, y| g * y);
                    let gb = zip_broadcast(&grad, self.value(a), shape, |g, x| g * x);
                    accumulate(&mut adj, a, reduce_to(ga, self.value(a).shape()));
                    accumulate(&mut adj, b, reduce_to(gb, self.value(b).shape()));
                }
                Op::Div(a, b) => {
                    let shape = grad.shape();
                    let ga = zip_broadcast(&grad, self.value(b), shape, |g, y| g / y);
                    // d(a/b)/db = −(a/b)/b
                    let q = zip_broadcast(out, self.value(b), shape, |o, y| -o / y);
                    let gb = zip_broadcast(&grad, &q, shape, |g, t| g * t);
                    accumulate(&mut adj, a, reduce_to(ga, self.value(a).shape()));
                    accumulate(&mut adj, b, reduce_to(gb, self.value(b).shape()));
                }
                Op::MatMul(a, b) => {
                    let ga = grad.matmul(&self.value(b).transpose())?;
                    let gb = self.value(a).transpose().matmul(&grad)?;
                    accumulate(&mut adj, a, ga);
                    accumulate(&mut adj, b, gb);
                }
                Op::Transpose(a) => accumulate(&mut adj, a, grad.transpose()),
                Op::Neg(a) => accumulate(&mut adj, a, grad.map(|g| -g)),
                Op::Scale(a, c) => accumulate(&mut adj, a, grad.map(|g| c * g)),
                Op::Offset(a) => accumulate(&mut adj, a, grad.clone()),
                Op::Exp(a) => accumulate(&mut adj, a, unary(a, &|g, _, y| g * y)),
                Op::Log(a) => accumulate(&mut adj, a, unary(a, &|g, x, _| g / x)),
                Op::Tanh(a) => accumulate(&mut adj, a, unary(a, &|g, _, y| g * (1.0 - y * y))),
                Op::Relu(a) => {
                    accumulate(&mut adj, a, unary(a, &|g, x, _| if x > 0.0 { g } else { 0.0 }))
                }
                Op::Sigmoid(a) => accumulate(&mut adj, a, unary(a, &|g, _, y| g * y * (1.0 - y))),
                Op::Softplus(a) => accumulate(&mut adj, a, unary(a, &|g, x, _| g * sigmoid(x))),
                Op::Square(a) => accumulate(&mut adj, a, unary(a, &|g, x, _| 2.0 * g * x)),
                Op::Sqrt(a) => accumulate(&mut adj, a, unary(a, &|g, _, y| 0.5 * g / y)),
                Op::Cos(a) => accumulate(&mut adj, a, unary(a, &|g, x, _| -g * x.sin())),
                Op::Clamp { x, lo, hi } => accumulate(
                    &mut adj,
                    x,
                    unary(x, &|g, xi, _| if xi >= lo && xi <= hi { g } else { 0.0 }),
                ),
                Op::Sum(a) => {
                    let g = grad.as_slice()[0];
                    let (r, c) = self.value(a).shape();
                    accumulate(&mut adj, a, Matrix::filled(r, c, g));
                }
                Op::Mean(a) => {
                    let (r, c) = self.value(a).shape();
                    let g = grad.as_slice()[0] / (r * c) as f64;
                    accumulate(&mut adj, a, Matrix::filled(r, c, g));
                }
                Op::RowSum(a) => {
                    let (r, c) = self.value(a).shape();
                    accumulate(&mut adj, a, reduce_to_rows(&grad, r, c));
                }
                Op::ColMean(a) => {
                    let (r, c) = self.value(a).shape();
                    let mut g = Matrix::zeros(r, c);
                    for i in 0..r {
                        for (j, v) in g.row_mut(i).iter_mut().enumerate() {
                            *v = grad.get(0, j) / r as f64;
                        }
                    }
                    accumulate(&mut adj, a, g);
                }
            }
            adj[id] = Some(grad);
        }
        Ok(Gradients { adjoints: adj })
    }

    /// Gradient of `output` with respect to a bound parameter vector, in its
    /// layout. Slices that never entered the graph get zeros.
    pub fn param_gradient(&self, grads: &Gradients, binding: Binding) -> ParamVector {
        let bound = &self.bindings[binding.0];
        let mut out = bound.params.zeros_like();
        for (slot, var) in bound.slots.iter().enumerate() {
            if let Some(g) = var.and_then(|v| grads.of(v)) {
                out.slice_mut(slot).copy_from_slice(g.as_slice());
            }
        }
        out
    }
}

fn reduce_to_rows(grad: &Matrix, r: usize, c: usize) -> Matrix {
    let mut g = Matrix::zeros(r, c);
    for i in 0..r {
        let gi = grad.get(i, 0);
        g.row_mut(i).iter_mut().for_each(|v| *v = gi);
    }
    g
}

/// Adjoints from one reverse sweep.
#[derive(Debug, Clone)]
pub struct Gradients {
    adjoints: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Adjoint of `v`, or `None` when the output does not depend on it.
    pub fn of(&self, v: Var) -> Option<&Matrix> {
        self.adjoints.get(v.0).and_then(Option::as_ref)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scalar_grad(build: impl Fn(&mut Graph, Var) -> Result<Var>, x0: f64) -> (f64, f64) {
        let mut g = Graph::new();
        let x = g.constant(Matrix::scalar(x0));
        let y = build(&mut g, x).unwrap();
        let grads = g.backward(y).unwrap();
        (g.scalar_value(y).unwrap(), grads.of(x).map_or(0.0, |m| m.as_slice()[0]))
    }

    #[test]
    fn primitive_values_and_derivatives() {
        assert_eq!(scalar_grad(|g, x| g.square(x), 3.0), (9.0, 6.0));
        let (v, d) = scalar_grad(|g, x| g.sigmoid(x), 0.0);
        assert_eq!((v, d), (0.5, 0.25));
        let (v, d) = scalar_grad(|g, x| g.softplus(x), 0.0);
        assert_abs_diff_eq!(v, std::f64::consts::LN_2, epsilon = 1e-15);
        assert_abs_diff_eq!(d, 0.5, epsilon = 1e-15);
        assert_eq!(scalar_grad(|g, x| g.relu(x), 0.0), (0.0, 0.0));
        assert_eq!(scalar_grad(|g, x| g.max0(x), 2.0), (2.0, 1.0));
        let (v, d) = scalar_grad(|g, x| g.tanh(x), 0.5);
        assert_abs_diff_eq!(v, 0.5f64.tanh(), epsilon = 1e-15);
        assert_abs_diff_eq!(d, 1.0 - 0.5f64.tanh().powi(2), epsilon = 1e-15);
        assert_eq!(scalar_grad(|g, x| g.log(x), 2.0), (2f64.ln(), 0.5));
        assert_eq!(scalar_grad(|g, x| g.exp(x), 0.0), (1.0, 1.0));
        assert_eq!(scalar_grad(|g, x| g.sqrt(x), 4.0), (2.0, 0.25));
    }

    #[test]
    fn domain_errors_carry_node_id() {
        let mut g = Graph::new();
        let x = g.constant(Matrix::column(&[1.0, -1.0]));
        match g.log(x) {
            Err(Error::GraphDomain { node, .. }) => assert_eq!(node, 1),
            other => panic!("expected domain error, got {other:?}"),
        }
        let z = g.constant(Matrix::scalar(0.0));
        assert!(matches!(g.div(x, z), Err(Error::GraphDomain { node: 2, .. })));
    }

    #[test]
    fn backward_rejects_non_scalar_output() {
        let mut g = Graph::new();
        let x = g.constant(Matrix::column(&[1.0, 2.0]));
        let y = g.square(x).unwrap();
        assert!(matches!(g.backward(y), Err(Error::Usage(_))));
    }

    #[test]
    fn broadcasting_gradients_reduce() {
        // sum((X + b) * c) with X 3×2, b 1×2, c 3×1
        let mut g = Graph::new();
        let x = g.constant(Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap());
        let b = g.constant(Matrix::from_rows(&[vec![0.5, -0.5]]).unwrap());
        let c = g.constant(Matrix::column(&[1.0, 2.0, 3.0]));
        let s = g.add(x, b).unwrap();
        let m = g.mul(s, c).unwrap();
        let out = g.sum(m).unwrap();
        let grads = g.backward(out).unwrap();
        assert_eq!(grads.of(b).unwrap().as_slice(), &[6.0, 6.0]);
        assert_eq!(grads.of(c).unwrap().as_slice(), &[3.0, 7.0, 11.0]);
        assert_eq!(grads.of(x).unwrap().as_slice(), &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
    }

    #[test]
    fn clamp_counts_and_blocks_gradient() {
        let mut g = Graph::new();
        let x = g.constant(Matrix::column(&[-1.0, 0.5, 2.0]));
        let c = g.clamp(x, 0.0, 1.0).unwrap();
        let s = g.sum(c).unwrap();
        assert_eq!(g.clamp_count(), 2);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.of(x).unwrap().as_slice(), &[0.0, 1.0, 0.0]);
    }
}
