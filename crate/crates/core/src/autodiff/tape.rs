use super::backend::{relu, Backend, Eager};
use super::kernels::{self, Axis, SvdFactors};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Default regularizer for the SVD cross terms in the SVT adjoint.
pub const DEFAULT_EPS_SVD: f64 = 1e-10;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    Offset(usize, f64),
    Square(usize),
    Relu(usize),
    Clamp(usize, f64, f64),
    Diff(usize, Axis),
    DiffAdjoint(usize, Axis),
    Svt {
        input: usize,
        rows: usize,
        cols: usize,
        tau: f64,
        factors: Box<SvdFactors>,
    },
    Conv3d(usize, usize),
    ChannelBias(usize, usize),
    SoftmaxScaled(usize),
    Mse(usize, usize),
    Sum(usize),
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        match *self {
            Op::Leaf => vec![],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::Conv3d(a, b)
            | Op::ChannelBias(a, b)
            | Op::Mse(a, b) => vec![a, b],
            Op::Scale(a, _)
            | Op::Offset(a, _)
            | Op::Square(a)
            | Op::Relu(a)
            | Op::Clamp(a, _, _)
            | Op::Diff(a, _)
            | Op::DiffAdjoint(a, _)
            | Op::SoftmaxScaled(a)
            | Op::Sum(a) => vec![a],
            Op::Svt { input, .. } => vec![input],
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Append-only record of tensor operations for reverse-mode differentiation.
///
/// Nodes are stored in execution order, so insertion order is a valid
/// topological order and the backward sweep is a single reverse pass.
#[derive(Clone, Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    eps_svd: f64,
    svt_fault: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Adjoints produced by [`Tape::backward`], indexed by node.
#[derive(Clone, Debug)]
pub struct Gradients {
    adjoints: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.adjoints.get(v.0).and_then(|a| a.as_ref())
    }

    /// Adjoint of `v`, or zeros of the given shape when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            eps_svd: DEFAULT_EPS_SVD,
            svt_fault: false,
        }
    }

    pub fn with_eps_svd(mut self, eps_svd: f64) -> Self {
        self.eps_svd = eps_svd;
        self
    }

    /// Deliberately corrupts the SVT adjoint. Negative control for the
    /// gradient-check suite only.
    #[doc(hidden)]
    pub fn inject_svt_backward_fault(&mut self) {
        self.svt_fault = true;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable input.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, true)
    }

    /// Input that never receives an adjoint.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, false)
    }

    pub fn get(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Approximate bytes held by recorded values.
    pub fn memory_bytes(&self) -> u64 {
        self.nodes.iter().map(|n| 8 * n.value.len() as u64).sum()
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, op: Op, value: Tensor) -> Var {
        let requires_grad = op.inputs().iter().any(|&i| self.nodes[i].requires_grad);
        self.push(op, value, requires_grad)
    }

    /// Reverse sweep from `output` seeded with `seed`.
    pub fn backward(&self, output: Var, seed: Tensor) -> Result<Gradients> {
        let Some(out_node) = self.nodes.get(output.0) else {
            return Err(Error::Internal(format!(
                "node {} not on this tape ({} nodes)",
                output.0,
                self.nodes.len()
            )));
        };
        if out_node.value.shape() != seed.shape() {
            return Err(Error::arg(format!(
                "seed shape {:?} does not match output shape {:?}",
                seed.shape(),
                out_node.value.shape()
            )));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        adj[output.0] = Some(seed);
        for id in (0..=output.0).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &self.nodes[id];
            if node.requires_grad {
                self.propagate(id, &g, &mut adj);
            }
            adj[id] = Some(g);
        }
        Ok(Gradients { adjoints: adj })
    }

    /// Scalar output with unit seed.
    pub fn backward_scalar(&self, output: Var) -> Result<Gradients> {
        let shape = self
            .nodes
            .get(output.0)
            .map(|n| n.value.shape().to_vec())
            .unwrap_or_default();
        self.backward(output, Tensor::filled(&shape, 1.0))
    }

    fn propagate(&self, id: usize, g: &Tensor, adj: &mut [Option<Tensor>]) {
        let node = &self.nodes[id];
        let val = |i: usize| &self.nodes[i].value;
        let wants = |i: usize| self.nodes[i].requires_grad;
        match node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate(adj, a, wants(a), || g.clone());
                accumulate(adj, b, wants(b), || g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(adj, a, wants(a), || g.clone());
                accumulate(adj, b, wants(b), || g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                accumulate(adj, a, wants(a), || g.zip_map(val(b), |g, y| g * y));
                accumulate(adj, b, wants(b), || g.zip_map(val(a), |g, x| g * x));
            }
            Op::Div(a, b) => {
                accumulate(adj, a, wants(a), || g.zip_map(val(b), |g, y| g / y));
                accumulate(adj, b, wants(b), || {
                    let t = g.zip_map(&node.value, |g, q| -g * q);
                    t.zip_map(val(b), |t, y| t / y)
                });
            }
            Op::Scale(a, c) => accumulate(adj, a, wants(a), || g.map(|v| v * c)),
            Op::Offset(a, _) => accumulate(adj, a, wants(a), || g.clone()),
            Op::Square(a) => {
                accumulate(adj, a, wants(a), || g.zip_map(val(a), |g, x| 2.0 * x * g))
            }
            Op::Relu(a) => accumulate(adj, a, wants(a), || {
                g.zip_map(val(a), |g, x| if x > 0.0 { g } else { 0.0 })
            }),
            Op::Clamp(a, lo, hi) => accumulate(adj, a, wants(a), || {
                g.zip_map(val(a), |g, x| if x > lo && x < hi { g } else { 0.0 })
            }),
            Op::Diff(a, axis) => accumulate(adj, a, wants(a), || kernels::diff_adjoint(g, axis)),
            Op::DiffAdjoint(a, axis) => {
                accumulate(adj, a, wants(a), || kernels::diff_forward(g, axis))
            }
            Op::Svt {
                input, tau, ref factors, ..
            } => accumulate(adj, input, wants(input), || {
                let mut d = kernels::svt_backward(factors, tau, g.data(), self.eps_svd);
                if self.svt_fault {
                    d.iter_mut().for_each(|v| *v *= 1.5);
                }
                Tensor::from_parts(g.shape().to_vec(), d)
            }),
            Op::Conv3d(x, k) => {
                let (gx, gk) = kernels::conv3d_backward(val(x), val(k), g);
                accumulate(adj, x, wants(x), || gx);
                accumulate(adj, k, wants(k), || gk);
            }
            Op::ChannelBias(x, b) => {
                accumulate(adj, x, wants(x), || g.clone());
                accumulate(adj, b, wants(b), || {
                    kernels::channel_bias_backward(g, val(b).len())
                });
            }
            Op::SoftmaxScaled(a) => accumulate(adj, a, wants(a), || {
                kernels::softmax_scaled_backward(&node.value, g)
            }),
            Op::Mse(a, b) => {
                let n = val(a).len() as f64;
                let s = 2.0 * g.item() / n;
                accumulate(adj, a, wants(a), || val(a).zip_map(val(b), |x, y| s * (x - y)));
                accumulate(adj, b, wants(b), || val(a).zip_map(val(b), |x, y| s * (y - x)));
            }
            Op::Sum(a) => {
                let s = g.item();
                accumulate(adj, a, wants(a), || Tensor::filled(val(a).shape(), s))
            }
        }
    }

    /// Recompute every node from its recorded inputs.
    pub fn replay(&self) -> Vec<Tensor> {
        let mut vals: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        let mut e = Eager;
        for node in &self.nodes {
            let v = match node.op {
                Op::Leaf => node.value.clone(),
                Op::Add(a, b) => e.add(&vals[a], &vals[b]),
                Op::Sub(a, b) => e.sub(&vals[a], &vals[b]),
                Op::Mul(a, b) => e.mul(&vals[a], &vals[b]),
                Op::Div(a, b) => e.div(&vals[a], &vals[b]),
                Op::Scale(a, c) => e.scale(&vals[a], c),
                Op::Offset(a, c) => e.offset(&vals[a], c),
                Op::Square(a) => e.square(&vals[a]),
                Op::Relu(a) => e.relu(&vals[a]),
                Op::Clamp(a, lo, hi) => e.clamp(&vals[a], lo, hi),
                Op::Diff(a, axis) => e.diff(&vals[a], axis),
                Op::DiffAdjoint(a, axis) => e.diff_adjoint(&vals[a], axis),
                Op::Svt {
                    input, rows, cols, tau, ..
                } => e.svt(&vals[input], rows, cols, tau),
                Op::Conv3d(x, k) => e.conv3d(&vals[x], &vals[k]),
                Op::ChannelBias(x, b) => e.channel_bias(&vals[x], &vals[b]),
                Op::SoftmaxScaled(a) => e.softmax_scaled(&vals[a]),
                Op::Mse(a, b) => e.mse(&vals[a], &vals[b]),
                Op::Sum(a) => e.sum(&vals[a]),
            };
            vals.push(v);
        }
        vals
    }

    /// True when [`replay`](Self::replay) reproduces every recorded value bitwise.
    pub fn replay_matches(&self) -> bool {
        self.replay()
            .iter()
            .zip(&self.nodes)
            .all(|(r, n)| bitwise_eq(r, &n.value))
    }
}

pub(crate) fn bitwise_eq(a: &Tensor, b: &Tensor) -> bool {
    a.shape() == b.shape()
        && a
            .data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| x.to_bits() == y.to_bits())
}

fn accumulate(adj: &mut [Option<Tensor>], id: usize, wanted: bool, delta: impl FnOnce() -> Tensor) {
    if !wanted {
        return;
    }
    let d = delta();
    match &mut adj[id] {
        Some(acc) => acc
            .data_mut()
            .iter_mut()
            .zip(d.data())
            .for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(d),
    }
}

impl Backend for Tape {
    type Value = Var;

    fn constant(&mut self, t: Tensor) -> Var {
        self.input(t)
    }

    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor {
        self.get(*v)
    }

    fn add(&mut self, a: &Var, b: &Var) -> Var {
        let v = Eager.add(self.get(*a), self.get(*b));
        self.record(Op::Add(a.0, b.0), v)
    }

    fn sub(&mut self, a: &Var, b: &Var) -> Var {
        let v = Eager.sub(self.get(*a), self.get(*b));
        self.record(Op::Sub(a.0, b.0), v)
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Var {
        let v = Eager.mul(self.get(*a), self.get(*b));
        self.record(Op::Mul(a.0, b.0), v)
    }

    fn div(&mut self, a: &Var, b: &Var) -> Var {
        let v = Eager.div(self.get(*a), self.get(*b));
        self.record(Op::Div(a.0, b.0), v)
    }

    fn scale(&mut self, a: &Var, c: f64) -> Var {
        let v = Eager.scale(self.get(*a), c);
        self.record(Op::Scale(a.0, c), v)
    }

    fn offset(&mut self, a: &Var, c: f64) -> Var {
        let v = Eager.offset(self.get(*a), c);
        self.record(Op::Offset(a.0, c), v)
    }

    fn square(&mut self, a: &Var) -> Var {
        let v = Eager.square(self.get(*a));
        self.record(Op::Square(a.0), v)
    }

    fn relu(&mut self, a: &Var) -> Var {
        let v = self.get(*a).map(relu);
        self.record(Op::Relu(a.0), v)
    }

    fn clamp(&mut self, a: &Var, lo: f64, hi: f64) -> Var {
        let v = Eager.clamp(self.get(*a), lo, hi);
        self.record(Op::Clamp(a.0, lo, hi), v)
    }

    fn diff(&mut self, a: &Var, axis: Axis) -> Var {
        let v = kernels::diff_forward(self.get(*a), axis);
        self.record(Op::Diff(a.0, axis), v)
    }

    fn diff_adjoint(&mut self, a: &Var, axis: Axis) -> Var {
        let v = kernels::diff_adjoint(self.get(*a), axis);
        self.record(Op::DiffAdjoint(a.0, axis), v)
    }

    fn svt(&mut self, a: &Var, rows: usize, cols: usize, tau: f64) -> Var {
        let src = self.get(*a);
        let shape = src.shape().to_vec();
        let (out, factors) = kernels::svt_forward(src.data(), rows, cols, tau);
        self.record(
            Op::Svt {
                input: a.0,
                rows,
                cols,
                tau,
                factors: Box::new(factors),
            },
            Tensor::from_parts(shape, out),
        )
    }

    fn conv3d(&mut self, x: &Var, kernel: &Var) -> Var {
        let v = kernels::conv3d_forward(self.get(*x), self.get(*kernel));
        self.record(Op::Conv3d(x.0, kernel.0), v)
    }

    fn channel_bias(&mut self, x: &Var, bias: &Var) -> Var {
        let v = kernels::channel_bias_forward(self.get(*x), self.get(*bias));
        self.record(Op::ChannelBias(x.0, bias.0), v)
    }

    fn softmax_scaled(&mut self, a: &Var) -> Var {
        let v = kernels::softmax_scaled_forward(self.get(*a));
        self.record(Op::SoftmaxScaled(a.0), v)
    }

    fn mse(&mut self, a: &Var, b: &Var) -> Var {
        let v = Eager.mse(self.get(*a), self.get(*b));
        self.record(Op::Mse(a.0, b.0), v)
    }

    fn sum(&mut self, a: &Var) -> Var {
        let v = Eager.sum(self.get(*a));
        self.record(Op::Sum(a.0), v)
    }
}
