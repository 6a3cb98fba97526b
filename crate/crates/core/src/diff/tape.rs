//! Reverse-mode tape over vector-valued nodes.
//!
//! Every recorded op reads parameters from a flat slice by offset. Values are
//! computed by the same kernels in recording and in [`Tape::replay`], so a
//! replay with the recorded parameters reproduces every value bit for bit.

use super::kernels::{self, Activation, GaussianGrads, GaussianKernels};
use crate::error::{Error, Result};
use crate::mesh::{EdgePseudoCoords, NeighborIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Offsets of a Gaussian-mixture layer's parameter blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GaussianOffsets {
    pub k: usize,
    pub means: usize,
    pub log_precisions: usize,
    pub mixing: usize,
    pub bias: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Affine { x: Var, w: usize, b: usize, n_out: usize },
    Act { x: Var, act: Activation },
    Add { a: Var, b: Var },
    /// `y + alpha x`
    Axpy { y: Var, alpha: f64, x: Var },
    Scale { x: Var, alpha: f64 },
    Concat { parts: Vec<Var> },
    /// Sum of scalar nodes.
    SumScalars { parts: Vec<Var> },
    ConvMean { x: Var, w: usize, b: usize, c_in: usize, c_out: usize },
    ConvGauss { x: Var, off: GaussianOffsets, c_in: usize, c_out: usize },
    NodeLinear { x: Var, w: usize, b: usize, c_in: usize, c_out: usize },
    /// Mean squared error against a target owned by the tape.
    Mse { x: Var, target: usize },
    /// Mean over nodes of `1 - <a,b> / ((|a|+eps)(|b|+eps))`.
    Direction { x: Var, target: usize, channels: usize, eps: f64 },
}

/// Graph context needed by convolution ops.
#[derive(Clone, Copy)]
pub struct GraphContext<'a> {
    pub index: &'a NeighborIndex,
    pub pseudo: &'a EdgePseudoCoords,
}

pub struct Tape<'a> {
    params: &'a [f64],
    graph: Option<GraphContext<'a>>,
    ops: Vec<Op>,
    values: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
}

impl<'a> Tape<'a> {
    pub fn new(params: &'a [f64]) -> Self {
        Tape {
            params,
            graph: None,
            ops: Vec::new(),
            values: Vec::new(),
            targets: Vec::new(),
        }
    }

    pub fn with_graph(params: &'a [f64], graph: GraphContext<'a>) -> Self {
        Tape {
            graph: Some(graph),
            ..Tape::new(params)
        }
    }

    pub fn params(&self) -> &'a [f64] {
        self.params
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.values[v.0]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.values[v.0][0]
    }

    fn push(&mut self, op: Op) -> Var {
        let value = eval(&op, &self.values, &self.targets, self.params, self.graph);
        self.ops.push(op);
        self.values.push(value);
        Var(self.ops.len() - 1)
    }

    pub fn leaf(&mut self, value: Vec<f64>) -> Var {
        self.ops.push(Op::Leaf);
        self.values.push(value);
        Var(self.ops.len() - 1)
    }

    /// `W x + b` with `W` at offset `w` (row-major `n_out x len(x)`).
    pub fn affine(&mut self, x: Var, w: usize, b: usize, n_out: usize) -> Var {
        self.push(Op::Affine { x, w, b, n_out })
    }

    pub fn act(&mut self, x: Var, act: Activation) -> Var {
        if act == Activation::Identity {
            return x;
        }
        self.push(Op::Act { x, act })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Add { a, b })
    }

    pub fn axpy(&mut self, y: Var, alpha: f64, x: Var) -> Var {
        self.push(Op::Axpy { y, alpha, x })
    }

    pub fn scale(&mut self, x: Var, alpha: f64) -> Var {
        self.push(Op::Scale { x, alpha })
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        self.push(Op::Concat { parts: parts.to_vec() })
    }

    pub fn sum_scalars(&mut self, parts: &[Var]) -> Var {
        self.push(Op::SumScalars { parts: parts.to_vec() })
    }

    fn graph(&self) -> GraphContext<'a> {
        self.graph.expect("convolution recorded on a tape without a graph")
    }

    pub fn conv_mean(&mut self, x: Var, w: usize, b: usize, c_in: usize, c_out: usize) -> Var {
        self.graph();
        self.push(Op::ConvMean { x, w, b, c_in, c_out })
    }

    pub fn conv_gauss(&mut self, x: Var, off: GaussianOffsets, c_in: usize, c_out: usize) -> Var {
        self.graph();
        self.push(Op::ConvGauss { x, off, c_in, c_out })
    }

    pub fn node_linear(&mut self, x: Var, w: usize, b: usize, c_in: usize, c_out: usize) -> Var {
        self.push(Op::NodeLinear { x, w, b, c_in, c_out })
    }

    pub fn mse(&mut self, x: Var, target: Vec<f64>) -> Var {
        assert_eq!(target.len(), self.values[x.0].len(), "mse target length");
        self.targets.push(target);
        let target = self.targets.len() - 1;
        self.push(Op::Mse { x, target })
    }

    pub fn direction(&mut self, x: Var, target: Vec<f64>, channels: usize, eps: f64) -> Var {
        assert_eq!(target.len(), self.values[x.0].len(), "direction target length");
        self.targets.push(target);
        let target = self.targets.len() - 1;
        self.push(Op::Direction { x, target, channels, eps })
    }

    /// Recomputes every node from the recorded leaves with `params`.
    pub fn replay(&self, params: &[f64]) -> Result<Vec<Vec<f64>>> {
        Error::check_dim("replay parameters", self.params.len(), params.len())?;
        let mut values: Vec<Vec<f64>> = Vec::with_capacity(self.ops.len());
        for (op, recorded) in self.ops.iter().zip(&self.values) {
            let v = match op {
                Op::Leaf => recorded.clone(),
                op => eval(op, &values, &self.targets, params, self.graph),
            };
            values.push(v);
        }
        Ok(values)
    }

    /// Gradient of the scalar node `output` with respect to the parameters.
    pub fn backward(&self, output: Var) -> Result<Vec<f64>> {
        if output.0 >= self.ops.len() {
            return Err(Error::Validation(format!(
                "backward from node {} but the tape holds {} nodes",
                output.0,
                self.ops.len()
            )));
        }
        if self.values[output.0].len() != 1 {
            return Err(Error::Validation(format!(
                "backward needs a scalar output, node has {} entries",
                self.values[output.0].len()
            )));
        }
        self.backward_with_seed(output, &[1.0]).map(|(g, _)| g)
    }

    /// Vector-Jacobian product with cotangent `seed` at `output`; returns the
    /// parameter gradient and the adjoints of all nodes (empty when zero).
    pub fn backward_with_seed(&self, output: Var, seed: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        if output.0 >= self.ops.len() {
            return Err(Error::Validation("backward from a node not on the tape".into()));
        }
        Error::check_dim("backward seed", self.values[output.0].len(), seed.len())?;
        let mut grad = vec![0.0; self.params.len()];
        let mut adj: Vec<Vec<f64>> = vec![Vec::new(); output.0 + 1];
        adj[output.0] = seed.to_vec();
        for i in (0..=output.0).rev() {
            if adj[i].is_empty() {
                continue;
            }
            let g = std::mem::take(&mut adj[i]);
            self.pull(i, &g, &mut adj, &mut grad);
            adj[i] = g;
        }
        Ok((grad, adj))
    }

    fn pull(&self, i: usize, g: &[f64], adj: &mut [Vec<f64>], grad: &mut [f64]) {
        let p = self.params;
        let vals = &self.values;
        match &self.ops[i] {
            Op::Leaf => {}
            Op::Affine { x, w, b, n_out } => {
                let xv = &vals[x.0];
                let n_in = xv.len();
                let (dw, db) = split_grad(grad, *w, n_out * n_in, *b, *n_out);
                let dx = adjoint(adj, vals, *x);
                kernels::affine_backward(&p[*w..*w + n_out * n_in], xv, g, dw, db, Some(dx));
            }
            Op::Act { x, act } => {
                let xv = &vals[x.0];
                let yv = &vals[i];
                let dx = adjoint(adj, vals, *x);
                for j in 0..g.len() {
                    dx[j] += g[j] * act.derivative(xv[j], yv[j]);
                }
            }
            Op::Add { a, b } => {
                accumulate(adjoint(adj, vals, *a), g, 1.0);
                accumulate(adjoint(adj, vals, *b), g, 1.0);
            }
            Op::Axpy { y, alpha, x } => {
                accumulate(adjoint(adj, vals, *y), g, 1.0);
                accumulate(adjoint(adj, vals, *x), g, *alpha);
            }
            Op::Scale { x, alpha } => accumulate(adjoint(adj, vals, *x), g, *alpha),
            Op::Concat { parts } => {
                let mut at = 0;
                for part in parts {
                    let n = vals[part.0].len();
                    accumulate(adjoint(adj, vals, *part), &g[at..at + n], 1.0);
                    at += n;
                }
            }
            Op::SumScalars { parts } => {
                for part in parts {
                    adjoint(adj, vals, *part)[0] += g[0];
                }
            }
            Op::ConvMean { x, w, b, c_in, c_out } => {
                let ctx = self.graph();
                let (dw, db) = split_grad(grad, *w, c_out * c_in, *b, *c_out);
                let dx = adjoint(adj, vals, *x);
                kernels::conv_mean_backward(ctx.index, &p[*w..*w + c_out * c_in], &vals[x.0], *c_in, *c_out, g, dw, db, dx);
            }
            Op::ConvGauss { x, off, c_in, c_out } => {
                let ctx = self.graph();
                let kern = gaussian_slices(p, off, ctx.pseudo.dim(), *c_in, *c_out);
                let d = ctx.pseudo.dim();
                let kd = off.k * d;
                let mut gm = vec![0.0; kd];
                let mut gp = vec![0.0; kd];
                let mut gx = vec![0.0; off.k * c_out * c_in];
                let mut gb = vec![0.0; *c_out];
                let grads = GaussianGrads {
                    means: &mut gm,
                    log_precisions: &mut gp,
                    mixing: &mut gx,
                    bias: &mut gb,
                };
                let dx = adjoint(adj, vals, *x);
                kernels::conv_gaussian_backward(ctx.index, ctx.pseudo, &kern, &vals[x.0], *c_in, *c_out, g, grads, dx);
                for (o, src) in [(off.means, &gm), (off.log_precisions, &gp), (off.mixing, &gx), (off.bias, &gb)] {
                    accumulate(&mut grad[o..o + src.len()], src, 1.0);
                }
            }
            Op::NodeLinear { x, w, b, c_in, c_out } => {
                let (dw, db) = split_grad(grad, *w, c_out * c_in, *b, *c_out);
                let dx = adjoint(adj, vals, *x);
                kernels::node_linear_backward(&p[*w..*w + c_out * c_in], &vals[x.0], *c_in, *c_out, g, dw, db, dx);
            }
            Op::Mse { x, target } => {
                let xv = &vals[x.0];
                let t = &self.targets[*target];
                let scale = 2.0 * g[0] / xv.len() as f64;
                let dx = adjoint(adj, vals, *x);
                for j in 0..xv.len() {
                    dx[j] += scale * (xv[j] - t[j]);
                }
            }
            Op::Direction { x, target, channels, eps } => {
                let xv = &vals[x.0];
                let t = &self.targets[*target];
                let n_nodes = xv.len() / channels;
                let scale = g[0] / n_nodes as f64;
                let dx = adjoint(adj, vals, *x);
                for u in 0..n_nodes {
                    let a = &xv[u * channels..(u + 1) * channels];
                    let b = &t[u * channels..(u + 1) * channels];
                    let na = norm(a);
                    let nb = norm(b);
                    let dot: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
                    let denom = (na + eps) * (nb + eps);
                    for c in 0..*channels {
                        // d/da of -<a,b>/((|a|+eps)(|b|+eps))
                        let mut d = -b[c] / denom;
                        if na > 0.0 {
                            d += dot / (denom * (na + eps)) * a[c] / na;
                        }
                        dx[u * channels + c] += scale * d;
                    }
                }
            }
        }
    }
}

fn split_grad(grad: &mut [f64], w: usize, w_len: usize, b: usize, b_len: usize) -> (&mut [f64], &mut [f64]) {
    if w < b {
        let (left, right) = grad.split_at_mut(b);
        (&mut left[w..w + w_len], &mut right[..b_len])
    } else {
        let (left, right) = grad.split_at_mut(w);
        (&mut right[..w_len], &mut left[b..b + b_len])
    }
}

fn adjoint<'s>(adj: &'s mut [Vec<f64>], vals: &[Vec<f64>], x: Var) -> &'s mut [f64] {
    if adj[x.0].is_empty() {
        adj[x.0] = vec![0.0; vals[x.0].len()];
    }
    &mut adj[x.0]
}

fn accumulate(dst: &mut [f64], src: &[f64], alpha: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn gaussian_slices<'p>(p: &'p [f64], off: &GaussianOffsets, d: usize, c_in: usize, c_out: usize) -> GaussianKernels<'p> {
    let kd = off.k * d;
    GaussianKernels {
        k: off.k,
        d,
        means: &p[off.means..off.means + kd],
        log_precisions: &p[off.log_precisions..off.log_precisions + kd],
        mixing: &p[off.mixing..off.mixing + off.k * c_out * c_in],
        bias: &p[off.bias..off.bias + c_out],
    }
}

/// Mean over nodes of the cosine-type direction penalty.
pub fn direction_penalty(a: &[f64], b: &[f64], channels: usize, eps: f64) -> f64 {
    let n_nodes = a.len() / channels;
    let mut total = 0.0;
    for u in 0..n_nodes {
        let x = &a[u * channels..(u + 1) * channels];
        let y = &b[u * channels..(u + 1) * channels];
        let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
        total += 1.0 - dot / ((norm(x) + eps) * (norm(y) + eps));
    }
    total / n_nodes as f64
}

/// Mean of squared differences.
pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc / a.len() as f64
}

fn eval(op: &Op, vals: &[Vec<f64>], targets: &[Vec<f64>], p: &[f64], graph: Option<GraphContext>) -> Vec<f64> {
    match op {
        Op::Leaf => unreachable!("leaves are stored, not evaluated"),
        Op::Affine { x, w, b, n_out } => {
            let xv = &vals[x.0];
            let mut y = vec![0.0; *n_out];
            kernels::affine(&p[*w..*w + n_out * xv.len()], &p[*b..*b + n_out], xv, &mut y);
            y
        }
        Op::Act { x, act } => vals[x.0].iter().map(|&v| act.apply(v)).collect(),
        Op::Add { a, b } => vals[a.0].iter().zip(&vals[b.0]).map(|(x, y)| x + y).collect(),
        Op::Axpy { y, alpha, x } => vals[y.0].iter().zip(&vals[x.0]).map(|(a, b)| a + alpha * b).collect(),
        Op::Scale { x, alpha } => vals[x.0].iter().map(|v| alpha * v).collect(),
        Op::Concat { parts } => parts.iter().flat_map(|v| vals[v.0].iter().copied()).collect(),
        Op::SumScalars { parts } => {
            let mut acc = 0.0;
            for v in parts {
                acc += vals[v.0][0];
            }
            vec![acc]
        }
        Op::ConvMean { x, w, b, c_in, c_out } => {
            let ctx = graph.expect("graph context");
            let mut y = vec![0.0; ctx.index.num_nodes() * c_out];
            kernels::conv_mean(ctx.index, &p[*w..*w + c_out * c_in], &p[*b..*b + c_out], &vals[x.0], *c_in, *c_out, &mut y);
            y
        }
        Op::ConvGauss { x, off, c_in, c_out } => {
            let ctx = graph.expect("graph context");
            let kern = gaussian_slices(p, off, ctx.pseudo.dim(), *c_in, *c_out);
            let mut y = vec![0.0; ctx.index.num_nodes() * c_out];
            kernels::conv_gaussian(ctx.index, ctx.pseudo, &kern, &vals[x.0], *c_in, *c_out, &mut y);
            y
        }
        Op::NodeLinear { x, w, b, c_in, c_out } => {
            let xv = &vals[x.0];
            let mut y = vec![0.0; xv.len() / c_in * c_out];
            kernels::node_linear(&p[*w..*w + c_out * c_in], &p[*b..*b + c_out], xv, *c_in, *c_out, &mut y);
            y
        }
        Op::Mse { x, target } => vec![mse(&vals[x.0], &targets[*target])],
        Op::Direction { x, target, channels, eps } => {
            vec![direction_penalty(&vals[x.0], &targets[*target], *channels, *eps)]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::finite_diff_grad;

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (i, (x, y)) in a.iter().zip(b).enumerate() {
            let scale = x.abs().max(y.abs()).max(1e-3);
            assert!((x - y).abs() / scale < tol, "entry {i}: {x} vs {y}");
        }
    }

    #[test]
    fn affine_tanh_mse_gradient() {
        // W: 2x3 at 0, b: 2 at 6
        let params: Vec<f64> = vec![0.3, -0.2, 0.5, 0.1, 0.7, -0.4, 0.05, -0.1];
        let f = |p: &[f64]| {
            let mut t = Tape::new(p);
            let x = t.leaf(vec![0.2, -1.0, 0.6]);
            let h = t.affine(x, 0, 6, 2);
            let h = t.act(h, Activation::Tanh);
            let l = t.mse(h, vec![0.5, -0.25]);
            let g = t.backward(l).unwrap();
            (t.scalar(l), g)
        };
        let (_, g) = f(&params);
        let fd = finite_diff_grad(|p| f(p).0, &params, 1e-6);
        assert_close(&g, &fd, 1e-6);
    }

    #[test]
    fn axpy_concat_sum_gradient() {
        let params = vec![0.4, -0.3, 0.2, 0.9, 0.0, 0.1];
        let f = |p: &[f64]| {
            let mut t = Tape::new(p);
            let s = t.leaf(vec![1.0, 2.0]);
            let tm = t.leaf(vec![0.5]);
            let x = t.concat(&[tm, s]);
            let r = t.affine(x, 0, 4, 1);
            let r = t.act(r, Activation::Elu);
            let y = t.axpy(r, 0.1, r);
            let y = t.scale(y, 3.0);
            let a = t.mse(y, vec![0.2]);
            let b = t.mse(r, vec![-0.1]);
            let l = t.sum_scalars(&[a, b, a]);
            (t.scalar(l), t.backward(l).unwrap())
        };
        // affine weights W is 1x3 at 0..3, bias at 4
        let (_, g) = f(&params);
        assert_eq!(g[3], 0.0);
        assert_eq!(g[5], 0.0);
        let fd = finite_diff_grad(|p| f(p).0, &params, 1e-6);
        assert_close(&g, &fd, 1e-6);
    }

    #[test]
    fn direction_loss_gradient() {
        let params = vec![0.8, -0.5, 0.3, 1.1, 0.2, -0.1];
        let f = |p: &[f64]| {
            let mut t = Tape::new(p);
            let x = t.leaf(vec![1.0, -2.0, 0.5, 0.25]);
            // reshape as 2 nodes x 2 channels through a node linear map
            let y = t.node_linear(x, 0, 4, 2, 2);
            let l = t.direction(y, vec![0.3, 0.4, -1.0, 0.2], 2, 1e-4);
            (t.scalar(l), t.backward(l).unwrap())
        };
        let (_, g) = f(&params);
        let fd = finite_diff_grad(|p| f(p).0, &params, 1e-6);
        assert_close(&g, &fd, 1e-6);
    }

    #[test]
    fn direction_penalty_values() {
        assert!(direction_penalty(&[1.0, 0.0], &[2.0, 0.0], 2, 0.0).abs() < 1e-15);
        assert!((direction_penalty(&[1.0, 0.0], &[-1.0, 0.0], 2, 0.0) - 2.0).abs() < 1e-15);
        assert!((direction_penalty(&[0.0, 0.0], &[1.0, 0.0], 2, 1e-4) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn backward_rejects_non_scalar_and_foreign_nodes() {
        let p = vec![0.0];
        let mut t = Tape::new(&p);
        let x = t.leaf(vec![1.0, 2.0]);
        assert!(t.backward(x).is_err());
        assert!(t.backward(Var(5)).is_err());
    }

    #[test]
    fn replay_is_bitwise() {
        let params: Vec<f64> = (0..8).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut t = Tape::new(&params);
        let x = t.leaf(vec![0.2, -1.0, 0.6]);
        let h = t.affine(x, 0, 6, 2);
        let h = t.act(h, Activation::Elu);
        let _ = t.mse(h, vec![1.0, 2.0]);
        let replayed = t.replay(&params).unwrap();
        for (a, b) in replayed.iter().zip(&t.values) {
            assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }
}
