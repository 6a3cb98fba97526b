//! Dense primitives shared by the forward pass and reverse accumulation.
//!
//! Node features are node-major: entry `(u, c)` of an `N x C` feature matrix
//! lives at `u * C + c`. Weight matrices are row-major `out x in`.

use serde::{Deserialize, Serialize};

use crate::mesh::{EdgePseudoCoords, NeighborIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Elu,
    Identity,
}

/// `x` for `x >= 0`, `e^x - 1` otherwise.
#[inline]
pub fn elu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

#[inline]
pub fn elu_derivative(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        x.exp()
    }
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Elu => elu(x),
            Activation::Identity => x,
        }
    }

    /// Derivative at pre-activation `x` with output `y`.
    #[inline]
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Elu => elu_derivative(x),
            Activation::Identity => 1.0,
        }
    }
}

/// `y = W x + b` with `W` row-major `n_out x n_in`.
pub fn affine(w: &[f64], b: &[f64], x: &[f64], y: &mut [f64]) {
    let n_in = x.len();
    for (i, yi) in y.iter_mut().enumerate() {
        let row = &w[i * n_in..(i + 1) * n_in];
        let mut acc = 0.0;
        for (wij, xj) in row.iter().zip(x) {
            acc += wij * xj;
        }
        *yi = acc + b[i];
    }
}

/// Accumulates `dW += g x^T`, `db += g`, `dx += W^T g`.
pub fn affine_backward(w: &[f64], x: &[f64], g: &[f64], dw: &mut [f64], db: &mut [f64], dx: Option<&mut [f64]>) {
    let n_in = x.len();
    for (i, &gi) in g.iter().enumerate() {
        db[i] += gi;
        if gi == 0.0 {
            continue;
        }
        for (dwij, xj) in dw[i * n_in..(i + 1) * n_in].iter_mut().zip(x) {
            *dwij += gi * xj;
        }
    }
    if let Some(dx) = dx {
        for (i, &gi) in g.iter().enumerate() {
            if gi == 0.0 {
                continue;
            }
            for (dxj, wij) in dx.iter_mut().zip(&w[i * n_in..(i + 1) * n_in]) {
                *dxj += wij * gi;
            }
        }
    }
}

/// Neighbor mean `m_u = (1/|N(u)|) sum_{v in N(u)} x_v` for channel width `c`.
fn neighbor_mean(index: &NeighborIndex, x: &[f64], c: usize, u: usize, m: &mut [f64]) {
    m.iter_mut().for_each(|v| *v = 0.0);
    for &v in index.neighbors(u) {
        for (mi, xi) in m.iter_mut().zip(&x[v * c..(v + 1) * c]) {
            *mi += xi;
        }
    }
    let inv = 1.0 / index.degree(u) as f64;
    m.iter_mut().for_each(|v| *v *= inv);
}

/// Mean-aggregation graph convolution, pre-activation:
/// `y_u = (1/|N(u)|) sum_{v in N(u)} W x_v + b`.
pub fn conv_mean(index: &NeighborIndex, w: &[f64], b: &[f64], x: &[f64], c_in: usize, c_out: usize, y: &mut [f64]) {
    let mut m = vec![0.0; c_in];
    for u in 0..index.num_nodes() {
        neighbor_mean(index, x, c_in, u, &mut m);
        affine(w, b, &m, &mut y[u * c_out..(u + 1) * c_out]);
    }
}

#[allow(clippy::too_many_arguments)]
pub fn conv_mean_backward(
    index: &NeighborIndex,
    w: &[f64],
    x: &[f64],
    c_in: usize,
    c_out: usize,
    g: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    dx: &mut [f64],
) {
    let mut m = vec![0.0; c_in];
    let mut gm = vec![0.0; c_in];
    for u in 0..index.num_nodes() {
        neighbor_mean(index, x, c_in, u, &mut m);
        gm.iter_mut().for_each(|v| *v = 0.0);
        affine_backward(w, &m, &g[u * c_out..(u + 1) * c_out], dw, db, Some(&mut gm));
        let inv = 1.0 / index.degree(u) as f64;
        for &v in index.neighbors(u) {
            for (dxv, gmi) in dx[v * c_in..(v + 1) * c_in].iter_mut().zip(&gm) {
                *dxv += gmi * inv;
            }
        }
    }
}

/// Per-node linear readout `y_u = W x_u + b`.
pub fn node_linear(w: &[f64], b: &[f64], x: &[f64], c_in: usize, c_out: usize, y: &mut [f64]) {
    for (xu, yu) in x.chunks(c_in).zip(y.chunks_mut(c_out)) {
        affine(w, b, xu, yu);
    }
}

pub fn node_linear_backward(w: &[f64], x: &[f64], c_in: usize, c_out: usize, g: &[f64], dw: &mut [f64], db: &mut [f64], dx: &mut [f64]) {
    for ((xu, gu), dxu) in x.chunks(c_in).zip(g.chunks(c_out)).zip(dx.chunks_mut(c_in)) {
        affine_backward(w, xu, gu, dw, db, Some(dxu));
    }
}

/// Parameter slices of one Gaussian-mixture layer with `k` kernels over
/// `d`-dimensional pseudo-coordinates.
#[derive(Debug, Clone, Copy)]
pub struct GaussianKernels<'p> {
    pub k: usize,
    pub d: usize,
    /// Kernel centers, `k x d`.
    pub means: &'p [f64],
    /// Log diagonal precisions, `k x d`.
    pub log_precisions: &'p [f64],
    /// Channel mixing, `k x c_out x c_in`.
    pub mixing: &'p [f64],
    pub bias: &'p [f64],
}

impl GaussianKernels<'_> {
    /// `exp(-1/2 sum_i p_i (e_i - mu_i)^2)` for kernel `kappa`.
    #[inline]
    pub fn weight(&self, kappa: usize, e: &[f64]) -> f64 {
        let mut q = 0.0;
        for i in 0..self.d {
            let p = self.log_precisions[kappa * self.d + i].exp();
            let r = e[i] - self.means[kappa * self.d + i];
            q += p * r * r;
        }
        (-0.5 * q).exp()
    }
}

/// Slot offsets of each node's incoming messages; the message from `v` into
/// `u` is weighted by the pseudo-coordinate `e_vu = x_u - x_v`.
#[inline]
fn incoming(pseudo: &EdgePseudoCoords, slot: usize, e: &mut [f64]) {
    for (ei, &p) in e.iter_mut().zip(pseudo.slot(slot)) {
        *ei = -p;
    }
}

fn gaussian_means(
    index: &NeighborIndex,
    pseudo: &EdgePseudoCoords,
    kernels: &GaussianKernels,
    x: &[f64],
    c_in: usize,
    u: usize,
    m: &mut [f64],
) {
    let mut e = vec![0.0; kernels.d];
    m.iter_mut().for_each(|v| *v = 0.0);
    for (slot, &v) in index.slots(u).zip(index.neighbors(u)) {
        incoming(pseudo, slot, &mut e);
        for kappa in 0..kernels.k {
            let wk = kernels.weight(kappa, &e);
            for (mi, xi) in m[kappa * c_in..(kappa + 1) * c_in].iter_mut().zip(&x[v * c_in..(v + 1) * c_in]) {
                *mi += wk * xi;
            }
        }
    }
    let inv = 1.0 / index.degree(u) as f64;
    m.iter_mut().for_each(|v| *v *= inv);
}

/// Gaussian-mixture (MoNet-style) convolution, pre-activation:
/// `y_u = b + (1/|N(u)|) sum_{v in N(u)} sum_k w_k(e_vu) G_k x_v`.
pub fn conv_gaussian(
    index: &NeighborIndex,
    pseudo: &EdgePseudoCoords,
    kernels: &GaussianKernels,
    x: &[f64],
    c_in: usize,
    c_out: usize,
    y: &mut [f64],
) {
    let mut m = vec![0.0; kernels.k * c_in];
    for u in 0..index.num_nodes() {
        gaussian_means(index, pseudo, kernels, x, c_in, u, &mut m);
        let yu = &mut y[u * c_out..(u + 1) * c_out];
        yu.copy_from_slice(kernels.bias);
        for kappa in 0..kernels.k {
            let g = &kernels.mixing[kappa * c_out * c_in..(kappa + 1) * c_out * c_in];
            let mk = &m[kappa * c_in..(kappa + 1) * c_in];
            for (o, yo) in yu.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (gi, mi) in g[o * c_in..(o + 1) * c_in].iter().zip(mk) {
                    acc += gi * mi;
                }
                *yo += acc;
            }
        }
    }
}

/// Gradients of [`conv_gaussian`] with respect to its parameters and input.
pub struct GaussianGrads<'g> {
    pub means: &'g mut [f64],
    pub log_precisions: &'g mut [f64],
    pub mixing: &'g mut [f64],
    pub bias: &'g mut [f64],
}

#[allow(clippy::too_many_arguments)]
pub fn conv_gaussian_backward(
    index: &NeighborIndex,
    pseudo: &EdgePseudoCoords,
    kernels: &GaussianKernels,
    x: &[f64],
    c_in: usize,
    c_out: usize,
    g: &[f64],
    grads: GaussianGrads,
    dx: &mut [f64],
) {
    let d = kernels.d;
    let mut m = vec![0.0; kernels.k * c_in];
    let mut gm = vec![0.0; kernels.k * c_in];
    let mut e = vec![0.0; d];
    for u in 0..index.num_nodes() {
        let gu = &g[u * c_out..(u + 1) * c_out];
        gaussian_means(index, pseudo, kernels, x, c_in, u, &mut m);
        for (bi, gi) in grads.bias.iter_mut().zip(gu) {
            *bi += gi;
        }
        gm.iter_mut().for_each(|v| *v = 0.0);
        for kappa in 0..kernels.k {
            let base = kappa * c_out * c_in;
            for (o, &go) in gu.iter().enumerate() {
                for i in 0..c_in {
                    grads.mixing[base + o * c_in + i] += go * m[kappa * c_in + i];
                    gm[kappa * c_in + i] += kernels.mixing[base + o * c_in + i] * go;
                }
            }
        }
        let inv = 1.0 / index.degree(u) as f64;
        for (slot, &v) in index.slots(u).zip(index.neighbors(u)) {
            incoming(pseudo, slot, &mut e);
            let xv = &x[v * c_in..(v + 1) * c_in];
            for kappa in 0..kernels.k {
                let wk = kernels.weight(kappa, &e);
                let gmk = &gm[kappa * c_in..(kappa + 1) * c_in];
                let mut dw = 0.0;
                for ((dxi, gmi), xi) in dx[v * c_in..(v + 1) * c_in].iter_mut().zip(gmk).zip(xv) {
                    *dxi += wk * inv * gmi;
                    dw += gmi * xi;
                }
                dw *= inv;
                for i in 0..d {
                    let p = kernels.log_precisions[kappa * d + i].exp();
                    let r = e[i] - kernels.means[kappa * d + i];
                    grads.means[kappa * d + i] += dw * wk * p * r;
                    grads.log_precisions[kappa * d + i] += -0.5 * dw * wk * p * r * r;
                }
            }
        }
    }
}
