//! Gaussian-process regression with an anisotropic Matérn-3/2 kernel plus
//! white noise, zero prior mean, one independent regressor per output.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::training::{Lbfgs, LbfgsOutcome};

const SQRT3: f64 = 1.732_050_807_568_877_2;

/// `(1 + sqrt(3) r / ell) exp(-sqrt(3) r / ell)`.
pub fn matern15(r: f64, ell: f64) -> Result<f64> {
    if !(ell > 0.0) {
        return Err(Error::Validation(format!("length scale must be positive, got {ell}")));
    }
    if !(r >= 0.0) {
        return Err(Error::Validation(format!("distance must be non-negative, got {r}")));
    }
    let a = SQRT3 * r / ell;
    Ok((1.0 + a) * (-a).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GprHyper {
    pub length_scales: Vec<f64>,
    pub noise: f64,
}

impl GprHyper {
    /// `ell = [0.1, 0.5, ...]` (time first), `sigma_n^2 = 1e-3`.
    pub fn reference(input_dim: usize) -> Self {
        let mut length_scales = vec![0.5; input_dim];
        if let Some(first) = length_scales.first_mut() {
            *first = 0.1;
        }
        GprHyper {
            length_scales,
            noise: 1e-3,
        }
    }

    fn validate(&self, input_dim: usize) -> Result<()> {
        Error::check_dim("length scales", input_dim, self.length_scales.len())?;
        if self.length_scales.iter().chain([&self.noise]).any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Validation(format!("GPR hyperparameters must be positive: {self:?}")));
        }
        Ok(())
    }

    fn to_log(&self) -> Vec<f64> {
        self.length_scales.iter().chain([&self.noise]).map(|v| v.ln()).collect()
    }

    fn from_log(theta: &[f64]) -> Self {
        let (ls, noise) = theta.split_at(theta.len() - 1);
        GprHyper {
            length_scales: ls.iter().map(|v| v.exp()).collect(),
            noise: noise[0].exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GprOptions {
    pub init: Option<GprHyper>,
    pub optimize: bool,
    pub restarts: usize,
    pub max_iters: usize,
    /// Hyperparameter fits use at most this many (randomly chosen) points.
    pub max_fit_points: usize,
    pub bounds: (f64, f64),
    pub seed: u64,
}

impl Default for GprOptions {
    fn default() -> Self {
        GprOptions {
            init: None,
            optimize: true,
            restarts: 5,
            max_iters: 60,
            max_fit_points: 200,
            bounds: (1e-5, 1e5),
            seed: 0,
        }
    }
}

fn scaled_dist(a: &[f64], b: &[f64], ls: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(ls)
        .map(|((x, y), l)| ((x - y) / l).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn kernel(a: &[f64], b: &[f64], ls: &[f64]) -> f64 {
    let r = scaled_dist(a, b, ls);
    (1.0 + SQRT3 * r) * (-SQRT3 * r).exp()
}

fn kernel_matrix(x: &[Vec<f64>], hyp: &GprHyper) -> DMatrix<f64> {
    let n = x.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = kernel(&x[i], &x[j], &hyp.length_scales);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] += hyp.noise;
    }
    k
}

/// Cholesky with diagonal jitter escalating from 1e-10 to 1e-6.
fn factor(mut k: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let n = k.nrows();
    let mut added = 0.0;
    for jitter in [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6] {
        for i in 0..n {
            k[(i, i)] += jitter - added;
        }
        added = jitter;
        if let Some(c) = k.clone().cholesky() {
            return Ok(c);
        }
    }
    Err(Error::Numerical(format!(
        "GPR kernel matrix ({n}x{n}) is not positive definite even with 1e-6 jitter"
    )))
}

/// Negative log marginal likelihood and its gradient in log-hyperparameters.
fn neg_lml(x: &[Vec<f64>], y: &DVector<f64>, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
    let hyp = GprHyper::from_log(theta);
    let n = x.len();
    let d = hyp.length_scales.len();
    let chol = factor(kernel_matrix(x, &hyp))?;
    let alpha = chol.solve(y);
    let log_det: f64 = chol.l_dirty().diagonal().iter().take(n).map(|v| v.ln()).sum::<f64>() * 2.0;
    let value = 0.5 * y.dot(&alpha) + 0.5 * log_det + 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    // W = alpha alpha^T - K^{-1}; dLML/dtheta = 1/2 tr(W dK/dtheta)
    let mut w = chol.inverse();
    w.iter_mut().for_each(|v| *v = -*v);
    w.ger(1.0, &alpha, &alpha, 1.0);
    let mut grad = vec![0.0; d + 1];
    for i in 0..n {
        for j in 0..i {
            let r = scaled_dist(&x[i], &x[j], &hyp.length_scales);
            let e = 3.0 * (-SQRT3 * r).exp();
            for (l, g) in grad.iter_mut().take(d).enumerate() {
                let dl = (x[i][l] - x[j][l]) / hyp.length_scales[l];
                // both triangles
                *g += w[(i, j)] * e * dl * dl;
            }
        }
        grad[d] += 0.5 * w[(i, i)] * hyp.noise;
    }
    Ok((value, grad.into_iter().map(|g| -g).collect()))
}

/// Regressor for one output component.
#[derive(Debug, Clone)]
pub struct GprComponent {
    pub hyper: GprHyper,
    pub log_marginal_likelihood: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct GprModel {
    inputs: Vec<Vec<f64>>,
    components: Vec<GprComponent>,
}

fn optimize_hyper(x: &[Vec<f64>], y: &DVector<f64>, init: &GprHyper, opts: &GprOptions, seed: u64) -> GprHyper {
    let (lo, hi) = (opts.bounds.0.ln(), opts.bounds.1.ln());
    let clamp = |t: &[f64]| t.iter().map(|v| v.clamp(lo, hi)).collect::<Vec<f64>>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts = vec![init.to_log()];
    for _ in 0..opts.restarts {
        starts.push((0..init.length_scales.len() + 1).map(|_| rng.gen_range(lo..hi)).collect());
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for start in starts {
        let mut theta = clamp(&start);
        let mut f = |t: &[f64]| -> Result<(f64, Vec<f64>)> {
            let c = clamp(t);
            let (v, mut g) = neg_lml(x, y, &c)?;
            // no pull further past an active bound
            for ((gi, ti), ci) in g.iter_mut().zip(t).zip(&c) {
                if ti != ci {
                    *gi = 0.0;
                }
            }
            Ok((v, g))
        };
        let Ok((mut value, _)) = f(&theta) else { continue };
        let mut opt = Lbfgs::new(10);
        for _ in 0..opts.max_iters {
            match opt.step(&mut theta, &mut f) {
                Ok(LbfgsOutcome::Accepted { step, loss }) => {
                    let gain = value - loss;
                    value = loss;
                    if gain.abs() < 1e-10 * (1.0 + value.abs()) && step > 0.0 {
                        break;
                    }
                }
                _ => break,
            }
        }
        theta = clamp(&theta);
        if value.is_finite() && best.as_ref().map_or(true, |(b, _)| value < *b) {
            best = Some((value, theta));
        }
    }
    best.map_or_else(|| init.clone(), |(_, t)| GprHyper::from_log(&t))
}

impl GprModel {
    /// Fits one regressor per column of `targets` (each row one sample).
    pub fn fit(inputs: &[Vec<f64>], targets: &[Vec<f64>], opts: &GprOptions) -> Result<Self> {
        if inputs.len() < 2 {
            return Err(Error::Validation(format!(
                "GPR needs at least two samples, got {}",
                inputs.len()
            )));
        }
        Error::check_dim("GPR targets", inputs.len(), targets.len())?;
        let d = inputs[0].len();
        if inputs.iter().any(|x| x.len() != d) {
            return Err(Error::Validation("GPR inputs have mixed dimensions".into()));
        }
        let m = targets[0].len();
        if targets.iter().any(|y| y.len() != m) {
            return Err(Error::Validation("GPR targets have mixed dimensions".into()));
        }
        let init = opts.init.clone().unwrap_or_else(|| GprHyper::reference(d));
        init.validate(d)?;
        let n = inputs.len();
        let fit_idx: Vec<usize> = if n > opts.max_fit_points {
            let mut idx = sample(&mut ChaCha8Rng::seed_from_u64(opts.seed), n, opts.max_fit_points).into_vec();
            idx.sort_unstable();
            idx
        } else {
            (0..n).collect()
        };
        let fit_x: Vec<Vec<f64>> = fit_idx.iter().map(|&i| inputs[i].clone()).collect();
        let components = (0..m)
            .into_par_iter()
            .map(|c| {
                let y = DVector::from_iterator(n, targets.iter().map(|t| t[c]));
                let hyper = if opts.optimize {
                    let fy = DVector::from_iterator(fit_idx.len(), fit_idx.iter().map(|&i| y[i]));
                    optimize_hyper(&fit_x, &fy, &init, opts, opts.seed.wrapping_add(1 + c as u64))
                } else {
                    init.clone()
                };
                GprComponent::new(inputs, &y, hyper)
            })
            .collect::<Result<_>>()?;
        Ok(GprModel {
            inputs: inputs.to_vec(),
            components,
        })
    }

    pub fn components(&self) -> &[GprComponent] {
        &self.components
    }

    pub fn input_dim(&self) -> usize {
        self.inputs[0].len()
    }

    /// Posterior mean per output.
    pub fn predict(&self, query: &[f64]) -> Result<Vec<f64>> {
        Error::check_dim("GPR query", self.input_dim(), query.len())?;
        Ok(self
            .components
            .iter()
            .map(|c| {
                self.inputs
                    .iter()
                    .zip(c.alpha.iter())
                    .map(|(x, a)| kernel(query, x, &c.hyper.length_scales) * a)
                    .sum()
            })
            .collect())
    }

    /// Posterior mean and latent-function variance per output.
    pub fn predict_with_variance(&self, query: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mean = self.predict(query)?;
        let var = self
            .components
            .iter()
            .map(|c| {
                let ks = DVector::from_iterator(
                    self.inputs.len(),
                    self.inputs.iter().map(|x| kernel(query, x, &c.hyper.length_scales)),
                );
                let v = c.chol.l().solve_lower_triangular(&ks).unwrap_or(ks);
                (1.0 - v.dot(&v)).max(0.0)
            })
            .collect();
        Ok((mean, var))
    }
}

impl GprComponent {
    fn new(inputs: &[Vec<f64>], y: &DVector<f64>, hyper: GprHyper) -> Result<Self> {
        let chol = factor(kernel_matrix(inputs, &hyper))?;
        let alpha = chol.solve(y);
        let (nll, _) = neg_lml(inputs, y, &hyper.to_log())?;
        Ok(GprComponent {
            hyper,
            log_marginal_likelihood: -nll,
            chol,
            alpha,
        })
    }
}
