use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    /// One bias-corrected update.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LbfgsOutcome {
    /// Step accepted with this step length; loss after the step.
    Accepted { step: f64, loss: f64 },
    /// Gradient is exactly zero.
    Stationary { loss: f64 },
    /// No Armijo point found after the allowed halvings; parameters unchanged.
    Skipped { loss: f64 },
}

/// Limited-memory BFGS with two-loop recursion and backtracking Armijo search.
#[derive(Debug, Clone)]
pub struct Lbfgs {
    pub memory: usize,
    pub armijo_c: f64,
    pub max_halvings: usize,
    s: VecDeque<Vec<f64>>,
    y: VecDeque<Vec<f64>>,
    cached: Option<(Vec<f64>, f64, Vec<f64>)>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Lbfgs {
    pub fn new(memory: usize) -> Self {
        Lbfgs {
            memory,
            armijo_c: 1e-4,
            max_halvings: 20,
            s: VecDeque::new(),
            y: VecDeque::new(),
            cached: None,
        }
    }

    fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let k = self.s.len();
        let mut alpha = vec![0.0; k];
        for i in (0..k).rev() {
            let rho = 1.0 / dot(&self.y[i], &self.s[i]);
            alpha[i] = rho * dot(&self.s[i], &q);
            for (qj, yj) in q.iter_mut().zip(&self.y[i]) {
                *qj -= alpha[i] * yj;
            }
        }
        if k > 0 {
            let gamma = dot(&self.s[k - 1], &self.y[k - 1]) / dot(&self.y[k - 1], &self.y[k - 1]);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for i in 0..k {
            let rho = 1.0 / dot(&self.y[i], &self.s[i]);
            let beta = rho * dot(&self.y[i], &q);
            for (qj, sj) in q.iter_mut().zip(&self.s[i]) {
                *qj += (alpha[i] - beta) * sj;
            }
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }

    /// One quasi-Newton step on `f`, which returns loss and gradient. A
    /// non-finite loss or an error at a trial point counts as a failed trial.
    pub fn step(&mut self, params: &mut [f64], f: &mut dyn FnMut(&[f64]) -> Result<(f64, Vec<f64>)>) -> Result<LbfgsOutcome> {
        let (f0, g0) = match self.cached.take() {
            Some((x, l, g)) if x == params => (l, g),
            _ => f(params)?,
        };
        if g0.iter().all(|&v| v == 0.0) {
            self.cached = Some((params.to_vec(), f0, g0));
            return Ok(LbfgsOutcome::Stationary { loss: f0 });
        }
        let mut d = self.direction(&g0);
        let mut slope = dot(&g0, &d);
        if !(slope < 0.0) {
            self.s.clear();
            self.y.clear();
            d = g0.iter().map(|v| -v).collect();
            slope = dot(&g0, &d);
        }
        let mut alpha = 1.0;
        let mut trial = params.to_vec();
        for _ in 0..=self.max_halvings {
            for i in 0..trial.len() {
                trial[i] = params[i] + alpha * d[i];
            }
            if let Ok((f1, g1)) = f(&trial) {
                if f1.is_finite() && f1 <= f0 + self.armijo_c * alpha * slope {
                    let s: Vec<f64> = trial.iter().zip(params.iter()).map(|(a, b)| a - b).collect();
                    let y: Vec<f64> = g1.iter().zip(&g0).map(|(a, b)| a - b).collect();
                    if dot(&s, &y) > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
                        if self.s.len() == self.memory {
                            self.s.pop_front();
                            self.y.pop_front();
                        }
                        self.s.push_back(s);
                        self.y.push_back(y);
                    }
                    params.copy_from_slice(&trial);
                    self.cached = Some((trial, f1, g1));
                    return Ok(LbfgsOutcome::Accepted { step: alpha, loss: f1 });
                }
            }
            alpha *= 0.5;
        }
        self.s.clear();
        self.y.clear();
        self.cached = Some((params.to_vec(), f0, g0));
        Ok(LbfgsOutcome::Skipped { loss: f0 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut adam = Adam::new(3, 1e-3);
        let mut p = vec![1.0, -2.0, 0.5];
        adam.step(&mut p, &[0.0; 3]);
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        assert!(adam.moments().0.iter().chain(adam.moments().1).all(|&v| v == 0.0));
    }

    #[test]
    fn adam_first_step_is_lr_sign() {
        let mut adam = Adam::new(3, 1e-3);
        let mut p = vec![0.0; 3];
        let g = [0.5, -3.0, 1e-2];
        adam.step(&mut p, &g);
        for (pi, gi) in p.iter().zip(&g) {
            // m_hat / sqrt(v_hat) = g / |g|
            let expect = -1e-3 * gi.signum() * gi.abs() / (gi.abs() + 1e-8);
            assert!((pi - expect).abs() < 1e-15, "{pi} vs {expect}");
        }
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut adam = Adam::new(2, 1e-2);
            let mut p = vec![1.0, 1.0];
            let mut hist = Vec::new();
            for _ in 0..50 {
                let g = [2.0 * p[0], 20.0 * p[1]];
                adam.step(&mut p, &g);
                hist.push(p.clone());
            }
            hist
        };
        assert_eq!(run(), run());
    }

    fn quad(target: &[f64]) -> impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)> + '_ {
        move |w: &[f64]| {
            let g: Vec<f64> = w.iter().zip(target).map(|(a, b)| a - b).collect();
            Ok((0.5 * dot(&g, &g), g))
        }
    }

    #[test]
    fn lbfgs_solves_quadratic() {
        let target: Vec<f64> = (0..12).map(|i| (i as f64 * 0.9).sin() * 3.0).collect();
        let mut w = vec![0.0; 12];
        let mut opt = Lbfgs::new(10);
        let mut f = quad(&target);
        let mut iters = 0;
        while iters < 24 {
            iters += 1;
            if let LbfgsOutcome::Stationary { .. } = opt.step(&mut w, &mut f).unwrap() {
                break;
            }
            if w.iter().zip(&target).all(|(a, b)| (a - b).abs() < 1e-10) {
                break;
            }
        }
        assert!(iters <= 24);
        for (a, b) in w.iter().zip(&target) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn lbfgs_solves_ill_conditioned_quadratic() {
        let scales: Vec<f64> = (0..8).map(|i| 1.0 + 10.0 * i as f64).collect();
        let mut f = |w: &[f64]| -> Result<(f64, Vec<f64>)> {
            let g: Vec<f64> = w.iter().zip(&scales).map(|(x, a)| a * (x - 1.0)).collect();
            let l = w.iter().zip(&scales).map(|(x, a)| 0.5 * a * (x - 1.0) * (x - 1.0)).sum();
            Ok((l, g))
        };
        let mut w = vec![0.0; 8];
        let mut opt = Lbfgs::new(10);
        for _ in 0..100 {
            opt.step(&mut w, &mut f).unwrap();
        }
        assert!(w.iter().all(|x| (x - 1.0).abs() < 1e-8), "{w:?}");
    }

    #[test]
    fn lbfgs_stationary_start_does_not_move() {
        let target = vec![1.0, 2.0];
        let mut w = target.clone();
        let mut opt = Lbfgs::new(10);
        let out = opt.step(&mut w, &mut quad(&target)).unwrap();
        assert_eq!(out, LbfgsOutcome::Stationary { loss: 0.0 });
        assert_eq!(w, target);
    }

    #[test]
    fn lbfgs_skips_when_no_descent_is_found() {
        // loss is non-finite everywhere except the start
        let mut f = |w: &[f64]| -> Result<(f64, Vec<f64>)> {
            if w[0] == 1.0 {
                Ok((1.0, vec![1.0]))
            } else {
                Ok((f64::NAN, vec![0.0]))
            }
        };
        let mut w = vec![1.0];
        let out = Lbfgs::new(10).step(&mut w, &mut f).unwrap();
        assert_eq!(out, LbfgsOutcome::Skipped { loss: 1.0 });
        assert_eq!(w, vec![1.0]);
    }
}
