//! Parameter layout, dense kernels and a reverse-mode tape.

pub mod kernels;
pub mod params;
pub mod tape;

use serde::{Deserialize, Serialize};

pub use kernels::Activation;
pub use params::{InitKind, ParamBlock, ParamLayout, ParamVector};
pub use tape::{direction_penalty, mse, GaussianOffsets, GraphContext, Tape, Var};

use crate::error::{Error, Result};

/// Fully connected stack; `hidden` follows every layer but the last, which
/// uses `output`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub sizes: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
}

impl MlpSpec {
    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// Appends blocks `{prefix}.W{i}` and `{prefix}.b{i}` to `layout`.
    pub fn register(&self, layout: &mut ParamLayout, prefix: &str) -> Result<Mlp> {
        if self.sizes.len() < 2 || self.sizes.contains(&0) {
            return Err(Error::Config(format!(
                "{prefix}: layer sizes {:?} need at least two non-zero entries",
                self.sizes
            )));
        }
        let mut layers = Vec::new();
        for (i, w) in self.sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let wo = layout.push(
                format!("{prefix}.W{i}"),
                &[n_out, n_in],
                InitKind::Glorot {
                    fan_in: n_in,
                    fan_out: n_out,
                },
            );
            let bo = layout.push(format!("{prefix}.b{i}"), &[n_out], InitKind::Constant(0.0));
            layers.push((wo, bo));
        }
        Ok(Mlp {
            spec: self.clone(),
            layers,
        })
    }
}

/// An [`MlpSpec`] bound to parameter offsets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    pub spec: MlpSpec,
    layers: Vec<(usize, usize)>,
}

impl Mlp {
    pub fn record(&self, tape: &mut Tape, x: Var) -> Var {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = tape.affine(h, w, b, self.spec.sizes[i + 1]);
            let act = if i == last { self.spec.output } else { self.spec.hidden };
            h = tape.act(h, act);
        }
        h
    }

    /// Plain evaluation; bitwise equal to [`Mlp::record`].
    pub fn forward(&self, params: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        Error::check_dim("mlp input", self.spec.input_dim(), x.len())?;
        let mut tape = Tape::new(params);
        let x = tape.leaf(x.to_vec());
        let y = self.record(&mut tape, x);
        Ok(tape.value(y).to_vec())
    }
}

/// Central-difference gradient of `f` at `x`.
pub fn finite_diff_grad(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn l1_norm(w: &[f64]) -> f64 {
    w.iter().map(|v| v.abs()).sum()
}

/// Adds `scale * sign(w)` to `grad`, with subgradient 0 at 0.
pub fn add_l1_subgradient(w: &[f64], scale: f64, grad: &mut [f64]) {
    for (g, &v) in grad.iter_mut().zip(w) {
        if v > 0.0 {
            *g += scale;
        } else if v < 0.0 {
            *g -= scale;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dyn_spec() -> MlpSpec {
        MlpSpec {
            sizes: vec![6, 50, 80, 100, 80, 50, 3],
            hidden: Activation::Tanh,
            output: Activation::Identity,
        }
    }

    #[test]
    fn reference_dynamics_network_size() {
        // 6*50+50 + 50*80+80 + 80*100+100 + 100*80+80 + 80*50+50 + 50*3+3
        assert_eq!(dyn_spec().param_count(), 24_813);
        let mut layout = ParamLayout::new();
        dyn_spec().register(&mut layout, "dyn").unwrap();
        assert_eq!(layout.len(), 24_813);
    }

    #[test]
    fn single_layer_by_hand() {
        let spec = MlpSpec {
            sizes: vec![2, 1],
            hidden: Activation::Tanh,
            output: Activation::Tanh,
        };
        let mut layout = ParamLayout::new();
        let mlp = spec.register(&mut layout, "m").unwrap();
        let y = mlp.forward(&[0.5, -0.25, 0.1], &[1.0, 2.0]).unwrap();
        assert_eq!(y, vec![(0.5f64 - 0.5 + 0.1).tanh()]);
        assert!(mlp.forward(&[0.5, -0.25, 0.1], &[1.0]).is_err());
    }

    #[test]
    fn forward_agrees_with_tape_bitwise() {
        let spec = MlpSpec {
            sizes: vec![4, 7, 5, 2],
            hidden: Activation::Tanh,
            output: Activation::Identity,
        };
        let mut layout = ParamLayout::new();
        let mlp = spec.register(&mut layout, "m").unwrap();
        let params = layout.initialize(5);
        let x = vec![0.1, -0.4, 0.9, 0.3];
        let plain = mlp.forward(&params, &x).unwrap();
        let mut tape = Tape::new(&params);
        let xv = tape.leaf(x);
        let y = mlp.record(&mut tape, xv);
        let replayed = tape.replay(&params).unwrap();
        assert_eq!(plain, tape.value(y));
        assert_eq!(plain, replayed[y.index()]);
    }

    #[test]
    fn l1_norm_and_subgradient() {
        let w = [1.5, -2.0, 0.0];
        assert_eq!(l1_norm(&w), 3.5);
        let mut g = vec![0.0; 3];
        add_l1_subgradient(&w, 0.5, &mut g);
        assert_eq!(g, vec![0.5, -0.5, 0.0]);
    }

    #[test]
    fn finite_differences_of_quadratic() {
        let g = finite_diff_grad(|x| x[0] * x[0] + 3.0 * x[1], &[2.0, -1.0], 1e-5);
        assert!((g[0] - 4.0).abs() < 1e-8 && (g[1] - 3.0).abs() < 1e-8);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn mlp_gradient_matches_finite_differences(seed in any::<u64>(), elu in any::<bool>()) {
            let spec = MlpSpec {
                sizes: vec![3, 6, 4, 2],
                hidden: if elu { Activation::Elu } else { Activation::Tanh },
                output: Activation::Identity,
            };
            let mut layout = ParamLayout::new();
            let mlp = spec.register(&mut layout, "m").unwrap();
            let params = layout.initialize(seed);
            let loss = |p: &[f64]| {
                let mut t = Tape::new(p);
                let x = t.leaf(vec![0.3, -0.7, 0.2]);
                let y = mlp.record(&mut t, x);
                let l = t.mse(y, vec![0.1, 0.4]);
                (t.scalar(l), t.backward(l).unwrap())
            };
            let (_, g) = loss(&params);
            let fd = finite_diff_grad(|p| loss(p).0, &params, 1e-6);
            for (a, b) in g.iter().zip(&fd) {
                prop_assert!((a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1e-2), "{} vs {}", a, b);
            }
        }
    }
}
