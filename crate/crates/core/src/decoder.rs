//! NN_dec: fully connected lift of `(t, s, mu)` to `N_h x n_hc` node features,
//! residual graph convolutions, then a per-node linear readout to `d_u`.

use serde::{Deserialize, Serialize};

use crate::diff::{Activation, GaussianOffsets, InitKind, Mlp, MlpSpec, ParamLayout, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvKind {
    MeanAggregation,
    GaussianMixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub latent_dim: usize,
    pub d_mu: usize,
    pub include_t: bool,
    pub include_mu: bool,
    /// Hidden FC widths between the input and the `N_h * n_hc` output.
    pub fc_hidden: Vec<usize>,
    pub fc_activation: Activation,
    pub n_hc: usize,
    pub n_conv: usize,
    pub conv_kind: ConvKind,
    pub n_kernels: usize,
    pub conv_activation: Activation,
    pub d_u: usize,
}

impl DecoderConfig {
    pub fn reference(latent_dim: usize, d_mu: usize, d_u: usize) -> Self {
        DecoderConfig {
            latent_dim,
            d_mu,
            include_t: true,
            include_mu: true,
            fc_hidden: vec![200],
            fc_activation: Activation::Elu,
            n_hc: 2,
            n_conv: 2,
            conv_kind: ConvKind::MeanAggregation,
            n_kernels: 4,
            conv_activation: Activation::Elu,
            d_u,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.latent_dim + usize::from(self.include_t) + if self.include_mu { self.d_mu } else { 0 }
    }

    fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.n_hc == 0 || self.d_u == 0 {
            return Err(Error::Config(
                "decoder latent_dim, n_hc and d_u must be positive".into(),
            ));
        }
        if self.conv_kind == ConvKind::GaussianMixture && self.n_kernels == 0 {
            return Err(Error::Config("gaussian_mixture needs at least one kernel".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ConvOffsets {
    Mean { w: usize, b: usize },
    Gauss(GaussianOffsets),
}

/// NN_dec bound to its parameter blocks and node count.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    pub config: DecoderConfig,
    num_nodes: usize,
    fc: Mlp,
    convs: Vec<ConvOffsets>,
    readout: (usize, usize),
}

impl Decoder {
    /// `edge_scale` (a typical edge length) sets the initial Gaussian kernel
    /// spread; `pseudo_dim` is the mesh dimension.
    pub fn register(
        config: DecoderConfig,
        num_nodes: usize,
        pseudo_dim: usize,
        edge_scale: f64,
        layout: &mut ParamLayout,
    ) -> Result<Self> {
        config.validate()?;
        let mut sizes = vec![config.input_dim()];
        sizes.extend(&config.fc_hidden);
        sizes.push(num_nodes * config.n_hc);
        let fc = MlpSpec {
            sizes,
            hidden: config.fc_activation,
            output: config.fc_activation,
        }
        .register(layout, "dec.fc")?;
        let c = config.n_hc;
        let glorot = InitKind::Glorot { fan_in: c, fan_out: c };
        let zero = InitKind::Constant(0.0);
        let mut convs = Vec::new();
        for k in 0..config.n_conv {
            let p = format!("dec.conv{k}");
            convs.push(match config.conv_kind {
                ConvKind::MeanAggregation => ConvOffsets::Mean {
                    w: layout.push(format!("{p}.W"), &[c, c], glorot),
                    b: layout.push(format!("{p}.b"), &[c], zero),
                },
                ConvKind::GaussianMixture => {
                    let kk = config.n_kernels;
                    let d = pseudo_dim;
                    ConvOffsets::Gauss(GaussianOffsets {
                        k: kk,
                        means: layout.push(
                            format!("{p}.mu"),
                            &[kk, d],
                            InitKind::Uniform {
                                lo: -edge_scale,
                                hi: edge_scale,
                            },
                        ),
                        log_precisions: layout.push(
                            format!("{p}.log_prec"),
                            &[kk, d],
                            InitKind::Constant(-2.0 * edge_scale.ln()),
                        ),
                        mixing: layout.push(format!("{p}.G"), &[kk, c, c], glorot),
                        bias: layout.push(format!("{p}.b"), &[c], zero),
                    })
                }
            });
        }
        let readout = (
            layout.push(
                "dec.readout.W",
                &[config.d_u, c],
                InitKind::Glorot {
                    fan_in: c,
                    fan_out: config.d_u,
                },
            ),
            layout.push("dec.readout.b", &[config.d_u], zero),
        );
        Ok(Decoder {
            config,
            num_nodes,
            fc,
            convs,
            readout,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn output_len(&self) -> usize {
        self.num_nodes * self.config.d_u
    }

    /// Records the decoder; the tape must carry the mesh graph context.
    pub fn record(&self, tape: &mut Tape, t: f64, s: Var, mu: &[f64]) -> Var {
        let h = self.record_fc(tape, t, s, mu);
        let h = self.record_conv_stack(tape, h);
        self.record_readout(tape, h)
    }

    /// FC stack output, `N_h x n_hc` node-major.
    pub fn record_fc(&self, tape: &mut Tape, t: f64, s: Var, mu: &[f64]) -> Var {
        let mut parts = Vec::with_capacity(3);
        if self.config.include_t {
            parts.push(tape.leaf(vec![t]));
        }
        parts.push(s);
        if self.config.include_mu {
            parts.push(tape.leaf(mu.to_vec()));
        }
        let x = if parts.len() == 1 { s } else { tape.concat(&parts) };
        self.fc.record(tape, x)
    }

    /// `h <- h + act(conv(h))` for every convolution layer.
    pub fn record_conv_stack(&self, tape: &mut Tape, mut h: Var) -> Var {
        let c = self.config.n_hc;
        for conv in &self.convs {
            let z = match *conv {
                ConvOffsets::Mean { w, b } => tape.conv_mean(h, w, b, c, c),
                ConvOffsets::Gauss(off) => tape.conv_gauss(h, off, c, c),
            };
            let z = tape.act(z, self.config.conv_activation);
            h = tape.add(h, z);
        }
        h
    }

    pub fn record_readout(&self, tape: &mut Tape, h: Var) -> Var {
        tape.node_linear(h, self.readout.0, self.readout.1, self.config.n_hc, self.config.d_u)
    }
}
