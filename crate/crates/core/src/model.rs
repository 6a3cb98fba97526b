//! NN_dyn and NN_dec bound to one mesh and one flat parameter layout.

use serde::{Deserialize, Serialize};

use crate::dataset::SignalTable;
use crate::decoder::{Decoder, DecoderConfig};
use crate::diff::{GraphContext, ParamLayout, Tape};
use crate::dynamics::{euler_rollout, DynNet, DynNetConfig, LatentTrajectory, RolloutOptions};
use crate::error::{Error, Result};
use crate::mesh::{compute_pseudo_coords, EdgePseudoCoords, MeshGraph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dynamics: DynNetConfig,
    pub decoder: DecoderConfig,
    /// Latent Euler step.
    pub dt: f64,
}

impl ModelConfig {
    /// Reference architecture for latent size `n`.
    pub fn reference(latent_dim: usize, d_mu: usize, d_u: usize, dt: f64) -> Self {
        ModelConfig {
            dynamics: DynNetConfig::reference(latent_dim, d_mu),
            decoder: DecoderConfig::reference(latent_dim, d_mu, d_u),
            dt,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (d, e) = (&self.dynamics, &self.decoder);
        if d.latent_dim != e.latent_dim || d.d_mu != e.d_mu {
            return Err(Error::Config(format!(
                "dynamics (n={}, d_mu={}) and decoder (n={}, d_mu={}) disagree",
                d.latent_dim, d.d_mu, e.latent_dim, e.d_mu
            )));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("model.dt = {} must be positive", self.dt)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    layout: ParamLayout,
    dyn_net: DynNet,
    decoder: Decoder,
    mesh: MeshGraph,
    pseudo: EdgePseudoCoords,
}

/// Mean edge length.
fn edge_scale(mesh: &MeshGraph) -> f64 {
    let d = mesh.dim();
    let total: f64 = mesh
        .edges()
        .iter()
        .map(|&[u, v]| {
            (0..d)
                .map(|i| (mesh.node(u)[i] - mesh.node(v)[i]).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    total / mesh.edges().len().max(1) as f64
}

impl Model {
    pub fn new(config: ModelConfig, mesh: MeshGraph) -> Result<Self> {
        config.validate()?;
        let pseudo = compute_pseudo_coords(&mesh)?;
        let mut layout = ParamLayout::new();
        let dyn_net = DynNet::register(config.dynamics.clone(), &mut layout)?;
        let decoder = Decoder::register(
            config.decoder.clone(),
            mesh.num_nodes(),
            mesh.dim(),
            edge_scale(&mesh),
            &mut layout,
        )?;
        Ok(Model {
            config,
            layout,
            dyn_net,
            decoder,
            mesh,
            pseudo,
        })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.layout.len()
    }

    pub fn mesh(&self) -> &MeshGraph {
        &self.mesh
    }

    pub fn dynamics(&self) -> &DynNet {
        &self.dyn_net
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    pub fn latent_dim(&self) -> usize {
        self.config.dynamics.latent_dim
    }

    pub fn d_mu(&self) -> usize {
        self.config.dynamics.d_mu
    }

    pub fn d_u(&self) -> usize {
        self.config.decoder.d_u
    }

    pub fn field_len(&self) -> usize {
        self.decoder.output_len()
    }

    pub fn initialize(&self, seed: u64) -> Vec<f64> {
        self.layout.initialize(seed)
    }

    pub fn tape<'a>(&'a self, params: &'a [f64]) -> Tape<'a> {
        Tape::with_graph(
            params,
            GraphContext {
                index: self.mesh.neighbors(),
                pseudo: &self.pseudo,
            },
        )
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        Error::check_dim("parameter vector", self.layout.len(), params.len())
    }

    /// Decoded field in scaled units, `N_h x d_u` node-major.
    pub fn decode(&self, params: &[f64], t: f64, s: &[f64], mu: &[f64]) -> Result<Vec<f64>> {
        self.check_params(params)?;
        Error::check_dim("latent state", self.latent_dim(), s.len())?;
        Error::check_dim("signal value", self.d_mu(), mu.len())?;
        let mut tape = self.tape(params);
        let sv = tape.leaf(s.to_vec());
        let y = self.decoder.record(&mut tape, t, sv, mu);
        Ok(tape.value(y).to_vec())
    }

    pub fn rollout(&self, params: &[f64], signal: &SignalTable, opts: &RolloutOptions) -> Result<LatentTrajectory> {
        self.check_params(params)?;
        euler_rollout(&self.dyn_net, params, signal, self.config.dt, opts)
    }

    /// Rollout plus decoding at every snapshot time (scaled units).
    pub fn simulate(&self, params: &[f64], signal: &SignalTable, n_snapshots: Option<usize>) -> Result<(LatentTrajectory, Vec<Vec<f64>>)> {
        let traj = self.rollout(
            params,
            signal,
            &RolloutOptions {
                n_snapshots,
                ..Default::default()
            },
        )?;
        let fields = (0..traj.len())
            .map(|i| self.decode(params, traj.times[i], traj.state(i), &traj.signal[i]))
            .collect::<Result<_>>()?;
        Ok((traj, fields))
    }
}
