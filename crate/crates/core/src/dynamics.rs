//! Latent ODE `ds/dt = NN_dyn(t, s, mu(t))`, `s(0) = 0`, integrated with
//! explicit Euler between snapshot times.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::SignalTable;
use crate::diff::{Activation, Mlp, MlpSpec, ParamLayout, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynNetConfig {
    pub latent_dim: usize,
    pub d_mu: usize,
    pub include_t: bool,
    pub include_mu: bool,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl DynNetConfig {
    /// The reference layout `[n + 1 + d_mu, 50, 80, 100, 80, 50, n]` with tanh.
    pub fn reference(latent_dim: usize, d_mu: usize) -> Self {
        DynNetConfig {
            latent_dim,
            d_mu,
            include_t: true,
            include_mu: true,
            hidden: vec![50, 80, 100, 80, 50],
            activation: Activation::Tanh,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.latent_dim + usize::from(self.include_t) + if self.include_mu { self.d_mu } else { 0 }
    }

    pub fn mlp_spec(&self) -> MlpSpec {
        let mut sizes = vec![self.input_dim()];
        sizes.extend(&self.hidden);
        sizes.push(self.latent_dim);
        MlpSpec {
            sizes,
            hidden: self.activation,
            output: Activation::Identity,
        }
    }
}

/// NN_dyn bound to its parameter blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct DynNet {
    pub config: DynNetConfig,
    mlp: Mlp,
}

impl DynNet {
    pub fn register(config: DynNetConfig, layout: &mut ParamLayout) -> Result<Self> {
        if config.latent_dim == 0 {
            return Err(Error::Config("latent dimension must be positive".into()));
        }
        let mlp = config.mlp_spec().register(layout, "dyn")?;
        Ok(DynNet { config, mlp })
    }

    pub fn param_count(&self) -> usize {
        self.mlp.spec.param_count()
    }

    /// Records `NN_dyn(t, s, mu)` with `s` already on the tape.
    pub fn record(&self, tape: &mut Tape, t: f64, s: Var, mu: &[f64]) -> Var {
        let mut parts = Vec::with_capacity(3);
        if self.config.include_t {
            parts.push(tape.leaf(vec![t]));
        }
        parts.push(s);
        if self.config.include_mu {
            parts.push(tape.leaf(mu.to_vec()));
        }
        let x = if parts.len() == 1 { s } else { tape.concat(&parts) };
        self.mlp.record(tape, x)
    }

    /// `ds/dt` at `(t, s, mu)`.
    pub fn rhs(&self, params: &[f64], t: f64, s: &[f64], mu: &[f64]) -> Result<Vec<f64>> {
        Error::check_dim("latent state", self.config.latent_dim, s.len())?;
        Error::check_dim("signal value", self.config.d_mu, mu.len())?;
        let mut tape = Tape::new(params);
        let sv = tape.leaf(s.to_vec());
        let y = self.record(&mut tape, t, sv, mu);
        Ok(tape.value(y).to_vec())
    }
}

/// `floor(h / dt)`, with a relative guard so that e.g. `0.02 / 0.01` gives 2.
pub fn substep_count(h: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Config(format!("integration step dt = {dt} must be positive")));
    }
    let n = (h / dt * (1.0 + 1e-12)).floor();
    if n < 1.0 {
        return Err(Error::Config(format!(
            "integration step dt = {dt} exceeds the snapshot spacing {h}"
        )));
    }
    Ok(n as usize)
}

/// Linear interpolation `mu_k + (j / n_int) (mu_k1 - mu_k)`.
pub fn interp_signal(j: usize, mu_k: &[f64], mu_k1: &[f64], n_int: usize) -> Result<Vec<f64>> {
    if n_int == 0 {
        return Err(Error::Validation("substep count must be positive".into()));
    }
    if j > n_int {
        return Err(Error::Validation(format!("substep {j} beyond {n_int}")));
    }
    Error::check_dim("signal value", mu_k.len(), mu_k1.len())?;
    let r = j as f64 / n_int as f64;
    Ok(mu_k.iter().zip(mu_k1).map(|(a, b)| a + r * (b - a)).collect())
}

/// Where the integrator is when it hands a state to the visitor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Visit {
    /// State at snapshot index `k` (time `t_k`).
    Snapshot(usize),
    /// Intermediate Euler state strictly inside a snapshot interval.
    Substep(f64),
}

/// Euler integration on a tape over the first `n_snapshots` instants of
/// `signal`, starting from `s0`. `visit` sees every snapshot state (and every
/// intermediate substep state).
pub fn integrate<'a>(
    tape: &mut Tape<'a>,
    net: &DynNet,
    signal: &SignalTable,
    n_snapshots: usize,
    dt: f64,
    s0: Var,
    mut visit: impl FnMut(&mut Tape<'a>, Visit, Var) -> Result<()>,
) -> Result<Var> {
    let times = signal.times();
    if n_snapshots == 0 || n_snapshots > times.len() {
        return Err(Error::Validation(format!(
            "rollout over {n_snapshots} snapshots but the signal has {}",
            times.len()
        )));
    }
    let mut s = s0;
    visit(tape, Visit::Snapshot(0), s)?;
    for k in 0..n_snapshots - 1 {
        let (t0, t1) = (times[k], times[k + 1]);
        let n_int = substep_count(t1 - t0, dt)?;
        let (mu0, mu1) = (signal.value(k), signal.value(k + 1));
        for j in 0..n_int {
            let t = t0 + j as f64 * dt;
            let mu = if signal.is_constant() {
                mu0.to_vec()
            } else {
                interp_signal(j, mu0, mu1, n_int)?
            };
            let f = net.record(tape, t, s, &mu);
            s = tape.axpy(s, dt, f);
            if tape.value(s).iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence {
                    at: format!("t = {}", t + dt),
                    message: "latent state became non-finite".into(),
                });
            }
            if j + 1 < n_int {
                visit(tape, Visit::Substep(t0 + (j + 1) as f64 * dt), s)?;
            }
        }
        visit(tape, Visit::Snapshot(k + 1), s)?;
    }
    Ok(s)
}

#[derive(Debug, Clone, Default)]
pub struct RolloutOptions {
    /// Snapshot count to cover; all of the signal's instants when `None`.
    pub n_snapshots: Option<usize>,
    pub record_substeps: bool,
    /// Replaces `s(0) = 0`; used only by tests and diagnostics.
    pub initial_state: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentTrajectory {
    pub sim_id: usize,
    pub latent_dim: usize,
    pub times: Vec<f64>,
    /// `times.len() x latent_dim`, row-major.
    pub states: Vec<f64>,
    /// Signal value at each recorded time.
    pub signal: Vec<Vec<f64>>,
}

impl LatentTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.latent_dim..(i + 1) * self.latent_dim]
    }
}

/// Rolls out NN_dyn along `signal`.
pub fn euler_rollout(net: &DynNet, params: &[f64], signal: &SignalTable, dt: f64, opts: &RolloutOptions) -> Result<LatentTrajectory> {
    let n = net.config.latent_dim;
    Error::check_dim("signal dimension", net.config.d_mu, signal.d_mu())?;
    let n_snap = opts.n_snapshots.unwrap_or(signal.len());
    let s0 = match &opts.initial_state {
        Some(s) => {
            Error::check_dim("initial state", n, s.len())?;
            s.clone()
        }
        None => vec![0.0; n],
    };
    let mut tape = Tape::new(params);
    let s0 = tape.leaf(s0);
    let mut traj = LatentTrajectory {
        sim_id: signal.sim_id,
        latent_dim: n,
        times: Vec::new(),
        states: Vec::new(),
        signal: Vec::new(),
    };
    let times = signal.times();
    integrate(&mut tape, net, signal, n_snap, dt, s0, |tape, visit, s| {
        let t = match visit {
            Visit::Snapshot(k) => {
                traj.signal.push(signal.value(k).to_vec());
                times[k]
            }
            Visit::Substep(t) if opts.record_substeps => {
                let k = times.partition_point(|&x| x <= t) - 1;
                let h = times[k + 1] - times[k];
                let r = (t - times[k]) / h;
                let (a, b) = (signal.value(k), signal.value(k + 1));
                traj.signal.push(a.iter().zip(b).map(|(x, y)| x + r * (y - x)).collect());
                t
            }
            Visit::Substep(_) => return Ok(()),
        };
        traj.times.push(t);
        traj.states.extend_from_slice(tape.value(s));
        Ok(())
    })?;
    Ok(traj)
}

/// Same schedule as [`euler_rollout`] for an arbitrary right-hand side
/// `f(t, s, mu)`; returns states at snapshot times.
pub fn euler_integrate_fn(
    mut f: impl FnMut(f64, &[f64], &[f64]) -> Vec<f64>,
    signal: &SignalTable,
    dt: f64,
    s0: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let times = signal.times();
    let mut s = s0.to_vec();
    let mut out = vec![s.clone()];
    for k in 0..times.len() - 1 {
        let n_int = substep_count(times[k + 1] - times[k], dt)?;
        for j in 0..n_int {
            let mu = interp_signal(j, signal.value(k), signal.value(k + 1), n_int)?;
            let d = f(times[k] + j as f64 * dt, &s, &mu);
            for (si, di) in s.iter_mut().zip(&d) {
                *si += dt * di;
            }
        }
        out.push(s.clone());
    }
    Ok(out)
}

/// CSV with header `sim_id,t,s_1,..,s_n`.
pub fn write_latent_csv(path: impl AsRef<Path>, trajectories: &[LatentTrajectory]) -> Result<()> {
    let path = path.as_ref();
    let n = trajectories.first().map_or(0, |t| t.latent_dim);
    let mut out = String::from("sim_id,t");
    for i in 1..=n {
        out.push_str(&format!(",s_{i}"));
    }
    out.push('\n');
    for traj in trajectories {
        for (i, t) in traj.times.iter().enumerate() {
            out.push_str(&format!("{},{t}", traj.sim_id));
            for v in traj.state(i) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
