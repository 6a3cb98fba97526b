//! Zero-shot prediction by interpolating latent trajectories over `(t, mu)`
//! and decoding, plus an empirical check of the resulting error bound.

mod gpr;
mod linear;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use gpr::{matern15, GprComponent, GprHyper, GprModel, GprOptions};
pub use linear::MultilinearInterp;

use crate::dataset::{SignalTable, SnapshotDataset};
use crate::dynamics::{LatentTrajectory, RolloutOptions};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::training::Checkpoint;

/// Latent states of one constant-parameter rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableTrajectory {
    pub mu: Vec<f64>,
    pub times: Vec<f64>,
    pub states: Vec<f64>,
}

impl TableTrajectory {
    pub fn state(&self, k: usize) -> &[f64] {
        let n = self.states.len() / self.times.len();
        &self.states[k * n..(k + 1) * n]
    }

    /// Linear in time between stored instants; `None` outside them.
    pub fn at_time(&self, t: f64) -> Option<Vec<f64>> {
        let (first, last) = (self.times[0], *self.times.last()?);
        if !(t >= first && t <= last) {
            return None;
        }
        let k = self.times.partition_point(|&x| x <= t) - 1;
        if self.times[k] == t || k + 1 == self.times.len() {
            return Some(self.state(k).to_vec());
        }
        let r = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
        Some(
            self.state(k)
                .iter()
                .zip(self.state(k + 1))
                .map(|(a, b)| a + r * (b - a))
                .collect(),
        )
    }
}

/// Latent samples `s(t; mu)` for constant parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentTable {
    latent_dim: usize,
    d_mu: usize,
    trajectories: Vec<TableTrajectory>,
}

impl LatentTable {
    pub fn new(latent_dim: usize, d_mu: usize, trajectories: Vec<TableTrajectory>) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(Error::Validation("latent table is empty".into()));
        }
        for tr in &trajectories {
            Error::check_dim("table parameter", d_mu, tr.mu.len())?;
            if tr.times.is_empty() || tr.states.len() != tr.times.len() * latent_dim {
                return Err(Error::Dimension {
                    context: "table states",
                    expected: tr.times.len() * latent_dim,
                    actual: tr.states.len(),
                });
            }
            if tr.times.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::Validation("table times must be strictly increasing".into()));
            }
        }
        Ok(LatentTable {
            latent_dim,
            d_mu,
            trajectories,
        })
    }

    /// Table from rollouts whose signal is constant in time.
    pub fn from_trajectories(trajs: &[LatentTrajectory]) -> Result<Self> {
        let first = trajs
            .first()
            .ok_or_else(|| Error::Validation("latent table is empty".into()))?;
        let entries = trajs
            .iter()
            .map(|tr| {
                let mu = tr.signal[0].clone();
                if tr.signal.iter().any(|m| m != &mu) {
                    return Err(Error::Validation(format!(
                        "simulation {} has a time-dependent signal; latent interpolation needs constant parameters",
                        tr.sim_id
                    )));
                }
                Ok(TableTrajectory {
                    mu,
                    times: tr.times.clone(),
                    states: tr.states.clone(),
                })
            })
            .collect::<Result<_>>()?;
        Self::new(first.latent_dim, first.signal[0].len(), entries)
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn d_mu(&self) -> usize {
        self.d_mu
    }

    pub fn trajectories(&self) -> &[TableTrajectory] {
        &self.trajectories
    }

    /// Sample inputs `[t, mu...]` and latent values.
    pub fn samples(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for tr in &self.trajectories {
            for (k, &t) in tr.times.iter().enumerate() {
                x.push([&[t][..], &tr.mu].concat());
                y.push(tr.state(k).to_vec());
            }
        }
        (x, y)
    }

    /// Per-component `(min, max)` of the stored states.
    pub fn latent_box(&self) -> Vec<(f64, f64)> {
        let mut b = vec![(f64::INFINITY, f64::NEG_INFINITY); self.latent_dim];
        for tr in &self.trajectories {
            for chunk in tr.states.chunks(self.latent_dim) {
                for (bi, &v) in b.iter_mut().zip(chunk) {
                    *bi = (bi.0.min(v), bi.1.max(v));
                }
            }
        }
        b
    }

    /// `(min, max)` of time followed by each parameter component.
    pub fn input_box(&self) -> Vec<(f64, f64)> {
        let mut b = vec![(f64::INFINITY, f64::NEG_INFINITY); 1 + self.d_mu];
        for tr in &self.trajectories {
            b[0] = (b[0].0.min(tr.times[0]), b[0].1.max(*tr.times.last().unwrap()));
            for (bi, &m) in b[1..].iter_mut().zip(&tr.mu) {
                *bi = (bi.0.min(m), bi.1.max(m));
            }
        }
        b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Roll the training parameters out to the query horizon, then interpolate.
    IntegrateThenInterpolate,
    /// Interpolate the training-time states and rely on extrapolation in time.
    InterpolateThenExtrapolate,
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iti" | "integrate_then_interpolate" => Ok(Strategy::IntegrateThenInterpolate),
            "ite" | "interpolate_then_extrapolate" => Ok(Strategy::InterpolateThenExtrapolate),
            other => Err(Error::Config(format!("unknown strategy {other:?} (expected iti or ite)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Gpr,
    Linear,
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gpr" => Ok(Method::Gpr),
            "linear" | "multilinear" => Ok(Method::Linear),
            other => Err(Error::Config(format!("unknown method {other:?} (expected gpr or linear)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Interpolant {
    Gpr(GprModel),
    Linear(MultilinearInterp),
}

impl Interpolant {
    pub fn fit(table: LatentTable, method: Method, gpr: &GprOptions) -> Result<Self> {
        match method {
            Method::Gpr => {
                let (x, y) = table.samples();
                Ok(Interpolant::Gpr(GprModel::fit(&x, &y, gpr)?))
            }
            Method::Linear => Ok(Interpolant::Linear(MultilinearInterp::new(table)?)),
        }
    }

    pub fn predict(&self, t: f64, mu: &[f64]) -> Result<Vec<f64>> {
        match self {
            Interpolant::Gpr(g) => g.predict(&[&[t][..], mu].concat()),
            Interpolant::Linear(l) => l.predict(t, mu),
        }
    }
}

/// `times` continued with its last spacing until it reaches `horizon`.
pub fn extend_grid(times: &[f64], horizon: f64) -> Result<Vec<f64>> {
    let mut out = times.to_vec();
    let last = *times.last().ok_or_else(|| Error::Validation("empty time grid".into()))?;
    if horizon <= last {
        return Ok(out);
    }
    if times.len() < 2 {
        return Err(Error::Validation("cannot extend a single-instant time grid".into()));
    }
    let h = last - times[times.len() - 2];
    let mut j = 1;
    while *out.last().unwrap() < horizon - 1e-12 * h {
        out.push(last + j as f64 * h);
        j += 1;
    }
    Ok(out)
}

/// Latent table from constant-parameter rollouts of the trained model.
/// The integrate-then-interpolate strategy rolls out to `horizon` and keeps
/// every Euler substep; the other keeps the snapshot states on `times`.
pub fn build_table(model: &Model, params: &[f64], mus: &[Vec<f64>], times: &[f64], strategy: Strategy, horizon: f64) -> Result<LatentTable> {
    let (grid, dense) = match strategy {
        Strategy::IntegrateThenInterpolate => (extend_grid(times, horizon)?, true),
        Strategy::InterpolateThenExtrapolate => (times.to_vec(), false),
    };
    let trajs = mus
        .par_iter()
        .enumerate()
        .map(|(i, mu)| {
            let signal = SignalTable::constant(i, grid.clone(), mu)?;
            model.rollout(
                params,
                &signal,
                &RolloutOptions {
                    record_substeps: dense,
                    ..Default::default()
                },
            )
        })
        .collect::<Result<Vec<_>>>()?;
    LatentTable::from_trajectories(&trajs)
}

/// A fitted latent interpolant bound to a trained model.
#[derive(Debug, Clone)]
pub struct ZeroShot {
    pub strategy: Strategy,
    pub method: Method,
    pub table: LatentTable,
    pub interpolant: Interpolant,
}

impl ZeroShot {
    #[allow(clippy::too_many_arguments)]
    pub fn fit(
        model: &Model,
        params: &[f64],
        mus: &[Vec<f64>],
        times: &[f64],
        strategy: Strategy,
        method: Method,
        horizon: f64,
        gpr: &GprOptions,
    ) -> Result<Self> {
        let table = build_table(model, params, mus, times, strategy, horizon)?;
        Ok(ZeroShot {
            strategy,
            method,
            interpolant: Interpolant::fit(table.clone(), method, gpr)?,
            table,
        })
    }

    pub fn latent(&self, t: f64, mu: &[f64]) -> Result<Vec<f64>> {
        self.interpolant.predict(t, mu)
    }
}

/// Decoded interpolated latent state in physical units.
pub fn zero_shot_predict(ckpt: &Checkpoint, model: &Model, zs: &ZeroShot, t: f64, mu: &[f64]) -> Result<Vec<f64>> {
    let s = zs.latent(t, mu)?;
    ckpt.unscale(model.decode(&ckpt.params, t, &s, mu)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSpec {
    pub pairs: usize,
    /// Relative widening of the latent bounding box on each side.
    pub inflate: f64,
    pub seed: u64,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        ProbeSpec {
            pairs: 10_000,
            inflate: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    /// Largest observed difference quotient (a lower bound of the constant).
    pub value: f64,
    pub pairs: usize,
}

/// Sampled Lipschitz constant of `decode` in its latent argument over the
/// inflated latent box of `table`, with `(t, mu)` drawn from the table's
/// input box. Even pairs are spread over the box, odd pairs are local
/// perturbations. A longer probe extends a shorter one with the same seed.
pub fn estimate_lipschitz<F>(decode: F, table: &LatentTable, spec: &ProbeSpec) -> Result<LipschitzEstimate>
where
    F: Fn(f64, &[f64], &[f64]) -> Result<Vec<f64>> + Sync,
{
    let sbox: Vec<(f64, f64)> = table
        .latent_box()
        .into_iter()
        .map(|(lo, hi)| {
            let pad = if hi > lo { spec.inflate * (hi - lo) } else { 0.1 * (1.0 + lo.abs()) };
            (lo - pad, hi + pad)
        })
        .collect();
    let ibox = table.input_box();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let draw = |b: &[(f64, f64)], rng: &mut ChaCha8Rng| -> Vec<f64> {
        b.iter()
            .map(|&(lo, hi)| if hi > lo { rng.gen_range(lo..=hi) } else { lo })
            .collect()
    };
    let probes: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..spec.pairs)
        .map(|i| {
            let input = draw(&ibox, &mut rng);
            let s = draw(&sbox, &mut rng);
            let s2 = if i % 2 == 0 {
                draw(&sbox, &mut rng)
            } else {
                s.iter()
                    .zip(&sbox)
                    .map(|(v, (lo, hi))| v + 1e-3 * (hi - lo) * rng.gen_range(-1.0..=1.0))
                    .collect()
            };
            (input, s, s2)
        })
        .collect();
    let ratios = probes
        .par_iter()
        .map(|(input, s, s2)| {
            let (t, mu) = (input[0], &input[1..]);
            let den = s.iter().zip(s2).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            if den == 0.0 {
                return Ok(0.0);
            }
            let (a, b) = (decode(t, s, mu)?, decode(t, s2, mu)?);
            Ok(a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt() / den)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(LipschitzEstimate {
        value: ratios.into_iter().fold(0.0, f64::max),
        pairs: spec.pairs,
    })
}

/// Fields and latent states at one query, all in physical units.
#[derive(Debug, Clone)]
pub struct BoundInput {
    pub sim_id: usize,
    pub t: f64,
    pub mu: Vec<f64>,
    pub u_h: Vec<f64>,
    pub u_sim: Vec<f64>,
    pub u_interp: Vec<f64>,
    pub s_sim: Vec<f64>,
    pub s_interp: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundEntry {
    pub sim_id: usize,
    pub t: f64,
    pub mu: Vec<f64>,
    /// `|u_h - u_interp|`
    pub err_interp: f64,
    /// `|u_h - u_sim|`
    pub err_sim: f64,
    /// `|u_sim - u_interp|`
    pub gap: f64,
    pub latent_gap: f64,
    pub bound: f64,
    pub triangle_ok: bool,
    pub bound_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub check: String,
    pub lipschitz: f64,
    pub probe_pairs: usize,
    /// Largest latent interpolation error over the queries.
    pub delta: f64,
    /// Relative widening of `L delta`; the sampled constant only bounds
    /// the true one from below.
    pub slack: f64,
    pub triangle_fraction: f64,
    pub bound_fraction: f64,
    pub violations: Vec<usize>,
    pub entries: Vec<BoundEntry>,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Checks `|u_h - u_interp| <= |u_h - u_sim| + |u_sim - u_interp|` and
/// `|u_h - u_interp| <= (1 + slack) L delta + |u_h - u_sim|` per query.
pub fn verify_bound(inputs: &[BoundInput], lipschitz: &LipschitzEstimate, slack: f64) -> BoundReport {
    let delta = inputs
        .iter()
        .map(|q| dist(&q.s_sim, &q.s_interp))
        .fold(0.0, f64::max);
    let entries: Vec<BoundEntry> = inputs
        .iter()
        .map(|q| {
            let err_interp = dist(&q.u_h, &q.u_interp);
            let err_sim = dist(&q.u_h, &q.u_sim);
            let gap = dist(&q.u_sim, &q.u_interp);
            let bound = (1.0 + slack) * lipschitz.value * delta + err_sim;
            // rounding in the three norms
            let tol = 1e-12 * (err_sim + gap).max(f64::MIN_POSITIVE);
            BoundEntry {
                sim_id: q.sim_id,
                t: q.t,
                mu: q.mu.clone(),
                err_interp,
                err_sim,
                gap,
                latent_gap: dist(&q.s_sim, &q.s_interp),
                bound,
                triangle_ok: err_interp <= err_sim + gap + tol,
                bound_ok: err_interp <= bound + tol,
            }
        })
        .collect();
    let frac = |f: fn(&BoundEntry) -> bool| {
        if entries.is_empty() {
            1.0
        } else {
            entries.iter().filter(|e| f(e)).count() as f64 / entries.len() as f64
        }
    };
    BoundReport {
        check: "empirical".into(),
        lipschitz: lipschitz.value,
        probe_pairs: lipschitz.pairs,
        delta,
        slack,
        triangle_fraction: frac(|e| e.triangle_ok),
        bound_fraction: frac(|e| e.bound_ok),
        violations: entries
            .iter()
            .enumerate()
            .filter(|(_, e)| !e.bound_ok)
            .map(|(i, _)| i)
            .collect(),
        entries,
    }
}

/// Ground truth, rollout and interpolant at dataset snapshots `(sim, k)`.
pub fn bound_inputs(ckpt: &Checkpoint, model: &Model, zs: &ZeroShot, dataset: &SnapshotDataset, queries: &[(usize, usize)]) -> Result<Vec<BoundInput>> {
    let mut sims: Vec<usize> = queries.iter().map(|q| q.0).collect();
    sims.sort_unstable();
    sims.dedup();
    let rolled: Vec<(usize, LatentTrajectory)> = sims
        .par_iter()
        .map(|&sim| Ok((sim, model.rollout(&ckpt.params, &dataset.signals()[sim], &RolloutOptions::default())?)))
        .collect::<Result<_>>()?;
    queries
        .par_iter()
        .map(|&(sim, k)| {
            let traj = &rolled.iter().find(|r| r.0 == sim).unwrap().1;
            let t = dataset.times()[k];
            let mu = dataset.signals()[sim].value(k).to_vec();
            let s_sim = traj.state(k).to_vec();
            let s_interp = zs.latent(t, &mu)?;
            let u_sim = ckpt.unscale(model.decode(&ckpt.params, t, &s_sim, &mu)?)?;
            let u_interp = ckpt.unscale(model.decode(&ckpt.params, t, &s_interp, &mu)?)?;
            Ok(BoundInput {
                sim_id: sim,
                t,
                mu,
                u_h: dataset.snapshot(sim, k).to_vec(),
                u_sim,
                u_interp,
                s_sim,
                s_interp,
            })
        })
        .collect()
}

/// Queries at every snapshot of `sims`, minus those outside the
/// interpolant's domain.
pub fn bound_queries(zs: &ZeroShot, dataset: &SnapshotDataset, sims: &[usize]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for &sim in sims {
        for k in 0..dataset.num_times() {
            match zs.latent(dataset.times()[k], dataset.signals()[sim].value(k)) {
                Err(Error::OutOfHull { .. }) => {}
                _ => out.push((sim, k)),
            }
        }
    }
    out
}

/// Empirical error-bound check at the snapshots of `sims`. The Lipschitz
/// constant is sampled on the physical-units decoder.
pub fn check_bound(
    ckpt: &Checkpoint,
    model: &Model,
    zs: &ZeroShot,
    dataset: &SnapshotDataset,
    sims: &[usize],
    probe: &ProbeSpec,
    slack: f64,
) -> Result<BoundReport> {
    let queries = bound_queries(zs, dataset, sims);
    let inputs = bound_inputs(ckpt, model, zs, dataset, &queries)?;
    let decode = |t: f64, s: &[f64], mu: &[f64]| ckpt.unscale(model.decode(&ckpt.params, t, s, mu)?);
    let lipschitz = estimate_lipschitz(decode, &zs.table, probe)?;
    Ok(verify_bound(&inputs, &lipschitz, slack))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::unit_square_grid;
    use crate::model::ModelConfig;

    fn small_model() -> (Model, Vec<f64>) {
        let mut cfg = ModelConfig::reference(2, 2, 1, 0.05);
        cfg.dynamics.hidden = vec![6];
        cfg.decoder.fc_hidden = vec![5];
        let model = Model::new(cfg, unit_square_grid(3).unwrap()).unwrap();
        let p = model.initialize(3);
        (model, p)
    }

    fn grid_mus() -> Vec<Vec<f64>> {
        let v = [-1.0, 0.0, 1.0];
        v.iter().flat_map(|&a| v.iter().map(move |&b| vec![a, b])).collect()
    }

    fn zero_fc(model: &Model, p: &mut [f64]) {
        for b in model.layout().blocks().iter().filter(|b| b.name.starts_with("dec.fc.")) {
            p[b.offset..b.offset + b.len].iter_mut().for_each(|v| *v = 0.0);
        }
    }

    #[test]
    fn table_rejects_time_dependent_signals() {
        let (model, p) = small_model();
        let sig = SignalTable::new(0, vec![0.0, 0.1], 2, vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        let tr = model.rollout(&p, &sig, &RolloutOptions::default()).unwrap();
        assert!(LatentTable::from_trajectories(&[tr]).is_err());
    }

    #[test]
    fn extend_grid_reaches_horizon() {
        let g = extend_grid(&[0.0, 0.1, 0.2], 0.5).unwrap();
        assert_eq!(g.len(), 6);
        assert!((g[5] - 0.5).abs() < 1e-12);
        assert_eq!(extend_grid(&[0.0, 0.1, 0.2], 0.1).unwrap().len(), 3);
    }

    #[test]
    fn linear_zero_shot_is_exact_at_training_nodes() {
        let (model, p) = small_model();
        let times: Vec<f64> = (0..5).map(|k| k as f64 * 0.1).collect();
        let mus = grid_mus();
        let zs = ZeroShot::fit(&model, &p, &mus, &times, Strategy::IntegrateThenInterpolate, Method::Linear, 0.6, &GprOptions::default()).unwrap();
        let sig = SignalTable::constant(4, extend_grid(&times, 0.6).unwrap(), &mus[4]).unwrap();
        let (traj, fields) = model.simulate(&p, &sig, None).unwrap();
        for k in 0..traj.len() {
            let s = zs.latent(traj.times[k], &mus[4]).unwrap();
            assert_eq!(s, traj.state(k));
            assert_eq!(model.decode(&p, traj.times[k], &s, &mus[4]).unwrap(), fields[k]);
        }
    }

    #[test]
    fn linear_extrapolation_in_time_fails_but_gpr_answers() {
        let (model, p) = small_model();
        let times: Vec<f64> = (0..5).map(|k| k as f64 * 0.1).collect();
        let mus = grid_mus();
        let ite = Strategy::InterpolateThenExtrapolate;
        let lin = ZeroShot::fit(&model, &p, &mus, &times, ite, Method::Linear, 0.4, &GprOptions::default()).unwrap();
        assert!(matches!(lin.latent(0.6, &[0.0, 0.0]), Err(Error::OutOfHull { .. })));
        let gpr = ZeroShot::fit(&model, &p, &mus, &times, ite, Method::Gpr, 0.4, &GprOptions::default()).unwrap();
        assert!(gpr.latent(0.6, &[0.0, 0.0]).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn constant_decoder_ignores_interpolation_error() {
        let (model, mut p) = small_model();
        zero_fc(&model, &mut p);
        let times: Vec<f64> = (0..4).map(|k| k as f64 * 0.1).collect();
        let zs = ZeroShot::fit(&model, &p, &grid_mus(), &times, Strategy::InterpolateThenExtrapolate, Method::Gpr, 0.3, &GprOptions::default()).unwrap();
        let mu = [0.3, -0.6];
        let s = zs.latent(0.25, &mu).unwrap();
        let sig = SignalTable::constant(0, vec![0.0, 0.05, 0.1, 0.15, 0.2, 0.25], &mu).unwrap();
        let (traj, _) = model.simulate(&p, &sig, None).unwrap();
        let a = model.decode(&p, 0.25, &s, &mu).unwrap();
        let b = model.decode(&p, 0.25, traj.state(5), &mu).unwrap();
        assert_eq!(a, b);
        let table = build_table(&model, &p, &grid_mus(), &times, Strategy::InterpolateThenExtrapolate, 0.3).unwrap();
        let l = estimate_lipschitz(|t, s, mu| model.decode(&p, t, s, mu), &table, &ProbeSpec { pairs: 200, ..Default::default() }).unwrap();
        assert_eq!(l.value, 0.0);
    }

    fn linear_table() -> LatentTable {
        let times = vec![0.0, 1.0];
        let trs = [[-1.0, 0.0], [1.0, 0.5], [0.0, 1.0]]
            .iter()
            .map(|m| TableTrajectory {
                mu: m.to_vec(),
                times: times.clone(),
                states: vec![m[0], m[1], -m[1], 1.0 + m[0], m[0] * 0.5, 2.0],
            })
            .collect();
        LatentTable::new(3, 2, trs).unwrap()
    }

    #[test]
    fn lipschitz_of_linear_map_approaches_top_singular_value() {
        let a = nalgebra::DMatrix::from_row_slice(4, 3, &[1.0, 2.0, 0.0, -0.5, 0.3, 1.2, 0.0, 0.7, -1.1, 2.2, 0.1, 0.4]);
        let sigma = a.singular_values().max();
        let decode = |_: f64, s: &[f64], _: &[f64]| Ok((&a * nalgebra::DVector::from_column_slice(s)).as_slice().to_vec());
        let table = linear_table();
        let mut prev = 0.0;
        for pairs in [10, 100, 1000, 20_000] {
            let l = estimate_lipschitz(decode, &table, &ProbeSpec { pairs, ..Default::default() }).unwrap();
            assert!(l.value >= prev && l.value <= sigma * (1.0 + 1e-12));
            prev = l.value;
        }
        assert!(prev > 0.99 * sigma, "{prev} vs {sigma}");
    }

    #[test]
    fn bound_reduces_to_rollout_error_at_table_nodes() {
        let q = BoundInput {
            sim_id: 0,
            t: 0.1,
            mu: vec![0.0],
            u_h: vec![1.0, 2.0],
            u_sim: vec![1.5, 2.0],
            u_interp: vec![1.5, 2.0],
            s_sim: vec![0.3],
            s_interp: vec![0.3],
        };
        let r = verify_bound(&[q], &LipschitzEstimate { value: 4.0, pairs: 10 }, 0.0);
        assert_eq!(r.delta, 0.0);
        let e = &r.entries[0];
        assert_eq!(e.err_interp, e.err_sim);
        assert_eq!(e.bound, e.err_sim);
        assert!(e.bound_ok && e.triangle_ok);
        assert_eq!(r.check, "empirical");
    }

    #[test]
    fn zero_decoder_bound_is_tight() {
        let q = BoundInput {
            sim_id: 0,
            t: 0.1,
            mu: vec![0.0],
            u_h: vec![3.0, -4.0],
            u_sim: vec![0.0, 0.0],
            u_interp: vec![0.0, 0.0],
            s_sim: vec![0.3],
            s_interp: vec![0.9],
        };
        let r = verify_bound(&[q], &LipschitzEstimate { value: 0.0, pairs: 10 }, 0.0);
        assert_eq!(r.entries[0].err_interp, 5.0);
        assert_eq!(r.entries[0].bound, 5.0);
        assert_eq!(r.bound_fraction, 1.0);
    }

    #[test]
    fn undersampled_constant_is_flagged() {
        let q = BoundInput {
            sim_id: 0,
            t: 0.0,
            mu: vec![0.0],
            u_h: vec![0.0],
            u_sim: vec![0.0],
            u_interp: vec![2.0],
            s_sim: vec![0.0],
            s_interp: vec![1.0],
        };
        let r = verify_bound(&[q], &LipschitzEstimate { value: 1.0, pairs: 10 }, 0.0);
        assert_eq!(r.violations, vec![0]);
        assert!(r.entries[0].triangle_ok);
    }
}
