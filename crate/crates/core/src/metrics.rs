//! Error metrics, latent amplitudes, bifurcation diagrams and CSV exports.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{SnapshotDataset, SplitSpec};
use crate::dynamics::{LatentTrajectory, RolloutOptions};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::training::Checkpoint;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `e = (u_h - u_sim) / |u_h|` and `|e|`, norms over all entries.
pub fn relative_error(u_h: &[f64], u_sim: &[f64]) -> Result<(Vec<f64>, f64)> {
    Error::check_dim("predicted field", u_h.len(), u_sim.len())?;
    let r = norm(u_h);
    if r == 0.0 {
        return Err(Error::DegenerateReference("reference field has zero norm".into()));
    }
    let e: Vec<f64> = u_h.iter().zip(u_sim).map(|(a, b)| (a - b) / r).collect();
    let eps = norm(&e);
    Ok((e, eps))
}

/// `(max, mean)`.
pub fn aggregate_errors(eps: &[f64]) -> Result<(f64, f64)> {
    if eps.is_empty() {
        return Err(Error::Validation("no errors to aggregate".into()));
    }
    let max = eps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((max, eps.iter().sum::<f64>() / eps.len() as f64))
}

/// Root-mean-square error over all entries divided by `u_ref`.
pub fn nrmse(u_h: &[f64], u_sim: &[f64], u_ref: f64) -> Result<f64> {
    Error::check_dim("predicted fields", u_h.len(), u_sim.len())?;
    if !(u_ref > 0.0) {
        return Err(Error::Validation(format!("NRMSE reference must be positive, got {u_ref}")));
    }
    if u_h.is_empty() {
        return Err(Error::Validation("no fields for NRMSE".into()));
    }
    let sq: f64 = u_h.iter().zip(u_sim).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sq / u_h.len() as f64).sqrt() / u_ref)
}

/// `max_i s_dim(t_i) - min_i s_dim(t_i)`.
pub fn amplitude(traj: &LatentTrajectory, dim: usize) -> Result<f64> {
    if dim >= traj.latent_dim {
        return Err(Error::Validation(format!(
            "latent component {dim} out of range (n = {})",
            traj.latent_dim
        )));
    }
    if traj.is_empty() {
        return Err(Error::Validation("empty trajectory".into()));
    }
    let (lo, hi) = (0..traj.len())
        .map(|i| traj.state(i)[dim])
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    Ok(hi - lo)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorEntry {
    pub sim_id: usize,
    pub t: f64,
    pub train: bool,
    pub eps_rel: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub eps_max: f64,
    pub eps_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub entries: Vec<ErrorEntry>,
    pub train: Option<Aggregate>,
    pub test: Option<Aggregate>,
    pub all: Aggregate,
    pub nrmse: f64,
    pub u_ref: f64,
    /// Snapshots left out because their reference norm is zero.
    pub skipped: Vec<(usize, f64)>,
}

fn summarize(eps: &[f64]) -> Option<Aggregate> {
    aggregate_errors(eps).ok().map(|(eps_max, eps_mean)| Aggregate {
        count: eps.len(),
        eps_max,
        eps_mean,
    })
}

/// Largest absolute training-field value.
pub fn default_u_ref(dataset: &SnapshotDataset, split: &SplitSpec) -> f64 {
    let mut m = 0.0f64;
    for &sim in &split.train_sim_ids {
        for k in 0..split.train_time_cutoff {
            m = dataset.snapshot(sim, k).iter().fold(m, |a, v| a.max(v.abs()));
        }
    }
    m
}

/// Rolls out every simulation and compares decoded fields with the data in
/// physical units. Training pairs follow `split`; everything else is test.
pub fn evaluate(ckpt: &Checkpoint, model: &Model, dataset: &SnapshotDataset, split: &SplitSpec, u_ref: Option<f64>) -> Result<EvalReport> {
    split.validate(dataset)?;
    let per_sim = (0..dataset.num_sims())
        .into_par_iter()
        .map(|sim| {
            let (traj, fields) = model.simulate(&ckpt.params, &dataset.signals()[sim], None)?;
            fields
                .into_iter()
                .enumerate()
                .map(|(k, f)| Ok((sim, traj.times[k], k, ckpt.unscale(f)?)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    let mut sq = 0.0;
    let mut count = 0usize;
    for (sim, t, k, u_sim) in per_sim.into_iter().flatten() {
        let u_h = dataset.snapshot(sim, k);
        sq += u_h.iter().zip(&u_sim).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        count += u_h.len();
        match relative_error(u_h, &u_sim) {
            Ok((_, eps_rel)) => entries.push(ErrorEntry {
                sim_id: sim,
                t,
                train: split.is_train_pair(sim, k),
                eps_rel,
            }),
            Err(Error::DegenerateReference(_)) => skipped.push((sim, t)),
            Err(e) => return Err(e),
        }
    }
    let pick = |train: bool| -> Vec<f64> { entries.iter().filter(|e| e.train == train).map(|e| e.eps_rel).collect() };
    let all: Vec<f64> = entries.iter().map(|e| e.eps_rel).collect();
    let u_ref = u_ref.unwrap_or_else(|| default_u_ref(dataset, split));
    if !(u_ref > 0.0) {
        return Err(Error::Validation(format!("NRMSE reference must be positive, got {u_ref}")));
    }
    Ok(EvalReport {
        train: summarize(&pick(true)),
        test: summarize(&pick(false)),
        all: summarize(&all).ok_or_else(|| Error::Validation("every snapshot has a zero reference norm".into()))?,
        nrmse: (sq / count as f64).sqrt() / u_ref,
        u_ref,
        skipped,
        entries,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Qoi {
    /// Range of one latent component over the rollout.
    LatentAmplitude { dim: usize },
    /// Norm of one channel of the final field.
    FinalChannelNorm { channel: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BifurcationReport {
    pub qoi: Qoi,
    /// `(mu, value)` sorted by `mu`.
    pub diagram: Vec<(f64, f64)>,
    pub threshold_fraction: f64,
    pub mu_star: Option<f64>,
}

/// Critical parameter of a diagram that decays to zero with increasing `mu`.
/// The last point above `fraction * max` brackets the onset; the estimate is
/// where the secant through that point and its predecessor reaches zero,
/// capped at the first later point whose value is below `fraction` times the
/// threshold (the last point if none is). Without a rising predecessor the threshold
/// crossing itself is returned. `None` for a flat diagram or when the value
/// never drops below the threshold.
pub fn critical_parameter(diagram: &[(f64, f64)], fraction: f64) -> Option<f64> {
    let max = diagram.iter().map(|p| p.1).fold(0.0, f64::max);
    if !(max > 0.0) {
        return None;
    }
    let thr = fraction * max;
    let i = diagram.iter().rposition(|p| p.1 > thr)?;
    let (m0, a0) = diagram[i];
    let (m1, a1) = *diagram.get(i + 1)?;
    if i > 0 {
        let (mp, ap) = diagram[i - 1];
        if ap > a0 && m0 > mp {
            let zero = m0 + a0 * (m0 - mp) / (ap - a0);
            let cap = diagram[i + 1..].iter().find(|p| p.1 <= fraction * thr).unwrap_or(&diagram[diagram.len() - 1]).0;
            return Some(zero.clamp(m0, cap));
        }
    }
    Some(m0 + (a0 - thr) / (a0 - a1) * (m1 - m0))
}

fn sorted(mut diagram: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    diagram.sort_by(|a, b| a.0.total_cmp(&b.0));
    diagram
}

/// Diagram from latent trajectories keyed by parameter value.
pub fn diagram_from_trajectories(runs: &[(f64, LatentTrajectory)], dim: usize, fraction: f64) -> Result<BifurcationReport> {
    let diagram = runs
        .iter()
        .map(|(mu, tr)| Ok((*mu, amplitude(tr, dim)?)))
        .collect::<Result<Vec<_>>>()?;
    let diagram = sorted(diagram);
    Ok(BifurcationReport {
        qoi: Qoi::LatentAmplitude { dim },
        mu_star: critical_parameter(&diagram, fraction),
        diagram,
        threshold_fraction: fraction,
    })
}

/// Diagram from final fields (node-major, `d_u` channels).
pub fn diagram_from_fields(runs: &[(f64, &[f64])], d_u: usize, channel: usize, fraction: f64) -> Result<BifurcationReport> {
    if channel >= d_u {
        return Err(Error::Validation(format!("channel {channel} out of range (d_u = {d_u})")));
    }
    let diagram = sorted(
        runs.iter()
            .map(|(mu, f)| (*mu, f.iter().skip(channel).step_by(d_u).map(|v| v * v).sum::<f64>().sqrt()))
            .collect(),
    );
    Ok(BifurcationReport {
        qoi: Qoi::FinalChannelNorm { channel },
        mu_star: critical_parameter(&diagram, fraction),
        diagram,
        threshold_fraction: fraction,
    })
}

/// Reference diagram from the dataset, or the model's prediction when a
/// checkpoint is given. `param` selects the signal component used as `mu`.
pub fn bifurcation_diagram(dataset: &SnapshotDataset, trained: Option<(&Checkpoint, &Model)>, qoi: Qoi, param: usize, fraction: f64) -> Result<BifurcationReport> {
    if param >= dataset.d_mu() {
        return Err(Error::Validation(format!("parameter index {param} out of range (d_mu = {})", dataset.d_mu())));
    }
    let last = dataset.num_times() - 1;
    let mus: Vec<f64> = dataset.signals().iter().map(|s| s.value(0)[param]).collect();
    match (qoi, trained) {
        (Qoi::LatentAmplitude { dim }, Some((ckpt, model))) => {
            let runs = dataset
                .signals()
                .par_iter()
                .zip(&mus)
                .map(|(sig, &mu)| Ok((mu, model.rollout(&ckpt.params, sig, &RolloutOptions::default())?)))
                .collect::<Result<Vec<_>>>()?;
            diagram_from_trajectories(&runs, dim, fraction)
        }
        (Qoi::LatentAmplitude { .. }, None) => Err(Error::Config(
            "a latent amplitude diagram needs a trained checkpoint".into(),
        )),
        (Qoi::FinalChannelNorm { channel }, None) => {
            let runs: Vec<(f64, &[f64])> = mus.iter().enumerate().map(|(s, &mu)| (mu, dataset.snapshot(s, last))).collect();
            diagram_from_fields(&runs, dataset.d_u(), channel, fraction)
        }
        (Qoi::FinalChannelNorm { channel }, Some((ckpt, model))) => {
            let fields = dataset
                .signals()
                .par_iter()
                .map(|sig| {
                    let (_, f) = model.simulate(&ckpt.params, sig, None)?;
                    ckpt.unscale(f.into_iter().last().unwrap())
                })
                .collect::<Result<Vec<_>>>()?;
            let runs: Vec<(f64, &[f64])> = mus.iter().zip(&fields).map(|(&m, f)| (m, f.as_slice())).collect();
            diagram_from_fields(&runs, dataset.d_u(), channel, fraction)
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// `sim_id,t,eps_rel`
pub fn write_errors_csv(path: impl AsRef<Path>, entries: &[ErrorEntry]) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "sim_id,t,eps_rel").map_err(io)?;
    for e in entries {
        writeln!(w, "{},{},{}", e.sim_id, e.t, e.eps_rel).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// `mu,qoi`
pub fn write_diagram_csv(path: impl AsRef<Path>, diagram: &[(f64, f64)]) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "mu,qoi").map_err(io)?;
    for (mu, q) in diagram {
        writeln!(w, "{mu},{q}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_diagram_csv(path: impl AsRef<Path>) -> Result<Vec<(f64, f64)>> {
    let path = path.as_ref();
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::format(path, e.to_string()))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::format(path, e.to_string())))
        .collect()
}

/// `sim_id,t,s_i,s_j` with a `# initial condition` marker line before each
/// trajectory's first (t = t_0) row.
pub fn write_phase_portrait_csv(path: impl AsRef<Path>, trajs: &[LatentTrajectory], i: usize, j: usize) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "sim_id,t,s_{},s_{}", i + 1, j + 1).map_err(io)?;
    for tr in trajs {
        if i >= tr.latent_dim || j >= tr.latent_dim {
            return Err(Error::Validation(format!(
                "latent components ({i}, {j}) out of range (n = {})",
                tr.latent_dim
            )));
        }
        for k in 0..tr.len() {
            let s = tr.state(k);
            if k == 0 {
                writeln!(w, "# initial condition: sim_id={} t={}", tr.sim_id, tr.times[0]).map_err(io)?;
            }
            writeln!(w, "{},{},{},{}", tr.sim_id, tr.times[k], s[i], s[j]).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}
