//! Full-batch training: every epoch rolls out each training trajectory from
//! `s = 0`, decodes at every training snapshot and accumulates the loss
//! before one optimizer step.

mod checkpoint;
mod optim;

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CheckpointMeta, CHECKPOINT_VERSION};
pub use optim::{Adam, Lbfgs, LbfgsOutcome};

use crate::dataset::{compute_scaling, ScalingParams, SignalTable, SnapshotDataset, SplitSpec};
use crate::diff::{add_l1_subgradient, direction_penalty, l1_norm, mse, Var};
use crate::dynamics::{integrate, Visit};
use crate::error::{Error, Result};
use crate::model::Model;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    MsePlusDirection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_reg: f64,
    pub lr: f64,
    pub epochs_adam: usize,
    pub epochs_lbfgs: usize,
    pub lbfgs_memory: usize,
    pub loss_kind: LossKind,
    pub direction_eps: f64,
    pub direction_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_reg: 1e-5,
            lr: 1e-3,
            epochs_adam: 1000,
            epochs_lbfgs: 0,
            lbfgs_memory: 10,
            loss_kind: LossKind::Mse,
            direction_eps: 1e-4,
            direction_weight: 1e-1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_reg >= 0.0) {
            return Err(Error::Config(format!("train.lambda_reg = {} must be >= 0", self.lambda_reg)));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("train.lr = {} must be positive", self.lr)));
        }
        if self.epochs_lbfgs > 0 && self.lbfgs_memory == 0 {
            return Err(Error::Config("train.lbfgs_memory must be positive".into()));
        }
        if !(self.direction_eps > 0.0) {
            return Err(Error::Config("train.direction_eps must be positive".into()));
        }
        Ok(())
    }
}

/// Loss of one snapshot: `MSE + lambda * |w|_1` (plus `delta * L_eps`).
pub fn snapshot_loss(u_h: &[f64], u_sim: &[f64], d_u: usize, params: &[f64], cfg: &TrainConfig) -> Result<f64> {
    Error::check_dim("snapshot", u_h.len(), u_sim.len())?;
    let mut err = mse(u_sim, u_h);
    if cfg.loss_kind == LossKind::MsePlusDirection {
        err += cfg.direction_weight * direction_penalty(u_sim, u_h, d_u, cfg.direction_eps);
    }
    Ok(err + cfg.lambda_reg * l1_norm(params))
}

/// A training trajectory with scaled targets for its first snapshots.
#[derive(Debug, Clone)]
pub struct TrainTrajectory {
    pub signal: SignalTable,
    pub targets: Vec<Vec<f64>>,
}

/// Scaled training targets for `split`.
pub fn training_set(dataset: &SnapshotDataset, split: &SplitSpec, scaling: &ScalingParams) -> Result<Vec<TrainTrajectory>> {
    split.validate(dataset)?;
    split
        .train_sim_ids
        .iter()
        .map(|&sim| {
            let targets = (0..split.train_time_cutoff)
                .map(|k| scaling.apply(dataset.snapshot(sim, k)))
                .collect::<Result<_>>()?;
            Ok(TrainTrajectory {
                signal: dataset.signals()[sim].clone(),
                targets,
            })
        })
        .collect()
}

/// Data-fit part of the loss for one trajectory and its gradient.
pub fn trajectory_loss(model: &Model, params: &[f64], traj: &TrainTrajectory, cfg: &TrainConfig) -> Result<(f64, Vec<f64>)> {
    let d_u = model.d_u();
    let decoder = model.decoder();
    let mut tape = model.tape(params);
    let s0 = tape.leaf(vec![0.0; model.latent_dim()]);
    let mut terms: Vec<Var> = Vec::with_capacity(traj.targets.len());
    integrate(
        &mut tape,
        model.dynamics(),
        &traj.signal,
        traj.targets.len(),
        model.config.dt,
        s0,
        |tape, visit, s| {
            if let Visit::Snapshot(k) = visit {
                let t = traj.signal.times()[k];
                let y = decoder.record(tape, t, s, traj.signal.value(k));
                let mut l = tape.mse(y, traj.targets[k].clone());
                if cfg.loss_kind == LossKind::MsePlusDirection {
                    let d = tape.direction(y, traj.targets[k].clone(), d_u, cfg.direction_eps);
                    l = tape.axpy(l, cfg.direction_weight, d);
                }
                terms.push(l);
            }
            Ok(())
        },
    )?;
    let total = tape.sum_scalars(&terms);
    let value = tape.scalar(total);
    if !value.is_finite() {
        return Err(Error::Divergence {
            at: format!("trajectory {}", traj.signal.sim_id),
            message: "non-finite loss".into(),
        });
    }
    Ok((value, tape.backward(total)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub err: f64,
    pub reg: f64,
}

/// `L_tot` summed over all trajectories and snapshots, with the
/// regularization term counted once per snapshot term; the per-trajectory
/// gradients are reduced in trajectory order.
pub fn full_batch_loss(model: &Model, params: &[f64], data: &[TrainTrajectory], cfg: &TrainConfig) -> Result<(LossParts, Vec<f64>)> {
    let parts: Vec<Result<(f64, Vec<f64>)>> = data.par_iter().map(|tr| trajectory_loss(model, params, tr, cfg)).collect();
    let mut err = 0.0;
    let mut grad = vec![0.0; params.len()];
    for part in parts {
        let (e, g) = part?;
        err += e;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    let count: usize = data.iter().map(|t| t.targets.len()).sum();
    let scale = count as f64 * cfg.lambda_reg;
    let reg = scale * l1_norm(params);
    if scale > 0.0 {
        add_l1_subgradient(params, scale, &mut grad);
    }
    Ok((LossParts { total: err + reg, err, reg }, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Adam,
    Lbfgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub loss_total: f64,
    pub loss_err: f64,
    pub loss_reg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TrainStatus {
    Completed,
    Diverged { epoch: usize },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: Vec<f64>,
    pub history: Vec<LossRecord>,
    pub status: TrainStatus,
}

fn is_divergence(e: &Error) -> bool {
    matches!(e, Error::Divergence { .. })
}

/// Runs the Adam phase then the L-BFGS phase from `params`. `progress` is
/// called after every epoch.
pub fn train_from(
    model: &Model,
    mut params: Vec<f64>,
    data: &[TrainTrajectory],
    cfg: &TrainConfig,
    mut progress: impl FnMut(&LossRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    Error::check_dim("parameter vector", model.num_params(), params.len())?;
    if data.is_empty() {
        return Err(Error::Config("no training trajectories".into()));
    }
    let mut history = Vec::with_capacity(cfg.epochs_adam + cfg.epochs_lbfgs);
    let mut adam = Adam::new(params.len(), cfg.lr);
    for epoch in 0..cfg.epochs_adam {
        let (loss, grad) = match full_batch_loss(model, &params, data, cfg) {
            Ok(r) if r.0.total.is_finite() => r,
            Ok(_) => return Ok(diverged(params, history, epoch)),
            Err(e) if is_divergence(&e) => return Ok(diverged(params, history, epoch)),
            Err(e) => return Err(e),
        };
        let record = LossRecord {
            epoch,
            phase: Phase::Adam,
            loss_total: loss.total,
            loss_err: loss.err,
            loss_reg: loss.reg,
        };
        progress(&record);
        history.push(record);
        let before = params.clone();
        adam.step(&mut params, &grad);
        if params.iter().any(|v| !v.is_finite()) {
            return Ok(diverged(before, history, epoch));
        }
    }
    let mut lbfgs = Lbfgs::new(cfg.lbfgs_memory);
    let reg_scale = data.iter().map(|t| t.targets.len()).sum::<usize>() as f64 * cfg.lambda_reg;
    for i in 0..cfg.epochs_lbfgs {
        let epoch = cfg.epochs_adam + i;
        let mut f = |p: &[f64]| -> Result<(f64, Vec<f64>)> {
            let (l, g) = full_batch_loss(model, p, data, cfg)?;
            Ok((l.total, g))
        };
        let total = match lbfgs.step(&mut params, &mut f) {
            Ok(LbfgsOutcome::Accepted { loss, .. } | LbfgsOutcome::Stationary { loss } | LbfgsOutcome::Skipped { loss }) => loss,
            Err(e) if is_divergence(&e) => return Ok(diverged(params, history, epoch)),
            Err(e) => return Err(e),
        };
        let reg = reg_scale * l1_norm(&params);
        let l = LossParts { total, err: total - reg, reg };
        let record = LossRecord {
            epoch,
            phase: Phase::Lbfgs,
            loss_total: l.total,
            loss_err: l.err,
            loss_reg: l.reg,
        };
        progress(&record);
        history.push(record);
    }
    Ok(TrainOutcome {
        params,
        history,
        status: TrainStatus::Completed,
    })
}

fn diverged(params: Vec<f64>, history: Vec<LossRecord>, epoch: usize) -> TrainOutcome {
    TrainOutcome {
        params,
        history,
        status: TrainStatus::Diverged { epoch },
    }
}

/// Scales the dataset on the training split, initializes from `cfg.seed` and
/// trains; the returned checkpoint carries configs, scaling and history.
pub fn train(model: &Model, dataset: &SnapshotDataset, split: &SplitSpec, cfg: &TrainConfig, progress: impl FnMut(&LossRecord)) -> Result<Checkpoint> {
    if dataset.mesh().content_hash() != model.mesh().content_hash() {
        return Err(Error::MeshHash {
            expected: model.mesh().content_hash(),
            actual: dataset.mesh().content_hash(),
        });
    }
    Error::check_dim("dataset channels", model.d_u(), dataset.d_u())?;
    Error::check_dim("signal dimension", model.d_mu(), dataset.d_mu())?;
    let scaling = compute_scaling(dataset, split)?;
    let data = training_set(dataset, split, &scaling)?;
    let outcome = train_from(model, model.initialize(cfg.seed), &data, cfg, progress)?;
    let mut ckpt = Checkpoint::new(model, outcome.params, scaling)?;
    ckpt.meta.train = Some(cfg.clone());
    ckpt.meta.split = Some(split.clone());
    ckpt.meta.epoch = outcome.history.len();
    ckpt.meta.status = outcome.status;
    ckpt.meta.history = outcome.history;
    Ok(ckpt)
}

/// CSV `epoch,loss_total,loss_err,loss_reg`.
pub fn write_loss_history(path: impl AsRef<Path>, history: &[LossRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("epoch,loss_total,loss_err,loss_reg\n");
    for r in history {
        out.push_str(&format!("{},{},{},{}\n", r.epoch, r.loss_total, r.loss_err, r.loss_reg));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::finite_diff_grad;
    use crate::mesh::unit_square_grid;
    use crate::model::ModelConfig;

    pub(crate) fn toy_model(n: usize, dt: f64) -> Model {
        let mesh = unit_square_grid(3).unwrap();
        let mut cfg = ModelConfig::reference(n, 1, 1, dt);
        cfg.dynamics.hidden = vec![6, 6];
        cfg.decoder.fc_hidden = vec![8];
        Model::new(cfg, mesh).unwrap()
    }

    fn toy_data(model: &Model, n_snap: usize) -> Vec<TrainTrajectory> {
        (0..2)
            .map(|sim| {
                let mu = 0.3 + 0.4 * sim as f64;
                let times: Vec<f64> = (0..n_snap).map(|k| k as f64 * 0.1).collect();
                let targets = times
                    .iter()
                    .map(|t| {
                        (0..9)
                            .map(|u| {
                                let x = model.mesh().node(u);
                                (mu * t * 3.0).sin() * (x[0] - 0.5) + t * x[1]
                            })
                            .collect()
                    })
                    .collect();
                TrainTrajectory {
                    signal: SignalTable::constant(sim, times, &[mu]).unwrap(),
                    targets,
                }
            })
            .collect()
    }

    #[test]
    fn snapshot_loss_values() {
        let cfg = TrainConfig {
            lambda_reg: 0.0,
            ..Default::default()
        };
        assert_eq!(snapshot_loss(&[1.0, 2.0], &[1.0, 2.0], 1, &[3.0], &cfg).unwrap(), 0.0);
        let cfg = TrainConfig::default();
        let w = [1.0, -4.0, 5.0];
        let l = snapshot_loss(&[1.0, 2.0], &[1.0, 2.0], 1, &w, &cfg).unwrap();
        assert!((l - 1e-4).abs() < 1e-18);
        let l = snapshot_loss(&[1.0, 2.0, 0.0], &[0.5, 2.5, 1.0], 1, &w, &cfg).unwrap();
        assert!((l - ((0.25 + 0.25 + 1.0) / 3.0 + 1e-4)).abs() < 1e-15);
    }

    #[test]
    fn direction_loss_of_identical_unit_fields() {
        let cfg = TrainConfig {
            lambda_reg: 0.0,
            loss_kind: LossKind::MsePlusDirection,
            direction_weight: 1.0,
            ..Default::default()
        };
        let u = [0.6, 0.8, 1.0, 0.0];
        let l = snapshot_loss(&u, &u, 2, &[], &cfg).unwrap();
        let expect = 1.0 - 1.0 / (1.0f64 + 1e-4).powi(2);
        assert!((l - expect).abs() < 1e-15);
        assert!((l - 2e-4).abs() < 1e-7);
    }

    #[test]
    fn full_batch_gradient_matches_finite_differences() {
        let model = toy_model(2, 0.05);
        let data = toy_data(&model, 3);
        for kind in [LossKind::Mse, LossKind::MsePlusDirection] {
            let cfg = TrainConfig {
                lambda_reg: 1e-3,
                loss_kind: kind,
                ..Default::default()
            };
            // keep weights away from the L1 kink
            let params: Vec<f64> = model.initialize(3).iter().enumerate().map(|(i, v)| if v.abs() < 1e-4 { 0.01 + i as f64 * 1e-6 } else { *v }).collect();
            let (_, g) = full_batch_loss(&model, &params, &data, &cfg).unwrap();
            let fd = finite_diff_grad(|p| full_batch_loss(&model, p, &data, &cfg).unwrap().0.total, &params, 1e-6);
            for (i, (a, b)) in g.iter().zip(&fd).enumerate() {
                assert!((a - b).abs() <= 1e-5 * a.abs().max(b.abs()) + 1e-8, "{kind:?} {i}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn fixed_point_dataset_has_zero_loss_and_no_update() {
        let model = toy_model(2, 0.05);
        let mut params = model.initialize(4);
        for name in ["dyn.W2", "dyn.b2"] {
            let b = model.layout().block(name).unwrap().clone();
            params[b.offset..b.offset + b.len].iter_mut().for_each(|v| *v = 0.0);
        }
        let sig = SignalTable::constant(0, vec![0.0, 0.1, 0.2], &[0.5]).unwrap();
        let targets = (0..3)
            .map(|k| model.decode(&params, sig.times()[k], &[0.0, 0.0], &[0.5]).unwrap())
            .collect();
        let data = vec![TrainTrajectory { signal: sig, targets }];
        let cfg = TrainConfig {
            lambda_reg: 0.0,
            epochs_adam: 5,
            ..Default::default()
        };
        let out = train_from(&model, params.clone(), &data, &cfg, |_| {}).unwrap();
        assert_eq!(out.history[0].loss_total, 0.0);
        assert_eq!(out.params, params);
    }

    #[test]
    fn toy_training_reduces_loss_a_hundredfold() {
        let model = toy_model(2, 0.05);
        let data = toy_data(&model, 5);
        let cfg = TrainConfig {
            lambda_reg: 0.0,
            lr: 1e-2,
            epochs_adam: 500,
            ..Default::default()
        };
        let out = train_from(&model, model.initialize(0), &data, &cfg, |_| {}).unwrap();
        let first = out.history[0].loss_total;
        let last = out.history.last().unwrap().loss_total;
        assert!(last * 100.0 <= first, "{first} -> {last}");
    }

    #[test]
    fn lbfgs_phase_does_not_increase_loss() {
        let model = toy_model(2, 0.05);
        let data = toy_data(&model, 4);
        let cfg = TrainConfig {
            epochs_adam: 20,
            epochs_lbfgs: 10,
            lr: 1e-2,
            ..Default::default()
        };
        let out = train_from(&model, model.initialize(1), &data, &cfg, |_| {}).unwrap();
        let lb: Vec<f64> = out.history.iter().filter(|r| r.phase == Phase::Lbfgs).map(|r| r.loss_total).collect();
        assert_eq!(lb.len(), 10);
        for w in lb.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn pure_regularization_shrinks_l1_norm() {
        let model = toy_model(2, 0.05);
        let mut params = model.initialize(2);
        // zero the readout so the data term is constant in all other weights
        let sig = SignalTable::constant(0, vec![0.0, 0.1], &[0.5]).unwrap();
        for name in ["dec.readout.W", "dec.readout.b"] {
            let b = model.layout().block(name).unwrap().clone();
            params[b.offset..b.offset + b.len].iter_mut().for_each(|v| *v = 0.0);
        }
        let data = vec![TrainTrajectory {
            signal: sig,
            targets: vec![vec![0.0; 9]; 2],
        }];
        let cfg = TrainConfig {
            lambda_reg: 1e-2,
            ..Default::default()
        };
        let mut adam = Adam::new(params.len(), cfg.lr);
        let mut prev = l1_norm(&params);
        for _ in 0..20 {
            let (_, g) = full_batch_loss(&model, &params, &data, &cfg).unwrap();
            adam.step(&mut params, &g);
            let now = l1_norm(&params);
            assert!(now <= prev);
            prev = now;
        }
    }

    #[test]
    fn divergence_keeps_last_finite_parameters() {
        let model = toy_model(2, 0.05);
        let data = toy_data(&model, 3);
        let cfg = TrainConfig {
            lr: 1e6,
            epochs_adam: 50,
            ..Default::default()
        };
        let out = train_from(&model, model.initialize(0), &data, &cfg, |_| {}).unwrap();
        if let TrainStatus::Diverged { epoch } = out.status {
            assert!(out.params.iter().all(|v| v.is_finite()));
            assert_eq!(out.history.len(), epoch);
        }
    }

    #[test]
    fn training_is_deterministic_across_thread_counts() {
        let model = toy_model(2, 0.05);
        let data = toy_data(&model, 4);
        let cfg = TrainConfig {
            epochs_adam: 10,
            ..Default::default()
        };
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| train_from(&model, model.initialize(5), &data, &cfg, |_| {}).unwrap().params)
        };
        let a = run(1);
        assert_eq!(a, run(4));
        assert_eq!(a, run(1));
    }
}
