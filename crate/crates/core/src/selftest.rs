//! Built-in property checks: reverse-mode gradients against central finite
//! differences, and the zeroed-convolution identity construction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::SignalTable;
use crate::decoder::ConvKind;
use crate::diff::{finite_diff_grad, Activation};
use crate::error::Result;
use crate::mesh::unit_square_grid;
use crate::model::{Model, ModelConfig};
use crate::training::{full_batch_loss, LossKind, TrainConfig, TrainTrajectory};

pub const GRAD_REL_TOL: f64 = 1e-5;
pub const GRAD_ABS_FLOOR: f64 = 1e-8;
pub const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct GradientCheck {
    pub draws: usize,
    pub components: usize,
    pub failures: usize,
    /// Largest `|g - g_fd| / (rel_tol * max(|g|, |g_fd|) + abs_floor)`; a
    /// component passes when this is at most 1.
    pub worst_ratio: f64,
    /// Largest `|g - g_fd| / max(|g|, |g_fd|)` over components above the floor.
    pub worst_relative: f64,
}

impl GradientCheck {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// 9-node mesh, latent size 2, snapshot spacing of two Euler substeps.
pub fn toy_model(conv_kind: ConvKind, d_u: usize) -> Result<Model> {
    let mesh = unit_square_grid(3)?;
    let mut cfg = ModelConfig::reference(2, 1, d_u, 0.05);
    cfg.dynamics.hidden = vec![6, 6];
    cfg.decoder.fc_hidden = vec![8];
    cfg.decoder.conv_kind = conv_kind;
    Model::new(cfg, mesh)
}

fn toy_data(model: &Model, rng: &mut ChaCha8Rng) -> Result<Vec<TrainTrajectory>> {
    (0..2)
        .map(|sim| {
            let mu: f64 = rng.gen_range(0.1..1.0);
            let times = vec![0.0, 0.1, 0.2];
            let targets = (0..times.len())
                .map(|_| (0..model.field_len()).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            Ok(TrainTrajectory {
                signal: SignalTable::constant(sim, times, &[mu])?,
                targets,
            })
        })
        .collect()
}

/// Compares the full-batch loss gradient with central differences for
/// `draws` random parameter vectors and datasets. Draws alternate between
/// convolution kinds and loss kinds. Direction matching runs on two-channel
/// fields: with one channel it degenerates into a sign function smoothed over
/// `direction_eps`, whose curvature defeats the finite-difference oracle.
pub fn gradient_check(draws: usize, seed: u64) -> Result<GradientCheck> {
    let models = [
        toy_model(ConvKind::MeanAggregation, 1)?,
        toy_model(ConvKind::GaussianMixture, 1)?,
        toy_model(ConvKind::MeanAggregation, 2)?,
        toy_model(ConvKind::GaussianMixture, 2)?,
    ];
    let per_draw = (0..draws)
        .into_par_iter()
        .map(|d| -> Result<(usize, usize, f64, f64)> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(d as u64));
            let model = &models[d % 4];
            let cfg = TrainConfig {
                lambda_reg: 1e-3,
                loss_kind: if model.d_u() == 1 { LossKind::Mse } else { LossKind::MsePlusDirection },
                ..Default::default()
            };
            let data = toy_data(model, &mut rng)?;
            // |w| is not differentiable at 0, keep every weight clear of the kink
            let params: Vec<f64> = model
                .initialize(rng.gen())
                .into_iter()
                .map(|v| {
                    if v.abs() < 1e-3 {
                        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                        sign * rng.gen_range(1e-3..1e-2)
                    } else {
                        v
                    }
                })
                .collect();
            let (_, grad) = full_batch_loss(model, &params, &data, &cfg)?;
            let fd = finite_diff_grad(|p| full_batch_loss(model, p, &data, &cfg).map(|r| r.0.total).unwrap_or(f64::NAN), &params, FD_STEP);
            let (mut failures, mut worst_ratio, mut worst_rel) = (0, 0.0f64, 0.0f64);
            for (a, b) in grad.iter().zip(&fd) {
                let scale = a.abs().max(b.abs());
                let diff = (a - b).abs();
                let ratio = diff / (GRAD_REL_TOL * scale + GRAD_ABS_FLOOR);
                if !(ratio <= 1.0) {
                    failures += 1;
                }
                worst_ratio = worst_ratio.max(if ratio.is_nan() { f64::INFINITY } else { ratio });
                if scale > GRAD_ABS_FLOOR {
                    worst_rel = worst_rel.max(diff / scale);
                }
            }
            Ok((grad.len(), failures, worst_ratio, worst_rel))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = GradientCheck {
        draws,
        components: 0,
        failures: 0,
        worst_ratio: 0.0,
        worst_relative: 0.0,
    };
    for (n, f, r, q) in per_draw {
        report.components += n;
        report.failures += f;
        report.worst_ratio = report.worst_ratio.max(r);
        report.worst_relative = report.worst_relative.max(q);
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentityCheck {
    pub trials: usize,
    /// Largest relative deviation of the convolution stage output from its
    /// input, and of the decoded field from the readout of the FC output.
    pub max_relative: f64,
}

impl IdentityCheck {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_relative <= tol
    }
}

fn rel_dev(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if num == 0.0 {
        0.0
    } else {
        num / den.max(f64::MIN_POSITIVE)
    }
}

/// With every convolution weight and bias zeroed and the identity activation
/// in the convolution stage, the residual stack is the identity map.
pub fn identity_check(trials: usize, seed: u64) -> Result<IdentityCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let kind = if trial % 2 == 0 { ConvKind::MeanAggregation } else { ConvKind::GaussianMixture };
        let mesh = unit_square_grid(rng.gen_range(3..7))?;
        let mut cfg = ModelConfig::reference(3, 2, 2, 0.01);
        cfg.dynamics.hidden = vec![4];
        cfg.decoder.fc_hidden = vec![16];
        cfg.decoder.n_conv = rng.gen_range(1..4);
        cfg.decoder.conv_kind = kind;
        cfg.decoder.conv_activation = Activation::Identity;
        let model = Model::new(cfg, mesh)?;
        let mut params = model.initialize(rng.gen());
        for b in model.layout().blocks().iter().filter(|b| b.name.starts_with("dec.conv")) {
            // kernel means and precisions only shape the weights, which are zero
            if !(b.name.ends_with(".mu") || b.name.ends_with(".log_prec")) {
                params[b.offset..b.offset + b.len].iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let t: f64 = rng.gen_range(0.0..2.0);
        let s: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let mu: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let mut tape = model.tape(&params);
        let sv = tape.leaf(s.clone());
        let fc = model.decoder().record_fc(&mut tape, t, sv, &mu);
        let conv = model.decoder().record_conv_stack(&mut tape, fc);
        worst = worst.max(rel_dev(tape.value(conv), tape.value(fc)));
        let fc_out = tape.value(fc).to_vec();
        let h = tape.leaf(fc_out);
        let readout = model.decoder().record_readout(&mut tape, h);
        let expected = tape.value(readout).to_vec();

        let decoded = model.decode(&params, t, &s, &mu)?;
        worst = worst.max(rel_dev(&decoded, &expected));
    }
    Ok(IdentityCheck {
        trials,
        max_relative: worst,
    })
}
