//! Command-line front end. Every command writes its artifacts and its
//! resolved configuration (`config.<command>.toml`) under the run directory
//! given by `--out`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::RunConfig;
use crate::datagen::{generate_benchmark, Benchmark};
use crate::dataset::{load_dataset, split_dataset, store_dataset, SnapshotDataset, SplitSpec};
use crate::dynamics::{write_latent_csv, LatentTrajectory, RolloutOptions};
use crate::error::{Error, Result};
use crate::interp::{check_bound, Method, ProbeSpec, Strategy, ZeroShot};
use crate::metrics::{bifurcation_diagram, evaluate, write_diagram_csv, write_errors_csv, write_phase_portrait_csv, Qoi};
use crate::model::Model;
use crate::selftest::{gradient_check, identity_check};
use crate::training::{train, write_loss_history, Checkpoint, TrainStatus};

pub const QUERY_MAGIC: &[u8; 4] = b"LDGQ";
pub const QUERY_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "graphrom", version, about = "Latent-dynamics graph-convolutional reduced-order models")]
pub struct Cli {
    /// Run configuration (TOML); flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Run directory.
    #[arg(long, global = true, default_value = "run")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve an advection-diffusion benchmark over a parameter grid.
    GenerateData(GenerateArgs),
    /// Fit a model with Adam, then optional L-BFGS.
    Train(TrainArgs),
    /// Relative errors and NRMSE of a checkpoint on a dataset.
    Evaluate(EvalArgs),
    /// Latent trajectories and decoded fields for every simulation.
    Rollout(RolloutArgs),
    /// Zero-shot prediction by latent interpolation, with the error-bound check.
    Interpolate(InterpolateArgs),
    /// Bifurcation diagram and critical parameter estimate.
    DiagnoseBifurcation(DiagnoseArgs),
    /// Gradient checks and the zeroed-convolution identity property.
    Selftest(SelftestArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub benchmark: Option<Benchmark>,
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    /// Parameter values per axis.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Output dataset directory (default `<out>/dataset`).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset directory (default `<out>/dataset`).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub drop_first: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CheckpointArgs {
    /// Checkpoint directory (default `<out>/checkpoint`).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub epochs_adam: Option<usize>,
    #[arg(long)]
    pub epochs_lbfgs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lambda_reg: Option<f64>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub ratio_mu: Option<f64>,
    #[arg(long)]
    pub ratio_t: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub ckpt: CheckpointArgs,
    /// NRMSE normalization (default: largest absolute training value).
    #[arg(long)]
    pub u_ref: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RolloutArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub ckpt: CheckpointArgs,
}

#[derive(Debug, Args)]
pub struct InterpolateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub ckpt: CheckpointArgs,
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long)]
    pub strategy: Option<Strategy>,
    /// CSV rows `t,mu_1,..`.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Predicted fields (default `<out>/fields.f64`).
    #[arg(long)]
    pub fields: Option<PathBuf>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub probe_pairs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Also diagnose a trained model (the reference diagram comes from data).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// `latent_amplitude:DIM` or `final_channel_norm:CHANNEL`.
    #[arg(long, value_parser = parse_qoi)]
    pub qoi: Option<Qoi>,
    #[arg(long)]
    pub param: Option<usize>,
    #[arg(long)]
    pub threshold_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    #[arg(long, default_value_t = 100)]
    pub draws: usize,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
}

pub fn parse_qoi(s: &str) -> std::result::Result<Qoi, String> {
    let (kind, idx) = s.split_once(':').ok_or_else(|| format!("expected KIND:INDEX, got {s:?}"))?;
    let i: usize = idx.parse().map_err(|_| format!("bad index {idx:?}"))?;
    match kind {
        "latent_amplitude" => Ok(Qoi::LatentAmplitude { dim: i }),
        "final_channel_norm" => Ok(Qoi::FinalChannelNorm { channel: i }),
        _ => Err(format!("unknown quantity {kind:?}")),
    }
}

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Divergence { .. } | Error::Numerical(_) => 3,
        Error::Io { .. } | Error::Format { .. } => 4,
        _ => 2,
    }
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenerateData(_) => "generate-data",
            Command::Train(_) => "train",
            Command::Evaluate(_) => "evaluate",
            Command::Rollout(_) => "rollout",
            Command::Interpolate(_) => "interpolate",
            Command::DiagnoseBifurcation(_) => "diagnose-bifurcation",
            Command::Selftest(_) => "selftest",
        }
    }
}

impl Cli {
    /// Config file (or defaults) with command-line overrides applied.
    pub fn resolve_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if self.threads.is_some() {
            cfg.threads = self.threads;
        }
        fn data(cfg: &mut RunConfig, a: &DataArgs) {
            if a.dataset.is_some() {
                cfg.paths.dataset = a.dataset.clone();
            }
            set(&mut cfg.data.drop_first, a.drop_first);
            set(&mut cfg.data.stride, a.stride);
        }
        fn ckpt(cfg: &mut RunConfig, c: &Option<PathBuf>) {
            if c.is_some() {
                cfg.paths.checkpoint = c.clone();
            }
        }
        match &self.command {
            Command::GenerateData(a) => {
                set(&mut cfg.data.benchmark, a.benchmark);
                set(&mut cfg.data.resolution, a.resolution);
                set(&mut cfg.data.dt, a.dt);
                set(&mut cfg.data.grid, a.grid);
                if a.dataset.is_some() {
                    cfg.paths.dataset = a.dataset.clone();
                }
            }
            Command::Train(a) => {
                data(&mut cfg, &a.data);
                ckpt(&mut cfg, &a.checkpoint);
                set(&mut cfg.train.epochs_adam, a.epochs_adam);
                set(&mut cfg.train.epochs_lbfgs, a.epochs_lbfgs);
                set(&mut cfg.train.lr, a.lr);
                set(&mut cfg.train.lambda_reg, a.lambda_reg);
                set(&mut cfg.model.latent_dim, a.latent_dim);
                set(&mut cfg.split.ratio_mu, a.ratio_mu);
                set(&mut cfg.split.ratio_t, a.ratio_t);
            }
            Command::Evaluate(a) => {
                data(&mut cfg, &a.data);
                ckpt(&mut cfg, &a.ckpt.checkpoint);
            }
            Command::Rollout(a) => {
                data(&mut cfg, &a.data);
                ckpt(&mut cfg, &a.ckpt.checkpoint);
            }
            Command::Interpolate(a) => {
                data(&mut cfg, &a.data);
                ckpt(&mut cfg, &a.ckpt.checkpoint);
                set(&mut cfg.interp.method, a.method);
                set(&mut cfg.interp.strategy, a.strategy);
                if a.horizon.is_some() {
                    cfg.interp.horizon = a.horizon;
                }
                if a.queries.is_some() {
                    cfg.paths.queries = a.queries.clone();
                }
                set(&mut cfg.interp.probe_pairs, a.probe_pairs);
            }
            Command::DiagnoseBifurcation(a) => {
                data(&mut cfg, &a.data);
                ckpt(&mut cfg, &a.checkpoint);
                set(&mut cfg.diagnose.qoi, a.qoi);
                set(&mut cfg.diagnose.param, a.param);
                set(&mut cfg.diagnose.threshold_fraction, a.threshold_fraction);
            }
            Command::Selftest(_) => {}
        }
        let cfg = cfg.resolve();
        cfg.validate()?;
        Ok(cfg)
    }
}

fn set<T>(field: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *field = v;
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Parses the global flags and runs the command.
pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = cli.resolve_config()?;
    create_dir(&cli.out)?;
    // pin the inputs so the echoed config reruns from any directory
    let (reads_data, reads_ckpt) = match cli.command {
        Command::GenerateData(_) | Command::Selftest(_) => (false, false),
        Command::Train(_) => (true, false),
        Command::DiagnoseBifurcation(_) => (true, cfg.paths.checkpoint.is_some()),
        _ => (true, true),
    };
    if reads_data {
        cfg.paths.dataset = Some(cfg.dataset_dir(&cli.out));
    }
    if reads_ckpt {
        cfg.paths.checkpoint = Some(cfg.checkpoint_dir(&cli.out));
    }
    let text = cfg.to_toml()?;
    let cfg_path = cli.out.join(format!("config.{}.toml", cli.command.name()));
    fs::write(&cfg_path, text).map_err(|e| Error::io(&cfg_path, e))?;
    match cfg.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("cannot start {n} worker threads: {e}")))?;
            pool.install(|| dispatch(&cli, &cfg))
        }
        None => dispatch(&cli, &cfg),
    }
}

fn dispatch(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    let out = cli.out.as_path();
    match &cli.command {
        Command::GenerateData(_) => generate(cfg, out),
        Command::Train(_) => run_train(cfg, out),
        Command::Evaluate(a) => run_evaluate(cfg, out, a.u_ref),
        Command::Rollout(_) => run_rollout(cfg, out),
        Command::Interpolate(a) => run_interpolate(cfg, out, a.fields.clone()),
        Command::DiagnoseBifurcation(_) => run_diagnose(cfg, out),
        Command::Selftest(a) => run_selftest(cfg, out, a),
    }
}

fn generate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let d = &cfg.data;
    let ds = generate_benchmark(d.benchmark, d.grid, d.resolution, d.dt)?;
    let dir = cfg.dataset_dir(out);
    store_dataset(&ds, &dir)?;
    eprintln!(
        "dataset: {} simulations x {} instants x {} nodes -> {}",
        ds.num_sims(),
        ds.num_times(),
        ds.num_nodes(),
        dir.display()
    );
    Ok(())
}

fn load_data(cfg: &RunConfig, out: &Path) -> Result<SnapshotDataset> {
    let ds = load_dataset(cfg.dataset_dir(out))?;
    if cfg.data.drop_first == 0 && cfg.data.stride == 1 {
        Ok(ds)
    } else {
        ds.trimmed(cfg.data.drop_first, cfg.data.stride)
    }
}

fn load_trained(cfg: &RunConfig, out: &Path, ds: &SnapshotDataset) -> Result<(Checkpoint, Model)> {
    Checkpoint::load(cfg.checkpoint_dir(out), ds.mesh().clone())
}

fn split_of(cfg: &RunConfig, ckpt: &Checkpoint, ds: &SnapshotDataset) -> Result<SplitSpec> {
    match &ckpt.meta.split {
        Some(s) => Ok(s.clone()),
        None => split_dataset(ds, cfg.split.ratio_mu, cfg.split.ratio_t, cfg.seed),
    }
}

fn run_train(cfg: &RunConfig, out: &Path) -> Result<()> {
    let ds = load_data(cfg, out)?;
    let split = split_dataset(&ds, cfg.split.ratio_mu, cfg.split.ratio_t, cfg.seed)?;
    let model = Model::new(cfg.model.build(ds.d_mu(), ds.d_u()), ds.mesh().clone())?;
    let total = cfg.train.epochs_adam + cfg.train.epochs_lbfgs;
    let every = (total / 20).max(1);
    let ckpt = train(&model, &ds, &split, &cfg.train, |r| {
        if r.epoch % every == 0 || r.epoch + 1 == total {
            eprintln!("epoch {:>6} {:?} loss {:.6e}", r.epoch, r.phase, r.loss_total);
        }
    })?;
    let dir = cfg.checkpoint_dir(out);
    ckpt.save(&dir)?;
    write_loss_history(out.join("loss_history.csv"), &ckpt.meta.history)?;
    write_json(&out.join("split.json"), &split)?;
    if let TrainStatus::Diverged { epoch } = ckpt.meta.status {
        return Err(Error::Divergence {
            at: format!("epoch {epoch}"),
            message: format!("training stopped; last finite parameters saved to {}", dir.display()),
        });
    }
    Ok(())
}

fn run_evaluate(cfg: &RunConfig, out: &Path, u_ref: Option<f64>) -> Result<()> {
    let ds = load_data(cfg, out)?;
    let (ckpt, model) = load_trained(cfg, out, &ds)?;
    let split = split_of(cfg, &ckpt, &ds)?;
    let report = evaluate(&ckpt, &model, &ds, &split, u_ref)?;
    write_json(&out.join("eval_report.json"), &report)?;
    write_errors_csv(out.join("errors.csv"), &report.entries)?;
    for (name, agg) in [("train", report.train), ("test", report.test)] {
        if let Some(a) = agg {
            eprintln!("{name}: eps_mean {:.4e} eps_max {:.4e} ({} snapshots)", a.eps_mean, a.eps_max, a.count);
        }
    }
    eprintln!("nrmse {:.4e}", report.nrmse);
    Ok(())
}

fn run_rollout(cfg: &RunConfig, out: &Path) -> Result<()> {
    use rayon::prelude::*;
    let ds = load_data(cfg, out)?;
    let (ckpt, model) = load_trained(cfg, out, &ds)?;
    let runs: Vec<(LatentTrajectory, Vec<Vec<f64>>)> = ds
        .signals()
        .par_iter()
        .map(|sig| {
            let (traj, fields) = model.simulate(&ckpt.params, sig, None)?;
            let fields = fields.into_iter().map(|f| ckpt.unscale(f)).collect::<Result<_>>()?;
            Ok((traj, fields))
        })
        .collect::<Result<_>>()?;
    let trajs: Vec<LatentTrajectory> = runs.iter().map(|r| r.0.clone()).collect();
    write_latent_csv(out.join("latent.csv"), &trajs)?;
    if model.latent_dim() >= 2 {
        write_phase_portrait_csv(out.join("phase_portrait.csv"), &trajs, 0, 1)?;
    }
    let fields: Vec<f64> = runs.into_iter().flat_map(|r| r.1.into_iter().flatten()).collect();
    let predicted = SnapshotDataset::new(ds.mesh().clone(), ds.times().to_vec(), ds.signals().to_vec(), ds.d_u(), fields)?;
    store_dataset(&predicted, out.join("rollout"))
}

/// `t,mu_1,..` rows; a non-numeric first row is a header, `#` starts a comment.
pub fn read_queries(path: &Path, d_mu: usize) -> Result<Vec<(f64, Vec<f64>)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
        let vals: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        let vals = match vals {
            Ok(v) => v,
            Err(_) if i == 0 => continue,
            Err(e) => return Err(Error::format(path, format!("row {}: {e}", i + 1))),
        };
        if vals.len() != 1 + d_mu {
            return Err(Error::format(path, format!("row {}: expected {} values, found {}", i + 1, 1 + d_mu, vals.len())));
        }
        out.push((vals[0], vals[1..].to_vec()));
    }
    Ok(out)
}

/// `LDGQ`, u32 version, u64 query count, u64 field length, then the fields
/// as little-endian f64.
pub fn write_query_fields(path: &Path, field_len: usize, fields: &[Vec<f64>]) -> Result<()> {
    let mut buf = Vec::with_capacity(24 + 8 * field_len * fields.len());
    buf.extend_from_slice(QUERY_MAGIC);
    buf.extend_from_slice(&QUERY_VERSION.to_le_bytes());
    buf.extend_from_slice(&(fields.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(field_len as u64).to_le_bytes());
    for f in fields {
        Error::check_dim("query field", field_len, f.len())?;
        for v in f {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_query_fields(path: &Path) -> Result<(usize, Vec<Vec<f64>>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 24 || &bytes[..4] != QUERY_MAGIC {
        return Err(Error::format(path, "missing LDGQ header"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != QUERY_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let len = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    if bytes.len() != 24 + 8 * n * len {
        return Err(Error::format(path, format!("expected {} bytes, found {}", 24 + 8 * n * len, bytes.len())));
    }
    let vals: Vec<f64> = bytes[24..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((len, vals.chunks(len.max(1)).take(n).map(<[f64]>::to_vec).collect()))
}

#[derive(Debug, Serialize)]
struct QueryOutcome {
    t: f64,
    mu: Vec<f64>,
    /// `None` when the query lies outside the interpolant's domain; its
    /// field is written as NaN.
    error: Option<String>,
}

#[derive(Debug, Serialize)]
struct InterpolationReport {
    method: Method,
    strategy: Strategy,
    horizon: f64,
    table_points: usize,
    queries: Vec<QueryOutcome>,
    bound: crate::interp::BoundReport,
}

fn run_interpolate(cfg: &RunConfig, out: &Path, fields_path: Option<PathBuf>) -> Result<()> {
    let ds = load_data(cfg, out)?;
    let (ckpt, model) = load_trained(cfg, out, &ds)?;
    let split = split_of(cfg, &ckpt, &ds)?;
    let ic = &cfg.interp;
    let mus: Vec<Vec<f64>> = split.train_sim_ids.iter().map(|&s| ds.signals()[s].value(0).to_vec()).collect();
    let times = ds.times();
    let mut horizon = ic.horizon.unwrap_or(*times.last().unwrap());
    let queries = match &cfg.paths.queries {
        Some(p) => read_queries(p, ds.d_mu())?,
        None => Vec::new(),
    };
    if ic.horizon.is_none() {
        horizon = queries.iter().map(|q| q.0).fold(horizon, f64::max);
    }
    let zs = ZeroShot::fit(&model, &ckpt.params, &mus, times, ic.strategy, ic.method, horizon, &ic.gpr)?;

    let mut outcomes = Vec::with_capacity(queries.len());
    let mut fields = Vec::with_capacity(queries.len());
    for (t, mu) in &queries {
        match crate::interp::zero_shot_predict(&ckpt, &model, &zs, *t, mu) {
            Ok(f) => {
                fields.push(f);
                outcomes.push(QueryOutcome { t: *t, mu: mu.clone(), error: None });
            }
            Err(e @ Error::OutOfHull { .. }) => {
                fields.push(vec![f64::NAN; model.field_len()]);
                outcomes.push(QueryOutcome {
                    t: *t,
                    mu: mu.clone(),
                    error: Some(e.to_string()),
                });
            }
            Err(e) => return Err(e),
        }
    }
    if !queries.is_empty() {
        let path = fields_path.unwrap_or_else(|| out.join("fields.f64"));
        write_query_fields(&path, model.field_len(), &fields)?;
    }

    let test_sims = split.test_sim_ids(ds.num_sims());
    let probe = ProbeSpec {
        pairs: ic.probe_pairs,
        seed: cfg.seed,
        ..Default::default()
    };
    let bound = check_bound(&ckpt, &model, &zs, &ds, &test_sims, &probe, ic.slack)?;
    eprintln!(
        "bound check ({}): L = {:.4e} from {} pairs, delta = {:.4e}, triangle {:.1}%, bound {:.1}% of {} queries",
        bound.check,
        bound.lipschitz,
        bound.probe_pairs,
        bound.delta,
        100.0 * bound.triangle_fraction,
        100.0 * bound.bound_fraction,
        bound.entries.len()
    );
    let report = InterpolationReport {
        method: ic.method,
        strategy: ic.strategy,
        horizon,
        table_points: zs.table.samples().0.len(),
        queries: outcomes,
        bound,
    };
    write_json(&out.join("interpolation_report.json"), &report)
}

#[derive(Debug, Serialize)]
struct DiagnoseReport {
    reference: Option<crate::metrics::BifurcationReport>,
    model: Option<crate::metrics::BifurcationReport>,
}

fn run_diagnose(cfg: &RunConfig, out: &Path) -> Result<()> {
    let ds = load_data(cfg, out)?;
    let dc = &cfg.diagnose;
    let reference = match dc.qoi {
        Qoi::FinalChannelNorm { .. } => Some(bifurcation_diagram(&ds, None, dc.qoi, dc.param, dc.threshold_fraction)?),
        Qoi::LatentAmplitude { .. } => None,
    };
    let trained = match &cfg.paths.checkpoint {
        Some(_) => Some(load_trained(cfg, out, &ds)?),
        None if cfg.checkpoint_dir(out).join("model.json").exists() => Some(load_trained(cfg, out, &ds)?),
        None => None,
    };
    if reference.is_none() && trained.is_none() {
        return Err(Error::Config("a latent amplitude diagram needs a checkpoint".into()));
    }
    let model_report = match &trained {
        Some((ckpt, model)) => {
            let r = bifurcation_diagram(&ds, Some((ckpt, model)), dc.qoi, dc.param, dc.threshold_fraction)?;
            if model.latent_dim() >= 2 {
                let trajs = ds
                    .signals()
                    .iter()
                    .map(|s| model.rollout(&ckpt.params, s, &RolloutOptions::default()))
                    .collect::<Result<Vec<_>>>()?;
                write_phase_portrait_csv(out.join("phase_portrait.csv"), &trajs, 0, 1)?;
            }
            write_diagram_csv(out.join("diagram_model.csv"), &r.diagram)?;
            Some(r)
        }
        None => None,
    };
    if let Some(r) = &reference {
        write_diagram_csv(out.join("diagram_reference.csv"), &r.diagram)?;
    }
    for (name, r) in [("reference", &reference), ("model", &model_report)] {
        if let Some(r) = r {
            match r.mu_star {
                Some(m) => eprintln!("{name}: mu* = {m:.6}"),
                None => eprintln!("{name}: no critical parameter found"),
            }
        }
    }
    write_json(
        &out.join("bifurcation.json"),
        &DiagnoseReport {
            reference,
            model: model_report,
        },
    )
}

#[derive(Debug, Serialize)]
struct SelftestReport {
    gradient: crate::selftest::GradientCheck,
    gradient_passed: bool,
    identity: crate::selftest::IdentityCheck,
    identity_passed: bool,
}

pub const IDENTITY_TOL: f64 = 1e-14;

fn run_selftest(cfg: &RunConfig, out: &Path, a: &SelftestArgs) -> Result<()> {
    let gradient = gradient_check(a.draws, cfg.seed)?;
    let identity = identity_check(a.trials, cfg.seed)?;
    let report = SelftestReport {
        gradient_passed: gradient.passed(),
        identity_passed: identity.passed(IDENTITY_TOL),
        gradient,
        identity,
    };
    eprintln!(
        "gradient check: {} ({} draws, {} components, worst relative error {:.3e})",
        if report.gradient_passed { "pass" } else { "FAIL" },
        report.gradient.draws,
        report.gradient.components,
        report.gradient.worst_relative
    );
    eprintln!(
        "identity property: {} ({} trials, max relative deviation {:.3e})",
        if report.identity_passed { "pass" } else { "FAIL" },
        report.identity.trials,
        report.identity.max_relative
    );
    write_json(&out.join("selftest.json"), &report)?;
    if report.gradient_passed && report.identity_passed {
        Ok(())
    } else {
        Err(Error::Numerical("self-test failed".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("graphrom").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "seed = 3\n[train]\nepochs_adam = 10\nlr = 0.5\n").unwrap();
        let cli = parse(&["train", "--config", path.to_str().unwrap(), "--seed", "8", "--epochs-adam", "20"]);
        let cfg = cli.resolve_config().unwrap();
        assert_eq!(cfg.seed, 8);
        assert_eq!(cfg.train.seed, 8);
        assert_eq!(cfg.train.epochs_adam, 20);
        assert_eq!(cfg.train.lr, 0.5);
    }

    #[test]
    fn invalid_override_names_the_field() {
        let cli = parse(&["train", "--ratio-t", "2"]);
        let err = cli.resolve_config().unwrap_err();
        assert_eq!(exit_code(&err), 2);
        assert!(err.to_string().contains("split.ratio_t"));
    }

    #[test]
    fn qoi_flag_parses() {
        assert_eq!(parse_qoi("latent_amplitude:1").unwrap(), Qoi::LatentAmplitude { dim: 1 });
        assert_eq!(parse_qoi("final_channel_norm:0").unwrap(), Qoi::FinalChannelNorm { channel: 0 });
        assert!(parse_qoi("amplitude").is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::MeshHash { expected: "a".into(), actual: "b".into() }), 2);
        assert_eq!(exit_code(&Error::Numerical("x".into())), 3);
        assert_eq!(exit_code(&Error::Divergence { at: "step 1".into(), message: "x".into() }), 3);
        assert_eq!(exit_code(&Error::format("p", "x")), 4);
    }

    #[test]
    fn query_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let q = dir.path().join("q.csv");
        fs::write(&q, "t,mu_1,mu_2\n# comment\n0.5, 0.1, -0.2\n1.0,0.3,0.4\n").unwrap();
        let rows = read_queries(&q, 2).unwrap();
        assert_eq!(rows, vec![(0.5, vec![0.1, -0.2]), (1.0, vec![0.3, 0.4])]);
        assert!(read_queries(&q, 1).is_err());

        let f = dir.path().join("f.f64");
        let fields = vec![vec![1.0, 2.0, 3.0], vec![f64::NAN, -0.0, 1e300]];
        write_query_fields(&f, 3, &fields).unwrap();
        let (len, back) = read_query_fields(&f).unwrap();
        assert_eq!(len, 3);
        assert_eq!(back.len(), 2);
        assert_eq!(back[0], fields[0]);
        assert!(back[1][0].is_nan());
        assert_eq!(back[1][1..], fields[1][1..]);
    }
}
