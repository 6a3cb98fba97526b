//! Declarative run configuration (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::Benchmark;
use crate::decoder::{ConvKind, DecoderConfig};
use crate::diff::Activation;
use crate::dynamics::DynNetConfig;
use crate::error::{Error, Result};
use crate::interp::{GprOptions, Method, Strategy};
use crate::metrics::Qoi;
use crate::model::ModelConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Defaults to `<out>/dataset`.
    pub dataset: Option<PathBuf>,
    /// Defaults to `<out>/checkpoint`.
    pub checkpoint: Option<PathBuf>,
    /// CSV of `t,mu_1,..` rows for `interpolate`.
    pub queries: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub benchmark: Benchmark,
    pub resolution: usize,
    pub dt: f64,
    /// Parameter values per axis.
    pub grid: usize,
    /// Instants removed from the start of every loaded trajectory.
    pub drop_first: usize,
    /// Keep every `stride`-th remaining instant.
    pub stride: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            benchmark: Benchmark::Sa,
            resolution: 15,
            dt: 2e-2,
            grid: 3,
            drop_first: 0,
            stride: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub ratio_mu: f64,
    pub ratio_t: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            ratio_mu: 0.75,
            ratio_t: 0.75,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub latent_dim: usize,
    /// Latent Euler step.
    pub dt: f64,
    pub dyn_hidden: Vec<usize>,
    pub dyn_include_t: bool,
    pub dyn_include_mu: bool,
    pub fc_hidden: Vec<usize>,
    pub dec_include_t: bool,
    pub dec_include_mu: bool,
    pub n_hc: usize,
    pub n_conv: usize,
    pub conv_kind: ConvKind,
    pub n_kernels: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            latent_dim: 3,
            dt: 1e-2,
            dyn_hidden: vec![50, 80, 100, 80, 50],
            dyn_include_t: true,
            dyn_include_mu: true,
            fc_hidden: vec![200],
            dec_include_t: true,
            dec_include_mu: true,
            n_hc: 2,
            n_conv: 2,
            conv_kind: ConvKind::MeanAggregation,
            n_kernels: 4,
        }
    }
}

impl ModelSection {
    pub fn build(&self, d_mu: usize, d_u: usize) -> ModelConfig {
        ModelConfig {
            dynamics: DynNetConfig {
                latent_dim: self.latent_dim,
                d_mu,
                include_t: self.dyn_include_t,
                include_mu: self.dyn_include_mu,
                hidden: self.dyn_hidden.clone(),
                activation: Activation::Tanh,
            },
            decoder: DecoderConfig {
                latent_dim: self.latent_dim,
                d_mu,
                include_t: self.dec_include_t,
                include_mu: self.dec_include_mu,
                fc_hidden: self.fc_hidden.clone(),
                fc_activation: Activation::Elu,
                n_hc: self.n_hc,
                n_conv: self.n_conv,
                conv_kind: self.conv_kind,
                n_kernels: self.n_kernels,
                conv_activation: Activation::Elu,
                d_u,
            },
            dt: self.dt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterpConfig {
    pub method: Method,
    pub strategy: Strategy,
    /// Query horizon for integrate-then-interpolate; defaults to the last
    /// dataset time.
    pub horizon: Option<f64>,
    pub gpr: GprOptions,
    pub probe_pairs: usize,
    pub slack: f64,
}

impl Default for InterpConfig {
    fn default() -> Self {
        InterpConfig {
            method: Method::Gpr,
            strategy: Strategy::IntegrateThenInterpolate,
            horizon: None,
            gpr: GprOptions::default(),
            probe_pairs: 10_000,
            slack: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseConfig {
    pub qoi: Qoi,
    /// Signal component used as the bifurcation parameter.
    pub param: usize,
    pub threshold_fraction: f64,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        DiagnoseConfig {
            qoi: Qoi::LatentAmplitude { dim: 1 },
            param: 0,
            threshold_fraction: 0.05,
        }
    }
}

/// Everything a run needs. The global seed drives the split, the weight
/// initialization, the GPR restarts and the Lipschitz probes.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; all cores when absent.
    pub threads: Option<usize>,
    pub paths: PathsConfig,
    pub data: DataConfig,
    pub split: SplitConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub interp: InterpConfig,
    pub diagnose: DiagnoseConfig,
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{field} = {v} must be positive")))
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string() + &span_note(text, e.span())))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    /// Propagates the global seed into the sections that carry their own.
    pub fn resolve(mut self) -> Self {
        self.train.seed = self.seed;
        self.interp.gpr.seed = self.seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        positive("data.dt", self.data.dt)?;
        if self.data.resolution < 2 {
            return Err(Error::Config("data.resolution must be at least 2".into()));
        }
        if self.data.grid == 0 {
            return Err(Error::Config("data.grid must be at least 1".into()));
        }
        if self.data.stride == 0 {
            return Err(Error::Config("data.stride must be at least 1".into()));
        }
        for (name, r) in [("split.ratio_mu", self.split.ratio_mu), ("split.ratio_t", self.split.ratio_t)] {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::Config(format!("{name} = {r} is outside (0, 1]")));
            }
        }
        if self.model.latent_dim == 0 {
            return Err(Error::Config("model.latent_dim must be positive".into()));
        }
        positive("model.dt", self.model.dt)?;
        if self.model.n_hc == 0 {
            return Err(Error::Config("model.n_hc must be positive".into()));
        }
        if self.model.conv_kind == ConvKind::GaussianMixture && self.model.n_kernels == 0 {
            return Err(Error::Config("model.n_kernels must be positive for gaussian_mixture".into()));
        }
        self.train.validate()?;
        if let Some(h) = self.interp.horizon {
            positive("interp.horizon", h)?;
        }
        if self.interp.probe_pairs == 0 {
            return Err(Error::Config("interp.probe_pairs must be positive".into()));
        }
        if !(self.interp.slack >= 0.0) {
            return Err(Error::Config("interp.slack must be >= 0".into()));
        }
        if !(self.diagnose.threshold_fraction > 0.0 && self.diagnose.threshold_fraction < 1.0) {
            return Err(Error::Config("diagnose.threshold_fraction must be in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn dataset_dir(&self, out: &Path) -> PathBuf {
        self.paths.dataset.clone().unwrap_or_else(|| out.join("dataset"))
    }

    pub fn checkpoint_dir(&self, out: &Path) -> PathBuf {
        self.paths.checkpoint.clone().unwrap_or_else(|| out.join("checkpoint"))
    }
}

fn span_note(text: &str, span: Option<std::ops::Range<usize>>) -> String {
    match span {
        Some(s) => {
            let line = text[..s.start.min(text.len())].matches('\n').count() + 1;
            format!(" (line {line})")
        }
        None => String::new(),
    }
}
