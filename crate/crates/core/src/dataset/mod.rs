//! Snapshot datasets: parameter signals, full-order fields on a fixed mesh,
//! min/max scaling and train/test splits.

pub(crate) mod io;
mod scaling;
mod split;

pub use io::{load_dataset, store_dataset, SNAPSHOT_MAGIC, SNAPSHOT_VERSION};
pub use scaling::{compute_scaling, ScalingParams};
pub use split::{split_dataset, SplitSpec};

use crate::error::{Error, Result};
use crate::mesh::MeshGraph;

/// Input signal of one simulation sampled on the shared time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalTable {
    pub sim_id: usize,
    times: Vec<f64>,
    d_mu: usize,
    values: Vec<f64>,
    constant: bool,
}

impl SignalTable {
    /// Time-dependent signal; `values` is time-major (`times.len() * d_mu`).
    pub fn new(sim_id: usize, times: Vec<f64>, d_mu: usize, values: Vec<f64>) -> Result<Self> {
        check_time_grid(&times)?;
        Error::check_dim("signal values", times.len() * d_mu, values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("signal of sim {sim_id} has non-finite values")));
        }
        let constant = d_mu == 0
            || values
                .chunks(d_mu)
                .all(|row| row.iter().zip(&values[..d_mu]).all(|(a, b)| a.to_bits() == b.to_bits()));
        Ok(SignalTable {
            sim_id,
            times,
            d_mu,
            values,
            constant,
        })
    }

    pub fn constant(sim_id: usize, times: Vec<f64>, mu: &[f64]) -> Result<Self> {
        let values = mu.iter().copied().cycle().take(mu.len() * times.len()).collect();
        Self::new(sim_id, times, mu.len(), values)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn d_mu(&self) -> usize {
        self.d_mu
    }

    pub fn is_constant(&self) -> bool {
        self.constant
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    #[inline]
    pub fn value(&self, k: usize) -> &[f64] {
        &self.values[k * self.d_mu..(k + 1) * self.d_mu]
    }

    /// Signal restricted to the first `len` time instants.
    pub fn truncated(&self, len: usize) -> Result<SignalTable> {
        if len == 0 || len > self.len() {
            return Err(Error::Validation(format!(
                "cannot truncate a signal of length {} to {len}",
                self.len()
            )));
        }
        SignalTable::new(
            self.sim_id,
            self.times[..len].to_vec(),
            self.d_mu,
            self.values[..len * self.d_mu].to_vec(),
        )
    }

    fn select(&self, keep: &[usize]) -> SignalTable {
        let times = keep.iter().map(|&k| self.times[k]).collect();
        let values = keep.iter().flat_map(|&k| self.value(k).iter().copied()).collect();
        SignalTable::new(self.sim_id, times, self.d_mu, values).expect("subset of a valid signal")
    }
}

pub(crate) fn check_time_grid(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::Validation("time grid is empty".into()));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::Validation("time grid has non-finite entries".into()));
    }
    if let Some(k) = times.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::Validation(format!(
            "time grid is not strictly increasing at index {}",
            k + 1
        )));
    }
    Ok(())
}

/// Full-order snapshots `u_h(t_k; mu_i)` indexed `[sim][time][node][channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotDataset {
    mesh: MeshGraph,
    times: Vec<f64>,
    signals: Vec<SignalTable>,
    d_u: usize,
    fields: Vec<f64>,
}

impl SnapshotDataset {
    pub fn new(
        mesh: MeshGraph,
        times: Vec<f64>,
        signals: Vec<SignalTable>,
        d_u: usize,
        fields: Vec<f64>,
    ) -> Result<Self> {
        check_time_grid(&times)?;
        if signals.is_empty() {
            return Err(Error::Validation("dataset has no simulations".into()));
        }
        if d_u == 0 {
            return Err(Error::Validation("field channel count must be positive".into()));
        }
        let d_mu = signals[0].d_mu();
        for (i, s) in signals.iter().enumerate() {
            if s.d_mu() != d_mu {
                return Err(Error::Validation(format!(
                    "signal {i} has dimension {}, expected {d_mu}",
                    s.d_mu()
                )));
            }
            if s.times().len() != times.len() {
                return Err(Error::Validation(format!(
                    "signal {i} has {} time instants, dataset header has {}",
                    s.times().len(),
                    times.len()
                )));
            }
            if s.times().iter().zip(&times).any(|(a, b)| a.to_bits() != b.to_bits()) {
                return Err(Error::Validation(format!(
                    "signal {i} is sampled on a different time grid"
                )));
            }
        }
        let expected = signals.len() * times.len() * mesh.num_nodes() * d_u;
        Error::check_dim("snapshot array", expected, fields.len())?;
        if let Some(pos) = fields.iter().position(|v| !v.is_finite()) {
            let per_sim = times.len() * mesh.num_nodes() * d_u;
            return Err(Error::Validation(format!(
                "non-finite snapshot value in sim {} at time index {}",
                pos / per_sim,
                (pos % per_sim) / (mesh.num_nodes() * d_u)
            )));
        }
        Ok(SnapshotDataset {
            mesh,
            times,
            signals,
            d_u,
            fields,
        })
    }

    pub fn mesh(&self) -> &MeshGraph {
        &self.mesh
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn signals(&self) -> &[SignalTable] {
        &self.signals
    }

    pub fn num_sims(&self) -> usize {
        self.signals.len()
    }

    pub fn num_times(&self) -> usize {
        self.times.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.mesh.num_nodes()
    }

    pub fn d_u(&self) -> usize {
        self.d_u
    }

    pub fn d_mu(&self) -> usize {
        self.signals[0].d_mu()
    }

    /// Entries in one snapshot (`N_h * d_u`).
    pub fn field_len(&self) -> usize {
        self.num_nodes() * self.d_u
    }

    pub fn fields(&self) -> &[f64] {
        &self.fields
    }

    #[inline]
    pub fn snapshot(&self, sim: usize, k: usize) -> &[f64] {
        let len = self.field_len();
        let start = (sim * self.num_times() + k) * len;
        &self.fields[start..start + len]
    }

    /// Drops the first `drop_first` instants and keeps every `stride`-th of the rest.
    pub fn trimmed(&self, drop_first: usize, stride: usize) -> Result<SnapshotDataset> {
        if stride == 0 {
            return Err(Error::Config("trajectory stride must be positive".into()));
        }
        let keep: Vec<usize> = (drop_first..self.num_times()).step_by(stride).collect();
        if keep.len() < 2 {
            return Err(Error::Config(format!(
                "trimming (drop {drop_first}, stride {stride}) leaves fewer than 2 time instants"
            )));
        }
        let times = keep.iter().map(|&k| self.times[k]).collect();
        let signals = self.signals.iter().map(|s| s.select(&keep)).collect();
        let mut fields = Vec::with_capacity(self.num_sims() * keep.len() * self.field_len());
        for sim in 0..self.num_sims() {
            for &k in &keep {
                fields.extend_from_slice(self.snapshot(sim, k));
            }
        }
        SnapshotDataset::new(self.mesh.clone(), times, signals, self.d_u, fields)
    }
}
