//! C ABI over the `graphrom` library.
//!
//! Objects cross the boundary as opaque handles created by `*_load` and
//! released by the matching `*_free`. Every fallible call returns a
//! [`GromStatus`]; on failure the message is available from
//! [`grom_last_error`] on the same thread until the next failing call.
//! Output buffers are caller-allocated and must hold at least the reported
//! number of doubles.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use graphrom::datagen::{generate_benchmark, Benchmark};
use graphrom::dataset::{load_dataset, SignalTable, SnapshotDataset};
use graphrom::dynamics::RolloutOptions;
use graphrom::mesh::MeshGraph;
use graphrom::model::Model;
use graphrom::training::Checkpoint;
use graphrom::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GromStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// An output buffer is shorter than required.
    BufferTooSmall = 3,
    Dimension = 4,
    MeshMismatch = 5,
    OutOfHull = 6,
    Numerical = 7,
    Io = 8,
    Format = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GromBenchmark {
    /// Unit square with parameterized advection.
    Sa = 0,
    /// Square with a movable square hole.
    Mh = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GromDatasetShape {
    pub num_sims: usize,
    pub num_times: usize,
    pub num_nodes: usize,
    pub d_u: usize,
    pub d_mu: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GromModelShape {
    pub latent_dim: usize,
    pub d_mu: usize,
    pub d_u: usize,
    pub num_nodes: usize,
    /// `num_nodes * d_u`
    pub field_len: usize,
    pub num_params: usize,
}

/// Snapshot dataset handle.
pub struct GromDataset {
    inner: SnapshotDataset,
}

/// Trained model handle (checkpoint plus rebuilt network).
pub struct GromModel {
    ckpt: Checkpoint,
    model: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(GromStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Dimension { .. } => GromStatus::Dimension,
            Error::MeshHash { .. } => GromStatus::MeshMismatch,
            Error::OutOfHull { .. } => GromStatus::OutOfHull,
            Error::Divergence { .. } | Error::Numerical(_) => GromStatus::Numerical,
            Error::Io { .. } => GromStatus::Io,
            Error::Format { .. } => GromStatus::Format,
            _ => GromStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

type FfiResult<T> = std::result::Result<T, Failure>;

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> FfiResult<()>) -> GromStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GromStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            GromStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(GromStatus::NullPointer, format!("{what} is NULL"))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> FfiResult<PathBuf> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Failure(GromStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> FfiResult<&'a [f64]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a>(p: *mut f64, len: usize, need: usize, what: &str) -> FfiResult<&'a mut [f64]> {
    if len < need {
        return Err(Failure(GromStatus::BufferTooSmall, format!("{what} holds {len} values, {need} required")));
    }
    if need == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, need))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn grom_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn grom_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn grom_clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Solves a benchmark on a `grid x grid` parameter grid and stores the
/// dataset directory at `dir`.
///
/// # Safety
/// `dir` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn grom_generate_dataset(bench: GromBenchmark, grid: usize, resolution: usize, dt: f64, dir: *const c_char) -> GromStatus {
    guard(|| {
        let dir = path_arg(dir, "dir")?;
        let bench = match bench {
            GromBenchmark::Sa => Benchmark::Sa,
            GromBenchmark::Mh => Benchmark::Mh,
        };
        let ds = generate_benchmark(bench, grid, resolution, dt)?;
        graphrom::dataset::store_dataset(&ds, dir)?;
        Ok(())
    })
}

/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid pointer. On
/// success `*out` owns a handle to release with [`grom_dataset_free`].
#[no_mangle]
pub unsafe extern "C" fn grom_dataset_load(dir: *const c_char, out: *mut *mut GromDataset) -> GromStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let inner = load_dataset(path_arg(dir, "dir")?)?;
        *out = Box::into_raw(Box::new(GromDataset { inner }));
        Ok(())
    })
}

/// # Safety
/// `ds` must come from [`grom_dataset_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn grom_dataset_free(ds: *mut GromDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// # Safety
/// `ds` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn grom_dataset_shape(ds: *const GromDataset, out: *mut GromDatasetShape) -> GromStatus {
    guard(|| {
        let d = &handle(ds, "dataset")?.inner;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = GromDatasetShape {
            num_sims: d.num_sims(),
            num_times: d.num_times(),
            num_nodes: d.num_nodes(),
            d_u: d.d_u(),
            d_mu: d.d_mu(),
        };
        Ok(())
    })
}

/// Copies the `num_times` snapshot instants.
///
/// # Safety
/// `ds` must be a live handle; `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn grom_dataset_times(ds: *const GromDataset, out: *mut f64, out_len: usize) -> GromStatus {
    guard(|| {
        let d = &handle(ds, "dataset")?.inner;
        out_arg(out, out_len, d.num_times(), "out")?.copy_from_slice(d.times());
        Ok(())
    })
}

/// Copies the field of simulation `sim` at instant `k` (`num_nodes * d_u`
/// values, node-major).
///
/// # Safety
/// `ds` must be a live handle; `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn grom_dataset_snapshot(ds: *const GromDataset, sim: usize, k: usize, out: *mut f64, out_len: usize) -> GromStatus {
    guard(|| {
        let d = &handle(ds, "dataset")?.inner;
        if sim >= d.num_sims() || k >= d.num_times() {
            return Err(Failure(
                GromStatus::InvalidArgument,
                format!("snapshot ({sim}, {k}) outside {} x {}", d.num_sims(), d.num_times()),
            ));
        }
        out_arg(out, out_len, d.field_len(), "out")?.copy_from_slice(d.snapshot(sim, k));
        Ok(())
    })
}

/// Copies the signal of simulation `sim` at instant `k` (`d_mu` values).
///
/// # Safety
/// `ds` must be a live handle; `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn grom_dataset_signal(ds: *const GromDataset, sim: usize, k: usize, out: *mut f64, out_len: usize) -> GromStatus {
    guard(|| {
        let d = &handle(ds, "dataset")?.inner;
        if sim >= d.num_sims() || k >= d.num_times() {
            return Err(Failure(
                GromStatus::InvalidArgument,
                format!("signal ({sim}, {k}) outside {} x {}", d.num_sims(), d.num_times()),
            ));
        }
        out_arg(out, out_len, d.d_mu(), "out")?.copy_from_slice(d.signals()[sim].value(k));
        Ok(())
    })
}

/// Loads a checkpoint directory and rebuilds the model on the mesh stored in
/// `mesh_json`. A mesh that differs from the training mesh is refused with
/// `MESH_MISMATCH`.
///
/// # Safety
/// `checkpoint_dir` and `mesh_json` must be NUL-terminated strings and `out`
/// a valid pointer. On success `*out` owns a handle to release with
/// [`grom_model_free`].
#[no_mangle]
pub unsafe extern "C" fn grom_model_load(checkpoint_dir: *const c_char, mesh_json: *const c_char, out: *mut *mut GromModel) -> GromStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let mesh = MeshGraph::load_json(path_arg(mesh_json, "mesh_json")?)?;
        let (ckpt, model) = Checkpoint::load(path_arg(checkpoint_dir, "checkpoint_dir")?, mesh)?;
        *out = Box::into_raw(Box::new(GromModel { ckpt, model }));
        Ok(())
    })
}

/// # Safety
/// `m` must come from [`grom_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn grom_model_free(m: *mut GromModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// # Safety
/// `m` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn grom_model_shape(m: *const GromModel, out: *mut GromModelShape) -> GromStatus {
    guard(|| {
        let m = &handle(m, "model")?.model;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = GromModelShape {
            latent_dim: m.latent_dim(),
            d_mu: m.d_mu(),
            d_u: m.d_u(),
            num_nodes: m.mesh().num_nodes(),
            field_len: m.field_len(),
            num_params: m.num_params(),
        };
        Ok(())
    })
}

/// Decodes latent state `s` at `(t, mu)` into a physical-units field.
///
/// # Safety
/// `m` must be a live handle; `s`, `mu` and `out` must hold `s_len`, `mu_len`
/// and `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn grom_model_decode(
    m: *const GromModel,
    t: f64,
    s: *const f64,
    s_len: usize,
    mu: *const f64,
    mu_len: usize,
    out: *mut f64,
    out_len: usize,
) -> GromStatus {
    guard(|| {
        let h = handle(m, "model")?;
        let s = slice_arg(s, s_len, "s")?;
        let mu = slice_arg(mu, mu_len, "mu")?;
        let field = h.ckpt.unscale(h.model.decode(&h.ckpt.params, t, s, mu)?)?;
        out_arg(out, out_len, field.len(), "out")?.copy_from_slice(&field);
        Ok(())
    })
}

unsafe fn signal_arg(times: *const f64, n_times: usize, mu: *const f64, mu_len: usize, d_mu: usize) -> FfiResult<SignalTable> {
    let times = slice_arg(times, n_times, "times")?.to_vec();
    let mu = slice_arg(mu, mu_len, "mu")?;
    if mu_len == d_mu {
        Ok(SignalTable::constant(0, times, mu)?)
    } else if mu_len == n_times * d_mu {
        Ok(SignalTable::new(0, times, d_mu, mu.to_vec())?)
    } else {
        Err(Failure(
            GromStatus::Dimension,
            format!("mu has {mu_len} values; expected {d_mu} (constant) or {} (one row per instant)", n_times * d_mu),
        ))
    }
}

/// Integrates the latent dynamics from `s(0) = 0` and writes the states at
/// the `n_times` instants (`n_times * latent_dim` values). `mu` is either
/// one constant signal value (`d_mu` values) or one row per instant.
///
/// # Safety
/// `m` must be a live handle; the arrays must hold the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn grom_model_rollout(
    m: *const GromModel,
    times: *const f64,
    n_times: usize,
    mu: *const f64,
    mu_len: usize,
    out: *mut f64,
    out_len: usize,
) -> GromStatus {
    guard(|| {
        let h = handle(m, "model")?;
        let sig = signal_arg(times, n_times, mu, mu_len, h.model.d_mu())?;
        let traj = h.model.rollout(&h.ckpt.params, &sig, &RolloutOptions::default())?;
        out_arg(out, out_len, traj.states.len(), "out")?.copy_from_slice(&traj.states);
        Ok(())
    })
}

/// Rollout plus decoding: writes `n_times * field_len` physical-units values.
///
/// # Safety
/// `m` must be a live handle; the arrays must hold the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn grom_model_simulate(
    m: *const GromModel,
    times: *const f64,
    n_times: usize,
    mu: *const f64,
    mu_len: usize,
    out: *mut f64,
    out_len: usize,
) -> GromStatus {
    guard(|| {
        let h = handle(m, "model")?;
        let sig = signal_arg(times, n_times, mu, mu_len, h.model.d_mu())?;
        let (_, fields) = h.model.simulate(&h.ckpt.params, &sig, None)?;
        let dst = out_arg(out, out_len, n_times * h.model.field_len(), "out")?;
        for (chunk, f) in dst.chunks_mut(h.model.field_len()).zip(fields) {
            chunk.copy_from_slice(&h.ckpt.unscale(f)?);
        }
        Ok(())
    })
}
