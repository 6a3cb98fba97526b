//! On-disk dataset directory: `mesh.json`, `signals.csv`, `snapshots.f64`.
//!
//! `snapshots.f64` layout (little-endian): magic `LDGC`, u32 version, u32
//! `N_sim, N_t, N_h, d_u`, `N_t` f64 time values, then the f64 fields in
//! `[sim][time][node][channel]` order.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{SignalTable, SnapshotDataset};
use crate::error::{Error, Result};
use crate::mesh::MeshGraph;

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"LDGC";
pub const SNAPSHOT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 5 * 4;

pub fn store_dataset(dataset: &SnapshotDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    dataset.mesh().store_json(dir.join("mesh.json"))?;

    let path = dir.join("signals.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::format(&path, e.to_string()))?;
    let mut header = vec!["sim_id".to_string(), "t".to_string()];
    header.extend((1..=dataset.d_mu()).map(|i| format!("mu_{i}")));
    w.write_record(&header).map_err(|e| Error::format(&path, e.to_string()))?;
    for signal in dataset.signals() {
        for (k, t) in signal.times().iter().enumerate() {
            let mut row = vec![signal.sim_id.to_string(), t.to_string()];
            row.extend(signal.value(k).iter().map(f64::to_string));
            w.write_record(&row).map_err(|e| Error::format(&path, e.to_string()))?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("snapshots.f64");
    let mut bytes = Vec::with_capacity(HEADER_LEN + 8 * (dataset.num_times() + dataset.fields().len()));
    bytes.extend_from_slice(SNAPSHOT_MAGIC);
    for v in [
        SNAPSHOT_VERSION,
        dataset.num_sims() as u32,
        dataset.num_times() as u32,
        dataset.num_nodes() as u32,
        dataset.d_u() as u32,
    ] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    for &t in dataset.times().iter().chain(dataset.fields()) {
        bytes.extend_from_slice(&t.to_le_bytes());
    }
    let mut file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(&path, e))
}

pub(crate) fn read_f64s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<SnapshotDataset> {
    let dir = dir.as_ref();
    let mesh = MeshGraph::load_json(dir.join("mesh.json"))?;

    let path = dir.join("snapshots.f64");
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(
            &path,
            format!("header needs {HEADER_LEN} bytes, file has {}", bytes.len()),
        ));
    }
    if &bytes[..4] != SNAPSHOT_MAGIC {
        return Err(Error::format(&path, "bad magic bytes (expected \"LDGC\")"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let version = word(0) as u32;
    if version != SNAPSHOT_VERSION {
        return Err(Error::format(
            &path,
            format!("unsupported version {version} (expected {SNAPSHOT_VERSION})"),
        ));
    }
    let (n_sim, n_t, n_h, d_u) = (word(1), word(2), word(3), word(4));
    let expected = HEADER_LEN + 8 * (n_t + n_sim * n_t * n_h * d_u);
    if bytes.len() != expected {
        return Err(Error::format(
            &path,
            format!(
                "header declares {n_sim}x{n_t}x{n_h}x{d_u} values: expected {expected} bytes, found {}",
                bytes.len()
            ),
        ));
    }
    if n_h != mesh.num_nodes() {
        return Err(Error::Validation(format!(
            "snapshot header has N_h = {n_h} but mesh.json has {} nodes",
            mesh.num_nodes()
        )));
    }
    let values = read_f64s(&bytes[HEADER_LEN..]);
    let times = values[..n_t].to_vec();
    let fields = values[n_t..].to_vec();

    let signals = read_signals(&dir.join("signals.csv"), n_sim, n_t)?;
    SnapshotDataset::new(mesh, times, signals, d_u, fields)
}

fn read_signals(path: &Path, n_sim: usize, n_t: usize) -> Result<Vec<SignalTable>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let header = reader.headers().map_err(|e| Error::format(path, e.to_string()))?.clone();
    if header.len() < 2 || &header[0] != "sim_id" || &header[1] != "t" {
        return Err(Error::format(path, "header must start with sim_id,t"));
    }
    let d_mu = header.len() - 2;
    let mut times: Vec<Vec<f64>> = vec![Vec::new(); n_sim];
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); n_sim];
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::format(path, e.to_string()))?;
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::format(path, format!("row {}: {e}", line + 2)))
        };
        let sim: usize = record[0]
            .trim()
            .parse()
            .map_err(|e| Error::format(path, format!("row {}: bad sim_id: {e}", line + 2)))?;
        if sim >= n_sim {
            return Err(Error::Validation(format!(
                "signals.csv references sim {sim}, snapshot header has {n_sim} simulations"
            )));
        }
        times[sim].push(parse(&record[1])?);
        for f in record.iter().skip(2) {
            values[sim].push(parse(f)?);
        }
    }
    times
        .into_iter()
        .zip(values)
        .enumerate()
        .map(|(sim, (t, v))| {
            if t.len() != n_t {
                return Err(Error::Validation(format!(
                    "sim {sim}: signals.csv has {} time rows, snapshot header has N_t = {n_t}",
                    t.len()
                )));
            }
            SignalTable::new(sim, t, d_mu, v)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::testutil::random_dataset;

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let ds = random_dataset(3, 3, 5, 2, 9);
        store_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.times(), ds.times());
        assert!(back
            .fields()
            .iter()
            .zip(ds.fields())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(back, ds);
    }

    #[test]
    fn truncated_file_reports_byte_counts() {
        let dir = tempfile::tempdir().unwrap();
        let ds = random_dataset(3, 2, 3, 1, 1);
        store_dataset(&ds, dir.path()).unwrap();
        let path = dir.path().join("snapshots.f64");
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        let full = bytes.len();
        assert!(err.contains(&format!("expected {full} bytes")), "{err}");
        assert!(err.contains(&format!("found {}", full - 5)), "{err}");
    }

    #[test]
    fn bad_magic_and_version() {
        let dir = tempfile::tempdir().unwrap();
        let ds = random_dataset(3, 2, 3, 1, 1);
        store_dataset(&ds, dir.path()).unwrap();
        let path = dir.path().join("snapshots.f64");
        let mut bytes = fs::read(&path).unwrap();
        bytes[4] = 9;
        fs::write(&path, &bytes).unwrap();
        assert!(load_dataset(dir.path()).unwrap_err().to_string().contains("version 9"));
        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        assert!(load_dataset(dir.path()).unwrap_err().to_string().contains("magic"));
    }

    #[test]
    fn header_time_count_must_match_signals() {
        let dir = tempfile::tempdir().unwrap();
        let ds = random_dataset(3, 2, 4, 1, 2);
        store_dataset(&ds, dir.path()).unwrap();
        let path = dir.path().join("signals.csv");
        let text = fs::read_to_string(&path).unwrap();
        // drop the last row of sim 1
        let mut lines: Vec<&str> = text.lines().collect();
        lines.pop();
        fs::write(&path, lines.join("\n") + "\n").unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
        assert!(err.to_string().contains("N_t = 4"));
    }
}
