//! Snapshot archive: a JSON header plus one raw little-endian `f64` payload
//! per parameter point, row-major (time × state).
//!
//! ```json
//! {
//!   "format": "tlasdi-snapshots", "version": 1, "endianness": "little",
//!   "system": "burgers", "provenance": "...", "dt": 0.005, "state_dim": 200,
//!   "entries": [
//!     {"mu": [0.7, 0.9], "t0": 0.0, "n_times": 201,
//!      "states": "traj_000.f64", "derivs": "traj_000.dot.f64"}
//!   ]
//! }
//! ```
//!
//! Payload file names are relative to the header's directory. `derivs` may be
//! omitted, in which case backward differences are computed on load.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::dataset::{backward_difference, Trajectory, TrajectoryDataset};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const FORMAT: &str = "tlasdi-snapshots";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ArchiveHeader {
    pub format: String,
    pub version: u32,
    pub endianness: String,
    pub system: String,
    #[serde(default)]
    pub provenance: String,
    pub dt: f64,
    pub state_dim: usize,
    pub entries: Vec<ArchiveEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub mu: Vec<f64>,
    #[serde(default)]
    pub t0: f64,
    pub n_times: usize,
    pub states: String,
    #[serde(default)]
    pub derivs: Option<String>,
}

fn write_payload<T: Scalar>(path: &Path, a: &Array2<T>) -> Result<()> {
    let mut buf = Vec::with_capacity(a.len() * 8);
    for v in a.iter() {
        buf.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

fn read_payload<T: Scalar>(path: &Path, section: &str, rows: usize, cols: usize) -> Result<Array2<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let want = rows * cols * 8;
    if bytes.len() != want {
        return Err(Error::parse(
            section,
            format!("payload {} has {} bytes, header implies {rows}×{cols} f64 = {want}", path.display(), bytes.len()),
        ));
    }
    let vals: Vec<T> = bytes
        .chunks_exact(8)
        .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
        .collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("payload {}", path.display())));
    }
    Ok(Array2::from_shape_vec((rows, cols), vals).expect("checked length"))
}

/// Writes `header_path` and the payload files next to it.
pub fn save_snapshots<T: Scalar>(ds: &TrajectoryDataset<T>, header_path: &Path) -> Result<()> {
    ds.validate()?;
    let dir = header_path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = vec![];
    for (k, t) in ds.trajectories.iter().enumerate() {
        let states = format!("traj_{k:03}.f64");
        let derivs = format!("traj_{k:03}.dot.f64");
        write_payload(&dir.join(&states), &t.states)?;
        write_payload(&dir.join(&derivs), &t.derivs)?;
        entries.push(ArchiveEntry {
            mu: t.mu.iter().map(|v| v.as_f64()).collect(),
            t0: t.t0.as_f64(),
            n_times: t.n_times(),
            states,
            derivs: Some(derivs),
        });
    }
    let header = ArchiveHeader {
        format: FORMAT.into(),
        version: 1,
        endianness: "little".into(),
        system: ds.system.clone(),
        provenance: ds.provenance.clone(),
        dt: ds.dt.as_f64(),
        state_dim: ds.state_dim(),
        entries,
    };
    let text = serde_json::to_string_pretty(&header)?;
    fs::write(header_path, text).map_err(|e| Error::io(header_path, e))
}

pub fn load_snapshots<T: Scalar>(header_path: &Path) -> Result<TrajectoryDataset<T>> {
    let text = fs::read_to_string(header_path).map_err(|e| Error::io(header_path, e))?;
    let header: ArchiveHeader = serde_json::from_str(&text).map_err(|e| Error::parse("header", e.to_string()))?;
    if header.format != FORMAT {
        return Err(Error::parse("header", format!("unknown format '{}'", header.format)));
    }
    if header.endianness != "little" {
        return Err(Error::parse("header", format!("unsupported endianness '{}'", header.endianness)));
    }
    if !(header.dt > 0.0) || header.state_dim == 0 {
        return Err(Error::parse("header", "dt and state_dim must be positive"));
    }
    let dir = header_path.parent().unwrap_or(Path::new("."));
    let dt = T::lit(header.dt);
    let mut ds = TrajectoryDataset::new(&header.system, dt, &header.provenance);
    for (k, e) in header.entries.iter().enumerate() {
        let section = format!("entries[{k}]");
        let states = read_payload::<T>(&dir.join(&e.states), &section, e.n_times, header.state_dim)?;
        let derivs = match &e.derivs {
            Some(f) => read_payload::<T>(&dir.join(f), &section, e.n_times, header.state_dim)?,
            None => backward_difference(&states, dt)?,
        };
        ds.push(Trajectory {
            mu: e.mu.iter().map(|&v| T::lit(v)).collect(),
            t0: T::lit(e.t0),
            states,
            derivs,
        })
        .map_err(|err| Error::parse(&section, err.to_string()))?;
    }
    Ok(ds)
}

/// Small-case CSV export: `t, u_0, …, u_{N−1}` per row.
pub fn write_csv<T: Scalar>(traj: &Trajectory<T>, dt: T, path: &Path) -> Result<()> {
    let mut out = String::from("t");
    for j in 0..traj.states.ncols() {
        out.push_str(&format!(",u{j}"));
    }
    out.push('\n');
    for (n, t) in traj.times(dt).into_iter().enumerate() {
        out.push_str(&format!("{}", t.as_f64()));
        for v in traj.states.row(n) {
            out.push_str(&format!(",{}", v.as_f64()));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{generate_dataset, GasSetup, System};

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let sys = System::GasContainers(GasSetup::default());
        let ds = generate_dataset::<f64>(&sys, &[vec![1.0], vec![50.0]]).unwrap();
        let hp = dir.path().join("data.json");
        save_snapshots(&ds, &hp).unwrap();
        let back: TrajectoryDataset<f64> = load_snapshots(&hp).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn truncated_payload_names_entry() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = TrajectoryDataset::<f64>::new("external", 0.1, "t");
        let states = Array2::from_shape_fn((4, 3), |(i, j)| (i * 3 + j) as f64);
        ds.push(Trajectory::from_states(vec![], 0.0, states, 0.1).unwrap()).unwrap();
        let hp = dir.path().join("d.json");
        save_snapshots(&ds, &hp).unwrap();
        let p = dir.path().join("traj_000.f64");
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 8]).unwrap();
        match load_snapshots::<f64>(&hp) {
            Err(Error::Parse { section, .. }) => assert_eq!(section, "entries[0]"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_derivatives_are_reconstructed() {
        let dir = tempfile::tempdir().unwrap();
        let states = Array2::from_shape_fn((5, 2), |(i, j)| (i as f64).powi(2) + j as f64);
        write_payload(&dir.path().join("s.f64"), &states).unwrap();
        let header = serde_json::json!({
            "format": FORMAT, "version": 1, "endianness": "little", "system": "external",
            "dt": 0.5, "state_dim": 2,
            "entries": [{"mu": [1.0], "n_times": 5, "states": "s.f64"}]
        });
        fs::write(dir.path().join("h.json"), header.to_string()).unwrap();
        let ds: TrajectoryDataset<f64> = load_snapshots(&dir.path().join("h.json")).unwrap();
        assert_eq!(ds.trajectories[0].derivs, backward_difference(&states, 0.5).unwrap());
    }

    #[test]
    fn malformed_header_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("h.json"), "{\"format\": 3").unwrap();
        assert!(matches!(load_snapshots::<f64>(&dir.path().join("h.json")), Err(Error::Parse { .. })));
    }
}
