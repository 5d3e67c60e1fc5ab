//! Binary parameter checkpoints with a JSON sidecar.
//!
//! Layout of the binary file (all integers little-endian):
//!
//! ```text
//! magic     8 bytes   "TLSDCKPT"
//! version   u32       1
//! hdr_len   u32       length of the JSON header record
//! header    hdr_len bytes of UTF-8 JSON (same content as the sidecar)
//! count     u64       number of parameters
//! payload   count × f64
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::net::{Activation, DenseNet};
use crate::error::{check_dim, Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"TLSDCKPT";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub name: String,
    /// Network layer sizes, or the tensor shape for non-network blocks.
    pub layer_sizes: Vec<usize>,
    pub activation: Option<Activation>,
    pub seed: u64,
    pub step: u64,
    pub epoch: u64,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<f64>,
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

impl Checkpoint {
    pub fn from_net<T: Scalar>(name: &str, net: &DenseNet<T>, seed: u64, step: u64, epoch: u64) -> Self {
        Checkpoint {
            header: CheckpointHeader {
                name: name.to_string(),
                layer_sizes: net.layer_sizes().to_vec(),
                activation: Some(net.activation()),
                seed,
                step,
                epoch,
                len: net.params().len(),
            },
            params: net.params().iter().map(|p| p.as_f64()).collect(),
        }
    }

    pub fn from_tensor<T: Scalar>(name: &str, shape: Vec<usize>, data: &[T], seed: u64, step: u64, epoch: u64) -> Self {
        Checkpoint {
            header: CheckpointHeader {
                name: name.to_string(),
                layer_sizes: shape,
                activation: None,
                seed,
                step,
                epoch,
                len: data.len(),
            },
            params: data.iter().map(|p| p.as_f64()).collect(),
        }
    }

    pub fn to_net<T: Scalar>(&self) -> Result<DenseNet<T>> {
        let act = self
            .header
            .activation
            .ok_or_else(|| Error::parse(&self.header.name, "checkpoint holds no network activation"))?;
        DenseNet::new(self.header.layer_sizes.clone(), act, self.values())
    }

    pub fn values<T: Scalar>(&self) -> Vec<T> {
        self.params.iter().map(|&p| T::lit(p)).collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let hdr = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(24 + hdr.len() + 8 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(hdr.len() as u32).to_le_bytes());
        out.extend_from_slice(&hdr);
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(8, "magic")? != MAGIC {
            return Err(Error::parse("magic", "not a checkpoint file"));
        }
        let version = u32::from_le_bytes(cur.take(4, "version")?.try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::parse("version", format!("unsupported version {version}")));
        }
        let hlen = u32::from_le_bytes(cur.take(4, "header length")?.try_into().expect("4 bytes")) as usize;
        let header: CheckpointHeader = serde_json::from_slice(cur.take(hlen, "header")?)
            .map_err(|e| Error::parse("header", e.to_string()))?;
        let count = u64::from_le_bytes(cur.take(8, "parameter count")?.try_into().expect("8 bytes")) as usize;
        check_dim("checkpoint parameter count", header.len, count)?;
        let raw = cur.take(count * 8, "payload")?;
        let params = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Checkpoint { header, params })
    }

    /// Writes the binary file and its `.json` sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))?;
        let side = sidecar(path);
        fs::write(&side, serde_json::to_string_pretty(&self.header)?).map_err(|e| Error::io(&side, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, section: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::parse(
                section,
                format!("truncated: need {n} bytes at offset {}, file has {}", self.pos, self.bytes.len()),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}
