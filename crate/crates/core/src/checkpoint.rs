//! Single-file model archive.
//!
//! Layout: the 8-byte magic `PFPNCKPT`, a little-endian `u32` format version,
//! a `u64` header length, a JSON header (model config, step counter, tensor
//! and statistics index), then every value as little-endian `f64`: parameter
//! tensors in header order, followed by each statistics entry's mean and
//! variance.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{PfpnError, Result};
use crate::model::{ModelConfig, Pfpn};
use crate::params::ParamStore;
use crate::tensor::{Shape, Tensor};

const MAGIC: &[u8; 8] = b"PFPNCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub step: usize,
    pub store: ParamStore,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    step: usize,
    tensors: Vec<TensorEntry>,
    stats: Vec<StatsEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 4],
}

#[derive(Serialize, Deserialize)]
struct StatsEntry {
    name: String,
    channels: usize,
    frozen: bool,
}

fn corrupt(detail: impl std::fmt::Display) -> PfpnError {
    PfpnError::Checkpoint(format!("corrupt archive: {detail}"))
}

impl Checkpoint {
    pub fn new(config: ModelConfig, step: usize, store: ParamStore) -> Self {
        Self {
            config,
            step,
            store,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            config: self.config.clone(),
            step: self.step,
            tensors: self
                .store
                .params()
                .iter()
                .map(|p| TensorEntry {
                    name: p.name.clone(),
                    shape: p.value.shape().dims(),
                })
                .collect(),
            stats: self
                .store
                .stats()
                .iter()
                .map(|s| StatsEntry {
                    name: s.name.clone(),
                    channels: s.mean.len(),
                    frozen: s.frozen,
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + json.len() + 8 * self.store.num_values());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let values = self
            .store
            .params()
            .iter()
            .flat_map(|p| p.value.data())
            .chain(
                self.store
                    .stats()
                    .iter()
                    .flat_map(|s| s.mean.iter().chain(&s.var)),
            );
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(PfpnError::Checkpoint(
                "not a checkpoint archive (bad magic)".into(),
            ));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(PfpnError::Checkpoint(format!(
                "unsupported checkpoint version {version}, expected {VERSION}"
            )));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body_start = 20usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| corrupt("header length exceeds file size"))?;
        let header: Header = serde_json::from_slice(&bytes[20..body_start]).map_err(corrupt)?;
        let mut values = bytes[body_start..].chunks_exact(8);
        if !values.remainder().is_empty() {
            return Err(corrupt("trailing partial value"));
        }
        let mut take = |count: usize, what: &str| -> Result<Vec<f64>> {
            (0..count)
                .map(|_| {
                    values
                        .next()
                        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                        .ok_or_else(|| corrupt(format!("truncated data in {what}")))
                })
                .collect()
        };
        let mut store = ParamStore::new();
        for t in &header.tensors {
            let [n, c, h, w] = t.shape;
            let shape = Shape::new(n, c, h, w);
            let data = take(shape.numel(), &t.name)?;
            store.add(t.name.clone(), Tensor::from_vec(shape, data));
        }
        for s in &header.stats {
            let id = store.add_stats(s.name.clone(), s.channels);
            let mean = take(s.channels, &s.name)?;
            let var = take(s.channels, &s.name)?;
            let entry = &mut store.stats_mut()[id.0];
            entry.mean = mean;
            entry.var = var;
            entry.frozen = s.frozen;
        }
        if values.next().is_some() {
            return Err(corrupt("unexpected trailing data"));
        }
        Ok(Self {
            config: header.config,
            step: header.step,
            store,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| PfpnError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| PfpnError::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Rebuilds the network described by the stored config and fills in the
    /// stored parameters and statistics.
    pub fn into_model(self) -> Result<(Pfpn, ParamStore)> {
        let (model, mut store) = Pfpn::build(&self.config)?;
        store.load_from(&self.store)?;
        Ok((model, store))
    }

    /// Loads the parameters into an existing network, which must have been
    /// built from the same config.
    pub fn restore(&self, model: &Pfpn, store: &mut ParamStore) -> Result<()> {
        if model.config() != &self.config {
            return Err(PfpnError::Checkpoint(format!(
                "config/checkpoint mismatch: model has {}, checkpoint has {}",
                describe(model.config()),
                describe(&self.config)
            )));
        }
        store.load_from(&self.store)
    }
}

fn describe(c: &ModelConfig) -> String {
    format!(
        "N={} T={} D1={} D2={} input={} shared={}",
        c.num_levels, c.num_fpms, c.tm1_channels, c.tm2_channels, c.input_size, c.share_fpm_weights
    )
}
