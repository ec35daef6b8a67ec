//! Named parameter storage and the layer handles that point into it.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{PfpnError, Result};
use crate::ops::ConvGeometry;
use crate::tensor::{Shape, Tensor};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StatsId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// Running statistics of one batch-normalization layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats {
    pub name: String,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Frozen layers always normalize with the stored statistics and never update them.
    pub frozen: bool,
}

/// Batch mean and unbiased variance observed by one training-mode forward pass.
#[derive(Debug, Clone)]
pub struct StatUpdate {
    pub stats: StatsId,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    stats: Vec<BnStats>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.params.push(Param { name, value });
        ParamId(self.params.len() - 1)
    }

    pub fn add_stats(&mut self, name: impl Into<String>, channels: usize) -> StatsId {
        self.stats.push(BnStats {
            name: name.into(),
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            frozen: false,
        });
        StatsId(self.stats.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn stats(&self) -> &[BnStats] {
        &self.stats
    }

    pub fn stats_mut(&mut self) -> &mut [BnStats] {
        &mut self.stats
    }

    pub fn stat(&self, id: StatsId) -> &BnStats {
        &self.stats[id.0]
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.shape().numel()).sum()
    }

    /// Folds the batch statistics of a training step into the running averages.
    pub fn apply_stat_updates(&mut self, updates: &[StatUpdate]) {
        for u in updates {
            let s = &mut self.stats[u.stats.0];
            if s.frozen {
                continue;
            }
            for (r, m) in s.mean.iter_mut().zip(&u.mean) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
            }
            for (r, v) in s.var.iter_mut().zip(&u.var) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
            }
        }
    }

    /// Freezes every statistics entry whose name starts with `prefix`.
    pub fn freeze_stats_with_prefix(&mut self, prefix: &str) -> usize {
        let mut count = 0;
        for s in self.stats.iter_mut().filter(|s| s.name.starts_with(prefix)) {
            s.frozen = true;
            count += 1;
        }
        count
    }

    /// Name-keyed view used for checkpoints and comparisons.
    pub fn named_tensors(&self) -> BTreeMap<&str, &Tensor> {
        self.params
            .iter()
            .map(|p| (p.name.as_str(), &p.value))
            .collect()
    }

    /// Copies values (and statistics) from `other`, matching by name and shape.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        for p in &mut self.params {
            let src = other
                .params
                .iter()
                .find(|q| q.name == p.name)
                .ok_or_else(|| PfpnError::Checkpoint(format!("missing parameter {}", p.name)))?;
            if src.value.shape() != p.value.shape() {
                return Err(PfpnError::Checkpoint(format!(
                    "parameter {} has shape {}, expected {}",
                    p.name,
                    src.value.shape(),
                    p.value.shape()
                )));
            }
            p.value = src.value.clone();
        }
        if other.params.len() != self.params.len() {
            let extra: Vec<&str> = other
                .params
                .iter()
                .filter(|q| self.find(&q.name).is_none())
                .map(|q| q.name.as_str())
                .collect();
            return Err(PfpnError::Checkpoint(format!(
                "unexpected parameters: {}",
                extra.join(", ")
            )));
        }
        for s in &mut self.stats {
            let src = other
                .stats
                .iter()
                .find(|q| q.name == s.name)
                .ok_or_else(|| PfpnError::Checkpoint(format!("missing statistics {}", s.name)))?;
            if src.mean.len() != s.mean.len() {
                return Err(PfpnError::Checkpoint(format!(
                    "statistics {} have {} channels, expected {}",
                    s.name,
                    src.mean.len(),
                    s.mean.len()
                )));
            }
            *s = src.clone();
        }
        Ok(())
    }
}

/// Handle to a convolution's parameters.
#[derive(Debug, Clone, Copy)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub geometry: ConvGeometry,
}

/// Handle to a batch-normalization layer: affine parameters plus running statistics.
#[derive(Debug, Clone, Copy)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: StatsId,
}

/// Spec of a convolution to register in a [`ParamStore`].
#[derive(Debug, Clone, Copy)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub bias: bool,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            bias: true,
        }
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn no_bias(mut self) -> Self {
        self.bias = false;
        self
    }
}

impl ParamStore {
    /// Registers `<name>.weight` (and `<name>.bias`) with fan-in scaled uniform
    /// initialization: weights in ±sqrt(6 / fan_in), bias in ±1 / sqrt(fan_in).
    pub fn conv(&mut self, name: &str, spec: ConvSpec, rng: &mut ChaCha8Rng) -> Conv2d {
        let fan_in = spec.in_channels * spec.kernel * spec.kernel;
        let wb = (6.0 / fan_in as f64).sqrt();
        let shape = Shape::new(
            spec.out_channels,
            spec.in_channels,
            spec.kernel,
            spec.kernel,
        );
        let w = Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-wb..wb));
        let weight = self.add(format!("{name}.weight"), w);
        let bias = spec.bias.then(|| {
            let bb = 1.0 / (fan_in as f64).sqrt();
            let b = Tensor::from_fn(Shape::new(1, spec.out_channels, 1, 1), |_, _, _, _| {
                rng.random_range(-bb..bb)
            });
            self.add(format!("{name}.bias"), b)
        });
        Conv2d {
            weight,
            bias,
            geometry: ConvGeometry {
                kernel: spec.kernel,
                stride: spec.stride,
                padding: spec.kernel / 2,
            },
        }
    }

    /// Registers `<name>.gamma`, `<name>.beta` and running statistics `<name>`.
    pub fn batch_norm(&mut self, name: &str, channels: usize) -> BatchNorm2d {
        let per_channel = Shape::new(1, channels, 1, 1);
        BatchNorm2d {
            gamma: self.add(format!("{name}.gamma"), Tensor::full(per_channel, 1.0)),
            beta: self.add(format!("{name}.beta"), Tensor::zeros(per_channel)),
            stats: self.add_stats(name, channels),
        }
    }
}
