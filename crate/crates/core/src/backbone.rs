//! Backbones turn an image into the raw multi-level feature pyramid.

use rand_chacha::ChaCha8Rng;

use crate::graph::{Graph, Var};
use crate::model::BackboneSpec;
use crate::params::{BatchNorm2d, Conv2d, ConvSpec, ParamStore};

/// Name prefix shared by every backbone parameter and statistics entry.
pub const BACKBONE_PREFIX: &str = "backbone.";

/// A feature extractor producing one map per level, finest first.
///
/// Implementations register their parameters under [`BACKBONE_PREFIX`] so that
/// [`freeze_normalization`] and checkpoints can find them.
pub trait Backbone: Send + Sync {
    fn spec(&self) -> &BackboneSpec;

    fn forward(&self, g: &mut Graph<'_>, image: Var) -> Vec<Var>;
}

#[derive(Debug, Clone)]
struct ConvBnRelu {
    conv: Conv2d,
    bn: BatchNorm2d,
}

/// Stacks of 3x3 conv + batch norm + ReLU; every level after the first
/// starts with a stride-2 convolution.
#[derive(Debug, Clone)]
pub struct TinyBackbone {
    spec: BackboneSpec,
    levels: Vec<Vec<ConvBnRelu>>,
}

impl TinyBackbone {
    pub fn new(spec: &BackboneSpec, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Self {
        let mut in_channels = 3;
        let mut levels = Vec::with_capacity(spec.channels.len());
        for (l, &out) in spec.channels.iter().enumerate() {
            let mut layers = Vec::with_capacity(spec.convs_per_level);
            for i in 0..spec.convs_per_level {
                let stride = match (l, i) {
                    (0, 0) => spec.first_stride,
                    (_, 0) => 2,
                    _ => 1,
                };
                let name = format!("{BACKBONE_PREFIX}{}.conv{}", l + 1, i + 1);
                let conv = store.conv(
                    &name,
                    ConvSpec::new(if i == 0 { in_channels } else { out }, out, 3)
                        .stride(stride)
                        .no_bias(),
                    rng,
                );
                let bn = store.batch_norm(&format!("{BACKBONE_PREFIX}{}.bn{}", l + 1, i + 1), out);
                layers.push(ConvBnRelu { conv, bn });
            }
            in_channels = out;
            levels.push(layers);
        }
        Self {
            spec: spec.clone(),
            levels,
        }
    }
}

impl Backbone for TinyBackbone {
    fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    fn forward(&self, g: &mut Graph<'_>, image: Var) -> Vec<Var> {
        let mut x = image;
        let mut out = Vec::with_capacity(self.levels.len());
        for level in &self.levels {
            for layer in level {
                let y = g.conv2d(x, &layer.conv);
                let y = g.batch_norm(y, &layer.bn);
                x = g.relu(y);
            }
            out.push(x);
        }
        out
    }
}

/// Pins every backbone normalization layer to its stored statistics: they are
/// used in training and evaluation alike and never updated. Affine terms stay
/// trainable. Returns the number of layers frozen; calling it again is a no-op.
pub fn freeze_normalization(store: &mut ParamStore) -> usize {
    store.freeze_stats_with_prefix(BACKBONE_PREFIX)
}
