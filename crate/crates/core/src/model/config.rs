use serde::{Deserialize, Serialize};

use crate::error::{PfpnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackboneKind {
    /// The built-in desk-scale convolutional backbone.
    #[default]
    Tiny,
    /// A caller-supplied backbone registered through [`crate::model::Pfpn::build_with_backbone`].
    External,
}

/// Level structure of the backbone: one entry per pyramid level, finest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneSpec {
    pub kind: BackboneKind,
    pub channels: Vec<usize>,
    /// Stride of the first level (1 or 2); every later level halves the resolution.
    pub first_stride: usize,
    pub convs_per_level: usize,
}

impl Default for BackboneSpec {
    fn default() -> Self {
        Self {
            kind: BackboneKind::Tiny,
            channels: vec![8, 16, 32, 64, 64],
            first_stride: 1,
            convs_per_level: 2,
        }
    }
}

impl BackboneSpec {
    /// Six-level variant mirroring the block structure of a VGG-16 backbone.
    pub fn vgg_style() -> Self {
        Self {
            channels: vec![8, 16, 32, 64, 64, 64],
            ..Self::default()
        }
    }

    pub fn num_levels(&self) -> usize {
        self.channels.len()
    }

    /// Total downsampling between the input and the coarsest level.
    pub fn total_stride(&self) -> usize {
        self.first_stride << (self.channels.len().saturating_sub(1))
    }

    /// Spatial size of every level for a square input.
    pub fn level_sizes(&self, input: usize) -> Vec<usize> {
        let mut size = input.div_ceil(self.first_stride);
        let mut out = Vec::with_capacity(self.channels.len());
        for _ in 0..self.channels.len() {
            out.push(size);
            size = size.div_ceil(2);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.len() < 2 {
            return Err(PfpnError::Config(format!(
                "backbone needs at least 2 levels, got {}",
                self.channels.len()
            )));
        }
        if self.channels.contains(&0) {
            return Err(PfpnError::Config(
                "backbone channel counts must be positive".into(),
            ));
        }
        if !matches!(self.first_stride, 1 | 2) {
            return Err(PfpnError::Config(format!(
                "backbone first_stride must be 1 or 2, got {}",
                self.first_stride
            )));
        }
        if self.convs_per_level == 0 {
            return Err(PfpnError::Config(
                "backbone convs_per_level must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Architectural hyperparameters of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// N, the number of pyramid levels.
    pub num_levels: usize,
    /// T, the number of feature polishing modules in the chain.
    pub num_fpms: usize,
    /// Channel width every level is projected to by the first transition module.
    pub tm1_channels: usize,
    /// Channel width after the second transition module; also the fusion head width.
    pub tm2_channels: usize,
    /// Square input resolution in pixels.
    pub input_size: usize,
    /// Reuse one parameter set for every polishing module.
    pub share_fpm_weights: bool,
    pub backbone: BackboneSpec,
    /// Seed for parameter initialization.
    pub init_seed: u64,
    /// Per-channel input standardization.
    pub input_mean: [f64; 3],
    pub input_std: [f64; 3],
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_levels: 5,
            num_fpms: 2,
            tm1_channels: 16,
            tm2_channels: 8,
            input_size: 80,
            share_fpm_weights: false,
            backbone: BackboneSpec::default(),
            init_seed: 0,
            input_mean: [0.485, 0.456, 0.406],
            input_std: [0.229, 0.224, 0.225],
        }
    }
}

impl ModelConfig {
    /// Full-size widths and resolution (256 / 32 channels, 256 px input).
    pub fn paper_scale() -> Self {
        Self {
            tm1_channels: 256,
            tm2_channels: 32,
            input_size: 256,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.num_levels < 2 {
            return Err(PfpnError::Config(format!(
                "num_levels must be at least 2, got {}",
                self.num_levels
            )));
        }
        if self.num_levels != self.backbone.num_levels() {
            return Err(PfpnError::Config(format!(
                "num_levels = {} but the backbone defines {} levels",
                self.num_levels,
                self.backbone.num_levels()
            )));
        }
        for (name, v) in [
            ("tm1_channels", self.tm1_channels),
            ("tm2_channels", self.tm2_channels),
            ("input_size", self.input_size),
        ] {
            if v == 0 {
                return Err(PfpnError::Config(format!("{name} must be positive")));
            }
        }
        let stride = self.backbone.total_stride();
        if !self.input_size.is_multiple_of(stride) {
            return Err(PfpnError::Config(format!(
                "input_size {} is not divisible by {stride} (2^(N-1) times the first stride)",
                self.input_size
            )));
        }
        if self.input_std.iter().any(|&s| s <= 0.0) {
            return Err(PfpnError::Config(
                "input_std entries must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Number of distinct polishing parameter sets.
    pub fn num_fpm_param_sets(&self) -> usize {
        if self.share_fpm_weights {
            self.num_fpms.min(1)
        } else {
            self.num_fpms
        }
    }

    pub fn level_sizes(&self) -> Vec<usize> {
        self.backbone.level_sizes(self.input_size)
    }
}
