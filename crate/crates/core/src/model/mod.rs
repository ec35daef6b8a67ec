//! The polishing network: backbone, first transition module (TM1), a chain of
//! feature polishing modules (FPM), second transition module (TM2), the
//! fusion head and the per-level side-output heads.
//!
//! Every module records its computation on a [`Graph`]; the `*_forward`
//! methods on [`Pfpn`] wrap them for plain tensors in evaluation mode.

mod config;
mod fpm;
mod pyramid;

pub use config::{BackboneKind, BackboneSpec, ModelConfig};
pub use fpm::{Fpm, FpmBlock};
pub use pyramid::FeaturePyramid;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::{Backbone, TinyBackbone};
use crate::error::{PfpnError, Result};
use crate::graph::{Graph, Mode, Var};
use crate::maps::SaliencyMap;
use crate::params::{Conv2d, ConvSpec, ParamStore};
use crate::tensor::{Shape, Tensor};

// Initialization streams, one per component, so that changing T or weight
// sharing leaves every other component's initial weights untouched.
const STREAM_BACKBONE: u64 = 1;
const STREAM_TM1: u64 = 2;
const STREAM_TM2: u64 = 3;
const STREAM_FM: u64 = 4;
const STREAM_SIDE: u64 = 5;
const STREAM_FPM_BASE: u64 = 100;

fn component_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One side-output map per pyramid level, index 0 = finest level.
#[derive(Debug, Clone, PartialEq)]
pub struct SideOutputs {
    maps: Vec<SaliencyMap>,
}

impl SideOutputs {
    pub fn new(maps: Vec<SaliencyMap>) -> Self {
        Self { maps }
    }

    pub fn maps(&self) -> &[SaliencyMap] {
        &self.maps
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }
}

/// First transition module: a bare 1x1 convolution per level onto D1 channels.
#[derive(Debug, Clone)]
pub struct Tm1 {
    convs: Vec<Conv2d>,
}

impl Tm1 {
    fn new(
        in_channels: &[usize],
        out: usize,
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let convs = in_channels
            .iter()
            .enumerate()
            .map(|(l, &c)| store.conv(&format!("tm1.{}", l + 1), ConvSpec::new(c, out, 1), rng))
            .collect();
        Self { convs }
    }

    pub fn convs(&self) -> &[Conv2d] {
        &self.convs
    }

    pub fn forward(&self, g: &mut Graph<'_>, levels: &[Var]) -> Result<Vec<Var>> {
        if levels.len() != self.convs.len() {
            return Err(PfpnError::Config(format!(
                "TM1 expects {} levels, got {}",
                self.convs.len(),
                levels.len()
            )));
        }
        levels
            .iter()
            .zip(&self.convs)
            .map(|(&x, conv)| {
                check_channels(g, x, conv, "TM1")?;
                Ok(g.conv2d(x, conv))
            })
            .collect()
    }
}

/// Second transition module: bilinear upsampling to the input resolution
/// followed by a 1x1 convolution onto D2 channels.
#[derive(Debug, Clone)]
pub struct Tm2 {
    convs: Vec<Conv2d>,
    size: usize,
}

impl Tm2 {
    pub fn forward(&self, g: &mut Graph<'_>, levels: &[Var]) -> Result<Vec<Var>> {
        if levels.len() != self.convs.len() {
            return Err(PfpnError::Config(format!(
                "TM2 expects {} levels, got {}",
                self.convs.len(),
                levels.len()
            )));
        }
        levels
            .iter()
            .zip(&self.convs)
            .map(|(&x, conv)| {
                check_channels(g, x, conv, "TM2")?;
                let up = g.resize(x, self.size, self.size);
                Ok(g.conv2d(up, conv))
            })
            .collect()
    }
}

/// Concatenation head: two 3x3 conv + ReLU layers, then 1x1 conv + sigmoid.
#[derive(Debug, Clone)]
pub struct FusionModule {
    conv1: Conv2d,
    conv2: Conv2d,
    out: Conv2d,
}

impl FusionModule {
    pub fn out_conv(&self) -> &Conv2d {
        &self.out
    }

    pub fn forward(&self, g: &mut Graph<'_>, levels: &[Var]) -> Result<Var> {
        check_uniform_resolution(g, levels)?;
        let cat = g.concat(levels);
        check_channels(g, cat, &self.conv1, "fusion module")?;
        let x = g.conv2d(cat, &self.conv1);
        let x = g.relu(x);
        let x = g.conv2d(x, &self.conv2);
        let x = g.relu(x);
        let x = g.conv2d(x, &self.out);
        Ok(g.sigmoid(x))
    }
}

/// 1x1 conv + sigmoid on every TM2 level for deep supervision.
#[derive(Debug, Clone)]
pub struct SideHeads {
    convs: Vec<Conv2d>,
}

impl SideHeads {
    pub fn convs(&self) -> &[Conv2d] {
        &self.convs
    }

    pub fn forward(&self, g: &mut Graph<'_>, levels: &[Var]) -> Result<Vec<Var>> {
        if levels.len() != self.convs.len() {
            return Err(PfpnError::Config(format!(
                "{} side heads for {} levels",
                self.convs.len(),
                levels.len()
            )));
        }
        levels
            .iter()
            .zip(&self.convs)
            .map(|(&x, conv)| {
                check_channels(g, x, conv, "side head")?;
                let y = g.conv2d(x, conv);
                Ok(g.sigmoid(y))
            })
            .collect()
    }
}

fn check_channels(g: &Graph<'_>, x: Var, conv: &Conv2d, what: &str) -> Result<()> {
    let have = g.shape(x).c;
    let want = g.store().get(conv.weight).shape().c;
    if have != want {
        return Err(PfpnError::Config(format!(
            "{what} expects {want} input channels, got {have}"
        )));
    }
    Ok(())
}

fn check_uniform_resolution(g: &Graph<'_>, levels: &[Var]) -> Result<()> {
    let first = g.shape(levels[0]);
    for (i, &l) in levels.iter().enumerate() {
        let s = g.shape(l);
        if (s.h, s.w) != (first.h, first.w) {
            return Err(PfpnError::Config(format!(
                "level {} is {}x{} but level 1 is {}x{}",
                i + 1,
                s.h,
                s.w,
                first.h,
                first.w
            )));
        }
    }
    Ok(())
}

/// Graph handles for one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    /// Final saliency map, (n, 1, input, input).
    pub final_map: Var,
    /// Side outputs, finest level first.
    pub sides: Vec<Var>,
}

/// The assembled network. Parameters live in a separate [`ParamStore`].
pub struct Pfpn {
    config: ModelConfig,
    backbone: Box<dyn Backbone>,
    tm1: Tm1,
    fpms: Vec<Fpm>,
    tm2: Tm2,
    fm: FusionModule,
    side: SideHeads,
}

impl std::fmt::Debug for Pfpn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pfpn")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl Pfpn {
    /// Builds the network with the built-in tiny backbone.
    pub fn build(config: &ModelConfig) -> Result<(Self, ParamStore)> {
        if config.backbone.kind == BackboneKind::External {
            return Err(PfpnError::Config(
                "backbone.kind = \"external\" needs a backbone supplied through Pfpn::build_with_backbone".into(),
            ));
        }
        Self::build_with_backbone(config, |spec, store, rng| {
            Box::new(TinyBackbone::new(spec, store, rng))
        })
    }

    /// Builds the network around a caller-supplied backbone. The closure must
    /// register its parameters in the given store and produce levels matching
    /// `config.backbone`.
    pub fn build_with_backbone(
        config: &ModelConfig,
        make_backbone: impl FnOnce(&BackboneSpec, &mut ParamStore, &mut ChaCha8Rng) -> Box<dyn Backbone>,
    ) -> Result<(Self, ParamStore)> {
        config.validate()?;
        let mut store = ParamStore::new();
        let seed = config.init_seed;
        let backbone = make_backbone(
            &config.backbone,
            &mut store,
            &mut component_rng(seed, STREAM_BACKBONE),
        );
        if backbone.spec().channels != config.backbone.channels {
            return Err(PfpnError::Config(format!(
                "backbone produces channels {:?}, config declares {:?}",
                backbone.spec().channels,
                config.backbone.channels
            )));
        }
        let d1 = config.tm1_channels;
        let d2 = config.tm2_channels;
        let n = config.num_levels;
        let tm1 = Tm1::new(
            &config.backbone.channels,
            d1,
            &mut store,
            &mut component_rng(seed, STREAM_TM1),
        );
        let fpms = (0..config.num_fpm_param_sets())
            .map(|t| {
                Fpm::new(
                    t + 1,
                    n,
                    d1,
                    &mut store,
                    &mut component_rng(seed, STREAM_FPM_BASE + t as u64),
                )
            })
            .collect();
        let mut rng = component_rng(seed, STREAM_TM2);
        let tm2 = Tm2 {
            convs: (0..n)
                .map(|l| {
                    store.conv(
                        &format!("tm2.{}", l + 1),
                        ConvSpec::new(d1, d2, 1),
                        &mut rng,
                    )
                })
                .collect(),
            size: config.input_size,
        };
        let mut rng = component_rng(seed, STREAM_FM);
        let fm = FusionModule {
            conv1: store.conv("fm.conv1", ConvSpec::new(n * d2, d2, 3), &mut rng),
            conv2: store.conv("fm.conv2", ConvSpec::new(d2, d2, 3), &mut rng),
            out: store.conv("fm.out", ConvSpec::new(d2, 1, 1), &mut rng),
        };
        let mut rng = component_rng(seed, STREAM_SIDE);
        let side = SideHeads {
            convs: (0..n)
                .map(|l| {
                    store.conv(
                        &format!("side.{}", l + 1),
                        ConvSpec::new(d2, 1, 1),
                        &mut rng,
                    )
                })
                .collect(),
        };
        Ok((
            Self {
                config: config.clone(),
                backbone,
                tm1,
                fpms,
                tm2,
                fm,
                side,
            },
            store,
        ))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn backbone(&self) -> &dyn Backbone {
        self.backbone.as_ref()
    }

    pub fn tm1(&self) -> &Tm1 {
        &self.tm1
    }

    pub fn tm2(&self) -> &Tm2 {
        &self.tm2
    }

    pub fn fusion(&self) -> &FusionModule {
        &self.fm
    }

    pub fn side_heads(&self) -> &SideHeads {
        &self.side
    }

    /// Distinct polishing parameter sets (one when weights are shared).
    pub fn fpm_param_sets(&self) -> &[Fpm] {
        &self.fpms
    }

    /// Polishing module applied at chain position `t` (1-based).
    pub fn fpm_at(&self, t: usize) -> Result<&Fpm> {
        if t == 0 || t > self.config.num_fpms {
            return Err(PfpnError::Index {
                index: t,
                len: self.config.num_fpms,
            });
        }
        Ok(if self.config.share_fpm_weights {
            &self.fpms[0]
        } else {
            &self.fpms[t - 1]
        })
    }

    /// Applies the T polishing modules in sequence; T = 0 returns the input.
    pub fn polish(&self, g: &mut Graph<'_>, levels: &[Var]) -> Result<Vec<Var>> {
        let mut current = levels.to_vec();
        for t in 1..=self.config.num_fpms {
            current = self.fpm_at(t)?.forward(g, &current)?;
        }
        Ok(current)
    }

    pub fn forward(&self, g: &mut Graph<'_>, image: Var) -> Result<ForwardVars> {
        let s = g.shape(image);
        let size = self.config.input_size;
        if (s.c, s.h, s.w) != (3, size, size) {
            return Err(PfpnError::Input(format!(
                "expected images of 3x{size}x{size}, got {}x{}x{}",
                s.c, s.h, s.w
            )));
        }
        let raw = self.backbone.forward(g, image);
        let levels = self.tm1.forward(g, &raw)?;
        let polished = self.polish(g, &levels)?;
        let full = self.tm2.forward(g, &polished)?;
        let sides = self.side.forward(g, &full)?;
        let final_map = self.fm.forward(g, &full)?;
        Ok(ForwardVars { final_map, sides })
    }

    /// Evaluation-mode prediction for a batch of normalized images.
    pub fn predict(
        &self,
        store: &ParamStore,
        images: &Tensor,
    ) -> Result<Vec<(SaliencyMap, SideOutputs)>> {
        let mut g = Graph::new(store, Mode::Eval);
        let x = g.input(images.clone());
        let out = self.forward(&mut g, x)?;
        (0..images.shape().n)
            .map(|n| {
                let final_map = SaliencyMap::from_tensor(g.value(out.final_map), n)?;
                let sides = out
                    .sides
                    .iter()
                    .map(|&v| SaliencyMap::from_tensor(g.value(v), n))
                    .collect::<Result<Vec<_>>>()?;
                Ok((final_map, SideOutputs::new(sides)))
            })
            .collect()
    }

    /// Raw backbone pyramid for a batch of normalized images.
    pub fn backbone_forward(&self, store: &ParamStore, images: &Tensor) -> Result<FeaturePyramid> {
        let mut g = Graph::new(store, Mode::Eval);
        let x = g.input(images.clone());
        let levels = self.backbone.forward(&mut g, x);
        FeaturePyramid::hierarchical(levels.iter().map(|&v| g.value(v).clone()).collect())
    }

    pub fn tm1_forward(&self, store: &ParamStore, raw: &FeaturePyramid) -> Result<FeaturePyramid> {
        eval_pyramid(store, raw, |g, levels| self.tm1.forward(g, levels))
    }

    /// Polished level `k` (1-based) from polishing module `t` (1-based).
    pub fn fpm_block_forward(
        &self,
        store: &ParamStore,
        t: usize,
        pyramid: &FeaturePyramid,
        k: usize,
    ) -> Result<Tensor> {
        let fpm = self.fpm_at(t)?;
        let mut g = Graph::new(store, Mode::Eval);
        let levels = inputs(&mut g, pyramid);
        let out = fpm.block_forward(&mut g, &levels, k)?;
        Ok(g.value(out).clone())
    }

    pub fn fpm_forward(
        &self,
        store: &ParamStore,
        t: usize,
        pyramid: &FeaturePyramid,
    ) -> Result<FeaturePyramid> {
        let fpm = self.fpm_at(t)?;
        eval_pyramid(store, pyramid, |g, levels| fpm.forward(g, levels))
    }

    pub fn polish_chain(
        &self,
        store: &ParamStore,
        pyramid: &FeaturePyramid,
    ) -> Result<FeaturePyramid> {
        eval_pyramid(store, pyramid, |g, levels| self.polish(g, levels))
    }

    pub fn tm2_forward(
        &self,
        store: &ParamStore,
        pyramid: &FeaturePyramid,
    ) -> Result<FeaturePyramid> {
        eval_pyramid(store, pyramid, |g, levels| self.tm2.forward(g, levels))
    }

    /// Final map for every batch item of a TM2-resolution pyramid.
    pub fn fusion_forward(
        &self,
        store: &ParamStore,
        pyramid: &FeaturePyramid,
    ) -> Result<Vec<SaliencyMap>> {
        let mut g = Graph::new(store, Mode::Eval);
        let levels = inputs(&mut g, pyramid);
        let out = self.fm.forward(&mut g, &levels)?;
        (0..pyramid.batch_size())
            .map(|n| SaliencyMap::from_tensor(g.value(out), n))
            .collect()
    }

    /// Side outputs for every batch item of a TM2-resolution pyramid.
    pub fn side_output_heads(
        &self,
        store: &ParamStore,
        pyramid: &FeaturePyramid,
    ) -> Result<Vec<SideOutputs>> {
        let mut g = Graph::new(store, Mode::Eval);
        let levels = inputs(&mut g, pyramid);
        let outs = self.side.forward(&mut g, &levels)?;
        (0..pyramid.batch_size())
            .map(|n| {
                let maps = outs
                    .iter()
                    .map(|&v| SaliencyMap::from_tensor(g.value(v), n))
                    .collect::<Result<Vec<_>>>()?;
                Ok(SideOutputs::new(maps))
            })
            .collect()
    }

    /// Shape of the normalized image batch the network accepts.
    pub fn input_shape(&self, batch: usize) -> Shape {
        Shape::new(batch, 3, self.config.input_size, self.config.input_size)
    }
}

fn inputs(g: &mut Graph<'_>, pyramid: &FeaturePyramid) -> Vec<Var> {
    pyramid
        .levels()
        .iter()
        .map(|l| g.input(l.clone()))
        .collect()
}

fn eval_pyramid(
    store: &ParamStore,
    pyramid: &FeaturePyramid,
    f: impl FnOnce(&mut Graph<'_>, &[Var]) -> Result<Vec<Var>>,
) -> Result<FeaturePyramid> {
    let mut g = Graph::new(store, Mode::Eval);
    let levels = inputs(&mut g, pyramid);
    let out = f(&mut g, &levels)?;
    FeaturePyramid::new(out.iter().map(|&v| g.value(v).clone()).collect())
}
