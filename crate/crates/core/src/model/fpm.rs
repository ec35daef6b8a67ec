use rand_chacha::ChaCha8Rng;

use crate::error::{PfpnError, Result};
use crate::graph::{Graph, Var};
use crate::params::{BatchNorm2d, Conv2d, ConvSpec, ParamStore};

#[derive(Debug, Clone)]
pub struct ConvBn {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl ConvBn {
    fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let y = g.conv2d(x, &self.conv);
        g.batch_norm(y, &self.bn)
    }
}

/// Polishing block for level k. For every deeper-or-equal level j >= k:
///
/// ```text
/// c_j  = ReLU(BN(Conv3x3(f_j)))
/// u_j  = bilinear(c_j -> size of f_k)      (u_k = c_k)
/// p_k  = BN(Conv1x1(concat(u_k, ..., u_N)))
/// f'_k = ReLU(p_k + f_k)
/// ```
///
/// Levels shallower than k never enter the computation.
#[derive(Debug, Clone)]
pub struct FpmBlock {
    /// 0-based level this block polishes.
    level: usize,
    /// One branch per source level j = k..N, in that order.
    branches: Vec<ConvBn>,
    fuse: ConvBn,
}

impl FpmBlock {
    pub fn branches(&self) -> &[ConvBn] {
        &self.branches
    }

    pub fn fuse(&self) -> &ConvBn {
        &self.fuse
    }

    fn forward(&self, g: &mut Graph<'_>, levels: &[Var]) -> Var {
        let k = self.level;
        let target = g.shape(levels[k]);
        let upsampled: Vec<Var> = self
            .branches
            .iter()
            .zip(&levels[k..])
            .map(|(branch, &f)| {
                let c = branch.forward(g, f);
                let c = g.relu(c);
                g.resize(c, target.h, target.w)
            })
            .collect();
        let cat = g.concat(&upsampled);
        let p = self.fuse.forward(g, cat);
        let sum = g.add(p, levels[k]);
        g.relu(sum)
    }
}

/// One polishing module: N blocks reading the same input pyramid.
#[derive(Debug, Clone)]
pub struct Fpm {
    blocks: Vec<FpmBlock>,
    channels: usize,
}

impl Fpm {
    /// Registers parameters as `fpm.<t>.<level>.branch<j>.{conv,bn}` and
    /// `fpm.<t>.<level>.fuse.{conv,bn}`, all 1-based.
    pub(crate) fn new(
        t: usize,
        num_levels: usize,
        channels: usize,
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let blocks = (0..num_levels)
            .map(|k| {
                let prefix = format!("fpm.{t}.{}", k + 1);
                let branches = (k..num_levels)
                    .map(|j| {
                        let name = format!("{prefix}.branch{}", j + 1);
                        ConvBn {
                            conv: store.conv(
                                &format!("{name}.conv"),
                                ConvSpec::new(channels, channels, 3).no_bias(),
                                rng,
                            ),
                            bn: store.batch_norm(&format!("{name}.bn"), channels),
                        }
                    })
                    .collect();
                let fuse = ConvBn {
                    conv: store.conv(
                        &format!("{prefix}.fuse.conv"),
                        ConvSpec::new((num_levels - k) * channels, channels, 1).no_bias(),
                        rng,
                    ),
                    bn: store.batch_norm(&format!("{prefix}.fuse.bn"), channels),
                };
                FpmBlock {
                    level: k,
                    branches,
                    fuse,
                }
            })
            .collect();
        Self { blocks, channels }
    }

    pub fn num_levels(&self) -> usize {
        self.blocks.len()
    }

    /// Block for level `k` (1-based).
    pub fn block(&self, k: usize) -> Result<&FpmBlock> {
        if k == 0 || k > self.blocks.len() {
            return Err(PfpnError::Index {
                index: k,
                len: self.blocks.len(),
            });
        }
        Ok(&self.blocks[k - 1])
    }

    fn check(&self, g: &Graph<'_>, levels: &[Var]) -> Result<()> {
        if levels.len() != self.blocks.len() {
            return Err(PfpnError::Config(format!(
                "polishing module has {} blocks but the pyramid has {} levels",
                self.blocks.len(),
                levels.len()
            )));
        }
        for (i, &l) in levels.iter().enumerate() {
            let c = g.shape(l).c;
            if c != self.channels {
                return Err(PfpnError::Config(format!(
                    "level {} has {c} channels, polishing expects {}",
                    i + 1,
                    self.channels
                )));
            }
        }
        Ok(())
    }

    /// Polished level `k` (1-based), computed from levels k..N.
    pub fn block_forward(&self, g: &mut Graph<'_>, levels: &[Var], k: usize) -> Result<Var> {
        let block = self.block(k)?;
        self.check(g, levels)?;
        Ok(block.forward(g, levels))
    }

    /// Every level polished in parallel from the same (unpolished) input.
    pub fn forward(&self, g: &mut Graph<'_>, levels: &[Var]) -> Result<Vec<Var>> {
        self.check(g, levels)?;
        Ok(self.blocks.iter().map(|b| b.forward(g, levels)).collect())
    }
}
