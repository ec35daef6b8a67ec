use crate::error::{PfpnError, Result};
use crate::tensor::Tensor;

/// Multi-level feature maps, level 1 (index 0) finest.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    levels: Vec<Tensor>,
}

impl FeaturePyramid {
    /// Requires at least two levels sharing one batch size.
    pub fn new(levels: Vec<Tensor>) -> Result<Self> {
        if levels.len() < 2 {
            return Err(PfpnError::Config(format!(
                "a feature pyramid needs at least 2 levels, got {}",
                levels.len()
            )));
        }
        let n = levels[0].shape().n;
        if let Some((i, l)) = levels.iter().enumerate().find(|(_, l)| l.shape().n != n) {
            return Err(PfpnError::Input(format!(
                "level {} has batch size {}, level 1 has {n}",
                i + 1,
                l.shape().n
            )));
        }
        Ok(Self { levels })
    }

    /// Like [`FeaturePyramid::new`], additionally requiring each level to be
    /// the ceil-half of the previous one.
    pub fn hierarchical(levels: Vec<Tensor>) -> Result<Self> {
        let p = Self::new(levels)?;
        p.ensure_hierarchical()?;
        Ok(p)
    }

    pub fn ensure_hierarchical(&self) -> Result<()> {
        for (k, pair) in self.levels.windows(2).enumerate() {
            let (a, b) = (pair[0].shape(), pair[1].shape());
            if (b.h, b.w) != (a.h.div_ceil(2), a.w.div_ceil(2)) {
                return Err(PfpnError::Input(format!(
                    "level {} is {}x{}, expected half of level {} ({}x{})",
                    k + 2,
                    b.h,
                    b.w,
                    k + 1,
                    a.h,
                    a.w
                )));
            }
        }
        Ok(())
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn levels(&self) -> &[Tensor] {
        &self.levels
    }

    pub fn levels_mut(&mut self) -> &mut [Tensor] {
        &mut self.levels
    }

    pub fn into_levels(self) -> Vec<Tensor> {
        self.levels
    }

    /// Level `k`, 1-based.
    pub fn level(&self, k: usize) -> Result<&Tensor> {
        if k == 0 || k > self.levels.len() {
            return Err(PfpnError::Index {
                index: k,
                len: self.levels.len(),
            });
        }
        Ok(&self.levels[k - 1])
    }

    /// (channels, height, width) of every level.
    pub fn level_dims(&self) -> Vec<(usize, usize, usize)> {
        self.levels
            .iter()
            .map(|l| {
                let s = l.shape();
                (s.c, s.h, s.w)
            })
            .collect()
    }

    pub fn batch_size(&self) -> usize {
        self.levels[0].shape().n
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn hierarchy_checks_ceil_halving() {
        let ok = vec![
            Tensor::zeros(Shape::new(1, 2, 5, 5)),
            Tensor::zeros(Shape::new(1, 2, 3, 3)),
            Tensor::zeros(Shape::new(1, 4, 2, 2)),
        ];
        assert!(FeaturePyramid::hierarchical(ok).is_ok());
        let bad = vec![
            Tensor::zeros(Shape::new(1, 2, 8, 8)),
            Tensor::zeros(Shape::new(1, 2, 8, 8)),
        ];
        assert!(FeaturePyramid::hierarchical(bad.clone()).is_err());
        assert!(FeaturePyramid::new(bad).is_ok());
        assert!(FeaturePyramid::new(vec![Tensor::zeros(Shape::new(1, 1, 2, 2))]).is_err());
    }

    #[test]
    fn level_access_is_one_based() {
        let p = FeaturePyramid::new(vec![
            Tensor::zeros(Shape::new(1, 1, 4, 4)),
            Tensor::zeros(Shape::new(1, 1, 2, 2)),
        ])
        .unwrap();
        assert_eq!(p.level(1).unwrap().shape().h, 4);
        assert!(matches!(p.level(0), Err(PfpnError::Index { .. })));
        assert!(matches!(
            p.level(3),
            Err(PfpnError::Index { index: 3, len: 2 })
        ));
    }
}
