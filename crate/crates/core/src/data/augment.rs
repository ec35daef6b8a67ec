use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PfpnError, Result};
use crate::maps::GroundTruthMask;
use crate::ops::{bilinear_resize, nearest_resize};
use crate::tensor::{Shape, Tensor};

use super::Sample;

/// Resize-then-random-crop sizes plus horizontal flip probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub resize: usize,
    pub crop: usize,
    pub flip_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            resize: 96,
            crop: 80,
            flip_prob: 0.5,
        }
    }
}

impl AugmentConfig {
    /// Resize 300, crop 256.
    pub fn paper_scale() -> Self {
        Self {
            resize: 300,
            crop: 256,
            flip_prob: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.crop == 0 || self.crop > self.resize {
            return Err(PfpnError::Config(format!(
                "augmentation crop {} must be in 1..={}",
                self.crop, self.resize
            )));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(PfpnError::Config(format!(
                "flip probability {} outside [0, 1]",
                self.flip_prob
            )));
        }
        Ok(())
    }

    /// Largest crop offset along either axis.
    pub fn max_offset(&self) -> usize {
        self.resize - self.crop
    }
}

/// One concrete draw of the geometric transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Augmentation {
    pub offset_y: usize,
    pub offset_x: usize,
    pub flip: bool,
}

impl Augmentation {
    pub fn draw(config: &AugmentConfig, rng: &mut impl Rng) -> Self {
        let max = config.max_offset();
        let offset_y = rng.random_range(0..=max);
        let offset_x = rng.random_range(0..=max);
        let flip = rng.random_bool(config.flip_prob);
        Self {
            offset_y,
            offset_x,
            flip,
        }
    }
}

/// Random resize/crop/flip of a training sample; image and mask share the transform.
pub fn augment_train(sample: &Sample, config: &AugmentConfig, rng: &mut impl Rng) -> Sample {
    let aug = Augmentation::draw(config, rng);
    augment_with(sample, config, aug)
}

pub fn augment_with(sample: &Sample, config: &AugmentConfig, aug: Augmentation) -> Sample {
    let (r, c) = (config.resize, config.crop);
    let image = bilinear_resize(&sample.image, r, r);
    let mask = nearest_resize(&sample.mask.to_tensor(), r, r);
    let crop = |t: &Tensor| {
        Tensor::from_fn(Shape::new(1, t.shape().c, c, c), |_, ch, y, x| {
            let sx = if aug.flip { c - 1 - x } else { x };
            t.at(0, ch, aug.offset_y + y, aug.offset_x + sx)
        })
    };
    let image = crop(&image);
    let mask = GroundTruthMask::from_tensor(&crop(&mask), 0).expect("cropped mask is well formed");
    Sample {
        id: sample.id.clone(),
        image,
        mask,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{image_shape, sample_rng};

    /// Image whose channels encode source coordinates.
    fn coordinate_sample(size: usize) -> Sample {
        let image = Tensor::from_fn(image_shape(size, size), |_, c, y, x| match c {
            0 => y as f64 / (size - 1) as f64,
            1 => x as f64 / (size - 1) as f64,
            _ => 0.5,
        });
        let mask = (0..size * size)
            .map(|i| (i / size + 2 * (i % size)) % 5 < 2)
            .collect();
        Sample::new(
            "coords",
            image,
            GroundTruthMask::new(size, size, mask).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn zero_offset_without_flip_is_resize_then_corner_crop() {
        let s = coordinate_sample(24);
        let cfg = AugmentConfig {
            resize: 20,
            crop: 16,
            flip_prob: 0.5,
        };
        let out = augment_with(
            &s,
            &cfg,
            Augmentation {
                offset_y: 0,
                offset_x: 0,
                flip: false,
            },
        );
        let resized = bilinear_resize(s.image(), 20, 20);
        let mask = nearest_resize(&s.mask().to_tensor(), 20, 20);
        for y in 0..16 {
            for x in 0..16 {
                for c in 0..3 {
                    assert_eq!(out.image().at(0, c, y, x), resized.at(0, c, y, x));
                }
                assert_eq!(out.mask().values()[y * 16 + x], mask.at(0, 0, y, x) == 1.0);
            }
        }
    }

    #[test]
    fn flipping_twice_is_identity() {
        let s = coordinate_sample(16);
        let cfg = AugmentConfig {
            resize: 16,
            crop: 16,
            flip_prob: 0.5,
        };
        let aug = Augmentation {
            offset_y: 0,
            offset_x: 0,
            flip: true,
        };
        let once = augment_with(&s, &cfg, aug);
        let twice = augment_with(&once, &cfg, aug);
        assert_eq!(twice, s);
    }

    #[test]
    fn mask_follows_image_geometry() {
        let size = 24;
        let s = coordinate_sample(size);
        let cfg = AugmentConfig {
            resize: size,
            crop: 16,
            flip_prob: 0.5,
        };
        let mut rng = sample_rng(3, 0);
        for _ in 0..20 {
            let out = augment_train(&s, &cfg, &mut rng);
            for y in 0..16 {
                for x in 0..16 {
                    let sy = (out.image().at(0, 0, y, x) * (size - 1) as f64).round() as usize;
                    let sx = (out.image().at(0, 1, y, x) * (size - 1) as f64).round() as usize;
                    assert_eq!(
                        out.mask().values()[y * 16 + x],
                        s.mask().values()[sy * size + sx]
                    );
                }
            }
        }
    }

    #[test]
    fn offsets_cover_range_uniformly() {
        let cfg = AugmentConfig::default();
        let bins = cfg.max_offset() + 1;
        let mut counts = vec![0usize; bins];
        let mut rng = sample_rng(11, 0);
        let draws = 1000;
        for _ in 0..draws {
            counts[Augmentation::draw(&cfg, &mut rng).offset_y] += 1;
        }
        let expected = draws as f64 / bins as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 16 degrees of freedom: the 0.999 quantile is about 39.3.
        assert!(counts.iter().all(|&c| c > 0));
        assert!(chi2 < 39.3, "chi2 = {chi2}");
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = AugmentConfig {
            resize: 10,
            crop: 12,
            flip_prob: 0.5,
        };
        assert!(cfg.validate().is_err());
    }
}
