//! Samples, the synthetic shape dataset, training augmentation and the
//! on-disk dataset layout (`images/*.png|jpg`, `masks/*.png`).

mod augment;
mod io;
mod synthetic;

pub use augment::{augment_train, augment_with, AugmentConfig, Augmentation};
pub use io::{
    list_images, load_dataset, load_mask, load_prediction, load_rgb, save_mask, save_prediction,
    save_rgb, write_dataset,
};
pub use synthetic::{generate_synthetic, ShapeKind, SyntheticSpec};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PfpnError, Result};
use crate::maps::GroundTruthMask;
use crate::ops::bilinear_resize;
use crate::tensor::{Shape, Tensor};

/// An RGB image (as a `1 x 3 x H x W` tensor with values in [0, 1]) and its mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    image: Tensor,
    mask: GroundTruthMask,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: Tensor, mask: GroundTruthMask) -> Result<Self> {
        let s = image.shape();
        let id = id.into();
        if s.n != 1 || s.c != 3 {
            return Err(PfpnError::Input(format!(
                "sample {id}: image must be 1x3xHxW, got {s}"
            )));
        }
        if (s.h, s.w) != mask.resolution() {
            return Err(PfpnError::Input(format!(
                "sample {id}: image is {}x{} but mask is {}x{}",
                s.h,
                s.w,
                mask.height(),
                mask.width()
            )));
        }
        if image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(PfpnError::Input(format!(
                "sample {id}: image values outside [0, 1]"
            )));
        }
        Ok(Self { id, image, mask })
    }

    pub fn image(&self) -> &Tensor {
        &self.image
    }

    pub fn mask(&self) -> &GroundTruthMask {
        &self.mask
    }

    pub fn height(&self) -> usize {
        self.mask.height()
    }

    pub fn width(&self) -> usize {
        self.mask.width()
    }
}

/// Original image size recorded before test-time resizing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OriginalSize {
    pub width: usize,
    pub height: usize,
}

/// Per-channel `(x - mean) / std`.
pub fn normalize(image: &Tensor, mean: &[f64; 3], std: &[f64; 3]) -> Tensor {
    let mut out = image.clone();
    let s = out.shape();
    for n in 0..s.n {
        for c in 0..3 {
            for v in out.plane_mut(n, c) {
                *v = (*v - mean[c]) / std[c];
            }
        }
    }
    out
}

/// Resizes a `1 x 3 x H x W` image to `input_size x input_size` and
/// standardizes it, recording the original size.
pub fn prepare_image(
    image: &Tensor,
    input_size: usize,
    mean: &[f64; 3],
    std: &[f64; 3],
) -> (Tensor, OriginalSize) {
    let s = image.shape();
    let original = OriginalSize {
        width: s.w,
        height: s.h,
    };
    let resized = bilinear_resize(image, input_size, input_size);
    (normalize(&resized, mean, std), original)
}

pub fn prepare_test(
    sample: &Sample,
    input_size: usize,
    mean: &[f64; 3],
    std: &[f64; 3],
) -> (Tensor, OriginalSize) {
    prepare_image(&sample.image, input_size, mean, std)
}

/// Normalized image batch and mask batch for a list of samples of one size.
pub fn collate(
    samples: &[Sample],
    mean: &[f64; 3],
    std: &[f64; 3],
) -> (Tensor, Vec<GroundTruthMask>) {
    let images: Vec<Tensor> = samples
        .iter()
        .map(|s| normalize(&s.image, mean, std))
        .collect();
    let masks = samples.iter().map(|s| s.mask.clone()).collect();
    (Tensor::stack(&images), masks)
}

/// Random stream for the `index`-th draw of a run seeded with `seed`.
/// Streams are independent of each other and of evaluation order.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub(crate) fn image_shape(h: usize, w: usize) -> Shape {
    Shape::new(1, 3, h, w)
}
