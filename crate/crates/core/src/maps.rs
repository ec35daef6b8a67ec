//! Single-channel saliency predictions and binary ground-truth masks.

use crate::error::{PfpnError, Result};
use crate::tensor::{Shape, Tensor};

/// A predicted saliency map with values in [0, 1], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl SaliencyMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(PfpnError::Input(format!(
                "saliency map of {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(PfpnError::Input(format!(
                "saliency value {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn uniform(height: usize, width: usize, value: f64) -> Self {
        Self::new(height, width, vec![value; height * width]).expect("uniform value in [0, 1]")
    }

    /// Converts batch item `n` of a (n, 1, h, w) tensor.
    pub fn from_tensor(t: &Tensor, n: usize) -> Result<Self> {
        let s = t.shape();
        if s.c != 1 {
            return Err(PfpnError::Input(format!(
                "saliency tensor has {} channels",
                s.c
            )));
        }
        Self::new(s.h, s.w, t.item(n).to_vec())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(
            Shape::new(1, 1, self.height, self.width),
            self.values.clone(),
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// 8-bit encoding used for prediction files: round(s * 255).
    pub fn to_u8(&self) -> Vec<u8> {
        self.values
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn from_u8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(
            height,
            width,
            bytes.iter().map(|&b| f64::from(b) / 255.0).collect(),
        )
    }

    /// Bilinear resize (half-pixel centres), e.g. back to an image's original size.
    pub fn resized(&self, height: usize, width: usize) -> Self {
        let t = crate::ops::bilinear_resize(&self.to_tensor(), height, width);
        Self {
            height,
            width,
            values: t.into_data(),
        }
    }
}

/// Binary ground-truth mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruthMask {
    height: usize,
    width: usize,
    values: Vec<bool>,
}

impl GroundTruthMask {
    pub fn new(height: usize, width: usize, values: Vec<bool>) -> Result<Self> {
        if values.len() != height * width {
            return Err(PfpnError::Input(format!(
                "mask of {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    /// Binarizes 8-bit values: foreground iff value >= 128.
    pub fn from_u8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(height, width, bytes.iter().map(|&b| b >= 128).collect())
    }

    /// Binarizes a (n, 1, h, w) tensor item at 0.5.
    pub fn from_tensor(t: &Tensor, n: usize) -> Result<Self> {
        let s = t.shape();
        Self::new(s.h, s.w, t.item(n).iter().map(|&v| v >= 0.5).collect())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(
            Shape::new(1, 1, self.height, self.width),
            self.values
                .iter()
                .map(|&b| f64::from(u8::from(b)))
                .collect(),
        )
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.values
            .iter()
            .map(|&b| if b { 255 } else { 0 })
            .collect()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn foreground_count(&self) -> usize {
        self.values.iter().filter(|&&b| b).count()
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.foreground_count() as f64 / self.values.len() as f64
    }

    /// The mask as a prediction (0 or 1 everywhere).
    pub fn as_prediction(&self) -> SaliencyMap {
        SaliencyMap {
            height: self.height,
            width: self.width,
            values: self
                .values
                .iter()
                .map(|&b| f64::from(u8::from(b)))
                .collect(),
        }
    }
}

pub(crate) fn check_same_resolution(pred: &SaliencyMap, target: &GroundTruthMask) -> Result<()> {
    if pred.resolution() != target.resolution() {
        return Err(PfpnError::Input(format!(
            "prediction is {}x{} but mask is {}x{}",
            pred.height, pred.width, target.height, target.width
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_values() {
        assert!(SaliencyMap::new(1, 2, vec![0.5, 1.2]).is_err());
        assert!(SaliencyMap::new(1, 2, vec![0.5]).is_err());
    }

    #[test]
    fn u8_encoding_round_trips() {
        let bytes: Vec<u8> = (0..=255).collect();
        let m = SaliencyMap::from_u8(16, 16, &bytes).unwrap();
        assert_eq!(m.to_u8(), bytes);
    }

    #[test]
    fn mask_threshold_at_128() {
        let m = GroundTruthMask::from_u8(1, 4, &[0, 127, 128, 200]).unwrap();
        assert_eq!(m.values(), &[false, false, true, true]);
    }
}
