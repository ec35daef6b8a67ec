use serde::{Deserialize, Serialize};

use crate::error::{PfpnError, Result};
use crate::maps::{check_same_resolution, GroundTruthMask, SaliencyMap};

pub const NUM_THRESHOLDS: usize = 256;

/// Dataset-averaged precision and recall at integer thresholds 0..=255.
///
/// A pixel is predicted salient at threshold `t` iff `255 * s > t`. Per image,
/// precision is 0 when nothing is predicted salient; an image whose mask is
/// empty has recall 1 and does not take part in the precision average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub thresholds: Vec<u8>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
}

impl PrCurve {
    pub fn new(precision: Vec<f64>, recall: Vec<f64>) -> Result<Self> {
        if precision.len() != NUM_THRESHOLDS || recall.len() != NUM_THRESHOLDS {
            return Err(PfpnError::Input(format!(
                "a PR curve has {NUM_THRESHOLDS} points, got {} / {}",
                precision.len(),
                recall.len()
            )));
        }
        Ok(Self {
            thresholds: (0..=255).collect(),
            precision,
            recall,
        })
    }
}

/// Number of thresholds a value passes: |{t in 0..=255 : 255 * s > t}|.
#[inline]
fn passes(s: f64) -> usize {
    (s * 255.0).ceil().clamp(0.0, NUM_THRESHOLDS as f64) as usize
}

/// Per-threshold true-positive and predicted-positive counts for one image.
struct ImageCounts {
    tp: [u64; NUM_THRESHOLDS],
    predicted: [u64; NUM_THRESHOLDS],
    positives: u64,
}

fn image_counts(pred: &SaliencyMap, target: &GroundTruthMask) -> ImageCounts {
    let mut fg = [0u64; NUM_THRESHOLDS + 1];
    let mut bg = [0u64; NUM_THRESHOLDS + 1];
    for (&s, &g) in pred.values().iter().zip(target.values()) {
        if g {
            fg[passes(s)] += 1;
        } else {
            bg[passes(s)] += 1;
        }
    }
    // A pixel in bucket c is positive for every t < c.
    let mut counts = ImageCounts {
        tp: [0; NUM_THRESHOLDS],
        predicted: [0; NUM_THRESHOLDS],
        positives: fg.iter().sum(),
    };
    let (mut tp, mut fp) = (0u64, 0u64);
    for t in (0..NUM_THRESHOLDS).rev() {
        tp += fg[t + 1];
        fp += bg[t + 1];
        counts.tp[t] = tp;
        counts.predicted[t] = tp + fp;
    }
    counts
}

pub fn pr_curve(preds: &[SaliencyMap], targets: &[GroundTruthMask]) -> Result<PrCurve> {
    if preds.is_empty() {
        return Err(PfpnError::Input(
            "cannot build a PR curve from an empty dataset".into(),
        ));
    }
    if preds.len() != targets.len() {
        return Err(PfpnError::Input(format!(
            "{} predictions but {} masks",
            preds.len(),
            targets.len()
        )));
    }
    let mut precision_sum = [0.0; NUM_THRESHOLDS];
    let mut recall_sum = [0.0; NUM_THRESHOLDS];
    let mut with_foreground = 0usize;
    for (p, g) in preds.iter().zip(targets) {
        check_same_resolution(p, g)?;
        let c = image_counts(p, g);
        if c.positives > 0 {
            with_foreground += 1;
        }
        for t in 0..NUM_THRESHOLDS {
            if c.positives == 0 {
                recall_sum[t] += 1.0;
                continue;
            }
            recall_sum[t] += c.tp[t] as f64 / c.positives as f64;
            if c.predicted[t] > 0 {
                precision_sum[t] += c.tp[t] as f64 / c.predicted[t] as f64;
            }
        }
    }
    let n = preds.len() as f64;
    let precision = precision_sum
        .iter()
        .map(|&s| {
            if with_foreground == 0 {
                0.0
            } else {
                s / with_foreground as f64
            }
        })
        .collect();
    let recall = recall_sum.iter().map(|&s| s / n).collect();
    PrCurve::new(precision, recall)
}
