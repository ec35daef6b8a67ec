//! Deep-supervision objective: binary cross-entropy on the final map plus
//! weighted cross-entropy on every side output.
//!
//! `total = L(s) + 0.5 * L(s_1) + 0.3 * sum_{i >= 2} L(s_i)`, where `s_1` is
//! the finest-level side output.

use serde::{Deserialize, Serialize};

use crate::error::{PfpnError, Result};
use crate::maps::{check_same_resolution, GroundTruthMask, SaliencyMap};
use crate::model::SideOutputs;

/// Predictions are clamped to [CLAMP, 1 - CLAMP] inside the logarithm.
pub const CLAMP: f64 = 1e-7;
pub const FINAL_WEIGHT: f64 = 1.0;
pub const FIRST_SIDE_WEIGHT: f64 = 0.5;
pub const OTHER_SIDE_WEIGHT: f64 = 0.3;

/// Weight of side output `i` (0-based, 0 = finest level).
pub fn side_weight(i: usize) -> f64 {
    if i == 0 {
        FIRST_SIDE_WEIGHT
    } else {
        OTHER_SIDE_WEIGHT
    }
}

#[inline]
fn clamp(p: f64) -> f64 {
    p.clamp(CLAMP, 1.0 - CLAMP)
}

/// Mean binary cross-entropy over pixels.
pub fn bce_loss(pred: &SaliencyMap, target: &GroundTruthMask) -> Result<f64> {
    check_same_resolution(pred, target)?;
    let sum: f64 = pred
        .values()
        .iter()
        .zip(target.values())
        .map(|(&p, &g)| {
            let p = clamp(p);
            if g {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Derivative of [`bce_loss`] with respect to each predicted value.
/// Zero where the clamp is active.
pub fn bce_grad(pred: &SaliencyMap, target: &GroundTruthMask) -> Result<Vec<f64>> {
    check_same_resolution(pred, target)?;
    let n = pred.len() as f64;
    Ok(pred
        .values()
        .iter()
        .zip(target.values())
        .map(|(&p, &g)| {
            if !(CLAMP..=1.0 - CLAMP).contains(&p) {
                return 0.0;
            }
            let y = f64::from(u8::from(g));
            (p - y) / (p * (1.0 - p)) / n
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub final_loss: f64,
    /// One entry per level, finest first.
    pub side_losses: Vec<f64>,
    pub total: f64,
}

impl LossBreakdown {
    pub fn combine(final_loss: f64, side_losses: Vec<f64>) -> Self {
        let total = FINAL_WEIGHT * final_loss
            + side_losses
                .iter()
                .enumerate()
                .map(|(i, l)| side_weight(i) * l)
                .sum::<f64>();
        Self {
            final_loss,
            side_losses,
            total,
        }
    }

    /// Element-wise mean over a batch of breakdowns.
    pub fn mean(items: &[LossBreakdown]) -> Self {
        let n = items.len() as f64;
        let levels = items[0].side_losses.len();
        let final_loss = items.iter().map(|b| b.final_loss).sum::<f64>() / n;
        let side_losses = (0..levels)
            .map(|i| items.iter().map(|b| b.side_losses[i]).sum::<f64>() / n)
            .collect();
        Self {
            final_loss,
            side_losses,
            total: items.iter().map(|b| b.total).sum::<f64>() / n,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
            && self.final_loss.is_finite()
            && self.side_losses.iter().all(|l| l.is_finite())
    }
}

fn check_sides(sides: &SideOutputs) -> Result<()> {
    if sides.len() < 2 {
        return Err(PfpnError::Config(format!(
            "deep supervision needs one side output per level (N >= 2), got {}",
            sides.len()
        )));
    }
    Ok(())
}

pub fn total_loss(
    final_map: &SaliencyMap,
    sides: &SideOutputs,
    target: &GroundTruthMask,
) -> Result<LossBreakdown> {
    check_sides(sides)?;
    let final_loss = bce_loss(final_map, target)?;
    let side_losses = sides
        .maps()
        .iter()
        .map(|s| bce_loss(s, target))
        .collect::<Result<Vec<_>>>()?;
    Ok(LossBreakdown::combine(final_loss, side_losses))
}

/// Gradients of the total loss w.r.t. the final map and each side map.
pub fn total_loss_grads(
    final_map: &SaliencyMap,
    sides: &SideOutputs,
    target: &GroundTruthMask,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    check_sides(sides)?;
    let mut final_grad = bce_grad(final_map, target)?;
    final_grad.iter_mut().for_each(|g| *g *= FINAL_WEIGHT);
    let side_grads = sides
        .maps()
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut g = bce_grad(s, target)?;
            g.iter_mut().for_each(|v| *v *= side_weight(i));
            Ok(g)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((final_grad, side_grads))
}
