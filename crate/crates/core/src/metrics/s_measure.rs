//! Structure measure: 0.5 * object-aware similarity + 0.5 * region-aware
//! similarity, following the reference MATLAB implementation of the
//! structure-measure evaluation code (1-based centroid rounding, N - 1
//! normalization in variances, `eps` guards).

use crate::error::Result;
use crate::maps::{check_same_resolution, GroundTruthMask, SaliencyMap};

pub const ALPHA: f64 = 0.5;
const EPS: f64 = f64::EPSILON;

pub fn s_measure(pred: &SaliencyMap, target: &GroundTruthMask) -> Result<f64> {
    check_same_resolution(pred, target)?;
    let p = pred.values();
    let g = target.values();
    let fg_mean = target.foreground_fraction();
    let pred_mean = p.iter().sum::<f64>() / p.len() as f64;
    if fg_mean == 0.0 {
        return Ok(1.0 - pred_mean);
    }
    if fg_mean == 1.0 {
        return Ok(pred_mean);
    }
    let q = ALPHA * object_score(p, g, fg_mean)
        + (1.0 - ALPHA) * region_score(p, g, pred.height(), pred.width());
    Ok(q.max(0.0))
}

/// Mean and sample standard deviation (N - 1; zero for fewer than two values).
fn mean_std(values: impl Iterator<Item = f64> + Clone) -> Option<(f64, f64)> {
    let n = values.clone().count();
    if n == 0 {
        return None;
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Some((mean, std))
}

fn object(values: impl Iterator<Item = f64> + Clone) -> f64 {
    match mean_std(values) {
        Some((x, sigma)) => 2.0 * x / (x * x + 1.0 + sigma + EPS),
        None => 0.0,
    }
}

fn object_score(p: &[f64], g: &[bool], fg_mean: f64) -> f64 {
    let fg = object(p.iter().zip(g).filter(|(_, &g)| g).map(|(&v, _)| v));
    let bg = object(p.iter().zip(g).filter(|(_, &g)| !g).map(|(&v, _)| 1.0 - v));
    fg_mean * fg + (1.0 - fg_mean) * bg
}

/// 1-based (x, y) centroid of the foreground, rounded half away from zero.
fn centroid(g: &[bool], h: usize, w: usize) -> (usize, usize) {
    let total = g.iter().filter(|&&b| b).count();
    if total == 0 {
        return (
            ((w as f64) / 2.0).round() as usize,
            ((h as f64) / 2.0).round() as usize,
        );
    }
    let (mut sx, mut sy) = (0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            if g[y * w + x] {
                sx += (x + 1) as f64;
                sy += (y + 1) as f64;
            }
        }
    }
    (
        (sx / total as f64).round() as usize,
        (sy / total as f64).round() as usize,
    )
}

/// Luminance/contrast/structure similarity of one quadrant.
fn ssim(p: &[f64], g: &[f64]) -> f64 {
    let n = p.len() as f64;
    let x = p.iter().sum::<f64>() / n;
    let y = g.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&a, &b) in p.iter().zip(g) {
        sxx += (a - x) * (a - x);
        syy += (b - y) * (b - y);
        sxy += (a - x) * (b - y);
    }
    let denom = n - 1.0 + EPS;
    let (sxx, syy, sxy) = (sxx / denom, syy / denom, sxy / denom);
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sxx + syy);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn region_score(p: &[f64], g: &[bool], h: usize, w: usize) -> f64 {
    let (cx, cy) = centroid(g, h, w);
    let area = (h * w) as f64;
    // Quadrants: rows [0, cy) / [cy, h), columns [0, cx) / [cx, w).
    let quads = [
        (0..cy, 0..cx),
        (0..cy, cx..w),
        (cy..h, 0..cx),
        (cy..h, cx..w),
    ];
    let w1 = (cx * cy) as f64 / area;
    let w2 = ((w - cx) * cy) as f64 / area;
    let w3 = (cx * (h - cy)) as f64 / area;
    let weights = [w1, w2, w3, 1.0 - w1 - w2 - w3];
    quads
        .iter()
        .zip(weights)
        .map(|((rows, cols), weight)| {
            if rows.is_empty() || cols.is_empty() {
                return 0.0;
            }
            let mut pq = Vec::with_capacity(rows.len() * cols.len());
            let mut gq = Vec::with_capacity(rows.len() * cols.len());
            for y in rows.clone() {
                for x in cols.clone() {
                    pq.push(p[y * w + x]);
                    gq.push(f64::from(u8::from(g[y * w + x])));
                }
            }
            weight * ssim(&pq, &gq)
        })
        .sum()
}
