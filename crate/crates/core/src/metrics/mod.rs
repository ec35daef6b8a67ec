//! Saliency evaluation: MAE, PR curves over 256 thresholds, max/mean
//! F-measure (beta^2 = 0.3) and the structure measure.

mod pr;
mod s_measure;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use pr::{pr_curve, PrCurve, NUM_THRESHOLDS};
pub use s_measure::s_measure;

use crate::error::{PfpnError, Result};
use crate::maps::{check_same_resolution, GroundTruthMask, SaliencyMap};

pub const BETA_SQ: f64 = 0.3;

pub fn mae(pred: &SaliencyMap, target: &GroundTruthMask) -> Result<f64> {
    check_same_resolution(pred, target)?;
    let sum: f64 = pred
        .values()
        .iter()
        .zip(target.values())
        .map(|(&p, &g)| (p - f64::from(u8::from(g))).abs())
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Weighted harmonic mean `(1 + b^2) P R / (b^2 P + R)`; 0 whenever `P * R = 0`.
pub fn f_measure(precision: f64, recall: f64) -> f64 {
    if precision * recall == 0.0 {
        return 0.0;
    }
    (1.0 + BETA_SQ) * precision * recall / (BETA_SQ * precision + recall)
}

/// F-measure at every threshold of a curve.
pub fn f_curve(pr: &PrCurve) -> Vec<f64> {
    pr.precision
        .iter()
        .zip(&pr.recall)
        .map(|(&p, &r)| f_measure(p, r))
        .collect()
}

/// (max, mean) of the F-measure over all 256 thresholds.
pub fn max_mean_f(pr: &PrCurve) -> (f64, f64) {
    let f = f_curve(pr);
    let max = f.iter().copied().fold(0.0, f64::max);
    let mean = f.iter().sum::<f64>() / f.len() as f64;
    (max, mean)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrRow {
    pub threshold: u8,
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

/// Dataset-level scores as written to a report file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub num_images: usize,
    pub mae: f64,
    pub max_f: f64,
    pub mean_f: f64,
    pub s_measure: f64,
    pub pr: Vec<PrRow>,
}

impl MetricsReport {
    pub fn curve(&self) -> Result<PrCurve> {
        PrCurve::new(
            self.pr.iter().map(|r| r.precision).collect(),
            self.pr.iter().map(|r| r.recall).collect(),
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, text + "\n").map_err(|e| PfpnError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PfpnError::io(path, e))?;
        let report: Self = serde_json::from_str(&text)
            .map_err(|e| PfpnError::Input(format!("malformed report {}: {e}", path.display())))?;
        if report.pr.len() != NUM_THRESHOLDS {
            return Err(PfpnError::Input(format!(
                "malformed report {}: {} PR rows, expected {NUM_THRESHOLDS}",
                path.display(),
                report.pr.len()
            )));
        }
        Ok(report)
    }

    /// One-line summary of the four headline numbers.
    pub fn headline(&self) -> String {
        format!(
            "MAE {:.4}  maxF {:.4}  meanF {:.4}  S {:.4}  ({} images)",
            self.mae, self.max_f, self.mean_f, self.s_measure, self.num_images
        )
    }
}

/// Scores a dataset of (prediction, mask) pairs. Per-image terms are reduced
/// in input order.
pub fn evaluate(preds: &[SaliencyMap], targets: &[GroundTruthMask]) -> Result<MetricsReport> {
    let pr = pr_curve(preds, targets)?;
    let n = preds.len() as f64;
    let mut mae_sum = 0.0;
    let mut s_sum = 0.0;
    for (p, g) in preds.iter().zip(targets) {
        mae_sum += mae(p, g)?;
        s_sum += s_measure(p, g)?;
    }
    let (max_f, mean_f) = max_mean_f(&pr);
    let f = f_curve(&pr);
    let rows = (0..NUM_THRESHOLDS)
        .map(|t| PrRow {
            threshold: t as u8,
            precision: pr.precision[t],
            recall: pr.recall[t],
            f: f[t],
        })
        .collect();
    Ok(MetricsReport {
        label: None,
        num_images: preds.len(),
        mae: mae_sum / n,
        max_f,
        mean_f,
        s_measure: s_sum / n,
        pr: rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn map(h: usize, w: usize, v: &[f64]) -> SaliencyMap {
        SaliencyMap::new(h, w, v.to_vec()).unwrap()
    }

    fn mask(h: usize, w: usize, v: &[u8]) -> GroundTruthMask {
        GroundTruthMask::new(h, w, v.iter().map(|&b| b == 1).collect()).unwrap()
    }

    #[test]
    fn mae_basics() {
        let g = mask(2, 2, &[1, 0, 0, 1]);
        assert_eq!(mae(&g.as_prediction(), &g).unwrap(), 0.0);
        let zeros = mask(2, 2, &[0, 0, 0, 0]);
        assert_eq!(mae(&SaliencyMap::uniform(2, 2, 0.5), &zeros).unwrap(), 0.5);
    }

    #[test]
    fn f_measure_values() {
        assert_eq!(f_measure(1.0, 1.0), 1.0);
        assert_eq!(f_measure(1.0, 0.0), 0.0);
        assert_eq!(f_measure(0.0, 0.0), 0.0);
        let f = f_measure(0.8, 0.5);
        assert!((f - 0.52 / 0.74).abs() < 1e-15);
        assert!((f - 0.7027).abs() < 1e-4);
    }

    #[test]
    fn max_mean_of_constant_and_single_point_curves() {
        let ones = PrCurve::new(vec![1.0; 256], vec![1.0; 256]).unwrap();
        assert_eq!(max_mean_f(&ones), (1.0, 1.0));
        // F = 0.5 at P = R = 0.5; zero elsewhere.
        let mut p = vec![0.0; 256];
        let mut r = vec![0.0; 256];
        p[17] = 0.5;
        r[17] = 0.5;
        let (max, mean) = max_mean_f(&PrCurve::new(p, r).unwrap());
        assert!((max - 0.5).abs() < 1e-15);
        assert!((mean - 0.5 / 256.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_binary_prediction() {
        let g = mask(2, 3, &[1, 1, 0, 0, 1, 0]);
        let pr = pr_curve(&[g.as_prediction()], std::slice::from_ref(&g)).unwrap();
        for t in 0..255 {
            assert_eq!((pr.precision[t], pr.recall[t]), (1.0, 1.0));
        }
        // 255 * 1.0 > 255 is false: nothing predicted at the top threshold.
        assert_eq!((pr.precision[255], pr.recall[255]), (0.0, 0.0));
        assert_eq!(max_mean_f(&pr).0, 1.0);
    }

    #[test]
    fn empty_mask_recall_is_one_and_skips_precision() {
        let empty = mask(2, 2, &[0, 0, 0, 0]);
        let full = mask(2, 2, &[1, 1, 1, 1]);
        let p = SaliencyMap::uniform(2, 2, 0.5);
        let pr = pr_curve(&[p.clone(), p.clone()], &[empty.clone(), full]).unwrap();
        // Threshold 0: only the second image counts for precision (1.0).
        assert_eq!(pr.precision[0], 1.0);
        assert_eq!(pr.recall[0], 1.0);
        // 255 * 0.5 = 127.5 > 200 is false: recall (1 + 0) / 2.
        assert_eq!(pr.recall[200], 0.5);
        let only_empty = pr_curve(&[p], &[empty]).unwrap();
        assert!(only_empty.recall.iter().all(|&r| r == 1.0));
        assert!(only_empty.precision.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn empty_dataset_is_an_error() {
        assert!(matches!(pr_curve(&[], &[]), Err(PfpnError::Input(_))));
    }

    /// Hand-listed 4x4 pair checked against direct enumeration of thresholds.
    #[test]
    fn two_images_match_enumeration() {
        let p1 = map(
            4,
            4,
            &[
                0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 0.95, 0.05, 0.15, 0.25, 0.35,
            ],
        );
        let g1 = mask(4, 4, &[0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0]);
        let p2 = map(
            4,
            4,
            &[
                1.0, 1.0, 0.0, 0.0, 0.6, 0.2, 0.4, 0.8, 0.3, 0.3, 0.3, 0.3, 0.7, 0.9, 0.1, 0.5,
            ],
        );
        let g2 = mask(4, 4, &[1, 1, 0, 0, 1, 0, 0, 1, 0, 0, 0, 0, 1, 1, 0, 0]);
        let pr = pr_curve(&[p1.clone(), p2.clone()], &[g1.clone(), g2.clone()]).unwrap();
        let enumerate = |p: &SaliencyMap, g: &GroundTruthMask, t: usize| {
            let mut tp = 0.0;
            let mut pos = 0.0;
            let mut gt = 0.0;
            for i in 0..16 {
                let on = p.values()[i] * 255.0 > t as f64;
                if on {
                    pos += 1.0;
                }
                if g.values()[i] {
                    gt += 1.0;
                    if on {
                        tp += 1.0;
                    }
                }
            }
            (if pos > 0.0 { tp / pos } else { 0.0 }, tp / gt)
        };
        for t in 0..256 {
            let (a_p, a_r) = enumerate(&p1, &g1, t);
            let (b_p, b_r) = enumerate(&p2, &g2, t);
            assert!((pr.precision[t] - (a_p + b_p) / 2.0).abs() < 1e-15, "t={t}");
            assert!((pr.recall[t] - (a_r + b_r) / 2.0).abs() < 1e-15, "t={t}");
        }
        // Spot values: at t = 127, image 1 predicts {0.5..1.0, 0.95} -> 7 px, 7 fg.
        assert_eq!(enumerate(&p1, &g1, 127), (1.0, 1.0));
    }

    #[test]
    fn s_measure_of_perfect_and_inverted_predictions() {
        let g = mask(4, 4, &[0, 0, 0, 0, 0, 1, 1, 0, 0, 1, 1, 1, 0, 0, 0, 0]);
        let perfect = s_measure(&g.as_prediction(), &g).unwrap();
        assert!((perfect - 1.0).abs() < 1e-12, "{perfect}");
        let inverted: Vec<f64> = g
            .values()
            .iter()
            .map(|&b| if b { 0.0 } else { 1.0 })
            .collect();
        assert!(s_measure(&map(4, 4, &inverted), &g).unwrap() < 0.5);
        let empty = mask(2, 2, &[0, 0, 0, 0]);
        assert!(
            (s_measure(&SaliencyMap::uniform(2, 2, 0.25), &empty).unwrap() - 0.75).abs() < 1e-15
        );
        let full = mask(2, 2, &[1, 1, 1, 1]);
        assert!(
            (s_measure(&SaliencyMap::uniform(2, 2, 0.25), &full).unwrap() - 0.25).abs() < 1e-15
        );
    }

    /// Independent transcription of the reference structure measure over
    /// row/column vectors, used as the oracle for the fixed 8x8 pair below.
    fn reference_s_measure(pred: &[Vec<f64>], gt: &[Vec<u8>]) -> f64 {
        let rows = gt.len();
        let cols = gt[0].len();
        let eps = f64::EPSILON;
        let mean2 = |m: &[Vec<f64>]| {
            let n: usize = m.iter().map(|r| r.len()).sum();
            m.iter().flatten().sum::<f64>() / n as f64
        };
        let gtf: Vec<Vec<f64>> = gt
            .iter()
            .map(|r| r.iter().map(|&v| v as f64).collect())
            .collect();
        let y = mean2(&gtf);
        if y == 0.0 {
            return 1.0 - mean2(pred);
        }
        if y == 1.0 {
            return mean2(pred);
        }
        let obj = |vals: Vec<f64>| -> f64 {
            if vals.is_empty() {
                return 0.0;
            }
            let n = vals.len() as f64;
            let x = vals.iter().sum::<f64>() / n;
            let sd = if vals.len() > 1 {
                (vals.iter().map(|v| (v - x).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            2.0 * x / (x * x + 1.0 + sd + eps)
        };
        let mut fg_vals = vec![];
        let mut bg_vals = vec![];
        for r in 0..rows {
            for c in 0..cols {
                if gt[r][c] == 1 {
                    fg_vals.push(pred[r][c]);
                } else {
                    bg_vals.push(1.0 - pred[r][c]);
                }
            }
        }
        let s_object = y * obj(fg_vals) + (1.0 - y) * obj(bg_vals);

        let total: f64 = gtf.iter().flatten().sum();
        let mut xs = 0.0;
        let mut ys = 0.0;
        for r in 0..rows {
            for c in 0..cols {
                xs += gtf[r][c] * (c + 1) as f64;
                ys += gtf[r][c] * (r + 1) as f64;
            }
        }
        let cx = (xs / total).round() as usize;
        let cy = (ys / total).round() as usize;
        let sub = |m: &Vec<Vec<f64>>, r0: usize, r1: usize, c0: usize, c1: usize| -> Vec<f64> {
            let mut v = vec![];
            for row in m.iter().take(r1).skip(r0) {
                for &val in row.iter().take(c1).skip(c0) {
                    v.push(val);
                }
            }
            v
        };
        let ssim = |p: Vec<f64>, g: Vec<f64>| -> f64 {
            let n = p.len() as f64;
            let x = p.iter().sum::<f64>() / n;
            let yy = g.iter().sum::<f64>() / n;
            let sx = p.iter().map(|v| (v - x).powi(2)).sum::<f64>() / (n - 1.0 + eps);
            let sy = g.iter().map(|v| (v - yy).powi(2)).sum::<f64>() / (n - 1.0 + eps);
            let sxy = p
                .iter()
                .zip(&g)
                .map(|(a, b)| (a - x) * (b - yy))
                .sum::<f64>()
                / (n - 1.0 + eps);
            let a = 4.0 * x * yy * sxy;
            let b = (x * x + yy * yy) * (sx + sy);
            if a != 0.0 {
                a / (b + eps)
            } else if b == 0.0 {
                1.0
            } else {
                0.0
            }
        };
        let area = (rows * cols) as f64;
        let w1 = (cx * cy) as f64 / area;
        let w2 = (cy * (cols - cx)) as f64 / area;
        let w3 = ((rows - cy) * cx) as f64 / area;
        let w4 = 1.0 - w1 - w2 - w3;
        let q = |r0, r1, c0, c1| {
            if r1 <= r0 || c1 <= c0 {
                0.0
            } else {
                ssim(
                    sub(&pred.to_vec(), r0, r1, c0, c1),
                    sub(&gtf, r0, r1, c0, c1),
                )
            }
        };
        let s_region = w1 * q(0, cy, 0, cx)
            + w2 * q(0, cy, cx, cols)
            + w3 * q(cy, rows, 0, cx)
            + w4 * q(cy, rows, cx, cols);
        (0.5 * s_object + 0.5 * s_region).max(0.0)
    }

    #[test]
    fn s_measure_matches_reference_on_fixed_8x8() {
        let gt: Vec<Vec<u8>> = vec![
            vec![0, 0, 0, 0, 0, 0, 0, 0],
            vec![0, 0, 1, 1, 1, 0, 0, 0],
            vec![0, 1, 1, 1, 1, 1, 0, 0],
            vec![0, 1, 1, 1, 1, 1, 0, 0],
            vec![0, 0, 1, 1, 1, 1, 1, 0],
            vec![0, 0, 0, 1, 1, 0, 0, 0],
            vec![0, 0, 0, 0, 0, 0, 0, 0],
            vec![0, 0, 0, 0, 0, 0, 0, 0],
        ];
        let pred: Vec<Vec<f64>> = (0..8)
            .map(|r| {
                (0..8)
                    .map(|c| ((r * 8 + c) * 37 % 101) as f64 / 100.0)
                    .collect()
            })
            .collect();
        let expect = reference_s_measure(&pred, &gt);
        let g = mask(8, 8, &gt.concat());
        let p = map(8, 8, &pred.concat());
        let got = s_measure(&p, &g).unwrap();
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");

        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let gt: Vec<Vec<u8>> = (0..8)
                .map(|_| (0..8).map(|_| u8::from(rng.random_bool(0.3))).collect())
                .collect();
            let pred: Vec<Vec<f64>> = (0..8)
                .map(|_| (0..8).map(|_| rng.random_range(0.0..=1.0)).collect())
                .collect();
            let got = s_measure(&map(8, 8, &pred.concat()), &mask(8, 8, &gt.concat())).unwrap();
            assert!((got - reference_s_measure(&pred, &gt)).abs() < 1e-12);
        }
    }

    fn pair(h: usize, w: usize) -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (
            prop::collection::vec(0.0..=1.0f64, h * w),
            prop::collection::vec(any::<bool>(), h * w),
        )
    }

    proptest! {
        #[test]
        fn f_measure_bounds(p in 0.0..=1.0f64, r in 0.0..=1.0f64) {
            let f = f_measure(p, r);
            prop_assert!((0.0..=1.0).contains(&f));
            prop_assert!(f <= p.max(r) + 1e-15);
        }

        #[test]
        fn mae_symmetry((p, g) in pair(6, 6)) {
            let pm = map(6, 6, &p);
            let gm = GroundTruthMask::new(6, 6, g.clone()).unwrap();
            let inv_p = map(6, 6, &p.iter().map(|v| 1.0 - v).collect::<Vec<_>>());
            let inv_g = GroundTruthMask::new(6, 6, g.iter().map(|b| !b).collect()).unwrap();
            prop_assert!((mae(&pm, &gm).unwrap() - mae(&inv_p, &inv_g).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn recall_non_increasing(items in prop::collection::vec(pair(5, 5), 1..5)) {
            let preds: Vec<_> = items.iter().map(|(p, _)| map(5, 5, p)).collect();
            let gts: Vec<_> = items.iter().map(|(_, g)| GroundTruthMask::new(5, 5, g.clone()).unwrap()).collect();
            let pr = pr_curve(&preds, &gts).unwrap();
            for t in 1..256 {
                prop_assert!(pr.recall[t] <= pr.recall[t - 1] + 1e-15);
            }
            let (max_f, mean_f) = max_mean_f(&pr);
            prop_assert!(max_f >= mean_f);
            let report = evaluate(&preds, &gts).unwrap();
            prop_assert!((0.0..=1.0).contains(&report.mae));
            prop_assert!((0.0..=1.0).contains(&report.s_measure));
        }
    }
}
