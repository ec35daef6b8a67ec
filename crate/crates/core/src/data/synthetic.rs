use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PfpnError, Result};
use crate::maps::GroundTruthMask;
use crate::tensor::Tensor;

use super::{image_shape, sample_rng, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Ellipse,
    Rectangle,
    Blob,
}

/// Parameters of the synthetic salient-shape dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_samples: usize,
    pub canvas_size: usize,
    pub shapes: Vec<ShapeKind>,
    /// 0 gives a smooth background; 1 gives strong texture and distractors.
    pub clutter_level: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_samples: 64,
            canvas_size: 96,
            shapes: vec![ShapeKind::Ellipse, ShapeKind::Rectangle, ShapeKind::Blob],
            clutter_level: 0.3,
            seed: 0,
        }
    }
}

pub const MIN_CANVAS: usize = 64;
const MIN_FOREGROUND: f64 = 0.02;
const MAX_FOREGROUND: f64 = 0.6;

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_samples == 0 {
            return Err(PfpnError::Config(
                "synthetic num_samples must be positive".into(),
            ));
        }
        if self.canvas_size < MIN_CANVAS {
            return Err(PfpnError::Config(format!(
                "synthetic canvas_size {} is below the minimum of {MIN_CANVAS}",
                self.canvas_size
            )));
        }
        if self.shapes.is_empty() {
            return Err(PfpnError::Config("synthetic shapes list is empty".into()));
        }
        if !(0.0..=1.0).contains(&self.clutter_level) {
            return Err(PfpnError::Config(format!(
                "synthetic clutter_level {} outside [0, 1]",
                self.clutter_level
            )));
        }
        Ok(())
    }
}

/// Generates `num_samples` samples named `syn_00000`, ... Each sample draws
/// from its own random stream, so sample `i` does not depend on the count.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<Sample>> {
    spec.validate()?;
    Ok((0..spec.num_samples)
        .map(|i| {
            let mut rng = sample_rng(spec.seed, i as u64);
            generate_one(spec, &format!("syn_{i:05}"), &mut rng)
        })
        .collect())
}

#[derive(Debug, Clone)]
enum Shape {
    Ellipse {
        cx: f64,
        cy: f64,
        rx: f64,
        ry: f64,
        angle: f64,
    },
    Rectangle {
        cx: f64,
        cy: f64,
        hw: f64,
        hh: f64,
        angle: f64,
    },
    Blob {
        cx: f64,
        cy: f64,
        r: f64,
        harmonics: Vec<(f64, f64)>,
    },
}

impl Shape {
    fn random(kind: ShapeKind, size: f64, rng: &mut ChaCha8Rng) -> Self {
        let cx = rng.random_range(0.2..0.8) * size;
        let cy = rng.random_range(0.2..0.8) * size;
        let angle = rng.random_range(0.0..PI);
        match kind {
            ShapeKind::Ellipse => Shape::Ellipse {
                cx,
                cy,
                rx: rng.random_range(0.08..0.3) * size,
                ry: rng.random_range(0.08..0.3) * size,
                angle,
            },
            ShapeKind::Rectangle => Shape::Rectangle {
                cx,
                cy,
                hw: rng.random_range(0.07..0.28) * size,
                hh: rng.random_range(0.07..0.28) * size,
                angle,
            },
            ShapeKind::Blob => Shape::Blob {
                cx,
                cy,
                r: rng.random_range(0.1..0.28) * size,
                harmonics: (2..=4)
                    .map(|_| (rng.random_range(0.0..0.25), rng.random_range(0.0..2.0 * PI)))
                    .collect(),
            },
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let rotate = |cx: f64, cy: f64, a: f64| {
            let (dx, dy) = (x - cx, y - cy);
            (dx * a.cos() + dy * a.sin(), -dx * a.sin() + dy * a.cos())
        };
        match self {
            Shape::Ellipse {
                cx,
                cy,
                rx,
                ry,
                angle,
            } => {
                let (u, v) = rotate(*cx, *cy, *angle);
                (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
            }
            Shape::Rectangle {
                cx,
                cy,
                hw,
                hh,
                angle,
            } => {
                let (u, v) = rotate(*cx, *cy, *angle);
                u.abs() <= *hw && v.abs() <= *hh
            }
            Shape::Blob {
                cx,
                cy,
                r,
                harmonics,
            } => {
                let (dx, dy) = (x - cx, y - cy);
                let theta = dy.atan2(dx);
                let radius = r
                    * (1.0
                        + harmonics
                            .iter()
                            .enumerate()
                            .map(|(k, (amp, phase))| amp * ((k + 2) as f64 * theta + phase).sin())
                            .sum::<f64>());
                dx.hypot(dy) <= radius
            }
        }
    }
}

/// Smooth random field: a few low-frequency cosines, roughly in [-1, 1].
fn texture(
    rng: &mut ChaCha8Rng,
    size: f64,
    min_freq: f64,
    max_freq: f64,
) -> impl Fn(f64, f64) -> f64 {
    let waves: Vec<(f64, f64, f64)> = (0..4)
        .map(|_| {
            let freq = rng.random_range(min_freq..max_freq) * 2.0 * PI / size;
            let dir = rng.random_range(0.0..2.0 * PI);
            (
                freq * dir.cos(),
                freq * dir.sin(),
                rng.random_range(0.0..2.0 * PI),
            )
        })
        .collect();
    move |x, y| {
        waves
            .iter()
            .map(|(a, b, p)| (a * x + b * y + p).cos())
            .sum::<f64>()
            / 2.0
    }
}

fn tinted(luminance: f64, rng: &mut ChaCha8Rng) -> [f64; 3] {
    let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.08..0.08));
    let mean = tint.iter().sum::<f64>() / 3.0;
    tint.map(|t| luminance + t - mean)
}

fn generate_one(spec: &SyntheticSpec, id: &str, rng: &mut ChaCha8Rng) -> Sample {
    let n = spec.canvas_size;
    let size = n as f64;
    let clutter = spec.clutter_level;

    let (mask, shapes) = loop {
        let count = rng.random_range(1..=3);
        let shapes: Vec<Shape> = (0..count)
            .map(|_| {
                let kind = spec.shapes[rng.random_range(0..spec.shapes.len())];
                Shape::random(kind, size, rng)
            })
            .collect();
        let mask: Vec<bool> = (0..n * n)
            .map(|i| {
                let (x, y) = ((i % n) as f64 + 0.5, (i / n) as f64 + 0.5);
                shapes.iter().any(|s| s.contains(x, y))
            })
            .collect();
        let frac = mask.iter().filter(|&&b| b).count() as f64 / (n * n) as f64;
        if (MIN_FOREGROUND..=MAX_FOREGROUND).contains(&frac) {
            break (mask, shapes);
        }
    };

    // Foreground and background luminances sit on opposite sides of mid-grey.
    let dark_background = rng.random_bool(0.5);
    let (bg_l, fg_l) = {
        let low = rng.random_range(0.12..0.3);
        let high = rng.random_range(0.7..0.88);
        if dark_background {
            (low, high)
        } else {
            (high, low)
        }
    };
    let bg = tinted(bg_l, rng);
    let fg: Vec<[f64; 3]> = shapes
        .iter()
        .map(|_| tinted(fg_l + rng.random_range(-0.05..0.05), rng))
        .collect();

    let gradient = (rng.random_range(-0.04..0.04), rng.random_range(-0.04..0.04));
    let background_texture = texture(rng, size, 2.0, 8.0);
    let fine_texture = texture(rng, size, 8.0, 16.0);
    let foreground_texture = texture(rng, size, 3.0, 10.0);

    // Distractors: small patches coloured towards the foreground luminance.
    let distractors: Vec<(Shape, f64)> = (0..(clutter * 5.0).round() as usize)
        .map(|_| {
            let kind = spec.shapes[rng.random_range(0..spec.shapes.len())];
            let mut shape = Shape::random(kind, size * 0.35, rng);
            let (ox, oy) = (
                rng.random_range(0.0..0.65) * size,
                rng.random_range(0.0..0.65) * size,
            );
            match &mut shape {
                Shape::Ellipse { cx, cy, .. }
                | Shape::Rectangle { cx, cy, .. }
                | Shape::Blob { cx, cy, .. } => {
                    *cx += ox;
                    *cy += oy;
                }
            }
            (shape, rng.random_range(0.45..0.9) * clutter)
        })
        .collect();

    let image = Tensor::from_fn(image_shape(n, n), |_, c, y, x| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let v = if mask[y * n + x] {
            let owner = shapes.iter().position(|s| s.contains(px, py)).unwrap_or(0);
            fg[owner][c] + 0.04 * foreground_texture(px, py)
        } else {
            let mut v = bg[c]
                + gradient.0 * (px / size - 0.5)
                + gradient.1 * (py / size - 0.5)
                + clutter * (0.18 * background_texture(px, py) + 0.1 * fine_texture(px, py));
            for (shape, strength) in &distractors {
                if shape.contains(px, py) {
                    v += strength * (fg_l - bg_l);
                }
            }
            v
        };
        v.clamp(0.0, 1.0)
    });
    let mask = GroundTruthMask::new(n, n, mask).expect("mask matches canvas");
    Sample::new(id, image, mask).expect("generated sample is valid")
}
