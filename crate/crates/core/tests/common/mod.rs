//! Shared fixtures and scalar-loop reference implementations used as test
//! oracles. Nothing here calls into the crate's numeric kernels.
#![allow(dead_code)]

use pfpn::model::{BackboneSpec, FeaturePyramid, ModelConfig};
use pfpn::params::ParamStore;
use pfpn::tensor::{Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const BN_EPS: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Small model with `n` levels, `t` polishing modules and a tiny backbone.
pub fn tiny_config(n: usize, t: usize, d1: usize, d2: usize, input: usize) -> ModelConfig {
    ModelConfig {
        num_levels: n,
        num_fpms: t,
        tm1_channels: d1,
        tm2_channels: d2,
        input_size: input,
        backbone: BackboneSpec {
            channels: (0..n).map(|i| 3 + i).collect(),
            convs_per_level: 1,
            ..BackboneSpec::default()
        },
        ..ModelConfig::default()
    }
}

/// Random pyramid with ceil-halving sizes starting at `top`.
pub fn random_pyramid(
    r: &mut ChaCha8Rng,
    n: usize,
    channels: usize,
    top: usize,
    batch: usize,
) -> FeaturePyramid {
    let mut size = top;
    let mut levels = Vec::new();
    for _ in 0..n {
        let shape = Shape::new(batch, channels, size, size);
        let data = (0..shape.numel())
            .map(|_| r.random_range(-1.0..1.0))
            .collect();
        levels.push(Tensor::from_vec(shape, data));
        size = size.div_ceil(2);
    }
    FeaturePyramid::new(levels).unwrap()
}

/// Randomizes every normalization layer's affine terms and running statistics.
pub fn randomize_normalization(store: &mut ParamStore, r: &mut ChaCha8Rng) {
    let names: Vec<String> = store.stats().iter().map(|s| s.name.clone()).collect();
    for name in &names {
        for (suffix, lo, hi) in [("gamma", 0.5, 1.5), ("beta", -0.3, 0.3)] {
            let id = store.find(&format!("{name}.{suffix}")).unwrap();
            for v in store.get_mut(id).data_mut() {
                *v = r.random_range(lo..hi);
            }
        }
    }
    for s in store.stats_mut() {
        for m in &mut s.mean {
            *m = r.random_range(-0.2..0.2);
        }
        for v in &mut s.var {
            *v = r.random_range(0.5..2.0);
        }
    }
}

pub fn set_param(store: &mut ParamStore, name: &str, value: f64) {
    let id = store
        .find(name)
        .unwrap_or_else(|| panic!("no parameter {name}"));
    store
        .get_mut(id)
        .data_mut()
        .iter_mut()
        .for_each(|v| *v = value);
}

/// `max |a - b| / max |b|` over all entries.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let scale = b.iter().map(|v| v.abs()).fold(0.0, f64::max);
    diff / scale.max(1e-300)
}

/// Channel-major feature map of one batch item.
#[derive(Debug, Clone)]
pub struct Map {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub v: Vec<f64>,
}

impl Map {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            v: vec![0.0; c * h * w],
        }
    }

    pub fn from_tensor(t: &Tensor, n: usize) -> Self {
        let s = t.shape();
        let start = n * s.c * s.h * s.w;
        Self {
            c: s.c,
            h: s.h,
            w: s.w,
            v: t.data()[start..start + s.c * s.h * s.w].to_vec(),
        }
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.v[(c * self.h + y) * self.w + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, value: f64) {
        self.v[(c * self.h + y) * self.w + x] = value;
    }
}

/// Direct-sum convolution, stride 1, zero padding `k / 2`.
pub fn conv(input: &Map, store: &ParamStore, name: &str) -> Map {
    let wid = store.find(&format!("{name}.weight")).unwrap();
    let w = store.get(wid);
    let ws = w.shape();
    let (out_c, in_c, k) = (ws.n, ws.c, ws.h);
    assert_eq!(in_c, input.c, "{name}");
    let bias = store
        .find(&format!("{name}.bias"))
        .map(|b| store.get(b).data().to_vec());
    let pad = (k / 2) as isize;
    let mut out = Map::zeros(out_c, input.h, input.w);
    for o in 0..out_c {
        for y in 0..input.h {
            for x in 0..input.w {
                let mut acc = bias.as_ref().map_or(0.0, |b| b[o]);
                for i in 0..in_c {
                    for ky in 0..k {
                        for kx in 0..k {
                            let sy = y as isize + ky as isize - pad;
                            let sx = x as isize + kx as isize - pad;
                            if sy < 0 || sx < 0 || sy >= input.h as isize || sx >= input.w as isize
                            {
                                continue;
                            }
                            acc += w.at(o, i, ky, kx) * input.at(i, sy as usize, sx as usize);
                        }
                    }
                }
                out.set(o, y, x, acc);
            }
        }
    }
    out
}

/// Batch normalization with stored statistics.
pub fn bn_eval(input: &Map, store: &ParamStore, name: &str) -> Map {
    let stats = store.stats().iter().find(|s| s.name == name).unwrap();
    let gamma = store
        .get(store.find(&format!("{name}.gamma")).unwrap())
        .data()
        .to_vec();
    let beta = store
        .get(store.find(&format!("{name}.beta")).unwrap())
        .data()
        .to_vec();
    let mut out = input.clone();
    for c in 0..input.c {
        for y in 0..input.h {
            for x in 0..input.w {
                let z = (input.at(c, y, x) - stats.mean[c]) / (stats.var[c] + BN_EPS).sqrt();
                out.set(c, y, x, gamma[c] * z + beta[c]);
            }
        }
    }
    out
}

pub fn relu(m: &Map) -> Map {
    Map {
        v: m.v.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect(),
        ..m.clone()
    }
}

pub fn sigmoid(m: &Map) -> Map {
    Map {
        v: m.v.iter().map(|&x| 1.0 / (1.0 + (-x).exp())).collect(),
        ..m.clone()
    }
}

pub fn add(a: &Map, b: &Map) -> Map {
    Map {
        v: a.v.iter().zip(&b.v).map(|(x, y)| x + y).collect(),
        ..a.clone()
    }
}

pub fn concat(parts: &[Map]) -> Map {
    let (h, w) = (parts[0].h, parts[0].w);
    let c = parts.iter().map(|p| p.c).sum();
    Map {
        c,
        h,
        w,
        v: parts.iter().flat_map(|p| p.v.iter().copied()).collect(),
    }
}

/// Bilinear resize with half-pixel centers: source coordinate
/// `max((d + 0.5) * in / out - 0.5, 0)`, neighbours clamped at the border.
pub fn bilinear(m: &Map, oh: usize, ow: usize) -> Map {
    let coord = |d: usize, inn: usize, out: usize| {
        let src = ((d as f64 + 0.5) * inn as f64 / out as f64 - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(inn - 1);
        let i1 = (i0 + 1).min(inn - 1);
        (i0, i1, src - i0 as f64)
    };
    let mut out = Map::zeros(m.c, oh, ow);
    for c in 0..m.c {
        for y in 0..oh {
            let (y0, y1, fy) = coord(y, m.h, oh);
            for x in 0..ow {
                let (x0, x1, fx) = coord(x, m.w, ow);
                let top = (1.0 - fx) * m.at(c, y0, x0) + fx * m.at(c, y0, x1);
                let bot = (1.0 - fx) * m.at(c, y1, x0) + fx * m.at(c, y1, x1);
                out.set(c, y, x, (1.0 - fy) * top + fy * bot);
            }
        }
    }
    out
}

/// Polished level `k` (1-based) of module `t`, evaluated term by term:
/// `ReLU(BN(Conv1x1(concat_j up(ReLU(BN(Conv3x3(f_j)))))) + f_k)`.
pub fn fpm_block_oracle(store: &ParamStore, t: usize, levels: &[Map], k: usize) -> Map {
    let fk = &levels[k - 1];
    let branches: Vec<Map> = (k..=levels.len())
        .map(|j| {
            let name = format!("fpm.{t}.{k}.branch{j}");
            let c = relu(&bn_eval(
                &conv(&levels[j - 1], store, &format!("{name}.conv")),
                store,
                &format!("{name}.bn"),
            ));
            if j == k {
                c
            } else {
                bilinear(&c, fk.h, fk.w)
            }
        })
        .collect();
    let fuse = format!("fpm.{t}.{k}.fuse");
    let p = bn_eval(
        &conv(&concat(&branches), store, &format!("{fuse}.conv")),
        store,
        &format!("{fuse}.bn"),
    );
    relu(&add(&p, fk))
}

/// Fusion head: conv3x3 + ReLU, conv3x3 + ReLU, conv1x1 + sigmoid over the
/// concatenated levels.
pub fn fusion_oracle(store: &ParamStore, levels: &[Map]) -> Map {
    let x = relu(&conv(&concat(levels), store, "fm.conv1"));
    let x = relu(&conv(&x, store, "fm.conv2"));
    sigmoid(&conv(&x, store, "fm.out"))
}

pub fn pyramid_maps(p: &FeaturePyramid, n: usize) -> Vec<Map> {
    p.levels().iter().map(|l| Map::from_tensor(l, n)).collect()
}
