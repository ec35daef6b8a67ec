//! Numeric kernels: convolution via im2col and GEMM, half-pixel bilinear
//! resampling and batch normalization, each with its adjoint.

use crate::tensor::{Shape, Tensor};

/// Geometry of a square-kernel 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.padding - self.kernel) / self.stride + 1,
            (w + 2 * self.padding - self.kernel) / self.stride + 1,
        )
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }
}

/// C (m x n) = alpha * A (m x k) * B (k x n) + beta * C with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: every pointer/stride pair addresses memory inside the given
    // slices; the callers size the buffers from the same dimensions.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(x: &[f64], c: usize, h: usize, w: usize, g: ConvGeometry, cols: &mut [f64]) {
    let (oh, ow) = g.output_hw(h, w);
    let k = g.kernel;
    let mut row = 0;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        *v = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

fn col2im_add(cols: &[f64], c: usize, h: usize, w: usize, g: ConvGeometry, dx: &mut [f64]) {
    let (oh, ow) = g.output_hw(h, w);
    let k = g.kernel;
    let mut row = 0;
    for ci in 0..c {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let line = &src[oy * ow..(oy + 1) * ow];
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in line.iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Convolution of `x` (n, cin, h, w) with `weight` (cout, cin, k, k).
pub fn conv2d_forward(
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    g: ConvGeometry,
) -> Tensor {
    let xs = x.shape();
    let ws = weight.shape();
    assert_eq!(
        ws.c, xs.c,
        "conv input has {} channels, weight expects {}",
        xs.c, ws.c
    );
    assert_eq!((ws.h, ws.w), (g.kernel, g.kernel));
    let (oh, ow) = g.output_hw(xs.h, xs.w);
    let kdim = xs.c * g.kernel * g.kernel;
    let mut out = Tensor::zeros(Shape::new(xs.n, ws.n, oh, ow));
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; kdim * oh * ow]
    };
    for n in 0..xs.n {
        let b: &[f64] = if g.is_pointwise() {
            x.item(n)
        } else {
            im2col(x.item(n), xs.c, xs.h, xs.w, g, &mut cols);
            &cols
        };
        let y = out.item_mut(n);
        gemm(
            ws.n,
            kdim,
            oh * ow,
            weight.data(),
            (kdim, 1),
            b,
            (oh * ow, 1),
            0.0,
            y,
        );
        if let Some(bias) = bias {
            for (co, plane) in y.chunks_mut(oh * ow).enumerate() {
                let bv = bias.data()[co];
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    out
}

/// Gradients of a convolution; `dx` is only produced when requested.
pub struct ConvGrads {
    pub dx: Option<Tensor>,
    pub dweight: Tensor,
    pub dbias: Option<Tensor>,
}

pub fn conv2d_backward(
    x: &Tensor,
    weight: &Tensor,
    has_bias: bool,
    g: ConvGeometry,
    dy: &Tensor,
    need_dx: bool,
) -> ConvGrads {
    let xs = x.shape();
    let ws = weight.shape();
    let (oh, ow) = g.output_hw(xs.h, xs.w);
    let ohw = oh * ow;
    let kdim = xs.c * g.kernel * g.kernel;
    let mut dweight = Tensor::zeros(ws);
    let mut dbias = has_bias.then(|| Tensor::zeros(Shape::new(1, ws.n, 1, 1)));
    let mut dx = need_dx.then(|| Tensor::zeros(xs));
    let pointwise = g.is_pointwise();
    let mut cols = if pointwise {
        Vec::new()
    } else {
        vec![0.0; kdim * ohw]
    };
    let mut dcols = vec![0.0; kdim * ohw];
    for n in 0..xs.n {
        let dyn_ = dy.item(n);
        let b: &[f64] = if pointwise {
            x.item(n)
        } else {
            im2col(x.item(n), xs.c, xs.h, xs.w, g, &mut cols);
            &cols
        };
        // dW += dY * cols^T
        gemm(
            ws.n,
            ohw,
            kdim,
            dyn_,
            (ohw, 1),
            b,
            (1, ohw),
            1.0,
            dweight.data_mut(),
        );
        if let Some(db) = dbias.as_mut() {
            for (co, plane) in dyn_.chunks(ohw).enumerate() {
                db.data_mut()[co] += plane.iter().sum::<f64>();
            }
        }
        if let Some(dx) = dx.as_mut() {
            // dcols = W^T * dY
            if pointwise {
                gemm(
                    kdim,
                    ws.n,
                    ohw,
                    weight.data(),
                    (1, kdim),
                    dyn_,
                    (ohw, 1),
                    1.0,
                    dx.item_mut(n),
                );
            } else {
                gemm(
                    kdim,
                    ws.n,
                    ohw,
                    weight.data(),
                    (1, kdim),
                    dyn_,
                    (ohw, 1),
                    0.0,
                    &mut dcols,
                );
                col2im_add(&dcols, xs.c, xs.h, xs.w, g, dx.item_mut(n));
            }
        }
    }
    ConvGrads { dx, dweight, dbias }
}

/// Source sample positions for one axis of a half-pixel-centred resize.
#[derive(Debug, Clone)]
struct AxisTaps {
    lo: Vec<usize>,
    hi: Vec<usize>,
    frac: Vec<f64>,
}

fn axis_taps(input: usize, output: usize) -> AxisTaps {
    let scale = input as f64 / output as f64;
    let mut taps = AxisTaps {
        lo: Vec::with_capacity(output),
        hi: Vec::with_capacity(output),
        frac: Vec::with_capacity(output),
    };
    for o in 0..output {
        let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
        let lo = (src.floor() as usize).min(input - 1);
        let hi = (lo + 1).min(input - 1);
        taps.lo.push(lo);
        taps.hi.push(hi);
        taps.frac.push(if lo == hi { 0.0 } else { src - lo as f64 });
    }
    taps
}

/// Bilinear resize with half-pixel centres (align-corners = false).
pub fn bilinear_resize(x: &Tensor, oh: usize, ow: usize) -> Tensor {
    let s = x.shape();
    if (s.h, s.w) == (oh, ow) {
        return x.clone();
    }
    let ty = axis_taps(s.h, oh);
    let tx = axis_taps(s.w, ow);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, oh, ow));
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            let dst = out.plane_mut(n, c);
            for oy in 0..oh {
                let r0 = &src[ty.lo[oy] * s.w..(ty.lo[oy] + 1) * s.w];
                let r1 = &src[ty.hi[oy] * s.w..(ty.hi[oy] + 1) * s.w];
                let fy = ty.frac[oy];
                for ox in 0..ow {
                    let (l, h, fx) = (tx.lo[ox], tx.hi[ox], tx.frac[ox]);
                    let top = r0[l] + fx * (r0[h] - r0[l]);
                    let bottom = r1[l] + fx * (r1[h] - r1[l]);
                    dst[oy * ow + ox] = top + fy * (bottom - top);
                }
            }
        }
    }
    out
}

/// Adjoint of [`bilinear_resize`]: scatters `dy` back onto the input grid.
pub fn bilinear_resize_backward(dy: &Tensor, ih: usize, iw: usize) -> Tensor {
    let s = dy.shape();
    if (s.h, s.w) == (ih, iw) {
        return dy.clone();
    }
    let ty = axis_taps(ih, s.h);
    let tx = axis_taps(iw, s.w);
    let mut dx = Tensor::zeros(Shape::new(s.n, s.c, ih, iw));
    for n in 0..s.n {
        for c in 0..s.c {
            let g = dy.plane(n, c);
            let dst = dx.plane_mut(n, c);
            for oy in 0..s.h {
                let fy = ty.frac[oy];
                let (r0, r1) = (ty.lo[oy] * iw, ty.hi[oy] * iw);
                for ox in 0..s.w {
                    let v = g[oy * s.w + ox];
                    let fx = tx.frac[ox];
                    let (l, h) = (tx.lo[ox], tx.hi[ox]);
                    let top = v * (1.0 - fy);
                    let bottom = v * fy;
                    dst[r0 + l] += top * (1.0 - fx);
                    dst[r0 + h] += top * fx;
                    dst[r1 + l] += bottom * (1.0 - fx);
                    dst[r1 + h] += bottom * fx;
                }
            }
        }
    }
    dx
}

/// Nearest-neighbour resize using the same half-pixel source mapping.
pub fn nearest_resize(x: &Tensor, oh: usize, ow: usize) -> Tensor {
    let s = x.shape();
    if (s.h, s.w) == (oh, ow) {
        return x.clone();
    }
    let pick = |o: usize, input: usize, output: usize| -> usize {
        let src = (o as f64 + 0.5) * input as f64 / output as f64;
        (src.floor() as usize).min(input - 1)
    };
    let ys: Vec<usize> = (0..oh).map(|o| pick(o, s.h, oh)).collect();
    let xs: Vec<usize> = (0..ow).map(|o| pick(o, s.w, ow)).collect();
    Tensor::from_fn(Shape::new(s.n, s.c, oh, ow), |n, c, y, xo| {
        x.at(n, c, ys[y], xs[xo])
    })
}

/// Per-channel statistics computed by a batch-normalization forward pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
    /// Whether the normalization used statistics of the current batch.
    pub batch_stats: bool,
    pub mean: Vec<f64>,
    /// Biased batch variance.
    pub var: Vec<f64>,
}

pub fn batch_norm_forward(
    x: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    stats: Option<(&[f64], &[f64])>,
    eps: f64,
) -> (Tensor, BnCache) {
    let s = x.shape();
    let count = (s.n * s.plane()) as f64;
    let (mean, var, batch_stats) = match stats {
        Some((m, v)) => (m.to_vec(), v.to_vec(), false),
        None => {
            let mut mean = vec![0.0; s.c];
            let mut var = vec![0.0; s.c];
            for c in 0..s.c {
                let mut sum = 0.0;
                for n in 0..s.n {
                    sum += x.plane(n, c).iter().sum::<f64>();
                }
                let m = sum / count;
                let mut sq = 0.0;
                for n in 0..s.n {
                    sq += x.plane(n, c).iter().map(|v| (v - m) * (v - m)).sum::<f64>();
                }
                mean[c] = m;
                var[c] = sq / count;
            }
            (mean, var, true)
        }
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = Tensor::zeros(s);
    let mut y = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let (m, is, gm, bt) = (mean[c], inv_std[c], gamma[c], beta[c]);
            let src = x.plane(n, c);
            let xh = xhat.plane_mut(n, c);
            for (d, v) in xh.iter_mut().zip(src) {
                *d = (v - m) * is;
            }
            let out = y.plane_mut(n, c);
            for (d, v) in out.iter_mut().zip(xhat.plane(n, c)) {
                *d = gm * v + bt;
            }
        }
    }
    (
        y,
        BnCache {
            xhat,
            inv_std,
            batch_stats,
            mean,
            var,
        },
    )
}

/// Returns (dx, dgamma, dbeta).
pub fn batch_norm_backward(
    cache: &BnCache,
    gamma: &[f64],
    dy: &Tensor,
) -> (Tensor, Vec<f64>, Vec<f64>) {
    let s = dy.shape();
    let count = (s.n * s.plane()) as f64;
    let mut dgamma = vec![0.0; s.c];
    let mut dbeta = vec![0.0; s.c];
    for c in 0..s.c {
        for n in 0..s.n {
            let g = dy.plane(n, c);
            let xh = cache.xhat.plane(n, c);
            dbeta[c] += g.iter().sum::<f64>();
            dgamma[c] += g.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    let mut dx = Tensor::zeros(s);
    for c in 0..s.c {
        let scale = gamma[c] * cache.inv_std[c];
        for n in 0..s.n {
            let g = dy.plane(n, c);
            let xh = cache.xhat.plane(n, c);
            let out = dx.plane_mut(n, c);
            if cache.batch_stats {
                let (mb, mg) = (dbeta[c] / count, dgamma[c] / count);
                for i in 0..g.len() {
                    out[i] = scale * (g[i] - mb - xh[i] * mg);
                }
            } else {
                for i in 0..g.len() {
                    out[i] = scale * g[i];
                }
            }
        }
    }
    (dx, dgamma, dbeta)
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
