//! Dense NCHW tensors of `f64`.

use serde::{Deserialize, Serialize};

/// Shape of a 4-D tensor in (batch, channels, height, width) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Elements in one batch item.
    pub const fn item(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.numel()],
        }
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        Self {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    /// Panics if `data.len()` does not match the shape.
    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            shape.numel(),
            "tensor data length {} does not match shape {shape}",
            data.len()
        );
        Self { shape, data }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + y) * self.shape.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, value: f64) {
        let i = self.index(n, c, y, x);
        self.data[i] = value;
    }

    /// Contiguous slice holding batch item `n`.
    pub fn item(&self, n: usize) -> &[f64] {
        let len = self.shape.item();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [f64] {
        let len = self.shape.item();
        &mut self.data[n * len..(n + 1) * len]
    }

    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let len = self.shape.plane();
        let start = (n * self.shape.c + c) * len;
        &self.data[start..start + len]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let len = self.shape.plane();
        let start = (n * self.shape.c + c) * len;
        &mut self.data[start..start + len]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "shape mismatch in add_assign");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Splits the channel axis into consecutive chunks of the given sizes.
    pub fn split_channels(&self, sizes: &[usize]) -> Vec<Tensor> {
        assert_eq!(sizes.iter().sum::<usize>(), self.shape.c);
        let plane = self.shape.plane();
        let mut out: Vec<Tensor> = sizes
            .iter()
            .map(|&c| Tensor::zeros(Shape::new(self.shape.n, c, self.shape.h, self.shape.w)))
            .collect();
        for n in 0..self.shape.n {
            let src = self.item(n);
            let mut offset = 0;
            for (part, &c) in out.iter_mut().zip(sizes) {
                part.item_mut(n)
                    .copy_from_slice(&src[offset * plane..(offset + c) * plane]);
                offset += c;
            }
        }
        out
    }

    /// Concatenates along the channel axis; all parts must agree on n, h, w.
    pub fn concat_channels(parts: &[&Tensor]) -> Tensor {
        let first = parts[0].shape;
        let c: usize = parts.iter().map(|p| p.shape.c).sum();
        for p in parts {
            assert_eq!(
                (p.shape.n, p.shape.h, p.shape.w),
                (first.n, first.h, first.w),
                "concat parts disagree on batch or spatial size"
            );
        }
        let shape = Shape::new(first.n, c, first.h, first.w);
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..first.n {
            for p in parts {
                data.extend_from_slice(p.item(n));
            }
        }
        Tensor { shape, data }
    }

    /// Stacks single-item tensors along the batch axis.
    pub fn stack(items: &[Tensor]) -> Tensor {
        let first = items[0].shape;
        let mut data = Vec::with_capacity(first.item() * items.len());
        for t in items {
            assert_eq!(t.shape.item(), first.item());
            assert_eq!(
                (t.shape.c, t.shape.h, t.shape.w),
                (first.c, first.h, first.w)
            );
            data.extend_from_slice(&t.data);
        }
        let n = items.iter().map(|t| t.shape.n).sum();
        Tensor {
            shape: Shape::new(n, first.c, first.h, first.w),
            data,
        }
    }

    pub fn select_item(&self, n: usize) -> Tensor {
        Tensor {
            shape: Shape::new(1, self.shape.c, self.shape.h, self.shape.w),
            data: self.item(n).to_vec(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
