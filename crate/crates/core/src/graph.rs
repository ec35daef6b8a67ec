//! A small reverse-mode tape over [`Tensor`] values.
//!
//! Every forward computation of the network is recorded on a [`Graph`]. The
//! graph borrows the [`ParamStore`] immutably, so forward evaluation never
//! mutates parameters; batch statistics observed in training mode are
//! collected as [`StatUpdate`]s and applied by the caller afterwards.

use std::collections::HashMap;

use crate::ops::{self, BnCache, ConvGeometry};
use crate::params::{BatchNorm2d, Conv2d, ParamId, ParamStore, StatUpdate, BN_EPS};
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics for unfrozen normalization layers; statistics updates recorded.
    Train,
    /// Stored statistics everywhere.
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geometry: ConvGeometry,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        cache: Box<BnCache>,
        beta: Var,
    },
    Relu(Var),
    Sigmoid(Var),
    Resize(Var),
    Concat(Vec<Var>),
    Add(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

pub struct Graph<'p> {
    store: &'p ParamStore,
    mode: Mode,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    stat_updates: Vec<StatUpdate>,
}

/// Parameter gradients indexed like the store they were computed against.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, Option<&Tensor>)> {
        self.grads
            .iter()
            .enumerate()
            .map(|(i, g)| (ParamId(i), g.as_ref()))
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().flatten().all(Tensor::all_finite)
    }
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore, mode: Mode) -> Self {
        Self {
            store,
            mode,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            stat_updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    /// Constant input; gradients are not propagated into it.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, false)
    }

    /// Input that receives a gradient (used to differentiate w.r.t. data).
    pub fn input_with_grad(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push(self.store.get(id).clone(), Op::Param, true);
        self.param_vars.insert(id, v);
        v
    }

    pub fn conv2d(&mut self, x: Var, layer: &Conv2d) -> Var {
        let w = self.param(layer.weight);
        let b = layer.bias.map(|b| self.param(b));
        let value = ops::conv2d_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            layer.geometry,
        );
        self.push(
            value,
            Op::Conv {
                x,
                w,
                b,
                geometry: layer.geometry,
            },
            true,
        )
    }

    pub fn batch_norm(&mut self, x: Var, layer: &BatchNorm2d) -> Var {
        let gamma = self.param(layer.gamma);
        let beta = self.param(layer.beta);
        let stats = self.store.stat(layer.stats);
        let use_batch = self.mode == Mode::Train && !stats.frozen;
        let (value, cache) = ops::batch_norm_forward(
            self.value(x),
            self.value(gamma).data(),
            self.value(beta).data(),
            (!use_batch).then_some((stats.mean.as_slice(), stats.var.as_slice())),
            BN_EPS,
        );
        if use_batch {
            let s = self.shape(x);
            let count = (s.n * s.plane()) as f64;
            let correction = if count > 1.0 {
                count / (count - 1.0)
            } else {
                1.0
            };
            self.stat_updates.push(StatUpdate {
                stats: layer.stats,
                mean: cache.mean.clone(),
                var: cache.var.iter().map(|v| v * correction).collect(),
            });
        }
        self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                cache: Box::new(cache),
            },
            true,
        )
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(x);
        self.push(value, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(ops::sigmoid);
        let rg = self.rg(x);
        self.push(value, Op::Sigmoid(x), rg)
    }

    /// Bilinear resize; identity (no new node) when the size already matches.
    pub fn resize(&mut self, x: Var, h: usize, w: usize) -> Var {
        let s = self.shape(x);
        if (s.h, s.w) == (h, w) {
            return x;
        }
        let value = ops::bilinear_resize(self.value(x), h, w);
        let rg = self.rg(x);
        self.push(value, Op::Resize(x), rg)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        if parts.len() == 1 {
            return parts[0];
        }
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::concat_channels(&tensors);
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(value, Op::Concat(parts.to_vec()), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    /// Statistics observed by training-mode normalization layers, in call order.
    pub fn take_stat_updates(&mut self) -> Vec<StatUpdate> {
        std::mem::take(&mut self.stat_updates)
    }

    /// Smallest |pre-activation| over every ReLU recorded so far.
    pub fn relu_margin(&self) -> f64 {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(x) => Some(&self.nodes[x.0].value),
                _ => None,
            })
            .flat_map(|t| t.data().iter().map(|v| v.abs()))
            .fold(f64::INFINITY, f64::min)
    }

    /// Reverse sweep from the given output gradients. Returns parameter
    /// gradients plus the gradient reaching each requested input.
    pub fn backward(
        &self,
        seeds: &[(Var, Tensor)],
        inputs: &[Var],
    ) -> (Gradients, Vec<Option<Tensor>>) {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            assert_eq!(g.shape(), self.shape(*v), "seed gradient shape mismatch");
            accumulate(&mut grads, *v, g.clone());
        }
        for idx in (0..self.nodes.len()).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                grads[idx] = Some(g);
                continue;
            }
            match &node.op {
                Op::Input | Op::Param => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Conv { x, w, b, geometry } => {
                    let cg = ops::conv2d_backward(
                        self.value(*x),
                        self.value(*w),
                        b.is_some(),
                        *geometry,
                        &g,
                        self.rg(*x),
                    );
                    accumulate(&mut grads, *w, cg.dweight);
                    if let (Some(b), Some(db)) = (b, cg.dbias) {
                        accumulate(&mut grads, *b, db);
                    }
                    if let Some(dx) = cg.dx {
                        accumulate(&mut grads, *x, dx);
                    }
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    cache,
                } => {
                    let (dx, dgamma, dbeta) =
                        ops::batch_norm_backward(cache, self.value(*gamma).data(), &g);
                    let per_channel = self.shape(*gamma);
                    accumulate(&mut grads, *gamma, Tensor::from_vec(per_channel, dgamma));
                    accumulate(&mut grads, *beta, Tensor::from_vec(per_channel, dbeta));
                    if self.rg(*x) {
                        accumulate(&mut grads, *x, dx);
                    }
                }
                Op::Relu(x) => {
                    let xin = self.value(*x);
                    let mut dx = g;
                    for (d, &v) in dx.data_mut().iter_mut().zip(xin.data()) {
                        if v <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Sigmoid(x) => {
                    let mut dx = g;
                    for (d, &s) in dx.data_mut().iter_mut().zip(node.value.data()) {
                        *d *= s * (1.0 - s);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Resize(x) => {
                    let s = self.shape(*x);
                    accumulate(&mut grads, *x, ops::bilinear_resize_backward(&g, s.h, s.w));
                }
                Op::Concat(parts) => {
                    let sizes: Vec<usize> = parts.iter().map(|p| self.shape(*p).c).collect();
                    for (p, piece) in parts.iter().zip(g.split_channels(&sizes)) {
                        if self.rg(*p) {
                            accumulate(&mut grads, *p, piece);
                        }
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, g.clone());
                    }
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
            }
        }
        let mut by_param: Vec<Option<Tensor>> = (0..self.store.len()).map(|_| None).collect();
        for (id, v) in &self.param_vars {
            by_param[id.0] = grads[v.0].take();
        }
        let input_grads = inputs.iter().map(|v| grads[v.0].clone()).collect();
        (Gradients { grads: by_param }, input_grads)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}
