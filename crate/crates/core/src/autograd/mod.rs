//! A small reverse-mode tape over [`Tensor`]s.
//!
//! A [`Graph`] borrows the [`ParamStore`] for one forward/backward pass.
//! Parameters become differentiable leaves only when their group is in the
//! graph's [`GradTarget`], which is how the weight step and the architecture
//! step are kept from touching each other's gradients.

pub mod kernels;

use alloc::vec;
use alloc::vec::Vec;

use crate::params::{ParamGroup, ParamId, ParamStore};
use crate::tensor::Tensor;
pub use kernels::ConvGeom;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Which parameter groups receive gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradTarget {
    Nothing,
    Weights,
    Architecture,
    Everything,
}

impl GradTarget {
    fn includes(self, group: ParamGroup) -> bool {
        match self {
            GradTarget::Nothing => false,
            GradTarget::Weights => group == ParamGroup::Weights,
            GradTarget::Architecture => group == ParamGroup::Architecture,
            GradTarget::Everything => true,
        }
    }
}

enum Op {
    Input,
    Param(ParamId),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    Add(Var, Var),
    Mul(Var, Var),
    MulScalar(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    ScaleBy {
        x: Var,
        weights: Var,
        index: usize,
    },
    WeightedSum {
        xs: Vec<Var>,
        weights: Var,
    },
    Concat(Vec<Var>),
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Bilinear(Var),
    PixelShuffle(Var, usize),
    ReflectPad(Var, usize),
    MeanAbsDiff(Var, Var),
    DotConst(Var, Vec<f64>),
}

struct Node {
    value: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

pub struct Graph<'s> {
    store: &'s ParamStore,
    target: GradTarget,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
}

/// Gradients of a scalar with respect to parameters and to inputs created
/// with [`Graph::input_with_grad`].
pub struct Gradients {
    params: Vec<Option<Tensor>>,
    inputs: Vec<(Var, Tensor)>,
}

impl Gradients {
    pub fn none(store: &ParamStore) -> Self {
        Self {
            params: vec![None; store.len()],
            inputs: Vec::new(),
        }
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(id.index()).and_then(Option::as_ref)
    }

    pub fn input(&self, var: Var) -> Option<&Tensor> {
        self.inputs.iter().find(|(v, _)| *v == var).map(|(_, t)| t)
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().flatten().all(Tensor::is_finite)
    }

    /// Adds `scale * other` into these gradients.
    pub fn accumulate(&mut self, other: &Gradients, scale: f64) {
        for (mine, theirs) in self.params.iter_mut().zip(&other.params) {
            match (mine.as_mut(), theirs) {
                (Some(m), Some(t)) => m.scaled_add_assign(scale, t),
                (None, Some(t)) => *mine = Some(t.map(|v| v * scale)),
                _ => {}
            }
        }
    }
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore, target: GradTarget) -> Self {
        Self {
            store,
            target,
            nodes: Vec::new(),
            param_nodes: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.get(*id),
            _ => unreachable!("node without a value"),
        }
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, false)
    }

    pub fn input_with_grad(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.index()] {
            return v;
        }
        let requires_grad = self.target.includes(self.store.group(id));
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            requires_grad,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.index()] = Some(v);
        v
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, geom: ConvGeom) -> Var {
        let out = kernels::conv2d(self.value(input), self.value(weight), bias.map(|b| self.value(b)), &geom);
        let rg = self.rg(input) || self.rg(weight) || bias.is_some_and(|b| self.rg(b));
        self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            rg,
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "add of mismatched shapes");
        let mut out = ta.clone();
        out.add_assign(tb);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "mul of mismatched shapes");
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::from_vec(ta.shape(), data);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Mul(a, b), rg)
    }

    pub fn mul_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        let rg = self.rg(x);
        self.push(out, Op::MulScalar(x, c), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| 1.0 / (1.0 + libm::exp(-v)));
        let rg = self.rg(x);
        self.push(out, Op::Sigmoid(x), rg)
    }

    /// Softmax over all entries of `x` (used on rank-1 logit rows).
    pub fn softmax(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = Tensor::from_vec(t.shape(), softmax(t.data()));
        let rg = self.rg(x);
        self.push(out, Op::Softmax(x), rg)
    }

    /// `x * weights[index]`.
    pub fn scale_by(&mut self, x: Var, weights: Var, index: usize) -> Var {
        let w = self.value(weights).data()[index];
        let out = self.value(x).map(|v| v * w);
        let rg = self.rg(x) || self.rg(weights);
        self.push(out, Op::ScaleBy { x, weights, index }, rg)
    }

    /// `sum_i weights[i] * xs[i]`.
    pub fn weighted_sum(&mut self, xs: &[Var], weights: Var) -> Var {
        let w = self.value(weights).data().to_vec();
        assert_eq!(w.len(), xs.len(), "weighted sum of {} terms with {} weights", xs.len(), w.len());
        let mut out = Tensor::zeros(self.value(xs[0]).shape());
        for (&x, &wi) in xs.iter().zip(&w) {
            out.scaled_add_assign(wi, self.value(x));
        }
        let rg = self.rg(weights) || xs.iter().any(|&x| self.rg(x));
        self.push(
            out,
            Op::WeightedSum {
                xs: xs.to_vec(),
                weights,
            },
            rg,
        )
    }

    pub fn concat(&mut self, xs: &[Var]) -> Var {
        let parts: Vec<&Tensor> = xs.iter().map(|&x| self.value(x)).collect();
        let out = kernels::concat_channels(&parts);
        let rg = xs.iter().any(|&x| self.rg(x));
        self.push(out, Op::Concat(xs.to_vec()), rg)
    }

    pub fn max_pool(&mut self, x: Var, kernel: usize, stride: usize) -> Var {
        let (out, argmax) = kernels::max_pool2d(self.value(x), kernel, stride);
        let rg = self.rg(x);
        self.push(out, Op::MaxPool { x, argmax }, rg)
    }

    pub fn bilinear(&mut self, x: Var, height: usize, width: usize) -> Var {
        let out = kernels::bilinear_resize(self.value(x), height, width);
        let rg = self.rg(x);
        self.push(out, Op::Bilinear(x), rg)
    }

    pub fn pixel_shuffle(&mut self, x: Var, factor: usize) -> Var {
        let out = kernels::pixel_shuffle(self.value(x), factor);
        let rg = self.rg(x);
        self.push(out, Op::PixelShuffle(x, factor), rg)
    }

    pub fn reflect_pad(&mut self, x: Var, pad: usize) -> Var {
        let out = kernels::reflect_pad(self.value(x), pad);
        let rg = self.rg(x);
        self.push(out, Op::ReflectPad(x, pad), rg)
    }

    /// Scalar `mean(|a - b|)`.
    pub fn mean_abs_diff(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "mean_abs_diff of mismatched shapes");
        let total: f64 = ta.data().iter().zip(tb.data()).map(|(x, y)| (x - y).abs()).sum();
        let out = Tensor::scalar(total / ta.len() as f64);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::MeanAbsDiff(a, b), rg)
    }

    /// Scalar `sum_i x[i] * c[i]` with constant coefficients.
    pub fn dot_const(&mut self, x: Var, c: Vec<f64>) -> Var {
        let t = self.value(x);
        assert_eq!(t.len(), c.len());
        let out = Tensor::scalar(t.data().iter().zip(&c).map(|(a, b)| a * b).sum());
        let rg = self.rg(x);
        self.push(out, Op::DotConst(x, c), rg)
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar");
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        let mut result = Gradients {
            params: vec![None; self.store.len()],
            inputs: Vec::new(),
        };

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Input => result.inputs.push((Var(i), g)),
                Op::Param(id) => result.params[id.index()] = Some(g),
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    geom,
                } => {
                    let cg = kernels::conv2d_backward(
                        self.value(*input),
                        self.value(*weight),
                        geom,
                        &g,
                        self.rg(*input),
                        self.rg(*weight),
                        bias.is_some_and(|b| self.rg(b)),
                    );
                    if let Some(t) = cg.input {
                        accumulate(&mut grads, *input, t);
                    }
                    if let Some(t) = cg.weight {
                        accumulate(&mut grads, *weight, t);
                    }
                    if let (Some(b), Some(t)) = (bias, cg.bias) {
                        accumulate(&mut grads, *b, t);
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*a) && self.rg(*b) {
                        accumulate(&mut grads, *a, g.clone());
                        accumulate(&mut grads, *b, g);
                    } else if self.rg(*a) {
                        accumulate(&mut grads, *a, g);
                    } else {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    if self.rg(*a) {
                        let d = g.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
                        accumulate(&mut grads, *a, Tensor::from_vec(ta.shape(), d));
                    }
                    if self.rg(*b) {
                        let d = g.data().iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                        accumulate(&mut grads, *b, Tensor::from_vec(tb.shape(), d));
                    }
                }
                Op::MulScalar(x, c) => accumulate(&mut grads, *x, g.map(|v| v * c)),
                Op::Relu(x) => {
                    let y = node.value.as_ref().unwrap();
                    let d = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(gv, yv)| if *yv > 0.0 { *gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *x, Tensor::from_vec(y.shape(), d));
                }
                Op::Sigmoid(x) => {
                    let y = node.value.as_ref().unwrap();
                    let d = g.data().iter().zip(y.data()).map(|(gv, yv)| gv * yv * (1.0 - yv)).collect();
                    accumulate(&mut grads, *x, Tensor::from_vec(y.shape(), d));
                }
                Op::Softmax(x) => {
                    let y = node.value.as_ref().unwrap();
                    let inner: f64 = g.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
                    let d = g.data().iter().zip(y.data()).map(|(gv, yv)| yv * (gv - inner)).collect();
                    accumulate(&mut grads, *x, Tensor::from_vec(y.shape(), d));
                }
                Op::ScaleBy { x, weights, index } => {
                    let wt = self.value(*weights);
                    if self.rg(*weights) {
                        let tx = self.value(*x);
                        let inner: f64 = g.data().iter().zip(tx.data()).map(|(a, b)| a * b).sum();
                        let mut dw = Tensor::zeros(wt.shape());
                        dw.data_mut()[*index] = inner;
                        accumulate(&mut grads, *weights, dw);
                    }
                    if self.rg(*x) {
                        let w = wt.data()[*index];
                        accumulate(&mut grads, *x, g.map(|v| v * w));
                    }
                }
                Op::WeightedSum { xs, weights } => {
                    let wt = self.value(*weights);
                    if self.rg(*weights) {
                        let dw = xs
                            .iter()
                            .map(|&x| g.data().iter().zip(self.value(x).data()).map(|(a, b)| a * b).sum())
                            .collect();
                        accumulate(&mut grads, *weights, Tensor::from_vec(wt.shape(), dw));
                    }
                    for (&x, &w) in xs.iter().zip(wt.data()) {
                        if self.rg(x) {
                            accumulate(&mut grads, x, g.map(|v| v * w));
                        }
                    }
                }
                Op::Concat(xs) => {
                    let channels: Vec<usize> = xs.iter().map(|&x| self.value(x).dims4()[1]).collect();
                    for (&x, part) in xs.iter().zip(kernels::split_channels(&g, &channels)) {
                        if self.rg(x) {
                            accumulate(&mut grads, x, part);
                        }
                    }
                }
                Op::MaxPool { x, argmax } => {
                    let mut d = Tensor::zeros(self.value(*x).shape());
                    let dd = d.data_mut();
                    for (gv, &idx) in g.data().iter().zip(argmax) {
                        dd[idx] += *gv;
                    }
                    accumulate(&mut grads, *x, d);
                }
                Op::Bilinear(x) => {
                    let d = kernels::bilinear_resize_backward(self.value(*x).shape(), &g);
                    accumulate(&mut grads, *x, d);
                }
                Op::PixelShuffle(x, r) => accumulate(&mut grads, *x, kernels::pixel_unshuffle(&g, *r)),
                Op::ReflectPad(x, pad) => {
                    let d = kernels::reflect_pad_backward(self.value(*x).shape(), *pad, &g);
                    accumulate(&mut grads, *x, d);
                }
                Op::MeanAbsDiff(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let scale = g.item() / ta.len() as f64;
                    let da: Vec<f64> = ta
                        .data()
                        .iter()
                        .zip(tb.data())
                        .map(|(x, y)| {
                            let diff = x - y;
                            if diff > 0.0 {
                                scale
                            } else if diff < 0.0 {
                                -scale
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    if self.rg(*b) {
                        let db = da.iter().map(|v| -v).collect();
                        accumulate(&mut grads, *b, Tensor::from_vec(tb.shape(), db));
                    }
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, Tensor::from_vec(ta.shape(), da));
                    }
                }
                Op::DotConst(x, c) => {
                    let s = g.item();
                    let d = c.iter().map(|v| v * s).collect();
                    accumulate(&mut grads, *x, Tensor::from_vec(self.value(*x).shape(), d));
                }
            }
        }
        result
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, t: Tensor) {
    match &mut grads[v.0] {
        Some(g) => g.add_assign(&t),
        slot @ None => *slot = Some(t),
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| libm::exp(v - max)).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
