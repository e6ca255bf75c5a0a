//! Minimal reverse-mode automatic differentiation over f64 ndarray tensors.
//!
//! A [`Graph`] is a per-sample tape: forward builder methods compute values
//! eagerly and record the op, [`Graph::backward`] walks the tape once in
//! reverse. Tensors are per-sample (`[C,H,W]` images, `[L,D]` token
//! matrices, `[D]` vectors); batching is handled by callers fanning out one
//! graph per sample, which keeps every reduction order fixed and results
//! bitwise reproducible.
//!
//! Parameters enter a graph by name via [`Graph::param`]; after `backward`,
//! [`Gradients::by_name`] collects per-parameter gradients. A parameter that
//! never entered the graph has no gradient entry at all, which is what makes
//! the branch-isolation guarantees exact rather than approximate.

pub mod kernels;
pub mod nn;
pub mod store;

use ndarray::{ArrayD, Axis, Ix2, Ix3, IxDyn, Slice};
use std::collections::BTreeMap;

use kernels::*;
use store::ParamStore;

pub type TensorD = ArrayD<f64>;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Value(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf { param: Option<String> },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    ScalarMul(usize, f64),
    ScalarAdd(usize),
    MatMul(usize, usize),
    BatMatMul(usize, usize),
    Conv2d { x: usize, w: usize, stride: usize, pad: usize },
    AvgPool2(usize),
    Upsample2(usize),
    Concat { xs: Vec<usize>, axis: usize },
    SliceAxis { x: usize, axis: usize, start: usize, end: usize },
    Reshape(usize),
    Transpose { x: usize, perm: Vec<usize> },
    LeakyRelu { x: usize, slope: f64 },
    Silu(usize),
    Sigmoid(usize),
    Exp(usize),
    Ln(usize),
    Abs(usize),
    Clamp { x: usize, lo: f64, hi: f64 },
    GroupNorm { x: usize, groups: usize, eps: f64 },
    ChannelStdNorm { x: usize, eps: f64 },
    LayerNorm { x: usize, eps: f64 },
    Softmax(usize),
    AddVec { x: usize, v: usize, axis: usize },
    MulVec { x: usize, v: usize, axis: usize },
    MeanAll(usize),
    SumAll(usize),
    SpatialMean(usize),
}

struct Node {
    value: TensorD,
    op: Op,
}

/// Per-parameter gradients plus per-node access for tests.
pub struct Gradients {
    by_node: Vec<Option<TensorD>>,
}

impl Gradients {
    /// Gradient of the backward root with respect to `v`, if any path existed.
    pub fn of(&self, v: Value) -> Option<&TensorD> {
        self.by_node[v.0].as_ref()
    }
}

/// Reverse-mode tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::with_capacity(256) }
    }

    pub fn value(&self, v: Value) -> &TensorD {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Value) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: TensorD, op: Op) -> Value {
        self.nodes.push(Node { value: standardize(value), op });
        Value(self.nodes.len() - 1)
    }

    // ---- leaves ----

    /// Insert an input/constant tensor.
    pub fn constant(&mut self, t: TensorD) -> Value {
        self.push(t, Op::Leaf { param: None })
    }

    /// Insert a named parameter from the store. Gradients are collected
    /// under this name by [`Gradients::by_name`] via [`Graph::param_grads`].
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Value {
        let t = store.get(name).clone();
        self.push(t, Op::Leaf { param: Some(name.to_string()) })
    }

    pub fn scalar(&mut self, v: f64) -> Value {
        self.constant(ArrayD::from_elem(IxDyn(&[1]), v))
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: Value, b: Value) -> Value {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let v = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(v, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Value, b: Value) -> Value {
        assert_eq!(self.shape(a), self.shape(b), "sub shape mismatch");
        let v = &self.nodes[a.0].value - &self.nodes[b.0].value;
        self.push(v, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Value, b: Value) -> Value {
        assert_eq!(self.shape(a), self.shape(b), "mul shape mismatch");
        let v = &self.nodes[a.0].value * &self.nodes[b.0].value;
        self.push(v, Op::Mul(a.0, b.0))
    }

    pub fn neg(&mut self, a: Value) -> Value {
        let v = self.nodes[a.0].value.mapv(|x| -x);
        self.push(v, Op::Neg(a.0))
    }

    pub fn scalar_mul(&mut self, a: Value, k: f64) -> Value {
        let v = self.nodes[a.0].value.mapv(|x| x * k);
        self.push(v, Op::ScalarMul(a.0, k))
    }

    pub fn scalar_add(&mut self, a: Value, k: f64) -> Value {
        let v = self.nodes[a.0].value.mapv(|x| x + k);
        self.push(v, Op::ScalarAdd(a.0))
    }

    // ---- linear algebra ----

    /// `[m,k] x [k,n] -> [m,n]`
    pub fn matmul(&mut self, a: Value, b: Value) -> Value {
        let av = self.nodes[a.0].value.view().into_dimensionality::<Ix2>().expect("matmul lhs rank");
        let bv = self.nodes[b.0].value.view().into_dimensionality::<Ix2>().expect("matmul rhs rank");
        assert_eq!(av.ncols(), bv.nrows(), "matmul inner dim mismatch");
        let v = av.dot(&bv).into_dyn();
        self.push(v, Op::MatMul(a.0, b.0))
    }

    /// `[b,m,k] x [b,k,n] -> [b,m,n]`
    pub fn bat_matmul(&mut self, a: Value, b: Value) -> Value {
        let av = self.nodes[a.0].value.view().into_dimensionality::<Ix3>().expect("bmm lhs rank");
        let bv = self.nodes[b.0].value.view().into_dimensionality::<Ix3>().expect("bmm rhs rank");
        let (ba, m, k) = av.dim();
        let (bb, k2, n) = bv.dim();
        assert_eq!(ba, bb, "bmm batch mismatch");
        assert_eq!(k, k2, "bmm inner dim mismatch");
        let mut out = ndarray::Array3::<f64>::zeros((ba, m, n));
        for i in 0..ba {
            out.index_axis_mut(Axis(0), i)
                .assign(&av.index_axis(Axis(0), i).dot(&bv.index_axis(Axis(0), i)));
        }
        self.push(out.into_dyn(), Op::BatMatMul(a.0, b.0))
    }

    /// 2-D convolution of `[Ci,H,W]` with weights `[Co,Ci,k,k]`.
    pub fn conv2d(&mut self, x: Value, w: Value, stride: usize, pad: usize) -> Value {
        let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix3>().expect("conv input rank");
        let wd = self.nodes[w.0].value.shape().to_vec();
        assert_eq!(wd.len(), 4, "conv weight rank");
        let (ci, h, wdt) = xv.dim();
        assert_eq!(wd[1], ci, "conv weight in-channels mismatch");
        assert_eq!(wd[2], wd[3], "conv kernel must be square");
        let k = wd[2];
        let (co, ho, wo) = (wd[0], conv_out_size(h, k, stride, pad), conv_out_size(wdt, k, stride, pad));
        let col = im2col(&xv, k, stride, pad);
        let wmat = self.nodes[w.0]
            .value
            .view()
            .into_shape_with_order((co, ci * k * k))
            .expect("conv weight reshape");
        let out = wmat.dot(&col);
        let out = out.into_shape_with_order((co, ho, wo)).expect("conv output reshape").into_dyn();
        self.push(out, Op::Conv2d { x: x.0, w: w.0, stride, pad })
    }

    pub fn avg_pool2(&mut self, x: Value) -> Value {
        let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix3>().expect("pool input rank");
        let v = kernels::avg_pool2(&xv).into_dyn();
        self.push(v, Op::AvgPool2(x.0))
    }

    pub fn upsample2(&mut self, x: Value) -> Value {
        let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix3>().expect("upsample input rank");
        let v = kernels::upsample2(&xv).into_dyn();
        self.push(v, Op::Upsample2(x.0))
    }

    // ---- structure ----

    pub fn concat(&mut self, xs: &[Value], axis: usize) -> Value {
        assert!(!xs.is_empty());
        let views: Vec<_> = xs.iter().map(|v| self.nodes[v.0].value.view()).collect();
        let v = ndarray::concatenate(Axis(axis), &views).expect("concat shape mismatch");
        self.push(v, Op::Concat { xs: xs.iter().map(|v| v.0).collect(), axis })
    }

    pub fn slice_axis(&mut self, x: Value, axis: usize, start: usize, end: usize) -> Value {
        let v = self.nodes[x.0]
            .value
            .slice_axis(Axis(axis), Slice::from(start..end))
            .to_owned();
        self.push(v, Op::SliceAxis { x: x.0, axis, start, end })
    }

    pub fn reshape(&mut self, x: Value, shape: &[usize]) -> Value {
        let v = self.nodes[x.0]
            .value
            .clone()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape element count mismatch");
        self.push(v, Op::Reshape(x.0))
    }

    pub fn transpose(&mut self, x: Value, perm: &[usize]) -> Value {
        let v = self.nodes[x.0].value.view().permuted_axes(IxDyn(perm)).to_owned();
        self.push(v, Op::Transpose { x: x.0, perm: perm.to_vec() })
    }

    // ---- nonlinearities ----

    pub fn leaky_relu(&mut self, x: Value, slope: f64) -> Value {
        let v = self.nodes[x.0].value.mapv(|x| if x >= 0.0 { x } else { slope * x });
        self.push(v, Op::LeakyRelu { x: x.0, slope })
    }

    pub fn relu(&mut self, x: Value) -> Value {
        self.leaky_relu(x, 0.0)
    }

    pub fn silu(&mut self, x: Value) -> Value {
        let v = self.nodes[x.0].value.mapv(|x| x * sigmoid_scalar(x));
        self.push(v, Op::Silu(x.0))
    }

    pub fn sigmoid(&mut self, x: Value) -> Value {
        let v = self.nodes[x.0].value.mapv(sigmoid_scalar);
        self.push(v, Op::Sigmoid(x.0))
    }

    pub fn exp(&mut self, x: Value) -> Value {
        let v = self.nodes[x.0].value.mapv(f64::exp);
        self.push(v, Op::Exp(x.0))
    }

    pub fn ln(&mut self, x: Value) -> Value {
        let v = self.nodes[x.0].value.mapv(f64::ln);
        self.push(v, Op::Ln(x.0))
    }

    pub fn abs(&mut self, x: Value) -> Value {
        let v = self.nodes[x.0].value.mapv(f64::abs);
        self.push(v, Op::Abs(x.0))
    }

    pub fn clamp(&mut self, x: Value, lo: f64, hi: f64) -> Value {
        let v = self.nodes[x.0].value.mapv(|x| x.clamp(lo, hi));
        self.push(v, Op::Clamp { x: x.0, lo, hi })
    }

    // ---- normalization ----

    /// Group normalization over `[C,H,W]`: each of `groups` channel groups is
    /// normalized to zero mean / unit variance using `1/sqrt(var+eps)`.
    pub fn group_norm(&mut self, x: Value, groups: usize, eps: f64) -> Value {
        let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix3>().expect("group_norm rank");
        let (c, h, w) = xv.dim();
        assert!(c % groups == 0, "channels {c} not divisible by groups {groups}");
        let mut out = ndarray::Array3::<f64>::zeros((c, h, w));
        let per = c / groups;
        for gidx in 0..groups {
            let sl = xv.slice(ndarray::s![gidx * per..(gidx + 1) * per, .., ..]);
            let n = sl.len() as f64;
            let mu = sl.sum() / n;
            let var = sl.mapv(|x| (x - mu) * (x - mu)).sum() / n;
            let inv = 1.0 / (var + eps).sqrt();
            out.slice_mut(ndarray::s![gidx * per..(gidx + 1) * per, .., ..])
                .assign(&sl.mapv(|x| (x - mu) * inv));
        }
        self.push(out.into_dyn(), Op::GroupNorm { x: x.0, groups, eps })
    }

    /// Per-channel normalization `(x - mean) / (std + eps)` over `[C,H,W]`,
    /// with population std. This is the normalization inside AdaIN.
    pub fn channel_std_norm(&mut self, x: Value, eps: f64) -> Value {
        let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix3>().expect("channel norm rank");
        let (c, h, w) = xv.dim();
        let mut out = ndarray::Array3::<f64>::zeros((c, h, w));
        for ci in 0..c {
            let sl = xv.index_axis(Axis(0), ci);
            let n = sl.len() as f64;
            let mu = sl.sum() / n;
            let sigma = (sl.mapv(|x| (x - mu) * (x - mu)).sum() / n).sqrt();
            let inv = 1.0 / (sigma + eps);
            out.index_axis_mut(Axis(0), ci).assign(&sl.mapv(|x| (x - mu) * inv));
        }
        self.push(out.into_dyn(), Op::ChannelStdNorm { x: x.0, eps })
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&mut self, x: Value, eps: f64) -> Value {
        let xv = &self.nodes[x.0].value;
        let last = xv.ndim() - 1;
        let n = xv.shape()[last] as f64;
        let mut out = xv.clone();
        for mut row in out.lanes_mut(Axis(last)) {
            let mu = row.sum() / n;
            let var = row.mapv(|x| (x - mu) * (x - mu)).sum() / n;
            let inv = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|x| (x - mu) * inv);
        }
        self.push(out, Op::LayerNorm { x: x.0, eps })
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Value) -> Value {
        let xv = &self.nodes[x.0].value;
        let last = xv.ndim() - 1;
        let mut out = xv.clone();
        for mut row in out.lanes_mut(Axis(last)) {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            row.mapv_inplace(|x| (x - m).exp());
            let s = row.sum();
            row.mapv_inplace(|x| x / s);
        }
        self.push(out, Op::Softmax(x.0))
    }

    // ---- broadcast against a vector ----

    /// Add vector `v` (length = `shape[axis]`) broadcast along all other axes.
    pub fn add_vec(&mut self, x: Value, v: Value, axis: usize) -> Value {
        let out = {
            let xv = &self.nodes[x.0].value;
            let vv = &self.nodes[v.0].value;
            assert_eq!(vv.ndim(), 1, "add_vec vector rank");
            assert_eq!(xv.shape()[axis], vv.len(), "add_vec length mismatch");
            let mut out = xv.clone();
            for (i, mut lane) in out.axis_iter_mut(Axis(axis)).enumerate() {
                lane.mapv_inplace(|x| x + vv[i]);
            }
            out
        };
        self.push(out, Op::AddVec { x: x.0, v: v.0, axis })
    }

    /// Multiply by vector `v` broadcast along all other axes.
    pub fn mul_vec(&mut self, x: Value, v: Value, axis: usize) -> Value {
        let out = {
            let xv = &self.nodes[x.0].value;
            let vv = &self.nodes[v.0].value;
            assert_eq!(vv.ndim(), 1, "mul_vec vector rank");
            assert_eq!(xv.shape()[axis], vv.len(), "mul_vec length mismatch");
            let mut out = xv.clone();
            for (i, mut lane) in out.axis_iter_mut(Axis(axis)).enumerate() {
                lane.mapv_inplace(|x| x * vv[i]);
            }
            out
        };
        self.push(out, Op::MulVec { x: x.0, v: v.0, axis })
    }

    // ---- reductions ----

    pub fn mean_all(&mut self, x: Value) -> Value {
        let m = self.nodes[x.0].value.mean().expect("mean of empty tensor");
        self.push(ArrayD::from_elem(IxDyn(&[1]), m), Op::MeanAll(x.0))
    }

    pub fn sum_all(&mut self, x: Value) -> Value {
        let s = self.nodes[x.0].value.sum();
        self.push(ArrayD::from_elem(IxDyn(&[1]), s), Op::SumAll(x.0))
    }

    /// `[C,H,W] -> [C]` spatial average (global average pooling).
    pub fn spatial_mean(&mut self, x: Value) -> Value {
        let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix3>().expect("spatial_mean rank");
        let (c, h, w) = xv.dim();
        let mut out = ndarray::Array1::<f64>::zeros(c);
        for ci in 0..c {
            out[ci] = xv.index_axis(Axis(0), ci).sum() / (h * w) as f64;
        }
        self.push(out.into_dyn(), Op::SpatialMean(x.0))
    }

    // ---- backward ----

    /// Reverse sweep from a scalar root. Returns one gradient slot per node;
    /// untouched nodes stay `None`.
    pub fn backward(&self, root: Value) -> Gradients {
        assert_eq!(self.nodes[root.0].value.len(), 1, "backward root must be scalar");
        let mut grads: Vec<Option<TensorD>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(ArrayD::from_elem(IxDyn(self.nodes[root.0].value.shape()), 1.0));

        for idx in (0..=root.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { by_node: grads }
    }

    /// Collect parameter gradients by name, accumulating repeated uses.
    pub fn param_grads(&self, grads: &Gradients) -> BTreeMap<String, TensorD> {
        let mut out: BTreeMap<String, TensorD> = BTreeMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(name) } = &node.op {
                if let Some(g) = &grads.by_node[idx] {
                    out.entry(name.clone())
                        .and_modify(|acc| *acc += g)
                        .or_insert_with(|| g.clone());
                }
            }
        }
        out
    }

    fn accum(grads: &mut [Option<TensorD>], idx: usize, delta: TensorD) {
        match &mut grads[idx] {
            Some(g) => *g += &delta,
            slot @ None => *slot = Some(standardize(delta)),
        }
    }

    fn backprop_node(&self, idx: usize, g: &TensorD, grads: &mut Vec<Option<TensorD>>) {
        match &self.nodes[idx].op {
            Op::Leaf { .. } => {}
            Op::Add(a, b) => {
                Self::accum(grads, *a, g.clone());
                Self::accum(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                Self::accum(grads, *a, g.clone());
                Self::accum(grads, *b, g.mapv(|x| -x));
            }
            Op::Mul(a, b) => {
                let ga = g * &self.nodes[*b].value;
                let gb = g * &self.nodes[*a].value;
                Self::accum(grads, *a, ga);
                Self::accum(grads, *b, gb);
            }
            Op::Neg(a) => Self::accum(grads, *a, g.mapv(|x| -x)),
            Op::ScalarMul(a, k) => Self::accum(grads, *a, g.mapv(|x| x * k)),
            Op::ScalarAdd(a) => Self::accum(grads, *a, g.clone()),
            Op::MatMul(a, b) => {
                let gv = g.view().into_dimensionality::<Ix2>().unwrap();
                let av = self.nodes[*a].value.view().into_dimensionality::<Ix2>().unwrap();
                let bv = self.nodes[*b].value.view().into_dimensionality::<Ix2>().unwrap();
                Self::accum(grads, *a, gv.dot(&bv.t()).into_dyn());
                Self::accum(grads, *b, av.t().dot(&gv).into_dyn());
            }
            Op::BatMatMul(a, b) => {
                let gv = g.view().into_dimensionality::<Ix3>().unwrap();
                let av = self.nodes[*a].value.view().into_dimensionality::<Ix3>().unwrap();
                let bv = self.nodes[*b].value.view().into_dimensionality::<Ix3>().unwrap();
                let (nb, m, k) = av.dim();
                let n = bv.dim().2;
                let mut ga = ndarray::Array3::<f64>::zeros((nb, m, k));
                let mut gb = ndarray::Array3::<f64>::zeros((nb, k, n));
                for i in 0..nb {
                    let gi = gv.index_axis(Axis(0), i);
                    ga.index_axis_mut(Axis(0), i)
                        .assign(&gi.dot(&bv.index_axis(Axis(0), i).t()));
                    gb.index_axis_mut(Axis(0), i)
                        .assign(&av.index_axis(Axis(0), i).t().dot(&gi));
                }
                Self::accum(grads, *a, ga.into_dyn());
                Self::accum(grads, *b, gb.into_dyn());
            }
            Op::Conv2d { x, w, stride, pad } => {
                let xv = self.nodes[*x].value.view().into_dimensionality::<Ix3>().unwrap();
                let (ci, h, wdt) = xv.dim();
                let wshape = self.nodes[*w].value.shape().to_vec();
                let (co, k) = (wshape[0], wshape[2]);
                let gv = g.view().into_dimensionality::<Ix3>().unwrap();
                let (gco, gho, gwo) = gv.dim();
                let gmat = gv.into_shape_with_order((gco, gho * gwo)).unwrap();
                // dW = g * col(x)^T (dot with a transposed rhs may come back
                // in Fortran order, so standardize before reshaping)
                let col = im2col(&xv, k, *stride, *pad);
                let dw = standardize(gmat.dot(&col.t()).into_dyn());
                let dw = dw.into_shape_with_order(IxDyn(&[co, ci, k, k])).unwrap();
                Self::accum(grads, *w, dw);
                // dX = col2im(W^T * g)
                let wmat = self.nodes[*w]
                    .value
                    .view()
                    .into_shape_with_order((co, ci * k * k))
                    .unwrap();
                let dcol = wmat.t().dot(&gmat);
                let dx = col2im(&dcol.view(), ci, h, wdt, k, *stride, *pad).into_dyn();
                Self::accum(grads, *x, dx);
            }
            Op::AvgPool2(x) => {
                let gv = g.view().into_dimensionality::<Ix3>().unwrap();
                Self::accum(grads, *x, avg_unpool2(&gv).into_dyn());
            }
            Op::Upsample2(x) => {
                let gv = g.view().into_dimensionality::<Ix3>().unwrap();
                Self::accum(grads, *x, upsample2_adjoint(&gv).into_dyn());
            }
            Op::Concat { xs, axis } => {
                let mut offset = 0;
                for xi in xs {
                    let len = self.nodes[*xi].value.shape()[*axis];
                    let piece = g
                        .slice_axis(Axis(*axis), Slice::from(offset..offset + len))
                        .to_owned();
                    Self::accum(grads, *xi, piece);
                    offset += len;
                }
            }
            Op::SliceAxis { x, axis, start, end } => {
                let mut dx = TensorD::zeros(self.nodes[*x].value.raw_dim());
                dx.slice_axis_mut(Axis(*axis), Slice::from(*start..*end)).assign(g);
                Self::accum(grads, *x, dx);
            }
            Op::Reshape(x) => {
                let dx = g
                    .clone()
                    .into_shape_with_order(self.nodes[*x].value.raw_dim())
                    .unwrap();
                Self::accum(grads, *x, dx);
            }
            Op::Transpose { x, perm } => {
                let mut inv = vec![0usize; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                let dx = g.view().permuted_axes(IxDyn(&inv)).to_owned();
                Self::accum(grads, *x, dx);
            }
            Op::LeakyRelu { x, slope } => {
                let xv = &self.nodes[*x].value;
                let dx = ndarray::Zip::from(g)
                    .and(xv)
                    .map_collect(|&gi, &xi| if xi >= 0.0 { gi } else { gi * slope });
                Self::accum(grads, *x, dx);
            }
            Op::Silu(x) => {
                let xv = &self.nodes[*x].value;
                let dx = ndarray::Zip::from(g).and(xv).map_collect(|&gi, &xi| {
                    let s = sigmoid_scalar(xi);
                    gi * (s + xi * s * (1.0 - s))
                });
                Self::accum(grads, *x, dx);
            }
            Op::Sigmoid(x) => {
                let yv = &self.nodes[idx].value;
                let dx = ndarray::Zip::from(g).and(yv).map_collect(|&gi, &yi| gi * yi * (1.0 - yi));
                Self::accum(grads, *x, dx);
            }
            Op::Exp(x) => {
                let yv = &self.nodes[idx].value;
                Self::accum(grads, *x, g * yv);
            }
            Op::Ln(x) => {
                let xv = &self.nodes[*x].value;
                let dx = ndarray::Zip::from(g).and(xv).map_collect(|&gi, &xi| gi / xi);
                Self::accum(grads, *x, dx);
            }
            Op::Abs(x) => {
                let xv = &self.nodes[*x].value;
                let dx = ndarray::Zip::from(g).and(xv).map_collect(|&gi, &xi| {
                    if xi > 0.0 {
                        gi
                    } else if xi < 0.0 {
                        -gi
                    } else {
                        0.0
                    }
                });
                Self::accum(grads, *x, dx);
            }
            Op::Clamp { x, lo, hi } => {
                let xv = &self.nodes[*x].value;
                let dx = ndarray::Zip::from(g)
                    .and(xv)
                    .map_collect(|&gi, &xi| if xi > *lo && xi < *hi { gi } else { 0.0 });
                Self::accum(grads, *x, dx);
            }
            Op::GroupNorm { x, groups, eps } => {
                let xv = self.nodes[*x].value.view().into_dimensionality::<Ix3>().unwrap();
                let yv = self.nodes[idx].value.view().into_dimensionality::<Ix3>().unwrap();
                let gv = g.view().into_dimensionality::<Ix3>().unwrap();
                let (c, h, w) = xv.dim();
                let per = c / *groups;
                let mut dx = ndarray::Array3::<f64>::zeros((c, h, w));
                for gidx in 0..*groups {
                    let r = gidx * per..(gidx + 1) * per;
                    let xs = xv.slice(ndarray::s![r.clone(), .., ..]);
                    let ys = yv.slice(ndarray::s![r.clone(), .., ..]);
                    let gs = gv.slice(ndarray::s![r.clone(), .., ..]);
                    let n = xs.len() as f64;
                    let mu = xs.sum() / n;
                    let var = xs.mapv(|x| (x - mu) * (x - mu)).sum() / n;
                    let inv = 1.0 / (var + eps).sqrt();
                    let gbar = gs.sum() / n;
                    let gybar = (&gs * &ys).sum() / n;
                    let d = ndarray::Zip::from(&gs)
                        .and(&ys)
                        .map_collect(|&gi, &yi| inv * (gi - gbar - yi * gybar));
                    dx.slice_mut(ndarray::s![r, .., ..]).assign(&d);
                }
                Self::accum(grads, *x, dx.into_dyn());
            }
            Op::ChannelStdNorm { x, eps } => {
                let xv = self.nodes[*x].value.view().into_dimensionality::<Ix3>().unwrap();
                let yv = self.nodes[idx].value.view().into_dimensionality::<Ix3>().unwrap();
                let gv = g.view().into_dimensionality::<Ix3>().unwrap();
                let (c, h, w) = xv.dim();
                let mut dx = ndarray::Array3::<f64>::zeros((c, h, w));
                for ci in 0..c {
                    let xs = xv.index_axis(Axis(0), ci);
                    let ys = yv.index_axis(Axis(0), ci);
                    let gs = gv.index_axis(Axis(0), ci);
                    let n = xs.len() as f64;
                    let mu = xs.sum() / n;
                    let sigma = (xs.mapv(|x| (x - mu) * (x - mu)).sum() / n).sqrt();
                    let denom = sigma + eps;
                    let gbar = gs.sum() / n;
                    let gybar = (&gs * &ys).sum() / n;
                    // d/dx_j = (g_j - mean(g))/denom - y_j * mean(g*y) / sigma
                    // The sigma term vanishes for a constant channel.
                    let sig_term = if sigma > 1e-300 { gybar / sigma } else { 0.0 };
                    let d = ndarray::Zip::from(&gs)
                        .and(&ys)
                        .map_collect(|&gi, &yi| (gi - gbar) / denom - yi * sig_term);
                    dx.index_axis_mut(Axis(0), ci).assign(&d);
                }
                Self::accum(grads, *x, dx.into_dyn());
            }
            Op::LayerNorm { x, eps } => {
                let xv = &self.nodes[*x].value;
                let yv = &self.nodes[idx].value;
                let last = xv.ndim() - 1;
                let n = xv.shape()[last] as f64;
                let mut dx = TensorD::zeros(xv.raw_dim());
                for ((xrow, yrow), (grow, mut drow)) in xv
                    .lanes(Axis(last))
                    .into_iter()
                    .zip(yv.lanes(Axis(last)))
                    .zip(g.lanes(Axis(last)).into_iter().zip(dx.lanes_mut(Axis(last))))
                {
                    let mu = xrow.sum() / n;
                    let var = xrow.mapv(|x| (x - mu) * (x - mu)).sum() / n;
                    let inv = 1.0 / (var + eps).sqrt();
                    let gbar = grow.sum() / n;
                    let gybar = grow
                        .iter()
                        .zip(yrow.iter())
                        .map(|(&gi, &yi)| gi * yi)
                        .sum::<f64>()
                        / n;
                    for ((&gi, &yi), di) in grow.iter().zip(yrow.iter()).zip(drow.iter_mut()) {
                        *di = inv * (gi - gbar - yi * gybar);
                    }
                }
                Self::accum(grads, *x, dx);
            }
            Op::Softmax(x) => {
                let yv = &self.nodes[idx].value;
                let last = yv.ndim() - 1;
                let mut dx = TensorD::zeros(yv.raw_dim());
                for ((yrow, grow), mut drow) in yv
                    .lanes(Axis(last))
                    .into_iter()
                    .zip(g.lanes(Axis(last)))
                    .zip(dx.lanes_mut(Axis(last)))
                {
                    let dot = yrow.iter().zip(grow.iter()).map(|(&y, &gi)| y * gi).sum::<f64>();
                    for ((&yi, &gi), di) in yrow.iter().zip(grow.iter()).zip(drow.iter_mut()) {
                        *di = yi * (gi - dot);
                    }
                }
                Self::accum(grads, *x, dx);
            }
            Op::AddVec { x, v, axis } => {
                Self::accum(grads, *x, g.clone());
                let len = self.nodes[*v].value.len();
                let mut dv = ndarray::Array1::<f64>::zeros(len);
                for (i, lane) in g.axis_iter(Axis(*axis)).enumerate() {
                    dv[i] = lane.sum();
                }
                Self::accum(grads, *v, dv.into_dyn());
            }
            Op::MulVec { x, v, axis } => {
                let vv = &self.nodes[*v].value;
                let xv = &self.nodes[*x].value;
                let mut dx = g.clone();
                for (i, mut lane) in dx.axis_iter_mut(Axis(*axis)).enumerate() {
                    let vi = vv[i];
                    lane.mapv_inplace(|x| x * vi);
                }
                Self::accum(grads, *x, dx);
                let len = vv.len();
                let mut dv = ndarray::Array1::<f64>::zeros(len);
                for (i, (glane, xlane)) in
                    g.axis_iter(Axis(*axis)).zip(xv.axis_iter(Axis(*axis))).enumerate()
                {
                    dv[i] = (&glane * &xlane).sum();
                }
                Self::accum(grads, *v, dv.into_dyn());
            }
            Op::MeanAll(x) => {
                let n = self.nodes[*x].value.len() as f64;
                let gs = g[[0]] / n;
                let dx = ArrayD::from_elem(self.nodes[*x].value.raw_dim(), gs);
                Self::accum(grads, *x, dx);
            }
            Op::SumAll(x) => {
                let gs = g[[0]];
                let dx = ArrayD::from_elem(self.nodes[*x].value.raw_dim(), gs);
                Self::accum(grads, *x, dx);
            }
            Op::SpatialMean(x) => {
                let xv = self.nodes[*x].value.view().into_dimensionality::<Ix3>().unwrap();
                let (c, h, w) = xv.dim();
                let scale = 1.0 / (h * w) as f64;
                let mut dx = ndarray::Array3::<f64>::zeros((c, h, w));
                for ci in 0..c {
                    dx.index_axis_mut(Axis(0), ci).fill(g[[ci]] * scale);
                }
                Self::accum(grads, *x, dx.into_dyn());
            }
        }
    }
}

/// Force contiguous C-order storage so reshapes are always valid.
fn standardize(t: TensorD) -> TensorD {
    if t.is_standard_layout() {
        t
    } else {
        t.as_standard_layout().into_owned()
    }
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests;
