//! Layer wrappers over the graph: each layer owns its parameter names and
//! hyperparameters; tensors live in the [`ParamStore`]. Constructors register
//! and initialize parameters, `fwd` builds graph nodes.

use super::store::{init_const, init_he, init_normal, ParamStore};
use super::{Graph, Value};

/// Fully connected layer, `[n, din] -> [n, dout]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: String,
    pub b: String,
    pub din: usize,
    pub dout: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, seed: u64, name: &str, din: usize, dout: usize) -> Self {
        let w = format!("{name}/w");
        let b = format!("{name}/b");
        init_he(store, seed, &w, &[din, dout], din);
        init_const(store, &b, &[dout], 0.0);
        Linear { w, b, din, dout }
    }

    /// Zero-initialized variant, used where a block should start as identity.
    pub fn new_zero(store: &mut ParamStore, name: &str, din: usize, dout: usize) -> Self {
        let w = format!("{name}/w");
        let b = format!("{name}/b");
        init_const(store, &w, &[din, dout], 0.0);
        init_const(store, &b, &[dout], 0.0);
        Linear { w, b, din, dout }
    }

    /// Explicit-scale initialization for projections that should start small
    /// but not degenerate.
    pub fn new_with_std(
        store: &mut ParamStore,
        seed: u64,
        name: &str,
        din: usize,
        dout: usize,
        std: f64,
    ) -> Self {
        let w = format!("{name}/w");
        let b = format!("{name}/b");
        init_normal(store, seed, &w, &[din, dout], std);
        init_const(store, &b, &[dout], 0.0);
        Linear { w, b, din, dout }
    }

    pub fn fwd(&self, g: &mut Graph, store: &ParamStore, x: Value) -> Value {
        let w = g.param(store, &self.w);
        let b = g.param(store, &self.b);
        let y = g.matmul(x, w);
        g.add_vec(y, b, 1)
    }
}

/// Square-kernel 2-D convolution, `[ci,H,W] -> [co,H',W']`.
#[derive(Debug, Clone)]
pub struct Conv2dLayer {
    pub w: String,
    pub b: String,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2dLayer {
    pub fn new(
        store: &mut ParamStore,
        seed: u64,
        name: &str,
        ci: usize,
        co: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let w = format!("{name}/w");
        let b = format!("{name}/b");
        init_he(store, seed, &w, &[co, ci, k, k], ci * k * k);
        init_const(store, &b, &[co], 0.0);
        Conv2dLayer { w, b, stride, pad }
    }

    /// Zero-initialized convolution (residual-tail convention).
    pub fn new_zero(
        store: &mut ParamStore,
        name: &str,
        ci: usize,
        co: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let w = format!("{name}/w");
        let b = format!("{name}/b");
        init_const(store, &w, &[co, ci, k, k], 0.0);
        init_const(store, &b, &[co], 0.0);
        Conv2dLayer { w, b, stride, pad }
    }

    pub fn fwd(&self, g: &mut Graph, store: &ParamStore, x: Value) -> Value {
        let w = g.param(store, &self.w);
        let b = g.param(store, &self.b);
        let y = g.conv2d(x, w, self.stride, self.pad);
        g.add_vec(y, b, 0)
    }
}

/// Learned per-feature gain and bias applied along `axis`
/// (the affine tail of a normalization layer).
#[derive(Debug, Clone)]
pub struct NormAffine {
    pub gain: String,
    pub bias: String,
    pub axis: usize,
}

impl NormAffine {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, axis: usize) -> Self {
        let gain = format!("{name}/g");
        let bias = format!("{name}/b");
        init_const(store, &gain, &[dim], 1.0);
        init_const(store, &bias, &[dim], 0.0);
        NormAffine { gain, bias, axis }
    }

    pub fn fwd(&self, g: &mut Graph, store: &ParamStore, x: Value) -> Value {
        let gain = g.param(store, &self.gain);
        let bias = g.param(store, &self.bias);
        let y = g.mul_vec(x, gain, self.axis);
        g.add_vec(y, bias, self.axis)
    }
}

/// Pre-LN transformer encoder layer with multi-head self-attention.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    ln1: NormAffine,
    ln2: NormAffine,
    fc1: Linear,
    fc2: Linear,
    heads: usize,
    dim: usize,
}

impl EncoderLayer {
    pub fn new(store: &mut ParamStore, seed: u64, name: &str, dim: usize, heads: usize, mlp: usize) -> Self {
        assert!(dim % heads == 0, "attention dim {dim} not divisible by heads {heads}");
        EncoderLayer {
            wq: Linear::new(store, seed, &format!("{name}/attn/q"), dim, dim),
            wk: Linear::new(store, seed, &format!("{name}/attn/k"), dim, dim),
            wv: Linear::new(store, seed, &format!("{name}/attn/v"), dim, dim),
            wo: Linear::new(store, seed, &format!("{name}/attn/o"), dim, dim),
            ln1: NormAffine::new(store, &format!("{name}/ln1"), dim, 1),
            ln2: NormAffine::new(store, &format!("{name}/ln2"), dim, 1),
            fc1: Linear::new(store, seed, &format!("{name}/mlp/fc1"), dim, mlp),
            fc2: Linear::new(store, seed, &format!("{name}/mlp/fc2"), mlp, dim),
            heads,
            dim,
        }
    }

    /// `[L, dim] -> [L, dim]`
    pub fn fwd(&self, g: &mut Graph, store: &ParamStore, x: Value) -> Value {
        let l = g.shape(x)[0];
        let (h, dh) = (self.heads, self.dim / self.heads);

        let n = g.layer_norm(x, 1e-5);
        let n = self.ln1.fwd(g, store, n);
        let q = self.wq.fwd(g, store, n);
        let k = self.wk.fwd(g, store, n);
        let v = self.wv.fwd(g, store, n);
        // [L, dim] -> [heads, L, dh]
        let split = |g: &mut Graph, t: Value| {
            let t = g.reshape(t, &[l, h, dh]);
            g.transpose(t, &[1, 0, 2])
        };
        let q = split(g, q);
        let k = split(g, k);
        let v = split(g, v);
        let kt = g.transpose(k, &[0, 2, 1]);
        let scores = g.bat_matmul(q, kt);
        let scores = g.scalar_mul(scores, 1.0 / (dh as f64).sqrt());
        let attn = g.softmax(scores);
        let ctx = g.bat_matmul(attn, v);
        let ctx = g.transpose(ctx, &[1, 0, 2]);
        let ctx = g.reshape(ctx, &[l, self.dim]);
        let proj = self.wo.fwd(g, store, ctx);
        let x = g.add(x, proj);

        let n2 = g.layer_norm(x, 1e-5);
        let n2 = self.ln2.fwd(g, store, n2);
        let m = self.fc1.fwd(g, store, n2);
        let m = g.silu(m);
        let m = self.fc2.fwd(g, store, m);
        g.add(x, m)
    }
}

/// Stack of encoder layers with a final layer norm.
#[derive(Debug, Clone)]
pub struct TransformerEncoder {
    layers: Vec<EncoderLayer>,
    ln_out: NormAffine,
}

impl TransformerEncoder {
    pub fn new(
        store: &mut ParamStore,
        seed: u64,
        name: &str,
        dim: usize,
        depth: usize,
        heads: usize,
        mlp: usize,
    ) -> Self {
        let layers = (0..depth)
            .map(|i| EncoderLayer::new(store, seed, &format!("{name}/layer{i}"), dim, heads, mlp))
            .collect();
        TransformerEncoder { layers, ln_out: NormAffine::new(store, &format!("{name}/ln_out"), dim, 1) }
    }

    pub fn fwd(&self, g: &mut Graph, store: &ParamStore, mut x: Value) -> Value {
        for layer in &self.layers {
            x = layer.fwd(g, store, x);
        }
        let x = g.layer_norm(x, 1e-5);
        self.ln_out.fwd(g, store, x)
    }
}

/// Learned positional embedding added to a `[L, dim]` token matrix.
#[derive(Debug, Clone)]
pub struct PosEmbed {
    pub name: String,
}

impl PosEmbed {
    pub fn new(store: &mut ParamStore, seed: u64, name: &str, len: usize, dim: usize) -> Self {
        init_normal(store, seed, name, &[len, dim], 0.02);
        PosEmbed { name: name.to_string() }
    }

    pub fn fwd(&self, g: &mut Graph, store: &ParamStore, x: Value) -> Value {
        let p = g.param(store, &self.name);
        g.add(x, p)
    }
}

/// Sinusoidal features for a scalar position/level in `[0, 1]`.
/// Pure input featurization; carries no parameters.
pub fn sinusoidal_features(level: f64, dim: usize) -> Vec<f64> {
    assert!(dim % 2 == 0, "sinusoidal feature dim must be even");
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = (1000.0f64).powf(i as f64 / (half - 1).max(1) as f64);
        out.push((level * freq).sin());
        out.push((level * freq).cos());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn linear_shapes_and_zero_bias() {
        let mut store = ParamStore::new();
        let lin = Linear::new(&mut store, 3, "t/lin", 4, 6);
        let mut g = Graph::new();
        let x = g.constant(super::super::TensorD::zeros(IxDyn(&[2, 4])));
        let y = lin.fwd(&mut g, &store, x);
        assert_eq!(g.shape(y), &[2, 6]);
        assert!(g.value(y).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encoder_layer_preserves_shape() {
        let mut store = ParamStore::new();
        let enc = TransformerEncoder::new(&mut store, 5, "t/enc", 16, 2, 4, 32);
        let mut g = Graph::new();
        let x = g.constant(super::super::TensorD::from_shape_fn(IxDyn(&[5, 16]), |ix| {
            (ix[0] as f64 - ix[1] as f64) * 0.1
        }));
        let y = enc.fwd(&mut g, &store, x);
        assert_eq!(g.shape(y), &[5, 16]);
        assert!(g.value(y).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn sinusoidal_features_bounded() {
        let f = sinusoidal_features(0.37, 16);
        assert_eq!(f.len(), 16);
        assert!(f.iter().all(|v| v.abs() <= 1.0));
        assert_ne!(f, sinusoidal_features(0.36, 16));
    }
}
