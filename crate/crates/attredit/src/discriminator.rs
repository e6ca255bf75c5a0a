//! The multi-branch feature discriminator and the semantic-code attribute
//! classifier.
//!
//! The discriminator shares a convolutional trunk
//! (Conv stem, then LReLU-Conv-AvgPool-LReLU-Conv down blocks) and keeps one
//! linear output head per (tag, attribute) branch, so judging a feature
//! under one branch never touches another branch's parameters.

use crate::autodiff::nn::{Conv2dLayer, Linear};
use crate::autodiff::store::ParamStore;
use crate::autodiff::{Graph, Value};
use crate::config::ModelDims;
use crate::data::TagSchema;
use crate::editor::{FeatureMap, SemanticCodes};
use crate::error::{Error, Result};
use crate::losses::EPS_P;
use crate::parallel::map_batch;
use ndarray::{Array1, Array2, Axis, IxDyn};

const LRELU_SLOPE: f64 = 0.2;

#[derive(Debug, Clone)]
struct DownBlock {
    conv_a: Conv2dLayer,
    conv_b: Conv2dLayer,
}

/// Feature discriminator `D` with per-(tag, attribute) output branches.
/// Parameters live under `disc/*`.
#[derive(Debug, Clone)]
pub struct Discriminator {
    stem: Conv2dLayer,
    blocks: Vec<DownBlock>,
    heads: Vec<Vec<Linear>>,
    flat: usize,
}

impl Discriminator {
    pub fn new(store: &mut ParamStore, seed: u64, dims: &ModelDims, schema: &TagSchema) -> Result<Self> {
        let feat = dims.feature_size();
        let [d0, d1] = dims.disc_channels;
        // two pooling stages halve the spatial size twice
        if feat % 4 != 0 && feat != 4 {
            return Err(Error::config(format!(
                "discriminator needs a feature size divisible by 4, got {feat}"
            )));
        }
        let stem = Conv2dLayer::new(
            store,
            seed,
            "disc/stem",
            dims.feature_channels(),
            dims.disc_stem,
            3,
            1,
            1,
        );
        let blocks = vec![
            DownBlock {
                conv_a: Conv2dLayer::new(store, seed, "disc/down0/conv_a", dims.disc_stem, d0, 3, 1, 1),
                conv_b: Conv2dLayer::new(store, seed, "disc/down0/conv_b", d0, d0, 3, 1, 1),
            },
            DownBlock {
                conv_a: Conv2dLayer::new(store, seed, "disc/down1/conv_a", d0, d1, 3, 1, 1),
                conv_b: Conv2dLayer::new(store, seed, "disc/down1/conv_b", d1, d1, 3, 1, 1),
            },
        ];
        let final_spatial = feat / 4;
        let flat = d1 * final_spatial * final_spatial;
        let heads = (0..schema.num_tags())
            .map(|t| {
                (0..schema.attr_count(t))
                    .map(|a| {
                        Linear::new(
                            store,
                            seed,
                            &format!("disc/head/{}/{}", schema.tag_name(t), schema.attr_name(t, a)),
                            flat,
                            1,
                        )
                    })
                    .collect()
            })
            .collect();
        Ok(Discriminator { stem, blocks, heads, flat })
    }

    fn check_branch(&self, tag: usize, attr: usize) -> Result<()> {
        if tag >= self.heads.len() || attr >= self.heads[tag].len() {
            return Err(Error::schema(format!("no discriminator branch for (tag {tag}, attr {attr})")));
        }
        Ok(())
    }

    /// Single-sample graph: feature `[C_f,h,w]` to a probability `[1]`
    /// under the (tag, attr) branch, clamped into `[eps_p, 1-eps_p]`.
    pub fn g_discriminate(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        f: Value,
        tag: usize,
        attr: usize,
    ) -> Value {
        let mut h = self.stem.fwd(g, store, f);
        for block in &self.blocks {
            h = g.leaky_relu(h, LRELU_SLOPE);
            h = block.conv_a.fwd(g, store, h);
            h = g.avg_pool2(h);
            h = g.leaky_relu(h, LRELU_SLOPE);
            h = block.conv_b.fwd(g, store, h);
        }
        let flat = g.reshape(h, &[1, self.flat]);
        let logit = self.heads[tag][attr].fwd(g, store, flat);
        let prob = g.sigmoid(logit);
        let prob = g.clamp(prob, EPS_P, 1.0 - EPS_P);
        g.reshape(prob, &[1])
    }

    /// Per-batch-element probability that each feature is a real sample of
    /// attribute `attr` under tag `tag`.
    pub fn discriminate(
        &self,
        store: &ParamStore,
        f: &FeatureMap,
        tag: usize,
        attr: usize,
    ) -> Result<Array1<f64>> {
        self.check_branch(tag, attr)?;
        let b = f.dim().0;
        let vals: Vec<f64> = map_batch(b, |i| {
            let mut g = Graph::new();
            let fi = g.constant(f.index_axis(Axis(0), i).to_owned().into_dyn());
            let p = self.g_discriminate(&mut g, store, fi, tag, attr);
            g.value(p)[[0]]
        });
        Ok(Array1::from_vec(vals))
    }
}

/// Attribute classifier `C`: a small MLP from semantic codes to per-attribute
/// probabilities. Parameters live under `attrcls/*`.
#[derive(Debug, Clone)]
pub struct AttributeClassifier {
    fc1: Linear,
    fc2: Linear,
    d_c: usize,
    n: usize,
}

impl AttributeClassifier {
    pub fn new(store: &mut ParamStore, seed: u64, dims: &ModelDims, schema: &TagSchema) -> Self {
        let hidden = dims.tf_dim.max(16);
        let n = schema.num_attrs_total();
        AttributeClassifier {
            fc1: Linear::new(store, seed, "attrcls/fc1", dims.d_c, hidden),
            fc2: Linear::new(store, seed, "attrcls/fc2", hidden, n),
            d_c: dims.d_c,
            n,
        }
    }

    pub fn num_attrs(&self) -> usize {
        self.n
    }

    /// Single-sample graph: code `[d_c]` to probabilities `[n]`,
    /// clamped into `[eps_p, 1-eps_p]`.
    pub fn g_classify(&self, g: &mut Graph, store: &ParamStore, c: Value) -> Value {
        let row = g.reshape(c, &[1, self.d_c]);
        let h = self.fc1.fwd(g, store, row);
        let h = g.leaky_relu(h, LRELU_SLOPE);
        let logits = self.fc2.fwd(g, store, h);
        let probs = g.sigmoid(logits);
        let probs = g.clamp(probs, EPS_P, 1.0 - EPS_P);
        g.reshape(probs, &[self.n])
    }

    /// Predicted probabilities over all `n` attributes for a code batch.
    pub fn classify_semantic(&self, store: &ParamStore, c: &SemanticCodes) -> Result<Array2<f64>> {
        if c.ncols() != self.d_c {
            return Err(Error::invalid(format!(
                "semantic code width {} does not match classifier width {}",
                c.ncols(),
                self.d_c
            )));
        }
        let b = c.nrows();
        let rows: Vec<Array1<f64>> = map_batch(b, |i| {
            let mut g = Graph::new();
            let ci = g.constant(
                c.index_axis(Axis(0), i).to_owned().into_shape_with_order(IxDyn(&[self.d_c])).unwrap(),
            );
            let p = self.g_classify(&mut g, store, ci);
            g.value(p).clone().into_dimensionality().unwrap()
        });
        let mut out = Array2::zeros((b, self.n));
        for (i, r) in rows.iter().enumerate() {
            out.row_mut(i).assign(r);
        }
        Ok(out)
    }
}
