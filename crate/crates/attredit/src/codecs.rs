//! Style-code producers.
//!
//! Latent-guided: the mapper turns sampled noise tokens (plus a CNN prior of
//! the image being edited) into a style code through a per-tag transformer
//! encoder and a per-(tag, attribute) head. Reference-guided: the extractor
//! reads a style code off a reference image through a CNN front-end, a
//! per-tag learnable query token, a shared transformer encoder and a per-tag
//! head. Ablation variants swap in an MLP mapper or a CNN-only extractor
//! under the same namespaces.

use crate::autodiff::nn::{Conv2dLayer, Linear, PosEmbed, TransformerEncoder};
use crate::autodiff::store::{init_normal, ParamStore};
use crate::autodiff::{Graph, Value};
use crate::config::{Ablation, ModelDims};
use crate::data::{ImageBatch, TagSchema};
use crate::error::{Error, Result};
use crate::parallel::map_batch;
use ndarray::{Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// A batch of style codes for one tag. `attr` is the targeted attribute when
/// the code came from the mapper; extractor codes carry the reference
/// image's (caller-known) attribute implicitly.
#[derive(Debug, Clone)]
pub struct StyleCode {
    /// `[B, d_s]`
    pub values: Array2<f64>,
    pub tag: usize,
    pub attr: Option<usize>,
}

/// Gaussian noise tokens `[B, L_z, d_z]`, fully determined by an explicit seed.
#[derive(Debug, Clone)]
pub struct LatentSeed {
    pub z: Array3<f64>,
}

impl LatentSeed {
    pub fn sample(seed: u64, batch: usize, dims: &ModelDims) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = Array3::from_shape_fn((batch, dims.l_z, dims.d_z), |_| {
            StandardNormal.sample(&mut rng)
        });
        LatentSeed { z }
    }
}

/// CNN front-end + patch tokenizer shared by both codecs:
/// `[C,H,W] -> [n_tokens, tf_dim]`.
#[derive(Debug, Clone)]
struct TokenCnn {
    conv1: Conv2dLayer,
    conv2: Conv2dLayer,
    proj: Linear,
    c_out: usize,
    feat: usize,
    patch: usize,
    n_tokens: usize,
}

impl TokenCnn {
    fn new(store: &mut ParamStore, seed: u64, ns: &str, dims: &ModelDims) -> Result<Self> {
        let c0 = dims.editor_channels[0];
        let c1 = dims.editor_channels[1];
        let feat = dims.image_size / 4;
        if feat % dims.patch != 0 {
            return Err(Error::config(format!(
                "feature map {feat} is not divisible by patch size {}",
                dims.patch
            )));
        }
        let n_tokens = (feat / dims.patch) * (feat / dims.patch);
        Ok(TokenCnn {
            conv1: Conv2dLayer::new(store, seed, &format!("{ns}/conv1"), dims.image_channels, c0, 3, 2, 1),
            conv2: Conv2dLayer::new(store, seed, &format!("{ns}/conv2"), c0, c1, 3, 2, 1),
            proj: Linear::new(store, seed, &format!("{ns}/proj"), c1 * dims.patch * dims.patch, dims.tf_dim),
            c_out: c1,
            feat,
            patch: dims.patch,
            n_tokens,
        })
    }

    fn fwd(&self, g: &mut Graph, store: &ParamStore, x: Value) -> Value {
        let mut h = self.conv1.fwd(g, store, x);
        h = g.leaky_relu(h, 0.2);
        h = self.conv2.fwd(g, store, h);
        h = g.leaky_relu(h, 0.2);
        // [C, F, F] -> [F/p, F/p, C, p, p] -> [T, C*p*p]
        let (c, f, p) = (self.c_out, self.feat, self.patch);
        let h = g.reshape(h, &[c, f / p, p, f / p, p]);
        let h = g.transpose(h, &[1, 3, 0, 2, 4]);
        let h = g.reshape(h, &[self.n_tokens, c * p * p]);
        self.proj.fwd(g, store, h)
    }
}

// ---------------------------------------------------------------------------
// Mapper (latent-guided)
// ---------------------------------------------------------------------------

/// Transformer mapper with an optional image-prior branch.
#[derive(Debug, Clone)]
pub struct PriorMapper {
    token_embed: Linear,
    prior: Option<TokenCnn>,
    pos: PosEmbed,
    encoders: Vec<TransformerEncoder>,
    heads: Vec<Vec<Linear>>,
    dims: ModelDims,
}

impl PriorMapper {
    pub fn new(
        store: &mut ParamStore,
        seed: u64,
        dims: &ModelDims,
        schema: &TagSchema,
        use_prior: bool,
    ) -> Result<Self> {
        let prior = if use_prior { Some(TokenCnn::new(store, seed, "mapper/prior", dims)?) } else { None };
        let n_img_tokens = prior.as_ref().map(|p| p.n_tokens).unwrap_or(0);
        let pos = PosEmbed::new(store, seed, "mapper/pos", dims.l_z + n_img_tokens, dims.tf_dim);
        let encoders = (0..schema.num_tags())
            .map(|t| {
                TransformerEncoder::new(
                    store,
                    seed,
                    &format!("mapper/enc/{}", schema.tag_name(t)),
                    dims.tf_dim,
                    dims.tf_depth,
                    dims.tf_heads,
                    dims.tf_dim * 2,
                )
            })
            .collect();
        let heads = (0..schema.num_tags())
            .map(|t| {
                (0..schema.attr_count(t))
                    .map(|a| {
                        Linear::new(
                            store,
                            seed,
                            &format!("mapper/head/{}/{}", schema.tag_name(t), schema.attr_name(t, a)),
                            dims.l_z * dims.tf_dim,
                            dims.d_s,
                        )
                    })
                    .collect()
            })
            .collect();
        Ok(PriorMapper {
            token_embed: Linear::new(store, seed, "mapper/token_embed", dims.d_z, dims.tf_dim),
            prior,
            pos,
            encoders,
            heads,
            dims: dims.clone(),
        })
    }

    /// Single-sample graph: noise tokens `[L_z, d_z]` and image `[C,H,W]`
    /// to a style vector `[d_s]`.
    pub fn g_map(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        z: Value,
        x: Value,
        tag: usize,
        attr: usize,
    ) -> Value {
        let zt = self.token_embed.fwd(g, store, z);
        let tokens = match &self.prior {
            Some(cnn) => {
                let img_tokens = cnn.fwd(g, store, x);
                g.concat(&[zt, img_tokens], 0)
            }
            None => zt,
        };
        let tokens = self.pos.fwd(g, store, tokens);
        let enc = self.encoders[tag].fwd(g, store, tokens);
        let z_out = g.slice_axis(enc, 0, 0, self.dims.l_z);
        let flat = g.reshape(z_out, &[1, self.dims.l_z * self.dims.tf_dim]);
        let s = self.heads[tag][attr].fwd(g, store, flat);
        g.reshape(s, &[self.dims.d_s])
    }
}

/// Plain MLP mapper over the flattened noise tokens (ablation variant).
#[derive(Debug, Clone)]
pub struct MlpMapper {
    fc1: Linear,
    fc2: Linear,
    heads: Vec<Vec<Linear>>,
    dims: ModelDims,
}

impl MlpMapper {
    pub fn new(store: &mut ParamStore, seed: u64, dims: &ModelDims, schema: &TagSchema) -> Self {
        let din = dims.l_z * dims.d_z;
        let hidden = dims.tf_dim * 2;
        let heads = (0..schema.num_tags())
            .map(|t| {
                (0..schema.attr_count(t))
                    .map(|a| {
                        Linear::new(
                            store,
                            seed,
                            &format!("mapper/head/{}/{}", schema.tag_name(t), schema.attr_name(t, a)),
                            hidden,
                            dims.d_s,
                        )
                    })
                    .collect()
            })
            .collect();
        MlpMapper {
            fc1: Linear::new(store, seed, "mapper/fc1", din, hidden),
            fc2: Linear::new(store, seed, "mapper/fc2", hidden, hidden),
            heads,
            dims: dims.clone(),
        }
    }

    pub fn g_map(&self, g: &mut Graph, store: &ParamStore, z: Value, tag: usize, attr: usize) -> Value {
        let flat = g.reshape(z, &[1, self.dims.l_z * self.dims.d_z]);
        let h = self.fc1.fwd(g, store, flat);
        let h = g.leaky_relu(h, 0.2);
        let h = self.fc2.fwd(g, store, h);
        let h = g.leaky_relu(h, 0.2);
        let s = self.heads[tag][attr].fwd(g, store, h);
        g.reshape(s, &[self.dims.d_s])
    }
}

/// The active mapper variant.
#[derive(Debug, Clone)]
pub enum Mapper {
    Prior(PriorMapper),
    Mlp(MlpMapper),
}

impl Mapper {
    /// Construct the variant requested by the ablation flag (everything but
    /// the mapper-related flags yields the full transformer mapper).
    pub fn build(
        store: &mut ParamStore,
        seed: u64,
        dims: &ModelDims,
        schema: &TagSchema,
        ablation: Ablation,
    ) -> Result<Self> {
        Ok(match ablation {
            Ablation::NoPriorMapper => Mapper::Mlp(MlpMapper::new(store, seed, dims, schema)),
            Ablation::NoPrior => Mapper::Prior(PriorMapper::new(store, seed, dims, schema, false)?),
            _ => Mapper::Prior(PriorMapper::new(store, seed, dims, schema, true)?),
        })
    }

    pub fn g_map(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        z: Value,
        x: Value,
        tag: usize,
        attr: usize,
    ) -> Value {
        match self {
            Mapper::Prior(m) => m.g_map(g, store, z, x, tag, attr),
            Mapper::Mlp(m) => m.g_map(g, store, z, tag, attr),
        }
    }
}

/// Latent-guided style generation `M_{i,j'}(z, x)` over a batch.
pub fn prior_map(
    mapper: &Mapper,
    store: &ParamStore,
    z: &LatentSeed,
    x: &ImageBatch,
    schema: &TagSchema,
    tag: usize,
    target_attr: usize,
    dims: &ModelDims,
) -> Result<StyleCode> {
    schema.check_pair(tag, target_attr)?;
    let b = x.dim().0;
    if z.z.dim() != (b, dims.l_z, dims.d_z) {
        return Err(Error::invalid(format!(
            "latent seed shape {:?} does not match (batch {b}, {}, {})",
            z.z.dim(),
            dims.l_z,
            dims.d_z
        )));
    }
    let rows: Vec<ndarray::Array1<f64>> = map_batch(b, |i| {
        let mut g = Graph::new();
        let zi = g.constant(z.z.index_axis(Axis(0), i).to_owned().into_dyn());
        let xi = g.constant(x.index_axis(Axis(0), i).to_owned().into_dyn());
        let s = mapper.g_map(&mut g, store, zi, xi, tag, target_attr);
        g.value(s).clone().into_dimensionality().unwrap()
    });
    let mut values = Array2::zeros((b, dims.d_s));
    for (i, r) in rows.iter().enumerate() {
        values.row_mut(i).assign(r);
    }
    Ok(StyleCode { values, tag, attr: Some(target_attr) })
}

// ---------------------------------------------------------------------------
// Extractor (reference-guided)
// ---------------------------------------------------------------------------

/// CNN + transformer extractor with per-tag learnable query tokens.
#[derive(Debug, Clone)]
pub struct RefineExtractor {
    cnn: TokenCnn,
    token_names: Vec<String>,
    pos: PosEmbed,
    encoder: TransformerEncoder,
    heads: Vec<Linear>,
    dims: ModelDims,
}

impl RefineExtractor {
    pub fn new(store: &mut ParamStore, seed: u64, dims: &ModelDims, schema: &TagSchema) -> Result<Self> {
        let cnn = TokenCnn::new(store, seed, "extractor/cnn", dims)?;
        let token_names: Vec<String> = (0..schema.num_tags())
            .map(|t| {
                let name = format!("extractor/token/{}", schema.tag_name(t));
                init_normal(store, seed, &name, &[1, dims.tf_dim], 0.02);
                name
            })
            .collect();
        let pos = PosEmbed::new(store, seed, "extractor/pos", 1 + cnn.n_tokens, dims.tf_dim);
        let encoder = TransformerEncoder::new(
            store,
            seed,
            "extractor/enc",
            dims.tf_dim,
            dims.tf_depth,
            dims.tf_heads,
            dims.tf_dim * 2,
        );
        let heads = (0..schema.num_tags())
            .map(|t| {
                Linear::new(
                    store,
                    seed,
                    &format!("extractor/head/{}", schema.tag_name(t)),
                    dims.tf_dim,
                    dims.d_s,
                )
            })
            .collect();
        Ok(RefineExtractor { cnn, token_names, pos, encoder, heads, dims: dims.clone() })
    }

    pub fn g_extract(&self, g: &mut Graph, store: &ParamStore, y: Value, tag: usize) -> Value {
        let img_tokens = self.cnn.fwd(g, store, y);
        let query = g.param(store, &self.token_names[tag]);
        let seq = g.concat(&[query, img_tokens], 0);
        let seq = self.pos.fwd(g, store, seq);
        let enc = self.encoder.fwd(g, store, seq);
        let cls = g.slice_axis(enc, 0, 0, 1);
        let s = self.heads[tag].fwd(g, store, cls);
        g.reshape(s, &[self.dims.d_s])
    }
}

/// CNN-only extractor (ablation variant): global-average-pooled features
/// through a per-tag head.
#[derive(Debug, Clone)]
pub struct CnnExtractor {
    conv1: Conv2dLayer,
    conv2: Conv2dLayer,
    conv3: Conv2dLayer,
    heads: Vec<Linear>,
    dims: ModelDims,
    c_out: usize,
}

impl CnnExtractor {
    pub fn new(store: &mut ParamStore, seed: u64, dims: &ModelDims, schema: &TagSchema) -> Self {
        let [c0, c1, c2] = dims.editor_channels;
        let heads = (0..schema.num_tags())
            .map(|t| {
                Linear::new(
                    store,
                    seed,
                    &format!("extractor/head/{}", schema.tag_name(t)),
                    c2,
                    dims.d_s,
                )
            })
            .collect();
        CnnExtractor {
            conv1: Conv2dLayer::new(store, seed, "extractor/cnn/conv1", dims.image_channels, c0, 3, 2, 1),
            conv2: Conv2dLayer::new(store, seed, "extractor/cnn/conv2", c0, c1, 3, 2, 1),
            conv3: Conv2dLayer::new(store, seed, "extractor/cnn/conv3", c1, c2, 3, 1, 1),
            heads,
            dims: dims.clone(),
            c_out: c2,
        }
    }

    pub fn g_extract(&self, g: &mut Graph, store: &ParamStore, y: Value, tag: usize) -> Value {
        let mut h = self.conv1.fwd(g, store, y);
        h = g.leaky_relu(h, 0.2);
        h = self.conv2.fwd(g, store, h);
        h = g.leaky_relu(h, 0.2);
        h = self.conv3.fwd(g, store, h);
        h = g.leaky_relu(h, 0.2);
        let pooled = g.spatial_mean(h);
        let row = g.reshape(pooled, &[1, self.c_out]);
        let s = self.heads[tag].fwd(g, store, row);
        g.reshape(s, &[self.dims.d_s])
    }
}

/// The active extractor variant.
#[derive(Debug, Clone)]
pub enum Extractor {
    Refine(RefineExtractor),
    Cnn(CnnExtractor),
}

impl Extractor {
    pub fn build(
        store: &mut ParamStore,
        seed: u64,
        dims: &ModelDims,
        schema: &TagSchema,
        ablation: Ablation,
    ) -> Result<Self> {
        Ok(match ablation {
            Ablation::NoRefineExtractor => Extractor::Cnn(CnnExtractor::new(store, seed, dims, schema)),
            _ => Extractor::Refine(RefineExtractor::new(store, seed, dims, schema)?),
        })
    }

    pub fn g_extract(&self, g: &mut Graph, store: &ParamStore, y: Value, tag: usize) -> Value {
        match self {
            Extractor::Refine(e) => e.g_extract(g, store, y, tag),
            Extractor::Cnn(e) => e.g_extract(g, store, y, tag),
        }
    }
}

/// Reference-guided style extraction `E_i(y)` over a batch.
pub fn refine_extract(
    extractor: &Extractor,
    store: &ParamStore,
    y: &ImageBatch,
    schema: &TagSchema,
    tag: usize,
    dims: &ModelDims,
) -> Result<StyleCode> {
    schema.check_tag(tag)?;
    let b = y.dim().0;
    let rows: Vec<ndarray::Array1<f64>> = map_batch(b, |i| {
        let mut g = Graph::new();
        let yi = g.constant(y.index_axis(Axis(0), i).to_owned().into_dyn());
        let s = extractor.g_extract(&mut g, store, yi, tag);
        g.value(s).clone().into_dimensionality().unwrap()
    });
    let mut values = Array2::zeros((b, dims.d_s));
    for (i, r) in rows.iter().enumerate() {
        values.row_mut(i).assign(r);
    }
    Ok(StyleCode { values, tag, attr: None })
}


#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn setup(ablation: Ablation) -> (ParamStore, Mapper, Extractor, ModelDims, TagSchema) {
        let dims = ModelDims::tiny();
        let schema = TagSchema::toy();
        let mut store = ParamStore::new();
        let mapper = Mapper::build(&mut store, 3, &dims, &schema, ablation).unwrap();
        let extractor = Extractor::build(&mut store, 3, &dims, &schema, ablation).unwrap();
        (store, mapper, extractor, dims, schema)
    }

    fn rand_images(b: usize, dims: &ModelDims, seed: u64) -> ImageBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ndarray::Array4::from_shape_fn(
            (b, dims.image_channels, dims.image_size, dims.image_size),
            |_| rng.gen_range(-1.0..1.0),
        )
    }

    #[test]
    fn prior_map_is_deterministic_with_required_width() {
        let (store, mapper, _, dims, schema) = setup(Ablation::None);
        let x = rand_images(2, &dims, 1);
        let z = LatentSeed::sample(7, 2, &dims);
        for (tag, attr) in schema.pairs() {
            let a = prior_map(&mapper, &store, &z, &x, &schema, tag, attr, &dims).unwrap();
            let b = prior_map(&mapper, &store, &z, &x, &schema, tag, attr, &dims).unwrap();
            assert_eq!(a.values, b.values);
            assert_eq!(a.values.ncols(), dims.d_s);
            assert_eq!(a.attr, Some(attr));
        }
    }

    #[test]
    fn distinct_seeds_produce_distinct_codes() {
        let (store, mapper, _, dims, schema) = setup(Ablation::None);
        let x = rand_images(1, &dims, 2);
        let z1 = LatentSeed::sample(1, 1, &dims);
        let z2 = LatentSeed::sample(2, 1, &dims);
        let a = prior_map(&mapper, &store, &z1, &x, &schema, 0, 1, &dims).unwrap();
        let b = prior_map(&mapper, &store, &z2, &x, &schema, 0, 1, &dims).unwrap();
        assert!(a.values != b.values);
    }

    #[test]
    fn latent_seed_is_seed_deterministic() {
        let dims = ModelDims::tiny();
        let a = LatentSeed::sample(5, 3, &dims);
        let b = LatentSeed::sample(5, 3, &dims);
        assert_eq!(a.z, b.z);
        assert_eq!(a.z.dim(), (3, dims.l_z, dims.d_z));
    }

    #[test]
    fn prior_map_rejects_unknown_pair() {
        let (store, mapper, _, dims, schema) = setup(Ablation::None);
        let x = rand_images(1, &dims, 3);
        let z = LatentSeed::sample(1, 1, &dims);
        assert!(matches!(
            prior_map(&mapper, &store, &z, &x, &schema, 0, 5, &dims),
            Err(Error::Schema(_))
        ));
        assert!(matches!(
            prior_map(&mapper, &store, &z, &x, &schema, 9, 0, &dims),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn mapper_head_gradients_are_isolated() {
        let (store, mapper, _, dims, schema) = setup(Ablation::None);
        let x = rand_images(1, &dims, 4);
        let z = LatentSeed::sample(3, 1, &dims);
        let mut g = Graph::new();
        let zi = g.constant(z.z.index_axis(Axis(0), 0).to_owned().into_dyn());
        let xi = g.constant(x.index_axis(Axis(0), 0).to_owned().into_dyn());
        let s = mapper.g_map(&mut g, &store, zi, xi, 0, 1);
        let root = g.sum_all(s);
        let grads = g.backward(root);
        let by_name = g.param_grads(&grads);
        let own = format!("mapper/head/{}/{}", schema.tag_name(0), schema.attr_name(0, 1));
        assert!(by_name.keys().any(|k| k.starts_with(&own)));
        for (t, a) in schema.pairs() {
            if (t, a) == (0, 1) {
                continue;
            }
            let other = format!("mapper/head/{}/{}", schema.tag_name(t), schema.attr_name(t, a));
            assert!(
                by_name.keys().all(|k| !k.starts_with(&other)),
                "head {other} must receive no gradient"
            );
        }
        // the non-selected tag's encoder is untouched too
        let other_enc = format!("mapper/enc/{}", schema.tag_name(1));
        assert!(by_name.keys().all(|k| !k.starts_with(&other_enc)));
    }

    #[test]
    fn refine_extract_contracts() {
        let (store, _, extractor, dims, schema) = setup(Ablation::None);
        let y = rand_images(2, &dims, 5);
        let a = refine_extract(&extractor, &store, &y, &schema, 0, &dims).unwrap();
        let b = refine_extract(&extractor, &store, &y, &schema, 0, &dims).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(a.values.dim(), (2, dims.d_s));
        // different tags give different codes on the same image
        let c = refine_extract(&extractor, &store, &y, &schema, 1, &dims).unwrap();
        assert!(a.values != c.values);
        // batch independence: two copies of one image give identical rows
        let mut twin = y.clone();
        twin.index_axis_mut(Axis(0), 1).assign(&y.index_axis(Axis(0), 0));
        let d = refine_extract(&extractor, &store, &twin, &schema, 0, &dims).unwrap();
        assert_eq!(d.values.row(0), d.values.row(1));
        assert!(matches!(
            refine_extract(&extractor, &store, &y, &schema, 7, &dims),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn extractor_head_and_token_gradients_are_isolated() {
        let (store, _, extractor, dims, schema) = setup(Ablation::None);
        let y = rand_images(1, &dims, 6);
        let mut g = Graph::new();
        let yi = g.constant(y.index_axis(Axis(0), 0).to_owned().into_dyn());
        let s = extractor.g_extract(&mut g, &store, yi, 1);
        let root = g.sum_all(s);
        let grads = g.backward(root);
        let by_name = g.param_grads(&grads);
        let own_head = format!("extractor/head/{}", schema.tag_name(1));
        let own_token = format!("extractor/token/{}", schema.tag_name(1));
        assert!(by_name.keys().any(|k| k.starts_with(&own_head)));
        assert!(by_name.keys().any(|k| k.starts_with(&own_token)));
        let other_head = format!("extractor/head/{}", schema.tag_name(0));
        let other_token = format!("extractor/token/{}", schema.tag_name(0));
        assert!(by_name.keys().all(|k| !k.starts_with(&other_head)));
        assert!(by_name.keys().all(|k| !k.starts_with(&other_token)));
    }

    #[test]
    fn ablation_variants_share_interfaces() {
        for ab in [Ablation::NoPrior, Ablation::NoPriorMapper, Ablation::NoRefineExtractor] {
            let (store, mapper, extractor, dims, schema) = setup(ab);
            let x = rand_images(1, &dims, 8);
            let z = LatentSeed::sample(4, 1, &dims);
            let s = prior_map(&mapper, &store, &z, &x, &schema, 1, 0, &dims).unwrap();
            assert_eq!(s.values.ncols(), dims.d_s);
            let e = refine_extract(&extractor, &store, &x, &schema, 1, &dims).unwrap();
            assert_eq!(e.values.ncols(), dims.d_s);
        }
    }

    #[test]
    fn patch_divisibility_checked_at_construction() {
        let mut dims = ModelDims::tiny();
        dims.patch = 3; // 16/4 = 4 not divisible by 3
        let schema = TagSchema::toy();
        let mut store = ParamStore::new();
        assert!(matches!(
            Mapper::build(&mut store, 1, &dims, &schema, Ablation::None),
            Err(Error::Config(_))
        ));
    }
}
