//! The conditional noise predictor: a small U-shaped convolutional network.
//! Each residual block's second normalization is modulated by a scale/shift
//! projected from the combined (noise level, semantic code) embedding, and
//! the noise level enters as sinusoidal features of `sqrt(1 - alpha_bar)`,
//! which makes the predictor depend on the schedule only through its
//! coefficient values. Parameters live under `unet/*`.

use crate::autodiff::nn::{sinusoidal_features, Conv2dLayer, Linear, NormAffine};
use crate::autodiff::store::ParamStore;
use crate::autodiff::{Graph, Value};
use crate::config::ModelDims;
use crate::editor::gn_groups;
use crate::error::{Error, Result};
use crate::parallel::map_batch;
use crate::schedule::NoiseModel;
use ndarray::{Array1, Array2, Array4, Axis, IxDyn};

const TIME_FEATURES: usize = 32;

#[derive(Debug, Clone)]
struct ResBlock {
    norm1: NormAffine,
    conv1: Conv2dLayer,
    norm2: NormAffine,
    film: Linear,
    conv2: Conv2dLayer,
    skip: Option<Conv2dLayer>,
    ch_out: usize,
}

impl ResBlock {
    fn new(store: &mut ParamStore, seed: u64, name: &str, ci: usize, co: usize, emb: usize) -> Self {
        ResBlock {
            norm1: NormAffine::new(store, &format!("{name}/norm1"), ci, 0),
            conv1: Conv2dLayer::new(store, seed, &format!("{name}/conv1"), ci, co, 3, 1, 1),
            norm2: NormAffine::new(store, &format!("{name}/norm2"), co, 0),
            film: Linear::new_with_std(store, seed, &format!("{name}/film"), emb, 2 * co, 0.01),
            conv2: Conv2dLayer::new_zero(store, &format!("{name}/conv2"), co, co, 3, 1, 1),
            skip: (ci != co)
                .then(|| Conv2dLayer::new(store, seed, &format!("{name}/skip"), ci, co, 1, 1, 0)),
            ch_out: co,
        }
    }

    fn fwd(&self, g: &mut Graph, store: &ParamStore, x: Value, emb: Value) -> Value {
        let ci = g.shape(x)[0];
        let mut h = g.group_norm(x, gn_groups(ci), 1e-5);
        h = self.norm1.fwd(g, store, h);
        h = g.silu(h);
        h = self.conv1.fwd(g, store, h);
        h = g.group_norm(h, gn_groups(self.ch_out), 1e-5);
        h = self.norm2.fwd(g, store, h);
        // scale/shift conditioning
        let film = self.film.fwd(g, store, emb);
        let film = g.reshape(film, &[2 * self.ch_out]);
        let scale = g.slice_axis(film, 0, 0, self.ch_out);
        let shift = g.slice_axis(film, 0, self.ch_out, 2 * self.ch_out);
        let scale = g.scalar_add(scale, 1.0);
        h = g.mul_vec(h, scale, 0);
        h = g.add_vec(h, shift, 0);
        h = g.silu(h);
        h = self.conv2.fwd(g, store, h);
        let skip = match &self.skip {
            Some(conv) => conv.fwd(g, store, x),
            None => x,
        };
        g.add(skip, h)
    }
}

/// U-shaped conditional noise predictor.
#[derive(Debug, Clone)]
pub struct NoisePredictor {
    dims: ModelDims,
    time_lin: Linear,
    cond_lin: Linear,
    emb_out: Linear,
    stem: Conv2dLayer,
    enc0: ResBlock,
    down0: Conv2dLayer,
    enc1: ResBlock,
    down1: Conv2dLayer,
    enc2: ResBlock,
    mid: ResBlock,
    fuse1: Conv2dLayer,
    dec1: ResBlock,
    fuse0: Conv2dLayer,
    dec0: ResBlock,
    out_norm: NormAffine,
    out_conv: Conv2dLayer,
}

impl NoisePredictor {
    pub fn new(store: &mut ParamStore, seed: u64, dims: &ModelDims) -> Result<Self> {
        if dims.image_size % 4 != 0 {
            return Err(Error::config("noise predictor needs a resolution divisible by 4"));
        }
        let [c0, c1, c2] = dims.unet_channels;
        let emb = dims.unet_emb;
        let cin = dims.image_channels;
        Ok(NoisePredictor {
            dims: dims.clone(),
            time_lin: Linear::new(store, seed, "unet/emb/time", TIME_FEATURES, emb),
            cond_lin: Linear::new(store, seed, "unet/emb/cond", dims.d_c, emb),
            emb_out: Linear::new(store, seed, "unet/emb/out", emb, emb),
            stem: Conv2dLayer::new(store, seed, "unet/stem", cin, c0, 3, 1, 1),
            enc0: ResBlock::new(store, seed, "unet/enc0", c0, c0, emb),
            down0: Conv2dLayer::new(store, seed, "unet/down0", c0, c1, 3, 2, 1),
            enc1: ResBlock::new(store, seed, "unet/enc1", c1, c1, emb),
            down1: Conv2dLayer::new(store, seed, "unet/down1", c1, c2, 3, 2, 1),
            enc2: ResBlock::new(store, seed, "unet/enc2", c2, c2, emb),
            mid: ResBlock::new(store, seed, "unet/mid", c2, c2, emb),
            fuse1: Conv2dLayer::new(store, seed, "unet/fuse1", c2 + c1, c1, 3, 1, 1),
            dec1: ResBlock::new(store, seed, "unet/dec1", c1, c1, emb),
            fuse0: Conv2dLayer::new(store, seed, "unet/fuse0", c1 + c0, c0, 3, 1, 1),
            dec0: ResBlock::new(store, seed, "unet/dec0", c0, c0, emb),
            out_norm: NormAffine::new(store, "unet/out/norm", c0, 0),
            out_conv: Conv2dLayer::new_zero(store, "unet/out/conv", c0, cin, 3, 1, 1),
        })
    }

    pub fn cond_dim(&self) -> usize {
        self.dims.d_c
    }

    /// Single-sample graph: noisy image `[C,H,W]`, noise level in `[0,1)`,
    /// semantic code `[d_c]` to the predicted noise field `[C,H,W]`.
    pub fn g_predict(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Value,
        noise_level: f64,
        c: Value,
    ) -> Value {
        let feats = Array1::from_vec(sinusoidal_features(noise_level, TIME_FEATURES));
        let feats = g.constant(
            feats.into_shape_with_order(IxDyn(&[1, TIME_FEATURES])).unwrap(),
        );
        let t_emb = self.time_lin.fwd(g, store, feats);
        let c_row = g.reshape(c, &[1, self.dims.d_c]);
        let c_emb = self.cond_lin.fwd(g, store, c_row);
        let emb = g.add(t_emb, c_emb);
        let emb = g.silu(emb);
        let emb = self.emb_out.fwd(g, store, emb);
        let emb = g.silu(emb);

        let h0 = self.stem.fwd(g, store, x);
        let h0 = self.enc0.fwd(g, store, h0, emb);
        let h1 = self.down0.fwd(g, store, h0);
        let h1 = self.enc1.fwd(g, store, h1, emb);
        let h2 = self.down1.fwd(g, store, h1);
        let h2 = self.enc2.fwd(g, store, h2, emb);
        let m = self.mid.fwd(g, store, h2, emb);

        let u1 = g.upsample2(m);
        let u1 = g.concat(&[u1, h1], 0);
        let u1 = self.fuse1.fwd(g, store, u1);
        let u1 = self.dec1.fwd(g, store, u1, emb);
        let u0 = g.upsample2(u1);
        let u0 = g.concat(&[u0, h0], 0);
        let u0 = self.fuse0.fwd(g, store, u0);
        let u0 = self.dec0.fwd(g, store, u0, emb);

        let groups = gn_groups(g.shape(u0)[0]);
        let out = g.group_norm(u0, groups, 1e-5);
        let out = self.out_norm.fwd(g, store, out);
        let out = g.silu(out);
        self.out_conv.fwd(g, store, out)
    }
}

/// A noise predictor bound to its parameter store, usable by the
/// inversion/generation loops.
#[derive(Clone, Copy)]
pub struct BoundPredictor<'a> {
    pub net: &'a NoisePredictor,
    pub store: &'a ParamStore,
}

impl NoiseModel<f64> for BoundPredictor<'_> {
    fn cond_dim(&self) -> usize {
        self.net.cond_dim()
    }

    fn predict(&self, x: &Array4<f64>, noise_level: f64, c: &Array2<f64>) -> Result<Array4<f64>> {
        let (b, ch, h, w) = x.dim();
        if ch != self.net.dims.image_channels || h != self.net.dims.image_size || w != h {
            return Err(Error::invalid(format!(
                "noise predictor configured for {}x{}x{}, got {}x{}x{}",
                self.net.dims.image_channels, self.net.dims.image_size, self.net.dims.image_size,
                ch, h, w
            )));
        }
        let per: Vec<ndarray::Array3<f64>> = map_batch(b, |i| {
            let mut g = Graph::new();
            let xi = g.constant(x.index_axis(Axis(0), i).to_owned().into_dyn());
            let ci = g.constant(
                c.index_axis(Axis(0), i)
                    .to_owned()
                    .into_shape_with_order(IxDyn(&[self.net.dims.d_c]))
                    .unwrap(),
            );
            let out = self.net.g_predict(&mut g, self.store, xi, noise_level, ci);
            g.value(out).clone().into_dimensionality().unwrap()
        });
        let mut out = Array4::zeros(x.raw_dim());
        for (i, r) in per.iter().enumerate() {
            out.index_axis_mut(Axis(0), i).assign(r);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{make_schedule, predict_noise, ScheduleKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (ParamStore, NoisePredictor, ModelDims) {
        let dims = ModelDims::tiny();
        let mut store = ParamStore::new();
        let net = NoisePredictor::new(&mut store, 17, &dims).unwrap();
        (store, net, dims)
    }

    /// Perturb every unet parameter so conditioning paths are non-degenerate
    /// (the default init deliberately starts residual tails at zero).
    fn randomize(store: &mut ParamStore, seed: u64) {
        let names: Vec<String> = store.names_with_prefix("unet").cloned().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for name in names {
            store.get_mut(&name).mapv_inplace(|v| v + rng.gen_range(-0.05..0.05));
        }
    }

    fn rand_batch(b: usize, dims: &ModelDims, seed: u64) -> Array4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array4::from_shape_fn((b, dims.image_channels, dims.image_size, dims.image_size), |_| {
            rng.gen_range(-1.0..1.0)
        })
    }

    #[test]
    fn zero_initialized_output_head_predicts_zero() {
        let (store, net, dims) = setup();
        let x = rand_batch(1, &dims, 1);
        let c = Array2::zeros((1, dims.d_c));
        let bound = BoundPredictor { net: &net, store: &store };
        let eps = bound.predict(&x, 0.3, &c).unwrap();
        assert!(eps.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn prediction_is_deterministic_and_shape_preserving() {
        let (mut store, net, dims) = setup();
        randomize(&mut store, 2);
        let x = rand_batch(2, &dims, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = Array2::from_shape_fn((2, dims.d_c), |_| rng.gen_range(-1.0..1.0));
        let bound = BoundPredictor { net: &net, store: &store };
        let a = bound.predict(&x, 0.4, &c).unwrap();
        let b = bound.predict(&x, 0.4, &c).unwrap();
        assert_eq!(a.raw_dim(), x.raw_dim());
        let ab: Vec<u64> = a.iter().map(|v| v.to_bits()).collect();
        let bb: Vec<u64> = b.iter().map(|v| v.to_bits()).collect();
        assert_eq!(ab, bb);
    }

    #[test]
    fn conditioning_reaches_the_output() {
        let (mut store, net, dims) = setup();
        randomize(&mut store, 5);
        let x = rand_batch(1, &dims, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let c1 = Array2::from_shape_fn((1, dims.d_c), |_| rng.gen_range(-1.0..1.0));
        let c2 = Array2::from_shape_fn((1, dims.d_c), |_| rng.gen_range(-1.0..1.0));
        let bound = BoundPredictor { net: &net, store: &store };
        let e1 = bound.predict(&x, 0.5, &c1).unwrap();
        let e2 = bound.predict(&x, 0.5, &c2).unwrap();
        assert!(e1 != e2, "distinct semantic codes must change the prediction");
    }

    #[test]
    fn batch_elements_are_independent() {
        let (mut store, net, dims) = setup();
        randomize(&mut store, 8);
        let mut x = rand_batch(2, &dims, 9);
        let one = x.index_axis(Axis(0), 0).to_owned();
        x.index_axis_mut(Axis(0), 1).assign(&one);
        let c = Array2::from_elem((2, dims.d_c), 0.1);
        let bound = BoundPredictor { net: &net, store: &store };
        let e = bound.predict(&x, 0.2, &c).unwrap();
        assert_eq!(e.index_axis(Axis(0), 0), e.index_axis(Axis(0), 1));
    }

    #[test]
    fn predict_noise_validates_width_through_schedule() {
        let (store, net, dims) = setup();
        let sched = make_schedule(4, ScheduleKind::LinearBeta).unwrap();
        let x = rand_batch(1, &dims, 10);
        let bad = Array2::zeros((1, dims.d_c + 1));
        let bound = BoundPredictor { net: &net, store: &store };
        assert!(predict_noise(&bound, &x, 1, &bad, &sched).is_err());
        let good = Array2::zeros((1, dims.d_c));
        assert!(predict_noise(&bound, &x, 1, &good, &sched).is_ok());
    }
}
