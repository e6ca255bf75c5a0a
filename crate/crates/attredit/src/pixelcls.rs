//! Pixel-space attribute classifier used by evaluation: it scores edited
//! images for attribute accuracy and its penultimate (pooled) activations
//! serve as the pluggable feature extractor for the Fréchet metric.

use crate::autodiff::nn::{Conv2dLayer, Linear};
use crate::autodiff::store::{in_namespace, ParamStore};
use crate::autodiff::{Graph, TensorD, Value};
use crate::data::{item_rng, Image, LabeledImage, TagSchema};
use crate::error::{Error, Result};
use crate::losses::g_bce_sum;
use crate::optim::{average_grads, Adam};
use crate::parallel::map_batch;
use ndarray::{Array1, Array2};
use rand::Rng;
use std::collections::BTreeMap;

/// Features fed to the Fréchet metric.
pub trait FeatureExtractor: Sync {
    fn feature_dim(&self) -> usize;
    fn features(&self, images: &[Image]) -> Array2<f64>;
}

/// Two-block convolutional classifier over pixel space.
#[derive(Debug, Clone)]
pub struct PixelClassifier {
    store: ParamStore,
    conv1: Conv2dLayer,
    conv2: Conv2dLayer,
    conv3: Conv2dLayer,
    head: Linear,
    schema: TagSchema,
    image_size: usize,
    feat_dim: usize,
}

const WIDTH1: usize = 12;
const WIDTH2: usize = 24;

impl PixelClassifier {
    fn build(schema: &TagSchema, image_size: usize, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let conv1 = Conv2dLayer::new(&mut store, seed, "pixelcls/conv1", 3, WIDTH1, 3, 2, 1);
        let conv2 = Conv2dLayer::new(&mut store, seed, "pixelcls/conv2", WIDTH1, WIDTH2, 3, 2, 1);
        let conv3 = Conv2dLayer::new(&mut store, seed, "pixelcls/conv3", WIDTH2, WIDTH2, 3, 1, 1);
        let spatial = image_size / 4;
        let head = Linear::new(
            &mut store,
            seed,
            "pixelcls/head",
            WIDTH2 * spatial * spatial,
            schema.num_attrs_total(),
        );
        PixelClassifier {
            store,
            conv1,
            conv2,
            conv3,
            head,
            schema: schema.clone(),
            image_size,
            feat_dim: WIDTH2,
        }
    }

    /// Graph forward to (pooled features, probabilities).
    fn g_forward(&self, g: &mut Graph, store: &ParamStore, x: Value) -> (Value, Value) {
        let mut h = self.conv1.fwd(g, store, x);
        h = g.leaky_relu(h, 0.2);
        h = self.conv2.fwd(g, store, h);
        h = g.leaky_relu(h, 0.2);
        h = self.conv3.fwd(g, store, h);
        h = g.leaky_relu(h, 0.2);
        let pooled = g.spatial_mean(h);
        let spatial = self.image_size / 4;
        let flat = g.reshape(h, &[1, self.feat_dim * spatial * spatial]);
        let logits = self.head.fwd(g, store, flat);
        let probs = g.sigmoid(logits);
        let probs = g.reshape(probs, &[self.schema.num_attrs_total()]);
        (pooled, probs)
    }

    /// Train on a labeled dataset with binary cross-entropy.
    pub fn train(
        dataset: &[LabeledImage],
        schema: &TagSchema,
        image_size: usize,
        seed: u64,
        steps: usize,
        batch: usize,
    ) -> Result<(Self, Vec<f64>)> {
        if dataset.is_empty() {
            return Err(Error::invalid("classifier training needs a non-empty dataset"));
        }
        let mut cls = Self::build(schema, image_size, seed);
        let mut opt = Adam::new();
        let mut losses = Vec::with_capacity(steps);
        for step in 0..steps {
            let mut rng = item_rng(seed ^ 0xc1a5_51f1, step as u64);
            let idxs: Vec<usize> =
                (0..batch).map(|_| rng.gen_range(0..dataset.len())).collect();
            let per: Vec<(f64, BTreeMap<String, TensorD>)> = {
                let c = &cls;
                map_batch(idxs.len(), |j| {
                    let item = &dataset[idxs[j]];
                    let labels = item.label_vector(&c.schema);
                    let mut g = Graph::new();
                    let xv = g.constant(item.image.clone().into_dyn());
                    let (_, probs) = c.g_forward(&mut g, &c.store, xv);
                    let loss = g_bce_sum(&mut g, probs, &labels);
                    let grads = g.backward(loss);
                    (g.value(loss)[[0]], g.param_grads(&grads))
                })
            };
            let loss = per.iter().map(|(l, _)| *l).sum::<f64>() / per.len() as f64;
            if !loss.is_finite() {
                return Err(Error::NonFinite { step, detail: format!("classifier loss {loss}") });
            }
            let grads = average_grads(&per.into_iter().map(|(_, g)| g).collect::<Vec<_>>());
            opt.step(&mut cls.store, &grads, |n| in_namespace(n, "pixelcls").then_some(2e-3));
            losses.push(loss);
        }
        Ok((cls, losses))
    }

    fn check_image(&self, img: &Image) -> Result<()> {
        let (c, h, w) = img.dim();
        if c != 3 || h != self.image_size || w != self.image_size {
            return Err(Error::invalid(format!(
                "classifier expects 3x{0}x{0} images, got {c}x{h}x{w}",
                self.image_size
            )));
        }
        Ok(())
    }

    /// Per-attribute probabilities for a set of images.
    pub fn probs(&self, images: &[Image]) -> Result<Array2<f64>> {
        for img in images {
            self.check_image(img)?;
        }
        let rows: Vec<Array1<f64>> = map_batch(images.len(), |i| {
            let mut g = Graph::new();
            let xv = g.constant(images[i].clone().into_dyn());
            let (_, probs) = self.g_forward(&mut g, &self.store, xv);
            g.value(probs).clone().into_dimensionality().unwrap()
        });
        let mut out = Array2::zeros((images.len(), self.schema.num_attrs_total()));
        for (i, r) in rows.iter().enumerate() {
            out.row_mut(i).assign(r);
        }
        Ok(out)
    }

    /// The predicted attribute per tag (argmax within each tag block).
    pub fn predict(&self, images: &[Image]) -> Result<Vec<Vec<usize>>> {
        let probs = self.probs(images)?;
        let mut out = Vec::with_capacity(images.len());
        for row in probs.rows() {
            let mut attrs = Vec::with_capacity(self.schema.num_tags());
            for tag in 0..self.schema.num_tags() {
                let block: Vec<f64> = (0..self.schema.attr_count(tag))
                    .map(|a| row[self.schema.flat_index(tag, a)])
                    .collect();
                let best = block
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap();
                attrs.push(best);
            }
            out.push(attrs);
        }
        Ok(out)
    }

    /// Fraction of items whose `tag` attribute is predicted correctly,
    /// per tag.
    pub fn per_tag_accuracy(&self, data: &[LabeledImage]) -> Result<Vec<f64>> {
        let images: Vec<Image> = data.iter().map(|d| d.image.clone()).collect();
        let preds = self.predict(&images)?;
        let mut acc = vec![0.0; self.schema.num_tags()];
        for (pred, item) in preds.iter().zip(data) {
            for tag in 0..self.schema.num_tags() {
                if pred[tag] == item.attrs[tag] {
                    acc[tag] += 1.0;
                }
            }
        }
        Ok(acc.into_iter().map(|a| a / data.len() as f64).collect())
    }

    pub fn schema(&self) -> &TagSchema {
        &self.schema
    }
}

impl FeatureExtractor for PixelClassifier {
    fn feature_dim(&self) -> usize {
        self.feat_dim
    }

    /// Penultimate pooled activations.
    fn features(&self, images: &[Image]) -> Array2<f64> {
        let rows: Vec<Array1<f64>> = map_batch(images.len(), |i| {
            let mut g = Graph::new();
            let xv = g.constant(images[i].clone().into_dyn());
            let (pooled, _) = self.g_forward(&mut g, &self.store, xv);
            g.value(pooled).clone().into_dimensionality().unwrap()
        });
        let mut out = Array2::zeros((images.len(), self.feat_dim));
        for (i, r) in rows.iter().enumerate() {
            out.row_mut(i).assign(r);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_toy_dataset;

    #[test]
    fn classifier_learns_the_toy_tags() {
        let schema = TagSchema::toy();
        let train = synth_toy_dataset(100, 1000, &schema).unwrap();
        let held_out = synth_toy_dataset(200, 200, &schema).unwrap();
        let (cls, losses) =
            PixelClassifier::train(&train, &schema, 32, 5, 300, 16).unwrap();
        assert!(losses.last().unwrap() < &losses[0]);
        let acc = cls.per_tag_accuracy(&held_out).unwrap();
        for (tag, a) in acc.iter().enumerate() {
            assert!(*a >= 0.99, "tag {tag} held-out accuracy {a} too low");
        }
    }

    #[test]
    fn features_have_the_declared_width() {
        let schema = TagSchema::toy();
        let data = synth_toy_dataset(3, 4, &schema).unwrap();
        let (cls, _) = PixelClassifier::train(&data, &schema, 32, 1, 2, 2).unwrap();
        let images: Vec<Image> = data.iter().map(|d| d.image.clone()).collect();
        let f = cls.features(&images);
        assert_eq!(f.dim(), (4, cls.feature_dim()));
        let err = cls.probs(&[ndarray::Array3::zeros((3, 16, 16))]);
        assert!(err.is_err());
    }
}
