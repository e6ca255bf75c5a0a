//! Two-phase training.
//!
//! Phase 1 pretrains the diffusion autoencoder: the noise predictor learns
//! noise regression conditioned on the semantic code of the clean image,
//! where the code comes from the editor run with a self-extracted style.
//! The attribute classifier is then fitted on real-image codes and frozen.
//!
//! Phase 2 trains the mapper, extractor, translators and discriminator with
//! alternating discriminator/generator updates while the noise predictor
//! and the editor's shared stages stay bitwise frozen.
//!
//! All per-step randomness is drawn sequentially from a step-derived stream
//! before any parallel fan-out, so runs are bitwise reproducible.

use crate::autodiff::store::{in_namespace, ParamStore};
use crate::autodiff::{Graph, TensorD};
use crate::checkpoint::{self, CheckpointMeta, SCHEMA_VERSION};
use crate::codecs::{prior_map, refine_extract, Extractor, LatentSeed, Mapper, StyleCode};
use crate::config::{Ablation, TrainConfig};
use crate::data::{item_rng, EditRequest, GuidedMode, Image, ImageBatch, LabeledImage, TagSchema};
use crate::discriminator::{AttributeClassifier, Discriminator};
use crate::editor::{AttributeEditor, FeatureMap, SemanticCodes};
use crate::error::{Error, Result};
use crate::losses::{
    g_bce_sum, g_l1_mean, g_log_one_minus, g_log_prob, LossReport, LossWeights,
};
use crate::optim::{average_grads, Adam};
use crate::parallel::map_batch;
use crate::schedule::{generate, invert, make_schedule, NoiseSchedule, ScheduleKind};
use crate::unet::{BoundPredictor, NoisePredictor};
use ndarray::{Array1, Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

const PHASE1_SALT: u64 = 0x9d5c_71a3_0001;
const PHASE2_SALT: u64 = 0x9d5c_71a3_0002;
const ATTRCLS_SALT: u64 = 0x9d5c_71a3_0003;

/// Every trainable module plus its parameter store and training schedule.
#[derive(Clone)]
pub struct Models {
    pub dims: crate::config::ModelDims,
    pub schema: TagSchema,
    pub sched: NoiseSchedule,
    pub store: ParamStore,
    pub unet: NoisePredictor,
    pub editor: AttributeEditor,
    pub mapper: Mapper,
    pub extractor: Extractor,
    pub disc: Discriminator,
    pub attr_cls: AttributeClassifier,
    pub ablation: Ablation,
}

impl Models {
    /// Fresh initialization from a config and schema.
    pub fn build(config: &TrainConfig, schema: &TagSchema) -> Result<Models> {
        config.validate()?;
        let dims = config.dims.clone();
        let seed = config.seed;
        let mut store = ParamStore::new();
        let unet = NoisePredictor::new(&mut store, seed, &dims)?;
        let editor = AttributeEditor::new(&mut store, seed, &dims, schema)?;
        let mapper = Mapper::build(&mut store, seed, &dims, schema, config.ablation)?;
        let extractor = Extractor::build(&mut store, seed, &dims, schema, config.ablation)?;
        let disc = Discriminator::new(&mut store, seed, &dims, schema)?;
        let attr_cls = AttributeClassifier::new(&mut store, seed, &dims, schema);
        let sched = make_schedule(config.t_train, ScheduleKind::LinearBeta)?;
        Ok(Models {
            dims,
            schema: schema.clone(),
            sched,
            store,
            unet,
            editor,
            mapper,
            extractor,
            disc,
            attr_cls,
            ablation: config.ablation,
        })
    }

    /// Rebuild structure from checkpoint metadata and take over its tensors.
    pub fn from_checkpoint(dir: &Path) -> Result<Models> {
        let (store, meta) = checkpoint::load(dir)?;
        let mut config = meta.config.clone();
        config.dims = meta.dims.clone();
        config.ablation = meta.ablation;
        config.t_train = meta.t;
        config.seed = meta.seed;
        let mut models = Models::build(&config, &meta.tag_schema)?;
        for (name, tensor) in models.store.iter() {
            let loaded = store.try_get(name)?;
            if loaded.shape() != tensor.shape() {
                return Err(Error::schema(format!(
                    "checkpoint tensor '{name}' has shape {:?}, expected {:?}",
                    loaded.shape(),
                    tensor.shape()
                )));
            }
        }
        models.store = store;
        Ok(models)
    }

    pub fn save_checkpoint(&self, dir: &Path, config: &TrainConfig, step: usize) -> Result<()> {
        let meta = CheckpointMeta {
            schema_version: SCHEMA_VERSION,
            t: self.sched.num_steps(),
            kind: self.sched.kind(),
            cond_dim: self.dims.d_c,
            shapes: BTreeMap::new(),
            dims: self.dims.clone(),
            tag_schema: self.schema.clone(),
            ablation: self.ablation,
            config: config.clone(),
            step,
            seed: config.seed,
        };
        checkpoint::save(dir, &self.store, &meta)
    }

    /// Reference-guided self style `E_i(x)` for a batch.
    pub fn self_style(&self, x: &ImageBatch, tag: usize) -> Result<StyleCode> {
        refine_extract(&self.extractor, &self.store, x, &self.schema, tag, &self.dims)
    }

    /// Latent-guided target style `M_{i,j'}(z, x)` for a batch.
    pub fn target_style(
        &self,
        z: &LatentSeed,
        x: &ImageBatch,
        tag: usize,
        target_attr: usize,
    ) -> Result<StyleCode> {
        prior_map(&self.mapper, &self.store, z, x, &self.schema, tag, target_attr, &self.dims)
    }

    /// Semantic code of `x` under its own extracted style (the inversion
    /// conditioning of the editing algorithm).
    pub fn self_semantic(&self, x: &ImageBatch, tag: usize) -> Result<(SemanticCodes, FeatureMap)> {
        let s = self.self_style(x, tag)?;
        self.editor.encode_semantic(&self.store, x, &s, tag)
    }

    /// Uniform-stride evaluation schedule.
    pub fn eval_schedule(&self, eval_steps: usize) -> Result<NoiseSchedule> {
        self.sched.subsample(eval_steps)
    }

    pub fn predictor(&self) -> BoundPredictor<'_> {
        BoundPredictor { net: &self.unet, store: &self.store }
    }
}

fn gaussian_image(rng: &mut rand_chacha::ChaCha8Rng, c: usize, h: usize, w: usize) -> Array3<f64> {
    Array3::from_shape_fn((c, h, w), |_| StandardNormal.sample(rng))
}

/// Progress of a phase-1 run: the regression loss per step and the
/// held-out round-trip error sampled every `recon_interval` steps.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PretrainReport {
    pub losses: Vec<f64>,
    pub recon_curve: Vec<f64>,
    pub attrcls_losses: Vec<f64>,
}

/// Round-trip a single image through inversion and generation with its own
/// semantic code; returns the max-abs pixel error.
pub fn reconstruction_error(models: &Models, image: &Image, eval_steps: usize) -> Result<f64> {
    let x = image.clone().insert_axis(Axis(0));
    let (codes, _) = models.self_semantic(&x, 0)?;
    let sched = models.eval_schedule(eval_steps)?;
    let bound = models.predictor();
    let xt = invert(&x, &codes, &bound, &sched)?;
    let back = generate(&xt, &codes, &bound, &sched)?;
    Ok(x.iter().zip(back.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

/// Phase 1: pretrain the diffusion autoencoder (noise predictor + editor
/// backbone + extractor) with noise-prediction regression, then fit the
/// attribute classifier on real-image codes. The last dataset image is held
/// out for the reconstruction curve.
pub fn pretrain_diffusion(
    dataset: &[LabeledImage],
    config: &TrainConfig,
    schema: &TagSchema,
) -> Result<(Models, PretrainReport)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("pretraining needs a non-empty dataset"));
    }
    let mut models = Models::build(config, schema)?;
    let steps = if config.pretrain_steps > 0 {
        config.pretrain_steps
    } else {
        config.epochs * dataset.len().div_ceil(config.batch_size)
    };
    let train_count = if dataset.len() > 1 { dataset.len() - 1 } else { 1 };
    let held_out = &dataset[dataset.len() - 1].image;
    let recon_interval = (steps / 10).max(1);

    let mut opt = Adam::new();
    let mut report =
        PretrainReport { losses: Vec::new(), recon_curve: Vec::new(), attrcls_losses: Vec::new() };

    for step in 0..steps {
        let mut rng = item_rng(config.seed ^ PHASE1_SALT, step as u64);
        // all stochastic choices are drawn sequentially up front
        let mut jobs = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            let idx = rng.gen_range(0..train_count);
            let t = rng.gen_range(0..=models.sched.num_steps());
            let tag = rng.gen_range(0..schema.num_tags());
            let noise_seed: u64 = rng.gen();
            jobs.push((idx, t, tag, noise_seed));
        }
        let sched = &models.sched;
        let store = &models.store;
        let editor = &models.editor;
        let extractor = &models.extractor;
        let unet = &models.unet;
        let dims = &models.dims;
        let per: Vec<(f64, BTreeMap<String, TensorD>)> = map_batch(jobs.len(), |j| {
            let (idx, t, tag, noise_seed) = jobs[j];
            let x0 = &dataset[idx].image;
            let mut nrng = rand_chacha::ChaCha8Rng::seed_from_u64(noise_seed);
            let eps =
                gaussian_image(&mut nrng, dims.image_channels, dims.image_size, dims.image_size);
            let ab = sched.alpha_bar(t);
            let x_t = x0.mapv(|v| v * ab.sqrt()) + eps.mapv(|v| v * (1.0 - ab).sqrt());

            let mut g = Graph::new();
            let x0v = g.constant(x0.clone().into_dyn());
            let s = extractor.g_extract(&mut g, store, x0v, tag);
            let s_row = g.reshape(s, &[1, dims.d_s]);
            let f = editor.g_extract(&mut g, store, x0v);
            let (ft, _) = editor.g_translate(&mut g, store, f, s_row, tag);
            let c = editor.g_encode_from(&mut g, store, ft);
            let xt_v = g.constant(x_t.into_dyn());
            let pred = unet.g_predict(&mut g, store, xt_v, sched.noise_level(t), c);
            let eps_v = g.constant(eps.into_dyn());
            let d = g.sub(pred, eps_v);
            let d2 = g.mul(d, d);
            let loss = g.mean_all(d2);
            let grads = g.backward(loss);
            (g.value(loss)[[0]], g.param_grads(&grads))
        });
        let loss = per.iter().map(|(l, _)| *l).sum::<f64>() / per.len() as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite { step, detail: format!("pretrain loss {loss}") });
        }
        let grads = average_grads(&per.into_iter().map(|(_, g)| g).collect::<Vec<_>>());
        opt.step(&mut models.store, &grads, |_| Some(config.lr_pretrain));
        report.losses.push(loss);
        if (step + 1) % recon_interval == 0 || step + 1 == steps {
            report.recon_curve.push(reconstruction_error(&models, held_out, config.eval_steps)?);
        }
    }

    report.attrcls_losses = fit_attribute_classifier(dataset, &mut models, config)?;
    Ok((models, report))
}

/// Fit the attribute classifier on semantic codes of real images (computed
/// with the now-frozen encoder) and leave every other namespace untouched.
fn fit_attribute_classifier(
    dataset: &[LabeledImage],
    models: &mut Models,
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    let mut opt = Adam::new();
    let mut losses = Vec::with_capacity(config.attrcls_steps);
    for step in 0..config.attrcls_steps {
        let mut rng = item_rng(config.seed ^ ATTRCLS_SALT, step as u64);
        let mut jobs = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            let idx = rng.gen_range(0..dataset.len());
            let tag = rng.gen_range(0..models.schema.num_tags());
            jobs.push((idx, tag));
        }
        // codes from the frozen encoder, no gradient flow into it
        let codes: Vec<Array1<f64>> = {
            let store = &models.store;
            let editor = &models.editor;
            let extractor = &models.extractor;
            let dims = &models.dims;
            map_batch(jobs.len(), |j| {
                let (idx, tag) = jobs[j];
                let mut g = Graph::new();
                let xv = g.constant(dataset[idx].image.clone().into_dyn());
                let s = extractor.g_extract(&mut g, store, xv, tag);
                let s_row = g.reshape(s, &[1, dims.d_s]);
                let f = editor.g_extract(&mut g, store, xv);
                let (ft, _) = editor.g_translate(&mut g, store, f, s_row, tag);
                let c = editor.g_encode_from(&mut g, store, ft);
                g.value(c).clone().into_dimensionality().unwrap()
            })
        };
        let per: Vec<(f64, BTreeMap<String, TensorD>)> = {
            let store = &models.store;
            let attr_cls = &models.attr_cls;
            let schema = &models.schema;
            map_batch(jobs.len(), |j| {
                let (idx, _) = jobs[j];
                let labels = dataset[idx].label_vector(schema);
                let mut g = Graph::new();
                let cv = g.constant(codes[j].clone().into_dyn());
                let probs = attr_cls.g_classify(&mut g, store, cv);
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
        opt.step(&mut models.store, &grads, |n| {
            in_namespace(n, "attrcls").then_some(1e-3)
        });
        losses.push(loss);
    }
    Ok(losses)
}

/// One batch item of phase-2 training.
pub struct StepJob {
    image: Image,
    tag: usize,
    source_attr: usize,
    target_attr: usize,
    z: Array2<f64>,
    labels: Array1<f64>,
}

fn step_jobs(
    batch: &[(LabeledImage, EditRequest)],
    z_seeds: &[u64],
    models: &Models,
) -> Result<Vec<StepJob>> {
    if batch.len() != z_seeds.len() {
        return Err(Error::invalid("one z seed per batch item is required"));
    }
    batch
        .iter()
        .zip(z_seeds)
        .map(|((item, req), &seed)| {
            if req.target_attr == req.source_attr {
                return Err(Error::invalid(
                    "training edits must target a different attribute (j' != j)",
                ));
            }
            models.schema.check_pair(req.tag, req.target_attr)?;
            let z = LatentSeed::sample(seed, 1, &models.dims)
                .z
                .index_axis(Axis(0), 0)
                .to_owned();
            let labels = crate::data::edited_label_vector(&models.schema, item, req.tag, req.target_attr);
            Ok(StepJob {
                image: item.image.clone(),
                tag: req.tag,
                source_attr: req.source_attr,
                target_attr: req.target_attr,
                z,
                labels,
            })
        })
        .collect()
}

/// Values produced by the generator-side forward pass for one sample.
pub(crate) struct GeneratorForward {
    f: Array3<f64>,
    f_edit: Array3<f64>,
    f_cycle: Array3<f64>,
}

fn generator_forward(models: &Models, job: &StepJob) -> GeneratorForward {
    let mut g = Graph::new();
    let xv = g.constant(job.image.clone().into_dyn());
    let f = models.editor.g_extract(&mut g, &models.store, xv);
    let s_self = models.extractor.g_extract(&mut g, &models.store, xv, job.tag);
    let s_self = g.reshape(s_self, &[1, models.dims.d_s]);
    let zv = g.constant(job.z.clone().into_dyn());
    let s_tgt = models.mapper.g_map(&mut g, &models.store, zv, xv, job.tag, job.target_attr);
    let s_tgt = g.reshape(s_tgt, &[1, models.dims.d_s]);
    let (f_edit, _) = models.editor.g_translate(&mut g, &models.store, f, s_tgt, job.tag);
    let (f_cycle, _) = models.editor.g_translate(&mut g, &models.store, f_edit, s_self, job.tag);
    GeneratorForward {
        f: g.value(f).clone().into_dimensionality().unwrap(),
        f_edit: g.value(f_edit).clone().into_dimensionality().unwrap(),
        f_cycle: g.value(f_cycle).clone().into_dimensionality().unwrap(),
    }
}

/// Discriminator ascent phase: judge detached features, descend
/// `-adversarial_value`, update only `disc/*`. Returns the batch-mean value.
pub fn discriminator_phase(
    jobs: &[StepJob],
    models: &mut Models,
    opt_d: &mut Adam,
    config: &TrainConfig,
) -> Result<f64> {
    let forwards: Vec<GeneratorForward> = {
        let m = &*models;
        map_batch(jobs.len(), |i| generator_forward(m, &jobs[i]))
    };
    let per: Vec<(f64, BTreeMap<String, TensorD>)> = {
        let m = &*models;
        map_batch(jobs.len(), |i| {
            let job = &jobs[i];
            let fwd = &forwards[i];
            let mut g = Graph::new();
            let f = g.constant(fwd.f.clone().into_dyn());
            let fe = g.constant(fwd.f_edit.clone().into_dyn());
            let fc = g.constant(fwd.f_cycle.clone().into_dyn());
            let p_real = m.disc.g_discriminate(&mut g, &m.store, f, job.tag, job.source_attr);
            let p_fe = m.disc.g_discriminate(&mut g, &m.store, fe, job.tag, job.target_attr);
            let p_fc = m.disc.g_discriminate(&mut g, &m.store, fc, job.tag, job.source_attr);
            let t_real = g_log_prob(&mut g, p_real);
            let t_real = g.scalar_mul(t_real, 2.0);
            let t_fe = g_log_one_minus(&mut g, p_fe);
            let t_fc = g_log_one_minus(&mut g, p_fc);
            let v = g.add(t_real, t_fe);
            let v = g.add(v, t_fc);
            let value = g.sum_all(v);
            let total_d = g.neg(value);
            let grads = g.backward(total_d);
            (g.value(value)[[0]], g.param_grads(&grads))
        })
    };
    let value = per.iter().map(|(v, _)| *v).sum::<f64>() / per.len() as f64;
    let grads = average_grads(&per.into_iter().map(|(_, g)| g).collect::<Vec<_>>());
    opt_d.step(&mut models.store, &grads, |n| {
        in_namespace(n, "disc").then_some(config.lr_main)
    });
    Ok(value)
}

/// Generator descent phase: full graph through the codecs, translators and
/// (current) discriminator/classifier; updates only the min-player
/// namespaces at their per-module learning rates.
pub fn generator_phase(
    jobs: &[StepJob],
    models: &mut Models,
    opt_g: &mut Adam,
    weights: &LossWeights,
    config: &TrainConfig,
) -> Result<(Option<f64>, Option<f64>, Option<f64>, f64)> {
    struct SampleOut {
        rec: Option<f64>,
        adv_g: Option<f64>,
        cls: Option<f64>,
        total: f64,
        grads: BTreeMap<String, TensorD>,
    }
    let per: Vec<SampleOut> = {
        let m = &*models;
        map_batch(jobs.len(), |i| {
            let job = &jobs[i];
            let mut g = Graph::new();
            let xv = g.constant(job.image.clone().into_dyn());
            let f = m.editor.g_extract(&mut g, &m.store, xv);
            let s_self = m.extractor.g_extract(&mut g, &m.store, xv, job.tag);
            let s_self = g.reshape(s_self, &[1, m.dims.d_s]);
            let (f_prime, _) = m.editor.g_translate(&mut g, &m.store, f, s_self, job.tag);
            let zv = g.constant(job.z.clone().into_dyn());
            let s_tgt = m.mapper.g_map(&mut g, &m.store, zv, xv, job.tag, job.target_attr);
            let s_tgt = g.reshape(s_tgt, &[1, m.dims.d_s]);
            let (f_edit, _) = m.editor.g_translate(&mut g, &m.store, f, s_tgt, job.tag);
            let (f_cycle, _) = m.editor.g_translate(&mut g, &m.store, f_edit, s_self, job.tag);

            let mut total: Option<crate::autodiff::Value> = None;
            let mut add_term = |g: &mut Graph, term: crate::autodiff::Value, w: f64| {
                let term = g.scalar_mul(term, w);
                total = Some(match total {
                    Some(t) => g.add(t, term),
                    None => term,
                });
            };

            let rec = if weights.use_rec {
                let l1a = g_l1_mean(&mut g, f_prime, f);
                let l1b = g_l1_mean(&mut g, f_cycle, f);
                let rec = g.add(l1a, l1b);
                add_term(&mut g, rec, weights.w_rec);
                Some(g.value(rec)[[0]])
            } else {
                None
            };
            let cls = if weights.use_cls {
                let c = m.editor.g_encode_from(&mut g, &m.store, f_edit);
                let probs = m.attr_cls.g_classify(&mut g, &m.store, c);
                let cls = g_bce_sum(&mut g, probs, &job.labels);
                add_term(&mut g, cls, weights.w_cls);
                Some(g.value(cls)[[0]])
            } else {
                None
            };
            let adv_g = if weights.use_adv {
                let p_fe =
                    m.disc.g_discriminate(&mut g, &m.store, f_edit, job.tag, job.target_attr);
                let p_fc =
                    m.disc.g_discriminate(&mut g, &m.store, f_cycle, job.tag, job.source_attr);
                let term = if weights.saturating_g {
                    let a = g_log_one_minus(&mut g, p_fe);
                    let b = g_log_one_minus(&mut g, p_fc);
                    g.add(a, b)
                } else {
                    let a = g_log_prob(&mut g, p_fe);
                    let b = g_log_prob(&mut g, p_fc);
                    let s = g.add(a, b);
                    g.neg(s)
                };
                let term = g.sum_all(term);
                add_term(&mut g, term, weights.w_adv);
                Some(g.value(term)[[0]])
            } else {
                None
            };
            let total = total.expect("at least one loss term must stay active");
            let grads = g.backward(total);
            SampleOut {
                rec,
                adv_g,
                cls,
                total: g.value(total)[[0]],
                grads: g.param_grads(&grads),
            }
        })
    };
    let n = per.len() as f64;
    let mean_opt = |f: fn(&SampleOut) -> Option<f64>| -> Option<f64> {
        per.iter().map(f).collect::<Option<Vec<f64>>>().map(|v| v.iter().sum::<f64>() / n)
    };
    let rec = mean_opt(|s| s.rec);
    let adv_g = mean_opt(|s| s.adv_g);
    let cls = mean_opt(|s| s.cls);
    let total_g = per.iter().map(|s| s.total).sum::<f64>() / n;
    let grads = average_grads(&per.into_iter().map(|s| s.grads).collect::<Vec<_>>());
    let freeze = config.freeze_namespaces.clone();
    opt_g.step(&mut models.store, &grads, |name| {
        if freeze.iter().any(|ns| in_namespace(name, ns)) {
            return None;
        }
        if in_namespace(name, "disc") || in_namespace(name, "attrcls") {
            return None;
        }
        if in_namespace(name, "mapper") {
            return Some(config.lr_mapper);
        }
        Some(config.lr_main)
    });
    Ok((rec, adv_g, cls, total_g))
}

/// One alternating training step: a discriminator ascent step on the value
/// function, then a generator descent step on `rec + cls + adversarial`.
pub fn training_step(
    batch: &[(LabeledImage, EditRequest)],
    z_seeds: &[u64],
    models: &mut Models,
    opt_d: &mut Adam,
    opt_g: &mut Adam,
    config: &TrainConfig,
) -> Result<LossReport> {
    let weights = LossWeights::for_ablation(config.ablation, config.saturating_adv);
    training_step_with_weights(batch, z_seeds, models, opt_d, opt_g, config, &weights)
}

/// [`training_step`] with explicit loss-term control (used by tests and the
/// ablation grid).
pub fn training_step_with_weights(
    batch: &[(LabeledImage, EditRequest)],
    z_seeds: &[u64],
    models: &mut Models,
    opt_d: &mut Adam,
    opt_g: &mut Adam,
    config: &TrainConfig,
    weights: &LossWeights,
) -> Result<LossReport> {
    let jobs = step_jobs(batch, z_seeds, models)?;
    let adv_value = if weights.use_adv {
        Some(discriminator_phase(&jobs, models, opt_d, config)?)
    } else {
        None
    };
    let (rec, adv_g, cls, total_g) = generator_phase(&jobs, models, opt_g, weights, config)?;
    let report = LossReport {
        rec,
        adv_d: adv_value,
        adv_g,
        cls,
        total_g,
        total_d: adv_value.map(|v| -v),
    };
    if !report.all_finite() {
        return Err(Error::invalid("training step produced a non-finite loss"));
    }
    Ok(report)
}

/// Phase-2 report: one loss record per step.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EditorReport {
    pub losses: Vec<LossReport>,
}

#[derive(serde::Serialize)]
struct LogLine<'a> {
    step: usize,
    #[serde(flatten)]
    losses: &'a LossReport,
    wall_ms: u128,
}

/// Phase 2: train mapper, extractor, translators and discriminator with the
/// configured freeze set; optionally writes a JSON-lines loss log.
pub fn train_editor(
    dataset: &[LabeledImage],
    models: &mut Models,
    config: &TrainConfig,
    log_path: Option<&Path>,
) -> Result<EditorReport> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("editor training needs a non-empty dataset"));
    }
    checkpoint::check_namespaces(
        &models.store,
        &["unet", "editor/input", "editor/middle", "editor/out", "editor/translator", "mapper", "extractor", "disc", "attrcls"],
    )?;
    let steps = if config.editor_steps > 0 {
        config.editor_steps
    } else {
        config.epochs * dataset.len().div_ceil(config.batch_size)
    };
    let mut log = match log_path {
        Some(p) => {
            if let Some(parent) = p.parent() {
                std::fs::create_dir_all(parent)?;
            }
            Some(std::io::BufWriter::new(std::fs::File::create(p)?))
        }
        None => None,
    };
    let mut opt_d = Adam::new();
    let mut opt_g = Adam::new();
    let mut report = EditorReport { losses: Vec::with_capacity(steps) };
    for step in 0..steps {
        let started = std::time::Instant::now();
        let mut rng = item_rng(config.seed ^ PHASE2_SALT, step as u64);
        let batch = crate::data::sample_edit_batch(
            dataset,
            &models.schema,
            config.batch_size,
            GuidedMode::Latent,
            &mut rng,
        )?;
        let z_seeds: Vec<u64> = (0..batch.len()).map(|_| rng.gen()).collect();
        let losses = training_step(&batch, &z_seeds, models, &mut opt_d, &mut opt_g, config)
            .map_err(|e| match e {
                Error::InvalidArgument(msg) if msg.contains("non-finite") => {
                    Error::NonFinite { step, detail: msg }
                }
                e => e,
            })?;
        if let Some(w) = log.as_mut() {
            let line = LogLine { step, losses: &losses, wall_ms: started.elapsed().as_millis() };
            serde_json::to_writer(&mut *w, &line)?;
            w.write_all(b"\n")?;
        }
        report.losses.push(losses);
    }
    if let Some(mut w) = log {
        w.flush()?;
    }
    Ok(report)
}
