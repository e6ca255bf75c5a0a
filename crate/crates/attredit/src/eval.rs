//! End-to-end editing and quantitative evaluation.
//!
//! `edit` runs the full pipeline: extract the self style, encode the self
//! semantic code, invert the image deterministically, obtain the target
//! style (from noise through the mapper, or from a reference through the
//! extractor), encode the target semantic code, and regenerate. Metrics are
//! attribute editing accuracy under an external pixel classifier and the
//! Fréchet distance between feature moments.

use crate::codecs::LatentSeed;
use crate::config::{Ablation, TrainConfig};
use crate::data::{EditRequest, GuidedMode, Image, LabeledImage};
use crate::error::{Error, Result};
use crate::parallel::map_batch;
use crate::pixelcls::{FeatureExtractor, PixelClassifier};
use crate::schedule::{generate, invert};
use crate::train::{pretrain_diffusion, train_editor, Models};
use nalgebra::DMatrix;
use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Apply one attribute edit to one image. Deterministic given
/// `(models, x, request, z_seed)`; reference-guided edits consume no
/// randomness at all.
pub fn edit(
    models: &Models,
    x: &Image,
    req: &EditRequest,
    z_seed: u64,
    eval_steps: usize,
) -> Result<Image> {
    req.validate(&models.schema)?;
    let batch = x.clone().insert_axis(Axis(0));
    let sched = models.eval_schedule(eval_steps)?;
    let bound = models.predictor();

    // self style and self code condition the inversion
    let (c_self, _) = models.self_semantic(&batch, req.tag)?;
    let x_t = invert(&batch, &c_self, &bound, &sched)?;

    // target style: extractor on the reference, or mapper on sampled noise
    let s_target = match req.mode {
        GuidedMode::Reference => {
            let reference = req.reference.as_ref().ok_or_else(|| {
                Error::invalid("reference-guided edit requires a reference image")
            })?;
            let ref_batch = reference.image.clone().insert_axis(Axis(0));
            models.self_style(&ref_batch, req.tag)?
        }
        GuidedMode::Latent => {
            let z = LatentSeed::sample(z_seed, 1, &models.dims);
            models.target_style(&z, &batch, req.tag, req.target_attr)?
        }
    };
    let (c_target, _) = models.editor.encode_semantic(&models.store, &batch, &s_target, req.tag)?;
    let out = generate(&x_t, &c_target, &bound, &sched)?;
    Ok(out.index_axis(Axis(0), 0).to_owned())
}

/// Fraction of edited images whose edited tag now carries the target
/// attribute according to the classifier.
pub fn attribute_accuracy(
    edited: &[Image],
    targets: &[(usize, usize)],
    classifier: &PixelClassifier,
) -> Result<f64> {
    if edited.is_empty() || edited.len() != targets.len() {
        return Err(Error::invalid("accuracy needs equally many edited images and targets"));
    }
    let preds = classifier.predict(edited)?;
    let hits = preds
        .iter()
        .zip(targets)
        .filter(|(pred, (tag, attr))| pred[*tag] == *attr)
        .count();
    Ok(hits as f64 / edited.len() as f64)
}

fn moments(x: &Array2<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let (n, d) = x.dim();
    let mut mu = vec![0.0f64; d];
    for row in x.rows() {
        for (m, v) in mu.iter_mut().zip(row.iter()) {
            *m += v;
        }
    }
    for m in mu.iter_mut() {
        *m /= n as f64;
    }
    // unbiased covariance
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for row in x.rows() {
        for i in 0..d {
            let di = row[i] - mu[i];
            for j in 0..d {
                cov[(i, j)] += di * (row[j] - mu[j]);
            }
        }
    }
    cov /= (n - 1) as f64;
    (mu, cov)
}

/// Symmetric PSD square root via eigendecomposition; round-off negatives
/// are clamped to zero.
fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(sym);
    let q = eig.eigenvectors;
    let sqrt_l = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    &q * sqrt_l * q.transpose()
}

/// Fréchet distance between Gaussian fits of two vector sets:
/// `||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2})`, with the matrix root
/// taken over the symmetrized product.
pub fn frechet_distance(real: &Array2<f64>, fake: &Array2<f64>) -> Result<f64> {
    if real.ncols() != fake.ncols() {
        return Err(Error::invalid(format!(
            "feature widths differ: {} vs {}",
            real.ncols(),
            fake.ncols()
        )));
    }
    if real.nrows() < 2 || fake.nrows() < 2 {
        return Err(Error::invalid("each feature set needs at least 2 vectors"));
    }
    let (mu1, cov1) = moments(real);
    let (mu2, cov2) = moments(fake);
    let mean_term: f64 = mu1.iter().zip(&mu2).map(|(a, b)| (a - b) * (a - b)).sum();
    // Tr((S1 S2)^{1/2}) = Tr((B S1 B)^{1/2}) with B = S2^{1/2}
    let b = psd_sqrt(&cov2);
    let inner = &b * &cov1 * &b;
    let sym = (&inner + inner.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(sym);
    let tr_sqrt: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    let value = mean_term + cov1.trace() + cov2.trace() - 2.0 * tr_sqrt;
    // exact-moment inputs can land epsilon-negative
    Ok(value.max(0.0))
}

/// One edit direction's metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DirectionReport {
    pub tag: String,
    pub source: String,
    pub target: String,
    pub fid: f64,
    pub acc: f64,
    pub n: usize,
}

/// Evaluation summary. Averages are unweighted means over edit directions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: GuidedMode,
    pub per_edit: Vec<DirectionReport>,
    pub average_fid: f64,
    pub average_acc: f64,
    pub z_seed: u64,
    pub eval_steps: usize,
}

impl EvalReport {
    pub fn text_table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "{:<22} {:>10} {:>8} {:>6}\n",
            "direction", "fid", "acc", "n"
        ));
        for d in &self.per_edit {
            s.push_str(&format!(
                "{:<22} {:>10.4} {:>8.4} {:>6}\n",
                format!("{}:{}->{}", d.tag, d.source, d.target),
                d.fid,
                d.acc,
                d.n
            ));
        }
        s.push_str(&format!(
            "{:<22} {:>10.4} {:>8.4}\n",
            "average", self.average_fid, self.average_acc
        ));
        s
    }
}

/// Evaluation options; `max_per_direction` caps the per-direction sample
/// count (0 = use every eligible test image).
#[derive(Debug, Clone)]
pub struct EvalOpts {
    pub mode: GuidedMode,
    pub eval_steps: usize,
    pub z_seed: u64,
    pub max_per_direction: usize,
}

impl Default for EvalOpts {
    fn default() -> Self {
        EvalOpts { mode: GuidedMode::Latent, eval_steps: 20, z_seed: 1, max_per_direction: 0 }
    }
}

/// Evaluate every edit direction `(tag, source -> target)` over the test
/// split: edit each eligible image, score accuracy with the classifier and
/// the Fréchet distance against real images carrying the target attribute.
pub fn evaluate(
    models: &Models,
    test: &[LabeledImage],
    classifier: &PixelClassifier,
    opts: &EvalOpts,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::invalid("evaluation needs a non-empty test split"));
    }
    let schema = &models.schema;
    let mut per_edit = Vec::new();
    for tag in 0..schema.num_tags() {
        for source in 0..schema.attr_count(tag) {
            for target in 0..schema.attr_count(tag) {
                if target == source {
                    continue;
                }
                let mut eligible: Vec<&LabeledImage> =
                    test.iter().filter(|d| d.attrs[tag] == source).collect();
                if opts.max_per_direction > 0 {
                    eligible.truncate(opts.max_per_direction);
                }
                if eligible.is_empty() {
                    continue;
                }
                let real_pool: Vec<&LabeledImage> =
                    test.iter().filter(|d| d.attrs[tag] == target).collect();
                if real_pool.len() < 2 {
                    return Err(Error::Sampling(format!(
                        "test split has too few images with attribute '{}' of tag '{}'",
                        schema.attr_name(tag, target),
                        schema.tag_name(tag)
                    )));
                }
                let edited: Vec<Image> = {
                    let results: Vec<Result<Image>> = map_batch(eligible.len(), |i| {
                        let item = eligible[i];
                        let req = EditRequest {
                            tag,
                            source_attr: source,
                            target_attr: target,
                            mode: opts.mode,
                            reference: match opts.mode {
                                GuidedMode::Latent => None,
                                GuidedMode::Reference => {
                                    Some(real_pool[i % real_pool.len()].clone())
                                }
                            },
                        };
                        // one deterministic z stream per (direction, index)
                        let z_seed = opts.z_seed
                            ^ ((tag as u64) << 48)
                            ^ ((target as u64) << 40)
                            ^ (i as u64);
                        edit(models, &item.image, &req, z_seed, opts.eval_steps)
                    });
                    results.into_iter().collect::<Result<Vec<_>>>()?
                };
                let targets: Vec<(usize, usize)> = vec![(tag, target); edited.len()];
                let acc = attribute_accuracy(&edited, &targets, classifier)?;
                let real_images: Vec<Image> =
                    real_pool.iter().map(|d| d.image.clone()).collect();
                let fid = frechet_distance(
                    &classifier.features(&real_images),
                    &classifier.features(&edited),
                )?;
                per_edit.push(DirectionReport {
                    tag: schema.tag_name(tag).to_string(),
                    source: schema.attr_name(tag, source).to_string(),
                    target: schema.attr_name(tag, target).to_string(),
                    fid,
                    acc,
                    n: edited.len(),
                });
            }
        }
    }
    let k = per_edit.len() as f64;
    let average_fid = per_edit.iter().map(|d| d.fid).sum::<f64>() / k;
    let average_acc = per_edit.iter().map(|d| d.acc).sum::<f64>() / k;
    Ok(EvalReport {
        mode: opts.mode,
        per_edit,
        average_fid,
        average_acc,
        z_seed: opts.z_seed,
        eval_steps: opts.eval_steps,
    })
}

/// Write edited images for a whole test split with deterministic names
/// `{index}_{tag}_{target}.png`.
pub fn write_edited_images(
    models: &Models,
    test: &[LabeledImage],
    out_dir: &Path,
    opts: &EvalOpts,
) -> Result<usize> {
    std::fs::create_dir_all(out_dir)?;
    let schema = &models.schema;
    let mut written = 0usize;
    for (index, item) in test.iter().enumerate() {
        for tag in 0..schema.num_tags() {
            let source = item.attrs[tag];
            for target in 0..schema.attr_count(tag) {
                if target == source {
                    continue;
                }
                let req = EditRequest {
                    tag,
                    source_attr: source,
                    target_attr: target,
                    mode: opts.mode,
                    reference: None,
                };
                let z_seed = opts.z_seed ^ ((tag as u64) << 48) ^ (index as u64);
                let img = edit(models, &item.image, &req, z_seed, opts.eval_steps)?;
                let name = format!(
                    "{index}_{}_{}.png",
                    schema.tag_name(tag),
                    schema.attr_name(tag, target)
                );
                crate::data::save_image(&img, &out_dir.join(name))?;
                written += 1;
            }
        }
    }
    Ok(written)
}

/// One grid row: the ablation flag and its evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub ablation: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationGrid {
    pub rows: Vec<AblationRow>,
}

impl AblationGrid {
    pub fn text_table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("{:<20} {:>10} {:>8}\n", "variant", "avg_fid", "avg_acc"));
        for row in &self.rows {
            s.push_str(&format!(
                "{:<20} {:>10.4} {:>8.4}\n",
                row.ablation, row.report.average_fid, row.report.average_acc
            ));
        }
        s
    }

    pub fn row(&self, ablation: Ablation) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.ablation == ablation.name())
    }
}

/// Transplant every namespace except `mapper/*` from a pretrained store
/// into a freshly built variant (used when only the mapper architecture
/// differs; the mapper is untouched by phase 1).
fn transplant_except_mapper(fresh: &mut Models, pretrained: &Models) -> Result<()> {
    let names: Vec<String> = fresh.store.names().cloned().collect();
    for name in names {
        if crate::autodiff::store::in_namespace(&name, "mapper") {
            continue;
        }
        let src = pretrained.store.try_get(&name)?;
        *fresh.store.get_mut(&name) = src.clone();
    }
    Ok(())
}

/// Train and evaluate one model per ablation flag (plus the full model)
/// under a shared seed. Loss ablations reuse the shared pretrained
/// backbone; mapper-variant ablations transplant it; the extractor variant
/// re-runs pretraining since the extractor participates in phase 1.
pub fn run_ablation_grid(
    train_set: &[LabeledImage],
    test_set: &[LabeledImage],
    config: &TrainConfig,
    flags: &[Ablation],
    classifier: &PixelClassifier,
    opts: &EvalOpts,
) -> Result<AblationGrid> {
    let mut base_config = config.clone();
    base_config.ablation = Ablation::None;
    let (base_models, _) = pretrain_diffusion(train_set, &base_config, &classifier.schema().clone())?;

    let mut requested = vec![Ablation::None];
    for f in flags {
        if !requested.contains(f) {
            requested.push(*f);
        }
    }

    let mut rows = Vec::with_capacity(requested.len());
    for ablation in requested {
        let mut row_config = config.clone();
        row_config.ablation = ablation;
        let mut models = match ablation {
            Ablation::None | Ablation::NoRl | Ablation::NoCl | Ablation::NoAl => {
                let mut m = base_models.clone();
                m.ablation = ablation;
                m
            }
            Ablation::NoPrior | Ablation::NoPriorMapper => {
                let mut fresh = Models::build(&row_config, &base_models.schema)?;
                transplant_except_mapper(&mut fresh, &base_models)?;
                fresh
            }
            Ablation::NoRefineExtractor => {
                let (m, _) = pretrain_diffusion(train_set, &row_config, &base_models.schema)?;
                m
            }
        };
        train_editor(train_set, &mut models, &row_config, None)?;
        let report = evaluate(&models, test_set, classifier, opts)?;
        rows.push(AblationRow { ablation: ablation.name().to_string(), report });
    }
    Ok(AblationGrid { rows })
}
