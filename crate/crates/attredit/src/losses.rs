//! Training objectives: feature reconstruction, the two-sided adversarial
//! value, semantic-code classification, and their combination into the
//! generator / discriminator totals.

use crate::autodiff::{Graph, Value};
use crate::config::Ablation;
use crate::discriminator::AttributeClassifier;
use crate::editor::{FeatureMap, SemanticCodes};
use crate::error::{Error, Result};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

/// Probabilities are clamped into `[EPS_P, 1 - EPS_P]` before any logarithm.
pub const EPS_P: f64 = 1e-7;

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(EPS_P, 1.0 - EPS_P)
}

/// Per-step loss values. Ablated terms are `None` and serialize as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub rec: Option<f64>,
    pub adv_d: Option<f64>,
    pub adv_g: Option<f64>,
    pub cls: Option<f64>,
    pub total_g: f64,
    pub total_d: Option<f64>,
}

impl LossReport {
    pub fn all_finite(&self) -> bool {
        [self.rec, self.adv_d, self.adv_g, self.cls, Some(self.total_g), self.total_d]
            .iter()
            .flatten()
            .all(|v| v.is_finite())
    }
}

/// Mean-per-element L1 of `(f' - f)` plus mean-per-element L1 of `(f'' - f)`.
pub fn reconstruction_loss(f: &FeatureMap, f_prime: &FeatureMap, f_dprime: &FeatureMap) -> Result<f64> {
    if f.raw_dim() != f_prime.raw_dim() || f.raw_dim() != f_dprime.raw_dim() {
        return Err(Error::invalid("reconstruction loss needs three equally shaped features"));
    }
    let n = f.len() as f64;
    let a: f64 = f.iter().zip(f_prime.iter()).map(|(x, y)| (y - x).abs()).sum::<f64>() / n;
    let b: f64 = f.iter().zip(f_dprime.iter()).map(|(x, y)| (y - x).abs()).sum::<f64>() / n;
    Ok(a + b)
}

fn check_probs(name: &str, p: &Array1<f64>) -> Result<()> {
    if p.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::invalid(format!("{name} probabilities must lie in [0, 1]")));
    }
    Ok(())
}

/// The discriminator's value function, batch-averaged:
/// `2 log D(real) + log(1 - D(fake_edit)) + log(1 - D(fake_cycle))`.
/// The discriminator ascends this value; its descent total is the negation.
pub fn adversarial_value(
    d_real: &Array1<f64>,
    d_fake_edit: &Array1<f64>,
    d_fake_cycle: &Array1<f64>,
) -> Result<f64> {
    if d_real.len() != d_fake_edit.len() || d_real.len() != d_fake_cycle.len() {
        return Err(Error::invalid("adversarial value needs equally sized probability batches"));
    }
    if d_real.is_empty() {
        return Err(Error::invalid("adversarial value needs at least one sample"));
    }
    check_probs("real", d_real)?;
    check_probs("fake_edit", d_fake_edit)?;
    check_probs("fake_cycle", d_fake_cycle)?;
    let n = d_real.len() as f64;
    let mut acc = 0.0;
    for i in 0..d_real.len() {
        acc += 2.0 * clamp_prob(d_real[i]).ln()
            + (1.0 - clamp_prob(d_fake_edit[i])).ln()
            + (1.0 - clamp_prob(d_fake_cycle[i])).ln();
    }
    Ok(acc / n)
}

/// Binary cross-entropy between predicted probabilities and binary labels,
/// summed over attributes and averaged over the batch.
pub fn bce_sum(probs: &Array2<f64>, labels: &Array2<f64>) -> Result<f64> {
    if probs.dim() != labels.dim() {
        return Err(Error::invalid(format!(
            "probability shape {:?} does not match label shape {:?}",
            probs.dim(),
            labels.dim()
        )));
    }
    if labels.iter().any(|&l| l != 0.0 && l != 1.0) {
        return Err(Error::invalid("labels must be binary"));
    }
    let b = probs.nrows() as f64;
    let mut acc = 0.0;
    for (p, l) in probs.iter().zip(labels.iter()) {
        let p = clamp_prob(*p);
        acc -= l * p.ln() + (1.0 - l) * (1.0 - p).ln();
    }
    Ok(acc / b)
}

/// Classification loss on semantic codes: run the (frozen) attribute
/// classifier, then binary cross-entropy against the target vector.
pub fn classification_loss(
    c: &SemanticCodes,
    labels: &Array2<f64>,
    cls: &AttributeClassifier,
    store: &crate::autodiff::store::ParamStore,
) -> Result<f64> {
    if labels.ncols() != cls.num_attrs() {
        return Err(Error::invalid(format!(
            "label width {} does not match attribute count {}",
            labels.ncols(),
            cls.num_attrs()
        )));
    }
    let probs = cls.classify_semantic(store, c)?;
    bce_sum(&probs, labels)
}

/// Which loss terms are active and how the generator's adversarial term is
/// estimated.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub w_rec: f64,
    pub w_adv: f64,
    pub w_cls: f64,
    pub use_rec: bool,
    pub use_adv: bool,
    pub use_cls: bool,
    /// `true`: generator minimizes `+log(1 - D(fake))` (the literal value
    /// function); `false`: the non-saturating `-log D(fake)` estimator.
    pub saturating_g: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_rec: 1.0,
            w_adv: 1.0,
            w_cls: 1.0,
            use_rec: true,
            use_adv: true,
            use_cls: true,
            saturating_g: false,
        }
    }
}

impl LossWeights {
    pub fn for_ablation(ablation: Ablation, saturating_g: bool) -> Self {
        let mut w = LossWeights { saturating_g, ..Default::default() };
        match ablation {
            Ablation::NoRl => w.use_rec = false,
            Ablation::NoCl => w.use_cls = false,
            Ablation::NoAl => w.use_adv = false,
            _ => {}
        }
        w
    }
}

/// Everything a step produced that the objectives consume. Fields left
/// `None` while the corresponding term is active are an error.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepIntermediates<'a> {
    pub f: Option<&'a FeatureMap>,
    pub f_prime: Option<&'a FeatureMap>,
    pub f_dprime: Option<&'a FeatureMap>,
    pub d_real: Option<&'a Array1<f64>>,
    pub d_fake_edit: Option<&'a Array1<f64>>,
    pub d_fake_cycle: Option<&'a Array1<f64>>,
    pub cls_probs: Option<&'a Array2<f64>>,
    pub labels: Option<&'a Array2<f64>>,
}

fn need<'a, T: ?Sized>(v: Option<&'a T>, what: &str) -> Result<&'a T> {
    v.ok_or_else(|| Error::invalid(format!("missing intermediate: {what}")))
}

/// Combine the active loss terms into the generator and discriminator
/// totals: the discriminator descends `-adversarial_value`, the generator
/// descends `rec + cls + (its adversarial term)`.
pub fn total_objectives(im: &StepIntermediates<'_>, w: &LossWeights) -> Result<LossReport> {
    let rec = if w.use_rec {
        Some(reconstruction_loss(
            need(im.f, "f")?,
            need(im.f_prime, "f_prime")?,
            need(im.f_dprime, "f_dprime")?,
        )?)
    } else {
        None
    };
    let cls = if w.use_cls {
        Some(bce_sum(need(im.cls_probs, "cls_probs")?, need(im.labels, "labels")?)?)
    } else {
        None
    };
    let (adv_d, adv_g, total_d) = if w.use_adv {
        let d_real = need(im.d_real, "d_real")?;
        let d_fe = need(im.d_fake_edit, "d_fake_edit")?;
        let d_fc = need(im.d_fake_cycle, "d_fake_cycle")?;
        let value = adversarial_value(d_real, d_fe, d_fc)?;
        let n = d_fe.len() as f64;
        let g_term: f64 = if w.saturating_g {
            d_fe.iter().zip(d_fc.iter()).map(|(&a, &b)| {
                (1.0 - clamp_prob(a)).ln() + (1.0 - clamp_prob(b)).ln()
            }).sum::<f64>() / n
        } else {
            d_fe.iter().zip(d_fc.iter()).map(|(&a, &b)| {
                -clamp_prob(a).ln() - clamp_prob(b).ln()
            }).sum::<f64>() / n
        };
        (Some(value), Some(g_term), Some(-value))
    } else {
        (None, None, None)
    };
    let total_g = w.w_rec * rec.unwrap_or(0.0)
        + w.w_cls * cls.unwrap_or(0.0)
        + w.w_adv * adv_g.unwrap_or(0.0);
    let report = LossReport { rec, adv_d, adv_g, cls, total_g, total_d };
    if !report.all_finite() {
        return Err(Error::invalid("loss evaluation produced a non-finite value"));
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Graph-level builders used by the training step
// ---------------------------------------------------------------------------

/// Mean-per-element L1 distance node.
pub fn g_l1_mean(g: &mut Graph, a: Value, b: Value) -> Value {
    let d = g.sub(a, b);
    let d = g.abs(d);
    g.mean_all(d)
}

/// `ln(clamp(p))` node.
pub fn g_log_prob(g: &mut Graph, p: Value) -> Value {
    let p = g.clamp(p, EPS_P, 1.0 - EPS_P);
    g.ln(p)
}

/// `ln(1 - clamp(p))` node.
pub fn g_log_one_minus(g: &mut Graph, p: Value) -> Value {
    let p = g.clamp(p, EPS_P, 1.0 - EPS_P);
    let one = g.scalar(1.0);
    let d = g.sub(one, p);
    g.ln(d)
}

/// Binary cross-entropy of a probability vector against constant labels,
/// summed over attributes.
pub fn g_bce_sum(g: &mut Graph, probs: Value, labels: &Array1<f64>) -> Value {
    let n = labels.len();
    assert_eq!(g.shape(probs), &[n], "bce label/probability width mismatch");
    let p = g.clamp(probs, EPS_P, 1.0 - EPS_P);
    let l = g.constant(labels.clone().into_dyn());
    let ones = g.constant(Array1::<f64>::ones(n).into_dyn());
    let lp = g.ln(p);
    let t1 = g.mul(l, lp);
    let one_minus_p = g.sub(ones, p);
    let lq = g.ln(one_minus_p);
    let one_minus_l = g.sub(ones, l);
    let t2 = g.mul(one_minus_l, lq);
    let s = g.add(t1, t2);
    let s = g.sum_all(s);
    g.neg(s)
}
