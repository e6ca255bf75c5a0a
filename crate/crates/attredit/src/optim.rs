//! Adaptive-moment gradient descent over the named parameter store.
//!
//! Updates are applied in sorted name order with per-parameter moment state
//! and step counters, so a step is a deterministic function of
//! (parameters, gradients, learning-rate assignment).

use crate::autodiff::store::ParamStore;
use crate::autodiff::TensorD;
use std::collections::BTreeMap;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Default)]
pub struct Adam {
    m: BTreeMap<String, TensorD>,
    v: BTreeMap<String, TensorD>,
    t: BTreeMap<String, u64>,
}

impl Adam {
    pub fn new() -> Self {
        Adam::default()
    }

    /// Apply one update. `lr_for` maps a parameter name to its learning
    /// rate; returning `None` skips the parameter entirely (frozen, or
    /// belonging to the other player), leaving its bytes untouched.
    pub fn step<F>(&mut self, store: &mut ParamStore, grads: &BTreeMap<String, TensorD>, lr_for: F)
    where
        F: Fn(&str) -> Option<f64>,
    {
        for (name, grad) in grads {
            let lr = match lr_for(name) {
                Some(lr) => lr,
                None => continue,
            };
            let p = store.get_mut(name);
            assert_eq!(p.shape(), grad.shape(), "gradient shape mismatch for {name}");
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| TensorD::zeros(grad.raw_dim()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| TensorD::zeros(grad.raw_dim()));
            let t = self.t.entry(name.clone()).or_insert(0);
            *t += 1;
            let b1t = 1.0 - ADAM_BETA1.powi(*t as i32);
            let b2t = 1.0 - ADAM_BETA2.powi(*t as i32);
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(grad)
                .for_each(|p, m, v, &g| {
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    let mhat = *m / b1t;
                    let vhat = *v / b2t;
                    *p -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
                });
        }
    }
}

/// Average a sequence of per-sample gradient maps in a fixed order.
/// Missing entries count as zero contributions; division uses the total
/// sample count so the result equals the batch-mean gradient.
pub fn average_grads(per_sample: &[BTreeMap<String, TensorD>]) -> BTreeMap<String, TensorD> {
    let mut acc: BTreeMap<String, TensorD> = BTreeMap::new();
    for sample in per_sample {
        for (name, g) in sample {
            match acc.get_mut(name) {
                Some(a) => *a += g,
                None => {
                    acc.insert(name.clone(), g.clone());
                }
            }
        }
    }
    let n = per_sample.len() as f64;
    for g in acc.values_mut() {
        g.mapv_inplace(|v| v / n);
    }
    acc
}
