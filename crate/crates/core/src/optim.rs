use serde::{Deserialize, Serialize};

use crate::params::ParamStore;
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(5.0),
        }
    }
}

/// Adam with bias correction. Moments are kept per parameter in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T: Scalar> {
    pub cfg: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

pub fn global_norm<T: Scalar>(grads: &[Option<Tensor<T>>]) -> f64 {
    grads
        .iter()
        .flatten()
        .map(|g| g.sum_squares().to_f64().unwrap_or(f64::INFINITY))
        .sum::<f64>()
        .sqrt()
}

/// Scales `grads` in place so that their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(grads: &mut [Option<Tensor<T>>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let s: T = lit(max_norm / (norm + 1e-12));
        for g in grads.iter_mut().flatten() {
            for x in g.data_mut() {
                *x *= s;
            }
        }
    }
    norm
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, cfg: AdamConfig) -> Self {
        let zeros: Vec<Tensor<T>> = store
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        Self {
            cfg,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies one update. Parameters whose gradient is `None` are left untouched.
    /// Returns the pre-clip global gradient norm.
    pub fn update(
        &mut self,
        store: &mut ParamStore<T>,
        mut grads: Vec<Option<Tensor<T>>>,
        lr: f64,
    ) -> f64 {
        assert_eq!(
            grads.len(),
            self.m.len(),
            "gradient list does not match optimizer state"
        );
        let norm = match self.cfg.clip_norm {
            Some(c) => clip_grad_norm(&mut grads, c),
            None => global_norm(&grads),
        };
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let step_size: T = lit(lr * (1.0 - b2.powi(t)).sqrt() / (1.0 - b1.powi(t)));
        let eps_hat: T = lit(self.cfg.eps * (1.0 - b2.powi(t)).sqrt());
        let (b1t, b2t): (T, T) = (lit(b1), lit(b2));
        let (c1, c2): (T, T) = (lit(1.0 - b1), lit(1.0 - b2));
        let ids: Vec<_> = store.ids().collect();
        for (i, g) in grads.into_iter().enumerate() {
            let Some(g) = g else { continue };
            let p = store.get_mut(ids[i]).data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for j in 0..p.len() {
                let gj = g.data()[j];
                m[j] = b1t * m[j] + c1 * gj;
                v[j] = b2t * v[j] + c2 * gj * gj;
                p[j] -= step_size * m[j] / (v[j].sqrt() + eps_hat);
            }
        }
        norm
    }
}
