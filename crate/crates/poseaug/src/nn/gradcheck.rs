//! Central-difference gradient checking.
//!
//! The oracle for every analytic backward pass in this crate: perturb each
//! parameter scalar by ±ε, evaluate the loss twice, and compare the
//! resulting numeric gradient against the hand-written one. The loss
//! closure must be deterministic — all noise (dropout masks, sampled ε)
//! fixed up front — so that the only difference between evaluations is
//! the perturbed scalar.
//!
//! Agreement is scored per parameter tensor as
//! `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂, 1e-10)`, with exact agreement declared when
//! `‖a − n‖₂ < 1e-9` (differences at that scale are floating-point noise
//! on O(1) losses, not disagreement). Tensor-level aggregation is what
//! makes the score robust: a healthy tensor has gradient norm far above
//! the noise floor even when individual elements sit near zero.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::nn::params::{Grads, ParamId, ParamStore};

/// Nudge every parameter by Gaussian noise of the given scale.
///
/// Gradient checks must run at a *generic* point: freshly initialized
/// nets often sit exactly on ReLU kinks (zero biases meeting zero input
/// regions give pre-activations of exactly 0), where the analytic
/// gradient takes one side of the kink while central differences
/// straddle it. A small random offset moves the evaluation point off
/// every kink almost surely without changing what is being verified.
pub fn jitter_params(store: &mut ParamStore, scale: f64, rng: &mut impl Rng) {
    for i in 0..store.len() {
        let id = ParamId(i as u32);
        for v in store.get_mut(id) {
            let n: f64 = rng.sample(StandardNormal);
            *v += scale * n;
        }
    }
}

/// Outcome of comparing analytic and numeric gradients.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest per-tensor relative error.
    pub worst_rel: f64,
    /// Name of the tensor attaining `worst_rel`.
    pub worst_param: String,
    /// `(name, relative error)` for every tensor, in registration order.
    pub per_param: Vec<(String, f64)>,
}

impl GradCheckReport {
    /// True when every tensor agrees within `tol`.
    pub fn passes(&self, tol: f64) -> bool {
        self.worst_rel < tol
    }
}

/// Numeric gradient of `loss` with central differences.
///
/// Each scalar uses ε = `eps_base · max(1, |θ|)`; `eps_base = 1e-5` is a
/// good default for f64. The store is restored to its original values.
pub fn finite_diff_grads(
    store: &mut ParamStore,
    eps_base: f64,
    mut loss: impl FnMut(&ParamStore) -> f64,
) -> Grads {
    let mut out = Grads::zeros(store);
    let ids: Vec<_> = store.iter().map(|(id, _, _)| id).collect();
    for id in ids {
        let n = store.get(id).len();
        for k in 0..n {
            let orig = store.get(id)[k];
            let eps = eps_base * orig.abs().max(1.0);
            store.get_mut(id)[k] = orig + eps;
            let lp = loss(store);
            store.get_mut(id)[k] = orig - eps;
            let lm = loss(store);
            store.get_mut(id)[k] = orig;
            out.get_mut(id)[k] = (lp - lm) / (2.0 * eps);
        }
    }
    out
}

/// Compare analytic and numeric gradients tensor-by-tensor.
pub fn max_rel_error(store: &ParamStore, analytic: &Grads, numeric: &Grads) -> GradCheckReport {
    let mut per_param = Vec::with_capacity(store.len());
    let mut worst_rel = 0.0_f64;
    let mut worst_param = String::new();
    for (id, name, _) in store.iter() {
        let a = analytic.get(id);
        let n = numeric.get(id);
        let mut diff2 = 0.0;
        let mut a2 = 0.0;
        let mut n2 = 0.0;
        for (&av, &nv) in a.iter().zip(n) {
            diff2 += (av - nv) * (av - nv);
            a2 += av * av;
            n2 += nv * nv;
        }
        let diff = diff2.sqrt();
        let rel = if diff < 1e-9 {
            0.0
        } else {
            diff / a2.sqrt().max(n2.sqrt()).max(1e-10)
        };
        if rel > worst_rel {
            worst_rel = rel;
            worst_param = name.to_string();
        }
        per_param.push((name.to_string(), rel));
    }
    GradCheckReport {
        worst_rel,
        worst_param,
        per_param,
    }
}
