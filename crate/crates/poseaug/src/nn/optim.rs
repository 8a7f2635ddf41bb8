//! Plain SGD and Adam over a [`ParamStore`].
//!
//! `step` always *descends* the supplied gradients; callers implementing
//! gradient ascent (discriminator updates) negate their gradient buffer
//! first. Adam keeps first/second-moment state per parameter tensor; the
//! state is exposed for checkpointing so a resumed run continues the
//! exact trajectory of an uninterrupted one.

use crate::error::{Error, Result};
use crate::nn::params::{Grads, ParamId, ParamStore};

/// Optimizer family and hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimConfig {
    /// Vanilla stochastic gradient descent: `θ ← θ − η·g`.
    Sgd { lr: f64 },
    /// Adam with bias correction.
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl OptimConfig {
    /// Adam with the conventional (0.9, 0.999, 1e-8) moments.
    pub fn adam(lr: f64) -> Self {
        OptimConfig::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// The configured learning rate.
    pub fn lr(&self) -> f64 {
        match *self {
            OptimConfig::Sgd { lr } => lr,
            OptimConfig::Adam { lr, .. } => lr,
        }
    }
}

/// Optimizer instance bound to one parameter layout.
#[derive(Clone, Debug)]
pub struct Optimizer {
    cfg: OptimConfig,
    /// First moments, one buffer per parameter tensor (Adam only).
    m: Vec<Vec<f64>>,
    /// Second moments (Adam only).
    v: Vec<Vec<f64>>,
    /// Completed step count (drives Adam bias correction).
    t: u64,
    /// Per-tensor update gate; `None` means every tensor updates.
    mask: Option<Vec<bool>>,
}

impl Optimizer {
    /// Fresh optimizer for `store`'s layout.
    pub fn new(cfg: OptimConfig, store: &ParamStore) -> Self {
        let (m, v) = match cfg {
            OptimConfig::Sgd { .. } => (Vec::new(), Vec::new()),
            OptimConfig::Adam { .. } => {
                let zeros: Vec<Vec<f64>> = store
                    .iter()
                    .map(|(_, _, shape)| vec![0.0; shape.iter().product()])
                    .collect();
                (zeros.clone(), zeros)
            }
        };
        Optimizer {
            cfg,
            m,
            v,
            t: 0,
            mask: None,
        }
    }

    /// Restrict updates to parameters whose name satisfies `keep`.
    ///
    /// Alternating-phase training (discriminator step, then generator
    /// step) shares one parameter store; without a gate an Adam step with
    /// zero gradient would still decay the other phase's moments and move
    /// its parameters. Moment buffers keep the full layout so checkpoint
    /// shape never depends on the mask.
    pub fn set_mask(&mut self, store: &ParamStore, keep: impl Fn(&str) -> bool) {
        self.mask = Some(store.iter().map(|(_, name, _)| keep(name)).collect());
    }

    /// The configuration this optimizer was built with.
    pub fn config(&self) -> OptimConfig {
        self.cfg
    }

    /// Number of completed steps.
    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Apply one descent step of `grads` to every parameter.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) {
        assert_eq!(grads.len(), store.len(), "optimizer/grad layout mismatch");
        self.t += 1;
        match self.cfg {
            OptimConfig::Sgd { lr } => {
                for i in 0..store.len() {
                    if self.mask.as_ref().is_some_and(|m| !m[i]) {
                        continue;
                    }
                    let id = ParamId(i as u32);
                    let g = grads.get(id);
                    let th = store.get_mut(id);
                    for (p, gv) in th.iter_mut().zip(g) {
                        *p -= lr * gv;
                    }
                }
            }
            OptimConfig::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                let bc1 = 1.0 - beta1.powi(self.t as i32);
                let bc2 = 1.0 - beta2.powi(self.t as i32);
                for i in 0..store.len() {
                    if self.mask.as_ref().is_some_and(|m| !m[i]) {
                        continue;
                    }
                    let id = ParamId(i as u32);
                    let g = grads.get(id);
                    let m = &mut self.m[i];
                    let v = &mut self.v[i];
                    let th = store.get_mut(id);
                    for k in 0..th.len() {
                        m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                        v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                        let mh = m[k] / bc1;
                        let vh = v[k] / bc2;
                        th[k] -= lr * mh / (vh.sqrt() + eps);
                    }
                }
            }
        }
    }

    /// Moment buffers and step count, for checkpointing (empty for SGD).
    pub fn state(&self) -> (&[Vec<f64>], &[Vec<f64>], u64) {
        (&self.m, &self.v, self.t)
    }

    /// Restore moment buffers and step count from a checkpoint.
    pub fn restore_state(&mut self, m: Vec<Vec<f64>>, v: Vec<Vec<f64>>, t: u64) -> Result<()> {
        let expect = |got: &[Vec<f64>]| -> Result<()> {
            if got.len() != self.m.len()
                || got.iter().zip(&self.m).any(|(a, b)| a.len() != b.len())
            {
                return Err(Error::ShapeMismatch(
                    "optimizer state layout does not match model".into(),
                ));
            }
            Ok(())
        };
        if matches!(self.cfg, OptimConfig::Adam { .. }) {
            expect(&m)?;
            expect(&v)?;
            self.m = m;
            self.v = v;
        }
        self.t = t;
        Ok(())
    }
}
