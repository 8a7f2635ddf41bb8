//! Named-parameter arena and gradient buffers.
//!
//! Models register every trainable tensor here once, under a unique name,
//! and keep only the returned [`ParamId`]. Weight tying across network
//! branches means handing the *same id* to two layer instances: there is
//! no copy to drift apart, gradients from every user of the id accumulate
//! into one buffer, and a checkpoint stores the tensor once under its one
//! name.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::nn::tensor::Tensor;

/// Handle into a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) u32);

impl ParamId {
    /// Arena index of this parameter.
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Initialization scheme for a freshly registered parameter.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// All zeros (biases, final heads that should start silent).
    Zeros,
    /// Gaussian with the given standard deviation.
    Normal(f64),
    /// He/Kaiming normal: std = sqrt(2 / fan_in). For ReLU-family stacks.
    He { fan_in: usize },
    /// Xavier/Glorot normal: std = sqrt(2 / (fan_in + fan_out)).
    Xavier { fan_in: usize, fan_out: usize },
    /// Identity matrix; shape must be square `[n, n]`.
    Identity,
}

/// Arena of named parameter tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    data: Vec<Vec<f64>>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    /// Empty arena.
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a tensor under `name` and return its handle.
    ///
    /// Panics on duplicate names: registration happens only in model
    /// constructors, where a collision is a programming error.
    pub fn add(
        &mut self,
        name: &str,
        shape: &[usize],
        init: Init,
        rng: &mut impl Rng,
    ) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name {name:?}"
        );
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Normal(std) => draw_normal(n, std, rng),
            Init::He { fan_in } => draw_normal(n, (2.0 / fan_in as f64).sqrt(), rng),
            Init::Xavier { fan_in, fan_out } => {
                draw_normal(n, (2.0 / (fan_in + fan_out) as f64).sqrt(), rng)
            }
            Init::Identity => {
                assert!(
                    shape.len() == 2 && shape[0] == shape[1],
                    "identity init needs a square matrix, got {shape:?}"
                );
                let d = shape[0];
                let mut m = vec![0.0; n];
                for i in 0..d {
                    m[i * d + i] = 1.0;
                }
                m
            }
        };
        let id = ParamId(self.names.len() as u32);
        self.names.push(name.to_string());
        self.shapes.push(shape.to_vec());
        self.data.push(data);
        self.by_name.insert(name.to_string(), id);
        id
    }

    /// Number of registered tensors.
    pub fn len(&self) -> usize {
        self.names.len()
    }

    /// True when nothing is registered.
    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Total scalar count across all tensors.
    pub fn n_scalars(&self) -> usize {
        self.data.iter().map(Vec::len).sum()
    }

    /// Name of a parameter.
    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.index()]
    }

    /// Shape of a parameter.
    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.shapes[id.index()]
    }

    /// Read a parameter's data.
    #[inline]
    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.data[id.index()]
    }

    /// Mutably access a parameter's data.
    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.data[id.index()]
    }

    /// Overwrite a parameter; the length must match.
    pub fn set(&mut self, id: ParamId, values: &[f64]) {
        let slot = &mut self.data[id.index()];
        assert_eq!(slot.len(), values.len(), "parameter size mismatch");
        slot.copy_from_slice(values);
    }

    /// Look up a parameter by name.
    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    /// Iterate `(id, name, shape)` in registration order.
    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &[usize])> {
        (0..self.names.len()).map(move |i| {
            (
                ParamId(i as u32),
                self.names[i].as_str(),
                self.shapes[i].as_slice(),
            )
        })
    }

    /// Copy a parameter out as a [`Tensor`].
    pub fn tensor(&self, id: ParamId) -> Tensor {
        Tensor::from_vec(&self.shapes[id.index()], self.data[id.index()].clone())
    }
}

fn draw_normal(n: usize, std: f64, rng: &mut impl Rng) -> Vec<f64> {
    let dist = Normal::new(0.0, std).expect("std must be finite and positive");
    (0..n).map(|_| dist.sample(rng)).collect()
}

/// Gradient buffers parallel to a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Grads {
    data: Vec<Vec<f64>>,
}

impl Grads {
    /// Zero gradients matching `store`'s layout.
    pub fn zeros(store: &ParamStore) -> Self {
        Grads {
            data: store.data.iter().map(|d| vec![0.0; d.len()]).collect(),
        }
    }

    /// Read one tensor's gradient.
    #[inline]
    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.data[id.index()]
    }

    /// Mutably access one tensor's gradient (accumulate into it).
    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.data[id.index()]
    }

    /// `self += other`, elementwise across every tensor.
    pub fn add(&mut self, other: &Grads) {
        assert_eq!(self.data.len(), other.data.len(), "grad layout mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    /// Multiply every gradient by `s` (e.g. `1/m` batch scaling, `-1` for
    /// gradient ascent).
    pub fn scale(&mut self, s: f64) {
        for g in &mut self.data {
            for x in g.iter_mut() {
                *x *= s;
            }
        }
    }

    /// Euclidean norm over all gradients (diagnostics).
    pub fn l2_norm(&self) -> f64 {
        self.data
            .iter()
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Number of tensors (same as the owning store's `len`).
    pub fn len(&self) -> usize {
        self.data.len()
    }

    /// True when there are no tensors.
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn tied_id_is_shared_storage() {
        let mut rng = stream(0, &[]);
        let mut ps = ParamStore::new();
        let w = ps.add("shared.w", &[2, 2], Init::Normal(1.0), &mut rng);
        // Two "layers" holding the same id see every update at once.
        let before = ps.get(w).to_vec();
        ps.get_mut(w)[0] += 1.0;
        assert_eq!(ps.get(w)[0], before[0] + 1.0);
        assert_eq!(ps.find("shared.w"), Some(w));
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_names_rejected() {
        let mut rng = stream(0, &[]);
        let mut ps = ParamStore::new();
        ps.add("w", &[1], Init::Zeros, &mut rng);
        ps.add("w", &[1], Init::Zeros, &mut rng);
    }

    #[test]
    fn identity_init_is_identity() {
        let mut rng = stream(0, &[]);
        let mut ps = ParamStore::new();
        let a = ps.add("a", &[3, 3], Init::Identity, &mut rng);
        let d = ps.get(a);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(d[i * 3 + j], if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn grads_accumulate_and_scale() {
        let mut rng = stream(0, &[]);
        let mut ps = ParamStore::new();
        let w = ps.add("w", &[2], Init::Zeros, &mut rng);
        let mut g1 = Grads::zeros(&ps);
        g1.get_mut(w)[0] = 1.0;
        let mut g2 = Grads::zeros(&ps);
        g2.get_mut(w)[0] = 2.0;
        g1.add(&g2);
        g1.scale(0.5);
        assert_eq!(g1.get(w)[0], 1.5);
    }
}
