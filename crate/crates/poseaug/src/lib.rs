//! Desk-scale toolkit for pose-augmented cross-view person matching.
//!
//! Everything runs on CPU with `f64` math and fits in seconds-to-minutes:
//! the point is end-to-end verifiable behaviour (exact gradients, tied
//! weights that stay tied, reproducible corpora, oracle-checked retrieval
//! curves), not photographic output.
//!
//! # Modules
//!
//! - [`synthdata`] — deterministic synthetic corpus: articulated stick
//!   pedestrians rendered under two camera views with ground-truth
//!   identities, poses, and skeletons.
//! - [`skeleton`] — toy multi-stage pose estimator: per-joint confidence
//!   maps plus per-limb 2-D affinity fields, refined over stages, with a
//!   peak-decoding keypoint extractor.
//! - [`cpgnet`] — coupled conditional pose-transfer generators: two
//!   view-specific U-Net style generators with cross-view weight tying,
//!   trained adversarially with an L1 reconstruction term, used to
//!   synthesize every identity in every skeleton pose.
//! - [`crossgan`] — unsupervised cross-view matcher: per-view VAEs with a
//!   learned affine latent alignment and a coupled adversarial pair, whose
//!   aligned latent means serve as retrieval embeddings.
//! - [`eval`] — retrieval evaluation: pairwise distances, single-shot
//!   query/gallery splits, CMC curves with an exact ranking contract, and
//!   CSV/PNG export.
//! - [`nn`] — the shared neural substrate: named-parameter arena (tied
//!   layers literally share storage), stateless layers with hand-written
//!   backward passes, SGD/Adam, and a central-difference gradient checker.
//!
//! # Determinism
//!
//! Every stochastic choice (parameter init, pose sampling, dropout masks,
//! reparameterization noise, batch shuffles, split sampling) is drawn from
//! a counter-derived ChaCha stream keyed by an explicit `u64` seed plus a
//! fixed tag path (see [`rng`]). Parallel loops map per item and reduce in
//! fixed order, so results are bit-identical with the `parallel` feature
//! on or off, and independent of thread count.

pub mod cpgnet;
pub mod crossgan;
pub mod error;
pub mod eval;
pub mod nn;
pub mod par;
pub mod rng;
pub mod skeleton;
pub mod synthdata;

pub use error::{Error, Result};
