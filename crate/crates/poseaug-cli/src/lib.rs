//! Config-driven driver for the pose-augmentation pipeline.
//!
//! The binary wires five stages — corpus generation, pose-transfer GAN
//! training, dataset augmentation, cross-view matcher training, and CMC
//! evaluation — plus a weight-sharing ablation sweep. Everything is
//! driven by one [`config::RunConfig`] (TOML file, `--set` overrides,
//! flags) and a single global seed from which each stage derives its
//! own; identical configs give identical artifacts down to the byte.
//!
//! # Modules
//!
//! - [`config`]: the run configuration, defaults, and override plumbing.
//! - [`checkpoint`]: binary tensor checkpoints with a TOML sidecar.
//! - [`commands`]: one function per subcommand, returning artifacts'
//!   paths/metrics so tests can drive them in-process.

pub mod checkpoint;
pub mod commands;
pub mod config;
