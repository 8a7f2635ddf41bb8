//! Run configuration: sectioned `key = value` text with a documented
//! default for every field, strict unknown-key rejection, and dotted-path
//! `--set` overrides.
//!
//! One [`RunConfig`] drives the whole pipeline. Every pipeline stage gets
//! its own section; a single global `seed` deterministically derives each
//! stage's private seed, so one number pins datasets, initializations,
//! training noise, and evaluation splits at once.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use poseaug::cpgnet::{CpgConfig, CpgTrainConfig, SharingSpec, SkipMode};
use poseaug::crossgan::{CrossGanConfig, CrossganTrainConfig, PairingMode};
use poseaug::nn::optim::OptimConfig;
use poseaug::rng::derive_key;
use poseaug::synthdata::DatasetConfig;
use serde::{Deserialize, Serialize};

/// Stage tags for deriving per-stage seeds from the global seed.
mod stage {
    pub const DATASET: u64 = 1;
    pub const CPG_MODEL: u64 = 2;
    pub const CPG_TRAIN: u64 = 3;
    pub const AUGMENT: u64 = 4;
    pub const CROSS_MODEL: u64 = 5;
    pub const CROSS_TRAIN: u64 = 6;
    pub const EVAL: u64 = 7;
    pub const ABLATE: u64 = 8;
}

/// Full pipeline configuration; see each section for its stage.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Global seed every stage derives from.
    pub seed: u64,
    /// Directory all artifacts are written under.
    pub out_dir: PathBuf,
    pub dataset: DatasetSection,
    pub cpgnet: CpgnetSection,
    pub cpgnet_train: CpgnetTrainSection,
    pub augment: AugmentSection,
    pub crossgan: CrossganSection,
    pub crossgan_train: CrossganTrainSection,
    pub eval: EvalSection,
    pub ablate: AblateSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            out_dir: PathBuf::from("out"),
            dataset: DatasetSection::default(),
            cpgnet: CpgnetSection::default(),
            cpgnet_train: CpgnetTrainSection::default(),
            augment: AugmentSection::default(),
            crossgan: CrossganSection::default(),
            crossgan_train: CrossganTrainSection::default(),
            eval: EvalSection::default(),
            ablate: AblateSection::default(),
        }
    }
}

/// Synthetic corpus geometry and cardinalities.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub n_identities: usize,
    pub n_poses: usize,
    /// Size of the standalone pose pool used by augmentation.
    pub n_skeletons: usize,
    pub image_h: usize,
    pub image_w: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            n_identities: 32,
            n_poses: 8,
            n_skeletons: 16,
            image_h: 32,
            image_w: 16,
        }
    }
}

/// Optimizer family selector (learning rate lives beside it).
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum OptimWord {
    Sgd,
    Adam,
}

impl OptimWord {
    /// Combine with a learning rate into the library's optimizer config.
    pub fn to_optim(self, lr: f64) -> OptimConfig {
        match self {
            OptimWord::Sgd => OptimConfig::Sgd { lr },
            OptimWord::Adam => OptimConfig::adam(lr),
        }
    }
}

/// Skip-connection source selector.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum SkipWord {
    Appearance,
    Skeleton,
    None,
}

impl From<SkipWord> for SkipMode {
    fn from(w: SkipWord) -> SkipMode {
        match w {
            SkipWord::Appearance => SkipMode::Appearance,
            SkipWord::Skeleton => SkipMode::Skeleton,
            SkipWord::None => SkipMode::None,
        }
    }
}

/// Pose-transfer network architecture.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct CpgnetSection {
    pub enc_channels: [usize; 3],
    pub bottleneck: usize,
    pub disc_channels: [usize; 3],
    /// Tied trailing appearance-encoder layers (p).
    pub sharing_enc: usize,
    /// Tied leading decoder layers (q).
    pub sharing_dec: usize,
    /// Tied trailing discriminator layers (s).
    pub sharing_disc: usize,
    pub skip: SkipWord,
    pub dropout: f64,
}

impl Default for CpgnetSection {
    fn default() -> Self {
        CpgnetSection {
            enc_channels: [8, 16, 32],
            bottleneck: 64,
            disc_channels: [8, 16, 32],
            sharing_enc: 4,
            sharing_dec: 4,
            sharing_disc: 2,
            skip: SkipWord::Appearance,
            dropout: 0.5,
        }
    }
}

/// Pose-transfer training settings.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct CpgnetTrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight of the L1 anchors in the generator objective.
    pub zeta: f64,
    pub optimizer: OptimWord,
    pub lr: f64,
}

impl Default for CpgnetTrainSection {
    fn default() -> Self {
        CpgnetTrainSection {
            epochs: 200,
            batch_size: 16,
            zeta: 100.0,
            optimizer: OptimWord::Sgd,
            lr: 2e-4,
        }
    }
}

/// Augmentation budget: every combination, or a sampled count.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum PairBudget {
    /// Sample this many (image, pool pose) pairs; 0 copies the input.
    Count(u64),
    /// Apply every image × pool pose combination.
    All(AllWord),
}

/// The literal string `"all"`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum AllWord {
    All,
}

/// Augmentation settings.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    pub pairs: PairBudget,
}

impl Default for AugmentSection {
    fn default() -> Self {
        AugmentSection {
            pairs: PairBudget::All(AllWord::All),
        }
    }
}

/// Cross-view matcher architecture.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct CrossganSection {
    /// Latent dimension J.
    pub latent_dim: usize,
    pub enc_hidden: usize,
    pub gen_channels: usize,
    pub disc_channels: usize,
    pub disc_hidden: usize,
    /// Alignment floor δ.
    pub delta: f64,
}

impl Default for CrossganSection {
    fn default() -> Self {
        CrossganSection {
            latent_dim: 20,
            enc_hidden: 64,
            gen_channels: 12,
            disc_channels: 12,
            disc_hidden: 32,
            delta: 0.1,
        }
    }
}

/// Pairing selector for matcher training.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum PairingWord {
    Label,
    Shuffled,
}

impl From<PairingWord> for PairingMode {
    fn from(w: PairingWord) -> PairingMode {
        match w {
            PairingWord::Label => PairingMode::LabelPaired,
            PairingWord::Shuffled => PairingMode::Shuffled,
        }
    }
}

/// Matcher training settings.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct CrossganTrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimWord,
    pub lr: f64,
    pub pairing: PairingWord,
}

impl Default for CrossganTrainSection {
    fn default() -> Self {
        CrossganTrainSection {
            epochs: 200,
            batch_size: 16,
            optimizer: OptimWord::Sgd,
            lr: 2e-4,
            pairing: PairingWord::Shuffled,
        }
    }
}

/// Retrieval evaluation settings.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Score with ground-truth identities instead of the matcher
    /// (calibration: rank-1 must be 1.0).
    pub oracle: bool,
    /// Ranks reported in the metrics file.
    pub ranks: Vec<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            oracle: false,
            ranks: vec![1, 5, 10],
        }
    }
}

/// Sharing-ablation sweep settings.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct AblateSection {
    /// Seeds averaged per sharing configuration.
    pub seeds: u64,
    /// Training epochs per run (short on purpose; this is a trend probe).
    pub epochs: usize,
    /// Generator sweep: tied encoder/decoder layer counts (p = q).
    pub gen_levels: Vec<usize>,
    /// Discriminator sweep: tied discriminator layer counts (s).
    pub disc_levels: Vec<usize>,
}

impl Default for AblateSection {
    fn default() -> Self {
        AblateSection {
            seeds: 5,
            epochs: 40,
            gen_levels: vec![1, 4],
            disc_levels: vec![1, 4],
        }
    }
}

impl RunConfig {
    /// Corpus generation config (seed derived from the global seed).
    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            n_identities: self.dataset.n_identities,
            n_poses: self.dataset.n_poses,
            n_skeletons: self.dataset.n_skeletons,
            image_h: self.dataset.image_h,
            image_w: self.dataset.image_w,
            seed: derive_key(self.seed, &[stage::DATASET]),
        }
    }

    /// Pose-transfer architecture config.
    pub fn cpg_config(&self) -> CpgConfig {
        CpgConfig {
            image_h: self.dataset.image_h,
            image_w: self.dataset.image_w,
            enc_channels: self.cpgnet.enc_channels,
            bottleneck: self.cpgnet.bottleneck,
            disc_channels: self.cpgnet.disc_channels,
            sharing: SharingSpec::new(
                self.cpgnet.sharing_enc,
                self.cpgnet.sharing_dec,
                self.cpgnet.sharing_disc,
            ),
            skip: self.cpgnet.skip.into(),
            dropout: self.cpgnet.dropout,
            seed: derive_key(self.seed, &[stage::CPG_MODEL]),
        }
    }

    /// Pose-transfer training config.
    pub fn cpg_train_config(&self) -> CpgTrainConfig {
        CpgTrainConfig {
            epochs: self.cpgnet_train.epochs,
            batch_size: self.cpgnet_train.batch_size,
            zeta: self.cpgnet_train.zeta,
            optim: self.cpgnet_train.optimizer.to_optim(self.cpgnet_train.lr),
            seed: derive_key(self.seed, &[stage::CPG_TRAIN]),
        }
    }

    /// Matcher architecture config.
    pub fn crossgan_config(&self) -> CrossGanConfig {
        CrossGanConfig {
            image_h: self.dataset.image_h,
            image_w: self.dataset.image_w,
            latent_dim: self.crossgan.latent_dim,
            enc_hidden: self.crossgan.enc_hidden,
            gen_channels: self.crossgan.gen_channels,
            disc_channels: self.crossgan.disc_channels,
            disc_hidden: self.crossgan.disc_hidden,
            delta: self.crossgan.delta,
            seed: derive_key(self.seed, &[stage::CROSS_MODEL]),
        }
    }

    /// Matcher training config.
    pub fn crossgan_train_config(&self) -> CrossganTrainConfig {
        CrossganTrainConfig {
            epochs: self.crossgan_train.epochs,
            batch_size: self.crossgan_train.batch_size,
            optim: self
                .crossgan_train
                .optimizer
                .to_optim(self.crossgan_train.lr),
            pairing: self.crossgan_train.pairing.into(),
            seed: derive_key(self.seed, &[stage::CROSS_TRAIN]),
        }
    }

    /// Seed for augmentation noise.
    pub fn augment_seed(&self) -> u64 {
        derive_key(self.seed, &[stage::AUGMENT])
    }

    /// Seed for the evaluation gallery split.
    pub fn eval_seed(&self) -> u64 {
        derive_key(self.seed, &[stage::EVAL])
    }

    /// Seed for ablation run `k`.
    pub fn ablate_seed(&self, k: u64) -> u64 {
        derive_key(self.seed, &[stage::ABLATE, k])
    }
}

/// Parse a `--set` override of the form `section.key=value` (or
/// `key=value` for top-level fields) into a path and a parsed value.
fn parse_override(spec: &str) -> Result<(Vec<String>, toml::Value)> {
    let (path, raw) = spec
        .split_once('=')
        .with_context(|| format!("override {spec:?} is not of the form section.key=value"))?;
    let path: Vec<String> = path.trim().split('.').map(|s| s.trim().to_string()).collect();
    if path.iter().any(|p| p.is_empty()) {
        bail!("override {spec:?} has an empty path segment");
    }
    let raw = raw.trim();
    // Parse the value as structured text; fall back to a bare string so
    // `skip=appearance` works without quoting.
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(t) => t["v"].clone(),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    Ok((path, value))
}

/// Insert `value` at `path` inside a structured-text tree.
fn insert_at(table: &mut toml::Table, path: &[String], value: toml::Value) -> Result<()> {
    match path {
        [] => bail!("empty override path"),
        [leaf] => {
            table.insert(leaf.clone(), value);
            Ok(())
        }
        [head, rest @ ..] => {
            let entry = table
                .entry(head.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            let sub = entry
                .as_table_mut()
                .with_context(|| format!("override path segment {head:?} is not a section"))?;
            insert_at(sub, rest, value)
        }
    }
}

/// Assemble the effective configuration.
///
/// Precedence, lowest to highest: built-in defaults, the `--config` file,
/// `--set` overrides, then the `--seed` / `--out` flags. Unknown keys are
/// rejected by name at the merge step.
pub fn load_config(
    file: Option<&Path>,
    sets: &[String],
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<RunConfig> {
    let mut table: toml::Table = match file {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("cannot read config {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("cannot parse config {}", p.display()))?
        }
        None => toml::Table::new(),
    };
    for spec in sets {
        let (path, value) = parse_override(spec)?;
        insert_at(&mut table, &path, value)?;
    }
    let mut cfg: RunConfig = toml::Value::Table(table)
        .try_into()
        .context("invalid configuration")?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.out_dir = o.to_path_buf();
    }
    validate(&cfg)?;
    Ok(cfg)
}

/// Cross-field checks beyond per-type parsing.
fn validate(cfg: &RunConfig) -> Result<()> {
    if cfg.dataset.n_identities == 0 || cfg.dataset.n_poses == 0 || cfg.dataset.n_skeletons == 0 {
        bail!("dataset section needs positive identity, pose, and pool counts");
    }
    cfg.cpg_config()
        .validate()
        .map_err(anyhow::Error::new)
        .context("cpgnet section")?;
    cfg.crossgan_config()
        .validate()
        .map_err(anyhow::Error::new)
        .context("crossgan section")?;
    if cfg.cpgnet_train.batch_size == 0 || cfg.crossgan_train.batch_size == 0 {
        bail!("batch sizes must be positive");
    }
    if cfg.eval.ranks.is_empty() || cfg.eval.ranks.contains(&0) {
        bail!("eval.ranks must be non-empty, 1-based ranks");
    }
    if cfg.ablate.seeds == 0 || cfg.ablate.gen_levels.is_empty() || cfg.ablate.disc_levels.is_empty()
    {
        bail!("ablate section needs at least one seed and level per sweep");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let cfg = RunConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn empty_input_yields_defaults() {
        let cfg = load_config(None, &[], None, None).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.cpgnet.sharing_enc, 4);
        assert_eq!(cfg.cpgnet.sharing_disc, 2);
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let err = load_config(None, &["dataset.n_identitties=4".into()], None, None)
            .unwrap_err();
        let msg = format!("{err:#}");
        assert!(msg.contains("n_identitties"), "message was: {msg}");
    }

    #[test]
    fn overrides_take_effect_in_order() {
        let cfg = load_config(
            None,
            &[
                "dataset.n_identities=4".into(),
                "cpgnet_train.optimizer=adam".into(),
                "augment.pairs=12".into(),
                "augment.pairs=all".into(),
                "seed=99".into(),
            ],
            None,
            None,
        )
        .unwrap();
        assert_eq!(cfg.dataset.n_identities, 4);
        assert_eq!(cfg.cpgnet_train.optimizer, OptimWord::Adam);
        assert_eq!(cfg.augment.pairs, PairBudget::All(AllWord::All));
        assert_eq!(cfg.seed, 99);
        // The --seed flag outranks --set.
        let cfg = load_config(None, &["seed=99".into()], Some(5), None).unwrap();
        assert_eq!(cfg.seed, 5);
    }

    #[test]
    fn stage_seeds_differ_and_follow_the_global_seed() {
        let a = load_config(None, &[], Some(1), None).unwrap();
        let b = load_config(None, &[], Some(2), None).unwrap();
        assert_ne!(a.dataset_config().seed, b.dataset_config().seed);
        assert_ne!(a.dataset_config().seed, a.cpg_config().seed);
        assert_ne!(a.cpg_config().seed, a.crossgan_config().seed);
        // Same global seed, same derivations.
        let c = load_config(None, &[], Some(1), None).unwrap();
        assert_eq!(a.cpg_train_config().seed, c.cpg_train_config().seed);
    }

    #[test]
    fn invalid_geometry_is_rejected() {
        let err =
            load_config(None, &["dataset.image_h=30".into()], None, None).unwrap_err();
        assert!(format!("{err:#}").contains("multiple"));
    }
}
