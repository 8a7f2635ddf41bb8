//! Binary model checkpoints with a TOML sidecar.
//!
//! A checkpoint is two files: `<path>` holds every named parameter
//! tensor (and, under Adam, the optimizer moment buffers) as 64-bit
//! floats, so a reloaded model reproduces the saved one bit for bit;
//! `<path>.meta` is a human-readable TOML sidecar carrying the model
//! kind, the architecture and training configs needed to rebuild the
//! network, and the optimizer step counters.
//!
//! # Container format (all integers little-endian)
//!
//! ```text
//! magic    8 bytes  "POSEAUGC"
//! version  u32      1
//! model    u16 len + UTF-8 ("cpgnet" | "crossgan")
//! count    u64      number of tensor entries
//! entry    u16 len + UTF-8 name, u8 ndim, ndim×u64 dims, f64×numel data
//! ```
//!
//! Loading rebuilds the network from the sidecar config and then demands
//! an exact parameter-name match between the checkpoint and the rebuilt
//! store. Because weight tying changes parameter names (`d.shared.l5`
//! vs. `d.v1.l5`), a sidecar whose sharing counts disagree with the
//! tensors fails with an explicit tie-mismatch error instead of loading
//! garbage.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use poseaug::cpgnet::{CpgConfig, CpgNet, CpgTrainConfig, CpgTrainState, SharingSpec, SkipMode};
use poseaug::crossgan::{
    CrossGan, CrossGanConfig, CrossganTrainConfig, CrossganTrainState, PairingMode,
};
use poseaug::nn::{OptimConfig, Optimizer, ParamStore};

const MAGIC: &[u8; 8] = b"POSEAUGC";
const FORMAT_VERSION: u32 = 1;

/// One named tensor in the container.
struct TensorEntry {
    name: String,
    dims: Vec<usize>,
    data: Vec<f64>,
}

// ---------------------------------------------------------------------
// Container I/O
// ---------------------------------------------------------------------

fn write_container(path: &Path, model: &str, entries: &[TensorEntry]) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    write_str(&mut buf, model)?;
    buf.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    for e in entries {
        write_str(&mut buf, &e.name)?;
        if e.dims.len() > u8::MAX as usize {
            bail!("tensor {:?} has too many dimensions", e.name);
        }
        buf.push(e.dims.len() as u8);
        for &d in &e.dims {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        let numel: usize = e.dims.iter().product();
        if numel != e.data.len() {
            bail!("tensor {:?} dims do not match its data length", e.name);
        }
        for &x in &e.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
    }
    fs::write(path, buf).with_context(|| format!("writing {}", path.display()))
}

fn write_str(buf: &mut Vec<u8>, s: &str) -> Result<()> {
    if s.len() > u16::MAX as usize {
        bail!("string too long for checkpoint: {s:?}");
    }
    buf.extend_from_slice(&(s.len() as u16).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
    Ok(())
}

/// Bounds-checked little-endian reader over the container bytes.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| anyhow!("checkpoint truncated at byte {}", self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        Ok(String::from_utf8(self.take(n)?.to_vec()).context("checkpoint string is not UTF-8")?)
    }
}

fn read_container(path: &Path) -> Result<(String, Vec<TensorEntry>)> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let mut r = Reader { buf: &bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        bail!("{} is not a model checkpoint (bad magic)", path.display());
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        bail!(
            "unsupported checkpoint format version {version} (this build reads version {FORMAT_VERSION})"
        );
    }
    let model = r.str()?;
    let count = r.u64()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.str()?;
        let ndim = r.take(1)?[0] as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(r.u64()? as usize);
        }
        let numel: usize = dims.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
        }
        entries.push(TensorEntry { name, dims, data });
    }
    if r.pos != bytes.len() {
        bail!("{}: {} trailing bytes", path.display(), bytes.len() - r.pos);
    }
    Ok((model, entries))
}

// ---------------------------------------------------------------------
// Sidecar metadata
// ---------------------------------------------------------------------

/// Serialize a `u64` as a decimal string: TOML integers are signed, so
/// full-range derived seeds would not round-trip as bare integers.
mod u64_string {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        let s = String::deserialize(d)?;
        s.parse()
            .map_err(|_| de::Error::custom(format!("not a u64: {s:?}")))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaFile {
    model: String,
    format_version: u32,
    epochs_completed: usize,
    #[serde(with = "u64_string")]
    opt_d_steps: u64,
    #[serde(with = "u64_string")]
    opt_g_steps: u64,
    optim: OptimMeta,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cpgnet: Option<CpgMeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    crossgan: Option<CrossMeta>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimMeta {
    family: String,
    lr: f64,
    #[serde(default)]
    beta1: f64,
    #[serde(default)]
    beta2: f64,
    #[serde(default)]
    eps: f64,
}

impl OptimMeta {
    fn from_config(cfg: OptimConfig) -> OptimMeta {
        match cfg {
            OptimConfig::Sgd { lr } => OptimMeta {
                family: "sgd".into(),
                lr,
                beta1: 0.0,
                beta2: 0.0,
                eps: 0.0,
            },
            OptimConfig::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => OptimMeta {
                family: "adam".into(),
                lr,
                beta1,
                beta2,
                eps,
            },
        }
    }

    fn to_config(&self) -> Result<OptimConfig> {
        match self.family.as_str() {
            "sgd" => Ok(OptimConfig::Sgd { lr: self.lr }),
            "adam" => Ok(OptimConfig::Adam {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
            }),
            other => bail!("unknown optimizer family {other:?} in checkpoint sidecar"),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CpgMeta {
    image_h: usize,
    image_w: usize,
    enc_channels: [usize; 3],
    bottleneck: usize,
    disc_channels: [usize; 3],
    sharing_enc: usize,
    sharing_dec: usize,
    sharing_disc: usize,
    skip: String,
    dropout: f64,
    #[serde(with = "u64_string")]
    model_seed: u64,
    epochs_planned: usize,
    batch_size: usize,
    zeta: f64,
    #[serde(with = "u64_string")]
    train_seed: u64,
}

impl CpgMeta {
    fn from_configs(cfg: &CpgConfig, tcfg: &CpgTrainConfig) -> CpgMeta {
        CpgMeta {
            image_h: cfg.image_h,
            image_w: cfg.image_w,
            enc_channels: cfg.enc_channels,
            bottleneck: cfg.bottleneck,
            disc_channels: cfg.disc_channels,
            sharing_enc: cfg.sharing.enc,
            sharing_dec: cfg.sharing.dec,
            sharing_disc: cfg.sharing.disc,
            skip: match cfg.skip {
                SkipMode::Appearance => "appearance".into(),
                SkipMode::Skeleton => "skeleton".into(),
                SkipMode::None => "none".into(),
            },
            dropout: cfg.dropout,
            model_seed: cfg.seed,
            epochs_planned: tcfg.epochs,
            batch_size: tcfg.batch_size,
            zeta: tcfg.zeta,
            train_seed: tcfg.seed,
        }
    }

    fn to_model_config(&self) -> Result<CpgConfig> {
        Ok(CpgConfig {
            image_h: self.image_h,
            image_w: self.image_w,
            enc_channels: self.enc_channels,
            bottleneck: self.bottleneck,
            disc_channels: self.disc_channels,
            sharing: SharingSpec::new(self.sharing_enc, self.sharing_dec, self.sharing_disc),
            skip: match self.skip.as_str() {
                "appearance" => SkipMode::Appearance,
                "skeleton" => SkipMode::Skeleton,
                "none" => SkipMode::None,
                other => bail!("unknown skip mode {other:?} in checkpoint sidecar"),
            },
            dropout: self.dropout,
            seed: self.model_seed,
        })
    }

    fn to_train_config(&self, optim: OptimConfig) -> CpgTrainConfig {
        CpgTrainConfig {
            epochs: self.epochs_planned,
            batch_size: self.batch_size,
            zeta: self.zeta,
            optim,
            seed: self.train_seed,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CrossMeta {
    image_h: usize,
    image_w: usize,
    latent_dim: usize,
    enc_hidden: usize,
    gen_channels: usize,
    disc_channels: usize,
    disc_hidden: usize,
    delta: f64,
    #[serde(with = "u64_string")]
    model_seed: u64,
    epochs_planned: usize,
    batch_size: usize,
    pairing: String,
    #[serde(with = "u64_string")]
    train_seed: u64,
}

impl CrossMeta {
    fn from_configs(cfg: &CrossGanConfig, tcfg: &CrossganTrainConfig) -> CrossMeta {
        CrossMeta {
            image_h: cfg.image_h,
            image_w: cfg.image_w,
            latent_dim: cfg.latent_dim,
            enc_hidden: cfg.enc_hidden,
            gen_channels: cfg.gen_channels,
            disc_channels: cfg.disc_channels,
            disc_hidden: cfg.disc_hidden,
            delta: cfg.delta,
            model_seed: cfg.seed,
            epochs_planned: tcfg.epochs,
            batch_size: tcfg.batch_size,
            pairing: match tcfg.pairing {
                PairingMode::LabelPaired => "label".into(),
                PairingMode::Shuffled => "shuffled".into(),
            },
            train_seed: tcfg.seed,
        }
    }

    fn to_model_config(&self) -> CrossGanConfig {
        CrossGanConfig {
            image_h: self.image_h,
            image_w: self.image_w,
            latent_dim: self.latent_dim,
            enc_hidden: self.enc_hidden,
            gen_channels: self.gen_channels,
            disc_channels: self.disc_channels,
            disc_hidden: self.disc_hidden,
            delta: self.delta,
            seed: self.model_seed,
        }
    }

    fn to_train_config(&self, optim: OptimConfig) -> Result<CrossganTrainConfig> {
        Ok(CrossganTrainConfig {
            epochs: self.epochs_planned,
            batch_size: self.batch_size,
            optim,
            pairing: match self.pairing.as_str() {
                "label" => PairingMode::LabelPaired,
                "shuffled" => PairingMode::Shuffled,
                other => bail!("unknown pairing mode {other:?} in checkpoint sidecar"),
            },
            seed: self.train_seed,
        })
    }
}

/// Sidecar path: `<checkpoint>.meta` next to the container.
fn meta_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".meta");
    PathBuf::from(os)
}

fn write_meta(path: &Path, meta: &MetaFile) -> Result<()> {
    let text = toml::to_string_pretty(meta).context("serializing checkpoint sidecar")?;
    let mp = meta_path(path);
    fs::write(&mp, text).with_context(|| format!("writing {}", mp.display()))
}

fn read_meta(path: &Path) -> Result<MetaFile> {
    let mp = meta_path(path);
    let text = fs::read_to_string(&mp).with_context(|| format!("reading {}", mp.display()))?;
    let meta: MetaFile =
        toml::from_str(&text).with_context(|| format!("parsing {}", mp.display()))?;
    if meta.format_version != FORMAT_VERSION {
        bail!(
            "unsupported checkpoint format version {} in {} (this build reads version {FORMAT_VERSION})",
            meta.format_version,
            mp.display()
        );
    }
    Ok(meta)
}

// ---------------------------------------------------------------------
// Store and optimizer (de)serialization
// ---------------------------------------------------------------------

fn param_entries(store: &ParamStore) -> Vec<TensorEntry> {
    store
        .iter()
        .map(|(id, name, shape)| TensorEntry {
            name: name.to_string(),
            dims: shape.to_vec(),
            data: store.get(id).to_vec(),
        })
        .collect()
}

/// Append `opt.<which>.{m,v}.<param>` entries for an Adam optimizer;
/// SGD has no buffers and contributes nothing.
fn push_optimizer_entries(entries: &mut Vec<TensorEntry>, store: &ParamStore, which: &str, opt: &Optimizer) {
    let (m, v, _) = opt.state();
    if m.is_empty() {
        return;
    }
    for (kind, bufs) in [("m", m), ("v", v)] {
        for ((_, name, shape), buf) in store.iter().zip(bufs) {
            entries.push(TensorEntry {
                name: format!("opt.{which}.{kind}.{name}"),
                dims: shape.to_vec(),
                data: buf.clone(),
            });
        }
    }
}

/// Copy checkpoint tensors into a freshly built store, demanding exact
/// name-set equality (tying determines names, so a mismatch means the
/// sidecar's sharing counts disagree with the saved tensors).
fn apply_params(store: &mut ParamStore, entries: &[TensorEntry]) -> Result<()> {
    let by_name: BTreeMap<&str, &TensorEntry> = entries
        .iter()
        .filter(|e| !e.name.starts_with("opt."))
        .map(|e| (e.name.as_str(), e))
        .collect();
    let expected: Vec<(poseaug::nn::ParamId, String, Vec<usize>)> = store
        .iter()
        .map(|(id, name, shape)| (id, name.to_string(), shape.to_vec()))
        .collect();
    let expected_names: BTreeSet<&str> = expected.iter().map(|(_, n, _)| n.as_str()).collect();
    for name in by_name.keys() {
        if !expected_names.contains(name) {
            bail!(
                "tie mismatch: checkpoint holds parameter {name:?} but the model rebuilt from \
                 its sidecar config does not; the sidecar's sharing counts disagree with the \
                 saved tensors"
            );
        }
    }
    for (id, name, shape) in &expected {
        let e = by_name.get(name.as_str()).ok_or_else(|| {
            anyhow!(
                "tie mismatch: the model rebuilt from the checkpoint's sidecar config expects \
                 parameter {name:?}, which the checkpoint does not hold; the sidecar's sharing \
                 counts disagree with the saved tensors"
            )
        })?;
        if e.dims != *shape {
            bail!(
                "parameter {name:?} has shape {:?} in the checkpoint but {shape:?} in the model",
                e.dims
            );
        }
        store.set(*id, &e.data);
    }
    Ok(())
}

/// Restore one phase optimizer's moments and step counter.
fn restore_optimizer(
    opt: &mut Optimizer,
    store: &ParamStore,
    which: &str,
    entries: &[TensorEntry],
    steps: u64,
) -> Result<()> {
    let by_name: BTreeMap<&str, &TensorEntry> =
        entries.iter().map(|e| (e.name.as_str(), e)).collect();
    let (m, v) = if matches!(opt.config(), OptimConfig::Adam { .. }) {
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (kind, out) in [("m", &mut m), ("v", &mut v)] {
            for (_, name, shape) in store.iter() {
                let key = format!("opt.{which}.{kind}.{name}");
                let e = by_name.get(key.as_str()).ok_or_else(|| {
                    anyhow!("checkpoint lacks Adam moment tensor {key:?}")
                })?;
                if e.dims != shape {
                    bail!("moment tensor {key:?} has the wrong shape");
                }
                out.push(e.data.clone());
            }
        }
        (m, v)
    } else {
        (Vec::new(), Vec::new())
    };
    opt.restore_state(m, v, steps)
        .map_err(anyhow::Error::new)
        .with_context(|| format!("restoring the {which:?}-phase optimizer"))
}

// ---------------------------------------------------------------------
// Public save/load pairs
// ---------------------------------------------------------------------

/// Save a pose-transfer model with its training config and state.
pub fn save_cpgnet(
    path: &Path,
    net: &CpgNet,
    tcfg: &CpgTrainConfig,
    state: &CpgTrainState,
) -> Result<()> {
    let mut entries = param_entries(&net.store);
    push_optimizer_entries(&mut entries, &net.store, "d", &state.opt_d);
    push_optimizer_entries(&mut entries, &net.store, "g", &state.opt_g);
    write_container(path, "cpgnet", &entries)?;
    write_meta(
        path,
        &MetaFile {
            model: "cpgnet".into(),
            format_version: FORMAT_VERSION,
            epochs_completed: state.epochs_done,
            opt_d_steps: state.opt_d.steps_taken(),
            opt_g_steps: state.opt_g.steps_taken(),
            optim: OptimMeta::from_config(tcfg.optim),
            cpgnet: Some(CpgMeta::from_configs(net.config(), tcfg)),
            crossgan: None,
        },
    )
}

/// Load a pose-transfer checkpoint back into a bit-identical model.
pub fn load_cpgnet(path: &Path) -> Result<(CpgNet, CpgTrainConfig, CpgTrainState)> {
    let (model, entries) = read_container(path)?;
    let meta = read_meta(path)?;
    if model != "cpgnet" || meta.model != model {
        bail!(
            "{} holds a {:?} model, expected \"cpgnet\"",
            path.display(),
            if meta.model == model { model } else { meta.model }
        );
    }
    let cm = meta
        .cpgnet
        .as_ref()
        .ok_or_else(|| anyhow!("checkpoint sidecar lacks a [cpgnet] section"))?;
    let cfg = cm.to_model_config()?;
    let tcfg = cm.to_train_config(meta.optim.to_config()?);
    let mut net = CpgNet::new(&cfg)?;
    apply_params(&mut net.store, &entries)?;
    let mut state = CpgTrainState::new(&net, &tcfg);
    restore_optimizer(&mut state.opt_d, &net.store, "d", &entries, meta.opt_d_steps)?;
    restore_optimizer(&mut state.opt_g, &net.store, "g", &entries, meta.opt_g_steps)?;
    state.epochs_done = meta.epochs_completed;
    Ok((net, tcfg, state))
}

/// Save a cross-view matcher with its training config and state.
pub fn save_crossgan(
    path: &Path,
    net: &CrossGan,
    tcfg: &CrossganTrainConfig,
    state: &CrossganTrainState,
) -> Result<()> {
    let mut entries = param_entries(&net.store);
    push_optimizer_entries(&mut entries, &net.store, "d", &state.opt_d);
    push_optimizer_entries(&mut entries, &net.store, "g", &state.opt_g);
    write_container(path, "crossgan", &entries)?;
    write_meta(
        path,
        &MetaFile {
            model: "crossgan".into(),
            format_version: FORMAT_VERSION,
            epochs_completed: state.epochs_done,
            opt_d_steps: state.opt_d.steps_taken(),
            opt_g_steps: state.opt_g.steps_taken(),
            optim: OptimMeta::from_config(tcfg.optim),
            cpgnet: None,
            crossgan: Some(CrossMeta::from_configs(net.config(), tcfg)),
        },
    )
}

/// Load a matcher checkpoint back into a bit-identical model.
pub fn load_crossgan(path: &Path) -> Result<(CrossGan, CrossganTrainConfig, CrossganTrainState)> {
    let (model, entries) = read_container(path)?;
    let meta = read_meta(path)?;
    if model != "crossgan" || meta.model != model {
        bail!(
            "{} holds a {:?} model, expected \"crossgan\"",
            path.display(),
            if meta.model == model { model } else { meta.model }
        );
    }
    let cm = meta
        .crossgan
        .as_ref()
        .ok_or_else(|| anyhow!("checkpoint sidecar lacks a [crossgan] section"))?;
    let cfg = cm.to_model_config();
    let tcfg = cm.to_train_config(meta.optim.to_config()?)?;
    let mut net = CrossGan::new(&cfg)?;
    apply_params(&mut net.store, &entries)?;
    let mut state = CrossganTrainState::new(&net, &tcfg);
    restore_optimizer(&mut state.opt_d, &net.store, "d", &entries, meta.opt_d_steps)?;
    restore_optimizer(&mut state.opt_g, &net.store, "g", &entries, meta.opt_g_steps)?;
    state.epochs_done = meta.epochs_completed;
    Ok((net, tcfg, state))
}

/// Read the model kind ("cpgnet" or "crossgan") without loading tensors.
pub fn peek_model_kind(path: &Path) -> Result<String> {
    let (model, _) = read_container(path)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use poseaug::cpgnet::train_cpgnet_epochs;
    use poseaug::crossgan::train_crossgan_epochs;
    use poseaug::synthdata::{generate_dataset, CrossViewDataset, DatasetConfig};

    fn tiny_dataset() -> CrossViewDataset {
        let cfg = DatasetConfig {
            n_identities: 2,
            n_poses: 2,
            n_skeletons: 2,
            image_h: 8,
            image_w: 8,
            seed: 5,
        };
        generate_dataset(&cfg).unwrap()
    }

    fn tiny_cpg() -> (CpgNet, CpgTrainConfig) {
        let cfg = CpgConfig {
            image_h: 8,
            image_w: 8,
            enc_channels: [2, 2, 3],
            bottleneck: 4,
            disc_channels: [2, 2, 2],
            sharing: SharingSpec::new(2, 2, 2),
            skip: SkipMode::Skeleton,
            dropout: 0.5,
            seed: 11,
        };
        let tcfg = CpgTrainConfig {
            epochs: 2,
            batch_size: 4,
            zeta: 10.0,
            optim: OptimConfig::adam(1e-3),
            seed: 3,
        };
        (CpgNet::new(&cfg).unwrap(), tcfg)
    }

    fn tiny_cross() -> (CrossGan, CrossganTrainConfig) {
        let cfg = CrossGanConfig {
            image_h: 8,
            image_w: 8,
            latent_dim: 2,
            enc_hidden: 2,
            gen_channels: 1,
            disc_channels: 1,
            disc_hidden: 2,
            delta: 0.1,
            seed: 11,
        };
        let tcfg = CrossganTrainConfig {
            epochs: 2,
            batch_size: 4,
            optim: OptimConfig::adam(1e-3),
            pairing: PairingMode::LabelPaired,
            seed: 3,
        };
        (CrossGan::new(&cfg).unwrap(), tcfg)
    }

    fn stores_bit_equal(a: &ParamStore, b: &ParamStore) -> bool {
        let an: Vec<_> = a.iter().map(|(id, n, _)| (n.to_string(), id)).collect();
        let bn: Vec<_> = b.iter().map(|(id, n, _)| (n.to_string(), id)).collect();
        an.len() == bn.len()
            && an.iter().zip(&bn).all(|((na, ia), (nb, ib))| {
                na == nb
                    && a.get(*ia).len() == b.get(*ib).len()
                    && a.get(*ia)
                        .iter()
                        .zip(b.get(*ib))
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }

    #[test]
    fn cpgnet_round_trip_is_bit_identical() {
        let ds = tiny_dataset();
        let (mut net, tcfg) = tiny_cpg();
        let mut state = CpgTrainState::new(&net, &tcfg);
        train_cpgnet_epochs(&mut net, &ds, &tcfg, &mut state, 1).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_cpgnet(&path, &net, &tcfg, &state).unwrap();
        let (back, btcfg, bstate) = load_cpgnet(&path).unwrap();

        assert!(stores_bit_equal(&net.store, &back.store));
        assert_eq!(btcfg.epochs, tcfg.epochs);
        assert_eq!(btcfg.zeta, tcfg.zeta);
        assert_eq!(bstate.epochs_done, 1);
        assert_eq!(bstate.opt_d.steps_taken(), state.opt_d.steps_taken());
        assert_eq!(bstate.opt_g.steps_taken(), state.opt_g.steps_taken());
        // Adam moments survive exactly.
        let (m0, v0, _) = state.opt_g.state();
        let (m1, v1, _) = bstate.opt_g.state();
        assert_eq!(m0, m1);
        assert_eq!(v0, v1);
    }

    #[test]
    fn resumed_cpgnet_training_matches_uninterrupted() {
        let ds = tiny_dataset();

        // Straight-through: two epochs.
        let (mut a, tcfg) = tiny_cpg();
        let mut sa = CpgTrainState::new(&a, &tcfg);
        train_cpgnet_epochs(&mut a, &ds, &tcfg, &mut sa, 2).unwrap();

        // Interrupted: one epoch, checkpoint, reload, one more.
        let (mut b, _) = tiny_cpg();
        let mut sb = CpgTrainState::new(&b, &tcfg);
        train_cpgnet_epochs(&mut b, &ds, &tcfg, &mut sb, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_cpgnet(&path, &b, &tcfg, &sb).unwrap();
        let (mut c, ctcfg, mut sc) = load_cpgnet(&path).unwrap();
        train_cpgnet_epochs(&mut c, &ds, &ctcfg, &mut sc, 1).unwrap();

        assert!(stores_bit_equal(&a.store, &c.store));
    }

    #[test]
    fn crossgan_round_trip_and_resume_match() {
        let ds = tiny_dataset();
        let (mut a, tcfg) = tiny_cross();
        let mut sa = CrossganTrainState::new(&a, &tcfg);
        train_crossgan_epochs(&mut a, &ds.view1, &ds.view2, &tcfg, &mut sa, 2).unwrap();

        let (mut b, _) = tiny_cross();
        let mut sb = CrossganTrainState::new(&b, &tcfg);
        train_crossgan_epochs(&mut b, &ds.view1, &ds.view2, &tcfg, &mut sb, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_crossgan(&path, &b, &tcfg, &sb).unwrap();
        let (mut c, ctcfg, mut sc) = load_crossgan(&path).unwrap();
        assert!(stores_bit_equal(&b.store, &c.store));
        train_crossgan_epochs(&mut c, &ds.view1, &ds.view2, &ctcfg, &mut sc, 1).unwrap();

        assert!(stores_bit_equal(&a.store, &c.store));
    }

    #[test]
    fn container_version_bump_is_rejected() {
        let (net, tcfg) = tiny_cpg();
        let state = CpgTrainState::new(&net, &tcfg);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_cpgnet(&path, &net, &tcfg, &state).unwrap();

        let mut bytes = fs::read(&path).unwrap();
        bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
        fs::write(&path, bytes).unwrap();
        let err = load_cpgnet(&path).unwrap_err().to_string();
        assert!(err.contains("version 2"), "got: {err}");
    }

    #[test]
    fn sidecar_version_bump_is_rejected() {
        let (net, tcfg) = tiny_cpg();
        let state = CpgTrainState::new(&net, &tcfg);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_cpgnet(&path, &net, &tcfg, &state).unwrap();

        let mp = meta_path(&path);
        let text = fs::read_to_string(&mp).unwrap();
        fs::write(&mp, text.replace("format_version = 1", "format_version = 9")).unwrap();
        let err = load_cpgnet(&path).unwrap_err().to_string();
        assert!(err.contains("version 9"), "got: {err}");
    }

    #[test]
    fn sharing_tamper_is_a_tie_mismatch() {
        let (net, tcfg) = tiny_cpg();
        let state = CpgTrainState::new(&net, &tcfg);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_cpgnet(&path, &net, &tcfg, &state).unwrap();

        // Claiming fewer tied discriminator layers renames parameters,
        // which the loader must refuse rather than misassign.
        let mp = meta_path(&path);
        let text = fs::read_to_string(&mp).unwrap();
        assert!(text.contains("sharing_disc = 2"));
        fs::write(&mp, text.replace("sharing_disc = 2", "sharing_disc = 0")).unwrap();
        let err = load_cpgnet(&path).unwrap_err().to_string();
        assert!(err.contains("tie mismatch"), "got: {err}");
    }

    #[test]
    fn wrong_model_kind_is_rejected() {
        let (net, tcfg) = tiny_cross();
        let state = CrossganTrainState::new(&net, &tcfg);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_crossgan(&path, &net, &tcfg, &state).unwrap();
        let err = load_cpgnet(&path).unwrap_err().to_string();
        assert!(err.contains("crossgan") && err.contains("cpgnet"), "got: {err}");
        assert_eq!(peek_model_kind(&path).unwrap(), "crossgan");
    }

    #[test]
    fn sgd_checkpoints_carry_no_moment_tensors() {
        let (net, mut tcfg) = tiny_cpg();
        tcfg.optim = OptimConfig::Sgd { lr: 1e-3 };
        let state = CpgTrainState::new(&net, &tcfg);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_cpgnet(&path, &net, &tcfg, &state).unwrap();
        let (_, entries) = read_container(&path).unwrap();
        assert!(entries.iter().all(|e| !e.name.starts_with("opt.")));
        let (back, btcfg, _) = load_cpgnet(&path).unwrap();
        assert!(stores_bit_equal(&net.store, &back.store));
        assert!(matches!(btcfg.optim, OptimConfig::Sgd { .. }));
    }
}
