//! Unsupervised cross-view matcher: coupled VAEs, latent alignment, and
//! a coupled adversarial pair.
//!
//! Each camera view owns a variational autoencoder: an MLP encoder maps a
//! flattened image to a Gaussian posterior (μ, σ), and a deconvolutional
//! decoder maps a reparameterized draw `z = μ + σ ⊙ ε` back to pixels.
//! The decoder doubles as the view's GAN generator — the discriminator
//! scores the decoded draw as its fake — so reconstruction and adversarial
//! pressure shape the same network. A single affine map aligns view-2
//! latents onto view-1's latent space; its penalty is floored so pairs
//! already within `δ` stop pulling. Both views are *coupled*: the first
//! four decoder layers share one set of weights, as does the final
//! discriminator scoring layer, while everything view-specific (encoders,
//! decoder heads, early discriminator stages) stays free to diverge.
//!
//! # Objective
//!
//! The joint loss sums three batch-mean terms: the coupled VAE term
//! (per-view KL to the unit Gaussian plus a squared-error reconstruction),
//! the floored alignment penalty `max(‖z₁ − Align(z₂)‖₂², δ)`, and the
//! coupled adversarial value `log D₁(α₁) + log(1 − D₁(G₁(z₁))) +
//! log D₂(α₂) + log(1 − D₂(G₂(z₂)))`. Discriminators ascend the value;
//! everything else descends the rest.
//!
//! # Training and embedding
//!
//! [`train_crossgan`] consumes index-paired view batches — paired either
//! by ground-truth identity ([`PairingMode::LabelPaired`]) or by a seeded
//! shuffle ([`PairingMode::Shuffled`]) — and alternates a discriminator
//! phase with a joint VAE/alignment/generator phase per mini-batch.
//! [`embed`] then maps an image to its retrieval vector: the posterior
//! mean for view 1, the aligned posterior mean for view 2, with no
//! sampling noise, so embeddings are deterministic.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::layers::{
    leaky_relu, leaky_relu_bwd, log_one_minus_sigmoid, log_sigmoid, relu, relu_bwd, sigmoid,
    sigmoid_bwd, Conv2d, ConvTranspose2d, Linear, MaxPool2,
};
use crate::nn::optim::{OptimConfig, Optimizer};
use crate::nn::params::{Grads, Init, ParamId, ParamStore};
use crate::nn::tensor::Tensor;
use crate::par::map_indexed;
use crate::rng::{derive_key, stream, tag};
use crate::synthdata::ImageSample;

/// Decoder/generator depth per view (four deconvolutions plus the head).
pub const GEN_LAYERS: usize = 5;
/// How many leading generator layers both views share.
pub const GEN_TIED: usize = 4;
/// Discriminator depth per view (three pooled conv stages plus two FC).
pub const DISC_LAYERS: usize = 5;

/// Negative-side slope of the discriminator's leaky ReLU.
const LRELU_SLOPE: f64 = 0.2;

/// Model hyperparameters; construction-time contract of [`CrossGan`].
#[derive(Clone, Copy, Debug)]
pub struct CrossGanConfig {
    pub image_h: usize,
    pub image_w: usize,
    /// Latent dimension of each view's posterior.
    pub latent_dim: usize,
    /// Hidden width of each encoder MLP.
    pub enc_hidden: usize,
    /// Channel width of the generator's deconvolution stack.
    pub gen_channels: usize,
    /// Channel width of the discriminator's conv stages.
    pub disc_channels: usize,
    /// Hidden width of the discriminator's first FC layer.
    pub disc_hidden: usize,
    /// Alignment floor: squared latent distances at or below it stop
    /// pulling.
    pub delta: f64,
    /// Parameter-init seed.
    pub seed: u64,
}

impl Default for CrossGanConfig {
    fn default() -> Self {
        CrossGanConfig {
            image_h: 32,
            image_w: 16,
            latent_dim: 20,
            enc_hidden: 64,
            gen_channels: 12,
            disc_channels: 12,
            disc_hidden: 32,
            delta: 0.1,
            seed: 7,
        }
    }
}

impl CrossGanConfig {
    /// Check dimensions (three 2× stages need multiples of 8) and ranges.
    pub fn validate(&self) -> Result<()> {
        if self.image_h == 0
            || self.image_w == 0
            || !self.image_h.is_multiple_of(8)
            || !self.image_w.is_multiple_of(8)
        {
            return Err(Error::invalid(format!(
                "image dims must be positive multiples of 8, got {}x{}",
                self.image_h, self.image_w
            )));
        }
        if self.latent_dim == 0
            || self.enc_hidden == 0
            || self.gen_channels == 0
            || self.disc_channels == 0
            || self.disc_hidden == 0
        {
            return Err(Error::invalid("all widths must be positive"));
        }
        if self.delta < 0.0 || !self.delta.is_finite() {
            return Err(Error::invalid(format!(
                "alignment floor must be finite and >= 0, got {}",
                self.delta
            )));
        }
        Ok(())
    }
}

/// A reparameterized posterior draw, stored with all its parts.
#[derive(Clone, Debug)]
pub struct LatentVariable {
    /// Posterior mean.
    pub mu: Vec<f64>,
    /// Posterior standard deviation (positive elementwise).
    pub sigma: Vec<f64>,
    /// The draw `z = μ + σ ⊙ ε`.
    pub z: Vec<f64>,
    /// The unit-Gaussian noise behind the draw.
    pub eps: Vec<f64>,
}

impl LatentVariable {
    /// Assemble a draw from its parts, computing `z = μ + σ ⊙ ε`.
    pub fn from_stats(mu: Vec<f64>, sigma: Vec<f64>, eps: Vec<f64>) -> Result<Self> {
        if mu.len() != sigma.len() || mu.len() != eps.len() {
            return Err(Error::ShapeMismatch(format!(
                "latent parts disagree: mu {}, sigma {}, eps {}",
                mu.len(),
                sigma.len(),
                eps.len()
            )));
        }
        if sigma.iter().any(|&s| s <= 0.0 || s.is_nan()) {
            return Err(Error::invalid("sigma must be positive elementwise"));
        }
        let z = mu
            .iter()
            .zip(&sigma)
            .zip(&eps)
            .map(|((m, s), e)| m + s * e)
            .collect();
        Ok(LatentVariable { mu, sigma, z, eps })
    }

    /// Latent dimension.
    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// The decoder/generator stack: a seeding deconvolution from the latent
/// column, three doubling deconvolutions (all four shared across views),
/// and a per-view conv head squashed to pixel range by a sigmoid.
#[derive(Clone)]
pub struct GenBranch {
    up: Vec<ConvTranspose2d>,
    head: Conv2d,
}

/// Per-view discriminator: three conv + max-pool + leaky-ReLU stages,
/// then a hidden FC and the shared scalar scoring FC.
#[derive(Clone)]
pub struct DiscBranch {
    convs: Vec<Conv2d>,
    fc1: Linear,
    fc2: Linear,
}

/// One view's VAE: an MLP encoder to (μ, log σ²) and the decoder that
/// doubles as the view's GAN generator.
#[derive(Clone)]
pub struct ViewVae {
    enc1: Linear,
    enc2: Linear,
    decoder: GenBranch,
}

/// Affine latent alignment `z₂ ↦ W z₂ + c` with a squared-distance floor.
#[derive(Clone)]
pub struct AlignmentModel {
    w: ParamId,
    b: ParamId,
    /// Squared-distance floor `δ ≥ 0`.
    pub delta: f64,
}

/// The coupled matcher: two VAEs whose decoders are the GAN generators,
/// two discriminators, and the latent alignment map. Shared layers hold
/// one parameter tensor, so tying is exact by construction.
#[derive(Clone)]
pub struct CrossGan {
    /// All parameters; exposed for optimizers, checkpoints, and checks.
    pub store: ParamStore,
    cfg: CrossGanConfig,
    vae: [ViewVae; 2],
    disc: [DiscBranch; 2],
    align_map: AlignmentModel,
}

/// Map a 1-based view id onto an internal branch index.
fn view_index(view: u8) -> Result<usize> {
    match view {
        1 => Ok(0),
        2 => Ok(1),
        v => Err(Error::invalid(format!("view id must be 1 or 2, got {v}"))),
    }
}

fn build_vae(
    store: &mut ParamStore,
    rng: &mut impl Rng,
    cfg: &CrossGanConfig,
    v: u8,
    first: Option<&ViewVae>,
) -> ViewVae {
    let in_dim = 3 * cfg.image_h * cfg.image_w;
    let (gc, j) = (cfg.gen_channels, cfg.latent_dim);
    let enc1 = Linear::new(
        store,
        &format!("enc.v{v}.l1"),
        in_dim,
        cfg.enc_hidden,
        Init::He { fan_in: in_dim },
        rng,
    );
    let enc2 = Linear::new(
        store,
        &format!("enc.v{v}.l2"),
        cfg.enc_hidden,
        2 * j,
        Init::Xavier {
            fan_in: cfg.enc_hidden,
            fan_out: 2 * j,
        },
        rng,
    );
    let up = match first {
        Some(b1) => b1.decoder.up.clone(),
        None => {
            let mut up = Vec::with_capacity(GEN_TIED);
            up.push(ConvTranspose2d::new(
                store,
                "g.shared.l1",
                j,
                gc,
                (cfg.image_h / 8, cfg.image_w / 8),
                1,
                0,
                rng,
            ));
            for k in 1..GEN_TIED {
                up.push(ConvTranspose2d::new(
                    store,
                    &format!("g.shared.l{}", k + 1),
                    gc,
                    gc,
                    (4, 4),
                    2,
                    1,
                    rng,
                ));
            }
            up
        }
    };
    let head = Conv2d::new(
        store,
        &format!("g.v{v}.l{GEN_LAYERS}"),
        gc,
        3,
        (3, 3),
        1,
        1,
        rng,
    );
    ViewVae {
        enc1,
        enc2,
        decoder: GenBranch { up, head },
    }
}

fn build_disc(
    store: &mut ParamStore,
    rng: &mut impl Rng,
    cfg: &CrossGanConfig,
    v: u8,
    first: Option<&DiscBranch>,
) -> DiscBranch {
    let dc = cfg.disc_channels;
    let mut convs = Vec::with_capacity(3);
    for k in 0..3 {
        let in_ch = if k == 0 { 3 } else { dc };
        convs.push(Conv2d::new(
            store,
            &format!("d.v{v}.l{}", k + 1),
            in_ch,
            dc,
            (5, 5),
            1,
            2,
            rng,
        ));
    }
    let flat = dc * (cfg.image_h / 8) * (cfg.image_w / 8);
    let fc1 = Linear::new(
        store,
        &format!("d.v{v}.l4"),
        flat,
        cfg.disc_hidden,
        Init::He { fan_in: flat },
        rng,
    );
    let fc2 = match first {
        Some(b1) => b1.fc2.clone(),
        None => Linear::new(
            store,
            &format!("d.shared.l{DISC_LAYERS}"),
            cfg.disc_hidden,
            1,
            Init::Xavier {
                fan_in: cfg.disc_hidden,
                fan_out: 1,
            },
            rng,
        ),
    };
    DiscBranch { convs, fc1, fc2 }
}

impl CrossGan {
    /// Build a fresh matcher; all randomness comes from `cfg.seed`.
    pub fn new(cfg: &CrossGanConfig) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = stream(cfg.seed, &[tag::INIT]);
        let vae1 = build_vae(&mut store, &mut rng, cfg, 1, None);
        let vae2 = build_vae(&mut store, &mut rng, cfg, 2, Some(&vae1));
        let d1 = build_disc(&mut store, &mut rng, cfg, 1, None);
        let d2 = build_disc(&mut store, &mut rng, cfg, 2, Some(&d1));
        let j = cfg.latent_dim;
        let w = store.add("align.w", &[j, j], Init::Identity, &mut rng);
        let b = store.add("align.b", &[j], Init::Zeros, &mut rng);
        Ok(CrossGan {
            store,
            cfg: *cfg,
            vae: [vae1, vae2],
            disc: [d1, d2],
            align_map: AlignmentModel {
                w,
                b,
                delta: cfg.delta,
            },
        })
    }

    /// The configuration this model was built with.
    pub fn config(&self) -> &CrossGanConfig {
        &self.cfg
    }

    /// Latent dimension of both posteriors.
    pub fn latent_dim(&self) -> usize {
        self.cfg.latent_dim
    }

    /// Current alignment floor.
    pub fn delta(&self) -> f64 {
        self.align_map.delta
    }

    /// Replace the alignment floor (must stay finite and non-negative).
    pub fn set_delta(&mut self, delta: f64) -> Result<()> {
        if delta < 0.0 || !delta.is_finite() {
            return Err(Error::invalid(format!(
                "alignment floor must be finite and >= 0, got {delta}"
            )));
        }
        self.align_map.delta = delta;
        Ok(())
    }

    /// Values (weights then bias) of generator layer `1..=5` for a view.
    pub fn gen_layer_params(&self, view: u8, layer: usize) -> Result<Vec<f64>> {
        let vi = view_index(view)?;
        let dec = &self.vae[vi].decoder;
        let (w, b) = match layer {
            1..=GEN_TIED => {
                let l = &dec.up[layer - 1];
                (l.weight_id(), l.bias_id())
            }
            GEN_LAYERS => (dec.head.weight_id(), dec.head.bias_id()),
            _ => {
                return Err(Error::invalid(format!(
                    "generator layer must be 1..={GEN_LAYERS}, got {layer}"
                )))
            }
        };
        let mut out = self.store.get(w).to_vec();
        out.extend_from_slice(self.store.get(b));
        Ok(out)
    }

    /// Values (weights then bias) of discriminator layer `1..=5` for a view.
    pub fn disc_layer_params(&self, view: u8, layer: usize) -> Result<Vec<f64>> {
        let vi = view_index(view)?;
        let d = &self.disc[vi];
        let (w, b) = match layer {
            1..=3 => {
                let l = &d.convs[layer - 1];
                (l.weight_id(), l.bias_id())
            }
            4 => (d.fc1.w, d.fc1.b),
            DISC_LAYERS => (d.fc2.w, d.fc2.b),
            _ => {
                return Err(Error::invalid(format!(
                    "discriminator layer must be 1..={DISC_LAYERS}, got {layer}"
                )))
            }
        };
        let mut out = self.store.get(w).to_vec();
        out.extend_from_slice(self.store.get(b));
        Ok(out)
    }

    /// Check one sample against the configured image geometry.
    fn expect_image(&self, s: &ImageSample) -> Result<()> {
        let want = [3, self.cfg.image_h, self.cfg.image_w];
        if s.pixels.shape() != want {
            return Err(Error::ShapeMismatch(format!(
                "image shape {:?} does not match model {:?}",
                s.pixels.shape(),
                want
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Encoder / decoder passes
// ---------------------------------------------------------------------------

/// Saved encoder activations plus the split posterior statistics.
struct EncTrace {
    x: Tensor,
    h_pre: Tensor,
    h: Tensor,
    mu: Vec<f64>,
    sigma: Vec<f64>,
}

fn enc_forward(net: &CrossGan, vi: usize, pixels: &Tensor) -> Result<EncTrace> {
    let in_dim = 3 * net.cfg.image_h * net.cfg.image_w;
    if pixels.numel() != in_dim {
        return Err(Error::ShapeMismatch(format!(
            "encoder expects {} pixels, got {}",
            in_dim,
            pixels.numel()
        )));
    }
    let vae = &net.vae[vi];
    let x = Tensor::from_vec(&[in_dim], pixels.data().to_vec());
    let h_pre = vae.enc1.forward(&net.store, &x);
    let h = relu(&h_pre);
    let stats = vae.enc2.forward(&net.store, &h);
    let j = net.cfg.latent_dim;
    let mu = stats.data()[..j].to_vec();
    let sigma: Vec<f64> = stats.data()[j..].iter().map(|v| (0.5 * v).exp()).collect();
    Ok(EncTrace {
        x,
        h_pre,
        h,
        mu,
        sigma,
    })
}

/// Backpropagate statistic gradients through one encoder.
fn enc_backward(net: &CrossGan, vi: usize, tr: &EncTrace, d_stats: &Tensor, grads: &mut Grads) {
    let vae = &net.vae[vi];
    let d_h = vae.enc2.backward(&net.store, &tr.h, d_stats, grads);
    let d_h_pre = relu_bwd(&tr.h_pre, &d_h);
    vae.enc1.backward(&net.store, &tr.x, &d_h_pre, grads);
}

/// Encode `image` for `view` into a latent draw using the given noise.
pub fn vae_encode(net: &CrossGan, view: u8, image: &ImageSample, eps: &[f64]) -> Result<LatentVariable> {
    let vi = view_index(view)?;
    if eps.len() != net.cfg.latent_dim {
        return Err(Error::ShapeMismatch(format!(
            "noise length {} does not match latent dimension {}",
            eps.len(),
            net.cfg.latent_dim
        )));
    }
    let tr = enc_forward(net, vi, &image.pixels)?;
    LatentVariable::from_stats(tr.mu, tr.sigma, eps.to_vec())
}

/// Saved decoder activations for one draw.
struct GenTrace {
    z_in: Tensor,
    pre: Vec<Tensor>,
    acts: Vec<Tensor>,
    out: Tensor,
}

fn gen_forward(gbr: &GenBranch, ps: &ParamStore, z: &[f64]) -> GenTrace {
    let z_in = Tensor::from_vec(&[z.len(), 1, 1], z.to_vec());
    let mut pre = Vec::with_capacity(GEN_TIED);
    let mut acts = Vec::with_capacity(GEN_TIED);
    let mut cur = z_in.clone();
    for up in &gbr.up {
        let p = up.forward(ps, &cur);
        cur = relu(&p);
        pre.push(p);
        acts.push(cur.clone());
    }
    let head_pre = gbr.head.forward(ps, &cur);
    let out = sigmoid(&head_pre);
    GenTrace { z_in, pre, acts, out }
}

/// Backpropagate an output-pixel gradient; returns the latent gradient.
fn gen_backward(
    gbr: &GenBranch,
    ps: &ParamStore,
    tr: &GenTrace,
    d_out: &Tensor,
    grads: &mut Grads,
) -> Vec<f64> {
    let d_head_pre = sigmoid_bwd(&tr.out, d_out);
    let mut d_act = gbr.head.backward(ps, &tr.acts[GEN_TIED - 1], &d_head_pre, grads);
    for k in (0..GEN_TIED).rev() {
        let d_pre = relu_bwd(&tr.pre[k], &d_act);
        let input = if k == 0 { &tr.z_in } else { &tr.acts[k - 1] };
        d_act = gbr.up[k].backward(ps, input, &d_pre, grads);
    }
    d_act.into_vec()
}

/// Decode a latent vector into a `[3, h, w]` image for `view`.
pub fn decode(net: &CrossGan, view: u8, z: &[f64]) -> Result<Tensor> {
    let vi = view_index(view)?;
    if z.len() != net.cfg.latent_dim {
        return Err(Error::ShapeMismatch(format!(
            "latent length {} does not match dimension {}",
            z.len(),
            net.cfg.latent_dim
        )));
    }
    Ok(gen_forward(&net.vae[vi].decoder, &net.store, z).out)
}

// ---------------------------------------------------------------------------
// Discriminator passes
// ---------------------------------------------------------------------------

/// Saved discriminator activations down to the raw score.
struct DiscTrace {
    x: Tensor,
    conv_pre: Vec<Tensor>,
    pooled: Vec<Tensor>,
    args: Vec<Vec<usize>>,
    acts: Vec<Tensor>,
    fc1_pre: Tensor,
    fc1_act: Tensor,
    logit: f64,
}

fn disc_forward(dbr: &DiscBranch, ps: &ParamStore, x: &Tensor) -> DiscTrace {
    let pool = MaxPool2;
    let mut conv_pre = Vec::with_capacity(3);
    let mut pooled = Vec::with_capacity(3);
    let mut args = Vec::with_capacity(3);
    let mut acts = Vec::with_capacity(3);
    let mut cur = x.clone();
    for conv in &dbr.convs {
        let p = conv.forward(ps, &cur);
        let (pl, arg) = pool.forward(&p);
        cur = leaky_relu(&pl, LRELU_SLOPE);
        conv_pre.push(p);
        pooled.push(pl);
        args.push(arg);
        acts.push(cur.clone());
    }
    let flat = Tensor::from_vec(&[cur.numel()], cur.data().to_vec());
    let fc1_pre = dbr.fc1.forward(ps, &flat);
    let fc1_act = relu(&fc1_pre);
    let score = dbr.fc2.forward(ps, &fc1_act);
    let logit = score.data()[0];
    DiscTrace {
        x: x.clone(),
        conv_pre,
        pooled,
        args,
        acts,
        fc1_pre,
        fc1_act,
        logit,
    }
}

/// Backpropagate a logit gradient; returns the input-pixel gradient.
fn disc_backward(
    dbr: &DiscBranch,
    ps: &ParamStore,
    tr: &DiscTrace,
    d_logit: f64,
    grads: &mut Grads,
) -> Tensor {
    let pool = MaxPool2;
    let dy = Tensor::from_vec(&[1], vec![d_logit]);
    let d_fc1_act = dbr.fc2.backward(ps, &tr.fc1_act, &dy, grads);
    let d_fc1_pre = relu_bwd(&tr.fc1_pre, &d_fc1_act);
    let d_flat = dbr.fc1.backward(ps, &tr.acts[2], &d_fc1_pre, grads);
    let mut d_act = d_flat.reshape(tr.acts[2].shape());
    for k in (0..3).rev() {
        let d_pooled = leaky_relu_bwd(&tr.pooled[k], &d_act, LRELU_SLOPE);
        let d_pre = pool.backward(tr.conv_pre[k].shape(), &tr.args[k], &d_pooled);
        let input = if k == 0 { &tr.x } else { &tr.acts[k - 1] };
        d_act = dbr.convs[k].backward(ps, input, &d_pre, grads);
    }
    d_act
}

/// Probability that `candidate` is a real image of `view`.
pub fn discriminate(net: &CrossGan, view: u8, candidate: &Tensor) -> Result<f64> {
    let vi = view_index(view)?;
    let want = [3, net.cfg.image_h, net.cfg.image_w];
    if candidate.shape() != want {
        return Err(Error::ShapeMismatch(format!(
            "candidate shape {:?} does not match model {:?}",
            candidate.shape(),
            want
        )));
    }
    let tr = disc_forward(&net.disc[vi], &net.store, candidate);
    Ok(sigmoid_scalar(tr.logit))
}

/// Numerically stable logistic function.
fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// KL divergence of the posterior from the unit Gaussian:
/// `−½ Σⱼ (1 + ln σⱼ² − μⱼ² − σⱼ²)`.
pub fn vae_kl_loss(lat: &LatentVariable) -> Result<f64> {
    if lat.sigma.len() != lat.mu.len() {
        return Err(Error::ShapeMismatch(format!(
            "latent parts disagree: mu {}, sigma {}",
            lat.mu.len(),
            lat.sigma.len()
        )));
    }
    if lat.sigma.iter().any(|&s| s <= 0.0 || s.is_nan()) {
        return Err(Error::invalid("sigma must be positive elementwise"));
    }
    Ok(lat
        .mu
        .iter()
        .zip(&lat.sigma)
        .map(|(m, s)| {
            let s2 = s * s;
            -0.5 * (1.0 + s2.ln() - m * m - s2)
        })
        .sum())
}

/// Gaussian-likelihood reconstruction error for one sample:
/// `½ Σ (target − recon)²` over all pixels.
pub fn reconstruction_error(target: &Tensor, recon: &Tensor) -> Result<f64> {
    if target.shape() != recon.shape() {
        return Err(Error::ShapeMismatch(format!(
            "reconstruction shape {:?} does not match target {:?}",
            recon.shape(),
            target.shape()
        )));
    }
    Ok(0.5
        * target
            .data()
            .iter()
            .zip(recon.data())
            .map(|(t, r)| (t - r) * (t - r))
            .sum::<f64>())
}

/// Batch-mean coupled VAE loss: `(1/m) Σ_κ Σ_v (KL_v^κ + recon_v^κ)`.
pub fn coupled_vae_loss(
    lat1: &[LatentVariable],
    lat2: &[LatentVariable],
    recon1: &[f64],
    recon2: &[f64],
) -> Result<f64> {
    if lat1.is_empty() {
        return Err(Error::invalid("coupled VAE loss needs a non-empty batch"));
    }
    if lat1.len() != lat2.len() || lat1.len() != recon1.len() || lat1.len() != recon2.len() {
        return Err(Error::ShapeMismatch(format!(
            "batch parts disagree: latents {}/{}, recon terms {}/{}",
            lat1.len(),
            lat2.len(),
            recon1.len(),
            recon2.len()
        )));
    }
    let mut acc = 0.0;
    for k in 0..lat1.len() {
        acc += vae_kl_loss(&lat1[k])? + recon1[k] + vae_kl_loss(&lat2[k])? + recon2[k];
    }
    Ok(acc / lat1.len() as f64)
}

/// Affine image of a view-2 latent under the alignment map.
pub fn align(net: &CrossGan, z2: &[f64]) -> Result<Vec<f64>> {
    let j = net.cfg.latent_dim;
    if z2.len() != j {
        return Err(Error::ShapeMismatch(format!(
            "latent length {} does not match dimension {}",
            z2.len(),
            j
        )));
    }
    let w = net.store.get(net.align_map.w);
    let b = net.store.get(net.align_map.b);
    Ok((0..j)
        .map(|i| {
            let row = &w[i * j..][..j];
            b[i] + row.iter().zip(z2).map(|(wv, zv)| wv * zv).sum::<f64>()
        })
        .collect())
}

/// One aligned pair's floored penalty and, where above the floor, its
/// gradients: onto `z₁`, onto the map parameters, and onto `z₂`.
fn align_pair_backward(
    net: &CrossGan,
    z1: &[f64],
    z2: &[f64],
    delta: f64,
    scale: f64,
    grads: &mut Grads,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let j = net.cfg.latent_dim;
    let a = align(net, z2)?;
    if z1.len() != j {
        return Err(Error::ShapeMismatch(format!(
            "latent length {} does not match dimension {}",
            z1.len(),
            j
        )));
    }
    let d: Vec<f64> = z1.iter().zip(&a).map(|(p, q)| p - q).collect();
    let d2: f64 = d.iter().map(|v| v * v).sum();
    if d2 <= delta {
        return Ok((delta, vec![0.0; j], vec![0.0; j]));
    }
    let w = net.store.get(net.align_map.w).to_vec();
    let d_z1: Vec<f64> = d.iter().map(|v| 2.0 * scale * v).collect();
    let mut d_z2 = vec![0.0; j];
    {
        let dw = grads.get_mut(net.align_map.w);
        for i in 0..j {
            let g = -2.0 * scale * d[i];
            for (slot, zv) in dw[i * j..][..j].iter_mut().zip(z2) {
                *slot += g * zv;
            }
        }
    }
    {
        let db = grads.get_mut(net.align_map.b);
        for (slot, dv) in db.iter_mut().zip(&d) {
            *slot += -2.0 * scale * dv;
        }
    }
    for i in 0..j {
        let g = -2.0 * scale * d[i];
        for (slot, wv) in d_z2.iter_mut().zip(&w[i * j..][..j]) {
            *slot += g * wv;
        }
    }
    Ok((d2, d_z1, d_z2))
}

/// Floored mean alignment penalty:
/// `(1/m) Σ_κ max(‖z₁^κ − Align(z₂^κ)‖₂², δ)`.
pub fn alignment_loss(net: &CrossGan, pairs: &[(Vec<f64>, Vec<f64>)], delta: f64) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("alignment loss needs a non-empty batch"));
    }
    if delta < 0.0 || !delta.is_finite() {
        return Err(Error::invalid(format!(
            "alignment floor must be finite and >= 0, got {delta}"
        )));
    }
    let mut acc = 0.0;
    for (z1, z2) in pairs {
        let a = align(net, z2)?;
        if z1.len() != a.len() {
            return Err(Error::ShapeMismatch(format!(
                "latent length {} does not match dimension {}",
                z1.len(),
                a.len()
            )));
        }
        let d2: f64 = z1.iter().zip(&a).map(|(p, q)| (p - q) * (p - q)).sum();
        acc += d2.max(delta);
    }
    Ok(acc / pairs.len() as f64)
}

/// [`alignment_loss`] plus its gradient onto the alignment parameters.
pub fn alignment_loss_and_grads(
    net: &CrossGan,
    pairs: &[(Vec<f64>, Vec<f64>)],
    delta: f64,
    grads: &mut Grads,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("alignment loss needs a non-empty batch"));
    }
    if delta < 0.0 || !delta.is_finite() {
        return Err(Error::invalid(format!(
            "alignment floor must be finite and >= 0, got {delta}"
        )));
    }
    let scale = 1.0 / pairs.len() as f64;
    let mut acc = 0.0;
    for (z1, z2) in pairs {
        let (d2, _, _) = align_pair_backward(net, z1, z2, delta, scale, grads)?;
        acc += d2.max(delta);
    }
    Ok(acc * scale)
}

/// Coupled adversarial value from already-computed probability scores:
/// batch-mean of `ln r₁ + ln(1−f₁) + ln r₂ + ln(1−f₂)`.
pub fn coupled_gan_loss_from_scores(
    real1: &[f64],
    fake1: &[f64],
    real2: &[f64],
    fake2: &[f64],
) -> Result<f64> {
    if real1.is_empty() {
        return Err(Error::invalid("adversarial value needs a non-empty batch"));
    }
    if real1.len() != fake1.len() || real1.len() != real2.len() || real1.len() != fake2.len() {
        return Err(Error::ShapeMismatch(format!(
            "score lists disagree: {}/{}/{}/{}",
            real1.len(),
            fake1.len(),
            real2.len(),
            fake2.len()
        )));
    }
    let mut acc = 0.0;
    for k in 0..real1.len() {
        for &s in [real1[k], fake1[k], real2[k], fake2[k]].iter() {
            if s <= 0.0 || s >= 1.0 || s.is_nan() {
                return Err(Error::invalid(format!(
                    "scores must lie strictly inside (0, 1), got {s}"
                )));
            }
        }
        acc += real1[k].ln() + (1.0 - fake1[k]).ln() + real2[k].ln() + (1.0 - fake2[k]).ln();
    }
    Ok(acc / real1.len() as f64)
}

fn check_gan_batch(
    net: &CrossGan,
    batch1: &[ImageSample],
    batch2: &[ImageSample],
    lat1: &[LatentVariable],
    lat2: &[LatentVariable],
) -> Result<()> {
    if batch1.is_empty() {
        return Err(Error::invalid("adversarial value needs a non-empty batch"));
    }
    if batch1.len() != batch2.len() || batch1.len() != lat1.len() || batch1.len() != lat2.len() {
        return Err(Error::ShapeMismatch(format!(
            "batch parts disagree: images {}/{}, latents {}/{}",
            batch1.len(),
            batch2.len(),
            lat1.len(),
            lat2.len()
        )));
    }
    for s in batch1.iter().chain(batch2) {
        net.expect_image(s)?;
    }
    for l in lat1.iter().chain(lat2) {
        if l.dim() != net.cfg.latent_dim {
            return Err(Error::ShapeMismatch(format!(
                "latent dimension {} does not match model {}",
                l.dim(),
                net.cfg.latent_dim
            )));
        }
    }
    Ok(())
}

/// Coupled adversarial value: batch-mean of
/// `log D₁(α₁) + log(1 − D₁(G₁(z₁))) + log D₂(α₂) + log(1 − D₂(G₂(z₂)))`.
pub fn coupled_gan_loss(
    net: &CrossGan,
    batch1: &[ImageSample],
    batch2: &[ImageSample],
    lat1: &[LatentVariable],
    lat2: &[LatentVariable],
) -> Result<f64> {
    check_gan_batch(net, batch1, batch2, lat1, lat2)?;
    let m = batch1.len();
    let views = [(batch1, lat1), (batch2, lat2)];
    let terms = map_indexed(2 * m, |t| {
        let (vi, k) = (t / m, t % m);
        let (batch, lat) = &views[vi];
        let real = disc_forward(&net.disc[vi], &net.store, &batch[k].pixels);
        let gen = gen_forward(&net.vae[vi].decoder, &net.store, &lat[k].z);
        let fake = disc_forward(&net.disc[vi], &net.store, &gen.out);
        log_sigmoid(real.logit) + log_one_minus_sigmoid(fake.logit)
    });
    Ok(terms.iter().sum::<f64>() / m as f64)
}

/// [`coupled_gan_loss`] plus its gradient onto discriminator and
/// generator parameters (the latents are treated as fixed inputs).
pub fn coupled_gan_loss_and_grads(
    net: &CrossGan,
    batch1: &[ImageSample],
    batch2: &[ImageSample],
    lat1: &[LatentVariable],
    lat2: &[LatentVariable],
    grads: &mut Grads,
) -> Result<f64> {
    check_gan_batch(net, batch1, batch2, lat1, lat2)?;
    let m = batch1.len();
    let scale = 1.0 / m as f64;
    let views = [(batch1, lat1), (batch2, lat2)];
    let parts = map_indexed(2 * m, |t| {
        let (vi, k) = (t / m, t % m);
        let (batch, lat) = &views[vi];
        let mut g = Grads::zeros(&net.store);
        let real = disc_forward(&net.disc[vi], &net.store, &batch[k].pixels);
        let gen = gen_forward(&net.vae[vi].decoder, &net.store, &lat[k].z);
        let fake = disc_forward(&net.disc[vi], &net.store, &gen.out);
        let sr = sigmoid_scalar(real.logit);
        let sf = sigmoid_scalar(fake.logit);
        disc_backward(&net.disc[vi], &net.store, &real, (1.0 - sr) * scale, &mut g);
        let d_fake = disc_backward(&net.disc[vi], &net.store, &fake, -sf * scale, &mut g);
        gen_backward(&net.vae[vi].decoder, &net.store, &gen, &d_fake, &mut g);
        (g, log_sigmoid(real.logit) + log_one_minus_sigmoid(fake.logit))
    });
    let mut acc = 0.0;
    for (g, v) in &parts {
        grads.add(g);
        acc += v;
    }
    Ok(acc * scale)
}

/// The joint objective, reported by component.
#[derive(Clone, Copy, Debug)]
pub struct CrossganLossParts {
    /// Coupled VAE term (KL plus reconstruction, both views).
    pub vae: f64,
    /// Floored latent alignment term.
    pub align: f64,
    /// Coupled adversarial value.
    pub gan: f64,
    /// Sum of the three.
    pub total: f64,
}

/// Everything one paired forward pass produces.
struct PairEval {
    enc: [EncTrace; 2],
    gen: [GenTrace; 2],
    lat: [LatentVariable; 2],
    real: [DiscTrace; 2],
    fake: [DiscTrace; 2],
    vae_c: f64,
    align_c: f64,
    gan_c: f64,
}

fn eval_pair(
    net: &CrossGan,
    s1: &ImageSample,
    s2: &ImageSample,
    eps1: &[f64],
    eps2: &[f64],
) -> Result<PairEval> {
    let samples = [s1, s2];
    let noises = [eps1, eps2];
    let mut enc = Vec::with_capacity(2);
    let mut gen = Vec::with_capacity(2);
    let mut lat = Vec::with_capacity(2);
    let mut real = Vec::with_capacity(2);
    let mut fake = Vec::with_capacity(2);
    let mut vae_c = 0.0;
    let mut gan_c = 0.0;
    for vi in 0..2 {
        net.expect_image(samples[vi])?;
        let e = enc_forward(net, vi, &samples[vi].pixels)?;
        let l = LatentVariable::from_stats(e.mu.clone(), e.sigma.clone(), noises[vi].to_vec())?;
        let g = gen_forward(&net.vae[vi].decoder, &net.store, &l.z);
        let r = disc_forward(&net.disc[vi], &net.store, &samples[vi].pixels);
        let f = disc_forward(&net.disc[vi], &net.store, &g.out);
        vae_c += vae_kl_loss(&l)? + reconstruction_error(&samples[vi].pixels, &g.out)?;
        gan_c += log_sigmoid(r.logit) + log_one_minus_sigmoid(f.logit);
        enc.push(e);
        gen.push(g);
        lat.push(l);
        real.push(r);
        fake.push(f);
    }
    let a = align(net, &lat[1].z)?;
    let d2: f64 = lat[0]
        .z
        .iter()
        .zip(&a)
        .map(|(p, q)| (p - q) * (p - q))
        .sum();
    let align_c = d2.max(net.align_map.delta);
    fn into2<T>(mut v: Vec<T>) -> [T; 2] {
        let b = v.pop().expect("two views");
        let a = v.pop().expect("two views");
        [a, b]
    }
    Ok(PairEval {
        enc: into2(enc),
        gen: into2(gen),
        lat: into2(lat),
        real: into2(real),
        fake: into2(fake),
        vae_c,
        align_c,
        gan_c,
    })
}

fn check_paired_batch(batch1: &[ImageSample], batch2: &[ImageSample]) -> Result<()> {
    if batch1.is_empty() {
        return Err(Error::invalid("loss needs a non-empty batch"));
    }
    if batch1.len() != batch2.len() {
        return Err(Error::ShapeMismatch(format!(
            "views disagree: {} vs {} samples",
            batch1.len(),
            batch2.len()
        )));
    }
    Ok(())
}

fn check_eps(net: &CrossGan, m: usize, eps1: &[Vec<f64>], eps2: &[Vec<f64>]) -> Result<()> {
    if eps1.len() != m || eps2.len() != m {
        return Err(Error::ShapeMismatch(format!(
            "noise lists disagree with batch: {}/{} vs {m}",
            eps1.len(),
            eps2.len()
        )));
    }
    for e in eps1.iter().chain(eps2) {
        if e.len() != net.cfg.latent_dim {
            return Err(Error::ShapeMismatch(format!(
                "noise length {} does not match latent dimension {}",
                e.len(),
                net.cfg.latent_dim
            )));
        }
    }
    Ok(())
}

/// Joint objective with explicit per-sample noise:
/// `L_VAE + L_Align + L_GAN`, each a batch mean.
pub fn crossgan_total_loss_with_eps(
    net: &CrossGan,
    batch1: &[ImageSample],
    batch2: &[ImageSample],
    eps1: &[Vec<f64>],
    eps2: &[Vec<f64>],
) -> Result<CrossganLossParts> {
    check_paired_batch(batch1, batch2)?;
    let m = batch1.len();
    check_eps(net, m, eps1, eps2)?;
    let evals = map_indexed(m, |k| eval_pair(net, &batch1[k], &batch2[k], &eps1[k], &eps2[k]));
    let (mut vae, mut al, mut gan) = (0.0, 0.0, 0.0);
    for e in evals {
        let e = e?;
        vae += e.vae_c / m as f64;
        al += e.align_c / m as f64;
        gan += e.gan_c / m as f64;
    }
    Ok(CrossganLossParts {
        vae,
        align: al,
        gan,
        total: vae + al + gan,
    })
}

/// Draw one sample's reparameterization noise from a derived stream.
fn draw_eps(latent_dim: usize, noise_seed: u64, view: u8, idx: u64) -> Vec<f64> {
    let mut r = stream(noise_seed, &[tag::NOISE, view as u64, idx]);
    (0..latent_dim).map(|_| r.sample(StandardNormal)).collect()
}

fn draw_eps_batch(net: &CrossGan, m: usize, noise_seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let j = net.cfg.latent_dim;
    let e1 = (0..m).map(|k| draw_eps(j, noise_seed, 1, k as u64)).collect();
    let e2 = (0..m).map(|k| draw_eps(j, noise_seed, 2, k as u64)).collect();
    (e1, e2)
}

/// Joint objective with noise drawn deterministically from `noise_seed`.
pub fn crossgan_total_loss(
    net: &CrossGan,
    batch1: &[ImageSample],
    batch2: &[ImageSample],
    noise_seed: u64,
) -> Result<CrossganLossParts> {
    check_paired_batch(batch1, batch2)?;
    let (e1, e2) = draw_eps_batch(net, batch1.len(), noise_seed);
    crossgan_total_loss_with_eps(net, batch1, batch2, &e1, &e2)
}

/// Gradient bundle for one view of one pair during the joint backward.
struct ViewBackward<'a> {
    eval: &'a PairEval,
    vi: usize,
    d_fake_logit: f64,
    d_z_extra: &'a [f64],
}

/// Backpropagate one view's reconstruction, KL, adversarial-fake, and
/// extra latent gradients through decoder, reparameterization, encoder.
fn view_backward(net: &CrossGan, scale: f64, vb: ViewBackward, grads: &mut Grads) {
    let PairEval { enc, gen, lat, real, fake, .. } = vb.eval;
    let (e, g, l, f) = (&enc[vb.vi], &gen[vb.vi], &lat[vb.vi], &fake[vb.vi]);
    // d x̂ from the reconstruction term plus the re-scored fake pass.
    let mut d_out = disc_backward(&net.disc[vb.vi], &net.store, f, vb.d_fake_logit, grads);
    {
        let d = d_out.data_mut();
        let target = real[vb.vi].x.data();
        for (i, slot) in d.iter_mut().enumerate() {
            *slot += scale * (g.out.data()[i] - target[i]);
        }
    }
    let mut d_z = gen_backward(&net.vae[vb.vi].decoder, &net.store, g, &d_out, grads);
    for (slot, extra) in d_z.iter_mut().zip(vb.d_z_extra) {
        *slot += extra;
    }
    // Reparameterization: dz/dμ = 1, dz/d(log σ²) = ε σ / 2; the KL term
    // adds μ and (σ² − 1)/2 directly.
    let j = net.cfg.latent_dim;
    let mut d_stats = vec![0.0; 2 * j];
    for i in 0..j {
        d_stats[i] = d_z[i] + scale * l.mu[i];
        d_stats[j + i] =
            d_z[i] * l.eps[i] * l.sigma[i] * 0.5 + scale * (l.sigma[i] * l.sigma[i] - 1.0) * 0.5;
    }
    enc_backward(net, vb.vi, e, &Tensor::from_vec(&[2 * j], d_stats), grads);
}

/// Coupled VAE loss over images (encode, decode, score) plus its gradient
/// onto encoder and decoder parameters.
pub fn coupled_vae_loss_and_grads(
    net: &CrossGan,
    batch1: &[ImageSample],
    batch2: &[ImageSample],
    eps1: &[Vec<f64>],
    eps2: &[Vec<f64>],
    grads: &mut Grads,
) -> Result<f64> {
    check_paired_batch(batch1, batch2)?;
    let m = batch1.len();
    check_eps(net, m, eps1, eps2)?;
    let scale = 1.0 / m as f64;
    let zero = vec![0.0; net.cfg.latent_dim];
    let parts = map_indexed(m, |k| -> Result<(Grads, f64)> {
        let e = eval_pair(net, &batch1[k], &batch2[k], &eps1[k], &eps2[k])?;
        let mut g = Grads::zeros(&net.store);
        for vi in 0..2 {
            view_backward(
                net,
                scale,
                ViewBackward {
                    eval: &e,
                    vi,
                    d_fake_logit: 0.0,
                    d_z_extra: &zero,
                },
                &mut g,
            );
        }
        Ok((g, e.vae_c))
    });
    let mut acc = 0.0;
    for p in parts {
        let (g, v) = p?;
        grads.add(&g);
        acc += v;
    }
    Ok(acc * scale)
}

/// Joint objective plus its full analytic gradient (fixed noise).
pub fn crossgan_total_loss_and_grads(
    net: &CrossGan,
    batch1: &[ImageSample],
    batch2: &[ImageSample],
    eps1: &[Vec<f64>],
    eps2: &[Vec<f64>],
    grads: &mut Grads,
) -> Result<CrossganLossParts> {
    check_paired_batch(batch1, batch2)?;
    let m = batch1.len();
    check_eps(net, m, eps1, eps2)?;
    let scale = 1.0 / m as f64;
    let delta = net.align_map.delta;
    let parts = map_indexed(m, |k| -> Result<(Grads, f64, f64, f64)> {
        let e = eval_pair(net, &batch1[k], &batch2[k], &eps1[k], &eps2[k])?;
        let mut g = Grads::zeros(&net.store);
        let (_, d_z1, d_z2) =
            align_pair_backward(net, &e.lat[0].z, &e.lat[1].z, delta, scale, &mut g)?;
        for (vi, dz) in [d_z1, d_z2].iter().enumerate() {
            let sr = sigmoid_scalar(e.real[vi].logit);
            let sf = sigmoid_scalar(e.fake[vi].logit);
            disc_backward(
                &net.disc[vi],
                &net.store,
                &e.real[vi],
                (1.0 - sr) * scale,
                &mut g,
            );
            view_backward(
                net,
                scale,
                ViewBackward {
                    eval: &e,
                    vi,
                    d_fake_logit: -sf * scale,
                    d_z_extra: dz,
                },
                &mut g,
            );
        }
        Ok((g, e.vae_c, e.align_c, e.gan_c))
    });
    let (mut vae, mut al, mut gan) = (0.0, 0.0, 0.0);
    for p in parts {
        let (g, v, a, gn) = p?;
        grads.add(&g);
        vae += v * scale;
        al += a * scale;
        gan += gn * scale;
    }
    Ok(CrossganLossParts {
        vae,
        align: al,
        gan,
        total: vae + al + gan,
    })
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// How view-1 and view-2 samples are matched into training pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairingMode {
    /// Pair by ground-truth (person, pose) keys — supervision-grade
    /// pairing for oracle tests and calibration runs.
    LabelPaired,
    /// Pair by a seeded shuffle, as an unsupervised run would.
    Shuffled,
}

/// Build index pairs `(view-1 index, view-2 index)` under `mode`.
///
/// Label pairing sorts both views by (person, pose) and requires the key
/// multisets to match exactly; shuffled pairing permutes view 2 under a
/// stream derived from `seed`.
pub fn build_pairs(
    view1: &[ImageSample],
    view2: &[ImageSample],
    mode: PairingMode,
    seed: u64,
) -> Result<Vec<(usize, usize)>> {
    if view1.is_empty() || view2.is_empty() {
        return Err(Error::invalid("pairing needs samples in both views"));
    }
    if view1.len() != view2.len() {
        return Err(Error::ShapeMismatch(format!(
            "views disagree: {} vs {} samples",
            view1.len(),
            view2.len()
        )));
    }
    let n = view1.len();
    match mode {
        PairingMode::Shuffled => {
            let mut p: Vec<usize> = (0..n).collect();
            p.shuffle(&mut stream(seed, &[tag::SPLIT, tag::SHUFFLE]));
            Ok((0..n).zip(p).collect())
        }
        PairingMode::LabelPaired => {
            let key = |s: &ImageSample| -> Result<(u32, u32)> {
                match (s.person_id, s.pose_id) {
                    (Some(p), Some(q)) => Ok((p, q)),
                    _ => Err(Error::invalid(
                        "label pairing needs person and pose ids on every sample",
                    )),
                }
            };
            let mut i1: Vec<(usize, (u32, u32))> =
                view1.iter().enumerate().map(|(i, s)| Ok((i, key(s)?))).collect::<Result<_>>()?;
            let mut i2: Vec<(usize, (u32, u32))> =
                view2.iter().enumerate().map(|(i, s)| Ok((i, key(s)?))).collect::<Result<_>>()?;
            i1.sort_by_key(|&(_, k)| k);
            i2.sort_by_key(|&(_, k)| k);
            for (a, b) in i1.iter().zip(&i2) {
                if a.1 != b.1 {
                    return Err(Error::invalid(format!(
                        "views carry different (person, pose) keys: {:?} vs {:?}",
                        a.1, b.1
                    )));
                }
            }
            Ok(i1.into_iter().zip(i2).map(|((a, _), (b, _))| (a, b)).collect())
        }
    }
}

/// Training hyperparameters.
#[derive(Clone, Copy, Debug)]
pub struct CrossganTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optim: OptimConfig,
    pub pairing: PairingMode,
    /// Seed for shuffles, pairing, and reparameterization noise.
    pub seed: u64,
}

impl Default for CrossganTrainConfig {
    fn default() -> Self {
        CrossganTrainConfig {
            epochs: 200,
            batch_size: 16,
            optim: OptimConfig::Sgd { lr: 2e-4 },
            pairing: PairingMode::Shuffled,
            seed: 7,
        }
    }
}

/// Resumable training state: both phase optimizers plus the absolute
/// epoch counter that keys shuffles and noise.
pub struct CrossganTrainState {
    /// Discriminator-phase optimizer (updates `d.*` only).
    pub opt_d: Optimizer,
    /// Joint-phase optimizer (updates everything but `d.*`).
    pub opt_g: Optimizer,
    /// Absolute epochs completed.
    pub epochs_done: usize,
}

impl CrossganTrainState {
    /// Fresh state for `net` under `cfg`'s optimizer.
    pub fn new(net: &CrossGan, cfg: &CrossganTrainConfig) -> Self {
        let mut opt_d = Optimizer::new(cfg.optim, &net.store);
        opt_d.set_mask(&net.store, |n| n.starts_with("d."));
        let mut opt_g = Optimizer::new(cfg.optim, &net.store);
        opt_g.set_mask(&net.store, |n| !n.starts_with("d."));
        CrossganTrainState {
            opt_d,
            opt_g,
            epochs_done: 0,
        }
    }
}

/// Train the matcher for `cfg.epochs`, returning per-epoch loss
/// components (measured before each batch's updates).
pub fn train_crossgan(
    net: &mut CrossGan,
    view1: &[ImageSample],
    view2: &[ImageSample],
    cfg: &CrossganTrainConfig,
) -> Result<Vec<CrossganLossParts>> {
    let mut state = CrossganTrainState::new(net, cfg);
    train_crossgan_epochs(net, view1, view2, cfg, &mut state, cfg.epochs)
}

/// Run `n_epochs` more epochs on top of `state`, so interrupted training
/// resumes exactly: shuffles and noise key off the absolute epoch index.
///
/// Each mini-batch runs two phases. The discriminator phase ascends the
/// adversarial value on real images and decoded draws; the joint phase
/// descends the VAE and alignment terms plus the fake term — re-scored by
/// the just-updated discriminators — through decoder, reparameterization,
/// and encoder.
pub fn train_crossgan_epochs(
    net: &mut CrossGan,
    view1: &[ImageSample],
    view2: &[ImageSample],
    cfg: &CrossganTrainConfig,
    state: &mut CrossganTrainState,
    n_epochs: usize,
) -> Result<Vec<CrossganLossParts>> {
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    for s in view1.iter().chain(view2) {
        net.expect_image(s)?;
    }
    let pairs = build_pairs(view1, view2, cfg.pairing, cfg.seed)?;
    let n = pairs.len();
    let mut records = Vec::with_capacity(n_epochs);
    for _ in 0..n_epochs {
        let epoch = state.epochs_done as u64;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream(cfg.seed, &[tag::SHUFFLE, epoch]));
        let eps_seed = derive_key(cfg.seed, &[tag::NOISE, epoch]);
        let (mut vae_sum, mut align_sum, mut gan_sum) = (0.0, 0.0, 0.0);
        let mut n_batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let b = chunk.len() as f64;
            let net_ref: &CrossGan = net;
            // Discriminator phase: ascend the adversarial value (descend
            // its negation) on both views of every pair at once, so the
            // shared scoring layer sees both views' contributions.
            let phase_a = map_indexed(chunk.len(), |t| -> Result<(Grads, PairEval)> {
                let j = chunk[t];
                let (i1, i2) = pairs[j];
                let e1 = draw_eps(net_ref.cfg.latent_dim, eps_seed, 1, j as u64);
                let e2 = draw_eps(net_ref.cfg.latent_dim, eps_seed, 2, j as u64);
                let ev = eval_pair(net_ref, &view1[i1], &view2[i2], &e1, &e2)?;
                let mut g = Grads::zeros(&net_ref.store);
                for vi in 0..2 {
                    let sr = sigmoid_scalar(ev.real[vi].logit);
                    let sf = sigmoid_scalar(ev.fake[vi].logit);
                    disc_backward(
                        &net_ref.disc[vi],
                        &net_ref.store,
                        &ev.real[vi],
                        -(1.0 - sr) / b,
                        &mut g,
                    );
                    disc_backward(&net_ref.disc[vi], &net_ref.store, &ev.fake[vi], sf / b, &mut g);
                }
                Ok((g, ev))
            });
            let mut d_grads = Grads::zeros(&net.store);
            let mut evals = Vec::with_capacity(chunk.len());
            for p in phase_a {
                let (g, ev) = p?;
                d_grads.add(&g);
                vae_sum += ev.vae_c / b;
                align_sum += ev.align_c / b;
                gan_sum += ev.gan_c / b;
                evals.push(ev);
            }
            state.opt_d.step(&mut net.store, &d_grads);
            // Joint phase: descend VAE + alignment + the fake term under
            // the updated discriminators, reusing the kept traces (no
            // generator-side parameter changed during the first phase).
            let net_ref: &CrossGan = net;
            let delta = net_ref.align_map.delta;
            let g_parts = map_indexed(evals.len(), |t| -> Result<Grads> {
                let ev = &evals[t];
                let mut g = Grads::zeros(&net_ref.store);
                let (_, d_z1, d_z2) = align_pair_backward(
                    net_ref,
                    &ev.lat[0].z,
                    &ev.lat[1].z,
                    delta,
                    1.0 / b,
                    &mut g,
                )?;
                for (vi, dz) in [d_z1, d_z2].iter().enumerate() {
                    let fresh = disc_forward(&net_ref.disc[vi], &net_ref.store, &ev.gen[vi].out);
                    let sf = sigmoid_scalar(fresh.logit);
                    view_backward(
                        net_ref,
                        1.0 / b,
                        ViewBackward {
                            eval: ev,
                            vi,
                            d_fake_logit: -sf / b,
                            d_z_extra: dz,
                        },
                        &mut g,
                    );
                }
                Ok(g)
            });
            let mut g_grads = Grads::zeros(&net.store);
            for g in g_parts {
                g_grads.add(&g?);
            }
            state.opt_g.step(&mut net.store, &g_grads);
            n_batches += 1;
        }
        let nb = n_batches as f64;
        let (vae, al, gan) = (vae_sum / nb, align_sum / nb, gan_sum / nb);
        records.push(CrossganLossParts {
            vae,
            align: al,
            gan,
            total: vae + al + gan,
        });
        state.epochs_done += 1;
    }
    Ok(records)
}

// ---------------------------------------------------------------------------
// Embedding
// ---------------------------------------------------------------------------

/// Retrieval embedding: the posterior mean for view 1, the aligned
/// posterior mean for view 2. No sampling noise — deterministic.
pub fn embed(net: &CrossGan, image: &ImageSample, view_id: u8) -> Result<Vec<f64>> {
    let vi = view_index(view_id)?;
    let tr = enc_forward(net, vi, &image.pixels)?;
    if vi == 0 {
        Ok(tr.mu)
    } else {
        align(net, &tr.mu)
    }
}

/// Write embeddings as CSV: `sample_id,view,v_1..v_J` with 6 decimals.
pub fn write_embeddings_csv(rows: &[(usize, u8, Vec<f64>)], path: &Path) -> Result<()> {
    let Some(first) = rows.first() else {
        return Err(Error::invalid("need at least one embedding row"));
    };
    let j = first.2.len();
    let mut out = String::from("sample_id,view");
    for i in 1..=j {
        let _ = write!(out, ",v_{i}");
    }
    out.push('\n');
    for (id, view, v) in rows {
        if v.len() != j {
            return Err(Error::ShapeMismatch(format!(
                "embedding rows disagree: {} vs {} values",
                v.len(),
                j
            )));
        }
        let _ = write!(out, "{id},{view}");
        for x in v {
            let _ = write!(out, ",{x:.6}");
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{finite_diff_grads, jitter_params, max_rel_error};
    use crate::synthdata::Origin;

    // -----------------------------------------------------------------
    // Test fixtures
    // -----------------------------------------------------------------

    /// Small geometry that still exercises every layer.
    fn tiny_cfg() -> CrossGanConfig {
        CrossGanConfig {
            image_h: 8,
            image_w: 8,
            latent_dim: 2,
            enc_hidden: 2,
            gen_channels: 1,
            disc_channels: 1,
            disc_hidden: 2,
            delta: 0.1,
            seed: 11,
        }
    }

    /// Deterministic noise image in `[0, 1]`.
    fn rand_img(seed: u64, h: usize, w: usize) -> Tensor {
        let mut r = stream(seed, &[tag::NOISE]);
        let data = (0..3 * h * w).map(|_| r.gen::<f64>()).collect();
        Tensor::from_vec(&[3, h, w], data)
    }

    fn sample(seed: u64, view: u8, person: u32, pose: u32, h: usize, w: usize) -> ImageSample {
        ImageSample {
            pixels: rand_img(seed, h, w),
            view_id: view,
            person_id: Some(person),
            pose_id: Some(pose),
            origin: Origin::Original,
            keypoints: None,
        }
    }

    fn gaussian_vec(seed: u64, n: usize) -> Vec<f64> {
        let mut r = stream(seed, &[tag::NOISE, 1]);
        (0..n).map(|_| r.sample(StandardNormal)).collect()
    }

    /// Paired tiny corpora whose view-2 order is scrambled on purpose.
    fn tiny_corpus(n: usize, h: usize, w: usize) -> (Vec<ImageSample>, Vec<ImageSample>) {
        let v1: Vec<ImageSample> = (0..n)
            .map(|i| sample(100 + i as u64, 1, i as u32, 0, h, w))
            .collect();
        let mut v2: Vec<ImageSample> = (0..n)
            .map(|i| sample(200 + i as u64, 2, i as u32, 0, h, w))
            .collect();
        v2.rotate_left(n / 2);
        (v1, v2)
    }

    // -----------------------------------------------------------------
    // Reparameterization
    // -----------------------------------------------------------------

    #[test]
    fn reparameterized_draws_recombine_exactly() {
        let mu = gaussian_vec(1, 5);
        let sigma: Vec<f64> = gaussian_vec(2, 5).iter().map(|v| v.abs() + 0.3).collect();
        let eps = gaussian_vec(3, 5);
        let lat = LatentVariable::from_stats(mu.clone(), sigma.clone(), eps.clone()).unwrap();
        for i in 0..5 {
            // Bitwise identity: the same expression the constructor uses.
            assert_eq!(lat.z[i], mu[i] + sigma[i] * eps[i]);
        }
        assert!(LatentVariable::from_stats(vec![0.0], vec![0.0], vec![0.0]).is_err());
        assert!(LatentVariable::from_stats(vec![0.0], vec![1.0, 1.0], vec![0.0]).is_err());
    }

    #[test]
    fn zero_noise_encodes_to_the_mean() {
        let net = CrossGan::new(&tiny_cfg()).unwrap();
        let img = sample(5, 1, 0, 0, 8, 8);
        let lat = vae_encode(&net, 1, &img, &[0.0, 0.0]).unwrap();
        assert_eq!(lat.z, lat.mu);
        // Wrong noise length and unknown view are rejected.
        assert!(vae_encode(&net, 1, &img, &[0.0]).is_err());
        assert!(vae_encode(&net, 3, &img, &[0.0, 0.0]).is_err());
        // Wrong image geometry is rejected.
        let bad = sample(6, 1, 0, 0, 16, 8);
        assert!(vae_encode(&net, 1, &bad, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn unit_gaussian_stats_pass_noise_through() {
        let eps = gaussian_vec(4, 6);
        let lat =
            LatentVariable::from_stats(vec![0.0; 6], vec![1.0; 6], eps.clone()).unwrap();
        assert_eq!(lat.z, eps);
    }

    #[test]
    fn encoded_draws_average_to_the_mean() {
        // Monte Carlo oracle: over many independent draws the sample mean
        // of z approaches mu at the usual 1/sqrt(n) rate.
        let net = CrossGan::new(&tiny_cfg()).unwrap();
        let img = sample(9, 2, 0, 0, 8, 8);
        let n = 100_000;
        let j = net.latent_dim();
        let mut mean = vec![0.0; j];
        let mut reference: Option<LatentVariable> = None;
        let mut r = stream(17, &[tag::NOISE]);
        for _ in 0..n {
            let eps: Vec<f64> = (0..j).map(|_| r.sample(StandardNormal)).collect();
            let lat = vae_encode(&net, 2, &img, &eps).unwrap();
            for (m, z) in mean.iter_mut().zip(&lat.z) {
                *m += z / n as f64;
            }
            if reference.is_none() {
                reference = Some(lat);
            }
        }
        let lat = reference.unwrap();
        for (i, m) in mean.iter().enumerate() {
            let tol = 3.0 * lat.sigma[i] / (n as f64).sqrt();
            assert!(
                (m - lat.mu[i]).abs() <= tol,
                "coordinate {i}: mean {m} vs mu {} (tol {tol})",
                lat.mu[i]
            );
        }
    }

    // -----------------------------------------------------------------
    // KL and reconstruction
    // -----------------------------------------------------------------

    #[test]
    fn kl_hand_values() {
        let prior = LatentVariable::from_stats(vec![0.0; 4], vec![1.0; 4], vec![0.0; 4]).unwrap();
        assert_eq!(vae_kl_loss(&prior).unwrap(), 0.0);
        let shifted = LatentVariable::from_stats(vec![1.0], vec![1.0], vec![0.0]).unwrap();
        assert_eq!(vae_kl_loss(&shifted).unwrap(), 0.5);
        // Degenerate sigma is rejected even when built by hand.
        let bad = LatentVariable {
            mu: vec![0.0],
            sigma: vec![0.0],
            z: vec![0.0],
            eps: vec![0.0],
        };
        assert!(vae_kl_loss(&bad).is_err());
    }

    #[test]
    fn kl_matches_monte_carlo() {
        // Estimate E_q[ln q(z) - ln p(z)] by sampling z = mu + sigma*eps;
        // the closed form must sit within 1e-2 of the estimate.
        let n = 100_000;
        for case in 0..3u64 {
            let mut r = stream(23, &[case]);
            let j = 1 + (case as usize % 2);
            let mu: Vec<f64> = (0..j).map(|_| r.gen::<f64>() * 2.0 - 1.0).collect();
            let sigma: Vec<f64> = (0..j).map(|_| 0.5 + 1.5 * r.gen::<f64>()).collect();
            let lat =
                LatentVariable::from_stats(mu.clone(), sigma.clone(), vec![0.0; j]).unwrap();
            let closed = vae_kl_loss(&lat).unwrap();
            let mut acc = 0.0;
            for _ in 0..n {
                for i in 0..j {
                    let e: f64 = r.sample(StandardNormal);
                    let z = mu[i] + sigma[i] * e;
                    // ln q - ln p with the shared Gaussian constant cancelled.
                    acc += -sigma[i].ln() - e * e / 2.0 + z * z / 2.0;
                }
            }
            let mc = acc / n as f64;
            assert!(
                (closed - mc).abs() < 1e-2,
                "case {case}: closed {closed} vs MC {mc}"
            );
        }
    }

    #[test]
    fn reconstruction_error_is_half_squared_distance() {
        let a = Tensor::zeros(&[3, 2, 2]);
        let b = Tensor::from_vec(&[3, 2, 2], vec![1.0; 12]);
        assert_eq!(reconstruction_error(&a, &b).unwrap(), 6.0);
        assert_eq!(reconstruction_error(&b, &b).unwrap(), 0.0);
        assert!(reconstruction_error(&a, &Tensor::zeros(&[3, 2, 1])).is_err());
    }

    #[test]
    fn coupled_vae_loss_composes() {
        let prior = LatentVariable::from_stats(vec![0.0], vec![1.0], vec![0.0]).unwrap();
        // Mean of per-view sums: at the prior the KL vanishes, so the
        // reconstruction terms pass straight through.
        let one = std::slice::from_ref(&prior);
        let got = coupled_vae_loss(one, one, &[2.5], &[0.75]).unwrap();
        assert_eq!(got, 3.25);
        let zero = coupled_vae_loss(one, one, &[0.0], &[0.0]).unwrap();
        assert_eq!(zero, 0.0);
        // Compositional oracle over m = 3: recompute per pair by hand.
        let lat = |seed: u64| {
            let mu = gaussian_vec(seed, 3);
            let sigma: Vec<f64> =
                gaussian_vec(seed + 50, 3).iter().map(|v| v.abs() + 0.4).collect();
            LatentVariable::from_stats(mu, sigma, vec![0.0; 3]).unwrap()
        };
        let l1: Vec<_> = (0..3).map(|i| lat(300 + i)).collect();
        let l2: Vec<_> = (0..3).map(|i| lat(400 + i)).collect();
        let r1 = [0.3, 1.0, 2.0];
        let r2 = [0.1, 0.2, 0.4];
        let got = coupled_vae_loss(&l1, &l2, &r1, &r2).unwrap();
        let mut want = 0.0;
        for k in 0..3 {
            want += vae_kl_loss(&l1[k]).unwrap()
                + r1[k]
                + vae_kl_loss(&l2[k]).unwrap()
                + r2[k];
        }
        want /= 3.0;
        assert!((got - want).abs() < 1e-12);
        assert!(coupled_vae_loss(&[], &[], &[], &[]).is_err());
        assert!(coupled_vae_loss(&l1, &l2, &r1, &[0.0]).is_err());
    }

    // -----------------------------------------------------------------
    // Alignment
    // -----------------------------------------------------------------

    #[test]
    fn alignment_starts_as_identity() {
        let net = CrossGan::new(&tiny_cfg()).unwrap();
        let z = vec![0.7, -1.3];
        assert_eq!(align(&net, &z).unwrap(), z);
        assert!(align(&net, &[1.0]).is_err());
    }

    #[test]
    fn alignment_affine_map_hand_cases() {
        let mut net = CrossGan::new(&tiny_cfg()).unwrap();
        let wid = net.store.find("align.w").unwrap();
        let bid = net.store.find("align.b").unwrap();
        // Zero matrix plus bias collapses every input onto the bias.
        net.store.set(wid, &[0.0; 4]);
        net.store.set(bid, &[0.25, -2.0]);
        assert_eq!(align(&net, &[9.0, -3.0]).unwrap(), vec![0.25, -2.0]);
        // Generic matrix: the Jacobian recovered by central differences
        // must equal the weight matrix itself.
        let w = [0.8, -0.3, 0.5, 1.2];
        net.store.set(wid, &w);
        let z = [0.4, -0.9];
        let h = 1e-6;
        for jcol in 0..2 {
            let mut zp = z.to_vec();
            let mut zm = z.to_vec();
            zp[jcol] += h;
            zm[jcol] -= h;
            let ap = align(&net, &zp).unwrap();
            let am = align(&net, &zm).unwrap();
            for i in 0..2 {
                let fd = (ap[i] - am[i]) / (2.0 * h);
                assert!(
                    (fd - w[i * 2 + jcol]).abs() < 1e-6,
                    "J[{i}][{jcol}] = {fd} vs {}",
                    w[i * 2 + jcol]
                );
            }
        }
    }

    #[test]
    fn alignment_loss_floor_and_hand_value() {
        let net = CrossGan::new(&tiny_cfg()).unwrap();
        // Exact matches with a zero floor cost nothing.
        let z = vec![0.3, -0.4];
        assert_eq!(alignment_loss(&net, &[(z.clone(), z.clone())], 0.0).unwrap(), 0.0);
        // A huge floor dominates any batch.
        let pairs = vec![(vec![5.0, 0.0], vec![0.0, 0.0]), (z.clone(), z.clone())];
        assert_eq!(alignment_loss(&net, &pairs, 1e6).unwrap(), 1e6);
        // Squared distances {1, 9} with floor 4: (4 + 9) / 2.
        let pairs = vec![
            (vec![1.0, 0.0], vec![0.0, 0.0]),
            (vec![3.0, 0.0], vec![0.0, 0.0]),
        ];
        assert_eq!(alignment_loss(&net, &pairs, 4.0).unwrap(), 6.5);
        // Floor property on seeded batches: the loss never dips below the
        // floor, and equals it exactly when every distance is inside.
        for case in 0..20u64 {
            let mut r = stream(31, &[case]);
            let delta = r.gen::<f64>() * 2.0;
            let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..4)
                .map(|_| {
                    let a: Vec<f64> = (0..2).map(|_| r.gen::<f64>() * 2.0 - 1.0).collect();
                    let b: Vec<f64> = (0..2).map(|_| r.gen::<f64>() * 2.0 - 1.0).collect();
                    (a, b)
                })
                .collect();
            let loss = alignment_loss(&net, &pairs, delta).unwrap();
            assert!(loss >= delta);
            let all_inside = pairs.iter().all(|(a, b)| {
                let d2: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
                d2 <= delta
            });
            assert_eq!(loss == delta, all_inside, "case {case}");
        }
        assert!(alignment_loss(&net, &[], 0.0).is_err());
        assert!(alignment_loss(&net, &[(z.clone(), z)], -1.0).is_err());
    }

    // -----------------------------------------------------------------
    // Adversarial value
    // -----------------------------------------------------------------

    #[test]
    fn adversarial_value_hand_scores() {
        let half = coupled_gan_loss_from_scores(&[0.5, 0.5], &[0.5, 0.5], &[0.5, 0.5], &[0.5, 0.5])
            .unwrap();
        assert!((half - 4.0 * 0.5f64.ln()).abs() < 1e-15);
        let got = coupled_gan_loss_from_scores(&[0.9], &[0.2], &[0.8], &[0.1]).unwrap();
        let want = 0.9f64.ln() + 0.8f64.ln() + 0.8f64.ln() + 0.9f64.ln();
        assert!((got - want).abs() < 1e-15);
        assert!(coupled_gan_loss_from_scores(&[], &[], &[], &[]).is_err());
        assert!(coupled_gan_loss_from_scores(&[0.5], &[0.5, 0.5], &[0.5], &[0.5]).is_err());
        assert!(coupled_gan_loss_from_scores(&[1.0], &[0.5], &[0.5], &[0.5]).is_err());
    }

    #[test]
    fn neutral_discriminator_scores_four_log_halves() {
        let mut net = CrossGan::new(&tiny_cfg()).unwrap();
        // Zeroing every discriminator parameter pins all logits at zero,
        // i.e. every score at exactly one half.
        let ids: Vec<ParamId> = net
            .store
            .iter()
            .filter(|(_, n, _)| n.starts_with("d."))
            .map(|(id, _, _)| id)
            .collect();
        for id in ids {
            let n = net.store.get(id).len();
            net.store.set(id, &vec![0.0; n]);
        }
        let b1 = vec![sample(40, 1, 0, 0, 8, 8), sample(41, 1, 1, 0, 8, 8)];
        let b2 = vec![sample(42, 2, 0, 0, 8, 8), sample(43, 2, 1, 0, 8, 8)];
        let lat = |seed| {
            LatentVariable::from_stats(gaussian_vec(seed, 2), vec![1.0, 1.0], vec![0.0, 0.0])
                .unwrap()
        };
        let l1 = vec![lat(1), lat(2)];
        let l2 = vec![lat(3), lat(4)];
        let got = coupled_gan_loss(&net, &b1, &b2, &l1, &l2).unwrap();
        assert!((got - 4.0 * 0.5f64.ln()).abs() < 1e-12);
        assert!(coupled_gan_loss(&net, &[], &[], &[], &[]).is_err());
        assert!(coupled_gan_loss(&net, &b1, &b2, &l1, &l2[..1]).is_err());
    }

    #[test]
    fn generated_image_matches_config_shape_and_range() {
        let cfg = tiny_cfg();
        let net = CrossGan::new(&cfg).unwrap();
        let img = decode(&net, 1, &[0.4, -1.1]).unwrap();
        assert_eq!(img.shape(), &[3, 8, 8]);
        assert!(img.data().iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(decode(&net, 1, &[0.4]).is_err());
        assert!(decode(&net, 5, &[0.4, 0.0]).is_err());
    }

    // -----------------------------------------------------------------
    // Joint objective
    // -----------------------------------------------------------------

    #[test]
    fn total_combines_components() {
        let net = CrossGan::new(&tiny_cfg()).unwrap();
        let b1 = vec![sample(50, 1, 0, 0, 8, 8), sample(51, 1, 1, 0, 8, 8)];
        let b2 = vec![sample(52, 2, 0, 0, 8, 8), sample(53, 2, 1, 0, 8, 8)];
        let parts = crossgan_total_loss(&net, &b1, &b2, 99).unwrap();
        assert_eq!(parts.total, parts.vae + parts.align + parts.gan);
        // Compositional oracle: rebuild each component from the public
        // single-purpose operations using the same noise draws.
        let j = net.latent_dim();
        let e1: Vec<Vec<f64>> = (0..2).map(|k| draw_eps(j, 99, 1, k as u64)).collect();
        let e2: Vec<Vec<f64>> = (0..2).map(|k| draw_eps(j, 99, 2, k as u64)).collect();
        let with = crossgan_total_loss_with_eps(&net, &b1, &b2, &e1, &e2).unwrap();
        assert_eq!(with.total, parts.total);
        let l1: Vec<LatentVariable> = (0..2)
            .map(|k| vae_encode(&net, 1, &b1[k], &e1[k]).unwrap())
            .collect();
        let l2: Vec<LatentVariable> = (0..2)
            .map(|k| vae_encode(&net, 2, &b2[k], &e2[k]).unwrap())
            .collect();
        let r1: Vec<f64> = (0..2)
            .map(|k| {
                reconstruction_error(&b1[k].pixels, &decode(&net, 1, &l1[k].z).unwrap()).unwrap()
            })
            .collect();
        let r2: Vec<f64> = (0..2)
            .map(|k| {
                reconstruction_error(&b2[k].pixels, &decode(&net, 2, &l2[k].z).unwrap()).unwrap()
            })
            .collect();
        let vae = coupled_vae_loss(&l1, &l2, &r1, &r2).unwrap();
        let pairs: Vec<(Vec<f64>, Vec<f64>)> =
            (0..2).map(|k| (l1[k].z.clone(), l2[k].z.clone())).collect();
        let al = alignment_loss(&net, &pairs, net.delta()).unwrap();
        let gan = coupled_gan_loss(&net, &b1, &b2, &l1, &l2).unwrap();
        assert!((parts.vae - vae).abs() < 1e-12);
        assert!((parts.align - al).abs() < 1e-12);
        assert!((parts.gan - gan).abs() < 1e-12);
    }

    #[test]
    fn matched_latents_with_zero_floor_drop_alignment() {
        let mut net = CrossGan::new(&tiny_cfg()).unwrap();
        net.set_delta(0.0).unwrap();
        // Mirror view 1's encoder into view 2, then feed the same image
        // and noise to both views: the latents coincide, the alignment
        // map is still the identity, so only that term vanishes.
        for l in ["l1", "l2"] {
            for p in ["w", "b"] {
                let src = net.store.find(&format!("enc.v1.{l}.{p}")).unwrap();
                let dst = net.store.find(&format!("enc.v2.{l}.{p}")).unwrap();
                let vals = net.store.get(src).to_vec();
                net.store.set(dst, &vals);
            }
        }
        let img = sample(60, 1, 0, 0, 8, 8);
        let eps = vec![gaussian_vec(61, 2)];
        let one = std::slice::from_ref(&img);
        let parts = crossgan_total_loss_with_eps(&net, one, one, &eps, &eps).unwrap();
        assert_eq!(parts.align, 0.0);
        assert_eq!(parts.total, parts.vae + parts.gan);
    }

    // -----------------------------------------------------------------
    // Gradient checks
    // -----------------------------------------------------------------

    #[test]
    fn total_gradients_match_finite_differences() {
        // Generic-point check on the full objective: through both
        // discriminators, decoders, the reparameterization, both
        // encoders, and the alignment map. A zero floor keeps the
        // alignment term smooth at the probe point.
        let cfg = tiny_cfg();
        let mut net = CrossGan::new(&cfg).unwrap();
        net.set_delta(0.0).unwrap();
        jitter_params(&mut net.store, 0.05, &mut stream(71, &[tag::INIT]));
        let b1 = vec![sample(72, 1, 0, 0, 8, 8), sample(73, 1, 1, 0, 8, 8)];
        let b2 = vec![sample(74, 2, 0, 0, 8, 8), sample(75, 2, 1, 0, 8, 8)];
        let e1 = vec![gaussian_vec(76, 2), gaussian_vec(77, 2)];
        let e2 = vec![gaussian_vec(78, 2), gaussian_vec(79, 2)];
        let mut analytic = Grads::zeros(&net.store);
        crossgan_total_loss_and_grads(&net, &b1, &b2, &e1, &e2, &mut analytic).unwrap();
        let base = net.clone();
        let mut probe = net.store.clone();
        let numeric = finite_diff_grads(&mut probe, 1e-5, |ps| {
            let mut m = base.clone();
            m.store = ps.clone();
            crossgan_total_loss_with_eps(&m, &b1, &b2, &e1, &e2).unwrap().total
        });
        let report = max_rel_error(&net.store, &analytic, &numeric);
        assert!(
            report.passes(1e-4),
            "worst {} at {}",
            report.worst_rel,
            report.worst_param
        );
        // Every part of the model must participate.
        let touched = |prefix: &str| {
            net.store
                .iter()
                .filter(|(_, n, _)| n.starts_with(prefix))
                .any(|(id, _, _)| analytic.get(id).iter().any(|&v| v != 0.0))
        };
        assert!(touched("enc."), "encoder gradients must be non-zero");
        assert!(touched("g."), "generator gradients must be non-zero");
        assert!(touched("d."), "discriminator gradients must be non-zero");
        assert!(touched("align."), "alignment gradients must be non-zero");
    }

    #[test]
    fn vae_gradients_match_finite_differences() {
        let cfg = tiny_cfg();
        let mut net = CrossGan::new(&cfg).unwrap();
        jitter_params(&mut net.store, 0.05, &mut stream(81, &[tag::INIT]));
        let b1 = vec![sample(82, 1, 0, 0, 8, 8)];
        let b2 = vec![sample(83, 2, 0, 0, 8, 8)];
        let e1 = vec![gaussian_vec(84, 2)];
        let e2 = vec![gaussian_vec(85, 2)];
        let mut analytic = Grads::zeros(&net.store);
        coupled_vae_loss_and_grads(&net, &b1, &b2, &e1, &e2, &mut analytic).unwrap();
        let base = net.clone();
        let mut probe = net.store.clone();
        let numeric = finite_diff_grads(&mut probe, 1e-5, |ps| {
            let mut m = base.clone();
            m.store = ps.clone();
            let l1 = vae_encode(&m, 1, &b1[0], &e1[0]).unwrap();
            let l2 = vae_encode(&m, 2, &b2[0], &e2[0]).unwrap();
            let r1 = reconstruction_error(&b1[0].pixels, &decode(&m, 1, &l1.z).unwrap()).unwrap();
            let r2 = reconstruction_error(&b2[0].pixels, &decode(&m, 2, &l2.z).unwrap()).unwrap();
            coupled_vae_loss(&[l1], &[l2], &[r1], &[r2]).unwrap()
        });
        let report = max_rel_error(&net.store, &analytic, &numeric);
        assert!(
            report.passes(1e-4),
            "worst {} at {}",
            report.worst_rel,
            report.worst_param
        );
        // The VAE term must not touch discriminators or the alignment map.
        for (id, name, _) in net.store.iter() {
            if name.starts_with("d.") || name.starts_with("align.") {
                assert!(analytic.get(id).iter().all(|&v| v == 0.0), "{name} touched");
            }
        }
    }

    #[test]
    fn adversarial_gradients_match_finite_differences() {
        // Latents enter as fixed inputs here, so encoder parameters must
        // see an exactly-zero gradient while G and D get checked.
        let cfg = tiny_cfg();
        let mut net = CrossGan::new(&cfg).unwrap();
        jitter_params(&mut net.store, 0.05, &mut stream(91, &[tag::INIT]));
        let b1 = vec![sample(92, 1, 0, 0, 8, 8)];
        let b2 = vec![sample(93, 2, 0, 0, 8, 8)];
        let l1 = vec![LatentVariable::from_stats(
            gaussian_vec(94, 2),
            vec![1.0, 1.0],
            vec![0.0, 0.0],
        )
        .unwrap()];
        let l2 = vec![LatentVariable::from_stats(
            gaussian_vec(95, 2),
            vec![1.0, 1.0],
            vec![0.0, 0.0],
        )
        .unwrap()];
        let mut analytic = Grads::zeros(&net.store);
        coupled_gan_loss_and_grads(&net, &b1, &b2, &l1, &l2, &mut analytic).unwrap();
        let base = net.clone();
        let mut probe = net.store.clone();
        let numeric = finite_diff_grads(&mut probe, 1e-5, |ps| {
            let mut m = base.clone();
            m.store = ps.clone();
            coupled_gan_loss(&m, &b1, &b2, &l1, &l2).unwrap()
        });
        let report = max_rel_error(&net.store, &analytic, &numeric);
        assert!(
            report.passes(1e-4),
            "worst {} at {}",
            report.worst_rel,
            report.worst_param
        );
        for (id, name, _) in net.store.iter() {
            if name.starts_with("enc.") {
                assert!(analytic.get(id).iter().all(|&v| v == 0.0), "{name} touched");
            }
        }
    }

    #[test]
    fn alignment_gradients_match_finite_differences() {
        let cfg = tiny_cfg();
        let mut net = CrossGan::new(&cfg).unwrap();
        jitter_params(&mut net.store, 0.05, &mut stream(96, &[tag::INIT]));
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..3)
            .map(|i| (gaussian_vec(500 + i, 2), gaussian_vec(600 + i, 2)))
            .collect();
        let mut analytic = Grads::zeros(&net.store);
        alignment_loss_and_grads(&net, &pairs, 0.0, &mut analytic).unwrap();
        let base = net.clone();
        let mut probe = net.store.clone();
        let numeric = finite_diff_grads(&mut probe, 1e-5, |ps| {
            let mut m = base.clone();
            m.store = ps.clone();
            alignment_loss(&m, &pairs, 0.0).unwrap()
        });
        let report = max_rel_error(&net.store, &analytic, &numeric);
        assert!(
            report.passes(1e-4),
            "worst {} at {}",
            report.worst_rel,
            report.worst_param
        );
        // Below the floor the gradient vanishes entirely.
        let mut flat = Grads::zeros(&net.store);
        let v = alignment_loss_and_grads(&net, &pairs, 1e9, &mut flat).unwrap();
        assert_eq!(v, 1e9);
        assert_eq!(flat.l2_norm(), 0.0);
    }

    // -----------------------------------------------------------------
    // Pairing and training
    // -----------------------------------------------------------------

    #[test]
    fn label_pairing_matches_identities_and_shuffle_permutes() {
        let (v1, v2) = tiny_corpus(6, 8, 8);
        let pairs = build_pairs(&v1, &v2, PairingMode::LabelPaired, 0).unwrap();
        for (i1, i2) in &pairs {
            assert_eq!(v1[*i1].person_id, v2[*i2].person_id);
            assert_eq!(v1[*i1].pose_id, v2[*i2].pose_id);
        }
        // Shuffled mode is a seeded permutation: deterministic, bijective.
        let s1 = build_pairs(&v1, &v2, PairingMode::Shuffled, 5).unwrap();
        let s2 = build_pairs(&v1, &v2, PairingMode::Shuffled, 5).unwrap();
        assert_eq!(s1, s2);
        let mut seen: Vec<usize> = s1.iter().map(|&(_, b)| b).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..6).collect::<Vec<_>>());
        // Key mismatches are rejected in label mode.
        let mut odd = v2.clone();
        odd[0].person_id = Some(99);
        assert!(build_pairs(&v1, &odd, PairingMode::LabelPaired, 0).is_err());
        assert!(build_pairs(&v1, &v2[..5], PairingMode::Shuffled, 0).is_err());
        assert!(build_pairs(&[], &[], PairingMode::Shuffled, 0).is_err());
    }

    #[test]
    fn training_is_deterministic_and_respects_zero_lr() {
        let cfg = tiny_cfg();
        let (v1, v2) = tiny_corpus(6, 8, 8);
        let tcfg = CrossganTrainConfig {
            epochs: 2,
            batch_size: 3,
            optim: OptimConfig::Sgd { lr: 1e-3 },
            pairing: PairingMode::LabelPaired,
            seed: 3,
        };
        let mut a = CrossGan::new(&cfg).unwrap();
        let mut b = CrossGan::new(&cfg).unwrap();
        let log_a = train_crossgan(&mut a, &v1, &v2, &tcfg).unwrap();
        let log_b = train_crossgan(&mut b, &v1, &v2, &tcfg).unwrap();
        assert_eq!(log_a.len(), 2);
        for (ra, rb) in log_a.iter().zip(&log_b) {
            assert_eq!(ra.total, rb.total);
            assert_eq!(ra.total, ra.vae + ra.align + ra.gan);
        }
        for (id, _, _) in a.store.iter() {
            assert_eq!(a.store.get(id), b.store.get(id));
        }
        // A zero learning rate leaves every parameter bitwise unchanged.
        let mut frozen = CrossGan::new(&cfg).unwrap();
        let before = frozen.store.clone();
        let zero = CrossganTrainConfig {
            optim: OptimConfig::Sgd { lr: 0.0 },
            epochs: 1,
            ..tcfg
        };
        train_crossgan(&mut frozen, &v1, &v2, &zero).unwrap();
        for (id, _, _) in before.iter() {
            assert_eq!(frozen.store.get(id), before.get(id));
        }
        // Mismatched view sizes and empty data are rejected.
        let mut net = CrossGan::new(&cfg).unwrap();
        assert!(train_crossgan(&mut net, &v1, &v2[..5], &tcfg).is_err());
        assert!(train_crossgan(&mut net, &[], &[], &tcfg).is_err());
    }

    #[test]
    fn tied_layers_stay_equal_through_training() {
        let cfg = tiny_cfg();
        let (v1, v2) = tiny_corpus(6, 8, 8);
        let tcfg = CrossganTrainConfig {
            epochs: 3,
            batch_size: 3,
            optim: OptimConfig::adam(1e-3),
            pairing: PairingMode::LabelPaired,
            seed: 5,
        };
        let mut net = CrossGan::new(&cfg).unwrap();
        let init_l1 = net.gen_layer_params(1, 1).unwrap();
        train_crossgan(&mut net, &v1, &v2, &tcfg).unwrap();
        // Shared layers agree exactly between views — and actually moved.
        for layer in 1..=GEN_TIED {
            assert_eq!(
                net.gen_layer_params(1, layer).unwrap(),
                net.gen_layer_params(2, layer).unwrap()
            );
        }
        assert_ne!(net.gen_layer_params(1, 1).unwrap(), init_l1);
        assert_eq!(
            net.disc_layer_params(1, DISC_LAYERS).unwrap(),
            net.disc_layer_params(2, DISC_LAYERS).unwrap()
        );
        // Untied layers genuinely diverge across views.
        assert_ne!(
            net.gen_layer_params(1, GEN_LAYERS).unwrap(),
            net.gen_layer_params(2, GEN_LAYERS).unwrap()
        );
        assert_ne!(
            net.disc_layer_params(1, 1).unwrap(),
            net.disc_layer_params(2, 1).unwrap()
        );
    }

    #[test]
    fn resumed_training_matches_uninterrupted_run() {
        let cfg = tiny_cfg();
        let (v1, v2) = tiny_corpus(4, 8, 8);
        let tcfg = CrossganTrainConfig {
            epochs: 4,
            batch_size: 2,
            optim: OptimConfig::adam(1e-3),
            pairing: PairingMode::LabelPaired,
            seed: 9,
        };
        let mut straight = CrossGan::new(&cfg).unwrap();
        let log_s = train_crossgan(&mut straight, &v1, &v2, &tcfg).unwrap();
        let mut paused = CrossGan::new(&cfg).unwrap();
        let mut state = CrossganTrainState::new(&paused, &tcfg);
        let mut log_p = train_crossgan_epochs(&mut paused, &v1, &v2, &tcfg, &mut state, 2).unwrap();
        log_p.extend(train_crossgan_epochs(&mut paused, &v1, &v2, &tcfg, &mut state, 2).unwrap());
        assert_eq!(log_s.len(), log_p.len());
        for (a, b) in log_s.iter().zip(&log_p) {
            assert_eq!(a.total, b.total);
        }
        for (id, _, _) in straight.store.iter() {
            assert_eq!(straight.store.get(id), paused.store.get(id));
        }
    }

    // -----------------------------------------------------------------
    // Embedding
    // -----------------------------------------------------------------

    #[test]
    fn embedding_is_deterministic_aligned_and_sized() {
        let net = CrossGan::new(&tiny_cfg()).unwrap();
        let img1 = sample(70, 1, 0, 0, 8, 8);
        let img2 = sample(71, 2, 0, 0, 8, 8);
        let a = embed(&net, &img1, 1).unwrap();
        let b = embed(&net, &img1, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), net.latent_dim());
        // View 1 is the raw posterior mean; view 2 runs through the map.
        let mu1 = vae_encode(&net, 1, &img1, &[0.0, 0.0]).unwrap().mu;
        assert_eq!(a, mu1);
        let mu2 = vae_encode(&net, 2, &img2, &[0.0, 0.0]).unwrap().mu;
        assert_eq!(embed(&net, &img2, 2).unwrap(), align(&net, &mu2).unwrap());
        assert!(embed(&net, &img1, 0).is_err());
    }

    #[test]
    fn embeddings_csv_is_fixed_point() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.csv");
        let rows = vec![
            (0usize, 1u8, vec![0.5, -1.25]),
            (1, 2, vec![0.125, 2.0]),
        ];
        write_embeddings_csv(&rows, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "sample_id,view,v_1,v_2");
        assert_eq!(lines[1], "0,1,0.500000,-1.250000");
        assert_eq!(lines[2], "1,2,0.125000,2.000000");
        assert_eq!(lines.len(), 3);
        let bad = vec![(0usize, 1u8, vec![0.0]), (1, 1, vec![0.0, 0.0])];
        assert!(write_embeddings_csv(&bad, &path).is_err());
        assert!(write_embeddings_csv(&[], &path).is_err());
    }
}
