//! Coupled conditional pose-transfer GAN.
//!
//! Two generator/discriminator branches — one per camera view — learn to
//! repaint a person in a requested pose. Each generator consumes a rendered
//! skeleton (the pose to produce) and an appearance image (the person to
//! keep), encodes both with separate convolutional encoders, and decodes
//! the concatenated bottleneck codes back to an image. The branches are
//! *coupled*: the deepest appearance-encoder layers, the earliest decoder
//! layers, and the deepest discriminator layers can be tied so both views
//! share one set of weights wherever semantics stop being view-specific.
//!
//! # Objective
//!
//! Per view, the adversarial value is the conditional GAN log-likelihood
//! `E[log D(ω, I, y)] + E[log(1 − D(ω, I, G(ω, I, z)))]`, which the
//! discriminator ascends and the generator descends, plus an L1 term
//! `ζ · E[‖y − G(ω, I, z)‖₁]` that anchors generated images to their
//! reconstruction targets. The total couples both views by summation.
//! Noise `z` enters as dropout on the decoder's hidden activations; it
//! stays active at generation time so synthesis is stochastic by design.
//!
//! # Training and augmentation
//!
//! [`train_cpgnet`] alternates a discriminator phase and a generator phase
//! per mini-batch, on self-reconstruction triples (each image doubles as
//! its own appearance source and target, paired with its rasterized
//! canonical pose). [`augment_dataset`] then drives trained generators
//! with a standalone pose pool to synthesize unseen (person, pose)
//! combinations, growing both views while inheriting person identity from
//! the appearance source and pose identity from the pool.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::layers::{
    concat_channels, dropout_mask, leaky_relu, leaky_relu_bwd, log_one_minus_sigmoid,
    log_sigmoid, relu, relu_bwd, sigmoid, sigmoid_bwd, split_channels_grad, Conv2d,
    ConvTranspose2d, DropoutMask,
};
use crate::nn::optim::{OptimConfig, Optimizer};
use crate::nn::params::{Grads, ParamId, ParamStore};
use crate::nn::tensor::Tensor;
use crate::par::map_indexed;
use crate::rng::{derive_key, stream, tag};
use crate::skeleton::SkeletonSample;
use crate::synthdata::{rasterize_skeleton, CrossViewDataset, ImageSample, KeypointSet, Origin};

/// Encoder depth of each generator branch (skeleton and appearance alike).
pub const GEN_ENC_LAYERS: usize = 4;
/// Decoder depth of each generator branch.
pub const GEN_DEC_LAYERS: usize = 4;
/// Discriminator depth (three strided stages plus the scoring head).
pub const DISC_LAYERS: usize = 4;

/// Negative-side slope of the discriminator's leaky ReLU.
const LRELU_SLOPE: f64 = 0.2;

/// Which encoder feeds skip connections into the decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SkipMode {
    /// Skips come from the appearance encoder (texture detail flows
    /// around the bottleneck; pose must still route through it).
    Appearance,
    /// Skips come from the skeleton encoder (spatial pose detail flows
    /// around the bottleneck; appearance must route through it).
    Skeleton,
    /// No skip connections; the bottleneck carries everything.
    None,
}

/// How many layers each branch pair shares, counted by the tying rule.
///
/// `enc` ties the *last* layers of the appearance encoders (the skeleton
/// encoders are never tied), `dec` ties the *first* layers of the
/// decoders, and `disc` ties the *last* layers of the discriminators.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SharingSpec {
    pub enc: usize,
    pub dec: usize,
    pub disc: usize,
}

impl SharingSpec {
    /// Shorthand constructor in `(enc, dec, disc)` order.
    pub fn new(enc: usize, dec: usize, disc: usize) -> Self {
        SharingSpec { enc, dec, disc }
    }

    /// Check every count against its branch depth.
    pub fn validate(&self) -> Result<()> {
        if self.enc > GEN_ENC_LAYERS || self.dec > GEN_DEC_LAYERS || self.disc > DISC_LAYERS {
            return Err(Error::invalid(format!(
                "sharing counts ({}, {}, {}) exceed layer counts ({GEN_ENC_LAYERS}, {GEN_DEC_LAYERS}, {DISC_LAYERS})",
                self.enc, self.dec, self.disc
            )));
        }
        Ok(())
    }
}

/// Architecture and initialization settings for [`CpgNet`].
#[derive(Clone, Debug)]
pub struct CpgConfig {
    /// Image height; must be a positive multiple of 8.
    pub image_h: usize,
    /// Image width; must be a positive multiple of 8.
    pub image_w: usize,
    /// Encoder channel widths after each strided stage.
    pub enc_channels: [usize; 3],
    /// Channels of each encoder's 1×1 bottleneck code.
    pub bottleneck: usize,
    /// Discriminator channel widths after each strided stage.
    pub disc_channels: [usize; 3],
    /// Cross-view weight tying.
    pub sharing: SharingSpec,
    /// Skip-connection source.
    pub skip: SkipMode,
    /// Decoder dropout probability (the generator's noise source).
    pub dropout: f64,
    /// Seed for weight initialization.
    pub seed: u64,
}

impl Default for CpgConfig {
    fn default() -> Self {
        CpgConfig {
            image_h: 32,
            image_w: 16,
            enc_channels: [8, 16, 32],
            bottleneck: 64,
            disc_channels: [8, 16, 32],
            sharing: SharingSpec::new(4, 4, 2),
            skip: SkipMode::Appearance,
            dropout: 0.5,
            seed: 7,
        }
    }
}

impl CpgConfig {
    /// Check sizes, channel counts, dropout range, and sharing counts.
    pub fn validate(&self) -> Result<()> {
        if self.image_h == 0 || self.image_w == 0 || self.image_h % 8 != 0 || self.image_w % 8 != 0
        {
            return Err(Error::invalid(format!(
                "image size {}×{} must be positive multiples of 8 (three strided halvings)",
                self.image_h, self.image_w
            )));
        }
        if self.enc_channels.contains(&0) || self.disc_channels.contains(&0) || self.bottleneck == 0
        {
            return Err(Error::invalid("channel widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        self.sharing.validate()
    }
}

/// Channel chain of one encoder: input RGB through to the bottleneck.
fn enc_chain(cfg: &CpgConfig) -> [usize; GEN_ENC_LAYERS + 1] {
    let [a, b, c] = cfg.enc_channels;
    [3, a, b, c, cfg.bottleneck]
}

/// Per-layer decoder `(input, output)` channel counts.
///
/// Inputs grow by the skip source's width wherever a skip concatenates.
fn dec_in_out(cfg: &CpgConfig) -> ([usize; GEN_DEC_LAYERS], [usize; GEN_DEC_LAYERS]) {
    let [a, b, c] = cfg.enc_channels;
    let s = |ch: usize| if cfg.skip == SkipMode::None { 0 } else { ch };
    let out = [c, b, a, 3];
    let inp = [2 * cfg.bottleneck, c + s(c), b + s(b), a + s(a)];
    (inp, out)
}

/// Channel chain of one discriminator: ⟨skeleton, appearance, candidate⟩
/// stack through to the single score logit.
fn disc_chain(cfg: &CpgConfig) -> [usize; DISC_LAYERS + 1] {
    let [a, b, c] = cfg.disc_channels;
    [9, a, b, c, 1]
}

/// One view's generator: two encoders and a decoder.
#[derive(Clone, Debug)]
struct GenBranch {
    /// Skeleton encoder (never tied across views).
    sk: Vec<Conv2d>,
    /// Appearance encoder (its last `sharing.enc` layers may be tied).
    ap: Vec<Conv2d>,
    /// Decoder (its first `sharing.dec` layers may be tied).
    de: Vec<ConvTranspose2d>,
}

/// One view's discriminator (its last `sharing.disc` layers may be tied).
#[derive(Clone, Debug)]
struct DiscBranch {
    convs: Vec<Conv2d>,
}

/// The coupled two-branch network. Tied layers are one parameter tensor
/// registered once under a `shared` name and referenced by both branches,
/// so equality across views holds by construction, not by synchronization.
#[derive(Clone, Debug)]
pub struct CpgNet {
    /// Every parameter of both branches; names are prefixed `g.` / `d.`
    /// and scoped `v1` / `v2` / `shared`.
    pub store: ParamStore,
    cfg: CpgConfig,
    g: [GenBranch; 2],
    d: [DiscBranch; 2],
}

/// Map a 1-based view id onto a branch index.
fn view_index(view: u8) -> Result<usize> {
    match view {
        1 => Ok(0),
        2 => Ok(1),
        other => Err(Error::invalid(format!("view must be 1 or 2, got {other}"))),
    }
}

fn build_gen(
    store: &mut ParamStore,
    rng: &mut impl Rng,
    cfg: &CpgConfig,
    v: u8,
    first: Option<&GenBranch>,
) -> GenBranch {
    let chain = enc_chain(cfg);
    let head_kernel = (cfg.image_h / 8, cfg.image_w / 8);
    let mut sk = Vec::with_capacity(GEN_ENC_LAYERS);
    let mut ap = Vec::with_capacity(GEN_ENC_LAYERS);
    for k in 0..GEN_ENC_LAYERS {
        let (kern, stride, pad) = if k + 1 == GEN_ENC_LAYERS {
            (head_kernel, 1, 0)
        } else {
            ((5, 5), 2, 2)
        };
        sk.push(Conv2d::new(
            store,
            &format!("g.v{v}.sk.l{}", k + 1),
            chain[k],
            chain[k + 1],
            kern,
            stride,
            pad,
            rng,
        ));
        let tied = k >= GEN_ENC_LAYERS - cfg.sharing.enc;
        ap.push(match (tied, first) {
            (true, Some(b1)) => b1.ap[k].clone(),
            _ => {
                let scope = if tied { "shared".to_string() } else { format!("v{v}") };
                Conv2d::new(
                    store,
                    &format!("g.{scope}.ap.l{}", k + 1),
                    chain[k],
                    chain[k + 1],
                    kern,
                    stride,
                    pad,
                    rng,
                )
            }
        });
    }
    let (d_in, d_out) = dec_in_out(cfg);
    let mut de = Vec::with_capacity(GEN_DEC_LAYERS);
    for k in 0..GEN_DEC_LAYERS {
        let (kern, stride, pad) = if k == 0 { (head_kernel, 1, 0) } else { ((4, 4), 2, 1) };
        let tied = k < cfg.sharing.dec;
        de.push(match (tied, first) {
            (true, Some(b1)) => b1.de[k].clone(),
            _ => {
                let scope = if tied { "shared".to_string() } else { format!("v{v}") };
                ConvTranspose2d::new(
                    store,
                    &format!("g.{scope}.de.l{}", k + 1),
                    d_in[k],
                    d_out[k],
                    kern,
                    stride,
                    pad,
                    rng,
                )
            }
        });
    }
    GenBranch { sk, ap, de }
}

fn build_disc(
    store: &mut ParamStore,
    rng: &mut impl Rng,
    cfg: &CpgConfig,
    v: u8,
    first: Option<&DiscBranch>,
) -> DiscBranch {
    let chain = disc_chain(cfg);
    let head_kernel = (cfg.image_h / 8, cfg.image_w / 8);
    let mut convs = Vec::with_capacity(DISC_LAYERS);
    for k in 0..DISC_LAYERS {
        let (kern, stride, pad) = if k + 1 == DISC_LAYERS {
            (head_kernel, 1, 0)
        } else {
            ((5, 5), 2, 2)
        };
        let tied = k >= DISC_LAYERS - cfg.sharing.disc;
        convs.push(match (tied, first) {
            (true, Some(b1)) => b1.convs[k].clone(),
            _ => {
                let scope = if tied { "shared".to_string() } else { format!("v{v}") };
                Conv2d::new(
                    store,
                    &format!("d.{scope}.l{}", k + 1),
                    chain[k],
                    chain[k + 1],
                    kern,
                    stride,
                    pad,
                    rng,
                )
            }
        });
    }
    DiscBranch { convs }
}

/// Names one layer of one branch, 1-based within its chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerRef {
    SkeletonEnc(usize),
    AppearanceEnc(usize),
    Decoder(usize),
    Disc(usize),
}

impl CpgNet {
    /// Build both branches with deterministic initialization from
    /// `cfg.seed`; tied layers register once and are referenced twice.
    pub fn new(cfg: &CpgConfig) -> Result<CpgNet> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = stream(cfg.seed, &[tag::INIT]);
        let g1 = build_gen(&mut store, &mut rng, cfg, 1, None);
        let g2 = build_gen(&mut store, &mut rng, cfg, 2, Some(&g1));
        let d1 = build_disc(&mut store, &mut rng, cfg, 1, None);
        let d2 = build_disc(&mut store, &mut rng, cfg, 2, Some(&d1));
        Ok(CpgNet {
            store,
            cfg: cfg.clone(),
            g: [g1, g2],
            d: [d1, d2],
        })
    }

    /// The configuration this network was built with.
    pub fn config(&self) -> &CpgConfig {
        &self.cfg
    }

    /// Rebuild with different tying, carrying every weight over by name.
    ///
    /// Newly tied layers adopt branch 1's weights; newly untied branches
    /// both start from the former shared weights. Other layers copy over
    /// unchanged, so re-tying never re-initializes anything.
    pub fn retie(&self, sharing: SharingSpec) -> Result<CpgNet> {
        let mut cfg = self.cfg.clone();
        cfg.sharing = sharing;
        let mut next = CpgNet::new(&cfg)?;
        let targets: Vec<(ParamId, String)> = next
            .store
            .iter()
            .map(|(id, name, _)| (id, name.to_string()))
            .collect();
        for (id, name) in targets {
            let value = self.param_by_name_with_fallback(&name)?;
            next.store.set(id, &value);
        }
        Ok(next)
    }

    /// Fetch a parameter by name, falling back across tying scopes:
    /// `shared` sources from branch 1 and branches source from `shared`.
    fn param_by_name_with_fallback(&self, name: &str) -> Result<Vec<f64>> {
        if let Some(id) = self.store.find(name) {
            return Ok(self.store.get(id).to_vec());
        }
        let alt = if name.contains(".shared.") {
            name.replace(".shared.", ".v1.")
        } else if name.contains(".v1.") {
            name.replace(".v1.", ".shared.")
        } else if name.contains(".v2.") {
            name.replace(".v2.", ".shared.")
        } else {
            return Err(Error::TieMismatch(format!(
                "parameter `{name}` has no tying scope"
            )));
        };
        match self.store.find(&alt) {
            Some(id) => Ok(self.store.get(id).to_vec()),
            None => Err(Error::TieMismatch(format!(
                "no source parameter for `{name}` (tried `{alt}`)"
            ))),
        }
    }

    /// Weight and bias ids of one layer (tied layers report equal ids).
    pub fn layer_param_ids(&self, view: u8, layer: LayerRef) -> Result<(ParamId, ParamId)> {
        let vi = view_index(view)?;
        fn idx(i: usize, n: usize, what: &str) -> Result<usize> {
            if i == 0 || i > n {
                return Err(Error::invalid(format!(
                    "{what} layer {i} outside 1..={n}"
                )));
            }
            Ok(i - 1)
        }
        Ok(match layer {
            LayerRef::SkeletonEnc(i) => {
                let c = &self.g[vi].sk[idx(i, GEN_ENC_LAYERS, "skeleton encoder")?];
                (c.weight_id(), c.bias_id())
            }
            LayerRef::AppearanceEnc(i) => {
                let c = &self.g[vi].ap[idx(i, GEN_ENC_LAYERS, "appearance encoder")?];
                (c.weight_id(), c.bias_id())
            }
            LayerRef::Decoder(i) => {
                let c = &self.g[vi].de[idx(i, GEN_DEC_LAYERS, "decoder")?];
                (c.weight_id(), c.bias_id())
            }
            LayerRef::Disc(i) => {
                let c = &self.d[vi].convs[idx(i, DISC_LAYERS, "discriminator")?];
                (c.weight_id(), c.bias_id())
            }
        })
    }

    /// One layer's weights and bias as a flat value vector.
    pub fn branch_layer_params(&self, view: u8, layer: LayerRef) -> Result<Vec<f64>> {
        let (w, b) = self.layer_param_ids(view, layer)?;
        let mut out = self.store.get(w).to_vec();
        out.extend_from_slice(self.store.get(b));
        Ok(out)
    }

    /// Error unless `t` is a `[3, h, w]` image of the configured size.
    fn check_image(&self, t: &Tensor, what: &str) -> Result<()> {
        if t.shape() != [3, self.cfg.image_h, self.cfg.image_w] {
            return Err(Error::ShapeMismatch(format!(
                "{what} must be [3, {}, {}], got {:?}",
                self.cfg.image_h,
                self.cfg.image_w,
                t.shape()
            )));
        }
        Ok(())
    }

    /// Validate every triple in a batch against the configured size.
    fn check_triples(&self, batch: &[CpgTriple]) -> Result<()> {
        for (i, t) in batch.iter().enumerate() {
            self.check_image(&t.skeleton, &format!("triple {i} skeleton raster"))?;
            self.check_image(&t.appearance, &format!("triple {i} appearance image"))?;
            self.check_image(&t.target, &format!("triple {i} target image"))?;
        }
        Ok(())
    }

    /// Decoder output channels per layer.
    fn dec_out_channels(&self) -> [usize; GEN_DEC_LAYERS] {
        dec_in_out(&self.cfg).1
    }

    /// Draw the decoder dropout masks for one sample of one view.
    fn sample_masks(&self, view: u8, noise_seed: u64, idx: u64) -> [DropoutMask; 3] {
        let (h, w) = (self.cfg.image_h, self.cfg.image_w);
        let out = self.dec_out_channels();
        let sizes = [
            out[0] * (h / 8) * (w / 8),
            out[1] * (h / 4) * (w / 4),
            out[2] * (h / 2) * (w / 2),
        ];
        let mut rng = stream(noise_seed, &[tag::DROPOUT, view as u64, idx]);
        sizes.map(|n| dropout_mask(n, self.cfg.dropout, &mut rng))
    }

    /// Joint pose+appearance code `ξ = ⟨z_pose, z_appearance⟩` of shape
    /// `[2 · bottleneck, 1, 1]`.
    pub fn encode_pair(
        &self,
        view: u8,
        skeleton: &SkeletonSample,
        appearance: &ImageSample,
    ) -> Result<Tensor> {
        let vi = view_index(view)?;
        self.check_image(&skeleton.rendered, "skeleton raster")?;
        self.check_image(&appearance.pixels, "appearance image")?;
        let b = &self.g[vi];
        let (_, sk_act) = enc_forward(&b.sk, &self.store, &skeleton.rendered);
        let (_, ap_act) = enc_forward(&b.ap, &self.store, &appearance.pixels);
        Ok(concat_channels(&[
            &sk_act[GEN_ENC_LAYERS - 1],
            &ap_act[GEN_ENC_LAYERS - 1],
        ]))
    }

    /// Synthesize `appearance`'s person in `skeleton`'s pose.
    ///
    /// Dropout noise stays active and is drawn from `noise_seed`, so equal
    /// seeds reproduce the image exactly and different seeds vary it. The
    /// result inherits the person id and records the driving pose's
    /// keypoints; its pose id is left unset — pool bookkeeping
    /// ([`augment_dataset`]) assigns ids in the extended namespace.
    pub fn generate(
        &self,
        view: u8,
        skeleton: &SkeletonSample,
        appearance: &ImageSample,
        noise_seed: u64,
    ) -> Result<ImageSample> {
        let vi = view_index(view)?;
        self.check_image(&skeleton.rendered, "skeleton raster")?;
        self.check_image(&appearance.pixels, "appearance image")?;
        let masks = self.sample_masks(view, noise_seed, 0);
        let tr = self.gen_forward(&self.store, vi, &skeleton.rendered, &appearance.pixels, &masks);
        Ok(ImageSample {
            pixels: tr.out,
            view_id: view,
            person_id: appearance.person_id,
            pose_id: None,
            origin: Origin::Synthesized,
            keypoints: Some(skeleton.keypoints.clone()),
        })
    }

    /// Probability that `candidate` is a real image of `appearance`'s
    /// person in `skeleton`'s pose, under this view's discriminator.
    pub fn discriminate(
        &self,
        view: u8,
        skeleton: &SkeletonSample,
        appearance: &ImageSample,
        candidate: &Tensor,
    ) -> Result<f64> {
        let vi = view_index(view)?;
        self.check_image(&skeleton.rendered, "skeleton raster")?;
        self.check_image(&appearance.pixels, "appearance image")?;
        self.check_image(candidate, "candidate image")?;
        let x9 = concat_channels(&[&skeleton.rendered, &appearance.pixels, candidate]);
        let tr = disc_forward(&self.d[vi], &self.store, &x9);
        Ok(sigmoid_scalar(tr.logit))
    }

    /// Full generator pass with cached activations for the backward pass.
    fn gen_forward(
        &self,
        ps: &ParamStore,
        vi: usize,
        sk_px: &Tensor,
        ap_px: &Tensor,
        masks: &[DropoutMask; 3],
    ) -> GenTrace {
        let b = &self.g[vi];
        let (sk_pre, sk_act) = enc_forward(&b.sk, ps, sk_px);
        let (ap_pre, ap_act) = enc_forward(&b.ap, ps, ap_px);
        let skip_src: Option<&[Tensor]> = match self.cfg.skip {
            SkipMode::Appearance => Some(&ap_act),
            SkipMode::Skeleton => Some(&sk_act),
            SkipMode::None => None,
        };
        let mut de_in = Vec::with_capacity(GEN_DEC_LAYERS);
        let mut de_pre = Vec::with_capacity(GEN_DEC_LAYERS);
        let mut x = concat_channels(&[
            &sk_act[GEN_ENC_LAYERS - 1],
            &ap_act[GEN_ENC_LAYERS - 1],
        ]);
        for k in 0..GEN_DEC_LAYERS - 1 {
            let pre = b.de[k].forward(ps, &x);
            let dropped = masks[k].apply(&relu(&pre));
            let next = match skip_src {
                Some(acts) => {
                    concat_channels(&[&dropped, &acts[GEN_ENC_LAYERS - 2 - k]])
                }
                None => dropped,
            };
            de_in.push(std::mem::replace(&mut x, next));
            de_pre.push(pre);
        }
        let pre = b.de[GEN_DEC_LAYERS - 1].forward(ps, &x);
        let out = sigmoid(&pre);
        de_in.push(x);
        de_pre.push(pre);
        GenTrace {
            sk_pre,
            sk_act,
            ap_pre,
            ap_act,
            de_in,
            de_pre,
            out,
        }
    }

    /// Backpropagate `d_out` through one generator branch, accumulating
    /// parameter gradients. Input gradients are discarded (inputs are
    /// data, and the appearance image's role as discriminator
    /// conditioning has no parameters upstream).
    #[allow(clippy::too_many_arguments)]
    fn gen_backward(
        &self,
        ps: &ParamStore,
        vi: usize,
        sk_px: &Tensor,
        ap_px: &Tensor,
        masks: &[DropoutMask; 3],
        tr: &GenTrace,
        d_out: &Tensor,
        grads: &mut Grads,
    ) {
        let b = &self.g[vi];
        let dec_out = self.dec_out_channels();
        let enc_out = {
            let chain = enc_chain(&self.cfg);
            [chain[1], chain[2], chain[3], chain[4]]
        };
        let mut skip_extra: Vec<Option<Tensor>> = vec![None; GEN_ENC_LAYERS];
        let mut d_pre = sigmoid_bwd(&tr.out, d_out);
        for k in (1..GEN_DEC_LAYERS).rev() {
            let d_in = b.de[k].backward(ps, &tr.de_in[k], &d_pre, grads);
            let d_dropped = if self.cfg.skip == SkipMode::None {
                d_in
            } else {
                let skip_idx = GEN_ENC_LAYERS - 1 - k;
                let mut parts =
                    split_channels_grad(&d_in, &[dec_out[k - 1], enc_out[skip_idx]]);
                skip_extra[skip_idx] = parts.pop();
                parts.pop().expect("two split parts")
            };
            let d_act = masks[k - 1].backward(&d_dropped);
            d_pre = relu_bwd(&tr.de_pre[k - 1], &d_act);
        }
        let d_xi = b.de[0].backward(ps, &tr.de_in[0], &d_pre, grads);
        let bn = self.cfg.bottleneck;
        let mut parts = split_channels_grad(&d_xi, &[bn, bn]);
        let d_ap_bn = parts.pop().expect("appearance code grad");
        let d_sk_bn = parts.pop().expect("skeleton code grad");
        let blank: Vec<Option<Tensor>> = vec![None; GEN_ENC_LAYERS];
        let (sk_extra, ap_extra) = match self.cfg.skip {
            SkipMode::Appearance => (blank, skip_extra),
            SkipMode::Skeleton => (skip_extra, blank),
            SkipMode::None => (blank, vec![None; GEN_ENC_LAYERS]),
        };
        enc_backward(&b.sk, ps, sk_px, &tr.sk_pre, &tr.sk_act, &d_sk_bn, &sk_extra, grads);
        enc_backward(&b.ap, ps, ap_px, &tr.ap_pre, &tr.ap_act, &d_ap_bn, &ap_extra, grads);
    }
}

/// Forward activations of one generator branch.
struct GenTrace {
    sk_pre: Vec<Tensor>,
    sk_act: Vec<Tensor>,
    ap_pre: Vec<Tensor>,
    ap_act: Vec<Tensor>,
    /// Input fed to each decoder layer (post-concat where skips apply).
    de_in: Vec<Tensor>,
    /// Pre-activation of each decoder layer.
    de_pre: Vec<Tensor>,
    /// Sigmoid-squashed output image.
    out: Tensor,
}

/// Forward activations of one discriminator branch.
struct DiscTrace {
    /// Input fed to each layer.
    ins: Vec<Tensor>,
    /// Pre-activation of each layer.
    pre: Vec<Tensor>,
    /// The scalar score logit (`σ` of it is the probability).
    logit: f64,
}

/// Run an encoder chain, returning pre-activations and activations.
///
/// Hidden layers are ReLU-activated; the final (bottleneck) layer emits
/// its raw code. An activation there could start every code channel
/// non-positive on a narrow net, silencing the encoder's gradient for
/// good — an identity bottleneck cannot gate the backward path.
fn enc_forward(convs: &[Conv2d], ps: &ParamStore, x: &Tensor) -> (Vec<Tensor>, Vec<Tensor>) {
    let mut pre_v = Vec::with_capacity(convs.len());
    let mut act_v = Vec::with_capacity(convs.len());
    let mut cur = x.clone();
    for (k, conv) in convs.iter().enumerate() {
        let pre = conv.forward(ps, &cur);
        cur = if k + 1 == convs.len() {
            pre.clone()
        } else {
            relu(&pre)
        };
        pre_v.push(pre);
        act_v.push(cur.clone());
    }
    (pre_v, act_v)
}

/// Backpropagate through an encoder chain; `extra` carries skip-connection
/// gradients arriving at intermediate activations.
#[allow(clippy::too_many_arguments)]
fn enc_backward(
    convs: &[Conv2d],
    ps: &ParamStore,
    input: &Tensor,
    pre: &[Tensor],
    act: &[Tensor],
    d_top: &Tensor,
    extra: &[Option<Tensor>],
    grads: &mut Grads,
) {
    let mut d_act = d_top.clone();
    for k in (0..convs.len()).rev() {
        if let Some(e) = &extra[k] {
            for (a, b) in d_act.data_mut().iter_mut().zip(e.data()) {
                *a += *b;
            }
        }
        // The bottleneck layer is unactivated (see `enc_forward`).
        let d_pre = if k + 1 == convs.len() {
            d_act.clone()
        } else {
            relu_bwd(&pre[k], &d_act)
        };
        let x = if k == 0 { input } else { &act[k - 1] };
        d_act = convs[k].backward(ps, x, &d_pre, grads);
    }
}

/// Run one discriminator on a 9-channel ⟨skeleton, appearance, candidate⟩
/// stack, caching activations.
fn disc_forward(d: &DiscBranch, ps: &ParamStore, x9: &Tensor) -> DiscTrace {
    let mut ins = Vec::with_capacity(DISC_LAYERS);
    let mut pre_v = Vec::with_capacity(DISC_LAYERS);
    let mut x = x9.clone();
    for k in 0..DISC_LAYERS - 1 {
        let pre = d.convs[k].forward(ps, &x);
        let act = leaky_relu(&pre, LRELU_SLOPE);
        ins.push(std::mem::replace(&mut x, act));
        pre_v.push(pre);
    }
    let pre = d.convs[DISC_LAYERS - 1].forward(ps, &x);
    let logit = pre.data()[0];
    ins.push(x);
    pre_v.push(pre);
    DiscTrace {
        ins,
        pre: pre_v,
        logit,
    }
}

/// Backpropagate `d_logit` through one discriminator, accumulating
/// parameter gradients and returning the gradient at the input stack.
fn disc_backward(
    d: &DiscBranch,
    ps: &ParamStore,
    tr: &DiscTrace,
    d_logit: f64,
    grads: &mut Grads,
) -> Tensor {
    let mut dy = Tensor::from_vec(&[1, 1, 1], vec![d_logit]);
    for k in (0..DISC_LAYERS).rev() {
        let d_pre = if k + 1 == DISC_LAYERS {
            dy
        } else {
            leaky_relu_bwd(&tr.pre[k], &dy, LRELU_SLOPE)
        };
        dy = d.convs[k].backward(ps, &tr.ins[k], &d_pre, grads);
    }
    dy
}

/// Numerically stable scalar logistic function.
fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// L1 subgradient sign with `sign(0) = 0`.
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Sum of absolute differences between two equal-shaped tensors.
fn l1_sum(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .sum()
}

/// One training example: pose raster, appearance source, and target.
///
/// Self-reconstruction training uses an image's own rasterized canonical
/// pose as `skeleton` and the image itself as both `appearance` and
/// `target`; transfer poses appear only at augmentation time.
#[derive(Clone, Debug)]
pub struct CpgTriple {
    pub skeleton: Tensor,
    pub appearance: Tensor,
    pub target: Tensor,
}

/// Build self-reconstruction triples from one view's samples.
///
/// Every sample must carry its canonical keypoints; they are rasterized
/// at `h`×`w` to form the pose conditioning.
pub fn triples_from_view(samples: &[ImageSample], h: usize, w: usize) -> Result<Vec<CpgTriple>> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let kp = s.keypoints.as_ref().ok_or_else(|| {
                Error::invalid(format!("sample {i} lacks keypoints for pose conditioning"))
            })?;
            Ok(CpgTriple {
                skeleton: rasterize_skeleton(kp, h, w),
                appearance: s.pixels.clone(),
                target: s.pixels.clone(),
            })
        })
        .collect()
}

/// Adversarial value from already-computed probabilities:
/// `mean(log r) + mean(log(1 − f))`.
///
/// Scores must lie strictly inside `(0, 1)` (they come from a sigmoid).
/// A blind discriminator scoring `0.5` everywhere yields `2·ln ½ ≈ −1.386`.
pub fn cgan_loss_from_scores(real: &[f64], fake: &[f64]) -> Result<f64> {
    if real.is_empty() || fake.is_empty() {
        return Err(Error::invalid("adversarial score lists must be non-empty"));
    }
    for &s in real.iter().chain(fake) {
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::invalid(format!(
                "score {s} outside the open interval (0, 1)"
            )));
        }
    }
    let mr = real.iter().map(|&r| r.ln()).sum::<f64>() / real.len() as f64;
    let mf = fake.iter().map(|&f| (1.0 - f).ln()).sum::<f64>() / fake.len() as f64;
    Ok(mr + mf)
}

/// Mean over pairs of the **summed** per-image L1 distance.
pub fn l1_from_pairs(generated: &[Tensor], targets: &[Tensor]) -> Result<f64> {
    if generated.is_empty() || generated.len() != targets.len() {
        return Err(Error::invalid(format!(
            "need equal non-empty lists, got {} generated vs {} targets",
            generated.len(),
            targets.len()
        )));
    }
    for (g, t) in generated.iter().zip(targets) {
        if g.shape() != t.shape() {
            return Err(Error::ShapeMismatch(format!(
                "pair shapes differ: {:?} vs {:?}",
                g.shape(),
                t.shape()
            )));
        }
    }
    Ok(generated
        .iter()
        .zip(targets)
        .map(|(g, t)| l1_sum(g, t))
        .sum::<f64>()
        / generated.len() as f64)
}

/// Per-sample generator pass plus real/fake discriminator passes.
///
/// Returns the sample's adversarial term and summed L1, with the traces
/// needed to differentiate both.
fn eval_sample(
    net: &CpgNet,
    vi: usize,
    triple: &CpgTriple,
    masks: &[DropoutMask; 3],
) -> (GenTrace, DiscTrace, DiscTrace, f64, f64) {
    let tr = net.gen_forward(&net.store, vi, &triple.skeleton, &triple.appearance, masks);
    let x9_real = concat_channels(&[&triple.skeleton, &triple.appearance, &triple.target]);
    let real = disc_forward(&net.d[vi], &net.store, &x9_real);
    let x9_fake = concat_channels(&[&triple.skeleton, &triple.appearance, &tr.out]);
    let fake = disc_forward(&net.d[vi], &net.store, &x9_fake);
    let cg = log_sigmoid(real.logit) + log_one_minus_sigmoid(fake.logit);
    let l1 = l1_sum(&tr.out, &triple.target);
    (tr, real, fake, cg, l1)
}

/// One view's adversarial value on a batch: the raw conditional GAN
/// log-likelihood the discriminator ascends and the generator's fake
/// term descends. Fakes are produced with dropout noise drawn from
/// `noise_seed` per sample index.
pub fn cgan_loss(net: &CpgNet, view: u8, batch: &[CpgTriple], noise_seed: u64) -> Result<f64> {
    let vi = view_index(view)?;
    if batch.is_empty() {
        return Err(Error::invalid("adversarial loss needs a non-empty batch"));
    }
    net.check_triples(batch)?;
    let vals = map_indexed(batch.len(), |i| {
        let masks = net.sample_masks(view, noise_seed, i as u64);
        let (_, _, _, cg, _) = eval_sample(net, vi, &batch[i], &masks);
        cg
    });
    Ok(vals.iter().sum::<f64>() / batch.len() as f64)
}

/// One view's reconstruction anchor: mean summed L1 between generated
/// images and their targets, with dropout noise from `noise_seed`.
pub fn l1_loss(net: &CpgNet, view: u8, batch: &[CpgTriple], noise_seed: u64) -> Result<f64> {
    let vi = view_index(view)?;
    if batch.is_empty() {
        return Err(Error::invalid("L1 loss needs a non-empty batch"));
    }
    net.check_triples(batch)?;
    let vals = map_indexed(batch.len(), |i| {
        let masks = net.sample_masks(view, noise_seed, i as u64);
        let tr = net.gen_forward(
            &net.store,
            vi,
            &batch[i].skeleton,
            &batch[i].appearance,
            &masks,
        );
        l1_sum(&tr.out, &batch[i].target)
    });
    Ok(vals.iter().sum::<f64>() / batch.len() as f64)
}

/// Loss components of one pass over both views.
#[derive(Clone, Copy, Debug)]
pub struct CpgLossParts {
    /// Adversarial value per view.
    pub cgan: [f64; 2],
    /// Mean summed L1 per view.
    pub l1: [f64; 2],
    /// `cgan[0] + cgan[1] + ζ·(l1[0] + l1[1])`.
    pub total: f64,
}

/// Both views' adversarial and L1 terms from one generator pass each.
fn view_loss_parts(net: &CpgNet, vi: usize, batch: &[CpgTriple], noise_seed: u64) -> (f64, f64) {
    let view = (vi + 1) as u8;
    let vals = map_indexed(batch.len(), |i| {
        let masks = net.sample_masks(view, noise_seed, i as u64);
        let (_, _, _, cg, l1) = eval_sample(net, vi, &batch[i], &masks);
        (cg, l1)
    });
    let b = batch.len() as f64;
    let cg = vals.iter().map(|v| v.0).sum::<f64>() / b;
    let l1 = vals.iter().map(|v| v.1).sum::<f64>() / b;
    (cg, l1)
}

/// Combined two-view objective: both adversarial values plus `ζ` times
/// both L1 anchors. Equals composing [`cgan_loss`] and [`l1_loss`] with
/// the same `noise_seed`.
pub fn cpgnet_total_loss(
    net: &CpgNet,
    batch1: &[CpgTriple],
    batch2: &[CpgTriple],
    zeta: f64,
    noise_seed: u64,
) -> Result<CpgLossParts> {
    if batch1.is_empty() || batch2.is_empty() {
        return Err(Error::invalid("both view batches must be non-empty"));
    }
    net.check_triples(batch1)?;
    net.check_triples(batch2)?;
    let (cg1, l11) = view_loss_parts(net, 0, batch1, noise_seed);
    let (cg2, l12) = view_loss_parts(net, 1, batch2, noise_seed);
    Ok(CpgLossParts {
        cgan: [cg1, cg2],
        l1: [l11, l12],
        total: cg1 + cg2 + zeta * (l11 + l12),
    })
}

/// [`cpgnet_total_loss`] plus its full gradient — through the
/// discriminators into both generators — accumulated into `grads`.
///
/// This is the plain gradient of the scalar (no ascent/descent split),
/// suitable for finite-difference verification. Alternating training
/// phases derive their directions separately in [`train_cpgnet`].
pub fn cpgnet_total_loss_and_grads(
    net: &CpgNet,
    batch1: &[CpgTriple],
    batch2: &[CpgTriple],
    zeta: f64,
    noise_seed: u64,
    grads: &mut Grads,
) -> Result<CpgLossParts> {
    if batch1.is_empty() || batch2.is_empty() {
        return Err(Error::invalid("both view batches must be non-empty"));
    }
    net.check_triples(batch1)?;
    net.check_triples(batch2)?;
    let mut cgan = [0.0; 2];
    let mut l1 = [0.0; 2];
    for (vi, batch) in [batch1, batch2].into_iter().enumerate() {
        let view = (vi + 1) as u8;
        let b = batch.len() as f64;
        let per = map_indexed(batch.len(), |i| {
            let mut g = Grads::zeros(&net.store);
            let t = &batch[i];
            let masks = net.sample_masks(view, noise_seed, i as u64);
            let (tr, real, fake, cg, l1v) = eval_sample(net, vi, t, &masks);
            let sr = sigmoid_scalar(real.logit);
            let sf = sigmoid_scalar(fake.logit);
            // d/dx log σ(x) = 1 − σ(x); real path ends at the discriminator.
            disc_backward(&net.d[vi], &net.store, &real, (1.0 - sr) / b, &mut g);
            // d/dx log(1 − σ(x)) = −σ(x); fake path continues into G.
            let d_x9 = disc_backward(&net.d[vi], &net.store, &fake, -sf / b, &mut g);
            let mut d_fake = split_channels_grad(&d_x9, &[3, 3, 3])
                .pop()
                .expect("candidate-channel grad");
            for ((df, fv), yv) in d_fake
                .data_mut()
                .iter_mut()
                .zip(tr.out.data())
                .zip(t.target.data())
            {
                *df += zeta / b * sign(fv - yv);
            }
            net.gen_backward(
                &net.store,
                vi,
                &t.skeleton,
                &t.appearance,
                &masks,
                &tr,
                &d_fake,
                &mut g,
            );
            (cg, l1v, g)
        });
        for (cg, l1v, g) in per {
            cgan[vi] += cg / b;
            l1[vi] += l1v / b;
            grads.add(&g);
        }
    }
    Ok(CpgLossParts {
        cgan,
        l1,
        total: cgan[0] + cgan[1] + zeta * (l1[0] + l1[1]),
    })
}

/// Hyperparameters for [`train_cpgnet`].
#[derive(Clone, Copy, Debug)]
pub struct CpgTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight of the L1 anchors in the generator objective.
    pub zeta: f64,
    /// Optimizer family shared by both phases (masked per phase).
    pub optim: OptimConfig,
    /// Seed for shuffling and dropout noise.
    pub seed: u64,
}

impl Default for CpgTrainConfig {
    fn default() -> Self {
        CpgTrainConfig {
            epochs: 200,
            batch_size: 16,
            zeta: 100.0,
            optim: OptimConfig::Sgd { lr: 2e-4 },
            seed: 7,
        }
    }
}

/// Resumable training state: phase-masked optimizers plus the number of
/// epochs already completed. Checkpointing this alongside the parameter
/// store lets a resumed run retrace an uninterrupted one.
#[derive(Clone, Debug)]
pub struct CpgTrainState {
    /// Discriminator-phase optimizer (updates `d.*` only).
    pub opt_d: Optimizer,
    /// Generator-phase optimizer (updates `g.*` only).
    pub opt_g: Optimizer,
    /// Absolute epochs completed; keys shuffles and dropout draws.
    pub epochs_done: usize,
}

impl CpgTrainState {
    /// Fresh state for `net` under `cfg`'s optimizer.
    pub fn new(net: &CpgNet, cfg: &CpgTrainConfig) -> Self {
        let mut opt_d = Optimizer::new(cfg.optim, &net.store);
        opt_d.set_mask(&net.store, |n| n.starts_with("d."));
        let mut opt_g = Optimizer::new(cfg.optim, &net.store);
        opt_g.set_mask(&net.store, |n| n.starts_with("g."));
        CpgTrainState {
            opt_d,
            opt_g,
            epochs_done: 0,
        }
    }
}

/// Train both branches jointly for `cfg.epochs`, returning per-epoch loss
/// components (measured before each batch's updates).
pub fn train_cpgnet(
    net: &mut CpgNet,
    dataset: &CrossViewDataset,
    cfg: &CpgTrainConfig,
) -> Result<Vec<CpgLossParts>> {
    let mut state = CpgTrainState::new(net, cfg);
    train_cpgnet_epochs(net, dataset, cfg, &mut state, cfg.epochs)
}

/// Run `n_epochs` more epochs on top of `state`, so interrupted training
/// resumes exactly: shuffles and noise key off the absolute epoch index.
///
/// Each mini-batch runs two phases over both views. The discriminator
/// phase ascends the adversarial value on real and freshly generated
/// images; the generator phase descends its fake term — re-scored by the
/// just-updated discriminator — plus `ζ` times the L1 anchor.
pub fn train_cpgnet_epochs(
    net: &mut CpgNet,
    dataset: &CrossViewDataset,
    cfg: &CpgTrainConfig,
    state: &mut CpgTrainState,
    n_epochs: usize,
) -> Result<Vec<CpgLossParts>> {
    dataset.validate()?;
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let (h, w) = (net.cfg.image_h, net.cfg.image_w);
    let t1 = triples_from_view(&dataset.view1, h, w)?;
    let t2 = triples_from_view(&dataset.view2, h, w)?;
    net.check_triples(&t1)?;
    net.check_triples(&t2)?;
    let n = t1.len();
    if n == 0 {
        return Err(Error::invalid("training needs at least one sample pair"));
    }
    let tv: [&[CpgTriple]; 2] = [&t1, &t2];
    let zeta = cfg.zeta;
    let mut records = Vec::with_capacity(n_epochs);
    for _ in 0..n_epochs {
        let epoch = state.epochs_done as u64;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream(cfg.seed, &[tag::SHUFFLE, epoch]));
        let mask_seed = derive_key(cfg.seed, &[tag::DROPOUT, epoch]);
        let mut cg_sum = [0.0; 2];
        let mut l1_sums = [0.0; 2];
        let mut n_batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let bsz = chunk.len();
            let b = bsz as f64;
            let net_ref: &CpgNet = net;
            // Discriminator phase: ascend the adversarial value on both
            // views (descend its negation), one step for all branches so
            // tied layers see both views' contributions at once.
            let phase_a = map_indexed(2 * bsz, |t| {
                let vi = t / bsz;
                let view = (vi + 1) as u8;
                let j = chunk[t % bsz];
                let trip = &tv[vi][j];
                let masks = net_ref.sample_masks(view, mask_seed, j as u64);
                let (tr, real, fake, cg, l1v) = eval_sample(net_ref, vi, trip, &masks);
                let sr = sigmoid_scalar(real.logit);
                let sf = sigmoid_scalar(fake.logit);
                let mut g = Grads::zeros(&net_ref.store);
                disc_backward(&net_ref.d[vi], &net_ref.store, &real, -(1.0 - sr) / b, &mut g);
                disc_backward(&net_ref.d[vi], &net_ref.store, &fake, sf / b, &mut g);
                (g, cg, l1v, tr, masks)
            });
            let mut d_grads = Grads::zeros(&net.store);
            for (t, (g, cg, l1v, _, _)) in phase_a.iter().enumerate() {
                let vi = t / bsz;
                d_grads.add(g);
                cg_sum[vi] += cg / b;
                l1_sums[vi] += l1v / b;
            }
            state.opt_d.step(&mut net.store, &d_grads);
            // Generator phase: descend the fake term under the updated
            // discriminator, plus the weighted L1 anchor.
            let net_ref: &CpgNet = net;
            let g_parts = map_indexed(2 * bsz, |t| {
                let vi = t / bsz;
                let j = chunk[t % bsz];
                let trip = &tv[vi][j];
                let (_, _, _, tr, masks) = &phase_a[t];
                let mut g = Grads::zeros(&net_ref.store);
                let x9 = concat_channels(&[&trip.skeleton, &trip.appearance, &tr.out]);
                let fake = disc_forward(&net_ref.d[vi], &net_ref.store, &x9);
                let sf = sigmoid_scalar(fake.logit);
                let d_x9 = disc_backward(&net_ref.d[vi], &net_ref.store, &fake, -sf / b, &mut g);
                let mut d_fake = split_channels_grad(&d_x9, &[3, 3, 3])
                    .pop()
                    .expect("candidate-channel grad");
                for ((df, fv), yv) in d_fake
                    .data_mut()
                    .iter_mut()
                    .zip(tr.out.data())
                    .zip(trip.target.data())
                {
                    *df += zeta / b * sign(fv - yv);
                }
                net_ref.gen_backward(
                    &net_ref.store,
                    vi,
                    &trip.skeleton,
                    &trip.appearance,
                    masks,
                    tr,
                    &d_fake,
                    &mut g,
                );
                g
            });
            let mut g_grads = Grads::zeros(&net.store);
            for g in &g_parts {
                g_grads.add(g);
            }
            state.opt_g.step(&mut net.store, &g_grads);
            n_batches += 1;
        }
        let nb = n_batches as f64;
        let cgan = [cg_sum[0] / nb, cg_sum[1] / nb];
        let l1 = [l1_sums[0] / nb, l1_sums[1] / nb];
        records.push(CpgLossParts {
            cgan,
            l1,
            total: cgan[0] + cgan[1] + zeta * (l1[0] + l1[1]),
        });
        state.epochs_done += 1;
    }
    Ok(records)
}

/// Which (appearance image, pool pose) combinations to synthesize.
#[derive(Clone, Debug)]
pub enum AugmentPlan {
    /// Every image × every pool pose.
    All,
    /// Explicit `(image index, pool index)` pairs, applied to both views.
    Pairs(Vec<(usize, usize)>),
}

/// Pose id assigned to pool entry `pool_index`, continuing the original
/// id namespace after its `original_pose_count` entries.
pub fn synthesized_pose_id(original_pose_count: u32, pool_index: usize) -> u32 {
    original_pose_count + pool_index as u32
}

/// Grow both views with synthesized (person, pose) combinations.
///
/// Each selected pair drives `net` with an original image's appearance
/// and a pool pose's raster. Synthesized samples inherit the appearance
/// source's person id, take pose id [`synthesized_pose_id`] (offset past
/// the largest original pose id), and are marked [`Origin::Synthesized`].
/// Per-pair noise derives from `seed`, so augmentation is reproducible.
pub fn augment_dataset(
    net: &CpgNet,
    view1: &[ImageSample],
    view2: &[ImageSample],
    pool: &[KeypointSet],
    plan: &AugmentPlan,
    seed: u64,
) -> Result<(Vec<ImageSample>, Vec<ImageSample>)> {
    if view1.is_empty() || view2.is_empty() {
        return Err(Error::invalid(
            "augmentation needs source images in both views",
        ));
    }
    if pool.is_empty() {
        return Err(Error::invalid("augmentation needs a non-empty pose pool"));
    }
    for kp in pool {
        kp.validate()?;
    }
    let mut max_pose: Option<u32> = None;
    for s in view1.iter().chain(view2) {
        let pid = s
            .pose_id
            .ok_or_else(|| Error::invalid("source samples must carry pose ids"))?;
        max_pose = Some(max_pose.map_or(pid, |m| m.max(pid)));
    }
    let offset = max_pose.expect("non-empty views") + 1;
    let (h, w) = (net.cfg.image_h, net.cfg.image_w);
    let rasters: Vec<SkeletonSample> = pool
        .iter()
        .map(|kp| SkeletonSample {
            keypoints: kp.clone(),
            rendered: rasterize_skeleton(kp, h, w),
        })
        .collect();
    let mut outputs: Vec<Vec<ImageSample>> = Vec::with_capacity(2);
    for (vi, src) in [view1, view2].into_iter().enumerate() {
        let view = (vi + 1) as u8;
        let pairs: Vec<(usize, usize)> = match plan {
            AugmentPlan::All => (0..src.len())
                .flat_map(|l| (0..pool.len()).map(move |k| (l, k)))
                .collect(),
            AugmentPlan::Pairs(list) => {
                for &(l, k) in list {
                    if l >= src.len() || k >= pool.len() {
                        return Err(Error::invalid(format!(
                            "pair ({l}, {k}) outside {} images × {} poses",
                            src.len(),
                            pool.len()
                        )));
                    }
                }
                list.clone()
            }
        };
        let extra = map_indexed(pairs.len(), |i| {
            let (l, kappa) = pairs[i];
            let noise = derive_key(seed, &[tag::AUGMENT, view as u64, l as u64, kappa as u64]);
            net.generate(view, &rasters[kappa], &src[l], noise)
                .map(|mut s| {
                    s.pose_id = Some(synthesized_pose_id(offset, kappa));
                    s
                })
        });
        let mut out = src.to_vec();
        for r in extra {
            out.push(r?);
        }
        outputs.push(out);
    }
    let second = outputs.pop().expect("two views");
    let first = outputs.pop().expect("two views");
    Ok((first, second))
}
