//! Toy multi-stage pose estimator over confidence maps and part affinity
//! fields.
//!
//! A small shared conv stack extracts features `F` from the image; each
//! refinement stage then predicts per-joint confidence maps `Λ` (one
//! channel per joint, Gaussian bump at the joint) and per-limb affinity
//! fields `Γ` (two channels per limb holding the limb's unit direction on
//! a ribbon around the bone). Stage 1 sees `F` alone; stage τ ≥ 2 sees
//! `F ⋈ Λic(τ−1) ⋈ Γ(τ−1)`, so later stages refine earlier beliefs. The loss
//! is the plain squared L2 distance to the encoded ground truth, summed
//! over every stage, channel, and pixel (uniform pixel weighting).
//!
//! Maps keep the image resolution, so a decoded peak at pixel `(row,
//! col)` converts to normalized coordinates `x = col/(w−1)`, `y =
//! row/(h−1)` — the same convention [`crate::synthdata`] uses.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::nn::{
    concat_channels, relu, relu_bwd, split_channels_grad, Conv2d, Grads, OptimConfig, Optimizer,
    ParamStore, Tensor,
};
use crate::par;
use crate::rng::{derive_key, stream, tag};
use crate::synthdata::{KeypointSet, N_JOINTS, LIMBS};

/// Number of limbs (affinity fields have `2 · N_LIMBS` channels).
pub const N_LIMBS: usize = LIMBS.len();

/// A pose paired with its skeleton raster (the generator conditioning
/// input built from it).
#[derive(Clone, Debug)]
pub struct SkeletonSample {
    pub keypoints: KeypointSet,
    /// `[3, h, w]` raster from [`crate::synthdata::rasterize_skeleton`].
    pub rendered: Tensor,
}

/// One stage's predictions.
#[derive(Clone, Debug)]
pub struct PafStageOutput {
    /// `[N_JOINTS, h, w]` joint confidence maps.
    pub confidence_maps: Tensor,
    /// `[2 · N_LIMBS, h, w]` limb affinity fields.
    pub affinity_fields: Tensor,
    /// 1-based stage index.
    pub stage_index: usize,
}

// ---------------------------------------------------------------------------
// Ground-truth encoding
// ---------------------------------------------------------------------------

/// Encode a pose as per-joint Gaussian confidence maps.
///
/// Each joint gets its own channel with `exp(−d²/2σ²)` around the joint's
/// (sub-pixel) location; channels never interfere, so decoding with
/// [`extract_keypoints`] recovers each joint to within argmax rounding.
pub fn encode_confidence_maps(kp: &KeypointSet, h: usize, w: usize, sigma: f64) -> Tensor {
    let mut maps = Tensor::zeros(&[N_JOINTS, h, w]);
    let inv = 1.0 / (2.0 * sigma * sigma);
    for (j, &[x, y]) in kp.points.iter().enumerate() {
        let px = x * (w - 1) as f64;
        let py = y * (h - 1) as f64;
        for row in 0..h {
            for col in 0..w {
                let d2 = (col as f64 - px).powi(2) + (row as f64 - py).powi(2);
                maps.set3(j, row, col, (-d2 * inv).exp());
            }
        }
    }
    maps
}

/// Encode a pose as per-limb affinity fields.
///
/// Limb `l` from joint `a` to joint `b` writes its unit direction into
/// channels `(2l, 2l+1)` at every pixel within `half_width` of the bone
/// segment (and between its endpoints along the bone); everywhere else
/// the channels stay zero. Zero-length limbs contribute nothing.
pub fn encode_affinity_fields(kp: &KeypointSet, h: usize, w: usize, half_width: f64) -> Tensor {
    let mut fields = Tensor::zeros(&[2 * N_LIMBS, h, w]);
    for (l, &(a, b)) in LIMBS.iter().enumerate() {
        let ax = kp.points[a][0] * (w - 1) as f64;
        let ay = kp.points[a][1] * (h - 1) as f64;
        let bx = kp.points[b][0] * (w - 1) as f64;
        let by = kp.points[b][1] * (h - 1) as f64;
        let (dx, dy) = (bx - ax, by - ay);
        let len = (dx * dx + dy * dy).sqrt();
        if len == 0.0 {
            continue;
        }
        let (ux, uy) = (dx / len, dy / len);
        for row in 0..h {
            for col in 0..w {
                let rx = col as f64 - ax;
                let ry = row as f64 - ay;
                let along = rx * ux + ry * uy;
                let perp = (rx * uy - ry * ux).abs();
                if (0.0..=len).contains(&along) && perp <= half_width {
                    fields.set3(2 * l, row, col, ux);
                    fields.set3(2 * l + 1, row, col, uy);
                }
            }
        }
    }
    fields
}

/// Decode keypoints from confidence maps by per-channel argmax.
///
/// Ties resolve to the first maximum in row-major order; peak values are
/// clamped to `[0, 1]` as confidences.
pub fn extract_keypoints(confidence_maps: &Tensor) -> KeypointSet {
    let (k, h, w) = confidence_maps.dims3();
    let mut points = Vec::with_capacity(k);
    let mut confidences = Vec::with_capacity(k);
    for j in 0..k {
        let plane = &confidence_maps.data()[j * h * w..][..h * w];
        let mut best = f64::NEG_INFINITY;
        let mut best_i = 0;
        for (i, &v) in plane.iter().enumerate() {
            if v > best {
                best = v;
                best_i = i;
            }
        }
        let row = best_i / w;
        let col = best_i % w;
        points.push([col as f64 / (w - 1) as f64, row as f64 / (h - 1) as f64]);
        confidences.push(best.clamp(0.0, 1.0));
    }
    KeypointSet {
        points,
        confidences,
    }
}

// ---------------------------------------------------------------------------
// Estimator
// ---------------------------------------------------------------------------

/// Estimator hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct PafConfig {
    pub image_h: usize,
    pub image_w: usize,
    /// Channels produced by the shared feature extractor.
    pub feat_channels: usize,
    /// Hidden channels inside each stage branch.
    pub stage_hidden: usize,
    /// Number of refinement stages (≥ 1).
    pub n_stages: usize,
    /// Gaussian σ (pixels) for ground-truth confidence maps.
    pub sigma: f64,
    /// Ribbon half-width (pixels) for ground-truth affinity fields.
    pub ribbon_half_width: f64,
    /// Parameter initialization seed.
    pub seed: u64,
}

impl Default for PafConfig {
    fn default() -> Self {
        PafConfig {
            image_h: 32,
            image_w: 16,
            feat_channels: 8,
            stage_hidden: 8,
            n_stages: 3,
            sigma: 1.5,
            ribbon_half_width: 1.5,
            seed: 7,
        }
    }
}

/// One stage's two branches: 3×3 conv → ReLU → 1×1 linear head each.
#[derive(Clone, Debug)]
struct Stage {
    conf_hidden: Conv2d,
    conf_head: Conv2d,
    field_hidden: Conv2d,
    field_head: Conv2d,
}

/// Multi-stage estimator; owns its parameters.
#[derive(Clone, Debug)]
pub struct PafEstimator {
    pub store: ParamStore,
    cfg: PafConfig,
    feat: Vec<Conv2d>,
    stages: Vec<Stage>,
}

impl PafEstimator {
    /// Build with deterministic initialization from `cfg.seed`.
    pub fn new(cfg: &PafConfig) -> Result<Self> {
        if cfg.n_stages == 0 {
            return Err(Error::invalid("estimator needs at least one stage"));
        }
        let mut store = ParamStore::new();
        let mut rng = stream(cfg.seed, &[tag::INIT]);
        let f = cfg.feat_channels;
        let feat = vec![
            Conv2d::new(&mut store, "feat.c1", 3, f, (3, 3), 1, 1, &mut rng),
            Conv2d::new(&mut store, "feat.c2", f, f, (3, 3), 1, 1, &mut rng),
            Conv2d::new(&mut store, "feat.c3", f, f, (3, 3), 1, 1, &mut rng),
        ];
        let mut stages = Vec::with_capacity(cfg.n_stages);
        for s in 0..cfg.n_stages {
            let in_ch = if s == 0 {
                f
            } else {
                f + N_JOINTS + 2 * N_LIMBS
            };
            let h = cfg.stage_hidden;
            stages.push(Stage {
                conf_hidden: Conv2d::new(
                    &mut store,
                    &format!("stage{}.conf.hidden", s + 1),
                    in_ch,
                    h,
                    (3, 3),
                    1,
                    1,
                    &mut rng,
                ),
                conf_head: Conv2d::new(
                    &mut store,
                    &format!("stage{}.conf.head", s + 1),
                    h,
                    N_JOINTS,
                    (1, 1),
                    1,
                    0,
                    &mut rng,
                ),
                field_hidden: Conv2d::new(
                    &mut store,
                    &format!("stage{}.field.hidden", s + 1),
                    in_ch,
                    h,
                    (3, 3),
                    1,
                    1,
                    &mut rng,
                ),
                field_head: Conv2d::new(
                    &mut store,
                    &format!("stage{}.field.head", s + 1),
                    h,
                    2 * N_LIMBS,
                    (1, 1),
                    1,
                    0,
                    &mut rng,
                ),
            });
        }
        Ok(PafEstimator {
            store,
            cfg: cfg.clone(),
            feat,
            stages,
        })
    }

    /// The configuration this estimator was built with.
    pub fn config(&self) -> &PafConfig {
        &self.cfg
    }
}

/// Forward activations cached for the backward pass.
struct PafTrace {
    /// Feature extractor pre-activations.
    feat_pre: Vec<Tensor>,
    /// Final feature map (post-ReLU).
    features: Tensor,
    /// Per-stage: (input, conf hidden pre-act, field hidden pre-act).
    stage_inputs: Vec<(Tensor, Tensor, Tensor)>,
    outputs: Vec<PafStageOutput>,
}

fn forward_trace(est: &PafEstimator, ps: &ParamStore, image: &Tensor) -> PafTrace {
    let mut feat_pre = Vec::with_capacity(est.feat.len());
    let mut cur = image.clone();
    for conv in &est.feat {
        let pre = conv.forward(ps, &cur);
        cur = relu(&pre);
        feat_pre.push(pre);
    }
    let features = cur;
    let mut stage_inputs = Vec::with_capacity(est.stages.len());
    let mut outputs: Vec<PafStageOutput> = Vec::with_capacity(est.stages.len());
    for (s, stage) in est.stages.iter().enumerate() {
        let input = if s == 0 {
            features.clone()
        } else {
            let prev = &outputs[s - 1];
            concat_channels(&[&features, &prev.confidence_maps, &prev.affinity_fields])
        };
        let ch_pre = stage.conf_hidden.forward(ps, &input);
        let conf = stage.conf_head.forward(ps, &relu(&ch_pre));
        let fh_pre = stage.field_hidden.forward(ps, &input);
        let field = stage.field_head.forward(ps, &relu(&fh_pre));
        stage_inputs.push((input, ch_pre, fh_pre));
        outputs.push(PafStageOutput {
            confidence_maps: conf,
            affinity_fields: field,
            stage_index: s + 1,
        });
    }
    PafTrace {
        feat_pre,
        features,
        stage_inputs,
        outputs,
    }
}

/// Run the estimator, producing every stage's predictions in order.
pub fn paf_forward(est: &PafEstimator, image: &Tensor) -> Result<Vec<PafStageOutput>> {
    let (c, h, w) = image.dims3();
    if c != 3 || h != est.cfg.image_h || w != est.cfg.image_w {
        return Err(Error::ShapeMismatch(format!(
            "expected [3, {}, {}] image, got {:?}",
            est.cfg.image_h,
            est.cfg.image_w,
            image.shape()
        )));
    }
    Ok(forward_trace(est, &est.store, image).outputs)
}

/// Squared-L2 training loss summed over stages, channels, and pixels.
///
/// All pixels weigh 1; every stage is penalized against the same encoded
/// ground truth (intermediate supervision).
pub fn paf_total_loss(outputs: &[PafStageOutput], gt_maps: &Tensor, gt_fields: &Tensor) -> Result<f64> {
    let mut total = 0.0;
    for out in outputs {
        if out.confidence_maps.shape() != gt_maps.shape()
            || out.affinity_fields.shape() != gt_fields.shape()
        {
            return Err(Error::ShapeMismatch(format!(
                "stage {} output shapes {:?}/{:?} vs targets {:?}/{:?}",
                out.stage_index,
                out.confidence_maps.shape(),
                out.affinity_fields.shape(),
                gt_maps.shape(),
                gt_fields.shape()
            )));
        }
        total += sq_diff(&out.confidence_maps, gt_maps);
        total += sq_diff(&out.affinity_fields, gt_fields);
    }
    Ok(total)
}

fn sq_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

fn sq_diff_grad(a: &Tensor, b: &Tensor) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| 2.0 * (x - y)).collect();
    Tensor::from_vec(a.shape(), data)
}

/// Loss plus parameter gradients for one sample (full backprop through
/// the stage recursion: later stages feed gradient back into earlier
/// stages' outputs and into the shared features).
pub fn paf_loss_and_grads(
    est: &PafEstimator,
    ps: &ParamStore,
    image: &Tensor,
    gt_maps: &Tensor,
    gt_fields: &Tensor,
    grads: &mut Grads,
) -> Result<f64> {
    let trace = forward_trace(est, ps, image);
    let loss = paf_total_loss(&trace.outputs, gt_maps, gt_fields)?;

    let f = est.cfg.feat_channels;
    let mut d_features = Tensor::zeros(trace.features.shape());
    // Gradient flowing into stage s's outputs from stage s+1's input.
    let mut d_conf_next: Option<Tensor> = None;
    let mut d_field_next: Option<Tensor> = None;

    for s in (0..est.stages.len()).rev() {
        let stage = &est.stages[s];
        let (input, ch_pre, fh_pre) = &trace.stage_inputs[s];
        let out = &trace.outputs[s];

        let mut d_conf = sq_diff_grad(&out.confidence_maps, gt_maps);
        if let Some(extra) = d_conf_next.take() {
            add_into(&mut d_conf, &extra);
        }
        let mut d_field = sq_diff_grad(&out.affinity_fields, gt_fields);
        if let Some(extra) = d_field_next.take() {
            add_into(&mut d_field, &extra);
        }

        // Confidence branch backward.
        let rh = relu(ch_pre);
        let d_rh = stage.conf_head.backward(ps, &rh, &d_conf, grads);
        let d_ch_pre = relu_bwd(ch_pre, &d_rh);
        let d_input_conf = stage.conf_hidden.backward(ps, input, &d_ch_pre, grads);

        // Field branch backward.
        let rf = relu(fh_pre);
        let d_rf = stage.field_head.backward(ps, &rf, &d_field, grads);
        let d_fh_pre = relu_bwd(fh_pre, &d_rf);
        let d_input_field = stage.field_hidden.backward(ps, input, &d_fh_pre, grads);

        let mut d_input = d_input_conf;
        add_into(&mut d_input, &d_input_field);

        if s == 0 {
            add_into(&mut d_features, &d_input);
        } else {
            let parts = split_channels_grad(&d_input, &[f, N_JOINTS, 2 * N_LIMBS]);
            let mut it = parts.into_iter();
            add_into(&mut d_features, &it.next().unwrap());
            d_conf_next = Some(it.next().unwrap());
            d_field_next = Some(it.next().unwrap());
        }
    }

    // Feature extractor backward (ReLU after every conv).
    let mut d_out = d_features;
    for i in (0..est.feat.len()).rev() {
        let pre = &trace.feat_pre[i];
        let d_pre = relu_bwd(pre, &d_out);
        let input = if i == 0 {
            image.clone()
        } else {
            relu(&trace.feat_pre[i - 1])
        };
        d_out = est.feat[i].backward(ps, &input, &d_pre, grads);
    }
    Ok(loss)
}

fn add_into(a: &mut Tensor, b: &Tensor) {
    assert_eq!(a.shape(), b.shape());
    for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
        *x += *y;
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Training parameters for the estimator.
#[derive(Clone, Debug, PartialEq)]
pub struct PafTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimConfig,
    pub seed: u64,
}

impl Default for PafTrainConfig {
    fn default() -> Self {
        PafTrainConfig {
            epochs: 200,
            batch_size: 16,
            optimizer: OptimConfig::adam(1e-3),
            seed: 7,
        }
    }
}

/// Mean per-sample loss for each epoch, in order.
pub type PafHistory = Vec<f64>;

/// Train on `(image, pose)` pairs; targets are encoded once up front.
///
/// Deterministic for a fixed config: batch order comes from an
/// epoch-keyed stream and per-sample gradients are reduced in index
/// order.
pub fn train_paf(
    est: &mut PafEstimator,
    samples: &[(Tensor, KeypointSet)],
    cfg: &PafTrainConfig,
) -> Result<PafHistory> {
    if samples.is_empty() {
        return Err(Error::invalid("training needs at least one sample"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch_size must be positive"));
    }
    let (h, w) = (est.cfg.image_h, est.cfg.image_w);
    let targets: Vec<(Tensor, Tensor)> = samples
        .iter()
        .map(|(_, kp)| {
            (
                encode_confidence_maps(kp, h, w, est.cfg.sigma),
                encode_affinity_fields(kp, h, w, est.cfg.ribbon_half_width),
            )
        })
        .collect();

    let mut opt = Optimizer::new(cfg.optimizer, &est.store);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut stream(cfg.seed, &[tag::SHUFFLE, epoch as u64]));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let per_sample = par::map_indexed(batch.len(), |bi| {
                let i = batch[bi];
                let mut g = Grads::zeros(&est.store);
                let loss = paf_loss_and_grads(
                    est,
                    &est.store,
                    &samples[i].0,
                    &targets[i].0,
                    &targets[i].1,
                    &mut g,
                )?;
                Ok::<_, Error>((loss, g))
            });
            let mut batch_grads = Grads::zeros(&est.store);
            let mut batch_loss = 0.0;
            for r in per_sample {
                let (loss, g) = r?;
                batch_loss += loss;
                batch_grads.add(&g);
            }
            batch_grads.scale(1.0 / batch.len() as f64);
            opt.step(&mut est.store, &batch_grads);
            epoch_loss += batch_loss;
        }
        history.push(epoch_loss / samples.len() as f64);
    }
    Ok(history)
}

/// Key used to derive per-stage parameter seeds; exposed for tests that
/// rebuild estimators with known init.
pub fn init_key(seed: u64) -> u64 {
    derive_key(seed, &[tag::INIT])
}
