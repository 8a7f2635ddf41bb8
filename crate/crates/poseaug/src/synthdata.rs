//! Deterministic synthetic cross-view pedestrian corpus.
//!
//! Identities are color/proportion recipes ([`AppearanceSpec`]), poses are
//! 14-joint articulated skeletons ([`KeypointSet`]) sampled inside the
//! frame, and images are anti-aliased rasterizations of an identity in a
//! pose under one of two camera views. View 2 differs from view 1 by a
//! fixed hue rotation (photometric gap) and a fixed horizontal shear
//! (geometric gap), so the same person+pose genuinely looks different
//! across views while ground truth stays exact.
//!
//! Everything is a pure function of a `u64` seed via [`crate::rng`]:
//! regenerating a corpus with the same seed reproduces it byte-for-byte,
//! including the PNG files written by [`save_dataset`].
//!
//! # On-disk layout
//!
//! ```text
//! <root>/manifest              key = value metadata (sizes, counts, seed)
//! <root>/view1/<p>_<q>.png     person p, pose q, 8-bit RGB
//! <root>/view2/<p>_<q>.png
//! <root>/skeletons/<k>.png     rasterized pose pool entry k
//! <root>/skeletons/<k>.kpts    one "x y confidence" line per joint
//! ```
//!
//! The manifest additionally carries one `sample = <view> <person>
//! <pose> <origin> <file>` row per image in dataset order. Augmented
//! corpora may hold several samples with the same `(person, pose)` key
//! (one per source appearance image); later occurrences get an `_<n>`
//! filename suffix, and [`load_dataset`] reads the rows, so nothing
//! collides. Directories without rows (e.g. hand-assembled image
//! folders) fall back to globbing `<p>_<q>.png` names, where pose ids
//! `>= pose_split` mark synthesized samples; original corpora use
//! `pose_split == n_poses`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::par;
use crate::rng::{derive_key, stream, tag};

/// Number of skeleton joints.
pub const N_JOINTS: usize = 14;

/// Joint indices by name.
pub mod joint {
    pub const HEAD: usize = 0;
    pub const NECK: usize = 1;
    pub const R_SHOULDER: usize = 2;
    pub const R_ELBOW: usize = 3;
    pub const R_WRIST: usize = 4;
    pub const L_SHOULDER: usize = 5;
    pub const L_ELBOW: usize = 6;
    pub const L_WRIST: usize = 7;
    pub const R_HIP: usize = 8;
    pub const R_KNEE: usize = 9;
    pub const R_ANKLE: usize = 10;
    pub const L_HIP: usize = 11;
    pub const L_KNEE: usize = 12;
    pub const L_ANKLE: usize = 13;
}

/// Fixed limb topology: a tree rooted at the neck, `(parent, child)` per
/// limb. Every joint appears, so the 14 joints have exactly 13 limbs.
pub const LIMBS: [(usize, usize); 13] = [
    (joint::NECK, joint::HEAD),
    (joint::NECK, joint::R_SHOULDER),
    (joint::R_SHOULDER, joint::R_ELBOW),
    (joint::R_ELBOW, joint::R_WRIST),
    (joint::NECK, joint::L_SHOULDER),
    (joint::L_SHOULDER, joint::L_ELBOW),
    (joint::L_ELBOW, joint::L_WRIST),
    (joint::NECK, joint::R_HIP),
    (joint::R_HIP, joint::R_KNEE),
    (joint::R_KNEE, joint::R_ANKLE),
    (joint::NECK, joint::L_HIP),
    (joint::L_HIP, joint::L_KNEE),
    (joint::L_KNEE, joint::L_ANKLE),
];

/// Shear applied to view-2 geometry: columns shift by `shear · (row −
/// center)` in pixel space.
pub const VIEW2_SHEAR: f64 = 0.18;

/// Hue rotation applied to view-2 colors, as a fraction of the hue circle.
pub const VIEW2_HUE_SHIFT: f64 = 0.36;

/// Uniform gray behind rendered pedestrians. Deliberately non-zero: a
/// pure-black background would hand conv layers large exactly-zero
/// input planes, parking zero-initialized biases exactly on ReLU kinks.
pub const BACKGROUND_SHADE: f64 = 0.08;

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

/// Identity recipe: three RGB colors plus four body-proportion scalars.
///
/// Proportions are fractions of image height and must lie in `(0, 0.6]`;
/// widths are half-widths of the rasterized strokes.
#[derive(Clone, Debug, PartialEq)]
pub struct AppearanceSpec {
    pub identity_id: u32,
    pub head_color: [f64; 3],
    pub torso_color: [f64; 3],
    pub limb_color: [f64; 3],
    /// Head disc radius.
    pub head_radius: f64,
    /// Trunk stroke half-width.
    pub torso_width: f64,
    /// Arm stroke half-width.
    pub arm_width: f64,
    /// Leg stroke half-width.
    pub leg_width: f64,
}

impl AppearanceSpec {
    /// Check the documented ranges: colors in `[0,1]³`, proportions in
    /// `(0, 0.6]`.
    pub fn validate(&self) -> Result<()> {
        for (label, c) in [
            ("head_color", &self.head_color),
            ("torso_color", &self.torso_color),
            ("limb_color", &self.limb_color),
        ] {
            if c.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::invalid(format!("{label} outside [0,1]: {c:?}")));
            }
        }
        for (label, v) in [
            ("head_radius", self.head_radius),
            ("torso_width", self.torso_width),
            ("arm_width", self.arm_width),
            ("leg_width", self.leg_width),
        ] {
            if !(v > 0.0 && v <= 0.6) {
                return Err(Error::invalid(format!("{label} outside (0, 0.6]: {v}")));
            }
        }
        Ok(())
    }
}

/// A pose: normalized joint coordinates plus per-joint confidences.
///
/// `points[j] = [x, y]` with `x = column / (width − 1)` and `y = row /
/// (height − 1)`, both in `[0, 1]`. Ground-truth poses carry confidence
/// 1.0; estimator output carries peak responses clamped to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct KeypointSet {
    pub points: Vec<[f64; 2]>,
    pub confidences: Vec<f64>,
}

impl KeypointSet {
    /// The fixed limb topology shared by every pose.
    pub fn limb_topology() -> &'static [(usize, usize)] {
        &LIMBS
    }

    /// Check joint count, coordinate ranges, and confidence ranges.
    pub fn validate(&self) -> Result<()> {
        if self.points.len() != N_JOINTS || self.confidences.len() != N_JOINTS {
            return Err(Error::invalid(format!(
                "expected {N_JOINTS} joints, got {} points / {} confidences",
                self.points.len(),
                self.confidences.len()
            )));
        }
        if self
            .points
            .iter()
            .any(|p| !(0.0..=1.0).contains(&p[0]) || !(0.0..=1.0).contains(&p[1]))
        {
            return Err(Error::invalid("keypoint outside [0,1]^2"));
        }
        if self.confidences.iter().any(|&c| !(0.0..=1.0).contains(&c)) {
            return Err(Error::invalid("confidence outside [0,1]"));
        }
        Ok(())
    }

    /// Mean Euclidean distance between matching joints, in normalized
    /// coordinates.
    pub fn mean_distance(&self, other: &KeypointSet) -> f64 {
        let n = self.points.len().min(other.points.len());
        let sum: f64 = (0..n)
            .map(|j| {
                let dx = self.points[j][0] - other.points[j][0];
                let dy = self.points[j][1] - other.points[j][1];
                (dx * dx + dy * dy).sqrt()
            })
            .sum();
        sum / n as f64
    }
}

/// Whether a sample came from the renderer or from a generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Origin {
    Original,
    Synthesized,
}

/// One image with its view and (optional) ground-truth labels.
#[derive(Clone, Debug)]
pub struct ImageSample {
    /// Pixels `[3, h, w]`, each channel in `[0, 1]`.
    pub pixels: Tensor,
    /// Camera view, 1 or 2.
    pub view_id: u8,
    pub person_id: Option<u32>,
    pub pose_id: Option<u32>,
    pub origin: Origin,
    /// Canonical (view-agnostic) pose behind this image, when known;
    /// [`realized_pose`] maps it into this sample's image space.
    pub keypoints: Option<KeypointSet>,
}

impl ImageSample {
    /// Check pixel range, shape, and view id.
    pub fn validate(&self) -> Result<()> {
        if self.pixels.shape().len() != 3 || self.pixels.shape()[0] != 3 {
            return Err(Error::invalid(format!(
                "image must be [3, h, w], got {:?}",
                self.pixels.shape()
            )));
        }
        if self.pixels.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::invalid("pixel outside [0,1]"));
        }
        if self.view_id != 1 && self.view_id != 2 {
            return Err(Error::invalid(format!("view_id must be 1 or 2, got {}", self.view_id)));
        }
        Ok(())
    }
}

/// Paired two-view corpus with its shared pose pool.
#[derive(Clone, Debug)]
pub struct CrossViewDataset {
    pub view1: Vec<ImageSample>,
    pub view2: Vec<ImageSample>,
    /// Standalone pose pool Ω used for augmentation.
    pub skeletons: Vec<KeypointSet>,
    /// Index pairs `(i1, i2)` into `view1`/`view2` with equal `person_id`.
    pub pairing: Vec<(usize, usize)>,
}

impl CrossViewDataset {
    /// Check the pairing and size invariants.
    pub fn validate(&self) -> Result<()> {
        if self.view1.len() != self.view2.len() {
            return Err(Error::ShapeMismatch(format!(
                "view sizes differ: {} vs {}",
                self.view1.len(),
                self.view2.len()
            )));
        }
        for &(a, b) in &self.pairing {
            let s1 = self.view1.get(a).ok_or_else(|| Error::invalid("pairing index"))?;
            let s2 = self.view2.get(b).ok_or_else(|| Error::invalid("pairing index"))?;
            if s1.person_id != s2.person_id {
                return Err(Error::invalid(format!(
                    "pair ({a},{b}) crosses identities {:?} vs {:?}",
                    s1.person_id, s2.person_id
                )));
            }
        }
        Ok(())
    }
}

/// Corpus generation parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub n_identities: usize,
    /// Rendered poses per identity (each appears in both views).
    pub n_poses: usize,
    /// Size of the standalone skeleton pool Ω.
    pub n_skeletons: usize,
    pub image_h: usize,
    pub image_w: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_identities: 32,
            n_poses: 8,
            n_skeletons: 16,
            image_h: 32,
            image_w: 16,
            seed: 7,
        }
    }
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

/// Convert HSV (all components in `[0,1]`, hue wrapping) to RGB.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = (h.rem_euclid(1.0)) * 6.0;
    let i = h.floor() as i32 % 6;
    let f = h - h.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn rgb_to_hsv(rgb: [f64; 3]) -> (f64, f64, f64) {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        (((g - b) / d).rem_euclid(6.0)) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

/// Rotate a color's hue by `delta` (fraction of the hue circle).
pub fn hue_rotate(rgb: [f64; 3], delta: f64) -> [f64; 3] {
    let (h, s, v) = rgb_to_hsv(rgb);
    hsv_to_rgb(h + delta, s, v)
}

/// Deterministically sample an identity's appearance from a seed.
///
/// Head/torso/limb hues sit a third of the hue circle apart (plus jitter)
/// so each figure has internal contrast; the base hue separates
/// identities from one another.
pub fn make_identity(seed: u64, identity_id: u32) -> AppearanceSpec {
    let mut rng = stream(seed, &[]);
    let base_hue: f64 = rng.gen();
    let mut color = |offset: f64| {
        let h = base_hue + offset + rng.gen::<f64>() * 0.08;
        let s = 0.65 + rng.gen::<f64>() * 0.3;
        let v = 0.7 + rng.gen::<f64>() * 0.3;
        hsv_to_rgb(h, s, v)
    };
    let torso_color = color(0.0);
    let limb_color = color(1.0 / 3.0);
    let head_color = color(2.0 / 3.0);
    AppearanceSpec {
        identity_id,
        head_color,
        torso_color,
        limb_color,
        head_radius: 0.05 + rng.gen::<f64>() * 0.05,
        torso_width: 0.06 + rng.gen::<f64>() * 0.05,
        arm_width: 0.025 + rng.gen::<f64>() * 0.025,
        leg_width: 0.03 + rng.gen::<f64>() * 0.03,
    }
}

/// Canonical construction grid for poses (pixel units); rendering scales
/// poses to any target size through the normalized coordinates.
const POSE_GRID_H: f64 = 32.0;
const POSE_GRID_W: f64 = 16.0;

/// Deterministically sample an in-frame articulated pose from a seed.
pub fn make_pose(seed: u64) -> KeypointSet {
    let mut rng = stream(seed, &[]);
    let deg = std::f64::consts::PI / 180.0;
    // Joint positions in canonical pixel space, (px, py), y down.
    let mut p = [[0.0f64; 2]; N_JOINTS];

    let neck_x = POSE_GRID_W * (0.5 + (rng.gen::<f64>() - 0.5) * 0.12);
    let neck_y = POSE_GRID_H * (0.27 + (rng.gen::<f64>() - 0.5) * 0.05);
    p[joint::NECK] = [neck_x, neck_y];

    // Torso hangs from the neck with a small tilt; segment lengths are
    // fractions of the canonical height.
    let torso_tilt = (rng.gen::<f64>() - 0.5) * 16.0 * deg;
    let torso_len = POSE_GRID_H * 0.26;
    let pelvis = [
        neck_x + torso_len * torso_tilt.sin(),
        neck_y + torso_len * torso_tilt.cos(),
    ];

    let head_angle = torso_tilt + (rng.gen::<f64>() - 0.5) * 30.0 * deg;
    let head_len = POSE_GRID_H * 0.11;
    p[joint::HEAD] = [
        neck_x - head_len * head_angle.sin(),
        neck_y - head_len * head_angle.cos(),
    ];

    // Shoulders and hips sit perpendicular to the torso axis.
    let perp = [torso_tilt.cos(), -torso_tilt.sin()];
    let sho_half = POSE_GRID_H * 0.105;
    let hip_half = POSE_GRID_H * 0.065;
    p[joint::R_SHOULDER] = [neck_x - perp[0] * sho_half, neck_y - perp[1] * sho_half];
    p[joint::L_SHOULDER] = [neck_x + perp[0] * sho_half, neck_y + perp[1] * sho_half];
    p[joint::R_HIP] = [pelvis[0] - perp[0] * hip_half, pelvis[1] - perp[1] * hip_half];
    p[joint::L_HIP] = [pelvis[0] + perp[0] * hip_half, pelvis[1] + perp[1] * hip_half];

    // Limb chains: angles measured from "straight down", positive
    // swinging outward from the body on each side.
    let mut chain = |root: usize, mid: usize, tip: usize, len1: f64, len2: f64, swing: f64, bend: f64| {
        let a1 = (rng.gen::<f64>() - 0.5) * 2.0 * swing;
        let a2 = a1 + (rng.gen::<f64>() - 0.5) * 2.0 * bend;
        p[mid] = [p[root][0] + len1 * a1.sin(), p[root][1] + len1 * a1.cos()];
        p[tip] = [p[mid][0] + len2 * a2.sin(), p[mid][1] + len2 * a2.cos()];
    };
    let arm1 = POSE_GRID_H * 0.15;
    let arm2 = POSE_GRID_H * 0.14;
    let leg1 = POSE_GRID_H * 0.17;
    let leg2 = POSE_GRID_H * 0.16;
    chain(joint::R_SHOULDER, joint::R_ELBOW, joint::R_WRIST, arm1, arm2, 70.0 * deg, 55.0 * deg);
    chain(joint::L_SHOULDER, joint::L_ELBOW, joint::L_WRIST, arm1, arm2, 70.0 * deg, 55.0 * deg);
    chain(joint::R_HIP, joint::R_KNEE, joint::R_ANKLE, leg1, leg2, 32.0 * deg, 24.0 * deg);
    chain(joint::L_HIP, joint::L_KNEE, joint::L_ANKLE, leg1, leg2, 32.0 * deg, 24.0 * deg);

    // Clamp inside the frame with a 1-pixel margin, then normalize.
    let points = p
        .iter()
        .map(|&[px, py]| {
            let px = px.clamp(1.0, POSE_GRID_W - 2.0);
            let py = py.clamp(1.0, POSE_GRID_H - 2.0);
            [px / (POSE_GRID_W - 1.0), py / (POSE_GRID_H - 1.0)]
        })
        .collect();
    KeypointSet {
        points,
        confidences: vec![1.0; N_JOINTS],
    }
}

/// The pose as it appears in a given view's pixels.
///
/// View 1 is the identity; view 2 shears columns horizontally about the
/// vertical center. Ground truth for anything view-specific (estimator
/// training targets, self-reconstruction skeletons) must use the realized
/// pose, not the canonical one.
pub fn realized_pose(pose: &KeypointSet, view_id: u8) -> KeypointSet {
    if view_id == 1 {
        return pose.clone();
    }
    let points = pose
        .points
        .iter()
        .map(|&[x, y]| {
            // Shear in normalized units, mirroring the pixel-space shear
            // col += VIEW2_SHEAR · (row − center): with px = x(w−1) and
            // py = y(h−1) on the canonical grid, the normalized shift is
            // VIEW2_SHEAR · (y − 0.5) · (h−1)/(w−1).
            let scale = (POSE_GRID_H - 1.0) / (POSE_GRID_W - 1.0);
            let x2 = x + VIEW2_SHEAR * (y - 0.5) * scale;
            [x2.clamp(0.0, 1.0), y]
        })
        .collect();
    KeypointSet {
        points,
        confidences: pose.confidences.clone(),
    }
}

// ---------------------------------------------------------------------------
// Rasterization
// ---------------------------------------------------------------------------

/// Anti-aliased coverage of a point at distance `d` from a stroke of the
/// given half-width: full inside, linear 1-pixel feather at the edge.
#[inline]
fn coverage(d: f64, half_width: f64) -> f64 {
    (half_width + 0.5 - d).clamp(0.0, 1.0)
}

/// Distance from point `(px, py)` to segment `a`–`b` in pixel space.
fn segment_distance(px: f64, py: f64, a: [f64; 2], b: [f64; 2]) -> f64 {
    let vx = b[0] - a[0];
    let vy = b[1] - a[1];
    let len2 = vx * vx + vy * vy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        ((px - a[0]) * vx + (py - a[1]) * vy) / len2
    }
    .clamp(0.0, 1.0);
    let dx = px - (a[0] + t * vx);
    let dy = py - (a[1] + t * vy);
    (dx * dx + dy * dy).sqrt()
}

struct Canvas {
    h: usize,
    w: usize,
    data: Vec<f64>, // [3, h, w]
}

impl Canvas {
    fn new(h: usize, w: usize) -> Self {
        Canvas {
            h,
            w,
            data: vec![0.0; 3 * h * w],
        }
    }

    /// Canvas pre-filled with a uniform gray.
    fn filled(h: usize, w: usize, shade: f64) -> Self {
        Canvas {
            h,
            w,
            data: vec![shade; 3 * h * w],
        }
    }

    /// Alpha-composite `color` over the pixel at `(y, x)`.
    fn blend(&mut self, y: usize, x: usize, color: [f64; 3], alpha: f64) {
        if alpha <= 0.0 {
            return;
        }
        for c in 0..3 {
            let i = (c * self.h + y) * self.w + x;
            self.data[i] = self.data[i] * (1.0 - alpha) + color[c] * alpha;
        }
    }

    /// Draw an anti-aliased stroke from `a` to `b` (pixel coords).
    fn stroke(&mut self, a: [f64; 2], b: [f64; 2], half_width: f64, color: [f64; 3]) {
        let pad = half_width + 1.5;
        let x0 = ((a[0].min(b[0]) - pad).floor().max(0.0)) as usize;
        let x1 = ((a[0].max(b[0]) + pad).ceil().min((self.w - 1) as f64)) as usize;
        let y0 = ((a[1].min(b[1]) - pad).floor().max(0.0)) as usize;
        let y1 = ((a[1].max(b[1]) + pad).ceil().min((self.h - 1) as f64)) as usize;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = segment_distance(x as f64, y as f64, a, b);
                self.blend(y, x, color, coverage(d, half_width));
            }
        }
    }

    /// Draw an anti-aliased filled disc.
    fn disc(&mut self, center: [f64; 2], radius: f64, color: [f64; 3]) {
        self.stroke(center, center, radius, color);
    }

    fn into_tensor(self) -> Tensor {
        Tensor::from_vec(&[3, self.h, self.w], self.data)
    }
}

/// Map normalized joints to pixel coordinates for an `h × w` canvas.
fn to_pixels(pose: &KeypointSet, h: usize, w: usize) -> Vec<[f64; 2]> {
    pose.points
        .iter()
        .map(|&[x, y]| [x * (w - 1) as f64, y * (h - 1) as f64])
        .collect()
}

/// Render an identity in a pose under a view, at `h × w` pixels.
///
/// View 2 shears the skeleton geometry and hue-rotates the identity's
/// colors; the underlying pose and person labels are unchanged.
pub fn render_pedestrian(
    app: &AppearanceSpec,
    pose: &KeypointSet,
    view_id: u8,
    h: usize,
    w: usize,
) -> Result<Tensor> {
    app.validate()?;
    pose.validate()?;
    if view_id != 1 && view_id != 2 {
        return Err(Error::invalid(format!("view_id must be 1 or 2, got {view_id}")));
    }
    let realized = realized_pose(pose, view_id);
    let p = to_pixels(&realized, h, w);
    let (head_c, torso_c, limb_c) = if view_id == 2 {
        (
            hue_rotate(app.head_color, VIEW2_HUE_SHIFT),
            hue_rotate(app.torso_color, VIEW2_HUE_SHIFT),
            hue_rotate(app.limb_color, VIEW2_HUE_SHIFT),
        )
    } else {
        (app.head_color, app.torso_color, app.limb_color)
    };
    let hh = h as f64;
    let mut canvas = Canvas::filled(h, w, BACKGROUND_SHADE);

    // Painter's order: legs, arms, torso block, head.
    let leg_w = app.leg_width * hh;
    for (a, b) in [
        (joint::R_HIP, joint::R_KNEE),
        (joint::R_KNEE, joint::R_ANKLE),
        (joint::L_HIP, joint::L_KNEE),
        (joint::L_KNEE, joint::L_ANKLE),
    ] {
        canvas.stroke(p[a], p[b], leg_w, limb_c);
    }
    let arm_w = app.arm_width * hh;
    for (a, b) in [
        (joint::R_SHOULDER, joint::R_ELBOW),
        (joint::R_ELBOW, joint::R_WRIST),
        (joint::L_SHOULDER, joint::L_ELBOW),
        (joint::L_ELBOW, joint::L_WRIST),
    ] {
        canvas.stroke(p[a], p[b], arm_w, limb_c);
    }
    let pelvis = [
        (p[joint::R_HIP][0] + p[joint::L_HIP][0]) / 2.0,
        (p[joint::R_HIP][1] + p[joint::L_HIP][1]) / 2.0,
    ];
    let torso_w = app.torso_width * hh;
    canvas.stroke(p[joint::NECK], pelvis, torso_w, torso_c);
    canvas.stroke(p[joint::R_SHOULDER], p[joint::L_SHOULDER], torso_w * 0.6, torso_c);
    canvas.stroke(p[joint::R_HIP], p[joint::L_HIP], torso_w * 0.6, torso_c);
    canvas.disc(p[joint::HEAD], app.head_radius * hh, head_c);

    Ok(canvas.into_tensor())
}

/// Fixed palette distinguishing the 13 limbs in skeleton rasters.
fn limb_palette(i: usize) -> [f64; 3] {
    hsv_to_rgb(i as f64 / 13.0, 0.9, 0.95)
}

/// Rasterize a pose as a skeleton image: one colored stroke per limb plus
/// a small joint dot, on black. This is the conditioning input `ω` for
/// the pose-transfer generators.
pub fn rasterize_skeleton(pose: &KeypointSet, h: usize, w: usize) -> Tensor {
    let p = to_pixels(pose, h, w);
    let mut canvas = Canvas::new(h, w);
    for (i, &(a, b)) in LIMBS.iter().enumerate() {
        canvas.stroke(p[a], p[b], 0.6, limb_palette(i));
    }
    for (i, &(_, child)) in LIMBS.iter().enumerate() {
        canvas.disc(p[child], 0.7, limb_palette(i));
    }
    canvas.into_tensor()
}

// ---------------------------------------------------------------------------
// Corpus generation
// ---------------------------------------------------------------------------

/// Generate the paired two-view corpus plus its skeleton pool.
///
/// Sample order is row-major over `(identity, pose)`; `pairing[i] = (i,
/// i)` because both views render the same person/pose grid.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<CrossViewDataset> {
    if cfg.n_identities == 0 || cfg.n_poses == 0 {
        return Err(Error::invalid("dataset needs at least one identity and pose"));
    }
    if cfg.image_h < 8 || cfg.image_w < 8 {
        return Err(Error::invalid("images must be at least 8x8"));
    }
    let identities: Vec<AppearanceSpec> = (0..cfg.n_identities)
        .map(|i| make_identity(derive_key(cfg.seed, &[tag::IDENTITY, i as u64]), i as u32))
        .collect();
    let poses: Vec<Vec<KeypointSet>> = (0..cfg.n_identities)
        .map(|i| {
            (0..cfg.n_poses)
                .map(|q| make_pose(derive_key(cfg.seed, &[tag::POSE, i as u64, q as u64])))
                .collect()
        })
        .collect();

    let n = cfg.n_identities * cfg.n_poses;
    let render_view = |view_id: u8| -> Result<Vec<ImageSample>> {
        let rendered = par::map_indexed(n, |idx| {
            let i = idx / cfg.n_poses;
            let q = idx % cfg.n_poses;
            render_pedestrian(&identities[i], &poses[i][q], view_id, cfg.image_h, cfg.image_w)
                .map(|pixels| ImageSample {
                    pixels,
                    view_id,
                    person_id: Some(i as u32),
                    pose_id: Some(q as u32),
                    origin: Origin::Original,
                    keypoints: Some(poses[i][q].clone()),
                })
        });
        rendered.into_iter().collect()
    };
    let view1 = render_view(1)?;
    let view2 = render_view(2)?;

    let skeletons = (0..cfg.n_skeletons)
        .map(|k| make_pose(derive_key(cfg.seed, &[tag::SKELETON, k as u64])))
        .collect();

    let ds = CrossViewDataset {
        view1,
        view2,
        skeletons,
        pairing: (0..n).map(|i| (i, i)).collect(),
    };
    ds.validate()?;
    Ok(ds)
}

// ---------------------------------------------------------------------------
// Disk round trip
// ---------------------------------------------------------------------------

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Write a `[3, h, w]` tensor as an 8-bit RGB PNG.
pub fn save_png(pixels: &Tensor, path: &Path) -> Result<()> {
    let (c, h, w) = pixels.dims3();
    if c != 3 {
        return Err(Error::invalid("PNG export expects 3 channels"));
    }
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            img.put_pixel(
                x as u32,
                y as u32,
                image::Rgb([
                    quantize(pixels.at3(0, y, x)),
                    quantize(pixels.at3(1, y, x)),
                    quantize(pixels.at3(2, y, x)),
                ]),
            );
        }
    }
    img.save(path).map_err(|e| Error::Image {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Read an 8-bit RGB PNG into a `[3, h, w]` tensor in `[0, 1]`.
pub fn load_png(path: &Path) -> Result<Tensor> {
    let img = image::open(path)
        .map_err(|e| Error::Image {
            path: path.display().to_string(),
            message: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut t = Tensor::zeros(&[3, h, w]);
    for y in 0..h {
        for x in 0..w {
            let px = img.get_pixel(x as u32, y as u32);
            for c in 0..3 {
                t.set3(c, y, x, px.0[c] as f64 / 255.0);
            }
        }
    }
    Ok(t)
}

/// Dataset directory metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub format_version: u32,
    pub image_h: usize,
    pub image_w: usize,
    pub n_identities: usize,
    pub n_poses: usize,
    pub n_skeletons: usize,
    pub seed: u64,
    /// Pose ids `>= pose_split` are synthesized samples.
    pub pose_split: u32,
}

impl Manifest {
    fn to_text(&self) -> String {
        format!(
            "format_version = {}\nimage_h = {}\nimage_w = {}\nn_identities = {}\nn_poses = {}\nn_skeletons = {}\nseed = {}\npose_split = {}\n",
            self.format_version,
            self.image_h,
            self.image_w,
            self.n_identities,
            self.n_poses,
            self.n_skeletons,
            self.seed,
            self.pose_split
        )
    }

    fn parse(text: &str, path: &Path) -> Result<Manifest> {
        let mut map = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Format(format!(
                    "{}:{}: expected `key = value`, got {line:?}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| -> Result<u64> {
            map.get(k)
                .ok_or_else(|| Error::Format(format!("{}: missing key {k:?}", path.display())))?
                .parse()
                .map_err(|_| Error::Format(format!("{}: key {k:?} is not an integer", path.display())))
        };
        Ok(Manifest {
            format_version: get("format_version")? as u32,
            image_h: get("image_h")? as usize,
            image_w: get("image_w")? as usize,
            n_identities: get("n_identities")? as usize,
            n_poses: get("n_poses")? as usize,
            n_skeletons: get("n_skeletons")? as usize,
            seed: get("seed")?,
            pose_split: get("pose_split")? as u32,
        })
    }
}

/// Read and parse a dataset directory's manifest header.
pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let mpath = dir.join("manifest");
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(mpath.display(), e))?;
    Manifest::parse(&text, &mpath)
}

/// One `sample = ...` manifest row.
struct SampleRow {
    view: u8,
    person: u32,
    pose: u32,
    origin: Origin,
    file: String,
}

fn origin_word(o: Origin) -> &'static str {
    match o {
        Origin::Original => "original",
        Origin::Synthesized => "synthesized",
    }
}

fn parse_sample_rows(text: &str, path: &Path) -> Result<Vec<SampleRow>> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let Some(rhs) = line.trim().strip_prefix("sample") else {
            continue;
        };
        let Some(rhs) = rhs.trim_start().strip_prefix('=') else {
            continue;
        };
        let bad = || {
            Error::Format(format!(
                "{}:{}: expected `sample = <view> <person> <pose> <origin> <file>`",
                path.display(),
                lineno + 1
            ))
        };
        let fields: Vec<&str> = rhs.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(bad());
        }
        let view: u8 = fields[0].parse().map_err(|_| bad())?;
        if view != 1 && view != 2 {
            return Err(bad());
        }
        let origin = match fields[3] {
            "original" => Origin::Original,
            "synthesized" => Origin::Synthesized,
            _ => return Err(bad()),
        };
        rows.push(SampleRow {
            view,
            person: fields[1].parse().map_err(|_| bad())?,
            pose: fields[2].parse().map_err(|_| bad())?,
            origin,
            file: fields[4].to_string(),
        });
    }
    Ok(rows)
}

/// Write a corpus to the documented directory layout.
///
/// Samples must carry person and pose ids (they name the files). The
/// write is deterministic: same dataset, same bytes.
pub fn save_dataset(ds: &CrossViewDataset, cfg: &DatasetConfig, dir: &Path) -> Result<()> {
    ds.validate()?;
    let (_, h, w) = ds
        .view1
        .first()
        .map(|s| s.pixels.dims3())
        .unwrap_or((3, cfg.image_h, cfg.image_w));
    let pose_split = ds
        .view1
        .iter()
        .filter(|s| s.origin == Origin::Original)
        .filter_map(|s| s.pose_id)
        .max()
        .map(|m| m + 1)
        .unwrap_or(cfg.n_poses as u32);
    for sub in ["view1", "view2", "skeletons"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub).display(), e))?;
    }
    let manifest = Manifest {
        format_version: 1,
        image_h: h,
        image_w: w,
        n_identities: cfg.n_identities,
        n_poses: cfg.n_poses,
        n_skeletons: ds.skeletons.len(),
        seed: cfg.seed,
        pose_split,
    };
    let mut manifest_text = manifest.to_text();

    for (view_id, view_name, samples) in [(1u8, "view1", &ds.view1), (2, "view2", &ds.view2)] {
        let mut seen: BTreeMap<(u32, u32), u32> = BTreeMap::new();
        for s in samples.iter() {
            let (p, q) = match (s.person_id, s.pose_id) {
                (Some(p), Some(q)) => (p, q),
                _ => {
                    return Err(Error::invalid(
                        "save_dataset requires person and pose ids on every sample",
                    ))
                }
            };
            let n = seen.entry((p, q)).or_insert(0);
            let stem = if *n == 0 {
                format!("{p}_{q}")
            } else {
                format!("{p}_{q}_{n}")
            };
            *n += 1;
            save_png(&s.pixels, &dir.join(view_name).join(format!("{stem}.png")))?;
            if let Some(kp) = &s.keypoints {
                write_kpts(kp, &dir.join(view_name).join(format!("{stem}.kpts")))?;
            }
            manifest_text.push_str(&format!(
                "sample = {view_id} {p} {q} {} {stem}.png\n",
                origin_word(s.origin)
            ));
        }
    }
    for (k, kp) in ds.skeletons.iter().enumerate() {
        save_png(&rasterize_skeleton(kp, h, w), &dir.join("skeletons").join(format!("{k}.png")))?;
        write_kpts(kp, &dir.join("skeletons").join(format!("{k}.kpts")))?;
    }
    fs::write(dir.join("manifest"), manifest_text)
        .map_err(|e| Error::io(dir.join("manifest").display(), e))?;
    Ok(())
}

/// Write a keypoint set as `x y confidence` lines (6 decimals).
pub fn write_kpts(kp: &KeypointSet, path: &Path) -> Result<()> {
    let mut text = String::new();
    for j in 0..kp.points.len() {
        text.push_str(&format!(
            "{:.6} {:.6} {:.6}\n",
            kp.points[j][0], kp.points[j][1], kp.confidences[j]
        ));
    }
    fs::write(path, text).map_err(|e| Error::io(path.display(), e))
}

/// Read a keypoint set written by [`write_kpts`].
pub fn read_kpts(path: &Path) -> Result<KeypointSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display(), e))?;
    let mut points = Vec::new();
    let mut confidences = Vec::new();
    for line in text.lines() {
        let mut it = line.split_whitespace();
        let mut next = || -> Result<f64> {
            it.next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::Format(format!("{}: bad keypoint line", path.display())))
        };
        points.push([next()?, next()?]);
        confidences.push(next()?);
    }
    let kp = KeypointSet {
        points,
        confidences,
    };
    kp.validate()?;
    Ok(kp)
}

/// Read a corpus back from the directory layout written by
/// [`save_dataset`]. Samples follow the manifest's `sample` rows (or,
/// in row-less directories, `(person, pose)` filename order) and the
/// pairing is re-derived positionally; keys must match across views.
pub fn load_dataset(dir: &Path) -> Result<CrossViewDataset> {
    let mpath = dir.join("manifest");
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(mpath.display(), e))?;
    let manifest = Manifest::parse(&text, &mpath)?;
    if manifest.format_version != 1 {
        return Err(Error::Format(format!(
            "unsupported dataset format_version {}",
            manifest.format_version
        )));
    }
    let rows = parse_sample_rows(&text, &mpath)?;

    let load_rows = |view_name: &str, view_id: u8| -> Result<Vec<ImageSample>> {
        let vdir = dir.join(view_name);
        let sel: Vec<&SampleRow> = rows.iter().filter(|r| r.view == view_id).collect();
        let samples = par::map_indexed(sel.len(), |i| {
            let r = sel[i];
            let stem = r.file.strip_suffix(".png").unwrap_or(&r.file);
            let kpath = vdir.join(format!("{stem}.kpts"));
            let keypoints = if kpath.exists() {
                Some(read_kpts(&kpath)?)
            } else {
                None
            };
            load_png(&vdir.join(&r.file)).map(|pixels| ImageSample {
                pixels,
                view_id,
                person_id: Some(r.person),
                pose_id: Some(r.pose),
                origin: r.origin,
                keypoints,
            })
        });
        samples.into_iter().collect()
    };

    let load_glob = |view_name: &str, view_id: u8| -> Result<Vec<ImageSample>> {
        let vdir = dir.join(view_name);
        let mut keys: Vec<(u32, u32)> = Vec::new();
        for entry in fs::read_dir(&vdir).map_err(|e| Error::io(vdir.display(), e))? {
            let entry = entry.map_err(|e| Error::io(vdir.display(), e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            let Some(stem) = name.strip_suffix(".png") else {
                continue;
            };
            let (p, q) = stem
                .split_once('_')
                .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)))
                .ok_or_else(|| {
                    Error::Format(format!("{}: bad sample filename {name:?}", vdir.display()))
                })?;
            keys.push((p, q));
        }
        keys.sort_unstable();
        let samples = par::map_indexed(keys.len(), |i| {
            let (p, q) = keys[i];
            let kpath = vdir.join(format!("{p}_{q}.kpts"));
            let keypoints = if kpath.exists() {
                Some(read_kpts(&kpath)?)
            } else {
                None
            };
            load_png(&vdir.join(format!("{p}_{q}.png"))).map(|pixels| ImageSample {
                pixels,
                view_id,
                person_id: Some(p),
                pose_id: Some(q),
                origin: if q < manifest.pose_split {
                    Origin::Original
                } else {
                    Origin::Synthesized
                },
                keypoints,
            })
        });
        samples.into_iter().collect()
    };

    let (view1, view2) = if rows.is_empty() {
        (load_glob("view1", 1)?, load_glob("view2", 2)?)
    } else {
        (load_rows("view1", 1)?, load_rows("view2", 2)?)
    };
    if view1.len() != view2.len() {
        return Err(Error::ShapeMismatch(format!(
            "view1 has {} samples, view2 has {}",
            view1.len(),
            view2.len()
        )));
    }
    for (a, b) in view1.iter().zip(&view2) {
        if a.person_id != b.person_id || a.pose_id != b.pose_id {
            return Err(Error::Format(
                "view1/view2 sample keys do not match".into(),
            ));
        }
    }

    let mut skeletons = Vec::with_capacity(manifest.n_skeletons);
    for k in 0..manifest.n_skeletons {
        skeletons.push(read_kpts(&dir.join("skeletons").join(format!("{k}.kpts")))?);
    }

    let pairing = (0..view1.len()).map(|i| (i, i)).collect();
    let ds = CrossViewDataset {
        view1,
        view2,
        skeletons,
        pairing,
    };
    ds.validate()?;
    Ok(ds)
}
