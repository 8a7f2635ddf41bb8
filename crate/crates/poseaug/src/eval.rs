//! Re-identification evaluation: distance matrices, single-shot splits,
//! and cumulative match characteristic (CMC) curves.
//!
//! The protocol is single-shot cross-view matching: the gallery holds
//! exactly one sample per person from one view, probes come from the
//! other view, and a probe scores rank `r` when its true identity is the
//! `r`-th nearest gallery entry. `cmc_curve` accumulates those ranks into
//! the fraction of probes matched within the top `k` for every `k`; the
//! curve is non-decreasing in `k` and ends at exactly 1 whenever every
//! probe identity appears in the gallery.
//!
//! Ties in distance resolve by gallery index order, which keeps curves
//! reproducible and lets an independent brute-force scorer agree bit for
//! bit.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::rng::{stream, tag};
use crate::synthdata::{save_png, CrossViewDataset};
use rand::Rng;

/// Euclidean distance matrix between probe and gallery embeddings.
///
/// Returns `d[i][j] = ‖probe[i] − gallery[j]‖₂` with one row per probe.
pub fn pairwise_distance(probes: &[Vec<f64>], gallery: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if probes.is_empty() || gallery.is_empty() {
        return Err(Error::invalid("pairwise_distance needs non-empty sets"));
    }
    let dim = probes[0].len();
    for e in probes.iter().chain(gallery) {
        if e.len() != dim {
            return Err(Error::ShapeMismatch(format!(
                "embedding dims differ: {} vs {}",
                dim,
                e.len()
            )));
        }
    }
    Ok(probes
        .iter()
        .map(|p| {
            gallery
                .iter()
                .map(|g| {
                    p.iter()
                        .zip(g)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect()
        })
        .collect())
}

/// Single-shot split of a cross-view dataset.
///
/// Picks one view-2 sample per person (seeded, uniform among that
/// person's samples) as the gallery; every view-1 sample becomes a
/// probe. Returns `(probe_indices, gallery_indices)` into `ds.view1` /
/// `ds.view2`.
pub fn single_shot_split(ds: &CrossViewDataset, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if ds.view2.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    // Group view-2 indices by person, in first-appearance order.
    let mut persons: Vec<u32> = Vec::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, s) in ds.view2.iter().enumerate() {
        let pid = s
            .person_id
            .ok_or_else(|| Error::invalid("gallery sample lacks person_id"))?;
        match persons.iter().position(|&p| p == pid) {
            Some(k) => groups[k].push(i),
            None => {
                persons.push(pid);
                groups.push(vec![i]);
            }
        }
    }
    let mut gallery = Vec::with_capacity(groups.len());
    for (k, group) in groups.iter().enumerate() {
        let mut rng = stream(seed, &[tag::SPLIT, persons[k] as u64]);
        gallery.push(group[rng.gen_range(0..group.len())]);
    }
    let probes: Vec<usize> = (0..ds.view1.len()).collect();
    Ok((probes, gallery))
}

/// Cumulative match characteristic over a probe/gallery distance matrix.
///
/// `curve[k]` is the fraction of probes whose true identity sits among
/// the `k+1` nearest gallery entries (ascending distance, ties broken by
/// gallery index). Every probe identity must appear in the gallery.
pub fn cmc_curve(
    distances: &[Vec<f64>],
    probe_ids: &[u32],
    gallery_ids: &[u32],
) -> Result<Vec<f64>> {
    let n_probe = distances.len();
    let n_gallery = gallery_ids.len();
    if n_probe == 0 || n_gallery == 0 {
        return Err(Error::invalid("cmc_curve needs non-empty probe and gallery"));
    }
    if probe_ids.len() != n_probe {
        return Err(Error::ShapeMismatch(format!(
            "{} distance rows vs {} probe ids",
            n_probe,
            probe_ids.len()
        )));
    }
    let mut hits_at = vec![0usize; n_gallery];
    for (i, row) in distances.iter().enumerate() {
        if row.len() != n_gallery {
            return Err(Error::ShapeMismatch(format!(
                "distance row {i} has {} entries, gallery has {n_gallery}",
                row.len()
            )));
        }
        let mut order: Vec<usize> = (0..n_gallery).collect();
        order.sort_by(|&a, &b| {
            row[a]
                .partial_cmp(&row[b])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let rank = order
            .iter()
            .position(|&j| gallery_ids[j] == probe_ids[i])
            .ok_or_else(|| {
                Error::invalid(format!(
                    "probe id {} absent from gallery",
                    probe_ids[i]
                ))
            })?;
        hits_at[rank] += 1;
    }
    let mut curve = Vec::with_capacity(n_gallery);
    let mut cum = 0usize;
    for &h in &hits_at {
        cum += h;
        curve.push(cum as f64 / n_probe as f64);
    }
    Ok(curve)
}

/// Rank-`k` identification rate (`k` is 1-based).
pub fn rank_k_rate(curve: &[f64], k: usize) -> Result<f64> {
    if k == 0 || k > curve.len() {
        return Err(Error::invalid(format!(
            "rank {k} outside curve length {}",
            curve.len()
        )));
    }
    Ok(curve[k - 1])
}

/// Mean RMS distance between paired generated image stacks.
///
/// Both slices must hold equally many same-shape tensors; each pair
/// contributes `‖a − b‖₂ / √numel` and the mean over pairs is returned.
pub fn cross_view_generation_distance(a: &[Tensor], b: &[Tensor]) -> Result<f64> {
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::invalid(format!(
            "need equal non-zero counts, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let mut total = 0.0;
    for (x, y) in a.iter().zip(b) {
        if x.shape() != y.shape() {
            return Err(Error::ShapeMismatch(format!(
                "paired tensors {:?} vs {:?}",
                x.shape(),
                y.shape()
            )));
        }
        let sq: f64 = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(p, q)| (p - q) * (p - q))
            .sum();
        total += (sq / x.numel() as f64).sqrt();
    }
    Ok(total / a.len() as f64)
}

// ---------------------------------------------------------------------------
// Writers
// ---------------------------------------------------------------------------

/// Write a CMC curve as `rank,rate` CSV (1-based ranks, 6 decimals).
pub fn write_cmc_csv(curve: &[f64], path: &Path) -> Result<()> {
    let mut out = String::from("rank,rate\n");
    for (i, r) in curve.iter().enumerate() {
        let _ = writeln!(out, "{},{:.6}", i + 1, r);
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display(), e))
}

/// Write labeled scalar metrics as `name,value` CSV (6 decimals).
pub fn write_metrics_csv(rows: &[(String, f64)], path: &Path) -> Result<()> {
    let mut out = String::from("name,value\n");
    for (name, v) in rows {
        let _ = writeln!(out, "{name},{v:.6}");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display(), e))
}

/// Render CMC curves as a PNG line plot.
///
/// Each `(label, curve)` pair becomes one polyline; the x axis is rank
/// (1..max len), the y axis is match rate in `[0, 1]`. Labels are drawn
/// as color swatches stacked in the lower-right corner (no text
/// rendering), in input order.
pub fn plot_cmc(curves: &[(String, Vec<f64>)], path: &Path) -> Result<()> {
    if curves.is_empty() || curves.iter().any(|(_, c)| c.is_empty()) {
        return Err(Error::invalid("plot needs at least one non-empty curve"));
    }
    let (w, h) = (480usize, 360usize);
    let (ml, mr, mt, mb) = (40usize, 16usize, 16usize, 32usize);
    let (pw, ph) = (w - ml - mr, h - mt - mb);
    let mut img = Tensor::from_vec(&[3, h, w], vec![1.0; 3 * h * w]);

    let mut put = |y: usize, x: usize, c: [f64; 3]| {
        if y < h && x < w {
            for (ch, v) in c.iter().enumerate() {
                img.data_mut()[(ch * h + y) * w + x] = *v;
            }
        }
    };

    let grid = [0.85, 0.85, 0.85];
    let axis = [0.2, 0.2, 0.2];
    for gy in 0..=4 {
        let y = mt + ph - gy * ph / 4;
        for x in ml..=ml + pw {
            put(y, x, grid);
        }
    }
    for x in ml..=ml + pw {
        put(mt + ph, x, axis);
    }
    for y in mt..=mt + ph {
        put(y, ml, axis);
    }

    let max_rank = curves.iter().map(|(_, c)| c.len()).max().unwrap();
    let palette = [
        [0.85, 0.23, 0.18],
        [0.16, 0.42, 0.82],
        [0.15, 0.62, 0.28],
        [0.75, 0.45, 0.05],
        [0.55, 0.20, 0.70],
        [0.05, 0.60, 0.60],
    ];
    for (ci, (_, curve)) in curves.iter().enumerate() {
        let color = palette[ci % palette.len()];
        let px = |rank: usize| {
            if max_rank == 1 {
                ml + pw / 2
            } else {
                ml + (rank * pw) / (max_rank - 1)
            }
        };
        let py = |rate: f64| mt + ph - (rate.clamp(0.0, 1.0) * ph as f64).round() as usize;
        for k in 0..curve.len() {
            let (x1, y1) = (px(k), py(curve[k]));
            if k + 1 < curve.len() {
                let (x2, y2) = (px(k + 1), py(curve[k + 1]));
                let steps = (x2 - x1).max(y2.abs_diff(y1)).max(1);
                for s in 0..=steps {
                    let t = s as f64 / steps as f64;
                    let x = x1 as f64 + t * (x2 as f64 - x1 as f64);
                    let y = y1 as f64 + t * (y2 as f64 - y1 as f64);
                    put(y.round() as usize, x.round() as usize, color);
                    put(y.round() as usize + 1, x.round() as usize, color);
                }
            } else {
                put(y1, x1, color);
            }
        }
        // Legend swatch.
        let sy = mt + ph - 10 - 8 * ci;
        for dy in 0..4 {
            for dx in 0..16 {
                put(sy + dy, ml + pw - 24 + dx, color);
            }
        }
    }
    save_png(&img, path)
}
