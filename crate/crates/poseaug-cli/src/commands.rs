//! One function per subcommand.
//!
//! Every command takes the resolved [`RunConfig`] plus its own inputs,
//! writes artifacts under the configured output directory, prints a
//! one-line summary, and returns the primary artifact (path or metric)
//! so integration tests can drive the pipeline in-process. All
//! randomness is derived from the config's stage seeds, so a command is
//! a pure function of its config and input files.
//!
//! Loss CSVs print components at full precision with absolute epoch
//! indices (a resumed run's rows continue the original numbering), so
//! summing a row's components reproduces its `total` column to
//! round-off.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context, Result};
use rand::Rng;

use poseaug::cpgnet::{
    augment_dataset, train_cpgnet_epochs, AugmentPlan, CpgLossParts, CpgNet, CpgTrainState,
    SharingSpec,
};
use poseaug::crossgan::{
    embed, train_crossgan_epochs, write_embeddings_csv, CrossGan, CrossganLossParts,
    CrossganTrainState,
};
use poseaug::eval::{
    cmc_curve, cross_view_generation_distance, pairwise_distance, plot_cmc, rank_k_rate,
    single_shot_split, write_cmc_csv, write_metrics_csv,
};
use poseaug::rng::{derive_key, stream, tag};
use poseaug::skeleton::SkeletonSample;
use poseaug::synthdata::{
    generate_dataset, load_dataset, rasterize_skeleton, read_manifest, save_dataset,
    CrossViewDataset, DatasetConfig, ImageSample,
};

use crate::checkpoint;
use crate::config::{PairBudget, RunConfig};

/// Generate the synthetic corpus into `<out>/dataset`.
pub fn cmd_gen_data(cfg: &RunConfig) -> Result<PathBuf> {
    let dcfg = cfg.dataset_config();
    let ds = generate_dataset(&dcfg)?;
    let dir = cfg.out_dir.join("dataset");
    save_dataset(&ds, &dcfg, &dir)?;
    println!(
        "gen-data: wrote {} samples per view and {} pool poses to {}",
        ds.view1.len(),
        ds.skeletons.len(),
        dir.display()
    );
    Ok(dir)
}

/// Train the pose-transfer network; write `<out>/cpgnet.ckpt` and
/// `<out>/cpgnet_loss.csv`. With `resume`, continue that checkpoint up
/// to the configured epoch count under its saved training config.
pub fn cmd_train_cpgnet(
    cfg: &RunConfig,
    data_dir: &Path,
    resume: Option<&Path>,
) -> Result<PathBuf> {
    let ds = load_dataset(data_dir)?;
    let out = &cfg.out_dir;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let (mut net, tcfg, mut state) = match resume {
        Some(p) => checkpoint::load_cpgnet(p)
            .with_context(|| format!("resuming from {}", p.display()))?,
        None => {
            let net = CpgNet::new(&cfg.cpg_config())?;
            let tcfg = cfg.cpg_train_config();
            let state = CpgTrainState::new(&net, &tcfg);
            (net, tcfg, state)
        }
    };
    let mcfg = net.config();
    ensure_image_dims(mcfg.image_h, mcfg.image_w, &ds, "the pose-transfer model")?;

    let target = cfg.cpgnet_train.epochs;
    let n = target.saturating_sub(state.epochs_done);
    let start = state.epochs_done;
    let parts = train_cpgnet_epochs(&mut net, &ds, &tcfg, &mut state, n)?;
    write_cpg_loss_csv(&out.join("cpgnet_loss.csv"), start, tcfg.zeta, &parts)?;

    let ckpt = out.join("cpgnet.ckpt");
    checkpoint::save_cpgnet(&ckpt, &net, &tcfg, &state)?;
    println!(
        "train-cpgnet: ran {n} epoch(s) ({} total), checkpoint at {}",
        state.epochs_done,
        ckpt.display()
    );
    Ok(ckpt)
}

/// Augment a corpus with pose-transferred samples into
/// `<out>/augmented` (originals plus one synthesized sample per
/// selected image × pool pose combination).
pub fn cmd_augment(cfg: &RunConfig, ckpt: &Path, data_dir: &Path) -> Result<PathBuf> {
    let ds = load_dataset(data_dir)?;
    let manifest = read_manifest(data_dir)?;
    let (net, _, _) = checkpoint::load_cpgnet(ckpt)
        .with_context(|| format!("loading the pose-transfer checkpoint {}", ckpt.display()))?;
    let mcfg = net.config();
    ensure_image_dims(mcfg.image_h, mcfg.image_w, &ds, "the pose-transfer model")?;

    let plan = match cfg.augment.pairs {
        PairBudget::All(_) => AugmentPlan::All,
        PairBudget::Count(k) => {
            let total = ds.view1.len() * ds.skeletons.len();
            ensure!(
                k as usize <= total,
                "augment.pairs = {k} exceeds the {total} available image × pose combinations"
            );
            // Distinct combinations via a partial Fisher–Yates pass over
            // the flat image × pose grid.
            let mut idx: Vec<usize> = (0..total).collect();
            let mut rng = stream(cfg.augment_seed(), &[tag::AUGMENT]);
            let mut picked = Vec::with_capacity(k as usize);
            for i in 0..k as usize {
                let j = rng.gen_range(i..total);
                idx.swap(i, j);
                picked.push((idx[i] / ds.skeletons.len(), idx[i] % ds.skeletons.len()));
            }
            AugmentPlan::Pairs(picked)
        }
    };
    let (v1, v2) = augment_dataset(
        &net,
        &ds.view1,
        &ds.view2,
        &ds.skeletons,
        &plan,
        cfg.augment_seed(),
    )?;
    let before = ds.view1.len();
    let after = v1.len();
    let aug = CrossViewDataset {
        pairing: (0..after).map(|i| (i, i)).collect(),
        view1: v1,
        view2: v2,
        skeletons: ds.skeletons.clone(),
    };
    let dcfg = DatasetConfig {
        n_identities: manifest.n_identities,
        n_poses: manifest.n_poses,
        n_skeletons: manifest.n_skeletons,
        image_h: manifest.image_h,
        image_w: manifest.image_w,
        seed: manifest.seed,
    };
    let dir = cfg.out_dir.join("augmented");
    save_dataset(&aug, &dcfg, &dir)?;
    println!(
        "augment: grew {before} to {after} samples per view at {}",
        dir.display()
    );
    Ok(dir)
}

/// Train the cross-view matcher; write `<out>/crossgan.ckpt` and
/// `<out>/crossgan_loss.csv`. Resume semantics match
/// [`cmd_train_cpgnet`].
pub fn cmd_train_crossgan(
    cfg: &RunConfig,
    data_dir: &Path,
    resume: Option<&Path>,
) -> Result<PathBuf> {
    let ds = load_dataset(data_dir)?;
    let out = &cfg.out_dir;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let (mut net, tcfg, mut state) = match resume {
        Some(p) => checkpoint::load_crossgan(p)
            .with_context(|| format!("resuming from {}", p.display()))?,
        None => {
            let net = CrossGan::new(&cfg.crossgan_config())?;
            let tcfg = cfg.crossgan_train_config();
            let state = CrossganTrainState::new(&net, &tcfg);
            (net, tcfg, state)
        }
    };
    let mcfg = net.config();
    ensure_image_dims(mcfg.image_h, mcfg.image_w, &ds, "the matcher")?;

    let target = cfg.crossgan_train.epochs;
    let n = target.saturating_sub(state.epochs_done);
    let start = state.epochs_done;
    let parts = train_crossgan_epochs(&mut net, &ds.view1, &ds.view2, &tcfg, &mut state, n)?;
    write_crossgan_loss_csv(&out.join("crossgan_loss.csv"), start, &parts)?;

    let ckpt = out.join("crossgan.ckpt");
    checkpoint::save_crossgan(&ckpt, &net, &tcfg, &state)?;
    println!(
        "train-crossgan: ran {n} epoch(s) ({} total), checkpoint at {}",
        state.epochs_done,
        ckpt.display()
    );
    Ok(ckpt)
}

/// Single-shot retrieval evaluation. Writes `cmc.csv`, `metrics.csv`,
/// `cmc.png`, and `embeddings.csv` under `<out>`; returns the rank-1
/// rate. With `eval.oracle = true` the embedding is the ground-truth
/// identity (a calibration run that must score rank-1 = 1.0) and no
/// checkpoint is needed.
pub fn cmd_eval(cfg: &RunConfig, ckpt: Option<&Path>, data_dir: &Path) -> Result<f64> {
    let ds = load_dataset(data_dir)?;
    let out = &cfg.out_dir;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let (probes, gallery) = single_shot_split(&ds, cfg.eval_seed())?;
    let person = |s: &ImageSample| -> Result<u32> {
        s.person_id
            .ok_or_else(|| anyhow!("evaluation needs person ids on every sample"))
    };
    let probe_ids: Vec<u32> = probes
        .iter()
        .map(|&i| person(&ds.view1[i]))
        .collect::<Result<_>>()?;
    let gallery_ids: Vec<u32> = gallery
        .iter()
        .map(|&i| person(&ds.view2[i]))
        .collect::<Result<_>>()?;

    let (probe_embs, gallery_embs) = if cfg.eval.oracle {
        (
            probe_ids.iter().map(|&p| vec![p as f64]).collect::<Vec<_>>(),
            gallery_ids.iter().map(|&p| vec![p as f64]).collect::<Vec<_>>(),
        )
    } else {
        let ckpt = ckpt.ok_or_else(|| {
            anyhow!("eval needs a matcher checkpoint unless eval.oracle = true")
        })?;
        let (net, _, _) = checkpoint::load_crossgan(ckpt)
            .with_context(|| format!("loading the matcher checkpoint {}", ckpt.display()))?;
        let mcfg = net.config();
        ensure_image_dims(mcfg.image_h, mcfg.image_w, &ds, "the matcher")?;
        let p = probes
            .iter()
            .map(|&i| embed(&net, &ds.view1[i], 1).map_err(anyhow::Error::new))
            .collect::<Result<Vec<_>>>()?;
        let g = gallery
            .iter()
            .map(|&i| embed(&net, &ds.view2[i], 2).map_err(anyhow::Error::new))
            .collect::<Result<Vec<_>>>()?;
        (p, g)
    };

    let dists = pairwise_distance(&probe_embs, &gallery_embs)?;
    let curve = cmc_curve(&dists, &probe_ids, &gallery_ids)?;
    write_cmc_csv(&curve, &out.join("cmc.csv"))?;
    let mut metric_rows = Vec::new();
    for &k in &cfg.eval.ranks {
        if k >= 1 && k <= curve.len() {
            metric_rows.push((format!("rank_{k}"), rank_k_rate(&curve, k)?));
        }
    }
    write_metrics_csv(&metric_rows, &out.join("metrics.csv"))?;
    plot_cmc(&[("matcher".to_string(), curve.clone())], &out.join("cmc.png"))?;

    let mut emb_rows: Vec<(usize, u8, Vec<f64>)> = Vec::new();
    for (k, &i) in probes.iter().enumerate() {
        emb_rows.push((i, 1, probe_embs[k].clone()));
    }
    for (k, &i) in gallery.iter().enumerate() {
        emb_rows.push((i, 2, gallery_embs[k].clone()));
    }
    write_embeddings_csv(&emb_rows, &out.join("embeddings.csv"))?;

    let rank1 = curve[0];
    println!(
        "eval: rank-1 {rank1:.4} over {} probes and {} gallery identities",
        probes.len(),
        gallery.len()
    );
    Ok(rank1)
}

/// One ablation measurement: mean cross-view RMS distance between images
/// generated in both views from the same appearance pair and pool pose.
pub fn cross_view_transfer_distance(
    net: &CpgNet,
    ds: &CrossViewDataset,
    seed: u64,
) -> Result<f64> {
    ensure!(
        !ds.skeletons.is_empty(),
        "the transfer distance needs a non-empty pose pool"
    );
    let (h, w) = (net.config().image_h, net.config().image_w);
    let rasters: Vec<SkeletonSample> = ds
        .skeletons
        .iter()
        .map(|kp| SkeletonSample {
            keypoints: kp.clone(),
            rendered: rasterize_skeleton(kp, h, w),
        })
        .collect();
    let mut a = Vec::with_capacity(ds.pairing.len());
    let mut b = Vec::with_capacity(ds.pairing.len());
    for (t, &(i, j)) in ds.pairing.iter().enumerate() {
        let sk = &rasters[t % rasters.len()];
        let noise = derive_key(seed, &[t as u64]);
        a.push(net.generate(1, sk, &ds.view1[i], noise)?.pixels);
        b.push(net.generate(2, sk, &ds.view2[j], noise)?.pixels);
    }
    cross_view_generation_distance(&a, &b).map_err(anyhow::Error::new)
}

/// Sweep weight-sharing depths, train each configuration over several
/// seeds, and write `<out>/ablation.csv` with one distance per run.
pub fn cmd_ablate(cfg: &RunConfig, data_dir: &Path) -> Result<PathBuf> {
    let ds = load_dataset(data_dir)?;
    let out = &cfg.out_dir;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let base = cfg.cpg_config();
    ensure_image_dims(base.image_h, base.image_w, &ds, "the pose-transfer model")?;

    let mut csv = String::from("sweep,enc_shared,dec_shared,disc_shared,seed_index,distance\n");
    let sweeps: [(&str, &[usize]); 2] = [
        ("generator", &cfg.ablate.gen_levels),
        ("discriminator", &cfg.ablate.disc_levels),
    ];
    for (sweep, levels) in sweeps {
        for &level in levels {
            let mut sum = 0.0;
            for k in 0..cfg.ablate.seeds {
                let mut c = base.clone();
                c.sharing = if sweep == "generator" {
                    SharingSpec::new(level, level, base.sharing.disc)
                } else {
                    SharingSpec::new(base.sharing.enc, base.sharing.dec, level)
                };
                c.seed = derive_key(cfg.ablate_seed(k), &[tag::INIT]);
                let mut tcfg = cfg.cpg_train_config();
                tcfg.epochs = cfg.ablate.epochs;
                tcfg.seed = derive_key(cfg.ablate_seed(k), &[tag::SHUFFLE]);

                let mut net = CpgNet::new(&c)?;
                let mut state = CpgTrainState::new(&net, &tcfg);
                train_cpgnet_epochs(&mut net, &ds, &tcfg, &mut state, tcfg.epochs)?;
                let d = cross_view_transfer_distance(
                    &net,
                    &ds,
                    derive_key(cfg.ablate_seed(k), &[tag::NOISE]),
                )?;
                sum += d;
                csv.push_str(&format!(
                    "{sweep},{},{},{},{k},{d}\n",
                    c.sharing.enc, c.sharing.dec, c.sharing.disc
                ));
            }
            println!(
                "ablate-sharing: {sweep} sweep at {level} tied layer(s): mean distance {:.6}",
                sum / cfg.ablate.seeds as f64
            );
        }
    }
    let path = out.join("ablation.csv");
    fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
    println!("ablate-sharing: wrote {}", path.display());
    Ok(path)
}

// ---------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------

fn ensure_image_dims(h: usize, w: usize, ds: &CrossViewDataset, what: &str) -> Result<()> {
    if let Some(s) = ds.view1.first() {
        let (c, ih, iw) = s.pixels.dims3();
        if c != 3 || ih != h || iw != w {
            bail!(
                "checkpoint/model mismatch: {what} expects {h}×{w} images but the dataset \
                 holds {ih}×{iw}"
            );
        }
    }
    Ok(())
}

fn write_cpg_loss_csv(
    path: &Path,
    start_epoch: usize,
    zeta: f64,
    parts: &[CpgLossParts],
) -> Result<()> {
    let mut s =
        String::from("epoch,adversarial_v1,adversarial_v2,weighted_l1_v1,weighted_l1_v2,total\n");
    for (i, p) in parts.iter().enumerate() {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            start_epoch + i,
            p.cgan[0],
            p.cgan[1],
            zeta * p.l1[0],
            zeta * p.l1[1],
            p.total
        ));
    }
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

fn write_crossgan_loss_csv(
    path: &Path,
    start_epoch: usize,
    parts: &[CrossganLossParts],
) -> Result<()> {
    let mut s = String::from("epoch,vae,align,gan,total\n");
    for (i, p) in parts.iter().enumerate() {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            start_epoch + i,
            p.vae,
            p.align,
            p.gan,
            p.total
        ));
    }
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::load_config;

    fn tiny_cfg(out: &Path) -> RunConfig {
        let sets = [
            "dataset.n_identities=3",
            "dataset.n_poses=2",
            "dataset.n_skeletons=2",
            "dataset.image_h=8",
            "dataset.image_w=8",
            "cpgnet.enc_channels=[2,2,3]",
            "cpgnet.bottleneck=4",
            "cpgnet.disc_channels=[2,2,2]",
            "cpgnet.sharing_enc=2",
            "cpgnet.sharing_dec=2",
            "cpgnet.sharing_disc=2",
            "cpgnet_train.epochs=1",
            "cpgnet_train.batch_size=4",
            "crossgan.latent_dim=2",
            "crossgan.enc_hidden=2",
            "crossgan.gen_channels=1",
            "crossgan.disc_channels=1",
            "crossgan.disc_hidden=2",
            "crossgan_train.epochs=1",
            "crossgan_train.batch_size=4",
            "ablate.seeds=1",
            "ablate.epochs=1",
            "ablate.gen_levels=[0,2]",
            "ablate.disc_levels=[0,2]",
        ];
        let sets: Vec<String> = sets.iter().map(|s| s.to_string()).collect();
        load_config(None, &sets, Some(9), Some(out)).unwrap()
    }

    #[test]
    fn pipeline_runs_end_to_end_at_toy_scale() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg(dir.path());

        let data = cmd_gen_data(&cfg).unwrap();
        let ckpt = cmd_train_cpgnet(&cfg, &data, None).unwrap();
        assert!(ckpt.exists());
        assert!(dir.path().join("cpgnet_loss.csv").exists());

        let aug = cmd_augment(&cfg, &ckpt, &data).unwrap();
        let ds = load_dataset(&aug).unwrap();
        // 6 originals + 6 images × 2 poses synthesized, per view.
        assert_eq!(ds.view1.len(), 6 + 12);

        let mckpt = cmd_train_crossgan(&cfg, &aug, None).unwrap();
        let rank1 = cmd_eval(&cfg, Some(&mckpt), &aug).unwrap();
        assert!((0.0..=1.0).contains(&rank1));
        for f in ["cmc.csv", "metrics.csv", "cmc.png", "embeddings.csv", "crossgan_loss.csv"] {
            assert!(dir.path().join(f).exists(), "missing {f}");
        }
    }

    #[test]
    fn oracle_eval_scores_perfect_rank_one() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_cfg(dir.path());
        cfg.eval.oracle = true;
        let data = cmd_gen_data(&cfg).unwrap();
        let rank1 = cmd_eval(&cfg, None, &data).unwrap();
        assert_eq!(rank1, 1.0);
    }

    #[test]
    fn zero_pair_budget_copies_the_input() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_cfg(dir.path());
        cfg.augment.pairs = PairBudget::Count(0);
        let data = cmd_gen_data(&cfg).unwrap();
        let ckpt = cmd_train_cpgnet(&cfg, &data, None).unwrap();
        let aug = cmd_augment(&cfg, &ckpt, &data).unwrap();
        let a = load_dataset(&data).unwrap();
        let b = load_dataset(&aug).unwrap();
        assert_eq!(a.view1.len(), b.view1.len());
        for (x, y) in a.view1.iter().zip(&b.view1) {
            assert_eq!(x.person_id, y.person_id);
            assert_eq!(x.pose_id, y.pose_id);
            assert_eq!(x.pixels.data(), y.pixels.data());
        }
    }

    #[test]
    fn counted_pair_budget_adds_exactly_that_many() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_cfg(dir.path());
        cfg.augment.pairs = PairBudget::Count(5);
        let data = cmd_gen_data(&cfg).unwrap();
        let ckpt = cmd_train_cpgnet(&cfg, &data, None).unwrap();
        let aug = cmd_augment(&cfg, &ckpt, &data).unwrap();
        let ds = load_dataset(&aug).unwrap();
        assert_eq!(ds.view1.len(), 6 + 5);
        assert_eq!(ds.view2.len(), 6 + 5);
    }

    #[test]
    fn resume_continues_the_loss_trajectory() {
        let dir1 = tempfile::tempdir().unwrap();
        let mut cfg1 = tiny_cfg(dir1.path());
        cfg1.cpgnet_train.epochs = 2;
        let data = cmd_gen_data(&cfg1).unwrap();
        cmd_train_cpgnet(&cfg1, &data, None).unwrap();
        let straight = fs::read_to_string(dir1.path().join("cpgnet_loss.csv")).unwrap();

        // Same seed, one epoch, then resume for the second.
        let dir2 = tempfile::tempdir().unwrap();
        let mut cfg2 = tiny_cfg(dir2.path());
        cfg2.cpgnet_train.epochs = 1;
        let data2 = cmd_gen_data(&cfg2).unwrap();
        let ckpt = cmd_train_cpgnet(&cfg2, &data2, None).unwrap();
        cfg2.cpgnet_train.epochs = 2;
        cmd_train_cpgnet(&cfg2, &data2, Some(&ckpt)).unwrap();
        let resumed = fs::read_to_string(dir2.path().join("cpgnet_loss.csv")).unwrap();

        // The resumed CSV holds exactly the straight run's second row.
        let row1 = straight.lines().nth(2).unwrap();
        let rrow = resumed.lines().nth(1).unwrap();
        assert_eq!(row1, rrow);
    }

    #[test]
    fn ablation_writes_one_row_per_run() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg(dir.path());
        let data = cmd_gen_data(&cfg).unwrap();
        let path = cmd_ablate(&cfg, &data).unwrap();
        let text = fs::read_to_string(path).unwrap();
        // Header + 2 sweeps × 2 levels × 1 seed.
        assert_eq!(text.lines().count(), 1 + 4);
        assert!(text.starts_with("sweep,enc_shared,dec_shared,disc_shared,seed_index,distance"));
    }
}
