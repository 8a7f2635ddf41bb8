//! Scratch measurements (not part of the suite; run with --ignored).

use std::time::Instant;

use poseaug::cpgnet::{
    augment_dataset, cgan_loss, l1_loss, triples_from_view, AugmentPlan, CpgConfig, CpgNet,
    CpgTrainConfig, CpgTrainState, SharingSpec, SkipMode, train_cpgnet_epochs,
};
use poseaug::crossgan::{
    embed, train_crossgan_epochs, CrossGan, CrossGanConfig, CrossganTrainConfig,
    CrossganTrainState, PairingMode,
};
use poseaug::eval::{cmc_curve, cross_view_generation_distance, pairwise_distance, rank_k_rate, single_shot_split};
use poseaug::nn::OptimConfig;
use poseaug::rng::{derive_key, stream, tag};
use poseaug::skeleton::{
    extract_keypoints, paf_forward, train_paf, PafConfig, PafEstimator, PafTrainConfig,
    SkeletonSample,
};
use poseaug::synthdata::{
    generate_dataset, rasterize_skeleton, realized_pose, DatasetConfig, KeypointSet,
};

fn kp_error(a: &KeypointSet, b: &KeypointSet) -> f64 {
    a.points
        .iter()
        .zip(&b.points)
        .map(|(p, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt())
        .sum::<f64>()
        / a.points.len() as f64
}

#[test]
#[ignore]
fn t1_param_counts() {
    for (fc, sh, ns) in [(2usize, 2usize, 2usize), (2, 2, 1), (1, 1, 2), (1, 1, 1), (2, 1, 1)] {
        let paf = PafEstimator::new(&PafConfig {
            image_h: 8,
            image_w: 8,
            feat_channels: fc,
            stage_hidden: sh,
            n_stages: ns,
            seed: 5,
            ..PafConfig::default()
        })
        .unwrap();
        println!("paf feat {fc} hidden {sh} stages {ns}: n_scalars = {}", paf.store.n_scalars());
    }

    for sh in [SharingSpec::new(2, 2, 2), SharingSpec::new(4, 4, 4)] {
        let cpg = CpgNet::new(&CpgConfig {
            image_h: 8,
            image_w: 8,
            enc_channels: [1, 1, 1],
            bottleneck: 1,
            disc_channels: [1, 1, 1],
            sharing: sh,
            skip: SkipMode::Appearance,
            dropout: 0.5,
            seed: 3,
        })
        .unwrap();
        println!("cpg tiny sharing {sh:?} n_scalars = {}", cpg.store.n_scalars());
    }

    for eh in [1usize, 2] {
        let cg = CrossGan::new(&CrossGanConfig {
            image_h: 8,
            image_w: 8,
            latent_dim: 2,
            enc_hidden: eh,
            gen_channels: 1,
            disc_channels: 1,
            disc_hidden: 2,
            delta: 0.1,
            seed: 11,
        })
        .unwrap();
        println!("crossgan tiny enc_hidden {eh} n_scalars = {}", cg.store.n_scalars());
    }
}

#[test]
#[ignore]
fn t2_paf_training_cost_and_quality() {
    let ds = generate_dataset(&DatasetConfig::default()).unwrap();
    let (fc, sh): (usize, usize) = match std::env::var("PAF_SIZE").as_deref() {
        Ok("big") => (10, 20),
        _ => (6, 12),
    };
    let n_train: usize = std::env::var("PAF_N").ok().and_then(|v| v.parse().ok()).unwrap_or(64);
    let cfg = PafConfig {
        image_h: 32,
        image_w: 16,
        feat_channels: fc,
        stage_hidden: sh,
        n_stages: 2,
        seed: 3,
        ..PafConfig::default()
    };
    let mut est = PafEstimator::new(&cfg).unwrap();
    println!("paf feat {fc} hidden {sh} n_scalars = {} train on {n_train}", est.store.n_scalars());
    let samples: Vec<_> = ds.view1[..n_train]
        .iter()
        .map(|s| (s.pixels.clone(), s.keypoints.clone().unwrap()))
        .collect();
    let err_of = |est: &PafEstimator| {
        // held-out renders: step through the rest of the corpus
        let mut errs = Vec::new();
        for s in ds.view1.iter().skip(n_train).step_by(12) {
            let out = paf_forward(est, &s.pixels).unwrap();
            let kp = extract_keypoints(&out.last().unwrap().confidence_maps);
            errs.push(kp_error(&kp, s.keypoints.as_ref().unwrap()));
        }
        errs.iter().sum::<f64>() / errs.len() as f64
    };
    let mut done = 0;
    for chunk in [30usize, 60, 120, 200] {
        let t0 = Instant::now();
        let tcfg = PafTrainConfig {
            epochs: chunk,
            batch_size: 16,
            optimizer: OptimConfig::adam(1e-3),
            seed: 7 + done as u64,
        };
        let hist = train_paf(&mut est, &samples, &tcfg).unwrap();
        done += chunk;
        println!(
            "~{done} epochs (+{:.0}s): loss {:.1} held-out extraction err {:.4}",
            t0.elapsed().as_secs_f64(),
            hist.last().unwrap(),
            err_of(&est)
        );
    }
}

#[test]
#[ignore]
fn t3_cpg_epoch_cost() {
    let ds = generate_dataset(&DatasetConfig::default()).unwrap();
    for (name, enc, bn, disc) in [
        ("small [2,3,4]/8", [2usize, 3, 4], 8usize, [2usize, 3, 4]),
        ("tiny  [1,2,3]/4", [1, 2, 3], 4, [1, 2, 3]),
    ] {
        let cfg = CpgConfig {
            image_h: 32,
            image_w: 16,
            enc_channels: enc,
            bottleneck: bn,
            disc_channels: disc,
            sharing: SharingSpec::new(4, 4, 2),
            skip: SkipMode::Skeleton,
            dropout: 0.5,
            seed: 11,
        };
        let mut net = CpgNet::new(&cfg).unwrap();
        let tcfg = CpgTrainConfig {
            epochs: 2,
            batch_size: 16,
            zeta: 100.0,
            optim: OptimConfig::adam(1e-3),
            seed: 5,
        };
        let mut state = CpgTrainState::new(&net, &tcfg);
        let t0 = Instant::now();
        let hist = train_cpgnet_epochs(&mut net, &ds, &tcfg, &mut state, 2).unwrap();
        println!(
            "{name}: n={} 2 epochs (256/view, b16) {:.1}s  l1 {:.4}->{:.4}",
            net.store.n_scalars(),
            t0.elapsed().as_secs_f64(),
            hist[0].l1[0] + hist[0].l1[1],
            hist[1].l1[0] + hist[1].l1[1],
        );
    }
}

#[test]
#[ignore]
fn t4_cpg_smoke_trajectory() {
    // Candidate for criterion 6: measure L1 halving + transfer win rate.
    let ds = generate_dataset(&DatasetConfig::default()).unwrap();
    let skip = match std::env::var("SKIP_MODE").as_deref() {
        Ok("appearance") => SkipMode::Appearance,
        _ => SkipMode::Skeleton,
    };
    let enc: [usize; 3] = [2, 3, 4];
    let bn = 8;
    println!("skip mode: {skip:?} enc {enc:?}/{bn}");
    let cfg = CpgConfig {
        image_h: 32,
        image_w: 16,
        enc_channels: enc,
        bottleneck: bn,
        disc_channels: [2, 3, 4],
        sharing: SharingSpec::new(4, 4, 2),
        skip,
        dropout: 0.5,
        seed: 11,
    };
    let mut net = CpgNet::new(&cfg).unwrap();
    let tcfg = CpgTrainConfig {
        epochs: 200,
        batch_size: 16,
        zeta: 100.0,
        optim: OptimConfig::adam(1e-3),
        seed: 5,
    };

    // initial L1 on the corpus (fixed noise seed)
    let t1 = triples_from_view(&ds.view1, 32, 16).unwrap();
    let t2 = triples_from_view(&ds.view2, 32, 16).unwrap();
    let l1_of = |net: &CpgNet| {
        (l1_loss(net, 1, &t1, 999).unwrap() + l1_loss(net, 2, &t2, 999).unwrap()) / 2.0
    };
    let cgan_of = |net: &CpgNet| {
        (cgan_loss(net, 1, &t1, 999).unwrap() + cgan_loss(net, 2, &t2, 999).unwrap()) / 2.0
    };
    let init_l1 = l1_of(&net);
    println!("initial l1 {init_l1:.4}  cgan {:.4}", cgan_of(&net));

    // PAF estimator for the keypoint comparison
    let pcfg = PafConfig {
        image_h: 32,
        image_w: 16,
        feat_channels: 6,
        stage_hidden: 12,
        n_stages: 2,
        seed: 3,
        ..PafConfig::default()
    };
    let mut est = PafEstimator::new(&pcfg).unwrap();
    let psamples: Vec<_> = ds.view1[..64]
        .iter()
        .map(|s| (s.pixels.clone(), s.keypoints.clone().unwrap()))
        .collect();
    let tp = Instant::now();
    train_paf(
        &mut est,
        &psamples,
        &PafTrainConfig {
            epochs: 120,
            batch_size: 16,
            optimizer: OptimConfig::adam(1e-3),
            seed: 7,
        },
    )
    .unwrap();
    println!("paf trained 120 epochs in {:.1}s", tp.elapsed().as_secs_f64());

    let win_rate = |net: &CpgNet, est: &PafEstimator| {
        let mut wins = 0;
        let mut r = stream(42, &[tag::SPLIT]);
        use rand::Rng;
        for t in 0..100u64 {
            let ai = r.gen_range(0..ds.view1.len());
            let ki = r.gen_range(0..ds.skeletons.len());
            let app = &ds.view1[ai];
            let kp = &ds.skeletons[ki];
            let sk = SkeletonSample {
                keypoints: kp.clone(),
                rendered: rasterize_skeleton(kp, 32, 16),
            };
            let gen = net.generate(1, &sk, app, derive_key(77, &[t])).unwrap();
            let out = paf_forward(est, &gen.pixels).unwrap();
            let got = extract_keypoints(&out.last().unwrap().confidence_maps);
            let e_drive = kp_error(&got, &realized_pose(kp, 1));
            let e_app = kp_error(&got, &realized_pose(app.keypoints.as_ref().unwrap(), 1));
            if e_drive < e_app {
                wins += 1;
            }
        }
        wins
    };

    let mut state = CpgTrainState::new(&net, &tcfg);
    let mut done = 0usize;
    for chunk in [20usize, 30, 50, 100] {
        let t0 = Instant::now();
        train_cpgnet_epochs(&mut net, &ds, &tcfg, &mut state, chunk).unwrap();
        done += chunk;
        let l1 = l1_of(&net);
        let w = win_rate(&net, &est);
        println!(
            "after {done} epochs (+{:.0}s): l1 {:.4} ({:.0}% of init)  cgan {:.4}  win {w}/100",
            t0.elapsed().as_secs_f64(),
            l1,
            100.0 * l1 / init_l1,
            cgan_of(&net),
        );
    }
}

#[test]
#[ignore]
fn t5_ablation_trend() {
    let ds = generate_dataset(&DatasetConfig {
        n_identities: 8,
        n_poses: 4,
        n_skeletons: 8,
        image_h: 16,
        image_w: 8,
        seed: 3,
    })
    .unwrap();
    let epochs: usize = std::env::var("ABL_EPOCHS").ok().and_then(|v| v.parse().ok()).unwrap_or(40);
    let distance = |net: &CpgNet, seed: u64| {
        let mut g1 = Vec::new();
        let mut g2 = Vec::new();
        for (t, &(i1, i2)) in ds.pairing.iter().enumerate() {
            let kp = &ds.skeletons[t % ds.skeletons.len()];
            let sk = SkeletonSample {
                keypoints: kp.clone(),
                rendered: rasterize_skeleton(kp, 16, 8),
            };
            let noise = derive_key(seed, &[t as u64]);
            g1.push(net.generate(1, &sk, &ds.view1[i1], noise).unwrap().pixels);
            g2.push(net.generate(2, &sk, &ds.view2[i2], noise).unwrap().pixels);
        }
        cross_view_generation_distance(&g1, &g2).unwrap()
    };
    let run = |sh: SharingSpec, seed_idx: u64| {
        let cfg = CpgConfig {
            image_h: 16,
            image_w: 8,
            enc_channels: [2, 2, 3],
            bottleneck: 4,
            disc_channels: [2, 2, 2],
            sharing: sh,
            skip: SkipMode::Skeleton,
            dropout: 0.5,
            seed: derive_key(1000 + seed_idx, &[tag::INIT]),
        };
        let mut net = CpgNet::new(&cfg).unwrap();
        let tcfg = CpgTrainConfig {
            epochs,
            batch_size: 8,
            zeta: 100.0,
            optim: OptimConfig::adam(1e-3),
            seed: derive_key(1000 + seed_idx, &[tag::SHUFFLE]),
        };
        let mut state = CpgTrainState::new(&net, &tcfg);
        train_cpgnet_epochs(&mut net, &ds, &tcfg, &mut state, epochs).unwrap();
        distance(&net, derive_key(1000 + seed_idx, &[tag::NOISE]))
    };
    let t0 = Instant::now();
    for sh in [
        SharingSpec::new(1, 1, 2),
        SharingSpec::new(4, 4, 2),
        SharingSpec::new(4, 4, 0),
        SharingSpec::new(4, 4, 4),
    ] {
        let ds5: Vec<f64> = (0..5).map(|k| run(sh, k)).collect();
        let mean = ds5.iter().sum::<f64>() / 5.0;
        println!("sharing {sh:?}: mean {mean:.4}  {ds5:?}");
    }
    println!("total {:.0}s for 20 runs at {epochs} epochs", t0.elapsed().as_secs_f64());
}

#[test]
#[ignore]
fn t6_crossgan_separation() {
    // train corpus (augmented) + held-out corpus
    let train_ds = generate_dataset(&DatasetConfig {
        n_identities: 24,
        n_poses: 4,
        n_skeletons: 8,
        image_h: 16,
        image_w: 8,
        seed: 21,
    })
    .unwrap();
    let held = generate_dataset(&DatasetConfig {
        n_identities: 32,
        n_poses: 4,
        n_skeletons: 8,
        image_h: 16,
        image_w: 8,
        seed: 77,
    })
    .unwrap();

    // quick cpg for augmentation
    let cpg_cfg = CpgConfig {
        image_h: 16,
        image_w: 8,
        enc_channels: [1, 2, 3],
        bottleneck: 4,
        disc_channels: [1, 2, 3],
        sharing: SharingSpec::new(4, 4, 2),
        skip: SkipMode::Skeleton,
        dropout: 0.5,
        seed: 11,
    };
    let mut cpg = CpgNet::new(&cpg_cfg).unwrap();
    let tcfg = CpgTrainConfig {
        epochs: 20,
        batch_size: 16,
        zeta: 100.0,
        optim: OptimConfig::adam(1e-3),
        seed: 5,
    };
    let mut st = CpgTrainState::new(&cpg, &tcfg);
    let t0 = Instant::now();
    train_cpgnet_epochs(&mut cpg, &train_ds, &tcfg, &mut st, 20).unwrap();
    println!("cpg 20 epochs for augmentation: {:.0}s", t0.elapsed().as_secs_f64());
    // budget: one synthesized sample per original
    let pairs: Vec<(usize, usize)> = (0..train_ds.view1.len())
        .map(|l| (l, l % train_ds.skeletons.len()))
        .collect();
    let (a1, a2) = augment_dataset(
        &cpg,
        &train_ds.view1,
        &train_ds.view2,
        &train_ds.skeletons,
        &AugmentPlan::Pairs(pairs),
        99,
    )
    .unwrap();
    println!("augmented corpus: {} per view", a1.len());

    let ccfg = CrossGanConfig {
        image_h: 16,
        image_w: 8,
        latent_dim: 16,
        enc_hidden: 32,
        gen_channels: 6,
        disc_channels: 6,
        disc_hidden: 16,
        delta: 0.1,
        seed: 13,
    };
    let mut net = CrossGan::new(&ccfg).unwrap();
    println!("crossgan n_scalars = {}", net.store.n_scalars());
    let ctcfg = CrossganTrainConfig {
        epochs: 100,
        batch_size: 16,
        optim: OptimConfig::adam(1e-3),
        pairing: PairingMode::LabelPaired,
        seed: 9,
    };
    let mut cst = CrossganTrainState::new(&net, &ctcfg);

    let measure = |net: &CrossGan| {
        let e1: Vec<Vec<f64>> = held.view1.iter().map(|s| embed(net, s, 1).unwrap()).collect();
        let e2: Vec<Vec<f64>> = held.view2.iter().map(|s| embed(net, s, 2).unwrap()).collect();
        let d = pairwise_distance(&e1, &e2).unwrap();
        let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0usize, 0.0, 0usize);
        for (i, row) in d.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if held.view1[i].person_id == held.view2[j].person_id {
                    intra += v;
                    ni += 1;
                } else {
                    inter += v;
                    nx += 1;
                }
            }
        }
        let (probes, gallery) = single_shot_split(&held, 55).unwrap();
        let pe: Vec<Vec<f64>> = probes.iter().map(|&i| e1[i].clone()).collect();
        let ge: Vec<Vec<f64>> = gallery.iter().map(|&j| e2[j].clone()).collect();
        let pid: Vec<u32> = probes.iter().map(|&i| held.view1[i].person_id.unwrap()).collect();
        let gid: Vec<u32> = gallery.iter().map(|&j| held.view2[j].person_id.unwrap()).collect();
        let curve = cmc_curve(&pairwise_distance(&pe, &ge).unwrap(), &pid, &gid).unwrap();
        (
            intra / ni as f64,
            inter / nx as f64,
            rank_k_rate(&curve, 1).unwrap(),
        )
    };

    let mut done = 0;
    for chunk in [20usize, 30, 50] {
        let t0 = Instant::now();
        train_crossgan_epochs(&mut net, &a1, &a2, &ctcfg, &mut cst, chunk).unwrap();
        done += chunk;
        let (intra, inter, r1) = measure(&net);
        println!(
            "after {done} epochs (+{:.0}s): intra {intra:.4} inter {inter:.4} rank1 {r1:.4} (3/32 = {:.4})",
            t0.elapsed().as_secs_f64(),
            3.0 / 32.0
        );
    }
}

#[test]
#[ignore]
fn t7_augment_all_cost() {
    let ds = generate_dataset(&DatasetConfig::default()).unwrap();
    let cfg = CpgConfig {
        image_h: 32,
        image_w: 16,
        enc_channels: [1, 2, 3],
        bottleneck: 4,
        disc_channels: [1, 2, 3],
        sharing: SharingSpec::new(4, 4, 2),
        skip: SkipMode::Skeleton,
        dropout: 0.5,
        seed: 11,
    };
    let net = CpgNet::new(&cfg).unwrap();
    let t0 = Instant::now();
    let (a1, a2) = augment_dataset(&net, &ds.view1, &ds.view2, &ds.skeletons, &AugmentPlan::All, 31).unwrap();
    println!(
        "augment all: {} + {} samples in {:.0}s (corpus gen not counted)",
        a1.len(),
        a2.len(),
        t0.elapsed().as_secs_f64()
    );
}
