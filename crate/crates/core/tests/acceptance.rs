//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero when
//! any criterion fails.

use std::time::{Duration, Instant};

use firm_dti::checkpoint::Checkpoint;
use firm_dti::cli::gradcheck_seeds;
use firm_dti::config::{Ablation, RunConfig};
use firm_dti::data::{
    decode_store, encode_store, generate_synthetic, EmbeddingStore, LabelKind, Record, Split,
    SyntheticConfig,
};
use firm_dti::metrics::{
    aupr, auroc, curve_jump_bound, export_distance_curve, head_at_distance, pcc,
};
use firm_dti::model::{
    cosine_distance, film_forward, forward, head_forward, rbf_centers, rbf_features, FilmMode,
    ForwardOptions, ModelShape,
};
use firm_dti::objectives::{
    bce_logit_loss, huber_loss, total_loss, triplet_loss, BatchTerms, LossConfig, TaskMode,
};
use firm_dti::optim::{adamw_step, lr_at, OptimConfig, OptimState};
use firm_dti::trainer::{epoch_batches, split_predictions, train, train_until};
use firm_dti::{FormatError, Gradients64, ModelParams64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(name: &str, outcome: Outcome, failures: &mut Vec<String>) {
    let tag = if outcome.pass { "PASS" } else { "FAIL" };
    println!("[{tag}] {name}: {}", outcome.detail);
    if !outcome.pass {
        failures.push(name.to_string());
    }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn gradient_correctness() -> Outcome {
    let shape = ModelShape {
        d_drug: 5,
        d_prot: 5,
        d_shared: 4,
        k: 4,
        sigma: 0.2,
    };
    let t = Instant::now();
    let s = gradcheck_seeds(&shape, 100).expect("gradcheck runs");
    let elapsed = t.elapsed();
    Outcome {
        pass: s.regression < 1e-4 && s.classification < 1e-4 && elapsed < Duration::from_secs(10),
        detail: format!(
            "100 seeds, max rel err regression {:.2e}, classification {:.2e} (< 1e-4), {:.2} s (< 10 s)",
            s.regression,
            s.classification,
            secs(elapsed)
        ),
    }
}

fn closed_form_suite() -> Outcome {
    let mut checks: Vec<(&str, bool)> = Vec::new();
    let ln2 = std::f64::consts::LN_2;

    checks.push((
        "film identity",
        film_forward(&[0.3, -1.0], &[1.0, 1.0], &[0.0, 0.0]).unwrap() == vec![0.3, -1.0],
    ));
    checks.push((
        "film pure shift",
        film_forward(&[0.3, -1.0], &[0.0, 0.0], &[2.0, 5.0]).unwrap() == vec![2.0, 5.0],
    ));
    checks.push((
        "film arithmetic",
        film_forward(&[1.0, 2.0], &[2.0, 0.5], &[1.0, -1.0]).unwrap() == vec![3.0, 0.0],
    ));
    checks.push((
        "cosine identical",
        cosine_distance(&[1.0, 0.0], &[1.0, 0.0]).unwrap() == 0.0,
    ));
    checks.push((
        "cosine orthogonal",
        cosine_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap() == 1.0,
    ));
    checks.push((
        "cosine antipodal",
        cosine_distance(&[1.0, 0.0], &[-1.0, 0.0]).unwrap() == 2.0,
    ));
    let centers = rbf_centers::<f64>(3).unwrap();
    checks.push(("rbf centers k=3", centers == vec![0.0, 1.0, 2.0]));
    checks.push((
        "rbf center hit",
        rbf_features(1.0, &centers, 0.2).unwrap()[1] == 1.0,
    ));
    checks.push((
        "rbf one sigma",
        (rbf_features(1.2, &centers, 0.2).unwrap()[1] - (-0.5f64).exp()).abs() < 1e-15,
    ));
    checks.push((
        "head zero weights",
        head_forward(&[0.3, 0.7], &[0.0, 0.0], 2.5).unwrap() == 2.5,
    ));
    checks.push((
        "head unit basis",
        head_forward(&[0.0, 1.0], &[3.0, 4.0], 0.5).unwrap() == 4.5,
    ));
    checks.push((
        "head dot",
        (head_forward(&[0.5, 0.25], &[1.0, 1.0], 0.1f64).unwrap() - 0.85).abs() < 1e-15,
    ));

    checks.push((
        "hinge satisfied",
        triplet_loss(0.1, 1.5, 0.9) == (0.0, 0.0, 0.0),
    ));
    let (l, ga, gn) = triplet_loss(1.0f64, 0.5, 0.9);
    checks.push((
        "hinge active",
        (l - 1.4).abs() < 1e-15 && ga == 1.0 && gn == -1.0,
    ));
    checks.push((
        "hinge equal distances",
        triplet_loss(0.7f64, 0.7, 0.9).0 == 0.9,
    ));
    checks.push(("huber zero", huber_loss(1.0f64, 1.0, 0.5).unwrap().0 == 0.0));
    let below = huber_loss(0.0f64, 0.5 - 1e-12, 0.5).unwrap().0;
    let above = huber_loss(0.0f64, 0.5 + 1e-12, 0.5).unwrap().0;
    checks.push((
        "huber continuity at delta",
        huber_loss(0.0f64, 0.5, 0.5).unwrap().0 == 0.125
            && huber_loss(0.0f64, -0.5, 0.5).unwrap().0 == 0.125
            && (below - 0.125).abs() < 1e-11
            && (above - 0.125).abs() < 1e-11,
    ));
    checks.push((
        "huber linear branch",
        huber_loss(0.0f64, 2.0, 0.5).unwrap().0 == 0.875,
    ));
    let (l1, g1) = bce_logit_loss(1.0f64, 0.0);
    let (l0, g0) = bce_logit_loss(0.0f64, 0.0);
    checks.push((
        "bce logit 0 label 1",
        (l1 - ln2).abs() < 1e-15 && g1 == -0.5,
    ));
    checks.push(("bce logit 0 label 0", (l0 - ln2).abs() < 1e-15 && g0 == 0.5));
    let (l40, _) = bce_logit_loss(1.0f64, 40.0);
    checks.push(("bce stable at +40", l40.is_finite() && l40 < 1e-15));

    let cfg = LossConfig {
        triplet_weight: 0.0,
        ..LossConfig::default()
    };
    let t = BatchTerms {
        triplet: vec![0.4],
        supervised: vec![0.3],
    };
    checks.push(("no-triplet total", total_loss(&t, &cfg).unwrap() == 0.3));
    let zero = BatchTerms {
        triplet: vec![0.0; 2],
        supervised: vec![0.0; 2],
    };
    checks.push((
        "perfect batch total",
        total_loss(&zero, &LossConfig::default()).unwrap() == 0.0,
    ));
    let two = BatchTerms {
        triplet: vec![0.2, 0.6],
        supervised: vec![0.1, 0.3],
    };
    checks.push((
        "two-term mean",
        (total_loss(&two, &LossConfig::default()).unwrap() - 0.6f64).abs() < 1e-15,
    ));

    let ocfg = OptimConfig {
        peak_lr: 5e-5,
        warmup_steps: 500,
        total_steps: 5000,
        ..OptimConfig::default()
    };
    checks.push(("lr step 0", lr_at(0, &ocfg).unwrap() == 0.0));
    checks.push(("lr warmup end", lr_at(500, &ocfg).unwrap() == 5e-5));
    checks.push(("lr total", lr_at(5000, &ocfg).unwrap() == 0.0));

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let shape = ModelShape {
        d_drug: 3,
        d_prot: 3,
        d_shared: 4,
        k: 3,
        sigma: 0.2,
    };
    let mut p = ModelParams64::init(&shape, 0.0, &mut rng).unwrap();
    p.head_b = 1.0;
    let mut g = Gradients64::zeros_like(&p);
    g.head_b = 0.3;
    let mut st = OptimState::new(
        &p,
        OptimConfig {
            weight_decay: 0.0,
            ..ocfg
        },
    )
    .unwrap();
    adamw_step(
        &mut p,
        &g,
        &mut st,
        &[firm_dti::model::ParamTensor::HeadBias],
        1e-3,
    )
    .unwrap();
    checks.push((
        "adamw first step",
        (p.head_b - (1.0 - 1e-3 * 0.3 / (0.3 + 1e-6))).abs() < 1e-15,
    ));

    let mut p = ModelParams64::init(&shape, 0.5, &mut rng).unwrap();
    let before = p.clone();
    let g = Gradients64::zeros_like(&p);
    let mut st = OptimState::new(&p, ocfg).unwrap();
    adamw_step(
        &mut p,
        &g,
        &mut st,
        &firm_dti::model::ParamTensor::ALL,
        1e-2,
    )
    .unwrap();
    let decayed_ok = p
        .proj_drug
        .weight
        .iter()
        .zip(&before.proj_drug.weight)
        .all(|(a, b)| *a == b * (1.0 - 1e-2 * 0.1))
        && p.proj_drug.bias == before.proj_drug.bias
        && p.head_b == before.head_b;
    checks.push(("adamw pure decay", decayed_ok));

    let mut p = ModelParams64::init(&shape, 0.25, &mut rng).unwrap();
    let same: Vec<f64> = vec![0.4, -0.2, 0.9];
    p.proj_prot = p.proj_drug.clone();
    let tr = forward(
        &p,
        &same,
        &same,
        ForwardOptions {
            film: FilmMode::Identity,
            ..Default::default()
        },
    )
    .unwrap();
    let phi0 = rbf_features(0.0, &p.rbf_centers, 0.2).unwrap();
    checks.push((
        "identity film equal inputs",
        tr.distance == 0.0 && tr.prediction == head_forward(&phi0, &p.head_w, p.head_b).unwrap(),
    ));

    checks.push((
        "pcc affine",
        (pcc(&[1.0, 2.0, 3.0], &[3.0, 5.0, 7.0]).unwrap() - 1.0).abs() < 1e-15,
    ));
    checks.push((
        "pcc negated",
        (pcc(&[1.0, 2.0, 3.0], &[-1.0, -2.0, -3.0]).unwrap() + 1.0).abs() < 1e-15,
    ));
    checks.push((
        "auroc separated",
        auroc(&[true, false], &[0.9, 0.1]).unwrap() == 1.0,
    ));
    checks.push((
        "auroc all ties",
        auroc(&[true, false, true], &[0.5, 0.5, 0.5]).unwrap() == 0.5,
    ));
    checks.push((
        "aupr separated",
        aupr(&[true, true, false], &[0.9, 0.8, 0.1]).unwrap() == 1.0,
    ));

    let mut grid_ok = true;
    let zero_w = {
        let mut q = ModelParams64::init(&shape, 1.75, &mut rng).unwrap();
        q.head_w.iter_mut().for_each(|w| *w = 0.0);
        q
    };
    for (d, y) in export_distance_curve(&zero_w, 11, None).unwrap() {
        grid_ok &= y == 1.75 && (0.0..=2.0).contains(&d);
    }
    let grid = export_distance_curve(&zero_w, 11, None).unwrap();
    grid_ok &= grid[0].0 == 0.0 && grid[10].0 == 2.0;
    checks.push(("curve constant and endpoints", grid_ok));

    let failed: Vec<&str> = checks
        .iter()
        .filter(|(_, ok)| !ok)
        .map(|(n, _)| *n)
        .collect();
    Outcome {
        pass: failed.is_empty(),
        detail: if failed.is_empty() {
            format!("{} closed-form checks exact", checks.len())
        } else {
            format!("{} of {} failed: {failed:?}", failed.len(), checks.len())
        },
    }
}

fn brute_auroc(labels: &[bool], scores: &[f64]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Mean over positives of the precision at that positive's score threshold.
fn swept_aupr(labels: &[bool], scores: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut n_pos = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        n_pos += 1.0;
        let above: Vec<usize> = (0..scores.len())
            .filter(|&j| scores[j] >= scores[i])
            .collect();
        let tp = above.iter().filter(|&&j| labels[j]).count() as f64;
        total += tp / above.len() as f64;
    }
    total / n_pos
}

fn direct_pcc(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut auroc_err: f64 = 0.0;
    let mut instances = 0;
    while instances < 1000 {
        let n = rng.random_range(2..=200);
        let levels = rng.random_range(1..=n.min(20));
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
            continue;
        }
        let scores: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0..levels) as f64 / levels as f64)
            .collect();
        auroc_err =
            auroc_err.max((auroc(&labels, &scores).unwrap() - brute_auroc(&labels, &scores)).abs());
        instances += 1;
    }

    // Every labeling with at least one positive over n ≤ 6, scores on three levels.
    let mut aupr_err: f64 = 0.0;
    let mut aupr_cases = 0;
    for n in 1..=6usize {
        for mask in 1u32..(1 << n) {
            let labels: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
            for pattern in 0..3usize.pow(n as u32) {
                let scores: Vec<f64> = (0..n)
                    .map(|i| ((pattern / 3usize.pow(i as u32)) % 3) as f64)
                    .collect();
                aupr_err = aupr_err
                    .max((aupr(&labels, &scores).unwrap() - swept_aupr(&labels, &scores)).abs());
                aupr_cases += 1;
            }
        }
    }
    let hand = [
        (
            aupr(&[true, false, true, false], &[0.9, 0.8, 0.3, 0.1]).unwrap(),
            5.0 / 6.0,
        ),
        (
            aupr(&[false, false, false, true], &[0.9, 0.8, 0.3, 0.1]).unwrap(),
            0.25,
        ),
        (aupr(&[true, false], &[0.5, 0.5]).unwrap(), 0.5),
        (
            auroc(&[true, false, true, false], &[0.9, 0.8, 0.3, 0.1]).unwrap(),
            0.75,
        ),
        (
            pcc(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap(),
            0.8,
        ),
    ];
    let hand_err = hand.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let mut pcc_err: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(3..=200);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|v| 0.3 * v + rng.random_range(-5.0..5.0))
            .collect();
        pcc_err = pcc_err.max((pcc(&x, &y).unwrap() - direct_pcc(&x, &y)).abs());
    }
    Outcome {
        pass: auroc_err <= 1e-12 && aupr_err <= 1e-12 && hand_err <= 1e-12 && pcc_err <= 1e-12,
        detail: format!(
            "auroc vs pairwise oracle max err {auroc_err:.1e} over 1000 instances; aupr vs step-curve sweep {aupr_err:.1e} over {aupr_cases} cases; hand cases {hand_err:.1e}; pcc vs covariance formula {pcc_err:.1e} (all <= 1e-12)"
        ),
    }
}

fn scaled_config(seed: u64) -> RunConfig {
    RunConfig {
        epochs: 100,
        batch_size: 24,
        peak_lr: 3e-3,
        warmup_steps: 100,
        d_shared: 32,
        seed,
        ..Default::default()
    }
}

struct RecoveryRun {
    ckpt: Checkpoint<f64>,
    store: EmbeddingStore,
}

fn synthetic_recovery() -> (Outcome, RecoveryRun) {
    let data = generate_synthetic(&SyntheticConfig::default(), 0).expect("synthetic store");
    let cfg = scaled_config(0);
    let t = Instant::now();
    let (ckpt, report, store) = train::<f64>(&cfg, &data.store).expect("training");
    let elapsed = t.elapsed();
    let test = report
        .final_eval
        .iter()
        .find(|r| r.split == "test")
        .expect("test split");
    let pcc = test.pcc.unwrap_or(f64::NAN);
    let outcome = Outcome {
        pass: pcc >= 0.95 && elapsed < Duration::from_secs(60),
        detail: format!(
            "200 drugs x 50 proteins, 2000 pairs, {} epochs: test PCC {pcc:.4} (>= 0.95), {:.1} s (< 60 s)",
            cfg.epochs,
            secs(elapsed)
        ),
    };
    (outcome, RecoveryRun { ckpt, store })
}

fn ablation_ordering() -> Outcome {
    let syn = SyntheticConfig {
        domain_shift: true,
        modulation: 2.0,
        label_noise: 2.0,
        noise_free_eval: true,
        ..Default::default()
    };
    let mut means = [0.0; 3];
    let seeds = 5;
    for seed in 0..seeds {
        let data = generate_synthetic(&syn, seed).expect("synthetic store");
        for (slot, ablation) in Ablation::ALL.into_iter().enumerate() {
            let cfg = RunConfig {
                ablation,
                ..scaled_config(seed)
            };
            let (_, report, _) = train::<f64>(&cfg, &data.store).expect("training");
            let test = report
                .final_eval
                .iter()
                .find(|r| r.split == "test")
                .expect("test split");
            means[slot] += test.pcc.unwrap_or(f64::NAN) / seeds as f64;
        }
    }
    let [full, no_film, no_triplet] = means;
    Outcome {
        pass: full >= no_film + 0.02 && no_film >= no_triplet + 0.05,
        detail: format!(
            "mean test PCC over {seeds} seeds: full {full:.4}, no_film {no_film:.4}, no_triplet {no_triplet:.4}; full - no_film {:.4} (>= 0.02), no_film - no_triplet {:.4} (>= 0.05)",
            full - no_film,
            no_film - no_triplet
        ),
    }
}

fn distance_curve(run: &RecoveryRun) -> Outcome {
    let preds = split_predictions(&run.ckpt, &run.store, Split::Test).expect("predictions");
    let scaling = run.ckpt.scaling;
    let model: Vec<f64> = preds.iter().map(|p| p.value).collect();
    let curve: Vec<f64> = preds
        .iter()
        .map(|p| scaling.denormalize(head_at_distance(&run.ckpt.params, p.distance)))
        .collect();
    let r = pcc(&curve, &model).unwrap_or(f64::NAN);
    let points = 201;
    let rows = export_distance_curve(&run.ckpt.params, points, Some(scaling)).expect("curve");
    let step = 2.0 / (points - 1) as f64;
    let bound = curve_jump_bound(&run.ckpt.params, step, scaling.std);
    let jump = rows
        .windows(2)
        .map(|w| (w[1].1 - w[0].1).abs())
        .fold(0.0, f64::max);
    Outcome {
        pass: r >= 0.999 && jump < bound && rows.iter().all(|(_, y)| y.is_finite()),
        detail: format!(
            "curve vs model on {} test pairs r = {r:.6} (>= 0.999); max adjacent jump {jump:.4e} < bound {bound:.4e} on {points} points",
            preds.len()
        ),
    }
}

fn determinism() -> Outcome {
    let syn = SyntheticConfig {
        n_drugs: 80,
        n_prots: 20,
        n_pairs: 600,
        ..Default::default()
    };
    let data = generate_synthetic(&syn, 9).expect("synthetic store");
    let cfg = RunConfig {
        epochs: 6,
        warmup_steps: 20,
        ..scaled_config(11)
    };
    let (a, _, _) = train::<f64>(&cfg, &data.store).expect("training");
    let (b, _, store) = train::<f64>(&cfg, &data.store).expect("training");
    let identical = a.encode() == b.encode();

    let mut partial = firm_dti::trainer::init_checkpoint::<f64>(&cfg, &store).expect("init");
    train_until(&mut partial, &store, 3).expect("first leg");
    let mut resumed = Checkpoint::<f64>::decode(&partial.encode()).expect("reload");
    train_until(&mut resumed, &store, cfg.epochs).expect("second leg");
    let resume_equal = resumed.encode() == a.encode();
    Outcome {
        pass: identical && resume_equal,
        detail: format!(
            "two runs bitwise identical: {identical}; resume at epoch 3 of {} equals uninterrupted: {resume_equal}",
            cfg.epochs
        ),
    }
}

fn classification() -> Outcome {
    let syn = SyntheticConfig {
        mode: TaskMode::Classification,
        binder_temperature: 0.1,
        ..Default::default()
    };
    let data = generate_synthetic(&syn, 0).expect("synthetic store");
    let cfg = RunConfig {
        mode: TaskMode::Classification,
        ..scaled_config(0)
    };
    let (ckpt, report, store) = train::<f64>(&cfg, &data.store).expect("training");
    let test = report
        .final_eval
        .iter()
        .find(|r| r.split == "test")
        .expect("test split");
    let (roc, pr) = (
        test.auroc.unwrap_or(f64::NAN),
        test.aupr.unwrap_or(f64::NAN),
    );

    let negatives = |epoch| -> Vec<(usize, u32)> {
        let mut v: Vec<(usize, u32)> = epoch_batches(&store, &ckpt.config, cfg.seed, epoch)
            .expect("batches")
            .batches
            .iter()
            .flat_map(|b| b.triplets.iter().map(|t| (t.record, t.neg_drug)))
            .collect();
        v.sort_unstable();
        v
    };
    let (e0, e1) = (negatives(0), negatives(1));
    let changed = e0.iter().zip(&e1).filter(|(a, b)| a != b).count();
    let known = store.interaction_set();
    let valid = e0
        .iter()
        .chain(&e1)
        .all(|&(r, d)| !known.contains(&(d, store.records[r].prot)));
    Outcome {
        pass: roc >= 0.95 && pr >= 0.90 && changed > 0 && valid && cfg.epochs <= 100,
        detail: format!(
            "{} epochs: test AUROC {roc:.4} (>= 0.95), AUPR {pr:.4} (>= 0.90); {changed} of {} triplet negatives redrawn between epochs 0 and 1, all non-interacting: {valid}",
            cfg.epochs,
            e0.len()
        ),
    }
}

fn base_store() -> EmbeddingStore {
    EmbeddingStore {
        d_drug: 2,
        d_prot: 2,
        drug_ids: vec!["d0".into(), "d1".into()],
        prot_ids: vec!["p0".into(), "p1".into()],
        drug_matrix: vec![0.1, 0.2, 0.3, 0.4],
        prot_matrix: vec![0.5, 0.6, 0.7, 0.8],
        label_kind: LabelKind::Real,
        splits_present: true,
        records: vec![
            Record {
                drug: 0,
                prot: 1,
                label: Some(0.5),
                split: Split::Train,
            },
            Record {
                drug: 1,
                prot: 0,
                label: Some(3.0),
                split: Split::Test,
            },
        ],
    }
}

// Offsets in the image of `base_store`.
const DRUG_MATRIX: usize = 56;
const RECORD0: usize = 88;
const RECORD1: usize = 104;

fn format_robustness() -> Outcome {
    let good = encode_store(&base_store()).expect("encodes");
    assert_eq!(good.len(), 120);
    type Mutation = fn(&mut Vec<u8>);
    type Expect = fn(&FormatError) -> bool;
    let cases: [(&str, Mutation, Expect); 10] = [
        (
            "bad magic",
            |b| b[0..4].copy_from_slice(b"FDTX"),
            |e| matches!(e, FormatError::BadMagic { .. }),
        ),
        (
            "unsupported version",
            |b| b[4] = 9,
            |e| matches!(e, FormatError::UnsupportedVersion(9)),
        ),
        (
            "truncated matrix",
            |b| b.truncate(DRUG_MATRIX + 6),
            |e| {
                matches!(
                    e,
                    FormatError::Truncated {
                        what: "drug matrix",
                        ..
                    }
                )
            },
        ),
        (
            "NaN embedding",
            |b| b[DRUG_MATRIX + 4..DRUG_MATRIX + 8].copy_from_slice(&f32::NAN.to_le_bytes()),
            |e| matches!(e, FormatError::NonFiniteEmbedding { .. }),
        ),
        (
            "out-of-range index",
            |b| b[RECORD1..RECORD1 + 4].copy_from_slice(&2u32.to_le_bytes()),
            |e| {
                matches!(
                    e,
                    FormatError::IndexOutOfRange {
                        record: 1,
                        side: "drug",
                        ..
                    }
                )
            },
        ),
        (
            "bad split tag",
            |b| b[RECORD0 + 12] = 7,
            |e| matches!(e, FormatError::BadSplitTag { value: 7, .. }),
        ),
        (
            "bad label kind",
            |b| b[32] = 9,
            |e| matches!(e, FormatError::BadLabelKind { value: 9, .. }),
        ),
        (
            "reserved bytes set",
            |b| b[36] = 1,
            |e| matches!(e, FormatError::ReservedNonZero { .. }),
        ),
        (
            "non-binary label in binary store",
            |b| b[32] = LabelKind::Binary as u8,
            |e| matches!(e, FormatError::BadLabel { record: 0, .. }),
        ),
        (
            "trailing bytes",
            |b| b.extend_from_slice(&[0, 0, 0]),
            |e| matches!(e, FormatError::TrailingBytes(3)),
        ),
    ];
    let dir = tempfile::tempdir().expect("tempdir");
    let mut failures = Vec::new();
    let mut classes = std::collections::HashSet::new();
    for (i, (name, mutate, expected)) in cases.iter().enumerate() {
        let mut bytes = good.clone();
        mutate(&mut bytes);
        let path = dir.path().join(format!("corrupt_{i}.fdti"));
        std::fs::write(&path, &bytes).expect("write");
        match firm_dti::data::load_store(&path) {
            Err(firm_dti::Error::Format { source, .. }) if expected(&source) => {
                classes.insert(std::mem::discriminant(&source));
            }
            other => failures.push(format!("{name}: {other:?}")),
        }
    }
    let round_trip = decode_store(&good)
        .map(|s| s == base_store())
        .unwrap_or(false);
    Outcome {
        pass: failures.is_empty() && classes.len() == cases.len() && round_trip,
        detail: format!(
            "{} corrupt files rejected with {} distinct error classes; clean file loads: {round_trip}{}",
            cases.len() - failures.len(),
            classes.len(),
            if failures.is_empty() { String::new() } else { format!("; mismatches: {failures:?}") }
        ),
    }
}

fn main() {
    let mut failures = Vec::new();
    report(
        "gradient correctness",
        gradient_correctness(),
        &mut failures,
    );
    report("closed-form unit suite", closed_form_suite(), &mut failures);
    report("metric oracle equivalence", metric_oracles(), &mut failures);
    let (outcome, run) = synthetic_recovery();
    report("synthetic recovery (regression)", outcome, &mut failures);
    report("ablation ordering", ablation_ordering(), &mut failures);
    report(
        "distance-affinity curve",
        distance_curve(&run),
        &mut failures,
    );
    report("determinism and resume", determinism(), &mut failures);
    report("classification mode", classification(), &mut failures);
    report("format robustness", format_robustness(), &mut failures);
    if failures.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!(
            "acceptance: {} failed: {}",
            failures.len(),
            failures.join(", ")
        );
        std::process::exit(1);
    }
}
