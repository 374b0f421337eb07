//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with its measured numbers. Thresholds are pinned here.

use rand::Rng;

use topicmatch::autograd::{grad_check, Graph, Tensor, Var};
use topicmatch::coarse::{
    elbo_from_values, select_coarse_matches, TopicProbMatrix,
};
use topicmatch::config::{KernelKind, RunConfig};
use topicmatch::geometry::{
    corner_error, estimate_homography_dlt, pt, ransac_homography, warp_point, Homography, Pt,
    RansacParams,
};
use topicmatch::loss::{coarse_neg_loss, coarse_pos_loss, evaluate_pair_loss_frozen, fine_loss};
use topicmatch::model::{MatchOverrides, Matcher};
use topicmatch::rng::stream;
use topicmatch::synth::{gen_pair, GenConfig};
use topicmatch::topics::{pair_topic_distribution, sample_assignments, topic_distribution};

fn normalized_rows(rng: &mut impl Rng, n: usize, k: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..k).map(|_| rng.gen_range(1e-3..1.0)).collect();
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
        .collect()
}

/// Criterion 1: theta rows and pair distributions are valid probability
/// distributions on 10^4 random inputs. Budget: under 10 seconds.
#[test]
fn acceptance_c1_probability_invariants() {
    let t0 = std::time::Instant::now();
    let mut rng = stream(1001, &[1]);
    for trial in 0..10_000u32 {
        let k = rng.gen_range(2..9);
        let d = 4 * rng.gen_range(1..4);
        let n = rng.gen_range(1..6);
        let g = Graph::new();
        let mk = |rng: &mut rand_chacha::ChaCha8Rng, r: usize, c: usize| {
            Tensor::new(vec![r, c], (0..r * c).map(|_| rng.gen_range(-3.0..3.0)).collect())
        };
        let t_hat = g.constant(mk(&mut rng, k, d));
        let tokens = g.constant(mk(&mut rng, n, d));
        let theta = topic_distribution(&g, t_hat, tokens);
        let tv = g.value_clone(theta);
        for i in 0..n {
            let row = tv.row(i);
            assert!(row.iter().all(|&p| p >= 0.0), "trial {trial}: negative probability");
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-6, "trial {trial}: row sums to {sum}");
        }
        // Pair distribution over {topics, NaN} from two random rows.
        let rows = normalized_rows(&mut rng, 2, k);
        let p = pair_topic_distribution(&rows[0], &rows[1]);
        assert!((0.0..=1.0).contains(&p.p_nan), "trial {trial}: p_nan {}", p.p_nan);
        assert!(p.per_topic.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!((p.total() - 1.0).abs() <= 1e-9, "trial {trial}: total {}", p.total());
    }
    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 10.0, "criterion 1 took {dt:.1}s");
    println!("PASS criterion 1: probability invariants on 10^4 inputs in {dt:.2}s");
}

/// Criterion 2: the Monte-Carlo ELBO estimator matches exact enumeration on
/// a 3-topic, 4-feature instance within 0.01 at S = 10^4, and stays below
/// the exact log-likelihood beyond 3 sigma of MC noise.
#[test]
fn acceptance_c2_elbo_oracle() {
    let t0 = std::time::Instant::now();
    let k = 3;
    let mut rng = stream(1002, &[2]);
    // Two features per image, matched diagonally.
    let theta_a = normalized_rows(&mut rng, 2, k);
    let theta_b = normalized_rows(&mut rng, 2, k);
    let matches = [(0usize, 0usize), (1, 1)];
    // Conditional match probabilities per topic, fixed by hand.
    let probs: [[f64; 3]; 2] = [[0.62, 0.18, 0.35], [0.22, 0.55, 0.4]];

    let s = 10_000;
    let mut mc_total = 0.0f64;
    let mut exact_total = 0.0f64;
    let mut loglik_total = 0.0f64;
    let mut var_total = 0.0f64;
    for (mi, &(i, j)) in matches.iter().enumerate() {
        let log_p: Vec<f64> = probs[mi].iter().map(|p| p.ln()).collect();
        // Exact conditional enumeration of the estimator's expectation.
        let joint: Vec<f64> = (0..k).map(|t| theta_a[i][t] * theta_b[j][t]).collect();
        let z: f64 = joint.iter().sum();
        exact_total += joint.iter().zip(&log_p).map(|(w, lp)| w / z * lp).sum::<f64>();
        loglik_total +=
            (joint.iter().zip(&probs[mi]).map(|(w, p)| w / z * p).sum::<f64>()).ln();

        // Monte-Carlo with the production sampler.
        let theta = Tensor::from_rows(&[theta_a[i].clone(), theta_b[j].clone()]);
        let draws = sample_assignments(&theta, s, 4000 + mi as u64);
        let samples: Vec<Option<f64>> = (0..s)
            .map(|si| {
                let (za, zb) = (draws.labels[si][0], draws.labels[si][1]);
                (za == zb).then(|| log_p[za])
            })
            .collect();
        let valid: Vec<f64> = samples.iter().flatten().copied().collect();
        mc_total += elbo_from_values(&[samples]);
        let mean = valid.iter().sum::<f64>() / valid.len() as f64;
        let var =
            valid.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / valid.len() as f64;
        var_total += var / valid.len() as f64;
    }
    let diff = (mc_total - exact_total).abs();
    assert!(diff <= 0.01, "MC {mc_total} vs exact {exact_total} (diff {diff})");
    let sigma = var_total.sqrt();
    assert!(
        mc_total <= loglik_total + 3.0 * sigma,
        "ELBO {mc_total} exceeds log-likelihood {loglik_total} beyond 3 sigma ({sigma})"
    );
    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 30.0, "criterion 2 took {dt:.1}s");
    println!(
        "PASS criterion 2: MC ELBO {mc_total:.4} vs exact {exact_total:.4} (diff {diff:.4}), bound {loglik_total:.4} in {dt:.2}s"
    );
}

fn grad_suite_config() -> RunConfig {
    RunConfig {
        widths: [4, 6, 8, 12],
        coarse_dim: 8,
        fine_dim: 4,
        heads_coarse: 2,
        heads_fine: 2,
        topics: 3,
        covisible: 2,
        topic_layers: 1,
        image_size: 64,
        samples: 2,
        negatives: 2,
        fine_cap: 4,
        patch: 5,
        seed: 21,
        ..RunConfig::default()
    }
}

/// Criterion 3: reverse-mode gradients of each loss term and of the total
/// training loss agree with central finite differences below 1e-4, and the
/// variance weight carries no gradient. Budget: under 2 minutes.
#[test]
fn acceptance_c3_gradient_suite() {
    let t0 = std::time::Instant::now();

    // Positive-loss term: gradient through both theta matrices and the
    // sampled conditional log-probabilities.
    let mut rng = stream(1003, &[3]);
    let n = 4;
    let k = 3;
    let logits = Tensor::new(vec![2 * n, k], (0..2 * n * k).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let matches = vec![(0usize, 1usize), (2, 0), (3, 3)];
    let err = grad_check(
        |g, x| {
            let theta = g.softmax_rows(x);
            let ta = g.gather_rows(theta, (0..n).collect());
            let tb = g.gather_rows(theta, (n..2 * n).collect());
            let samples: Vec<Vec<Option<Var>>> = vec![
                vec![Some(g.log_clamped(g.reshape(g.gather_entries(ta, vec![(0, 0)]), vec![]), 1e-9)), None],
                vec![None, None],
                vec![Some(g.scalar(-0.7)), Some(g.log_clamped(g.reshape(g.gather_entries(tb, vec![(1, 2)]), vec![]), 1e-9))],
            ];
            coarse_pos_loss(g, &matches, &samples, ta, tb)
        },
        &logits,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "positive loss gradient error {err}");
    println!("  coarse positive loss grad error: {err:.2e}");

    // Negative-loss term.
    let err = grad_check(
        |g, x| {
            let theta = g.softmax_rows(x);
            let ta = g.gather_rows(theta, (0..n).collect());
            let tb = g.gather_rows(theta, (n..2 * n).collect());
            coarse_neg_loss(g, &matches, &[vec![2, 3], vec![0, 1], vec![1, 2]], ta, tb)
        },
        &logits,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "negative loss gradient error {err}");
    println!("  coarse negative loss grad error: {err:.2e}");

    // Fine loss: gradient flows to offsets, variance carries none.
    let offsets = Tensor::new(vec![2], vec![0.8, -0.4]);
    let err = grad_check(
        |g, x| {
            let s2 = g.leaf(Tensor::scalar(0.7), true);
            fine_loss(g, &[x], &[(0.25, -0.1)], &[s2])
        },
        &offsets,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "fine loss gradient error {err}");
    {
        let g = Graph::new();
        let off = g.constant(offsets);
        let s2 = g.leaf(Tensor::scalar(0.7), true);
        let loss = fine_loss(&g, &[off], &[(0.25, -0.1)], &[s2]).unwrap();
        g.backward(loss);
        assert!(g.grad(s2).is_none(), "sigma^2 must carry zero gradient");
    }
    println!("  fine loss grad error: {err:.2e}; sigma^2 gradient absent");

    // Total training loss at toy scale: per-parameter finite differences
    // against the tape, with the discrete choices of the base run frozen.
    let cfg = grad_suite_config();
    let matcher = Matcher::init(cfg.clone()).unwrap();
    let pair = gen_pair(77, &GenConfig { size: 64, perspective: 0.08, jitter: 0.05 }).unwrap();

    let freeze = {
        let g = Graph::new();
        let bind = matcher.store.bind(&g);
        let fwd = matcher
            .forward_pair(&g, &bind, &pair.a, &pair.b, topicmatch::layers::Mode::Train, None)
            .unwrap();
        let (_, artifacts) = topicmatch::loss::pair_training_loss(
            &g, &matcher, &bind, &pair, 0, &fwd, None,
        )
        .unwrap()
        .expect("pair has ground truth");
        artifacts.freeze
    };

    let mut worst: (f64, String) = (0.0, String::new());
    let mut coords = 0usize;
    for id in matcher.store.trainable_ids() {
        let name = matcher.store.entry(id).name.clone();
        let x0 = matcher.store.tensor(id);
        coords += x0.len();
        let err = grad_check(
            |g, x| {
                let bind = matcher.store.bind_with_substitute(g, id, x);
                let out = evaluate_pair_loss_frozen(g, &matcher, &bind, &pair, 0, &freeze)?;
                Ok(out.expect("ground truth available").0)
            },
            &x0,
            1e-5,
        )
        .unwrap();
        if err > worst.0 {
            worst = (err, name);
        }
    }
    assert!(
        worst.0 < 1e-4,
        "total loss gradient error {} at parameter {}",
        worst.0,
        worst.1
    );
    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 120.0, "criterion 3 took {dt:.1}s");
    println!(
        "PASS criterion 3: gradient suite, {coords} coordinates, worst {:.2e} at {} in {dt:.1}s",
        worst.0, worst.1
    );
}

/// Criterion 4: match selection equals the brute-force mutual-nearest +
/// threshold oracle on 1000 random matrices up to 8x8, exactly.
#[test]
fn acceptance_c4_selection_oracle() {
    let mut rng = stream(1004, &[4]);
    for trial in 0..1000 {
        let m = rng.gen_range(1..=8);
        let n = rng.gen_range(1..=8);
        // Coarse value grid so ties actually occur.
        let probs = Tensor::new(
            vec![m, n],
            (0..m * n).map(|_| (rng.gen_range(0..25) as f64) / 25.0).collect(),
        );
        let tau = [0.15, 0.3, 0.6][trial % 3];
        let mat = TopicProbMatrix {
            topic: trial % 5,
            idx_a: (0..m).collect(),
            idx_b: (0..n).collect(),
            probs: probs.clone(),
        };
        let got: Vec<(usize, usize, f64)> = select_coarse_matches(&[mat], tau, true)
            .unwrap()
            .matches
            .iter()
            .map(|mm| (mm.a, mm.b, mm.confidence))
            .collect();

        // Independent oracle: scan all pairs for the mutual-argmax property
        // with ties to the lower index, then threshold.
        let mut want = Vec::new();
        for i in 0..m {
            let row_arg = (0..n)
                .fold(0, |best, j| if probs.at2(i, j) > probs.at2(i, best) { j } else { best });
            let col_arg = (0..m)
                .fold(0, |best, ii| if probs.at2(ii, row_arg) > probs.at2(best, row_arg) { ii } else { best });
            if col_arg == i && probs.at2(i, row_arg) >= tau {
                want.push((i, row_arg, probs.at2(i, row_arg)));
            }
        }
        assert_eq!(got, want, "trial {trial} (tau {tau})");
    }
    println!("PASS criterion 4: selection equals the MNN+threshold oracle on 1000 matrices");
}

/// Criterion 5: DLT recovers noiseless homographies below 1e-8 Frobenius
/// over 100 seeds; RANSAC at threshold 3 px and confidence 0.99999 with 40%
/// uniform outliers lands under 0.5 px corner error in at least 95/100
/// seeds. Budget: under 1 minute.
#[test]
fn acceptance_c5_geometry_suite() {
    let t0 = std::time::Instant::now();
    let mut rng = stream(1005, &[5]);
    let random_h = |rng: &mut rand_chacha::ChaCha8Rng| loop {
        let m = nalgebra::Matrix3::new(
            1.0 + rng.gen_range(-0.15..0.15),
            rng.gen_range(-0.15..0.15),
            rng.gen_range(-12.0..12.0),
            rng.gen_range(-0.15..0.15),
            1.0 + rng.gen_range(-0.15..0.15),
            rng.gen_range(-12.0..12.0),
            rng.gen_range(-0.0008..0.0008),
            rng.gen_range(-0.0008..0.0008),
            1.0,
        );
        if let Ok(h) = Homography::from_matrix(m) {
            if h.condition_number() < 1e5 {
                return h;
            }
        }
    };

    for seed in 0..100 {
        let h = random_h(&mut rng);
        let src: Vec<Pt> = (0..8)
            .map(|_| pt(rng.gen_range(0.0..128.0), rng.gen_range(0.0..128.0)))
            .collect();
        let dst: Vec<Pt> = src.iter().map(|&p| warp_point(&h, p).unwrap()).collect();
        let est = estimate_homography_dlt(&src, &dst).unwrap();
        let dist = est.frobenius_distance(&h);
        assert!(dist < 1e-8, "seed {seed}: DLT error {dist}");
    }

    let mut good = 0;
    for seed in 0..100u64 {
        let h = random_h(&mut rng);
        let mut src: Vec<Pt> = (0..12)
            .map(|_| pt(rng.gen_range(0.0..128.0), rng.gen_range(0.0..128.0)))
            .collect();
        let mut dst: Vec<Pt> = src.iter().map(|&p| warp_point(&h, p).unwrap()).collect();
        for _ in 0..8 {
            src.push(pt(rng.gen_range(0.0..128.0), rng.gen_range(0.0..128.0)));
            dst.push(pt(rng.gen_range(0.0..128.0), rng.gen_range(0.0..128.0)));
        }
        let params = RansacParams {
            threshold: 3.0,
            confidence: 0.99999,
            max_iters: 2000,
            seed: 50_000 + seed,
        };
        if let Ok((est, _)) = ransac_homography(&src, &dst, &params) {
            if corner_error(&est, &h, 128, 128) < 0.5 {
                good += 1;
            }
        }
    }
    assert!(good >= 95, "RANSAC solved only {good}/100 outlier instances");
    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 60.0, "criterion 5 took {dt:.1}s");
    println!("PASS criterion 5: DLT < 1e-8 on 100 seeds; RANSAC {good}/100 under 0.5 px in {dt:.1}s");
}

/// Criterion 6: end-to-end toy training (8 topics, 3 covisible, tau 0.2,
/// 128^2 images, far below the 5k-step/2h budget) reaches on 100 held-out
/// pairs: (a) >= 70% of predicted coarse matches within one cell of ground
/// truth, (b) corner-error AUC@3px >= 0.5 after RANSAC, (c) topic-map
/// warp agreement at least 3x the 1/K random baseline.
#[test]
fn acceptance_c6_end_to_end_toy_training() {
    let t0 = std::time::Instant::now();
    let cfg = RunConfig {
        topics: 8,
        covisible: 3,
        tau: 0.2,
        image_size: 128,
        batch_size: 1,
        steps: 1300,
        checkpoint_every: 0,
        seed: 7,
        ..RunConfig::default()
    };
    assert!(cfg.steps <= 5000);
    let mut matcher = Matcher::init(cfg.clone()).unwrap();
    let report = topicmatch::train::train(&mut matcher, None, None, false).unwrap();
    eprintln!(
        "  trained {} steps in {:.1} min (loss {:.1} -> {:.1})",
        report.final_step,
        t0.elapsed().as_secs_f64() / 60.0,
        report.curve.first().map(|r| r.total).unwrap_or(0.0),
        report.curve.last().map(|r| r.total).unwrap_or(0.0),
    );

    let held_out: Vec<u64> =
        (0..100).map(|i| topicmatch::rng::fnv1a64(&[0xE8A1, i])).collect();
    let eval = topicmatch::report::evaluate_seeds(
        &matcher,
        &held_out,
        &cfg.gen_config(),
        &MatchOverrides { topk: Some(cfg.topk), ..Default::default() },
    )
    .unwrap();

    // (a) aggregate fraction of predicted coarse matches within one cell.
    let total_matches: usize = eval.pairs.iter().map(|p| p.coarse_matches).sum();
    let within: f64 = eval
        .pairs
        .iter()
        .map(|p| p.coarse_within_one * p.coarse_matches as f64)
        .sum();
    let coarse_frac = within / total_matches.max(1) as f64;
    assert!(coarse_frac >= 0.70, "(a) coarse accuracy {coarse_frac:.3} below 0.70");

    // (b) corner-error AUC at 3 px.
    assert!(eval.auc[0] >= 0.5, "(b) AUC@3px {:.3} below 0.5", eval.auc[0]);

    // (c) topic agreement vs the random baseline.
    let baseline = 1.0 / cfg.topics as f64;
    assert!(
        eval.mean_topic_agreement >= 3.0 * baseline,
        "(c) topic agreement {:.3} below 3x baseline {:.3}",
        eval.mean_topic_agreement,
        3.0 * baseline
    );

    // Trained-model sanity from the command contract: identical images
    // self-match on at least 80% of the coarse cells with all topics open.
    let pair = gen_pair(31337, &cfg.gen_config()).unwrap();
    let ov = MatchOverrides { covisible: Some(cfg.topics), ..Default::default() };
    let out = matcher.match_pair(&pair.a, &pair.a, &ov).unwrap();
    let cells = out.grid_w * out.grid_h;
    let self_matched = out.coarse.matches.iter().filter(|m| m.a == m.b).count();
    let self_frac = self_matched as f64 / cells as f64;
    assert!(self_frac >= 0.8, "identical-image self-match rate {self_frac:.3}");

    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 7200.0, "criterion 6 exceeded the 2h budget: {dt:.0}s");
    println!(
        "PASS criterion 6: coarse {coarse_frac:.3} (>=0.70), AUC@3 {:.3} (>=0.5), topic agreement {:.3} (>= {:.3}), self-match {self_frac:.2}, {:.1} min total",
        eval.auc[0],
        eval.mean_topic_agreement,
        3.0 * baseline,
        dt / 60.0
    );
}

/// Criterion 7: with linear kernels, uniform assignments, N=4096 tokens,
/// K=8 topics and K_co=2, the restricted coarse-attention FLOPs are within
/// 25% of (K_co/K) of the full pass and strictly smaller for every swept
/// configuration. Budget: under 1 minute.
#[test]
fn acceptance_c7_complexity_claim() {
    let t0 = std::time::Instant::now();
    let row = topicmatch::bench::bench_point(4096, 8, 2, KernelKind::Linear);
    let expected = 2.0 / 8.0;
    assert!(
        (row.ratio - expected).abs() <= 0.25 * expected,
        "FLOP ratio {:.4} outside 25% of {expected}",
        row.ratio
    );
    assert!(row.flops_restricted < row.flops_full);

    let mut swept = 0;
    for tokens in [256usize, 1024, 4096] {
        for (k, kco) in [(8usize, 2usize), (8, 3), (16, 4)] {
            for kernel in [KernelKind::Linear, KernelKind::Dot] {
                if kernel == KernelKind::Dot && tokens > 1024 {
                    continue; // quadratic score matrices exceed small-machine memory
                }
                let r = topicmatch::bench::bench_point(tokens, k, kco, kernel);
                assert!(
                    r.flops_restricted < r.flops_full,
                    "{tokens} tokens K={k} K_co={kco} {kernel:?}: {} !< {}",
                    r.flops_restricted,
                    r.flops_full
                );
                swept += 1;
            }
        }
    }
    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 60.0, "criterion 7 took {dt:.1}s");
    println!(
        "PASS criterion 7: ratio {:.4} vs {expected} at N=4096; restricted < full on {swept} swept configs in {dt:.1}s",
        row.ratio
    );
}

/// Criterion 8: the match and eval commands produce bitwise identical
/// outputs across two runs with the same seeds and configs.
#[test]
fn acceptance_c8_cli_determinism() {
    use std::process::Command;
    let dir = tempfile::tempdir().unwrap();

    // Tiny model trained in-process, saved for the CLI.
    let cfg = RunConfig {
        widths: [6, 8, 12, 16],
        coarse_dim: 12,
        fine_dim: 8,
        heads_coarse: 2,
        heads_fine: 2,
        topics: 4,
        covisible: 2,
        topic_layers: 1,
        image_size: 64,
        batch_size: 1,
        steps: 25,
        samples: 2,
        fine_cap: 12,
        checkpoint_every: 0,
        seed: 13,
        ..RunConfig::default()
    };
    let mut matcher = Matcher::init(cfg.clone()).unwrap();
    topicmatch::train::train(&mut matcher, Some(dir.path()), None, false).unwrap();
    let ckpt = dir.path().join("final.ckpt");

    let pair = gen_pair(2024, &cfg.gen_config()).unwrap();
    let img_a = dir.path().join("a.png");
    let img_b = dir.path().join("b.png");
    topicmatch::imageio::save_image(&img_a, &pair.a).unwrap();
    topicmatch::imageio::save_image(&img_b, &pair.b).unwrap();

    let bin = env!("CARGO_BIN_EXE_topicmatch");
    let run_match = || {
        let out = Command::new(bin)
            .args(["match", ckpt.to_str().unwrap(), img_a.to_str().unwrap(), img_b.to_str().unwrap()])
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        out.stdout
    };
    let m1 = run_match();
    let m2 = run_match();
    assert_eq!(m1, m2, "cmd_match outputs differ between runs");

    // Manifest of three pairs for eval.
    let manifest = dir.path().join("manifest.tsv");
    topicmatch::synth::write_manifest(&manifest, &[5, 6, 7], cfg.gen_config().hash()).unwrap();
    let run_eval = |out_dir: &std::path::Path| {
        let out = Command::new(bin)
            .args([
                "eval",
                ckpt.to_str().unwrap(),
                manifest.to_str().unwrap(),
                "--out",
                out_dir.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        (
            std::fs::read(out_dir.join("report.txt")).unwrap(),
            std::fs::read(out_dir.join("report.csv")).unwrap(),
        )
    };
    let e1 = run_eval(&dir.path().join("eval1"));
    let e2 = run_eval(&dir.path().join("eval2"));
    assert_eq!(e1.0, e2.0, "eval report.txt differs between runs");
    assert_eq!(e1.1, e2.1, "eval report.csv differs between runs");

    println!(
        "PASS criterion 8: cmd_match ({} bytes) and cmd_eval outputs bitwise identical",
        m1.len()
    );
}
