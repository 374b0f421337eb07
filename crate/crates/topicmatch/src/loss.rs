//! Training objective: coarse positive loss (Monte-Carlo ELBO plus topic
//! coherence), coarse negative loss, and the variance-weighted fine loss.

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::coarse::elbo_from_log_probs;
use crate::error::{Error, Result};
use crate::fine::{crop_patches, fine_to_image};
use crate::geometry::{pt, warp_point};
use crate::layers::Mode;
use crate::model::{cell_xy, Matcher, PairForward};
use crate::params::Binding;
use crate::rng::{stream, tag};
use crate::synth::{gt_coarse_matches, ImagePair};
use crate::topics::{sample_assignments, TopicAssignment};

/// Guard for the logarithms in both coarse loss terms.
pub const LOG_EPS: f64 = 1e-9;
/// Floor for the variance weight of the fine loss.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Coarse positive loss: minus the ELBO term plus minus the log coherence of
/// every ground-truth pair.
pub fn coarse_pos_loss(
    g: &Graph,
    matches: &[(usize, usize)],
    elbo_samples: &[Vec<Option<Var>>],
    theta_a: Var,
    theta_b: Var,
) -> Result<Var> {
    if matches.is_empty() {
        return Err(Error::Contract("positive loss needs at least one match".into()));
    }
    assert_eq!(matches.len(), elbo_samples.len());
    let elbo = elbo_from_log_probs(g, elbo_samples);
    let rows_a = g.gather_rows(theta_a, matches.iter().map(|m| m.0).collect());
    let rows_b = g.gather_rows(theta_b, matches.iter().map(|m| m.1).collect());
    let coherence = g.sum(g.log_clamped(g.rowwise_dot(rows_a, rows_b), LOG_EPS));
    Ok(g.scale(g.add(elbo, coherence), -1.0))
}

/// Coarse negative loss over sampled unmatched pairs:
/// `-(1/N) sum log(1 - coherence)` per positive.
pub fn coarse_neg_loss(
    g: &Graph,
    matches: &[(usize, usize)],
    negatives: &[Vec<usize>],
    theta_a: Var,
    theta_b: Var,
) -> Result<Var> {
    assert_eq!(matches.len(), negatives.len());
    let n_per = negatives.first().map(|n| n.len()).unwrap_or(0);
    if n_per == 0 {
        return Err(Error::Contract("need at least one negative per positive".into()));
    }
    let mut idx_a = Vec::with_capacity(matches.len() * n_per);
    let mut idx_b = Vec::with_capacity(matches.len() * n_per);
    for ((i, _), negs) in matches.iter().zip(negatives) {
        assert_eq!(negs.len(), n_per, "ragged negative lists");
        for &n in negs {
            idx_a.push(*i);
            idx_b.push(n);
        }
    }
    let rows_a = g.gather_rows(theta_a, idx_a);
    let rows_b = g.gather_rows(theta_b, idx_b);
    let coh = g.rowwise_dot(rows_a, rows_b);
    let log_term = g.log_clamped(g.affine(coh, -1.0, 1.0), LOG_EPS);
    Ok(g.scale(g.sum(log_term), -1.0 / n_per as f64))
}

/// Variance-weighted fine loss: mean of `||offset - gt||^2 / sigma2` with the
/// variance treated as a constant (no gradient flows through it) and floored.
pub fn fine_loss(
    g: &Graph,
    offsets: &[Var],
    gts: &[(f64, f64)],
    sigma2: &[Var],
) -> Result<Var> {
    if offsets.is_empty() {
        return Err(Error::Contract("fine loss needs at least one refined match".into()));
    }
    assert_eq!(offsets.len(), gts.len());
    assert_eq!(offsets.len(), sigma2.len());
    let mut terms = Vec::with_capacity(offsets.len());
    for ((off, gt), s2) in offsets.iter().zip(gts).zip(sigma2) {
        let weight = 1.0 / g.value(*s2).item().max(SIGMA_FLOOR);
        let gt_c = g.constant(crate::autograd::Tensor::new(vec![2], vec![gt.0, gt.1]));
        let diff = g.sub(*off, gt_c);
        terms.push(g.scale(g.sum(g.mul(diff, diff)), weight));
    }
    let total = g.sum(g.stack_scalars(&terms));
    Ok(g.scale(total, 1.0 / offsets.len() as f64))
}

/// Sum of the three terms.
pub fn total_loss(g: &Graph, pos: Var, neg: Var, fine: Var) -> Var {
    g.add(g.add(pos, neg), fine)
}

/// Scalar values of one pair's loss evaluation, for logging.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossValues {
    pub total: f64,
    pub pos: f64,
    pub neg: f64,
    pub fine: f64,
    pub gt_matches: usize,
}

/// Discrete and gradient-blocked quantities a loss evaluation committed to.
/// Gradient checking against finite differences must hold these fixed, since
/// they are not differentiable functions of the parameters.
#[derive(Clone, Debug, Default)]
pub struct LossFreeze {
    pub assignments: Option<(TopicAssignment, TopicAssignment)>,
    pub covisible: Option<Vec<usize>>,
    /// Variance weights of the fine loss, in refined-match order.
    pub sigma: Option<Vec<f64>>,
}

/// Values plus the frozen quantities of one evaluation.
#[derive(Clone, Debug)]
pub struct LossArtifacts {
    pub values: LossValues,
    pub freeze: LossFreeze,
}

/// Assemble the full training loss of one synthetic pair on the given graph.
/// Returns the loss var plus its component values; `None` when the pair has
/// no usable coarse ground truth.
pub fn pair_training_loss(
    g: &Graph,
    matcher: &Matcher,
    bind: &Binding,
    pair: &ImagePair,
    step: u64,
    fwd: &PairForward,
    freeze: Option<&LossFreeze>,
) -> Result<Option<(Var, LossArtifacts)>> {
    let cfg = &matcher.cfg;
    let (gw, gh) = fwd.pyr_a.coarse_grid();
    let gt = gt_coarse_matches(&pair.h_gt, gw, gh, pair.b.width, pair.b.height);
    if gt.is_empty() {
        return Ok(None);
    }

    // Sampled topic assignments; one stream per (step, image). A frozen
    // evaluation reuses the assignments of its base run instead.
    let (assign_a, assign_b) = match freeze.and_then(|f| f.assignments.clone()) {
        Some((a, b)) => (a, b),
        None => {
            let theta_a_vals = g.value_clone(fwd.theta_a);
            let theta_b_vals = g.value_clone(fwd.theta_b);
            let sample_seed_a = crate::rng::fnv1a64(&[pair.seed, step, 0]);
            let sample_seed_b = crate::rng::fnv1a64(&[pair.seed, step, 1]);
            (
                sample_assignments(&theta_a_vals, cfg.samples, sample_seed_a),
                sample_assignments(&theta_b_vals, cfg.samples, sample_seed_b),
            )
        }
    };

    // Per-sample grouped dual-softmax matrices and the ELBO log-probs.
    let mut elbo_samples: Vec<Vec<Option<Var>>> = vec![Vec::with_capacity(cfg.samples); gt.len()];
    for s in 0..cfg.samples {
        let mats = matcher.topic_prob_matrices(
            g,
            bind,
            fwd,
            &assign_a.labels[s],
            &assign_b.labels[s],
        )?;
        for (mi, &(i, j)) in gt.iter().enumerate() {
            let (za, zb) = (assign_a.labels[s][i], assign_b.labels[s][j]);
            let mut entry = None;
            if za == zb {
                if let Some((mat, var)) = mats.iter().find(|(m, _)| m.topic == za) {
                    // Group membership is exactly "assigned this topic".
                    let pi = mat.idx_a.binary_search(&i).ok();
                    let pj = mat.idx_b.binary_search(&j).ok();
                    if let (Some(pi), Some(pj)) = (pi, pj) {
                        let picked = g.gather_entries(*var, vec![(pi, pj)]);
                        entry = Some(g.log_clamped(g.reshape(picked, vec![]), LOG_EPS));
                    }
                }
            }
            elbo_samples[mi].push(entry);
        }
    }
    let pos = coarse_pos_loss(g, &gt, &elbo_samples, fwd.theta_a, fwd.theta_b)?;

    // Negatives: uniform over B cells outside the 3x3 neighborhood of the
    // ground-truth partner.
    let mut neg_rng = stream(cfg.seed, &[tag::NEGATIVES, pair.seed, step]);
    let n_cells = gw * gh;
    let negatives: Vec<Vec<usize>> = gt
        .iter()
        .map(|&(_, j)| {
            let (jx, jy) = cell_xy(j, gw);
            let mut negs = Vec::with_capacity(cfg.negatives);
            while negs.len() < cfg.negatives {
                let cand = neg_rng.gen_range(0..n_cells);
                let (cx, cy) = cell_xy(cand, gw);
                let near = cx.abs_diff(jx) <= 1 && cy.abs_diff(jy) <= 1;
                if !near {
                    negs.push(cand);
                }
            }
            negs
        })
        .collect();
    let neg = coarse_neg_loss(g, &gt, &negatives, fwd.theta_a, fwd.theta_b)?;

    // Fine supervision on (a capped subset of) the ground-truth matches.
    let mut fine_subset: Vec<(usize, usize)> = gt.clone();
    if fine_subset.len() > cfg.fine_cap {
        let mut rng = stream(cfg.seed, &[tag::FINE_SUBSET, pair.seed, step]);
        for i in (1..fine_subset.len()).rev() {
            let j = rng.gen_range(0..=i);
            fine_subset.swap(i, j);
        }
        fine_subset.truncate(cfg.fine_cap);
        fine_subset.sort_unstable();
    }
    let (fw, fh) = fwd.pyr_a.fine_grid();
    let half = (cfg.patch / 2) as f64;
    let mut offsets = Vec::new();
    let mut gts = Vec::new();
    let mut sigmas = Vec::new();
    let mut sigma_values = Vec::new();
    let mut dropped = 0usize;
    for &(i, j) in &fine_subset {
        let cm = crate::coarse::CoarseMatch { a: i, b: j, confidence: 1.0, topic: 0 };
        let Some(pp) = crop_patches(
            g,
            fwd.fine_tokens_a,
            fwd.fine_tokens_b,
            &cm,
            gw,
            fw,
            fh,
            cfg.patch,
            &mut dropped,
        ) else {
            continue;
        };
        // Ground-truth offset: warp A's patch-center image point into B's
        // fine grid and measure from B's patch center.
        let ax = fine_to_image(pp.center_a_fine.0 as f64);
        let ay = fine_to_image(pp.center_a_fine.1 as f64);
        let Ok(q) = warp_point(&pair.h_gt, pt(ax, ay)) else { continue };
        let fx = (q.x - 0.5) / 2.0 - pp.center_b_fine.0 as f64;
        let fy = (q.y - 0.5) / 2.0 - pp.center_b_fine.1 as f64;
        if fx.abs() > half || fy.abs() > half {
            continue;
        }
        let r = matcher.fine.refine(g, bind, pp.a, pp.b, cfg.patch)?;
        offsets.push(r.offset);
        gts.push((fx, fy));
        // A frozen evaluation pins the variance weights of the base run.
        let sigma_var = match freeze.and_then(|f| f.sigma.as_ref()) {
            Some(vals) => g.constant(crate::autograd::Tensor::scalar(vals[sigmas.len()])),
            None => r.sigma2,
        };
        sigma_values.push(g.value(sigma_var).item());
        sigmas.push(sigma_var);
    }

    let (total, fine_val) = if offsets.is_empty() {
        (g.add(pos, neg), 0.0)
    } else {
        let fine = fine_loss(g, &offsets, &gts, &sigmas)?;
        (total_loss(g, pos, neg, fine), g.value(fine).item())
    };
    let values = LossValues {
        total: g.value(total).item(),
        pos: g.value(pos).item(),
        neg: g.value(neg).item(),
        fine: fine_val,
        gt_matches: gt.len(),
    };
    let artifacts = LossArtifacts {
        values,
        freeze: LossFreeze {
            assignments: Some((assign_a, assign_b)),
            covisible: Some(fwd.covisible.selected.clone()),
            sigma: Some(sigma_values),
        },
    };
    Ok(Some((total, artifacts)))
}

/// Convenience: full forward + loss of one pair in training mode.
pub fn evaluate_pair_loss(
    g: &Graph,
    matcher: &Matcher,
    bind: &Binding,
    pair: &ImagePair,
    step: u64,
) -> Result<Option<(Var, LossValues, Vec<crate::layers::BnUpdate>)>> {
    let fwd = matcher.forward_pair(g, bind, &pair.a, &pair.b, Mode::Train, None)?;
    let out = pair_training_loss(g, matcher, bind, pair, step, &fwd, None)?;
    Ok(out.map(|(var, art)| (var, art.values, fwd.bn_updates)))
}

/// Forward + loss with every discrete choice pinned to `freeze`; used by the
/// finite-difference gradient suite.
pub fn evaluate_pair_loss_frozen(
    g: &Graph,
    matcher: &Matcher,
    bind: &Binding,
    pair: &ImagePair,
    step: u64,
    freeze: &LossFreeze,
) -> Result<Option<(Var, LossArtifacts)>> {
    let mut fwd = matcher.forward_pair(g, bind, &pair.a, &pair.b, Mode::Train, None)?;
    if let Some(cov) = &freeze.covisible {
        fwd.covisible.selected = cov.clone();
    }
    pair_training_loss(g, matcher, bind, pair, step, &fwd, Some(freeze))
}
