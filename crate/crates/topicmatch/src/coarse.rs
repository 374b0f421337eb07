//! Coarse stage: topic-restricted feature augmentation, dual-softmax
//! matching, Monte-Carlo ELBO estimation and match selection.

use crate::autograd::{Graph, Tensor, Var};
use crate::config::{KernelKind, RunConfig};
use crate::error::{Error, Result};
use crate::layers::AttentionBlock;
use crate::params::{Binding, ParamStore};

pub const COARSE_ATTENTION_LABEL: &str = "coarse.attention";

/// One accepted coarse match between grid cells.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoarseMatch {
    /// Cell index in A (row-major over the coarse grid).
    pub a: usize,
    /// Cell index in B.
    pub b: usize,
    /// Dual-softmax probability.
    pub confidence: f64,
    pub topic: usize,
}

#[derive(Clone, Debug, Default)]
pub struct CoarseMatchSet {
    pub matches: Vec<CoarseMatch>,
}

/// Features of one covisible topic after shared self/cross attention.
pub struct TopicGroup {
    pub topic: usize,
    /// Full-grid indices of the group members.
    pub idx_a: Vec<usize>,
    pub idx_b: Vec<usize>,
    pub feats_a: Var,
    pub feats_b: Var,
}

/// The single shared augmentation block pair (one self-attention layer and
/// one cross-attention layer, shared across every topic group).
pub struct CoarseMatcher {
    pub self_block: AttentionBlock,
    pub cross_block: AttentionBlock,
}

impl CoarseMatcher {
    pub fn new(store: &mut ParamStore, cfg: &RunConfig, seed: u64) -> Self {
        CoarseMatcher {
            self_block: AttentionBlock::new(
                store,
                "coarse.self",
                cfg.coarse_dim,
                cfg.heads_coarse,
                cfg.kernel_coarse,
                seed,
            ),
            cross_block: AttentionBlock::new(
                store,
                "coarse.cross",
                cfg.coarse_dim,
                cfg.heads_coarse,
                cfg.kernel_coarse,
                seed,
            ),
        }
    }

    /// Gather each covisible topic's members in both images and run them
    /// through the shared SA then CA layers. A topic empty on either side is
    /// skipped (no candidates can come from it); features outside covisible
    /// topics are untouched.
    #[allow(clippy::too_many_arguments)]
    pub fn augment_features(
        &self,
        g: &Graph,
        bind: &Binding,
        tokens_a: Var,
        tokens_b: Var,
        assign_a: &[usize],
        assign_b: &[usize],
        covisible: &[usize],
    ) -> Result<Vec<TopicGroup>> {
        let mut groups = Vec::new();
        for &topic in covisible {
            let idx_a: Vec<usize> =
                (0..assign_a.len()).filter(|&i| assign_a[i] == topic).collect();
            let idx_b: Vec<usize> =
                (0..assign_b.len()).filter(|&i| assign_b[i] == topic).collect();
            if idx_a.is_empty() || idx_b.is_empty() {
                continue;
            }
            let fa = g.gather_rows(tokens_a, idx_a.clone());
            let fb = g.gather_rows(tokens_b, idx_b.clone());
            let fa = self.self_block.forward(g, bind, fa, fa, COARSE_ATTENTION_LABEL)?;
            let fb = self.self_block.forward(g, bind, fb, fb, COARSE_ATTENTION_LABEL)?;
            let fa2 = self.cross_block.forward(g, bind, fa, fb, COARSE_ATTENTION_LABEL)?;
            let fb2 = self.cross_block.forward(g, bind, fb, fa, COARSE_ATTENTION_LABEL)?;
            groups.push(TopicGroup { topic, idx_a, idx_b, feats_a: fa2, feats_b: fb2 });
        }
        Ok(groups)
    }
}

/// Materialize the full augmented map: group members take their augmented
/// rows, everything else passes through unchanged.
pub fn materialize_augmented(g: &Graph, tokens: Var, groups: &[TopicGroup], side_a: bool) -> Tensor {
    let mut out = g.value_clone(tokens);
    let d = out.dims2().1;
    for grp in groups {
        let (idx, feats) = if side_a { (&grp.idx_a, grp.feats_a) } else { (&grp.idx_b, grp.feats_b) };
        let fv = g.value_clone(feats);
        for (r, &i) in idx.iter().enumerate() {
            let dst = i * d;
            out.data_mut()[dst..dst + d].copy_from_slice(&fv.row(r)[..]);
        }
    }
    out
}

/// Elementwise product of row-wise and column-wise softmax over the scaled
/// score matrix `<a_i, b_j> / t`.
pub fn dual_softmax(g: &Graph, feats_a: Var, feats_b: Var, temperature: f64) -> Result<Var> {
    let (m, da) = {
        let s = g.shape_of(feats_a);
        (s[0], s[1])
    };
    let (n, db) = {
        let s = g.shape_of(feats_b);
        (s[0], s[1])
    };
    if da != db {
        return Err(Error::Dim(format!("dual_softmax widths {da} vs {db}")));
    }
    if m == 0 || n == 0 {
        return Err(Error::Dim("dual_softmax needs at least one row per side".into()));
    }
    if temperature <= 0.0 {
        return Err(Error::Contract(format!("temperature must be positive, got {temperature}")));
    }
    let scores = g.scale(
        g.matmul_flags(feats_a, false, feats_b, true, "coarse.dual_softmax"),
        1.0 / temperature,
    );
    Ok(g.mul(g.softmax_rows(scores), g.softmax_cols(scores)))
}

/// Monte-Carlo ELBO from per-match sampled conditional log-probabilities.
/// `None` marks a sample whose topic draws disagreed (the NaN outcome);
/// such samples are excluded from the mean, and a match with no valid
/// samples contributes zero.
pub fn elbo_from_log_probs(g: &Graph, per_match: &[Vec<Option<Var>>]) -> Var {
    let mut weighted: Vec<Var> = Vec::new();
    for samples in per_match {
        let valid: Vec<Var> = samples.iter().flatten().copied().collect();
        if valid.is_empty() {
            continue;
        }
        let w = 1.0 / valid.len() as f64;
        let stacked = g.stack_scalars(&valid);
        weighted.push(g.scale(g.sum(stacked), w));
    }
    if weighted.is_empty() {
        return g.scalar(0.0);
    }
    let all = g.stack_scalars(&weighted);
    g.sum(all)
}

/// Value-level twin of [`elbo_from_log_probs`] for oracles and tests.
pub fn elbo_from_values(per_match: &[Vec<Option<f64>>]) -> f64 {
    let mut total = 0.0;
    for samples in per_match {
        let valid: Vec<f64> = samples.iter().flatten().copied().collect();
        if !valid.is_empty() {
            total += valid.iter().sum::<f64>() / valid.len() as f64;
        }
    }
    total
}

/// One topic group's dual-softmax output with its index maps.
#[derive(Clone)]
pub struct TopicProbMatrix {
    pub topic: usize,
    pub idx_a: Vec<usize>,
    pub idx_b: Vec<usize>,
    /// `[idx_a.len(), idx_b.len()]` probabilities.
    pub probs: Tensor,
}

/// Keep, within each topic group, the entries that are mutual row/column
/// argmaxes (when `mutual` is set) and meet the confidence threshold; map
/// them back to full-grid indices and merge groups in topic order. Duplicate
/// `(a, b)` candidates keep the highest-confidence instance.
pub fn select_coarse_matches(
    matrices: &[TopicProbMatrix],
    tau: f64,
    mutual: bool,
) -> Result<CoarseMatchSet> {
    if !(0.0 < tau && tau < 1.0) {
        return Err(Error::Contract(format!("tau must lie in (0,1), got {tau}")));
    }
    let mut picked: Vec<CoarseMatch> = Vec::new();
    for mat in matrices {
        let (m, n) = mat.probs.dims2();
        debug_assert_eq!(m, mat.idx_a.len());
        debug_assert_eq!(n, mat.idx_b.len());
        if mutual {
            // First-max argmax per row and per column (ties to lower index).
            let row_arg: Vec<usize> = (0..m)
                .map(|i| {
                    let row = mat.probs.row(i);
                    let mut best = 0;
                    for j in 1..n {
                        if row[j] > row[best] {
                            best = j;
                        }
                    }
                    best
                })
                .collect();
            let col_arg: Vec<usize> = (0..n)
                .map(|j| {
                    let mut best = 0;
                    for i in 1..m {
                        if mat.probs.at2(i, j) > mat.probs.at2(best, j) {
                            best = i;
                        }
                    }
                    best
                })
                .collect();
            for i in 0..m {
                let j = row_arg[i];
                if col_arg[j] == i && mat.probs.at2(i, j) >= tau {
                    picked.push(CoarseMatch {
                        a: mat.idx_a[i],
                        b: mat.idx_b[j],
                        confidence: mat.probs.at2(i, j),
                        topic: mat.topic,
                    });
                }
            }
        } else {
            for i in 0..m {
                for j in 0..n {
                    if mat.probs.at2(i, j) >= tau {
                        picked.push(CoarseMatch {
                            a: mat.idx_a[i],
                            b: mat.idx_b[j],
                            confidence: mat.probs.at2(i, j),
                            topic: mat.topic,
                        });
                    }
                }
            }
        }
    }
    // Cross-group duplicates (possible under sampled assignments): keep the
    // strongest instance, ties to the lower topic id.
    picked.sort_by(|x, y| {
        (x.a, x.b)
            .cmp(&(y.a, y.b))
            .then(y.confidence.partial_cmp(&x.confidence).unwrap())
            .then(x.topic.cmp(&y.topic))
    });
    picked.dedup_by_key(|m| (m.a, m.b));
    picked.sort_by(|x, y| (x.topic, x.a, x.b).cmp(&(y.topic, y.a, y.b)));
    Ok(CoarseMatchSet { matches: picked })
}

/// FLOPs spent inside the shared augmentation blocks for the given group
/// layout, with fresh random features. Used by the efficiency benchmarks.
pub fn augmentation_flops(
    d: usize,
    heads: usize,
    kernel: KernelKind,
    tokens_per_image: usize,
    group_sizes: &[(usize, usize)],
    seed: u64,
) -> u64 {
    use rand::Rng;
    let cfg = RunConfig {
        coarse_dim: d,
        heads_coarse: heads,
        kernel_coarse: kernel,
        topics: group_sizes.len().max(2),
        covisible: group_sizes.len().max(1),
        ..RunConfig::default()
    };
    let mut store = ParamStore::new();
    let matcher = CoarseMatcher::new(&mut store, &cfg, seed);
    let mut rng = crate::rng::stream(seed, &[81]);
    let g = Graph::new();
    let bind = store.bind_frozen(&g);
    let ta = g.constant(Tensor::new(
        vec![tokens_per_image, d],
        (0..tokens_per_image * d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    ));
    let tb = g.constant(Tensor::new(
        vec![tokens_per_image, d],
        (0..tokens_per_image * d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    ));
    // Assignment with the requested group sizes; leftovers park on a
    // non-covisible topic id.
    let mut assign_a = vec![usize::MAX; tokens_per_image];
    let mut assign_b = vec![usize::MAX; tokens_per_image];
    let mut covisible = Vec::new();
    let (mut pa, mut pb) = (0, 0);
    for (t, &(sa, sb)) in group_sizes.iter().enumerate() {
        covisible.push(t);
        for _ in 0..sa {
            assign_a[pa] = t;
            pa += 1;
        }
        for _ in 0..sb {
            assign_b[pb] = t;
            pb += 1;
        }
    }
    let before = g.flops();
    matcher
        .augment_features(&g, &bind, ta, tb, &assign_a, &assign_b, &covisible)
        .expect("augmentation");
    g.flops().since(&before).get(COARSE_ATTENTION_LABEL)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rand_mat(seed: u64, r: usize, c: usize) -> Tensor {
        let mut rng = crate::rng::stream(seed, &[80]);
        Tensor::new(vec![r, c], (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    fn toy_matcher(d: usize, kernel: KernelKind) -> (ParamStore, CoarseMatcher) {
        let cfg = RunConfig {
            coarse_dim: d,
            heads_coarse: 2,
            kernel_coarse: kernel,
            ..RunConfig::default()
        };
        let mut store = ParamStore::new();
        let matcher = CoarseMatcher::new(&mut store, &cfg, 23);
        (store, matcher)
    }

    #[test]
    fn single_member_groups_stay_finite_and_present() {
        let (store, matcher) = toy_matcher(8, KernelKind::Dot);
        let g = Graph::new();
        let bind = store.bind_frozen(&g);
        let ta = g.constant(rand_mat(1, 4, 8));
        let tb = g.constant(rand_mat(2, 4, 8));
        let assign_a = vec![0, 9, 9, 9];
        let assign_b = vec![9, 0, 9, 9];
        let groups = matcher
            .augment_features(&g, &bind, ta, tb, &assign_a, &assign_b, &[0])
            .unwrap();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].idx_a, vec![0]);
        assert_eq!(groups[0].idx_b, vec![1]);
        assert!(g.value(groups[0].feats_a).all_finite());
        assert!(g.value(groups[0].feats_b).all_finite());
    }

    #[test]
    fn empty_side_topics_are_skipped() {
        let (store, matcher) = toy_matcher(8, KernelKind::Linear);
        let g = Graph::new();
        let bind = store.bind_frozen(&g);
        let ta = g.constant(rand_mat(3, 4, 8));
        let tb = g.constant(rand_mat(4, 4, 8));
        let groups = matcher
            .augment_features(&g, &bind, ta, tb, &[0, 0, 1, 1], &[1, 1, 1, 1], &[0, 1])
            .unwrap();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].topic, 1);
    }

    #[test]
    fn non_covisible_features_pass_through_unchanged() {
        let (store, matcher) = toy_matcher(8, KernelKind::Linear);
        let g = Graph::new();
        let bind = store.bind_frozen(&g);
        let ta_t = rand_mat(5, 6, 8);
        let tb_t = rand_mat(6, 6, 8);
        let ta = g.constant(ta_t.clone());
        let tb = g.constant(tb_t.clone());
        let assign = vec![0, 1, 0, 1, 2, 2];
        let groups = matcher
            .augment_features(&g, &bind, ta, tb, &assign, &assign, &[0])
            .unwrap();
        let full = materialize_augmented(&g, ta, &groups, true);
        for i in [1usize, 3, 4, 5] {
            assert_eq!(full.row(i), ta_t.row(i), "row {i} should be untouched");
        }
        assert_ne!(full.row(0), ta_t.row(0));
    }

    #[test]
    fn permuting_group_members_permutes_outputs() {
        let (store, matcher) = toy_matcher(8, KernelKind::Dot);
        let tokens_a = rand_mat(7, 5, 8);
        let tokens_b = rand_mat(8, 4, 8);

        let run = |perm: &[usize]| {
            let g = Graph::new();
            let bind = store.bind_frozen(&g);
            // Permute A's rows; assignment keeps everyone in topic 0.
            let permuted = Tensor::from_rows(
                &perm.iter().map(|&i| tokens_a.row(i).to_vec()).collect::<Vec<_>>(),
            );
            let ta = g.constant(permuted);
            let tb = g.constant(tokens_b.clone());
            let groups = matcher
                .augment_features(&g, &bind, ta, tb, &[0; 5], &[0; 4], &[0])
                .unwrap();
            g.value_clone(groups[0].feats_a)
        };
        let base = run(&[0, 1, 2, 3, 4]);
        let perm = [3usize, 0, 4, 1, 2];
        let shuffled = run(&perm);
        for (r, &src) in perm.iter().enumerate() {
            for c in 0..8 {
                assert!(
                    (shuffled.at2(r, c) - base.at2(src, c)).abs() < 1e-12,
                    "row {r} col {c}"
                );
            }
        }
    }

    /// Topic restriction processes the covisible groups only; with uniform
    /// groups of N/K tokens that is K_co * N / K tokens against N for the
    /// full pass, strictly cheaper for both kernels whenever K_co < K. At
    /// full coverage (K_co = K) the linear kernel costs exactly the same, so
    /// the guarantee there is "never more".
    #[test]
    fn grouped_attention_is_cheaper_than_one_full_pass() {
        let n = 256;
        let k = 8;
        let k_co = 3;
        for kernel in [KernelKind::Dot, KernelKind::Linear] {
            let covisible: Vec<(usize, usize)> = (0..k_co).map(|_| (n / k, n / k)).collect();
            let flops_grouped = augmentation_flops(16, 2, kernel, n, &covisible, 31);
            let flops_full = augmentation_flops(16, 2, kernel, n, &[(n, n)], 31);
            assert!(
                flops_grouped < flops_full,
                "{kernel:?}: grouped {flops_grouped} !< full {flops_full}"
            );

            let all: Vec<(usize, usize)> = (0..k).map(|_| (n / k, n / k)).collect();
            let flops_all = augmentation_flops(16, 2, kernel, n, &all, 31);
            assert!(
                flops_all <= flops_full,
                "{kernel:?}: full-coverage grouping {flops_all} exceeds {flops_full}"
            );
        }
    }

    #[test]
    fn dual_softmax_examples() {
        let g = Graph::new();
        // Single entry.
        let a = g.constant(rand_mat(9, 1, 4));
        let b = g.constant(rand_mat(10, 1, 4));
        let p = dual_softmax(&g, a, b, 0.1).unwrap();
        assert!((g.value(p).item() - 1.0).abs() < 1e-12);

        // All-equal scores on a square problem: every entry 1/(m*n).
        let a = g.constant(Tensor::zeros(&[3, 4]));
        let b = g.constant(Tensor::zeros(&[3, 4]));
        let p = dual_softmax(&g, a, b, 1.0).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((g.value(p).at2(i, j) - 1.0 / 9.0).abs() < 1e-12);
            }
        }

        // Strong diagonal.
        let a = g.constant(Tensor::new(vec![2, 2], vec![10.0, 0.0, 0.0, 10.0]));
        let b = g.constant(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]));
        let p = dual_softmax(&g, a, b, 1.0).unwrap();
        assert!(g.value(p).at2(0, 0) > 0.99);
        assert!(g.value(p).at2(1, 1) > 0.99);
    }

    #[test]
    fn dual_softmax_entries_bounded_by_factors() {
        let g = Graph::new();
        let a = g.constant(rand_mat(11, 5, 6));
        let b = g.constant(rand_mat(12, 7, 6));
        let scores = g.matmul_flags(a, false, b, true, "t");
        let scores = g.scale(scores, 10.0);
        let rows = g.softmax_rows(scores);
        let cols = g.softmax_cols(scores);
        let p = g.mul(rows, cols);
        for i in 0..5 {
            for j in 0..7 {
                let v = g.value(p).at2(i, j);
                assert!((0.0..=1.0).contains(&v));
                assert!(v <= g.value(rows).at2(i, j) + 1e-15);
                assert!(v <= g.value(cols).at2(i, j) + 1e-15);
            }
        }
    }

    #[test]
    fn elbo_single_match_all_same_topic() {
        let per_match = vec![vec![Some(0.5f64.ln()); 7]];
        let got = elbo_from_values(&per_match);
        assert!((got - 0.5f64.ln()).abs() < 1e-12);

        // Graph path agrees.
        let g = Graph::new();
        let vars: Vec<Option<Var>> = (0..7).map(|_| Some(g.scalar(0.5f64.ln()))).collect();
        let e = elbo_from_log_probs(&g, &[vars]);
        assert!((g.value(e).item() - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn elbo_all_nan_match_contributes_zero() {
        let per_match: Vec<Vec<Option<f64>>> =
            vec![vec![None; 4], vec![Some(-1.0), None, Some(-3.0), None]];
        assert!((elbo_from_values(&per_match) - (-2.0)).abs() < 1e-12);
    }

    /// Enumeration oracle for the valid-sample estimator: conditioned on the
    /// two draws agreeing, topic k occurs with probability
    /// `theta_i[k] * theta_j[k] / sum_h theta_i[h] * theta_j[h]`.
    fn exact_conditional_elbo(theta_i: &[f64], theta_j: &[f64], log_p: &[f64]) -> f64 {
        let joint: Vec<f64> = theta_i.iter().zip(theta_j).map(|(a, b)| a * b).collect();
        let z: f64 = joint.iter().sum();
        joint.iter().zip(log_p).map(|(w, lp)| w / z * lp).sum()
    }

    fn mc_elbo_once(theta_i: &[f64], theta_j: &[f64], log_p: &[f64], s: usize, seed: u64) -> f64 {
        let k = theta_i.len();
        let theta = Tensor::new(
            vec![2, k],
            theta_i.iter().chain(theta_j.iter()).copied().collect(),
        );
        let assign = crate::topics::sample_assignments(&theta, s, seed);
        let samples: Vec<Option<f64>> = (0..s)
            .map(|si| {
                let (zi, zj) = (assign.labels[si][0], assign.labels[si][1]);
                (zi == zj).then(|| log_p[zi])
            })
            .collect();
        elbo_from_values(&[samples])
    }

    #[test]
    fn mc_estimate_matches_enumeration_on_k3_toy() {
        let theta_i = [0.5, 0.3, 0.2];
        let theta_j = [0.25, 0.45, 0.3];
        let log_p = [0.6f64.ln(), 0.2f64.ln(), 0.35f64.ln()];
        let exact = exact_conditional_elbo(&theta_i, &theta_j, &log_p);
        let mc = mc_elbo_once(&theta_i, &theta_j, &log_p, 10_000, 4242);
        assert!((mc - exact).abs() <= 0.01, "mc {mc} vs exact {exact}");
    }

    #[test]
    fn estimator_mean_is_stable_when_s_doubles() {
        let theta_i = [0.5, 0.3, 0.2];
        let theta_j = [0.25, 0.45, 0.3];
        let log_p = [0.6f64.ln(), 0.2f64.ln(), 0.35f64.ln()];
        let exact = exact_conditional_elbo(&theta_i, &theta_j, &log_p);
        for s in [64usize, 128] {
            let mean: f64 = (0..100)
                .map(|seed| mc_elbo_once(&theta_i, &theta_j, &log_p, s, seed))
                .sum::<f64>()
                / 100.0;
            assert!((mean - exact).abs() <= 0.02, "S={s}: mean {mean} vs exact {exact}");
        }
    }

    #[test]
    fn elbo_lower_bounds_the_conditional_log_likelihood() {
        // Jensen: E[log p] <= log E[p] under the conditional topic law.
        let theta_i = [0.6, 0.25, 0.15];
        let theta_j = [0.3, 0.5, 0.2];
        let log_p = [0.7f64.ln(), 0.15f64.ln(), 0.4f64.ln()];
        let joint: Vec<f64> = theta_i.iter().zip(&theta_j).map(|(a, b)| a * b).collect();
        let z: f64 = joint.iter().sum();
        let loglik = (joint
            .iter()
            .zip(&log_p)
            .map(|(w, lp)| w / z * lp.exp())
            .sum::<f64>())
        .ln();
        let exact = exact_conditional_elbo(&theta_i, &theta_j, &log_p);
        assert!(exact <= loglik + 1e-12);
        let mc = mc_elbo_once(&theta_i, &theta_j, &log_p, 20_000, 31337);
        assert!(mc <= loglik + 0.02);
    }

    fn brute_force_select(
        mats: &[TopicProbMatrix],
        tau: f64,
        mutual: bool,
    ) -> Vec<(usize, usize)> {
        let mut out: Vec<CoarseMatch> = Vec::new();
        for mat in mats {
            let (m, n) = mat.probs.dims2();
            for i in 0..m {
                for j in 0..n {
                    let p = mat.probs.at2(i, j);
                    if p < tau {
                        continue;
                    }
                    if mutual {
                        let row_ok = (0..n).all(|jj| {
                            mat.probs.at2(i, jj) < p || (mat.probs.at2(i, jj) == p && jj >= j)
                        });
                        let col_ok = (0..m).all(|ii| {
                            mat.probs.at2(ii, j) < p || (mat.probs.at2(ii, j) == p && ii >= i)
                        });
                        if !(row_ok && col_ok) {
                            continue;
                        }
                    }
                    out.push(CoarseMatch {
                        a: mat.idx_a[i],
                        b: mat.idx_b[j],
                        confidence: p,
                        topic: mat.topic,
                    });
                }
            }
        }
        out.sort_by(|x, y| {
            (x.a, x.b)
                .cmp(&(y.a, y.b))
                .then(y.confidence.partial_cmp(&x.confidence).unwrap())
                .then(x.topic.cmp(&y.topic))
        });
        out.dedup_by_key(|m| (m.a, m.b));
        out.sort_by(|x, y| (x.topic, x.a, x.b).cmp(&(y.topic, y.a, y.b)));
        out.iter().map(|m| (m.a, m.b)).collect()
    }

    #[test]
    fn selection_examples() {
        let mat = TopicProbMatrix {
            topic: 0,
            idx_a: vec![0, 1],
            idx_b: vec![0, 1],
            probs: Tensor::new(vec![2, 2], vec![0.9, 0.01, 0.01, 0.9]),
        };
        let got = select_coarse_matches(&[mat], 0.2, true).unwrap();
        assert_eq!(got.matches.len(), 2);
        assert_eq!((got.matches[0].a, got.matches[0].b), (0, 0));
        assert_eq!((got.matches[1].a, got.matches[1].b), (1, 1));
        assert!((got.matches[0].confidence - 0.9).abs() < 1e-12);

        let low = TopicProbMatrix {
            topic: 0,
            idx_a: vec![0],
            idx_b: vec![0],
            probs: Tensor::new(vec![1, 1], vec![0.15]),
        };
        assert!(select_coarse_matches(&[low], 0.2, true).unwrap().matches.is_empty());

        assert!(select_coarse_matches(&[], 1.2, true).is_err());
    }

    #[test]
    fn selection_matches_brute_force_oracle() {
        let mut rng = crate::rng::stream(61, &[82]);
        for trial in 0..300 {
            let m = rng.gen_range(1..=8);
            let n = rng.gen_range(1..=8);
            let probs = Tensor::new(
                vec![m, n],
                (0..m * n)
                    .map(|_| (rng.gen_range(0..20) as f64) / 20.0)
                    .collect(),
            );
            let mat = TopicProbMatrix {
                topic: trial % 3,
                idx_a: (0..m).collect(),
                idx_b: (100..100 + n).collect(),
                probs,
            };
            for mutual in [true, false] {
                let got: Vec<(usize, usize)> = select_coarse_matches(&[mat.clone()], 0.3, mutual)
                    .unwrap()
                    .matches
                    .iter()
                    .map(|mm| (mm.a, mm.b))
                    .collect();
                let want = brute_force_select(&[mat.clone()], 0.3, mutual);
                assert_eq!(got, want, "trial {trial} mutual {mutual}");
            }
        }
    }

    #[test]
    fn mutual_selection_is_a_partial_injection() {
        let mut rng = crate::rng::stream(62, &[83]);
        for _ in 0..100 {
            let m = rng.gen_range(1..=8);
            let n = rng.gen_range(1..=8);
            let probs =
                Tensor::new(vec![m, n], (0..m * n).map(|_| rng.gen_range(0.0..1.0)).collect());
            let mat = TopicProbMatrix {
                topic: 0,
                idx_a: (0..m).collect(),
                idx_b: (0..n).collect(),
                probs,
            };
            let got = select_coarse_matches(&[mat], 0.05, true).unwrap();
            let mut seen_a = std::collections::HashSet::new();
            let mut seen_b = std::collections::HashSet::new();
            for mm in &got.matches {
                assert!(seen_a.insert(mm.a));
                assert!(seen_b.insert(mm.b));
            }
        }
    }
}
