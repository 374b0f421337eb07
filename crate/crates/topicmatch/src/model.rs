//! Full matcher: backbone, topic inference, covisible selection,
//! topic-restricted augmentation, dual-softmax matching and refinement.

use crate::autograd::{FlopCounter, Graph, Tensor, Var};
use crate::backbone::{positional_encoding, tokens_from_map, Backbone, FeaturePyramid};
use crate::coarse::{
    dual_softmax, select_coarse_matches, CoarseMatchSet, CoarseMatcher, TopicProbMatrix,
};
use crate::config::{KernelKind, RunConfig};
use crate::error::Result;
use crate::fine::{crop_patches, fine_to_image, FineMatcher, RefinedMatch};
use crate::imageio::GrayImage;
use crate::layers::{BnUpdate, Mode};
use crate::params::{Binding, ParamStore};
use crate::topics::{
    argmax_assignment, covisible_topics, image_topic_distribution, topic_distribution,
    CovisibleReport, TopicModule,
};

pub struct Matcher {
    pub cfg: RunConfig,
    pub store: ParamStore,
    pub backbone: Backbone,
    pub topics: TopicModule,
    pub coarse: CoarseMatcher,
    pub fine: FineMatcher,
}

/// Inference-time overrides (CLI flags).
#[derive(Clone, Copy, Debug, Default)]
pub struct MatchOverrides {
    pub tau: Option<f64>,
    pub covisible: Option<usize>,
    pub kernel: Option<KernelKind>,
    pub topk: Option<usize>,
}

/// Everything the coarse stage computes for one image pair.
pub struct PairForward {
    pub pyr_a: FeaturePyramid,
    pub pyr_b: FeaturePyramid,
    pub tokens_a: Var,
    pub tokens_b: Var,
    pub theta_a: Var,
    pub theta_b: Var,
    pub theta_img_a: Vec<f64>,
    pub theta_img_b: Vec<f64>,
    pub covisible: CovisibleReport,
    pub fine_tokens_a: Var,
    pub fine_tokens_b: Var,
    pub bn_updates: Vec<BnUpdate>,
}

/// Inference result for one pair.
pub struct MatchOutput {
    pub coarse: CoarseMatchSet,
    pub refined: Vec<RefinedMatch>,
    pub dropped_fine: usize,
    pub covisible: CovisibleReport,
    pub assignment_a: Vec<usize>,
    pub assignment_b: Vec<usize>,
    pub theta_a: Tensor,
    pub theta_b: Tensor,
    pub grid_w: usize,
    pub grid_h: usize,
    pub flops: FlopCounter,
}

impl Matcher {
    pub fn init(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let seed = cfg.seed;
        let backbone = Backbone::new(&mut store, &cfg, seed);
        let topics = TopicModule::new(&mut store, &cfg, seed);
        let coarse = CoarseMatcher::new(&mut store, &cfg, seed);
        let fine = FineMatcher::new(&mut store, &cfg, seed);
        Ok(Matcher { cfg, store, backbone, topics, coarse, fine })
    }

    /// Swap the attention kernel of every stage; weights are shared between
    /// kernels, so this is a pure inference-time switch.
    pub fn set_kernel(&mut self, kernel: KernelKind) {
        self.cfg.kernel_topic = kernel;
        self.cfg.kernel_coarse = kernel;
        self.cfg.kernel_fine = kernel;
        for layer in &mut self.topics.layers {
            layer.kernel = kernel;
        }
        self.coarse.self_block.kernel = kernel;
        self.coarse.cross_block.kernel = kernel;
        self.fine.block.kernel = kernel;
    }

    /// Shared forward pass up to the topic stage.
    pub fn forward_pair(
        &self,
        g: &Graph,
        bind: &Binding,
        img_a: &GrayImage,
        img_b: &GrayImage,
        mode: Mode,
        covisible_override: Option<usize>,
    ) -> Result<PairForward> {
        let mut bn_updates = Vec::new();
        let pyr_a = self.backbone.extract(g, bind, &self.store, img_a, mode, &mut bn_updates)?;
        let pyr_b = self.backbone.extract(g, bind, &self.store, img_b, mode, &mut bn_updates)?;

        let (gw, gh) = pyr_a.coarse_grid();
        let mut tokens_a = tokens_from_map(g, pyr_a.coarse);
        let mut tokens_b = tokens_from_map(g, pyr_b.coarse);
        if self.cfg.positional_encoding {
            let pe = g.constant(positional_encoding(gh, gw, self.cfg.coarse_dim));
            tokens_a = g.add(tokens_a, pe);
            let (gw_b, gh_b) = pyr_b.coarse_grid();
            let pe_b = g.constant(positional_encoding(gh_b, gw_b, self.cfg.coarse_dim));
            tokens_b = g.add(tokens_b, pe_b);
        }

        let local_a = self.topics.infer_local_topics(g, bind, tokens_a)?;
        let local_b = self.topics.infer_local_topics(g, bind, tokens_b)?;
        let theta_a = topic_distribution(g, local_a, tokens_a);
        let theta_b = topic_distribution(g, local_b, tokens_b);
        let theta_img_a = g.value_clone(image_topic_distribution(g, theta_a)).into_data();
        let theta_img_b = g.value_clone(image_topic_distribution(g, theta_b)).into_data();
        let k_co = covisible_override.unwrap_or(self.cfg.covisible).min(self.cfg.topics);
        let covisible = covisible_topics(&theta_img_a, &theta_img_b, k_co);

        let fine_tokens_a = tokens_from_map(g, pyr_a.fine);
        let fine_tokens_b = tokens_from_map(g, pyr_b.fine);

        Ok(PairForward {
            pyr_a,
            pyr_b,
            tokens_a,
            tokens_b,
            theta_a,
            theta_b,
            theta_img_a,
            theta_img_b,
            covisible,
            fine_tokens_a,
            fine_tokens_b,
            bn_updates,
        })
    }

    /// Per-topic dual-softmax matrices for the given assignments. Features
    /// are pre-scaled by `1/sqrt(d)` on each side, so the score matrix seen
    /// by the dual softmax is `<a, b> / (d * t)`.
    #[allow(clippy::too_many_arguments)]
    pub fn topic_prob_matrices(
        &self,
        g: &Graph,
        bind: &Binding,
        fwd: &PairForward,
        assign_a: &[usize],
        assign_b: &[usize],
    ) -> Result<Vec<(TopicProbMatrix, Var)>> {
        let groups = self.coarse.augment_features(
            g,
            bind,
            fwd.tokens_a,
            fwd.tokens_b,
            assign_a,
            assign_b,
            &fwd.covisible.selected,
        )?;
        let scale = 1.0 / (self.cfg.coarse_dim as f64).sqrt();
        let mut out = Vec::with_capacity(groups.len());
        for grp in groups {
            let fa = g.scale(grp.feats_a, scale);
            let fb = g.scale(grp.feats_b, scale);
            let probs = dual_softmax(g, fa, fb, self.cfg.ds_temperature)?;
            out.push((
                TopicProbMatrix {
                    topic: grp.topic,
                    idx_a: grp.idx_a,
                    idx_b: grp.idx_b,
                    probs: g.value_clone(probs),
                },
                probs,
            ));
        }
        Ok(out)
    }

    /// End-to-end matching of one image pair (evaluation mode).
    pub fn match_pair(
        &self,
        img_a: &GrayImage,
        img_b: &GrayImage,
        ov: &MatchOverrides,
    ) -> Result<MatchOutput> {
        let g = Graph::new();
        let bind = self.store.bind_frozen(&g);
        let fwd = self.forward_pair(&g, &bind, img_a, img_b, Mode::Eval, ov.covisible)?;
        let (gw, gh) = fwd.pyr_a.coarse_grid();

        let theta_a = g.value_clone(fwd.theta_a);
        let theta_b = g.value_clone(fwd.theta_b);
        let assignment_a = argmax_assignment(&theta_a);
        let assignment_b = argmax_assignment(&theta_b);

        let mats =
            self.topic_prob_matrices(&g, &bind, &fwd, &assignment_a, &assignment_b)?;
        let matrices: Vec<TopicProbMatrix> = mats.into_iter().map(|(m, _)| m).collect();
        let tau = ov.tau.unwrap_or(self.cfg.tau);
        let mut coarse = select_coarse_matches(&matrices, tau, self.cfg.mutual_check)?;

        // Cells introduced by padding have no pixels behind them; drop any
        // match touching one.
        let keep_cell = |cell: usize, pyr: &FeaturePyramid| {
            let (cx, cy) = (cell % gw, cell / gw);
            cx * 8 < pyr.image_w && cy * 8 < pyr.image_h
        };
        coarse
            .matches
            .retain(|m| keep_cell(m.a, &fwd.pyr_a) && keep_cell(m.b, &fwd.pyr_b));

        // Fine refinement.
        let (fw, fh) = fwd.pyr_a.fine_grid();
        let mut dropped_fine = 0;
        let mut refined = Vec::with_capacity(coarse.matches.len());
        for m in &coarse.matches {
            let Some(pp) = crop_patches(
                &g,
                fwd.fine_tokens_a,
                fwd.fine_tokens_b,
                m,
                gw,
                fw,
                fh,
                self.cfg.patch,
                &mut dropped_fine,
            ) else {
                continue;
            };
            let r = self.fine.refine(&g, &bind, pp.a, pp.b, self.cfg.patch)?;
            let (mut dx, mut dy) = {
                let off = g.value_clone(r.offset);
                (off.data()[0], off.data()[1])
            };
            if self.cfg.hard_argmax_fine {
                let h = g.value_clone(r.heatmap);
                let (best, _) = h
                    .data()
                    .iter()
                    .enumerate()
                    .fold((0usize, f64::NEG_INFINITY), |acc, (i, &v)| {
                        if v > acc.1 {
                            (i, v)
                        } else {
                            acc
                        }
                    });
                let n_p = self.cfg.patch;
                let r_half = (n_p / 2) as f64;
                dx = (best % n_p) as f64 - r_half;
                dy = (best / n_p) as f64 - r_half;
            }
            let sigma2 = g.value(r.sigma2).item();
            let coherence: f64 = (0..self.cfg.topics)
                .map(|k| theta_a.at2(m.a, k) * theta_b.at2(m.b, k))
                .sum();
            let x1 = fine_to_image(pp.center_a_fine.0 as f64);
            let y1 = fine_to_image(pp.center_a_fine.1 as f64);
            let x2 = fine_to_image(pp.center_b_fine.0 as f64 + dx);
            let y2 = fine_to_image(pp.center_b_fine.1 as f64 + dy);
            // Refined points must stay inside the original images.
            if x1 >= img_a.width as f64 || y1 >= img_a.height as f64 {
                continue;
            }
            let (bw, bh) = (img_b.width as f64, img_b.height as f64);
            refined.push(RefinedMatch {
                x1,
                y1,
                x2: x2.clamp(0.0, bw - 1.0),
                y2: y2.clamp(0.0, bh - 1.0),
                confidence: m.confidence,
                topic: m.topic,
                sigma2,
                coherence,
            });
        }
        refined.sort_by(|p, q| {
            q.confidence
                .partial_cmp(&p.confidence)
                .unwrap()
                .then(p.x1.partial_cmp(&q.x1).unwrap())
                .then(p.y1.partial_cmp(&q.y1).unwrap())
        });
        if let Some(topk) = ov.topk {
            refined.truncate(topk);
        }

        Ok(MatchOutput {
            coarse,
            refined,
            dropped_fine,
            covisible: fwd.covisible,
            assignment_a,
            assignment_b,
            theta_a,
            theta_b,
            grid_w: gw,
            grid_h: gh,
            flops: g.flops(),
        })
    }
}

impl Matcher {
    /// Argmax topic per coarse cell of a single image (evaluation mode).
    pub fn topic_map(&self, img: &GrayImage) -> Result<(Vec<usize>, usize, usize)> {
        let g = Graph::new();
        let bind = self.store.bind_frozen(&g);
        let mut updates = Vec::new();
        let pyr = self.backbone.extract(&g, &bind, &self.store, img, Mode::Eval, &mut updates)?;
        let (gw, gh) = pyr.coarse_grid();
        let mut tokens = tokens_from_map(&g, pyr.coarse);
        if self.cfg.positional_encoding {
            let pe = g.constant(positional_encoding(gh, gw, self.cfg.coarse_dim));
            tokens = g.add(tokens, pe);
        }
        let local = self.topics.infer_local_topics(&g, &bind, tokens)?;
        let theta = topic_distribution(&g, local, tokens);
        Ok((argmax_assignment(&g.value_clone(theta)), gw, gh))
    }
}

/// Cell index helpers shared by training and evaluation.
pub fn cell_xy(cell: usize, grid_w: usize) -> (usize, usize) {
    (cell % grid_w, cell / grid_w)
}

pub fn cell_of_xy(x: usize, y: usize, grid_w: usize) -> usize {
    y * grid_w + x
}

/// Pair coherence probability for arbitrary theta rows.
pub fn pair_coherence(theta_a: &Tensor, theta_b: &Tensor, a: usize, b: usize) -> f64 {
    let k = theta_a.dims2().1;
    (0..k).map(|t| theta_a.at2(a, t) * theta_b.at2(b, t)).sum()
}

impl std::fmt::Debug for Matcher {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Matcher")
            .field("topics", &self.cfg.topics)
            .field("params", &self.store.len())
            .finish()
    }
}
