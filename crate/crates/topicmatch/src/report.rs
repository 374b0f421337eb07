//! Evaluation harness: runs matching plus RANSAC over synthetic pairs and
//! aggregates corner-error AUC, MMA and topic-agreement statistics.

use std::path::Path;

use crate::error::Result;
use crate::geometry::{auc, corner_error, mma, pt, ransac_homography, warp_point, Pt, RansacParams};
use crate::model::{cell_xy, MatchOverrides, Matcher};
use crate::synth::{cell_center_image, gen_pair, gt_coarse_matches, GenConfig, ImagePair, COARSE_CELL};

pub const AUC_THRESHOLDS: [f64; 3] = [3.0, 5.0, 10.0];

/// Per-pair evaluation record.
#[derive(Clone, Debug)]
pub struct PairEval {
    pub seed: u64,
    pub corner_error: f64,
    pub matches: usize,
    pub inliers: usize,
    pub inlier_ratio: f64,
    /// MMA at thresholds 1..10 px.
    pub mma: Vec<f64>,
    /// Fraction of predicted coarse matches within one coarse cell of the
    /// ground-truth target.
    pub coarse_within_one: f64,
    pub coarse_matches: usize,
    /// Fraction of covisible A-cells whose argmax topic matches the B cell
    /// under the ground-truth warp.
    pub topic_agreement: f64,
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub pairs: Vec<PairEval>,
    /// Corner-error AUC at 3, 5 and 10 px.
    pub auc: [f64; 3],
    pub mean_matches: f64,
    pub mean_inlier_ratio: f64,
    pub mean_mma: Vec<f64>,
    pub mean_coarse_within_one: f64,
    pub mean_topic_agreement: f64,
}

/// Evaluate one generated pair.
pub fn evaluate_pair(matcher: &Matcher, pair: &ImagePair, ov: &MatchOverrides) -> Result<PairEval> {
    let out = matcher.match_pair(&pair.a, &pair.b, ov)?;
    let pts: Vec<(Pt, Pt)> =
        out.refined.iter().map(|r| (pt(r.x1, r.y1), pt(r.x2, r.y2))).collect();

    let (corner_err, inliers) = if pts.len() >= 4 {
        let src: Vec<Pt> = pts.iter().map(|p| p.0).collect();
        let dst: Vec<Pt> = pts.iter().map(|p| p.1).collect();
        let params = RansacParams { seed: pair.seed, ..RansacParams::default() };
        match ransac_homography(&src, &dst, &params) {
            Ok((h_est, mask)) => (
                corner_error(&h_est, &pair.h_gt, pair.a.width, pair.a.height),
                mask.iter().filter(|&&m| m).count(),
            ),
            Err(_) => (f64::INFINITY, 0),
        }
    } else {
        (f64::INFINITY, 0)
    };

    let ths: Vec<f64> = (1..=10).map(|t| t as f64).collect();
    let mma_curve = mma(&pts, &pair.h_gt, &ths);

    // Coarse accuracy: predicted (a, b) vs the cell nearest the warped
    // ground-truth target, allowing one cell of slack per axis.
    let (gw, gh) = (out.grid_w, out.grid_h);
    let mut within = 0usize;
    for m in &out.coarse.matches {
        let (ax, ay) = cell_xy(m.a, gw);
        if let Ok(q) = warp_point(&pair.h_gt, cell_center_image(ax, ay)) {
            let tx = crate::synth::nearest_cell(q.x, gw);
            let ty = crate::synth::nearest_cell(q.y, gh);
            let (bx, by) = cell_xy(m.b, gw);
            if bx.abs_diff(tx) <= 1 && by.abs_diff(ty) <= 1 {
                within += 1;
            }
        }
    }
    let coarse_within_one = if out.coarse.matches.is_empty() {
        0.0
    } else {
        within as f64 / out.coarse.matches.len() as f64
    };

    // Topic agreement under the ground-truth warp.
    let mut agree = 0usize;
    let mut total = 0usize;
    for cy in 0..gh {
        for cx in 0..gw {
            let Ok(q) = warp_point(&pair.h_gt, cell_center_image(cx, cy)) else { continue };
            if q.x < 0.0
                || q.y < 0.0
                || q.x > (pair.b.width - 1) as f64
                || q.y > (pair.b.height - 1) as f64
            {
                continue;
            }
            let bx = ((q.x / COARSE_CELL as f64).floor() as usize).min(gw - 1);
            let by = ((q.y / COARSE_CELL as f64).floor() as usize).min(gh - 1);
            total += 1;
            if out.assignment_a[cy * gw + cx] == out.assignment_b[by * gw + bx] {
                agree += 1;
            }
        }
    }
    let topic_agreement = if total == 0 { 0.0 } else { agree as f64 / total as f64 };

    Ok(PairEval {
        seed: pair.seed,
        corner_error: corner_err,
        matches: pts.len(),
        inliers,
        inlier_ratio: if pts.is_empty() { 0.0 } else { inliers as f64 / pts.len() as f64 },
        mma: mma_curve,
        coarse_within_one,
        coarse_matches: out.coarse.matches.len(),
        topic_agreement,
    })
}

/// Evaluate a list of pair seeds under one generation config.
pub fn evaluate_seeds(
    matcher: &Matcher,
    seeds: &[u64],
    gen_cfg: &GenConfig,
    ov: &MatchOverrides,
) -> Result<EvalReport> {
    let mut pairs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let pair = gen_pair(seed, gen_cfg)?;
        pairs.push(evaluate_pair(matcher, &pair, ov)?);
    }
    Ok(summarize(pairs))
}

pub fn summarize(pairs: Vec<PairEval>) -> EvalReport {
    let n = pairs.len().max(1) as f64;
    let errors: Vec<f64> = pairs.iter().map(|p| p.corner_error).collect();
    let auc_vals =
        std::array::from_fn(|i| if pairs.is_empty() { 0.0 } else { auc(&errors, AUC_THRESHOLDS[i]) });
    let mean_mma = if pairs.is_empty() {
        vec![0.0; 10]
    } else {
        (0..10).map(|t| pairs.iter().map(|p| p.mma[t]).sum::<f64>() / n).collect()
    };
    EvalReport {
        auc: auc_vals,
        mean_matches: pairs.iter().map(|p| p.matches as f64).sum::<f64>() / n,
        mean_inlier_ratio: pairs.iter().map(|p| p.inlier_ratio).sum::<f64>() / n,
        mean_mma,
        mean_coarse_within_one: pairs.iter().map(|p| p.coarse_within_one).sum::<f64>() / n,
        mean_topic_agreement: pairs.iter().map(|p| p.topic_agreement).sum::<f64>() / n,
        pairs,
    }
}

impl EvalReport {
    /// Line-oriented text form.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("pairs {}\n", self.pairs.len()));
        for (i, t) in AUC_THRESHOLDS.iter().enumerate() {
            out.push_str(&format!("auc{} {}\n", t, self.auc[i]));
        }
        out.push_str(&format!("mean_matches {}\n", self.mean_matches));
        out.push_str(&format!("mean_inlier_ratio {}\n", self.mean_inlier_ratio));
        out.push_str(&format!("mean_coarse_within_one {}\n", self.mean_coarse_within_one));
        out.push_str(&format!("mean_topic_agreement {}\n", self.mean_topic_agreement));
        let mma_text: Vec<String> = self.mean_mma.iter().map(|v| v.to_string()).collect();
        out.push_str(&format!("mean_mma {}\n", mma_text.join(",")));
        for p in &self.pairs {
            out.push_str(&format!(
                "pair {} corner_error={} matches={} inliers={} coarse_within_one={} topic_agreement={}\n",
                p.seed, p.corner_error, p.matches, p.inliers, p.coarse_within_one, p.topic_agreement
            ));
        }
        out
    }

    /// CSV form, one row per pair.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "seed,corner_error,matches,inliers,inlier_ratio,coarse_within_one,coarse_matches,topic_agreement,mma1,mma2,mma3,mma4,mma5,mma6,mma7,mma8,mma9,mma10\n",
        );
        for p in &self.pairs {
            let mma_text: Vec<String> = p.mma.iter().map(|v| v.to_string()).collect();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                p.seed,
                p.corner_error,
                p.matches,
                p.inliers,
                p.inlier_ratio,
                p.coarse_within_one,
                p.coarse_matches,
                p.topic_agreement,
                mma_text.join(",")
            ));
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.txt"), self.to_text())?;
        std::fs::write(dir.join("report.csv"), self.to_csv())?;
        Ok(())
    }
}

/// Ground-truth-based coarse accuracy helper shared with the acceptance
/// suite: fraction of predicted coarse matches within one cell of the target.
pub fn coarse_accuracy_for(matcher: &Matcher, pair: &ImagePair) -> Result<(f64, usize)> {
    let eval = evaluate_pair(matcher, pair, &MatchOverrides::default())?;
    Ok((eval.coarse_within_one, eval.coarse_matches))
}

/// The number of ground-truth matches available for a pair (used by tests).
pub fn gt_match_count(pair: &ImagePair) -> usize {
    let g = pair.a.width / COARSE_CELL;
    gt_coarse_matches(&pair.h_gt, g, pair.a.height / COARSE_CELL, pair.b.width, pair.b.height).len()
}
