//! Fine stage: patch cropping around coarse matches and sub-pixel
//! refinement via a softmax heatmap expectation.

use crate::autograd::{Graph, Tensor, Var};
use crate::coarse::CoarseMatch;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::layers::AttentionBlock;
use crate::params::{Binding, ParamStore};

pub const FINE_ATTENTION_LABEL: &str = "fine.attention";

/// Coarse-to-fine scale: one coarse cell spans four fine cells.
pub const COARSE_TO_FINE: usize = 4;
/// Fine-to-image scale.
pub const FINE_TO_IMAGE: f64 = 2.0;

/// A refined sub-pixel match in full image coordinates.
#[derive(Clone, Copy, Debug)]
pub struct RefinedMatch {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    /// Inherited coarse confidence.
    pub confidence: f64,
    pub topic: usize,
    /// Total variance of the heatmap, in fine-grid pixels squared.
    pub sigma2: f64,
    /// Pair topic-coherence probability of the coarse cells.
    pub coherence: f64,
}

/// Fine-grid center of a coarse cell: index times the scale, plus the
/// half-cell offset (cell c covers fine columns 4c..4c+3, center 4c+2 after
/// rounding to the grid).
pub fn fine_center_of_cell(cell_x: usize, cell_y: usize) -> (usize, usize) {
    (cell_x * COARSE_TO_FINE + 2, cell_y * COARSE_TO_FINE + 2)
}

/// Image coordinate of a fine-grid position.
pub fn fine_to_image(f: f64) -> f64 {
    f * FINE_TO_IMAGE + 0.5
}

/// Row-major fine-token indices of the `n_p x n_p` patch centered at
/// `(cx, cy)`, or None when the window leaves the grid.
pub fn patch_indices(
    cx: usize,
    cy: usize,
    n_p: usize,
    fine_w: usize,
    fine_h: usize,
) -> Option<Vec<usize>> {
    let r = n_p / 2;
    if cx < r || cy < r || cx + r >= fine_w || cy + r >= fine_h {
        return None;
    }
    let mut idx = Vec::with_capacity(n_p * n_p);
    for dy in 0..n_p {
        for dx in 0..n_p {
            idx.push((cy - r + dy) * fine_w + (cx - r + dx));
        }
    }
    Some(idx)
}

/// Patches of both images around one coarse match.
pub struct PatchPair {
    pub coarse: CoarseMatch,
    pub a: Var,
    pub b: Var,
    pub center_b_fine: (usize, usize),
    pub center_a_fine: (usize, usize),
}

/// Crop `n_p x n_p` patches centered on the upscaled coarse coordinates.
/// Returns None (and bumps `dropped`) when either center is within
/// `floor(n_p/2)` of a border.
#[allow(clippy::too_many_arguments)]
pub fn crop_patches(
    g: &Graph,
    fine_tokens_a: Var,
    fine_tokens_b: Var,
    m: &CoarseMatch,
    coarse_grid_w: usize,
    fine_w: usize,
    fine_h: usize,
    n_p: usize,
    dropped: &mut usize,
) -> Option<PatchPair> {
    if n_p % 2 == 0 {
        panic!("patch extent must be odd, got {n_p}");
    }
    let (ax, ay) = (m.a % coarse_grid_w, m.a / coarse_grid_w);
    let (bx, by) = (m.b % coarse_grid_w, m.b / coarse_grid_w);
    let ca = fine_center_of_cell(ax, ay);
    let cb = fine_center_of_cell(bx, by);
    let (Some(idx_a), Some(idx_b)) = (
        patch_indices(ca.0, ca.1, n_p, fine_w, fine_h),
        patch_indices(cb.0, cb.1, n_p, fine_w, fine_h),
    ) else {
        *dropped += 1;
        return None;
    };
    Some(PatchPair {
        coarse: *m,
        a: g.gather_rows(fine_tokens_a, idx_a),
        b: g.gather_rows(fine_tokens_b, idx_b),
        center_a_fine: ca,
        center_b_fine: cb,
    })
}

/// Offset grid of a patch: per-position (dx, dy) relative to the center.
fn offset_grids(n_p: usize) -> (Vec<f64>, Vec<f64>) {
    let r = (n_p / 2) as f64;
    let mut xs = Vec::with_capacity(n_p * n_p);
    let mut ys = Vec::with_capacity(n_p * n_p);
    for dy in 0..n_p {
        for dx in 0..n_p {
            xs.push(dx as f64 - r);
            ys.push(dy as f64 - r);
        }
    }
    (xs, ys)
}

/// Expectation and total variance of a heatmap over the patch grid.
/// Used directly by tests and the hard-argmax path.
pub fn heatmap_moments(h: &[f64], n_p: usize) -> (f64, f64, f64) {
    assert_eq!(h.len(), n_p * n_p);
    let (xs, ys) = offset_grids(n_p);
    let mut ox = 0.0;
    let mut oy = 0.0;
    let mut e2 = 0.0;
    for i in 0..h.len() {
        ox += h[i] * xs[i];
        oy += h[i] * ys[i];
        e2 += h[i] * (xs[i] * xs[i] + ys[i] * ys[i]);
    }
    (ox, oy, e2 - ox * ox - oy * oy)
}

/// The refinement head shared across matches: one cross-attention layer
/// enriches both patches, then the center feature of A is compared against
/// every position of B.
pub struct FineMatcher {
    pub block: AttentionBlock,
}

/// Differentiable refinement output.
pub struct Refinement {
    /// `[2]`: expected (dx, dy) in fine-grid pixels.
    pub offset: Var,
    /// Scalar total variance; gradient-blocked.
    pub sigma2: Var,
    /// `[1, n_p*n_p]` heatmap.
    pub heatmap: Var,
}

impl FineMatcher {
    pub fn new(store: &mut ParamStore, cfg: &RunConfig, seed: u64) -> Self {
        FineMatcher {
            block: AttentionBlock::new(
                store,
                "fine.cross",
                cfg.fine_dim,
                cfg.heads_fine,
                cfg.kernel_fine,
                seed,
            ),
        }
    }

    pub fn refine(
        &self,
        g: &Graph,
        bind: &Binding,
        patch_a: Var,
        patch_b: Var,
        n_p: usize,
    ) -> Result<Refinement> {
        let (len, d) = {
            let s = g.shape_of(patch_a);
            (s[0], s[1])
        };
        if len != n_p * n_p {
            return Err(Error::Dim(format!("patch rows {len} != {}", n_p * n_p)));
        }
        let a = self.block.forward(g, bind, patch_a, patch_b, FINE_ATTENTION_LABEL)?;
        let b = self.block.forward(g, bind, patch_b, patch_a, FINE_ATTENTION_LABEL)?;
        let center = g.gather_rows(a, vec![(n_p * n_p) / 2]);
        let logits = g.scale(
            g.matmul_flags(center, false, b, true, FINE_ATTENTION_LABEL),
            1.0 / (d as f64).sqrt(),
        );
        let heatmap = g.softmax_rows(logits);
        let (xs, ys) = offset_grids(n_p);
        let flat = g.reshape(heatmap, vec![n_p * n_p]);
        let xs_c = g.constant(Tensor::new(vec![n_p * n_p], xs.clone()));
        let ys_c = g.constant(Tensor::new(vec![n_p * n_p], ys.clone()));
        let r2: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| x * x + y * y).collect();
        let r2_c = g.constant(Tensor::new(vec![n_p * n_p], r2));
        let ox = g.sum(g.mul(flat, xs_c));
        let oy = g.sum(g.mul(flat, ys_c));
        let e2 = g.sum(g.mul(flat, r2_c));
        let m2 = g.add(g.mul(ox, ox), g.mul(oy, oy));
        let sigma2 = g.stop_grad(g.sub(e2, m2));
        let offset = g.stack_scalars(&[ox, oy]);
        Ok(Refinement { offset, sigma2, heatmap })
    }
}
