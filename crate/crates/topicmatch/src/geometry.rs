//! Homography estimation and the matching-quality metrics built on it.

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{stream, tag};

/// Image point in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pt {
    pub x: f64,
    pub y: f64,
}

pub fn pt(x: f64, y: f64) -> Pt {
    Pt { x, y }
}

/// 3x3 projective transform, normalized so the bottom-right entry is 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
}

impl Homography {
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let h = m[(2, 2)];
        if h.abs() < 1e-12 {
            return Err(Error::Numeric("homography bottom-right entry near zero".into()));
        }
        let m = m / h;
        if m.determinant().abs() < 1e-15 {
            return Err(Error::Degenerate("homography is singular".into()));
        }
        Ok(Homography { m })
    }

    pub fn identity() -> Self {
        Homography { m: Matrix3::identity() }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        let mut m = Matrix3::identity();
        m[(0, 2)] = tx;
        m[(1, 2)] = ty;
        Homography { m }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn inverse(&self) -> Result<Homography> {
        let inv = self
            .m
            .try_inverse()
            .ok_or_else(|| Error::Degenerate("homography not invertible".into()))?;
        Homography::from_matrix(inv)
    }

    /// Ratio of largest to smallest singular value.
    pub fn condition_number(&self) -> f64 {
        let svd = self.m.svd(false, false);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if smin <= 0.0 {
            f64::INFINITY
        } else {
            smax / smin
        }
    }

    pub fn frobenius_distance(&self, other: &Homography) -> f64 {
        (self.m - other.m).norm()
    }
}

/// Projective application with de-homogenization.
pub fn warp_point(h: &Homography, p: Pt) -> Result<Pt> {
    let v = h.m * Vector3::new(p.x, p.y, 1.0);
    if v.z.abs() <= 1e-12 {
        return Err(Error::Numeric(format!("point ({}, {}) maps to infinity", p.x, p.y)));
    }
    Ok(pt(v.x / v.z, v.y / v.z))
}

/// Hartley isotropic normalization: centroid to origin, mean distance sqrt(2).
fn normalize_points(pts: &[Pt]) -> Result<(Vec<Pt>, Matrix3<f64>)> {
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p.x).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p.y).sum::<f64>() / n;
    let mean_dist =
        pts.iter().map(|p| ((p.x - cx).powi(2) + (p.y - cy).powi(2)).sqrt()).sum::<f64>() / n;
    if mean_dist < 1e-12 {
        return Err(Error::Degenerate("all points coincide".into()));
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    let t = Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0);
    let out = pts.iter().map(|p| pt(s * (p.x - cx), s * (p.y - cy))).collect();
    Ok((out, t))
}

fn collinear(a: Pt, b: Pt, c: Pt) -> bool {
    let cross = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
    let scale = (b.x - a.x).hypot(b.y - a.y) * (c.x - a.x).hypot(c.y - a.y);
    cross.abs() <= 1e-9 * scale.max(1.0)
}

/// Least-squares DLT from point correspondences `src -> dst`.
///
/// Solves the stacked 2n x 9 system via SVD after Hartley normalization of
/// both point sets; the smallest singular direction gives the homography.
pub fn estimate_homography_dlt(src: &[Pt], dst: &[Pt]) -> Result<Homography> {
    let n = src.len();
    if n < 4 || dst.len() != n {
        return Err(Error::InsufficientData(format!(
            "DLT needs at least 4 correspondences, got {n}/{}",
            dst.len()
        )));
    }
    if n == 4 {
        for i in 0..4 {
            let others: Vec<Pt> = (0..4).filter(|&j| j != i).map(|j| src[j]).collect();
            if collinear(others[0], others[1], others[2]) {
                return Err(Error::Degenerate("three source points are collinear".into()));
            }
        }
    }
    let (src_n, t_src) = normalize_points(src)?;
    let (dst_n, t_dst) = normalize_points(dst)?;

    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (p, q)) in src_n.iter().zip(dst_n.iter()).enumerate() {
        let (x, y, u, v) = (p.x, p.y, q.x, q.y);
        let r0 = 2 * i;
        let r1 = 2 * i + 1;
        a[(r0, 0)] = -x;
        a[(r0, 1)] = -y;
        a[(r0, 2)] = -1.0;
        a[(r0, 6)] = u * x;
        a[(r0, 7)] = u * y;
        a[(r0, 8)] = u;
        a[(r1, 3)] = -x;
        a[(r1, 4)] = -y;
        a[(r1, 5)] = -1.0;
        a[(r1, 6)] = v * x;
        a[(r1, 7)] = v * y;
        a[(r1, 8)] = v;
    }

    let svd = a.svd(false, true);
    let v_t = svd.v_t.as_ref().ok_or_else(|| Error::Numeric("SVD failed".into()))?;
    let sv = &svd.singular_values;
    // With a unique solution exactly one singular value vanishes; a second
    // tiny one means the configuration does not pin the homography down.
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let mut sorted: Vec<f64> = sv.iter().cloned().collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if sorted.len() >= 2 && sorted[1] <= 1e-10 * smax.max(1.0) {
        return Err(Error::Degenerate("rank-deficient DLT system".into()));
    }
    let h_row = v_t.row(v_t.nrows() - 1);
    let h_norm = Matrix3::new(
        h_row[0], h_row[1], h_row[2], h_row[3], h_row[4], h_row[5], h_row[6], h_row[7], h_row[8],
    );
    let t_dst_inv = t_dst
        .try_inverse()
        .ok_or_else(|| Error::Numeric("normalization not invertible".into()))?;
    Homography::from_matrix(t_dst_inv * h_norm * t_src)
}

/// Exact homography from the 4 corner correspondences of a warp.
pub fn homography_from_corners(src: &[Pt; 4], dst: &[Pt; 4]) -> Result<Homography> {
    estimate_homography_dlt(src, dst)
}

/// Parameters for [`ransac_homography`].
#[derive(Clone, Copy, Debug)]
pub struct RansacParams {
    /// Inlier reprojection threshold in pixels.
    pub threshold: f64,
    pub confidence: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        RansacParams { threshold: 3.0, confidence: 0.99999, max_iters: 2000, seed: 0 }
    }
}

/// Classic 4-point RANSAC with an adaptive iteration count and a final DLT
/// refit on the consensus set. Returns the refit homography and the inlier
/// mask evaluated against it.
pub fn ransac_homography(
    src: &[Pt],
    dst: &[Pt],
    params: &RansacParams,
) -> Result<(Homography, Vec<bool>)> {
    let n = src.len();
    if n < 4 || dst.len() != n {
        return Err(Error::InsufficientData(format!(
            "RANSAC needs at least 4 correspondences, got {n}"
        )));
    }
    let mut rng = stream(params.seed, &[tag::RANSAC]);
    let mut best_inliers: Vec<usize> = Vec::new();
    let mut needed = params.max_iters;
    let mut iter = 0;
    while iter < needed.min(params.max_iters) {
        iter += 1;
        let mut pick: Vec<usize> = Vec::with_capacity(4);
        while pick.len() < 4 {
            let c = rng.gen_range(0..n);
            if !pick.contains(&c) {
                pick.push(c);
            }
        }
        let s: Vec<Pt> = pick.iter().map(|&i| src[i]).collect();
        let d: Vec<Pt> = pick.iter().map(|&i| dst[i]).collect();
        let Ok(h) = estimate_homography_dlt(&s, &d) else { continue };
        let inliers: Vec<usize> = (0..n)
            .filter(|&i| match warp_point(&h, src[i]) {
                Ok(p) => (p.x - dst[i].x).hypot(p.y - dst[i].y) <= params.threshold,
                Err(_) => false,
            })
            .collect();
        if inliers.len() > best_inliers.len() {
            best_inliers = inliers;
            let w = best_inliers.len() as f64 / n as f64;
            let denom = (1.0 - w.powi(4)).max(1e-12).ln();
            if denom < 0.0 {
                let k = (1.0 - params.confidence).ln() / denom;
                needed = k.ceil().max(1.0) as usize;
            }
        }
    }
    if best_inliers.len() < 4 {
        return Err(Error::Degenerate("RANSAC found no 4-point consensus".into()));
    }
    let s: Vec<Pt> = best_inliers.iter().map(|&i| src[i]).collect();
    let d: Vec<Pt> = best_inliers.iter().map(|&i| dst[i]).collect();
    let h = estimate_homography_dlt(&s, &d)?;
    let mask: Vec<bool> = (0..n)
        .map(|i| match warp_point(&h, src[i]) {
            Ok(p) => (p.x - dst[i].x).hypot(p.y - dst[i].y) <= params.threshold,
            Err(_) => false,
        })
        .collect();
    Ok((h, mask))
}

/// Mean distance between the four image corners warped by the two transforms.
pub fn corner_error(h_est: &Homography, h_gt: &Homography, width: usize, height: usize) -> f64 {
    let (w, h) = ((width - 1) as f64, (height - 1) as f64);
    let corners = [pt(0.0, 0.0), pt(w, 0.0), pt(w, h), pt(0.0, h)];
    let mut total = 0.0;
    for c in corners {
        let a = warp_point(h_est, c);
        let b = warp_point(h_gt, c);
        match (a, b) {
            (Ok(a), Ok(b)) => total += (a.x - b.x).hypot(a.y - b.y),
            _ => return f64::INFINITY,
        }
    }
    total / 4.0
}

/// Area under the cumulative recall-vs-error curve on `[0, threshold]`,
/// normalized by the threshold. Exact trapezoid over the piecewise-linear
/// interpolation of the sorted error curve.
pub fn auc(errors: &[f64], threshold: f64) -> f64 {
    if errors.is_empty() || threshold <= 0.0 {
        return 0.0;
    }
    let mut xs = vec![0.0];
    let mut sorted: Vec<f64> = errors.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs.extend_from_slice(&sorted);
    let n = xs.len();
    let recall: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    // First index with xs[idx] >= threshold, or n if none.
    let cut = xs.partition_point(|&e| e < threshold);
    let mut x: Vec<f64> = xs[..cut].to_vec();
    let mut y: Vec<f64> = recall[..cut].to_vec();
    if cut == 0 {
        return 0.0;
    }
    x.push(threshold);
    y.push(recall[cut - 1]);
    let mut area = 0.0;
    for i in 1..x.len() {
        area += (y[i] + y[i - 1]) * 0.5 * (x[i] - x[i - 1]);
    }
    area / threshold
}

/// Fraction of matches whose destination point lies within each threshold of
/// the ground-truth warp of the source point.
pub fn mma(matches: &[(Pt, Pt)], h_gt: &Homography, thresholds: &[f64]) -> Vec<f64> {
    if matches.is_empty() {
        return vec![0.0; thresholds.len()];
    }
    let errs: Vec<f64> = matches
        .iter()
        .map(|(a, b)| match warp_point(h_gt, *a) {
            Ok(p) => (p.x - b.x).hypot(p.y - b.y),
            Err(_) => f64::INFINITY,
        })
        .collect();
    thresholds
        .iter()
        .map(|&t| errs.iter().filter(|&&e| e <= t).count() as f64 / errs.len() as f64)
        .collect()
}
