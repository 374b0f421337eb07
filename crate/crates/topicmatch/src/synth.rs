//! Synthetic homography pairs with exact ground truth.
//!
//! Textures mix multi-octave value noise with filled polygons so the latent
//! topics have actual structure to attach to; pure noise would make the topic
//! maps meaningless.

use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{homography_from_corners, pt, warp_point, Homography, Pt};
use crate::imageio::GrayImage;
use crate::rng::{stream, tag};

pub const COARSE_CELL: usize = 8;

/// Generation knobs for one synthetic pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenConfig {
    /// Square image extent; multiple of 8, at least 64.
    pub size: usize,
    /// Corner perturbation bound as a fraction of the extent.
    pub perspective: f64,
    /// Photometric jitter bound (brightness offset and contrast deviation).
    pub jitter: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig { size: 128, perspective: 0.12, jitter: 0.15 }
    }
}

impl GenConfig {
    /// Hash of the generation-relevant fields; manifests carry this so an
    /// eval cannot silently regenerate different ground truth.
    pub fn hash(&self) -> u64 {
        crate::rng::fnv1a64_bytes(
            format!("size={} perspective={} jitter={}", self.size, self.perspective, self.jitter)
                .as_bytes(),
        )
    }
}

/// A synthetic image pair with its exact warp.
#[derive(Clone, Debug)]
pub struct ImagePair {
    pub a: GrayImage,
    pub b: GrayImage,
    /// Maps A pixel coordinates into B.
    pub h_gt: Homography,
    /// Where the four corners of A were sent, in order
    /// (0,0), (s-1,0), (s-1,s-1), (0,s-1).
    pub warped_corners: [Pt; 4],
    pub brightness: f64,
    pub contrast: f64,
    pub seed: u64,
}

fn value_noise(size: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut img = vec![0.0; size * size];
    let mut amplitude = 1.0;
    for cells in [4usize, 8, 16, 32] {
        let lattice: Vec<f64> =
            (0..(cells + 1) * (cells + 1)).map(|_| rng.gen_range(0.0..1.0)).collect();
        let step = size as f64 / cells as f64;
        for y in 0..size {
            let gy = y as f64 / step;
            let y0 = (gy as usize).min(cells - 1);
            let fy = gy - y0 as f64;
            for x in 0..size {
                let gx = x as f64 / step;
                let x0 = (gx as usize).min(cells - 1);
                let fx = gx - x0 as f64;
                let l = |ix: usize, iy: usize| lattice[iy * (cells + 1) + ix];
                let v = l(x0, y0) * (1.0 - fx) * (1.0 - fy)
                    + l(x0 + 1, y0) * fx * (1.0 - fy)
                    + l(x0, y0 + 1) * (1.0 - fx) * fy
                    + l(x0 + 1, y0 + 1) * fx * fy;
                img[y * size + x] += amplitude * v;
            }
        }
        amplitude *= 0.5;
    }
    img
}

fn stamp_polygons(img: &mut [f64], size: usize, rng: &mut impl Rng) {
    let count = rng.gen_range(4..=8);
    for _ in 0..count {
        let cx = rng.gen_range(0.1..0.9) * size as f64;
        let cy = rng.gen_range(0.1..0.9) * size as f64;
        let radius = rng.gen_range(0.06..0.2) * size as f64;
        let sides = rng.gen_range(3..=7);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let level = rng.gen_range(0.0..2.0);
        let verts: Vec<Pt> = (0..sides)
            .map(|i| {
                let ang = phase + std::f64::consts::TAU * i as f64 / sides as f64;
                let r = radius * rng.gen_range(0.7..1.0);
                pt(cx + r * ang.cos(), cy + r * ang.sin())
            })
            .collect();
        let min_x = verts.iter().map(|p| p.x).fold(f64::INFINITY, f64::min).floor().max(0.0);
        let max_x =
            verts.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max).ceil().min(size as f64 - 1.0);
        let min_y = verts.iter().map(|p| p.y).fold(f64::INFINITY, f64::min).floor().max(0.0);
        let max_y =
            verts.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max).ceil().min(size as f64 - 1.0);
        for y in min_y as usize..=max_y as usize {
            for x in min_x as usize..=max_x as usize {
                if point_in_polygon(pt(x as f64, y as f64), &verts) {
                    img[y * size + x] = level;
                }
            }
        }
    }
}

fn point_in_polygon(p: Pt, verts: &[Pt]) -> bool {
    let mut inside = false;
    let n = verts.len();
    let mut j = n - 1;
    for i in 0..n {
        let (vi, vj) = (verts[i], verts[j]);
        if (vi.y > p.y) != (vj.y > p.y)
            && p.x < (vj.x - vi.x) * (p.y - vi.y) / (vj.y - vi.y) + vi.x
        {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn normalize_to_unit(img: &mut [f64]) {
    let lo = img.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = img.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-9);
    for v in img.iter_mut() {
        *v = (*v - lo) / span;
    }
}

/// Fraction of A's coarse cell centers that land inside B under `h`.
pub fn coverage_fraction(h: &Homography, size: usize) -> f64 {
    let cells = size / COARSE_CELL;
    let mut inside = 0;
    for cy in 0..cells {
        for cx in 0..cells {
            let c = cell_center_image(cx, cy);
            if let Ok(q) = warp_point(h, c) {
                if q.x >= 0.0 && q.x <= (size - 1) as f64 && q.y >= 0.0 && q.y <= (size - 1) as f64
                {
                    inside += 1;
                }
            }
        }
    }
    inside as f64 / (cells * cells) as f64
}

/// Image coordinates of a coarse cell center.
pub fn cell_center_image(cx: usize, cy: usize) -> Pt {
    pt(
        (cx * COARSE_CELL) as f64 + (COARSE_CELL as f64 - 1.0) / 2.0,
        (cy * COARSE_CELL) as f64 + (COARSE_CELL as f64 - 1.0) / 2.0,
    )
}

/// Deterministically generate one image pair from a seed.
pub fn gen_pair(seed: u64, cfg: &GenConfig) -> Result<ImagePair> {
    if cfg.size % 8 != 0 || cfg.size < 64 {
        return Err(Error::Contract(format!(
            "pair size must be a multiple of 8 and at least 64, got {}",
            cfg.size
        )));
    }
    let size = cfg.size;
    let mut tex_rng = stream(seed, &[tag::TEXTURE]);
    let mut data = value_noise(size, &mut tex_rng);
    stamp_polygons(&mut data, size, &mut tex_rng);
    normalize_to_unit(&mut data);
    let a = GrayImage::from_data(size, size, data);

    let s = (size - 1) as f64;
    let src = [pt(0.0, 0.0), pt(s, 0.0), pt(s, s), pt(0.0, s)];
    let (h_gt, dst) = if cfg.perspective == 0.0 {
        (Homography::identity(), src)
    } else {
        let mut found = None;
        for attempt in 0..100u64 {
            let mut warp_rng = stream(seed, &[tag::WARP, attempt]);
            let bound = cfg.perspective * size as f64;
            let dst: [Pt; 4] = std::array::from_fn(|i| {
                pt(
                    src[i].x + warp_rng.gen_range(-bound..bound),
                    src[i].y + warp_rng.gen_range(-bound..bound),
                )
            });
            let Ok(h) = homography_from_corners(&src, &dst) else { continue };
            if h.condition_number() >= 1e6 {
                continue;
            }
            if coverage_fraction(&h, size) < 0.30 {
                continue;
            }
            found = Some((h, dst));
            break;
        }
        found.ok_or_else(|| {
            Error::Numeric("could not draw a usable homography in 100 attempts".into())
        })?
    };

    let h_inv = h_gt.inverse()?;
    let mut b = GrayImage::new(size, size);
    if cfg.perspective == 0.0 {
        b.data.copy_from_slice(&a.data);
    } else {
        for y in 0..size {
            for x in 0..size {
                let p = warp_point(&h_inv, pt(x as f64, y as f64))?;
                b.set(x, y, a.sample_bilinear(p.x, p.y));
            }
        }
    }

    let (brightness, contrast) = if cfg.jitter == 0.0 {
        (0.0, 1.0)
    } else {
        let mut jit_rng = stream(seed, &[tag::JITTER]);
        (
            jit_rng.gen_range(-cfg.jitter..cfg.jitter),
            1.0 + jit_rng.gen_range(-cfg.jitter..cfg.jitter),
        )
    };
    if brightness != 0.0 || contrast != 1.0 {
        for v in b.data.iter_mut() {
            *v = (contrast * (*v - 0.5) + 0.5 + brightness).clamp(0.0, 1.0);
        }
    }

    Ok(ImagePair { a, b, h_gt, warped_corners: dst, brightness, contrast, seed })
}

/// Ground-truth coarse matches: A cell `i` pairs with B cell `j` when the
/// warped A center lies inside B and within half a coarse cell (L-inf) of
/// B's cell center. At most one `j` per `i`; when several `i` claim the same
/// `j`, the closest warped center wins, ties to the lower index.
pub fn gt_coarse_matches(
    h_gt: &Homography,
    grid_w: usize,
    grid_h: usize,
    image_w: usize,
    image_h: usize,
) -> Vec<(usize, usize)> {
    let half = COARSE_CELL as f64 / 2.0;
    let mut candidates: Vec<(usize, usize, f64)> = Vec::new();
    for cy in 0..grid_h {
        for cx in 0..grid_w {
            let i = cy * grid_w + cx;
            let Ok(q) = warp_point(h_gt, cell_center_image(cx, cy)) else { continue };
            if q.x < 0.0 || q.x > (image_w - 1) as f64 || q.y < 0.0 || q.y > (image_h - 1) as f64 {
                continue;
            }
            let bx = nearest_cell(q.x, grid_w);
            let by = nearest_cell(q.y, grid_h);
            let c = cell_center_image(bx, by);
            let dist = (q.x - c.x).abs().max((q.y - c.y).abs());
            if dist <= half {
                candidates.push((i, by * grid_w + bx, dist));
            }
        }
    }
    // Enforce injectivity on the B side.
    candidates.sort_by(|a, b| {
        (a.1, a.2, a.0).partial_cmp(&(b.1, b.2, b.0)).unwrap()
    });
    let mut out = Vec::new();
    let mut last_j = usize::MAX;
    for (i, j, _) in candidates {
        if j != last_j {
            out.push((i, j));
            last_j = j;
        }
    }
    out.sort_unstable();
    out
}

/// Nearest cell index along one axis, ties to the lower index.
pub fn nearest_cell(coord: f64, cells: usize) -> usize {
    let t = (coord - (COARSE_CELL as f64 - 1.0) / 2.0) / COARSE_CELL as f64;
    let lo = t.floor().clamp(0.0, cells as f64 - 1.0) as usize;
    let hi = (lo + 1).min(cells - 1);
    let center = |c: usize| (c * COARSE_CELL) as f64 + (COARSE_CELL as f64 - 1.0) / 2.0;
    let (dlo, dhi) = ((coord - center(lo)).abs(), (coord - center(hi)).abs());
    if dlo <= dhi {
        lo
    } else {
        hi
    }
}

/// Dataset manifest: one `seed<TAB>config-hash` line per pair.
pub fn write_manifest(path: &Path, seeds: &[u64], config_hash: u64) -> Result<()> {
    let mut text = String::new();
    for s in seeds {
        text.push_str(&format!("{s}\t{config_hash:016x}\n"));
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<(u64, u64)>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let seed = parts
            .next()
            .and_then(|s| s.parse::<u64>().ok())
            .ok_or_else(|| Error::Format(format!("{}:{}: bad seed", path.display(), ln + 1)))?;
        let hash = parts
            .next()
            .and_then(|s| u64::from_str_radix(s, 16).ok())
            .ok_or_else(|| Error::Format(format!("{}:{}: bad hash", path.display(), ln + 1)))?;
        out.push((seed, hash));
    }
    Ok(out)
}
