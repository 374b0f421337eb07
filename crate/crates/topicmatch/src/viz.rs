//! Topic-map visualization: each coarse cell tinted by its argmax topic.

use std::path::Path;

use crate::error::Result;
use crate::imageio::GrayImage;

/// Fixed 16-entry palette, cycled for larger topic counts. Chosen for
/// mutual distinctness at a glance; figures stay reproducible.
pub const PALETTE: [[u8; 3]; 16] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [220, 190, 255],
    [170, 110, 40],
    [255, 250, 200],
    [128, 0, 0],
    [170, 255, 195],
];

pub fn topic_color(topic: usize) -> [u8; 3] {
    PALETTE[topic % PALETTE.len()]
}

const ALPHA: f64 = 0.55;

/// Alpha-blend a per-cell tint over the grayscale image. Cells whose topic
/// is not in `visible` (when given) stay untinted.
pub fn render_topic_overlay(
    img: &GrayImage,
    assignment: &[usize],
    grid_w: usize,
    grid_h: usize,
    visible: Option<&[usize]>,
) -> image::RgbImage {
    assert_eq!(assignment.len(), grid_w * grid_h);
    let mut out = image::RgbImage::new(img.width as u32, img.height as u32);
    for y in 0..img.height {
        for x in 0..img.width {
            let gray = (img.get(x, y).clamp(0.0, 1.0) * 255.0).round() as u8;
            let (cx, cy) = ((x / 8).min(grid_w - 1), (y / 8).min(grid_h - 1));
            let topic = assignment[cy * grid_w + cx];
            let tinted = match visible {
                Some(v) if !v.contains(&topic) => [gray, gray, gray],
                _ => {
                    let c = topic_color(topic);
                    std::array::from_fn(|i| {
                        ((1.0 - ALPHA) * gray as f64 + ALPHA * c[i] as f64).round() as u8
                    })
                }
            };
            out.put_pixel(x as u32, y as u32, image::Rgb(tinted));
        }
    }
    out
}

pub fn save_overlay(
    path: &Path,
    img: &GrayImage,
    assignment: &[usize],
    grid_w: usize,
    grid_h: usize,
    visible: Option<&[usize]>,
) -> Result<()> {
    let overlay = render_topic_overlay(img, assignment, grid_w, grid_h, visible);
    overlay
        .save(path)
        .map_err(|e| crate::error::Error::Format(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_topic_tints_uniformly() {
        let img = GrayImage::new(16, 16);
        let overlay = render_topic_overlay(&img, &[0; 4], 2, 2, None);
        let first = overlay.get_pixel(0, 0);
        for p in overlay.pixels() {
            assert_eq!(p, first);
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let mut img = GrayImage::new(16, 16);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i % 7) as f64 / 7.0;
        }
        let assign = [0usize, 1, 2, 3];
        let a = render_topic_overlay(&img, &assign, 2, 2, None);
        let b = render_topic_overlay(&img, &assign, 2, 2, None);
        assert_eq!(a.as_raw(), b.as_raw());
    }

    #[test]
    fn covisible_filter_leaves_other_cells_gray() {
        let img = GrayImage::new(16, 16);
        let assign = [0usize, 1, 1, 0];
        let overlay = render_topic_overlay(&img, &assign, 2, 2, Some(&[1]));
        // Cell (0,0) has topic 0, filtered out: pure grayscale (black).
        assert_eq!(overlay.get_pixel(0, 0).0, [0, 0, 0]);
        // Cell (1,0) has topic 1: tinted.
        assert_ne!(overlay.get_pixel(8, 0).0, [0, 0, 0]);
    }

    #[test]
    fn palette_cycles_beyond_16() {
        assert_eq!(topic_color(0), topic_color(16));
        assert_ne!(topic_color(0), topic_color(1));
    }
}
