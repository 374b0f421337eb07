//! Grayscale image container plus PGM and PNG file I/O.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Grayscale image with values in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        GrayImage { width, height, data: vec![0.0; width * height] }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height);
        GrayImage { width, height, data }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Bilinear sample with zero fill outside the image.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let mut acc = 0.0;
        for (dy, wy) in [(0i64, 1.0 - fy), (1, fy)] {
            for (dx, wx) in [(0i64, 1.0 - fx), (1, fx)] {
                let xi = x0 as i64 + dx;
                let yi = y0 as i64 + dy;
                if xi >= 0 && yi >= 0 && (xi as usize) < self.width && (yi as usize) < self.height {
                    let w = wx * wy;
                    if w != 0.0 {
                        acc += w * self.get(xi as usize, yi as usize);
                    }
                }
            }
        }
        acc
    }

    /// Reflect-pad so both extents are multiples of `unit`.
    pub fn pad_to_multiple(&self, unit: usize) -> GrayImage {
        let pw = self.width.div_ceil(unit) * unit;
        let ph = self.height.div_ceil(unit) * unit;
        if pw == self.width && ph == self.height {
            return self.clone();
        }
        let mut out = GrayImage::new(pw, ph);
        for y in 0..ph {
            let sy = reflect_index(y, self.height);
            for x in 0..pw {
                let sx = reflect_index(x, self.width);
                out.set(x, y, self.get(sx, sy));
            }
        }
        out
    }
}

fn reflect_index(i: usize, n: usize) -> usize {
    if i < n {
        i
    } else {
        // mirror without repeating the edge sample: n-2, n-3, ...
        let over = i - n;
        n.saturating_sub(2 + over).min(n - 1)
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Load a grayscale image from a PGM (binary, maxval 255) or PNG file.
/// Color PNG input is converted as `(R + G + B) / 3`, rounded to nearest.
pub fn load_image(path: &Path) -> Result<GrayImage> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    match ext.as_str() {
        "pgm" => load_pgm(path),
        "png" => load_png(path),
        other => Err(Error::Format(format!("unsupported image extension '{other}'"))),
    }
}

/// Save as PGM or PNG depending on the file extension; 8-bit quantization.
pub fn save_image(path: &Path, img: &GrayImage) -> Result<()> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    match ext.as_str() {
        "pgm" => save_pgm(path, img),
        "png" => save_png(path, img),
        other => Err(Error::Format(format!("unsupported image extension '{other}'"))),
    }
}

fn load_pgm(path: &Path) -> Result<GrayImage> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .read_to_end(&mut bytes)?;
    if bytes.len() < 2 || &bytes[0..2] != b"P5" {
        return Err(Error::Format(format!("{}: not a binary PGM (bad magic)", path.display())));
    }
    let mut pos = 2;
    let mut fields = Vec::with_capacity(3);
    while fields.len() < 3 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format(format!("{}: truncated PGM header", path.display())));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).unwrap();
        fields.push(
            text.parse::<usize>()
                .map_err(|_| Error::Format(format!("{}: bad PGM header field", path.display())))?,
        );
    }
    let (width, height, maxval) = (fields[0], fields[1], fields[2]);
    if maxval != 255 {
        return Err(Error::Format(format!("{}: only maxval 255 supported", path.display())));
    }
    pos += 1; // single whitespace after maxval
    if bytes.len() < pos + width * height {
        return Err(Error::Format(format!("{}: truncated PGM raster", path.display())));
    }
    let data = bytes[pos..pos + width * height].iter().map(|&b| b as f64 / 255.0).collect();
    Ok(GrayImage::from_data(width, height, data))
}

fn save_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    let mut f = fs::File::create(path)?;
    write!(f, "P5\n{} {}\n255\n", img.width, img.height)?;
    let raster: Vec<u8> = img.data.iter().map(|&v| quantize(v)).collect();
    f.write_all(&raster)?;
    Ok(())
}

fn load_png(path: &Path) -> Result<GrayImage> {
    let dynimg = image::open(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let rgb = dynimg.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut data = Vec::with_capacity(w * h);
    for p in rgb.pixels() {
        let sum = p.0[0] as u32 + p.0[1] as u32 + p.0[2] as u32;
        // (R+G+B)/3 rounded to nearest.
        let gray = (sum as f64 / 3.0).round().min(255.0);
        data.push(gray / 255.0);
    }
    Ok(GrayImage::from_data(w, h, data))
}

fn save_png(path: &Path, img: &GrayImage) -> Result<()> {
    let buf: Vec<u8> = img.data.iter().map(|&v| quantize(v)).collect();
    let out = image::GrayImage::from_raw(img.width as u32, img.height as u32, buf)
        .expect("buffer matches extents");
    out.save(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn pgm_round_trip_within_quantization() {
        let mut rng = crate::rng::stream(21, &[60]);
        let img = GrayImage::from_data(17, 9, (0..17 * 9).map(|_| rng.gen_range(0.0..1.0)).collect());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.pgm");
        save_image(&p, &img).unwrap();
        let back = load_image(&p).unwrap();
        assert_eq!(back.width, 17);
        assert_eq!(back.height, 9);
        let max_diff = img
            .data
            .iter()
            .zip(&back.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_diff <= 1.0 / 255.0 + 1e-12, "max diff {max_diff}");
    }

    #[test]
    fn malformed_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.pgm");
        fs::write(&p, b"P6\n2 2\n255\n0000").unwrap();
        assert!(matches!(load_image(&p), Err(Error::Format(_))));
    }

    #[test]
    fn png_rgb_converts_with_mean_formula() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.png");
        let mut img = image::RgbImage::new(2, 1);
        img.put_pixel(0, 0, image::Rgb([10, 20, 40])); // mean 23.33 -> 23
        img.put_pixel(1, 0, image::Rgb([0, 0, 1])); // mean 0.33 -> 0
        img.save(&p).unwrap();
        let g = load_image(&p).unwrap();
        assert_eq!((g.get(0, 0) * 255.0).round() as u8, 23);
        assert_eq!((g.get(1, 0) * 255.0).round() as u8, 0);
    }

    #[test]
    fn png_round_trip_within_quantization() {
        let mut rng = crate::rng::stream(22, &[61]);
        let img = GrayImage::from_data(8, 8, (0..64).map(|_| rng.gen_range(0.0..1.0)).collect());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.png");
        save_image(&p, &img).unwrap();
        let back = load_image(&p).unwrap();
        let max_diff = img
            .data
            .iter()
            .zip(&back.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_diff <= 1.0 / 255.0 + 1e-12);
    }

    #[test]
    fn padding_reaches_multiples_and_keeps_interior() {
        let mut rng = crate::rng::stream(23, &[62]);
        let img =
            GrayImage::from_data(13, 10, (0..130).map(|_| rng.gen_range(0.0..1.0)).collect());
        let p = img.pad_to_multiple(8);
        assert_eq!((p.width, p.height), (16, 16));
        for y in 0..10 {
            for x in 0..13 {
                assert_eq!(p.get(x, y), img.get(x, y));
            }
        }
    }
}
