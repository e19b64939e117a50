//! Comb-pattern suppression by Gaussian smoothing, followed by CLAHE.

use serde::{Deserialize, Serialize};

use crate::image::Image;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PreprocessError {
    #[error("gaussian sigma must be positive and finite, got {0}")]
    InvalidSigma(f64),
    #[error("clip limit must lie in (0, 1], got {0}")]
    InvalidClipLimit(f64),
    #[error("tile grid must be at least 1x1, got {0}x{1}")]
    InvalidTiles(usize, usize),
    #[error("histogram needs at least 2 bins, got {0}")]
    InvalidBins(usize),
    #[error("image {width}x{height} is smaller than the {rows}x{cols} tile grid")]
    ImageSmallerThanGrid {
        width: usize,
        height: usize,
        rows: usize,
        cols: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub gaussian_sigma_px: f64,
    pub clahe_clip_limit: f64,
    /// `(rows, cols)`.
    pub clahe_tiles: (usize, usize),
    pub clahe_bins: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            gaussian_sigma_px: 2.0,
            clahe_clip_limit: 0.005,
            clahe_tiles: (8, 8),
            clahe_bins: 256,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        if !(self.gaussian_sigma_px > 0.0 && self.gaussian_sigma_px.is_finite()) {
            return Err(PreprocessError::InvalidSigma(self.gaussian_sigma_px));
        }
        if !(self.clahe_clip_limit > 0.0 && self.clahe_clip_limit <= 1.0) {
            return Err(PreprocessError::InvalidClipLimit(self.clahe_clip_limit));
        }
        let (r, c) = self.clahe_tiles;
        if r == 0 || c == 0 {
            return Err(PreprocessError::InvalidTiles(r, c));
        }
        if self.clahe_bins < 2 {
            return Err(PreprocessError::InvalidBins(self.clahe_bins));
        }
        Ok(())
    }
}

/// Mirror index into `0..n`, repeating the edge sample (`.. b a | a b ..`).
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let j = i.rem_euclid(period);
    if j < n as isize {
        j as usize
    } else {
        (period - 1 - j) as usize
    }
}

/// Normalized 1-D Gaussian taps for offsets `-radius..=radius`, radius `ceil(4 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil() as isize;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Separable Gaussian smoothing with reflect padding.
pub fn gaussian_blur(image: &Image, sigma_px: f64) -> Result<Image, PreprocessError> {
    if !(sigma_px > 0.0 && sigma_px.is_finite()) {
        return Err(PreprocessError::InvalidSigma(sigma_px));
    }
    let taps = gaussian_kernel(sigma_px);
    let radius = (taps.len() / 2) as isize;
    let (w, h) = image.dims();
    let src = image.data();

    let mut horiz = vec![0.0; w * h];
    for row in 0..h {
        let line = &src[row * w..(row + 1) * w];
        for col in 0..w {
            let mut acc = 0.0;
            for (t, &k) in taps.iter().enumerate() {
                acc += k * line[reflect(col as isize + t as isize - radius, w)];
            }
            horiz[row * w + col] = acc;
        }
    }

    let mut out = vec![0.0; w * h];
    for row in 0..h {
        for (t, &k) in taps.iter().enumerate() {
            let r = reflect(row as isize + t as isize - radius, h);
            let line = &horiz[r * w..(r + 1) * w];
            for (o, &v) in out[row * w..(row + 1) * w].iter_mut().zip(line) {
                *o += k * v;
            }
        }
    }
    Ok(Image::from_clamped(w, h, out).expect("dimensions preserved"))
}

/// Tile geometry shared by histogram construction and interpolation. The image
/// is virtually extended by mirroring so that every tile has the same size.
struct TileGrid {
    rows: usize,
    cols: usize,
    tile_h: usize,
    tile_w: usize,
}

impl TileGrid {
    fn new(image: &Image, rows: usize, cols: usize) -> Self {
        let (w, h) = image.dims();
        Self {
            rows,
            cols,
            tile_h: h.div_ceil(rows),
            tile_w: w.div_ceil(cols),
        }
    }

    fn pixel_count(&self) -> usize {
        self.tile_h * self.tile_w
    }
}

#[inline]
fn bin_of(v: f64, bins: usize) -> usize {
    ((v * bins as f64) as usize).min(bins - 1)
}

/// Clips at `clip_limit * count` and redistributes the excess uniformly over
/// all bins in a single pass.
pub(crate) fn clip_histogram(hist: &mut [f64], clip_limit: f64, count: usize) {
    let ceiling = clip_limit * count as f64;
    let mut excess = 0.0;
    for h in hist.iter_mut() {
        if *h > ceiling {
            excess += *h - ceiling;
            *h = ceiling;
        }
    }
    let quantum = excess / hist.len() as f64;
    hist.iter_mut().for_each(|h| *h += quantum);
}

fn tile_histogram(image: &Image, grid: &TileGrid, tr: usize, tc: usize, bins: usize) -> Vec<f64> {
    let (w, h) = image.dims();
    let mut hist = vec![0.0; bins];
    for dy in 0..grid.tile_h {
        let row = reflect((tr * grid.tile_h + dy) as isize, h);
        for dx in 0..grid.tile_w {
            let col = reflect((tc * grid.tile_w + dx) as isize, w);
            hist[bin_of(image.get(row, col), bins)] += 1.0;
        }
    }
    hist
}

/// Lookup tables per tile, row-major over the tile grid.
fn tile_mappings(image: &Image, grid: &TileGrid, cfg: &PreprocessConfig) -> Vec<Vec<f64>> {
    let bins = cfg.clahe_bins;
    let n = grid.pixel_count();
    let mut luts = Vec::with_capacity(grid.rows * grid.cols);
    for tr in 0..grid.rows {
        for tc in 0..grid.cols {
            let mut hist = tile_histogram(image, grid, tr, tc, bins);
            clip_histogram(&mut hist, cfg.clahe_clip_limit, n);
            let mut acc = 0.0;
            let lut = hist
                .iter()
                .map(|&c| {
                    acc += c;
                    (acc / n as f64).min(1.0)
                })
                .collect();
            luts.push(lut);
        }
    }
    luts
}

/// Neighbouring tile indices and blend weight along one axis.
#[inline]
fn axis_blend(pos: usize, tile: usize, tiles: usize) -> (usize, usize, f64) {
    let t = (pos as f64 + 0.5) / tile as f64 - 0.5;
    if t <= 0.0 {
        return (0, 0, 0.0);
    }
    let lo = t.floor() as usize;
    if lo >= tiles - 1 {
        return (tiles - 1, tiles - 1, 0.0);
    }
    (lo, lo + 1, t - lo as f64)
}

/// Contrast-limited adaptive histogram equalization with bilinear blending of
/// the four nearest tile mappings.
pub fn clahe(image: &Image, cfg: &PreprocessConfig) -> Result<Image, PreprocessError> {
    cfg.validate()?;
    let (rows, cols) = cfg.clahe_tiles;
    let (w, h) = image.dims();
    if w < cols || h < rows {
        return Err(PreprocessError::ImageSmallerThanGrid {
            width: w,
            height: h,
            rows,
            cols,
        });
    }
    let grid = TileGrid::new(image, rows, cols);
    let luts = tile_mappings(image, &grid, cfg);
    let bins = cfg.clahe_bins;

    let col_blend: Vec<_> = (0..w).map(|c| axis_blend(c, grid.tile_w, cols)).collect();
    let mut out = Vec::with_capacity(w * h);
    for row in 0..h {
        let (r0, r1, wy) = axis_blend(row, grid.tile_h, rows);
        for (col, &(c0, c1, wx)) in col_blend.iter().enumerate() {
            let b = bin_of(image.get(row, col), bins);
            let m00 = luts[r0 * cols + c0][b];
            let m01 = luts[r0 * cols + c1][b];
            let m10 = luts[r1 * cols + c0][b];
            let m11 = luts[r1 * cols + c1][b];
            // a + w (b - a) keeps equal neighbours exact.
            let top = m00 + wx * (m01 - m00);
            let bottom = m10 + wx * (m11 - m10);
            out.push(top + wy * (bottom - top));
        }
    }
    Ok(Image::from_clamped(w, h, out).expect("dimensions preserved"))
}

/// Gaussian smoothing followed by CLAHE.
pub fn preprocess(image: &Image, cfg: &PreprocessConfig) -> Result<Image, PreprocessError> {
    cfg.validate()?;
    let blurred = gaussian_blur(image, cfg.gaussian_sigma_px)?;
    clahe(&blurred, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, |_, _| rng.random::<f64>()).unwrap()
    }

    /// Direct 2-D convolution with its own mirror indexing.
    fn blur_oracle(img: &Image, sigma: f64) -> Vec<f64> {
        let radius = (4.0 * sigma).ceil() as i64;
        let mut kernel = Vec::new();
        let mut total = 0.0;
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                let g = (-((dy * dy + dx * dx) as f64) / (2.0 * sigma * sigma)).exp();
                kernel.push((dy, dx, g));
                total += g;
            }
        }
        let mirror = |i: i64, n: i64| -> usize {
            let mut i = i;
            loop {
                if i < 0 {
                    i = -i - 1;
                } else if i >= n {
                    i = 2 * n - 1 - i;
                } else {
                    return i as usize;
                }
            }
        };
        let (w, h) = (img.width() as i64, img.height() as i64);
        let mut out = Vec::new();
        for r in 0..h {
            for c in 0..w {
                let mut acc = 0.0;
                for &(dy, dx, g) in &kernel {
                    acc += g / total * img.get(mirror(r + dy, h), mirror(c + dx, w));
                }
                out.push(acc);
            }
        }
        out
    }

    #[test]
    fn blur_matches_direct_convolution() {
        let img = random_image(16, 16, 1);
        let fast = gaussian_blur(&img, 2.0).unwrap();
        let slow = blur_oracle(&img, 2.0);
        let diff = fast
            .data()
            .iter()
            .zip(&slow)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff <= 1e-12, "diff = {diff}");
    }

    #[test]
    fn blur_of_constant_is_constant() {
        for sigma in [0.3, 1.0, 2.0, 7.5] {
            let img = Image::filled(13, 9, 0.37).unwrap();
            let out = gaussian_blur(&img, sigma).unwrap();
            assert!(out.data().iter().all(|&v| (v - 0.37).abs() < 1e-15));
        }
    }

    #[test]
    fn impulse_mass_is_one() {
        let mut data = vec![0.0; 41 * 41];
        data[20 * 41 + 20] = 1.0;
        let img = Image::new(41, 41, data).unwrap();
        let out = gaussian_blur(&img, 2.0).unwrap();
        let mass: f64 = out.data().iter().sum();
        assert!((mass - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn blur_preserves_mean_with_constant_border() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // border of 10 px exceeds the radius ceil(4 * 2) = 8
        let img = Image::from_fn(48, 40, |r, c| {
            if (10..30).contains(&r) && (10..38).contains(&c) {
                rng.random::<f64>()
            } else {
                0.25
            }
        })
        .unwrap();
        let out = gaussian_blur(&img, 2.0).unwrap();
        assert!((out.mean() - img.mean()).abs() <= 1e-6);
    }

    #[test]
    fn blur_rejects_bad_sigma() {
        let img = Image::filled(4, 4, 0.0).unwrap();
        assert!(gaussian_blur(&img, 0.0).is_err());
        assert!(gaussian_blur(&img, -1.0).is_err());
    }

    #[test]
    fn clahe_constant_maps_to_constant() {
        for (w, h) in [(64, 64), (37, 29)] {
            let img = Image::filled(w, h, 0.42).unwrap();
            let once = clahe(&img, &PreprocessConfig::default()).unwrap();
            let v = once.data()[0];
            assert!(once.data().iter().all(|&x| x == v));
            let twice = clahe(&once, &PreprocessConfig::default()).unwrap();
            let v2 = twice.data()[0];
            assert!(twice.data().iter().all(|&x| x == v2));
        }
    }

    #[test]
    fn clahe_single_tile_no_clip_is_global_equalization() {
        let img = random_image(40, 30, 4);
        let cfg = PreprocessConfig {
            clahe_clip_limit: 1.0,
            clahe_tiles: (1, 1),
            ..PreprocessConfig::default()
        };
        let out = clahe(&img, &cfg).unwrap();
        let bins = cfg.clahe_bins as f64;
        let n = img.data().len() as f64;
        for (i, &v) in img.data().iter().enumerate() {
            let b = ((v * bins).floor()).min(bins - 1.0);
            let below = img
                .data()
                .iter()
                .filter(|&&u| ((u * bins).floor()).min(bins - 1.0) <= b)
                .count() as f64;
            assert!((out.data()[i] - below / n).abs() <= 1.0 / bins);
        }
    }

    #[test]
    fn clahe_is_monotone_inside_unblended_region() {
        let img = random_image(64, 64, 5);
        let cfg = PreprocessConfig {
            clahe_tiles: (2, 2),
            clahe_clip_limit: 0.01,
            ..PreprocessConfig::default()
        };
        let out = clahe(&img, &cfg).unwrap();
        // top-left quadrant of the first tile uses tile (0, 0) alone
        let mut pairs: Vec<(f64, f64)> = Vec::new();
        for r in 0..16 {
            for c in 0..16 {
                pairs.push((img.get(r, c), out.get(r, c)));
            }
        }
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        assert!(pairs.windows(2).all(|p| p[0].1 <= p[1].1));
    }

    #[test]
    fn clipped_histogram_respects_ceiling() {
        let img = random_image(32, 32, 6);
        let cfg = PreprocessConfig {
            clahe_clip_limit: 0.01,
            clahe_tiles: (4, 4),
            ..PreprocessConfig::default()
        };
        let grid = TileGrid::new(&img, 4, 4);
        let n = grid.pixel_count();
        for tr in 0..4 {
            for tc in 0..4 {
                let mut hist = tile_histogram(&img, &grid, tr, tc, cfg.clahe_bins);
                let ceiling = cfg.clahe_clip_limit * n as f64;
                let excess: f64 = hist.iter().map(|&h| (h - ceiling).max(0.0)).sum();
                clip_histogram(&mut hist, cfg.clahe_clip_limit, n);
                let quantum = excess / cfg.clahe_bins as f64;
                assert!(hist.iter().all(|&h| h <= ceiling + quantum + 1e-12));
                assert!((hist.iter().sum::<f64>() - n as f64).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn clahe_errors() {
        let img = Image::filled(4, 4, 0.5).unwrap();
        assert!(matches!(
            clahe(&img, &PreprocessConfig::default()),
            Err(PreprocessError::ImageSmallerThanGrid { .. })
        ));
        let bad = PreprocessConfig {
            clahe_bins: 1,
            ..PreprocessConfig::default()
        };
        assert!(matches!(clahe(&img, &bad), Err(PreprocessError::InvalidBins(1))));
    }

    #[test]
    fn preprocess_is_blur_then_clahe() {
        let img = random_image(48, 40, 7);
        let cfg = PreprocessConfig::default();
        let manual = clahe(&gaussian_blur(&img, 2.0).unwrap(), &cfg).unwrap();
        assert_eq!(preprocess(&img, &cfg).unwrap(), manual);
        assert_eq!(preprocess(&img, &cfg).unwrap(), preprocess(&img, &cfg).unwrap());
        let flat = Image::filled(48, 40, 0.6).unwrap();
        let out = preprocess(&flat, &cfg).unwrap();
        assert!(out.data().iter().all(|&v| v == out.data()[0]));
    }
}
