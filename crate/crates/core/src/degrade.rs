//! Fiber knock-out degradation: simulate sparse sampling through an
//! end-expandable fiber probe and reconstitute a low-resolution frame.
//!
//! The canvas is partitioned into `s_px`x`s_px` field-of-view tiles. Each tile
//! is sampled by one fiber whose `m_px`x`m_px` ROI sits at the tile centre,
//! displaced by a random integer offset in `[-d_px, d_px]` per axis and clamped
//! to the image. The tile is then filled with the ROI mean. Partial tiles along
//! the right and bottom edges are not sampled and keep the source pixels.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::image::Image;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DegradeError {
    #[error("invalid degradation config: {0}")]
    InvalidConfig(String),
    #[error("image {width}x{height} is smaller than one {tile}x{tile} tile")]
    ImageTooSmall {
        width: usize,
        height: usize,
        tile: usize,
    },
    #[error("expected {expected} offsets, got {found}")]
    OffsetCount { expected: usize, found: usize },
    #[error("offset ({dy}, {dx}) exceeds max offset {max}")]
    OffsetTooLarge { dy: i64, dx: i64, max: usize },
}

/// Probe parameters in micrometres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradationConfig {
    #[serde(default = "default_pixel_size")]
    pub pixel_size_um: f64,
    /// Fiber diameter `m`.
    pub fiber_diameter_um: f64,
    /// Inter-fiber distance `s`.
    pub inter_fiber_distance_um: f64,
    /// Maximum deformation offset `d`.
    #[serde(default)]
    pub max_offset_um: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_pixel_size() -> f64 {
    2.0
}

impl DegradationConfig {
    pub fn new(fiber_diameter_um: f64, inter_fiber_distance_um: f64, max_offset_um: f64) -> Self {
        Self {
            pixel_size_um: default_pixel_size(),
            fiber_diameter_um,
            inter_fiber_distance_um,
            max_offset_um,
            seed: 0,
        }
    }

    /// The degenerate probe whose tiles and ROIs are single pixels.
    pub fn identity() -> Self {
        Self {
            pixel_size_um: 1.0,
            fiber_diameter_um: 1.0,
            inter_fiber_distance_um: 1.0,
            max_offset_um: 0.0,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn to_px(&self, um: f64) -> usize {
        (um / self.pixel_size_um).round() as usize
    }

    pub fn fiber_px(&self) -> usize {
        self.to_px(self.fiber_diameter_um)
    }

    pub fn tile_px(&self) -> usize {
        self.to_px(self.inter_fiber_distance_um)
    }

    pub fn offset_px(&self) -> usize {
        self.to_px(self.max_offset_um)
    }

    pub fn validate(&self) -> Result<(), DegradeError> {
        let bad = |msg: String| Err(DegradeError::InvalidConfig(msg));
        if !(self.pixel_size_um > 0.0 && self.pixel_size_um.is_finite()) {
            return bad(format!("pixel size {} must be positive", self.pixel_size_um));
        }
        if !(self.fiber_diameter_um >= self.pixel_size_um && self.fiber_diameter_um.is_finite()) {
            return bad(format!(
                "fiber diameter {} um is below the pixel size {} um",
                self.fiber_diameter_um, self.pixel_size_um
            ));
        }
        if !(self.inter_fiber_distance_um >= self.fiber_diameter_um
            && self.inter_fiber_distance_um.is_finite())
        {
            return bad(format!(
                "inter-fiber distance {} um is below the fiber diameter {} um",
                self.inter_fiber_distance_um, self.fiber_diameter_um
            ));
        }
        if !(self.max_offset_um >= 0.0 && self.max_offset_um.is_finite()) {
            return bad(format!("max offset {} um must be >= 0", self.max_offset_um));
        }
        let (m, s) = (self.fiber_px(), self.tile_px());
        if m < 1 || s < m {
            return bad(format!("pixel geometry m_px = {m}, s_px = {s} needs 1 <= m_px <= s_px"));
        }
        Ok(())
    }
}

/// One field-of-view tile and the nominal (undisplaced) ROI origin inside it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tile {
    pub index: (usize, usize),
    pub origin: (usize, usize),
    pub nominal_roi: (usize, usize),
}

/// Tile layout over the top-left `floor(h / s) s` x `floor(w / s) s` region, row-major.
pub fn grid_geometry(
    cfg: &DegradationConfig,
    width: usize,
    height: usize,
) -> Result<Vec<Tile>, DegradeError> {
    cfg.validate()?;
    let (m, s) = (cfg.fiber_px(), cfg.tile_px());
    if width < s || height < s {
        return Err(DegradeError::ImageTooSmall {
            width,
            height,
            tile: s,
        });
    }
    let margin = (s - m) / 2;
    let mut tiles = Vec::with_capacity((height / s) * (width / s));
    for tr in 0..height / s {
        for tc in 0..width / s {
            let origin = (tr * s, tc * s);
            tiles.push(Tile {
                index: (tr, tc),
                origin,
                nominal_roi: (origin.0 + margin, origin.1 + margin),
            });
        }
    }
    Ok(tiles)
}

/// What one fiber recorded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiberSample {
    pub tile_index: (usize, usize),
    pub tile_origin: (usize, usize),
    pub roi_origin: (usize, usize),
    pub roi_size: usize,
    pub mean_value: f64,
    /// `(d_y, d_x)` as drawn, before clamping to the image.
    pub offset: (i64, i64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DegradedPair {
    /// ROI pixels carry source intensities; everything else is 0.
    pub sparse: Image,
    /// Each tile filled with its fiber's mean.
    pub lr: Image,
    pub samples: Vec<FiberSample>,
}

/// Degrades with a generator seeded from `cfg.seed`.
pub fn degrade(image: &Image, cfg: &DegradationConfig) -> Result<DegradedPair, DegradeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    degrade_with_rng(image, cfg, &mut rng)
}

/// Draws one `(d_y, d_x)` per tile in row-major order, then reconstitutes.
pub fn degrade_with_rng<R: Rng + ?Sized>(
    image: &Image,
    cfg: &DegradationConfig,
    rng: &mut R,
) -> Result<DegradedPair, DegradeError> {
    let tiles = grid_geometry(cfg, image.width(), image.height())?;
    let d = cfg.offset_px() as i64;
    let offsets: Vec<(i64, i64)> = tiles
        .iter()
        .map(|_| {
            let dy = rng.random_range(-d..=d);
            let dx = rng.random_range(-d..=d);
            (dy, dx)
        })
        .collect();
    degrade_with_offsets(image, cfg, &offsets)
}

/// Deterministic reconstitution from explicit per-tile offsets (row-major tile order).
pub fn degrade_with_offsets(
    image: &Image,
    cfg: &DegradationConfig,
    offsets: &[(i64, i64)],
) -> Result<DegradedPair, DegradeError> {
    let tiles = grid_geometry(cfg, image.width(), image.height())?;
    if offsets.len() != tiles.len() {
        return Err(DegradeError::OffsetCount {
            expected: tiles.len(),
            found: offsets.len(),
        });
    }
    let (w, h) = image.dims();
    let (m, s, d) = (cfg.fiber_px(), cfg.tile_px(), cfg.offset_px());
    let src = image.data();
    let mut sparse = vec![0.0; w * h];
    let mut lr = src.to_vec();
    let mut samples = Vec::with_capacity(tiles.len());

    for (tile, &(dy, dx)) in tiles.iter().zip(offsets) {
        if dy.unsigned_abs() as usize > d || dx.unsigned_abs() as usize > d {
            return Err(DegradeError::OffsetTooLarge { dy, dx, max: d });
        }
        let roi_row = (tile.nominal_roi.0 as i64 + dy).clamp(0, (h - m) as i64) as usize;
        let roi_col = (tile.nominal_roi.1 as i64 + dx).clamp(0, (w - m) as i64) as usize;

        let mut sum = 0.0;
        for row in roi_row..roi_row + m {
            let line = &src[row * w + roi_col..row * w + roi_col + m];
            for &v in line {
                sum += v;
            }
            sparse[row * w + roi_col..row * w + roi_col + m].copy_from_slice(line);
        }
        let mean = sum / (m * m) as f64;

        for row in tile.origin.0..tile.origin.0 + s {
            lr[row * w + tile.origin.1..row * w + tile.origin.1 + s].fill(mean);
        }
        samples.push(FiberSample {
            tile_index: tile.index,
            tile_origin: tile.origin,
            roi_origin: (roi_row, roi_col),
            roi_size: m,
            mean_value: mean,
            offset: (dy, dx),
        });
    }

    Ok(DegradedPair {
        sparse: Image::from_clamped(w, h, sparse).expect("dimensions preserved"),
        lr: Image::from_clamped(w, h, lr).expect("dimensions preserved"),
        samples,
    })
}

/// Degradation with single-pixel tiles and no offset; returns the LR frame,
/// which equals the input.
pub fn identity_check(image: &Image) -> Image {
    degrade(image, &DegradationConfig::identity())
        .expect("1x1 tiles fit every non-empty image")
        .lr
}

/// Writes the fiber log as CSV: `tile_row,tile_col,roi_row,roi_col,dx,dy,mean`.
pub fn write_samples_csv<W: Write>(samples: &[FiberSample], out: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["tile_row", "tile_col", "roi_row", "roi_col", "dx", "dy", "mean"])?;
    for s in samples {
        wtr.write_record([
            s.tile_index.0.to_string(),
            s.tile_index.1.to_string(),
            s.roi_origin.0.to_string(),
            s.roi_origin.1.to_string(),
            s.offset.1.to_string(),
            s.offset.0.to_string(),
            s.mean_value.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
