//! PSNR and SSIM between a reference image and a test image.

use std::fmt;

use crate::image::Image;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("dimension mismatch: {a:?} vs {b:?}")]
    DimensionMismatch { a: (usize, usize), b: (usize, usize) },
    #[error("image {width}x{height} is smaller than the {window}x{window} window")]
    TooSmall {
        width: usize,
        height: usize,
        window: usize,
    },
    #[error("invalid SSIM configuration: {0}")]
    InvalidConfig(String),
}

/// PSNR in dB. Zero error is reported as `Infinite` rather than a large number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Finite(f64),
    Infinite,
}

impl Psnr {
    pub fn is_infinite(self) -> bool {
        matches!(self, Psnr::Infinite)
    }

    /// `f64::INFINITY` for the infinite marker.
    pub fn value(self) -> f64 {
        match self {
            Psnr::Finite(v) => v,
            Psnr::Infinite => f64::INFINITY,
        }
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Finite(v) => write!(f, "{v}"),
            Psnr::Infinite => f.write_str("inf"),
        }
    }
}

fn check_dims(a: &Image, b: &Image) -> Result<(), MetricsError> {
    if a.same_dims(b) {
        Ok(())
    } else {
        Err(MetricsError::DimensionMismatch {
            a: a.dims(),
            b: b.dims(),
        })
    }
}

pub fn mse(reference: &Image, test: &Image) -> Result<f64, MetricsError> {
    check_dims(reference, test)?;
    let sum: f64 = reference
        .data()
        .iter()
        .zip(test.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / reference.data().len() as f64)
}

pub fn psnr(reference: &Image, test: &Image, peak: f64) -> Result<Psnr, MetricsError> {
    let e = mse(reference, test)?;
    if e == 0.0 {
        Ok(Psnr::Infinite)
    } else {
        Ok(Psnr::Finite(10.0 * (peak * peak / e).log10()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimConfig {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if self.window == 0 || self.window % 2 == 0 {
            return Err(MetricsError::InvalidConfig("window must be odd".into()));
        }
        if !(self.sigma > 0.0) || !(self.k1 > 0.0) || !(self.k2 > 0.0) || !(self.dynamic_range > 0.0) {
            return Err(MetricsError::InvalidConfig(
                "sigma, k1, k2 and dynamic range must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Normalized 1-D taps; the 2-D window is their outer product.
    pub fn taps(&self) -> Vec<f64> {
        let r = self.window / 2;
        let raw: Vec<f64> = (0..self.window)
            .map(|i| {
                let x = i as f64 - r as f64;
                (-x * x / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }
}

/// Valid-mode separable filter of a product image `f(a, b)`.
fn filter_valid(w: usize, h: usize, taps: &[f64], src: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let ow = w - k + 1;
    let oh = h - k + 1;
    let mut horiz = vec![0.0; ow * h];
    for r in 0..h {
        let row = &src[r * w..(r + 1) * w];
        for c in 0..ow {
            horiz[r * ow + c] = taps.iter().zip(&row[c..c + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * horiz[(r + i) * ow + c])
                .sum();
        }
    }
    out
}

/// SSIM map over every fully interior window position, row-major.
pub fn ssim_map(reference: &Image, test: &Image, cfg: &SsimConfig) -> Result<Vec<f64>, MetricsError> {
    check_dims(reference, test)?;
    cfg.validate()?;
    let (w, h) = reference.dims();
    if w < cfg.window || h < cfg.window {
        return Err(MetricsError::TooSmall {
            width: w,
            height: h,
            window: cfg.window,
        });
    }
    let taps = cfg.taps();
    let x = reference.data();
    let y = test.data();
    let prod = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| p * q).collect() };

    let mu_x = filter_valid(w, h, &taps, x);
    let mu_y = filter_valid(w, h, &taps, y);
    let exx = filter_valid(w, h, &taps, &prod(x, x));
    let eyy = filter_valid(w, h, &taps, &prod(y, y));
    // (x*y) is computed the same way as (x*x) so ssim(a, a) is exactly 1.
    let exy = filter_valid(w, h, &taps, &prod(x, y));

    let c1 = (cfg.k1 * cfg.dynamic_range).powi(2);
    let c2 = (cfg.k2 * cfg.dynamic_range).powi(2);
    Ok((0..mu_x.len())
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = exx[i] - mx * mx;
            let vy = eyy[i] - my * my;
            let cxy = exy[i] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        })
        .collect())
}

pub fn ssim(reference: &Image, test: &Image, cfg: &SsimConfig) -> Result<f64, MetricsError> {
    let map = ssim_map(reference, test, cfg)?;
    Ok(map.iter().sum::<f64>() / map.len() as f64)
}
