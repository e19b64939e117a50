//! Synthetic fluorescent-nuclei images used in place of clinical HRME frames.
//!
//! Nuclei are ellipses with a cos² intensity taper, placed uniformly over the
//! canvas on a flat background with optional white Gaussian noise. Overlapping
//! nuclei combine by per-pixel maximum.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::image::Image;
use crate::Diagnosis;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PhantomError {
    #[error("invalid phantom spec: {0}")]
    InvalidSpec(String),
    #[error("count per spec must be at least 1")]
    EmptyDataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub width: usize,
    pub height: usize,
    pub nuclei_per_megapixel: f64,
    /// `[r_min, r_max]` semi-major axis in pixels.
    pub nucleus_radius_px: [f64; 2],
    /// `[lo, hi]` peak intensity range.
    pub nucleus_intensity: [f64; 2],
    pub background_level: f64,
    pub background_noise_sd: f64,
    pub eccentricity_max: f64,
    pub label: Diagnosis,
}

impl PhantomSpec {
    /// Sparse, small, round nuclei.
    pub fn non_neoplastic(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            nuclei_per_megapixel: 1200.0,
            nucleus_radius_px: [3.0, 5.0],
            nucleus_intensity: [0.55, 0.9],
            background_level: 0.15,
            background_noise_sd: 0.02,
            eccentricity_max: 0.3,
            label: Diagnosis::NonNeoplastic,
        }
    }

    /// Crowded, enlarged, pleomorphic nuclei.
    pub fn neoplastic(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            nuclei_per_megapixel: 2500.0,
            nucleus_radius_px: [4.0, 8.0],
            nucleus_intensity: [0.55, 0.95],
            background_level: 0.15,
            background_noise_sd: 0.02,
            eccentricity_max: 0.5,
            label: Diagnosis::Neoplastic,
        }
    }

    pub fn validate(&self) -> Result<(), PhantomError> {
        let bad = |msg: &str| Err(PhantomError::InvalidSpec(msg.to_string()));
        let [r_min, r_max] = self.nucleus_radius_px;
        let [i_lo, i_hi] = self.nucleus_intensity;
        if self.width == 0 || self.height == 0 {
            return bad("canvas must be at least 1x1");
        }
        if !(self.nuclei_per_megapixel.is_finite() && self.nuclei_per_megapixel >= 0.0) {
            return bad("nuclei_per_megapixel must be finite and >= 0");
        }
        if !(r_min >= 1.0 && r_max >= r_min && r_max.is_finite()) {
            return bad("radius range needs 1 <= r_min <= r_max");
        }
        if !(0.0 <= i_lo && i_lo <= i_hi && i_hi <= 1.0) {
            return bad("intensity range must satisfy 0 <= lo <= hi <= 1");
        }
        if !(0.0..=1.0).contains(&self.background_level) {
            return bad("background_level must lie in [0, 1]");
        }
        if !(self.background_noise_sd.is_finite() && self.background_noise_sd >= 0.0) {
            return bad("background_noise_sd must be >= 0");
        }
        if self.background_level + 3.0 * self.background_noise_sd >= i_lo {
            return bad("background + 3 sd must stay below the nucleus intensity lower bound");
        }
        if !(0.0..1.0).contains(&self.eccentricity_max) {
            return bad("eccentricity_max must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn nucleus_count(&self) -> usize {
        (self.nuclei_per_megapixel * (self.width * self.height) as f64 / 1e6).round() as usize
    }
}

/// One placed nucleus, kept for test oracles and debugging.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nucleus {
    pub center_row: f64,
    pub center_col: f64,
    pub semi_major: f64,
    pub semi_minor: f64,
    pub orientation: f64,
    pub peak: f64,
}

impl Nucleus {
    /// Normalized elliptical radius of `(row, col)`; `< 1` inside the support.
    fn radius_at(&self, row: f64, col: f64) -> f64 {
        let (dy, dx) = (row - self.center_row, col - self.center_col);
        let (s, c) = self.orientation.sin_cos();
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        ((u / self.semi_major).powi(2) + (v / self.semi_minor).powi(2)).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub image: Image,
    pub nuclei: Vec<Nucleus>,
}

impl Phantom {
    pub fn centers(&self) -> Vec<(f64, f64)> {
        self.nuclei
            .iter()
            .map(|n| (n.center_row, n.center_col))
            .collect()
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

pub fn generate_phantom(spec: &PhantomSpec, seed: u64) -> Result<Phantom, PhantomError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (spec.width, spec.height);

    let nuclei: Vec<Nucleus> = (0..spec.nucleus_count())
        .map(|_| {
            let center_row = uniform(&mut rng, 0.0, h as f64);
            let center_col = uniform(&mut rng, 0.0, w as f64);
            let semi_major = uniform(&mut rng, spec.nucleus_radius_px[0], spec.nucleus_radius_px[1]);
            let ratio = uniform(&mut rng, 1.0 - spec.eccentricity_max, 1.0);
            let orientation = uniform(&mut rng, 0.0, std::f64::consts::PI);
            let peak = uniform(&mut rng, spec.nucleus_intensity[0], spec.nucleus_intensity[1]);
            Nucleus {
                center_row,
                center_col,
                semi_major,
                semi_minor: semi_major * ratio,
                orientation,
                peak,
            }
        })
        .collect();

    let mut data = vec![spec.background_level; w * h];
    if spec.background_noise_sd > 0.0 {
        for v in data.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v = (*v + spec.background_noise_sd * z).clamp(0.0, 1.0);
        }
    }

    for n in &nuclei {
        let reach = n.semi_major.ceil() + 1.0;
        let r0 = (n.center_row - reach).floor().max(0.0) as usize;
        let r1 = ((n.center_row + reach).ceil() as usize).min(h - 1);
        let c0 = (n.center_col - reach).floor().max(0.0) as usize;
        let c1 = ((n.center_col + reach).ceil() as usize).min(w - 1);
        for row in r0..=r1 {
            for col in c0..=c1 {
                let rho = n.radius_at(row as f64, col as f64);
                if rho < 1.0 {
                    let taper = (std::f64::consts::FRAC_PI_2 * rho).cos().powi(2);
                    let value = n.peak * taper;
                    let px = &mut data[row * w + col];
                    if value > *px {
                        *px = value;
                    }
                }
            }
        }
    }

    let image = Image::from_clamped(w, h, data).expect("canvas dimensions validated");
    Ok(Phantom { image, nuclei })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub image: Image,
    pub label: Diagnosis,
}

/// `count_per_spec` phantoms for each spec, grouped by spec. Item `k` uses
/// seed `base_seed + k`.
pub fn generate_dataset(
    specs: &[PhantomSpec],
    count_per_spec: usize,
    base_seed: u64,
) -> Result<Vec<LabeledImage>, PhantomError> {
    if count_per_spec == 0 {
        return Err(PhantomError::EmptyDataset);
    }
    let mut out = Vec::with_capacity(specs.len() * count_per_spec);
    for (s, spec) in specs.iter().enumerate() {
        for i in 0..count_per_spec {
            let k = (s * count_per_spec + i) as u64;
            let phantom = generate_phantom(spec, base_seed.wrapping_add(k))?;
            out.push(LabeledImage {
                image: phantom.image,
                label: spec.label,
            });
        }
    }
    Ok(out)
}
