//! Grayscale image representation, binary PGM ("P5") codec and cropping.
//!
//! Intensities are stored as `f64` in `[0, 1]`, row-major. 8-bit and 16-bit
//! graymaps are accepted on input; 16-bit samples are big-endian.

use rand::Rng;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ImageError {
    #[error("image dimensions must be at least 1x1, got {width}x{height}")]
    EmptyDimensions { width: usize, height: usize },
    #[error("data length {len} does not match {width}x{height}")]
    LengthMismatch { width: usize, height: usize, len: usize },
    #[error("pixel {index} has value {value}, outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("malformed PGM header: {0}")]
    MalformedHeader(String),
    #[error("unsupported PGM maxval {0} (expected 255 or 65535)")]
    UnsupportedMaxval(u32),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("rectangle ({x0}, {y0}, {w}x{h}) does not fit inside {width}x{height} image")]
    CropOutOfBounds {
        x0: usize,
        y0: usize,
        w: usize,
        h: usize,
        width: usize,
        height: usize,
    },
    #[error("crop size {size} exceeds image dimensions {width}x{height}")]
    CropTooLarge { size: usize, width: usize, height: usize },
}

/// A 2-D grayscale intensity field with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    /// Builds an image from row-major data, validating every invariant.
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyDimensions { width, height });
        }
        if data.len() != width * height {
            return Err(ImageError::LengthMismatch {
                width,
                height,
                len: data.len(),
            });
        }
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(ImageError::OutOfRange { index, value });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds an image from arbitrary real values, clamping each into `[0, 1]`.
    /// NaN maps to 0.
    pub fn from_clamped(width: usize, height: usize, data: Vec<f64>) -> Result<Self, ImageError> {
        let data = data
            .into_iter()
            .map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) })
            .collect();
        Self::new(width, height, data)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self, ImageError> {
        Self::new(width, height, vec![value; width * height])
    }

    /// Builds an image by evaluating `f(row, col)` at every pixel.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self, ImageError> {
        let mut data = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                data.push(f(row, col));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.width..(row + 1) * self.width]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Mirrors the image left to right.
    pub fn flip_horizontal(&self) -> Image {
        let mut data = Vec::with_capacity(self.data.len());
        for row in 0..self.height {
            data.extend(self.row(row).iter().rev());
        }
        Image {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Extracts the `w`x`h` rectangle whose top-left corner is column `x0`, row `y0`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Image, ImageError> {
        let fits = w >= 1
            && h >= 1
            && x0.checked_add(w).is_some_and(|e| e <= self.width)
            && y0.checked_add(h).is_some_and(|e| e <= self.height);
        if !fits {
            return Err(ImageError::CropOutOfBounds {
                x0,
                y0,
                w,
                h,
                width: self.width,
                height: self.height,
            });
        }
        let mut data = Vec::with_capacity(w * h);
        for row in y0..y0 + h {
            let start = row * self.width + x0;
            data.extend_from_slice(&self.data[start..start + w]);
        }
        Ok(Image {
            width: w,
            height: h,
            data,
        })
    }

    /// Draws a uniformly distributed `size`x`size` crop origin `(x0, y0)`.
    pub fn random_crop_origin<R: Rng + ?Sized>(
        &self,
        size: usize,
        rng: &mut R,
    ) -> Result<(usize, usize), ImageError> {
        Self::random_crop_origin_in(self.width, self.height, size, rng)
    }

    /// Same draw as [`Image::random_crop_origin`] for a `width`x`height` canvas.
    pub fn random_crop_origin_in<R: Rng + ?Sized>(
        width: usize,
        height: usize,
        size: usize,
        rng: &mut R,
    ) -> Result<(usize, usize), ImageError> {
        if size == 0 || size > width || size > height {
            return Err(ImageError::CropTooLarge {
                size,
                width,
                height,
            });
        }
        let x0 = rng.random_range(0..=width - size);
        let y0 = rng.random_range(0..=height - size);
        Ok((x0, y0))
    }

    /// A `size`x`size` crop at an offset drawn uniformly over all valid positions.
    pub fn random_crop<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Result<Image, ImageError> {
        let (x0, y0) = self.random_crop_origin(size, rng)?;
        self.crop(x0, y0, size, size)
    }
}

/// Decodes a binary graymap. Samples are scaled by `1 / maxval`.
pub fn load_pgm(bytes: &[u8]) -> Result<Image, ImageError> {
    let mut cursor = HeaderCursor { bytes, pos: 0 };
    let magic = cursor.token()?;
    if magic != b"P5" {
        return Err(ImageError::MalformedHeader(format!(
            "expected magic P5, found {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let width = cursor.number("width")?;
    let height = cursor.number("height")?;
    let maxval = cursor.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(ImageError::EmptyDimensions {
            width: width as usize,
            height: height as usize,
        });
    }
    if maxval != 255 && maxval != 65535 {
        return Err(ImageError::UnsupportedMaxval(maxval));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(cursor.pos) {
        Some(b) if b.is_ascii_whitespace() => cursor.pos += 1,
        _ => {
            return Err(ImageError::MalformedHeader(
                "missing whitespace after maxval".into(),
            ))
        }
    }

    let (width, height) = (width as usize, height as usize);
    let bytes_per_sample = if maxval == 255 { 1 } else { 2 };
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(bytes_per_sample))
        .ok_or_else(|| ImageError::MalformedHeader("dimensions overflow".into()))?;
    let payload = &bytes[cursor.pos..];
    if payload.len() < expected {
        return Err(ImageError::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    let scale = f64::from(maxval);
    let data = if bytes_per_sample == 1 {
        payload[..expected]
            .iter()
            .map(|&b| f64::from(b) / scale)
            .collect()
    } else {
        payload[..expected]
            .chunks_exact(2)
            .map(|c| f64::from(u16::from_be_bytes([c[0], c[1]])) / scale)
            .collect()
    };
    Image::new(width, height, data)
}

/// Maxval of an encoded graymap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgmDepth {
    Eight,
    Sixteen,
}

impl PgmDepth {
    pub fn maxval(self) -> u32 {
        match self {
            PgmDepth::Eight => 255,
            PgmDepth::Sixteen => 65535,
        }
    }
}

/// Encodes with round-to-nearest quantization.
pub fn save_pgm(image: &Image, depth: PgmDepth) -> Vec<u8> {
    let maxval = depth.maxval();
    let header = format!("P5\n{} {}\n{}\n", image.width, image.height, maxval);
    let scale = f64::from(maxval);
    let mut out = header.into_bytes();
    match depth {
        PgmDepth::Eight => {
            out.extend(image.data.iter().map(|&v| (v * scale).round() as u8));
        }
        PgmDepth::Sixteen => {
            for &v in &image.data {
                out.extend_from_slice(&((v * scale).round() as u16).to_be_bytes());
            }
        }
    }
    out
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderCursor<'a> {
    fn skip_whitespace_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<&'a [u8], ImageError> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() || b == b'#' {
                break;
            }
            self.pos += 1;
        }
        if start == self.pos {
            return Err(ImageError::MalformedHeader("unexpected end of header".into()));
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn number(&mut self, what: &str) -> Result<u32, ImageError> {
        let tok = self.token()?;
        std::str::from_utf8(tok)
            .ok()
            .filter(|s| s.bytes().all(|b| b.is_ascii_digit()))
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| {
                ImageError::MalformedHeader(format!(
                    "invalid {what}: {:?}",
                    String::from_utf8_lossy(tok)
                ))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pgm(header: &str, payload: &[u8]) -> Vec<u8> {
        let mut v = header.as_bytes().to_vec();
        v.extend_from_slice(payload);
        v
    }

    #[test]
    fn load_eight_bit() {
        let img = load_pgm(&pgm("P5 2 2 255\n", &[0, 255, 128, 64])).unwrap();
        assert_eq!(img.dims(), (2, 2));
        assert_eq!(img.data(), &[0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);
    }

    #[test]
    fn load_sixteen_bit_big_endian() {
        let img = load_pgm(&pgm("P5 1 1 65535\n", &[0xff, 0xff])).unwrap();
        assert_eq!(img.data(), &[1.0]);
        let img = load_pgm(&pgm("P5 1 1 65535\n", &[0x01, 0x00])).unwrap();
        assert_eq!(img.data(), &[256.0 / 65535.0]);
    }

    #[test]
    fn load_with_comments() {
        let img = load_pgm(&pgm("P5\n# made by hand\n2 # w\n1\n255\n", &[10, 20])).unwrap();
        assert_eq!(img.dims(), (2, 1));
    }

    #[test]
    fn load_errors() {
        assert_eq!(
            load_pgm(&pgm("P5 2 2 255\n", &[0, 1, 2])),
            Err(ImageError::TruncatedPayload {
                expected: 4,
                found: 3
            })
        );
        assert!(matches!(
            load_pgm(&pgm("P2 2 2 255\n", &[0, 1, 2, 3])),
            Err(ImageError::MalformedHeader(_))
        ));
        assert_eq!(
            load_pgm(&pgm("P5 1 1 1023\n", &[0, 0])),
            Err(ImageError::UnsupportedMaxval(1023))
        );
        assert!(matches!(
            load_pgm(b"P5 1 1"),
            Err(ImageError::MalformedHeader(_))
        ));
        assert!(matches!(
            load_pgm(&pgm("P5 -1 1 255\n", &[0])),
            Err(ImageError::MalformedHeader(_))
        ));
    }

    #[test]
    fn save_rounds_to_nearest() {
        let half = Image::filled(1, 1, 0.5).unwrap();
        let bytes = save_pgm(&half, PgmDepth::Eight);
        assert_eq!(bytes.last(), Some(&128));
        let zero = Image::filled(1, 1, 0.0).unwrap();
        assert_eq!(save_pgm(&zero, PgmDepth::Eight).last(), Some(&0));
    }

    #[test]
    fn sixteen_bit_round_trip_error_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let img = Image::from_fn(8, 8, |_, _| rng.random::<f64>()).unwrap();
        let back = load_pgm(&save_pgm(&img, PgmDepth::Sixteen)).unwrap();
        let max_err = img
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err <= 1.0 / 131070.0, "max_err = {max_err}");
    }

    #[test]
    fn crop_cases() {
        let img = Image::new(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(img.crop(0, 0, 2, 2).unwrap(), img);
        assert_eq!(img.crop(1, 1, 1, 1).unwrap().data(), &[0.4]);
        assert!(matches!(
            img.crop(1, 0, 2, 1),
            Err(ImageError::CropOutOfBounds { .. })
        ));
    }

    #[test]
    fn random_crop_full_size_is_identity() {
        let img = Image::from_fn(5, 5, |r, c| (r * 5 + c) as f64 / 25.0).unwrap();
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            assert_eq!(img.random_crop(5, &mut rng).unwrap(), img);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(img.random_crop(6, &mut rng).is_err());
    }

    #[test]
    fn random_crop_is_seeded() {
        let img = Image::from_fn(9, 7, |r, c| (r * 9 + c) as f64 / 63.0).unwrap();
        let a = img.random_crop(3, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let b = img.random_crop(3, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn random_crop_offsets_are_uniform() {
        let img = Image::filled(4, 4, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut counts = [0usize; 9];
        let draws = 10_000;
        for _ in 0..draws {
            let (x0, y0) = img.random_crop_origin(2, &mut rng).unwrap();
            counts[y0 * 3 + x0] += 1;
        }
        let expected = draws as f64 / 9.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 8 degrees of freedom, 99.9th percentile is 26.12
        assert!(chi2 < 26.12, "chi2 = {chi2}");
        for &c in &counts {
            assert!((c as f64 / draws as f64 - 1.0 / 9.0).abs() <= 0.02);
        }
    }

    #[test]
    fn rejects_invalid_construction() {
        assert!(Image::new(0, 1, vec![]).is_err());
        assert!(Image::new(2, 1, vec![0.0]).is_err());
        assert!(Image::new(1, 1, vec![1.5]).is_err());
        assert!(Image::new(1, 1, vec![f64::NAN]).is_err());
    }
}
