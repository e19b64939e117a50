//! Binary weights file.
//!
//! ```text
//! "SRCW" | version: u32 | lrelu slope: f32
//! 3 x ( out: u32 | in: u32 | k: u32 | kernel: f32 * out*in*k*k | bias: f32 * out )
//! ```
//!
//! All integers and floats are little-endian.

use super::conv::ConvLayer;
use super::model::SrcnnModel;
use super::tensor::Real;
use super::SrcnnError;

pub const MAGIC: &[u8; 4] = b"SRCW";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WeightsError {
    #[error("bad magic, expected \"SRCW\"")]
    BadMagic,
    #[error("unsupported weights version {found} (expected {VERSION})")]
    VersionMismatch { found: u32 },
    #[error("truncated payload while reading {0}")]
    Truncated(&'static str),
    #[error("{0} trailing bytes after the last layer")]
    TrailingBytes(usize),
    #[error("invalid layer layout: {0}")]
    Layout(#[from] SrcnnError),
}

pub fn save_weights<T: Real>(model: &SrcnnModel<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * (model.param_count() + 9));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(model.lrelu_slope.f64() as f32).to_le_bytes());
    for layer in &model.layers {
        for dim in [layer.out_channels, layer.in_channels, layer.k] {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for &v in layer.kernel.iter().chain(&layer.bias) {
            out.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&[u8], WeightsError> {
        let end = self.pos.checked_add(n).ok_or(WeightsError::Truncated(what))?;
        let s = self.bytes.get(self.pos..end).ok_or(WeightsError::Truncated(what))?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, WeightsError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, n: usize, what: &'static str) -> Result<Vec<f32>, WeightsError> {
        let len = n.checked_mul(4).ok_or(WeightsError::Truncated(what))?;
        Ok(self
            .take(len, what)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

/// Parses a weights file; nothing is returned unless the whole payload is valid.
pub fn load_weights<T: Real>(bytes: &[u8]) -> Result<SrcnnModel<T>, WeightsError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic").map_err(|_| WeightsError::BadMagic)? != MAGIC {
        return Err(WeightsError::BadMagic);
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(WeightsError::VersionMismatch { found: version });
    }
    let slope = r.f32s(1, "lrelu slope")?[0];

    let mut layers = Vec::with_capacity(3);
    for _ in 0..3 {
        let out = r.u32("layer header")? as usize;
        let inp = r.u32("layer header")? as usize;
        let k = r.u32("layer header")? as usize;
        let n = out
            .checked_mul(inp)
            .and_then(|v| v.checked_mul(k))
            .and_then(|v| v.checked_mul(k))
            .ok_or(WeightsError::Truncated("kernel"))?;
        let kernel = r.f32s(n, "kernel")?;
        let bias = r.f32s(out, "bias")?;
        let cast = |v: Vec<f32>| v.into_iter().map(|x| T::of(f64::from(x))).collect();
        layers.push(ConvLayer::from_parts(out, inp, k, cast(kernel), cast(bias))?);
    }
    if r.pos != bytes.len() {
        return Err(WeightsError::TrailingBytes(bytes.len() - r.pos));
    }
    let layers: [ConvLayer<T>; 3] = layers.try_into().expect("three layers read");
    Ok(SrcnnModel::from_layers(layers, T::of(f64::from(slope)))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::srcnn::model::ModelShape;

    #[test]
    fn round_trip_within_single_precision() {
        let model = SrcnnModel::<f64>::init(ModelShape::default(), 0.01, 0.5, 3).unwrap();
        let back: SrcnnModel<f64> = load_weights(&save_weights(&model)).unwrap();
        assert_eq!(back.shape(), model.shape());
        let max_err = model
            .param_slices()
            .iter()
            .zip(back.param_slices())
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        assert!(max_err <= 1e-6, "max_err = {max_err}");
        assert!((back.lrelu_slope - 0.01).abs() < 1e-9);

        let m32 = SrcnnModel::<f32>::init(ModelShape::default(), 0.2, 1e-3, 4).unwrap();
        assert_eq!(load_weights::<f32>(&save_weights(&m32)).unwrap(), m32);
    }

    #[test]
    fn header_layout() {
        let model = SrcnnModel::<f32>::zeros(
            ModelShape {
                filters: [2, 1],
                kernels: [3, 1, 1],
            },
            0.01,
        )
        .unwrap();
        let bytes = save_weights(&model);
        assert_eq!(&bytes[..4], b"SRCW");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &0.01f32.to_le_bytes());
        assert_eq!(&bytes[12..24], &[2, 0, 0, 0, 1, 0, 0, 0, 3, 0, 0, 0]);
        // 12 header + 3*12 layer headers + (18 + 2) + (2 + 1) + (1 + 1) floats
        assert_eq!(bytes.len(), 12 + 36 + 4 * 25);
    }

    #[test]
    fn rejects_corrupt_files() {
        let model = SrcnnModel::<f32>::init(ModelShape::default(), 0.01, 1e-3, 0).unwrap();
        let bytes = save_weights(&model);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(load_weights::<f32>(&bad), Err(WeightsError::BadMagic));
        assert_eq!(load_weights::<f32>(b"SR"), Err(WeightsError::BadMagic));

        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert_eq!(
            load_weights::<f32>(&v2),
            Err(WeightsError::VersionMismatch { found: 2 })
        );

        for cut in [10, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(
                load_weights::<f32>(&bytes[..cut]),
                Err(WeightsError::Truncated(_))
            ));
        }

        let mut long = bytes.clone();
        long.push(0);
        assert_eq!(load_weights::<f32>(&long), Err(WeightsError::TrailingBytes(1)));
    }
}
