//! Same-padded 2-D cross-correlation with analytic gradients.
//!
//! Each item is lowered to a `(in * k * k) x (h * w)` column matrix and
//! multiplied by the `out x (in * k * k)` kernel matrix.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::{Real, Tensor4};
use super::SrcnnError;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    pub out_channels: usize,
    pub in_channels: usize,
    pub k: usize,
    /// `(out, in, k, k)` row-major.
    pub kernel: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvLayer<T> {
    pub fn zeros(out_channels: usize, in_channels: usize, k: usize) -> Result<Self, SrcnnError> {
        if k % 2 == 0 {
            return Err(SrcnnError::Shape(format!("kernel size {k} must be odd")));
        }
        if out_channels == 0 || in_channels == 0 {
            return Err(SrcnnError::Shape("channel counts must be positive".into()));
        }
        Ok(Self {
            out_channels,
            in_channels,
            k,
            kernel: vec![T::zero(); out_channels * in_channels * k * k],
            bias: vec![T::zero(); out_channels],
        })
    }

    pub fn from_parts(
        out_channels: usize,
        in_channels: usize,
        k: usize,
        kernel: Vec<T>,
        bias: Vec<T>,
    ) -> Result<Self, SrcnnError> {
        let mut layer = Self::zeros(out_channels, in_channels, k)?;
        if kernel.len() != layer.kernel.len() || bias.len() != out_channels {
            return Err(SrcnnError::Shape(format!(
                "layer {out_channels}x{in_channels}x{k}x{k} got {} kernel and {} bias values",
                kernel.len(),
                bias.len()
            )));
        }
        layer.kernel = kernel;
        layer.bias = bias;
        Ok(layer)
    }

    /// Zero-mean Gaussian kernel, zero bias.
    pub fn gaussian<R: Rng + ?Sized>(
        out_channels: usize,
        in_channels: usize,
        k: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self, SrcnnError> {
        let mut layer = Self::zeros(out_channels, in_channels, k)?;
        let normal = Normal::new(0.0, std)
            .map_err(|e| SrcnnError::Config(format!("init std {std}: {e}")))?;
        for w in layer.kernel.iter_mut() {
            *w = T::of(normal.sample(rng));
        }
        Ok(layer)
    }

    pub fn patch_len(&self) -> usize {
        self.in_channels * self.k * self.k
    }

    pub fn pad(&self) -> usize {
        (self.k - 1) / 2
    }

    pub fn param_count(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }

    pub fn cast<U: Real>(&self) -> ConvLayer<U> {
        ConvLayer {
            out_channels: self.out_channels,
            in_channels: self.in_channels,
            k: self.k,
            kernel: self.kernel.iter().map(|&w| U::of(w.f64())).collect(),
            bias: self.bias.iter().map(|&b| U::of(b.f64())).collect(),
        }
    }
}

/// Visits every (tap, output row) pair with a non-empty overlap. The callback
/// gets the tap index `ky * k + kx`, the output row `y`, the source row `sy`,
/// the first valid output column, the matching source column and the run
/// length.
#[inline]
fn for_each_tap(k: usize, h: usize, w: usize, mut f: impl FnMut(usize, usize, usize, usize, usize, usize)) {
    let p = (k / 2) as isize;
    for ky in 0..k {
        for kx in 0..k {
            let dx = kx as isize - p;
            let x_lo = (-dx).max(0) as usize;
            let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
            if x_lo >= x_hi {
                continue;
            }
            let sx0 = (x_lo as isize + dx) as usize;
            for y in 0..h {
                let sy = y as isize + ky as isize - p;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                f(ky * k + kx, y, sy as usize, x_lo, sx0, x_hi - x_lo);
            }
        }
    }
}

/// Lowers one `(c, h, w)` item into its `(c * k * k) x (h * w)` column matrix.
pub(crate) fn im2col<T: Real>(input: &[T], c: usize, h: usize, w: usize, k: usize, cols: &mut Vec<T>) {
    let p = (k / 2) as isize;
    let hw = h * w;
    cols.clear();
    cols.resize(c * k * k * hw, T::zero());
    for ch in 0..c {
        let plane = &input[ch * hw..(ch + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ch * k + ky) * k + kx) * hw..][..hw];
                let dx = kx as isize - p;
                // valid output columns x with 0 <= x + dx < w
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + ky as isize - p;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let sx0 = (x_lo as isize + dx) as usize;
                    row[y * w + x_lo..y * w + x_hi].copy_from_slice(&src[sx0..sx0 + (x_hi - x_lo)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input grid.
pub(crate) fn col2im<T: Real>(cols: &[T], c: usize, h: usize, w: usize, k: usize, out: &mut [T]) {
    let p = (k / 2) as isize;
    let hw = h * w;
    out.iter_mut().for_each(|v| *v = T::zero());
    for ch in 0..c {
        let plane = &mut out[ch * hw..(ch + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ch * k + ky) * k + kx) * hw..][..hw];
                let dx = kx as isize - p;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + ky as isize - p;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sx0 = (x_lo as isize + dx) as usize;
                    let dst = &mut plane[sy as usize * w + sx0..][..x_hi - x_lo];
                    for (d, &g) in dst.iter_mut().zip(&row[y * w + x_lo..y * w + x_hi]) {
                        *d = *d + g;
                    }
                }
            }
        }
    }
}

impl<T: Real> ConvLayer<T> {
    /// Layers with fewer outputs than inputs are evaluated output-side: a GEMM
    /// produces one plane per (output channel, tap) and the planes are then
    /// shifted into place. The intermediate is `out * k * k` planes instead of
    /// the `in * k * k` planes im2col would need.
    fn shifted(&self) -> bool {
        self.k > 1 && self.out_channels < self.in_channels
    }

    /// Forward pass on one item. `cols` receives the lowered input; it is left
    /// empty for 1x1 kernels (the input is the column matrix) and for layers
    /// evaluated output-side.
    pub(crate) fn forward_item(&self, input: &[T], h: usize, w: usize, cols: &mut Vec<T>) -> Vec<T> {
        if self.shifted() {
            cols.clear();
            return self.forward_shifted(input, h, w);
        }
        self.forward_gemm(input, h, w, cols)
    }

    fn forward_gemm(&self, input: &[T], h: usize, w: usize, cols: &mut Vec<T>) -> Vec<T> {
        let hw = h * w;
        let mut out = Vec::with_capacity(self.out_channels * hw);
        for &b in &self.bias {
            out.extend(std::iter::repeat_n(b, hw));
        }
        let lhs: &[T] = if self.k == 1 {
            cols.clear();
            input
        } else {
            im2col(input, self.in_channels, h, w, self.k, cols);
            cols
        };
        let kk = self.patch_len();
        T::gemm(
            self.out_channels,
            kk,
            hw,
            T::one(),
            &self.kernel,
            kk as isize,
            1,
            lhs,
            hw as isize,
            1,
            T::one(),
            &mut out,
            hw as isize,
            1,
        );
        out
    }

    fn forward_shifted(&self, input: &[T], h: usize, w: usize) -> Vec<T> {
        let hw = h * w;
        let kk = self.k * self.k;
        let mut out = Vec::with_capacity(self.out_channels * hw);
        for &b in &self.bias {
            out.extend(std::iter::repeat_n(b, hw));
        }
        let mut planes = vec![T::zero(); kk * hw];
        for o in 0..self.out_channels {
            // planes[t][q] = sum_c W[o, c, t] * x[c][q]
            T::gemm(
                kk,
                self.in_channels,
                hw,
                T::one(),
                &self.kernel[o * self.in_channels * kk..],
                1,
                kk as isize,
                input,
                hw as isize,
                1,
                T::zero(),
                &mut planes,
                hw as isize,
                1,
            );
            let dst = &mut out[o * hw..(o + 1) * hw];
            for_each_tap(self.k, h, w, |tap, y, sy, x_lo, sx0, len| {
                let src = &planes[tap * hw + sy * w + sx0..][..len];
                for (d, &v) in dst[y * w + x_lo..][..len].iter_mut().zip(src) {
                    *d = *d + v;
                }
            });
        }
        out
    }

    /// Accumulates kernel and bias gradients into `grad` and returns the input
    /// gradient when requested. `input_cols` is what [`Self::forward_item`]
    /// left in `cols`, and `input` is the raw item.
    pub(crate) fn backward_item(
        &self,
        input: &[T],
        input_cols: &[T],
        grad_out: &[T],
        h: usize,
        w: usize,
        grad: &mut ConvLayer<T>,
        want_input_grad: bool,
    ) -> Option<Vec<T>> {
        if self.shifted() {
            return self.backward_shifted(input, grad_out, h, w, grad, want_input_grad);
        }
        let hw = h * w;
        let kk = self.patch_len();
        let cols: &[T] = if self.k == 1 { input } else { input_cols };

        // dW += dY * cols^T
        T::gemm(
            self.out_channels,
            hw,
            kk,
            T::one(),
            grad_out,
            hw as isize,
            1,
            cols,
            1,
            hw as isize,
            T::one(),
            &mut grad.kernel,
            kk as isize,
            1,
        );
        for (o, gb) in grad.bias.iter_mut().enumerate() {
            let s: T = grad_out[o * hw..(o + 1) * hw].iter().copied().sum();
            *gb = *gb + s;
        }

        if !want_input_grad {
            return None;
        }
        // dcols = W^T * dY
        let mut dcols = vec![T::zero(); kk * hw];
        T::gemm(
            kk,
            self.out_channels,
            hw,
            T::one(),
            &self.kernel,
            1,
            kk as isize,
            grad_out,
            hw as isize,
            1,
            T::zero(),
            &mut dcols,
            hw as isize,
            1,
        );
        if self.k == 1 {
            return Some(dcols);
        }
        let mut dx = vec![T::zero(); self.in_channels * hw];
        col2im(&dcols, self.in_channels, h, w, self.k, &mut dx);
        Some(dx)
    }

    fn backward_shifted(
        &self,
        input: &[T],
        grad_out: &[T],
        h: usize,
        w: usize,
        grad: &mut ConvLayer<T>,
        want_input_grad: bool,
    ) -> Option<Vec<T>> {
        let hw = h * w;
        let kk = self.k * self.k;
        let per_out = self.in_channels * kk;
        let mut dx = want_input_grad.then(|| vec![T::zero(); self.in_channels * hw]);
        let mut shifted = vec![T::zero(); kk * hw];
        for o in 0..self.out_channels {
            let g = &grad_out[o * hw..(o + 1) * hw];
            let gb: T = g.iter().copied().sum();
            grad.bias[o] = grad.bias[o] + gb;

            // shifted[t][q] = dY[o] at the output pixel that reads input q through tap t
            shifted.iter_mut().for_each(|v| *v = T::zero());
            for_each_tap(self.k, h, w, |tap, y, sy, x_lo, sx0, len| {
                shifted[tap * hw + sy * w + sx0..][..len].copy_from_slice(&g[y * w + x_lo..][..len]);
            });

            // dW[o, c, t] += sum_q x[c][q] * shifted[t][q]
            T::gemm(
                self.in_channels,
                hw,
                kk,
                T::one(),
                input,
                hw as isize,
                1,
                &shifted,
                1,
                hw as isize,
                T::one(),
                &mut grad.kernel[o * per_out..(o + 1) * per_out],
                kk as isize,
                1,
            );
            // dX[c][q] += sum_t W[o, c, t] * shifted[t][q]
            if let Some(dx) = dx.as_mut() {
                T::gemm(
                    self.in_channels,
                    kk,
                    hw,
                    T::one(),
                    &self.kernel[o * per_out..(o + 1) * per_out],
                    kk as isize,
                    1,
                    &shifted,
                    hw as isize,
                    1,
                    T::one(),
                    dx,
                    hw as isize,
                    1,
                );
            }
        }
        dx
    }
}

/// Same-padded cross-correlation over a batch.
pub fn conv2d<T: Real>(input: &Tensor4<T>, layer: &ConvLayer<T>) -> Result<Tensor4<T>, SrcnnError> {
    if input.channels() != layer.in_channels {
        return Err(SrcnnError::Shape(format!(
            "input has {} channels, layer expects {}",
            input.channels(),
            layer.in_channels
        )));
    }
    let (h, w) = (input.height(), input.width());
    let mut cols = Vec::new();
    let items = input
        .items()
        .map(|item| layer.forward_item(item, h, w, &mut cols))
        .collect();
    Tensor4::from_items(layer.out_channels, h, w, items)
}

#[inline]
pub(crate) fn lrelu_scalar<T: Real>(x: T, slope: T) -> T {
    if x >= T::zero() {
        x
    } else {
        slope * x
    }
}

/// Derivative expressed through the activation value; 1 at exactly 0.
#[inline]
pub(crate) fn lrelu_grad_from_output<T: Real>(a: T, slope: T) -> T {
    if a >= T::zero() {
        T::one()
    } else {
        slope
    }
}

pub fn lrelu<T: Real>(x: &Tensor4<T>, slope: T) -> Tensor4<T> {
    x.map(|v| lrelu_scalar(v, slope))
}
