use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::conv::{lrelu_grad_from_output, lrelu_scalar, ConvLayer};
use super::tensor::{Real, Tensor4};
use super::SrcnnError;
use crate::image::Image;

/// Filter counts and kernel sizes of the three layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelShape {
    pub filters: [usize; 2],
    pub kernels: [usize; 3],
}

impl Default for ModelShape {
    /// 9x9 -> 1x1 -> 5x5 with 64 and 32 filters.
    fn default() -> Self {
        Self {
            filters: [64, 32],
            kernels: [9, 1, 5],
        }
    }
}

impl ModelShape {
    /// Chebyshev radius of the input window that influences one output pixel.
    pub fn receptive_radius(&self) -> usize {
        self.kernels.iter().map(|k| (k - 1) / 2).sum()
    }
}

/// conv -> LReLU -> conv -> LReLU -> conv (linear output).
#[derive(Debug, Clone, PartialEq)]
pub struct SrcnnModel<T> {
    pub layers: [ConvLayer<T>; 3],
    pub lrelu_slope: T,
}

/// Parameter gradients with the same layout as the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: [ConvLayer<T>; 3],
}

impl<T: Real> Gradients<T> {
    fn zeros_like(model: &SrcnnModel<T>) -> Self {
        let z = |l: &ConvLayer<T>| ConvLayer::zeros(l.out_channels, l.in_channels, l.k).expect("valid layer");
        Self {
            layers: [z(&model.layers[0]), z(&model.layers[1]), z(&model.layers[2])],
        }
    }

    fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.kernel.iter_mut().zip(&b.kernel).for_each(|(x, &y)| *x = *x + y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, &y)| *x = *x + y);
        }
    }

    /// Kernel and bias slices in layer order: `k1, b1, k2, b2, k3, b3`.
    pub fn slices(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|l| [l.kernel.as_slice(), l.bias.as_slice()])
            .collect()
    }
}

fn check_chain<T: Real>(layers: &[ConvLayer<T>; 3]) -> Result<(), SrcnnError> {
    if layers[0].in_channels != 1 || layers[2].out_channels != 1 {
        return Err(SrcnnError::Shape("network must map 1 channel to 1 channel".into()));
    }
    for pair in layers.windows(2) {
        if pair[0].out_channels != pair[1].in_channels {
            return Err(SrcnnError::Shape(format!(
                "layer with {} outputs feeds layer with {} inputs",
                pair[0].out_channels, pair[1].in_channels
            )));
        }
    }
    Ok(())
}

struct ItemTrace<T> {
    cols1: Vec<T>,
    act1: Vec<T>,
    cols2: Vec<T>,
    act2: Vec<T>,
    cols3: Vec<T>,
    output: Vec<T>,
}

impl<T: Real> SrcnnModel<T> {
    pub fn from_layers(layers: [ConvLayer<T>; 3], lrelu_slope: T) -> Result<Self, SrcnnError> {
        check_chain(&layers)?;
        if !(lrelu_slope > T::zero() && lrelu_slope < T::one()) {
            return Err(SrcnnError::Config(format!(
                "lrelu slope {:?} must lie in (0, 1)",
                lrelu_slope
            )));
        }
        Ok(Self { layers, lrelu_slope })
    }

    /// Gaussian-initialized weights (zero mean, `init_std`), zero biases.
    pub fn init(shape: ModelShape, lrelu_slope: f64, init_std: f64, seed: u64) -> Result<Self, SrcnnError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [n1, n2] = shape.filters;
        let [k1, k2, k3] = shape.kernels;
        let layers = [
            ConvLayer::gaussian(n1, 1, k1, init_std, &mut rng)?,
            ConvLayer::gaussian(n2, n1, k2, init_std, &mut rng)?,
            ConvLayer::gaussian(1, n2, k3, init_std, &mut rng)?,
        ];
        Self::from_layers(layers, T::of(lrelu_slope))
    }

    pub fn zeros(shape: ModelShape, lrelu_slope: f64) -> Result<Self, SrcnnError> {
        let [n1, n2] = shape.filters;
        let [k1, k2, k3] = shape.kernels;
        let layers = [
            ConvLayer::zeros(n1, 1, k1)?,
            ConvLayer::zeros(n2, n1, k2)?,
            ConvLayer::zeros(1, n2, k3)?,
        ];
        Self::from_layers(layers, T::of(lrelu_slope))
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            filters: [self.layers[0].out_channels, self.layers[1].out_channels],
            kernels: [self.layers[0].k, self.layers[1].k, self.layers[2].k],
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(ConvLayer::param_count).sum()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.kernel.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn param_slices(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|l| [l.kernel.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn cast<U: Real>(&self) -> SrcnnModel<U> {
        SrcnnModel {
            layers: [self.layers[0].cast(), self.layers[1].cast(), self.layers[2].cast()],
            lrelu_slope: U::of(self.lrelu_slope.f64()),
        }
    }

    fn trace_item(&self, input: &[T], h: usize, w: usize) -> ItemTrace<T> {
        let slope = self.lrelu_slope;
        let mut cols1 = Vec::new();
        let mut act1 = self.layers[0].forward_item(input, h, w, &mut cols1);
        act1.iter_mut().for_each(|v| *v = lrelu_scalar(*v, slope));
        let mut cols2 = Vec::new();
        let mut act2 = self.layers[1].forward_item(&act1, h, w, &mut cols2);
        act2.iter_mut().for_each(|v| *v = lrelu_scalar(*v, slope));
        let mut cols3 = Vec::new();
        let output = self.layers[2].forward_item(&act2, h, w, &mut cols3);
        ItemTrace {
            cols1,
            act1,
            cols2,
            act2,
            cols3,
            output,
        }
    }

    fn forward_item(&self, input: &[T], h: usize, w: usize) -> Vec<T> {
        self.trace_item(input, h, w).output
    }

    /// Gradient of `scale * sum((pred - target)^2)` for one item; returns the
    /// item's squared-error sum.
    fn backward_item(&self, input: &[T], target: &[T], h: usize, w: usize, scale: T) -> (Gradients<T>, f64) {
        let slope = self.lrelu_slope;
        let trace = self.trace_item(input, h, w);
        let mut grads = Gradients::zeros_like(self);
        let mut sq = 0.0;
        let two = T::of(2.0) * scale;
        let d_out: Vec<T> = trace
            .output
            .iter()
            .zip(target)
            .map(|(&p, &t)| {
                let r = p - t;
                sq += r.f64() * r.f64();
                two * r
            })
            .collect();

        let mut d_act2 = self.layers[2]
            .backward_item(&trace.act2, &trace.cols3, &d_out, h, w, &mut grads.layers[2], true)
            .expect("input gradient requested");
        for (g, &a) in d_act2.iter_mut().zip(&trace.act2) {
            *g = *g * lrelu_grad_from_output(a, slope);
        }
        let mut d_act1 = self.layers[1]
            .backward_item(&trace.act1, &trace.cols2, &d_act2, h, w, &mut grads.layers[1], true)
            .expect("input gradient requested");
        for (g, &a) in d_act1.iter_mut().zip(&trace.act1) {
            *g = *g * lrelu_grad_from_output(a, slope);
        }
        self.layers[0].backward_item(input, &trace.cols1, &d_act1, h, w, &mut grads.layers[0], false);
        (grads, sq)
    }

    fn check_input(&self, batch: &Tensor4<T>) -> Result<(), SrcnnError> {
        if batch.channels() != 1 {
            return Err(SrcnnError::Shape(format!(
                "expected single-channel input, got {} channels",
                batch.channels()
            )));
        }
        Ok(())
    }

    /// Full forward pass; output is not clamped.
    pub fn forward(&self, batch: &Tensor4<T>) -> Result<Tensor4<T>, SrcnnError> {
        self.check_input(batch)?;
        let (h, w) = (batch.height(), batch.width());
        let items: Vec<Vec<T>> = batch
            .items()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|item| self.forward_item(item, h, w))
            .collect();
        Tensor4::from_items(1, h, w, items)
    }

    /// Analytic gradients of [`mse_loss`] with respect to every parameter,
    /// together with the loss. Items are processed in parallel and summed in
    /// batch order.
    pub fn backward(&self, batch: &Tensor4<T>, target: &Tensor4<T>) -> Result<(Gradients<T>, f64), SrcnnError> {
        self.check_input(batch)?;
        if batch.dims() != target.dims() {
            return Err(SrcnnError::Shape(format!(
                "input {:?} and target {:?} differ",
                batch.dims(),
                target.dims()
            )));
        }
        let (h, w) = (batch.height(), batch.width());
        let n = batch.data().len();
        let scale = T::one() / T::of(n as f64);
        let pairs: Vec<(&[T], &[T])> = batch.items().zip(target.items()).collect();
        let per_item: Vec<(Gradients<T>, f64)> = pairs
            .par_iter()
            .map(|(x, t)| self.backward_item(x, t, h, w, scale))
            .collect();
        let mut total = Gradients::zeros_like(self);
        let mut sq = 0.0;
        for (g, s) in &per_item {
            total.add_assign(g);
            sq += s;
        }
        Ok((total, sq / n as f64))
    }

    /// Forward pass on one full frame, processed in horizontal strips with a
    /// halo wider than the receptive radius so that results match a
    /// whole-frame pass while bounding memory.
    pub fn forward_frame(&self, frame: &[T], width: usize, height: usize) -> Vec<T> {
        const STRIP_PIXELS: usize = 1 << 16;
        let halo = self.shape().receptive_radius() + 2;
        let rows = (STRIP_PIXELS / width).max(16);
        if rows >= height {
            return self.forward_item(frame, height, width);
        }
        self.forward_frame_strips(frame, width, height, rows, halo)
    }

    pub(crate) fn forward_frame_strips(
        &self,
        frame: &[T],
        width: usize,
        height: usize,
        rows: usize,
        halo: usize,
    ) -> Vec<T> {
        let mut out = vec![T::zero(); width * height];
        let mut start = 0;
        while start < height {
            let end = (start + rows).min(height);
            let lo = start.saturating_sub(halo);
            let hi = (end + halo).min(height);
            let strip = &frame[lo * width..hi * width];
            let result = self.forward_item(strip, hi - lo, width);
            let skip = (start - lo) * width;
            out[start * width..end * width].copy_from_slice(&result[skip..skip + (end - start) * width]);
            start = end;
        }
        out
    }
}

/// Mean of squared differences over all elements.
pub fn mse_loss<T: Real>(pred: &Tensor4<T>, target: &Tensor4<T>) -> Result<f64, SrcnnError> {
    if pred.dims() != target.dims() {
        return Err(SrcnnError::Shape(format!(
            "prediction {:?} and target {:?} differ",
            pred.dims(),
            target.dims()
        )));
    }
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let r = p.f64() - t.f64();
            r * r
        })
        .sum();
    Ok(sum / pred.data().len() as f64)
}

/// Super-resolves a full frame; the output is clamped to `[0, 1]`.
pub fn infer<T: Real>(model: &SrcnnModel<T>, lr: &Image) -> Image {
    let (w, h) = lr.dims();
    let frame: Vec<T> = lr.data().iter().map(|&v| T::of(v)).collect();
    let out = model.forward_frame(&frame, w, h);
    Image::from_clamped(w, h, out.into_iter().map(|v| v.f64()).collect()).expect("dimensions preserved")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_tensor(dims: [usize; 4], seed: u64) -> Tensor4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = dims.iter().product();
        Tensor4::new(dims, (0..n).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    fn micro_shape() -> ModelShape {
        ModelShape {
            filters: [3, 2],
            kernels: [3, 1, 3],
        }
    }

    #[test]
    fn zero_model_outputs_zero() {
        let model = SrcnnModel::<f64>::zeros(ModelShape::default(), 0.01).unwrap();
        let x = random_tensor([1, 1, 6, 7], 1);
        assert!(model.forward(&x).unwrap().data().iter().all(|&v| v == 0.0));
        let img = Image::filled(9, 5, 0.7).unwrap();
        assert!(infer(&model, &img).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn same_padding_preserves_dims() {
        let model = SrcnnModel::<f32>::init(ModelShape::default(), 0.01, 1e-3, 0).unwrap();
        let x = Tensor4::<f32>::zeros([2, 1, 19, 13]).unwrap();
        assert_eq!(model.forward(&x).unwrap().dims(), [2, 1, 19, 13]);
        let one = Tensor4::<f32>::zeros([1, 1, 1, 1]).unwrap();
        assert_eq!(model.forward(&one).unwrap().dims(), [1, 1, 1, 1]);
    }

    #[test]
    fn hand_composed_micro_model() {
        // one filter per layer, 3x3 -> 1x1 -> 3x3
        let k1: Vec<f64> = (0..9).map(|i| (i as f64 - 4.0) * 0.1).collect();
        let k3: Vec<f64> = (0..9).map(|i| 0.05 * (i % 3) as f64 - 0.02).collect();
        let layers = [
            ConvLayer::from_parts(1, 1, 3, k1.clone(), vec![0.05]).unwrap(),
            ConvLayer::from_parts(1, 1, 1, vec![-1.5], vec![0.1]).unwrap(),
            ConvLayer::from_parts(1, 1, 3, k3.clone(), vec![-0.3]).unwrap(),
        ];
        let model = SrcnnModel::from_layers(layers, 0.1).unwrap();
        let x: Vec<f64> = vec![0.2, 0.9, 0.4, 0.1, 0.6, 0.8, 0.3, 0.5, 0.7];
        let input = Tensor4::new([1, 1, 3, 3], x.clone()).unwrap();

        let at = |v: &[f64], r: i64, c: i64| -> f64 {
            if (0..3).contains(&r) && (0..3).contains(&c) {
                v[(r * 3 + c) as usize]
            } else {
                0.0
            }
        };
        let leaky = |v: f64| if v >= 0.0 { v } else { 0.1 * v };
        let mut a1 = vec![0.0; 9];
        for r in 0..3i64 {
            for c in 0..3i64 {
                let mut s = 0.05;
                for ky in 0..3i64 {
                    for kx in 0..3i64 {
                        s += k1[(ky * 3 + kx) as usize] * at(&x, r + ky - 1, c + kx - 1);
                    }
                }
                a1[(r * 3 + c) as usize] = leaky(s);
            }
        }
        let a2: Vec<f64> = a1.iter().map(|&v| leaky(-1.5 * v + 0.1)).collect();
        let mut expected = vec![0.0; 9];
        for r in 0..3i64 {
            for c in 0..3i64 {
                let mut s = -0.3;
                for ky in 0..3i64 {
                    for kx in 0..3i64 {
                        s += k3[(ky * 3 + kx) as usize] * at(&a2, r + ky - 1, c + kx - 1);
                    }
                }
                expected[(r * 3 + c) as usize] = s;
            }
        }
        let out = model.forward(&input).unwrap();
        for (a, b) in out.data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn mse_examples() {
        let a = random_tensor([2, 1, 4, 4], 2);
        assert_eq!(mse_loss(&a, &a).unwrap(), 0.0);
        let b = a.map(|v| v + 0.1);
        assert!((mse_loss(&b, &a).unwrap() - 0.01).abs() < 1e-15);
        let c = random_tensor([2, 1, 4, 4], 3);
        let mut sum = 0.0f64;
        for (x, y) in a.data().iter().zip(c.data()) {
            sum += (x - y) * (x - y);
        }
        let oracle = sum / 32.0;
        assert!(((mse_loss(&a, &c).unwrap() - oracle) / oracle).abs() <= 1e-12);
        assert!(mse_loss(&a, &random_tensor([1, 1, 4, 4], 0)).is_err());
    }

    #[test]
    fn zero_residual_zero_gradient() {
        let model = SrcnnModel::<f64>::init(micro_shape(), 0.01, 0.3, 4).unwrap();
        let x = random_tensor([2, 1, 5, 5], 5);
        let target = model.forward(&x).unwrap();
        let (g, loss) = model.backward(&x, &target).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.slices().iter().all(|s| s.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn final_bias_gradient_is_twice_constant_residual() {
        let model = SrcnnModel::<f64>::init(micro_shape(), 0.01, 0.3, 6).unwrap();
        let x = random_tensor([3, 1, 4, 6], 7);
        let pred = model.forward(&x).unwrap();
        let r = 0.25;
        let target = pred.map(|v| v - r);
        let (g, _) = model.backward(&x, &target).unwrap();
        assert!((g.layers[2].bias[0] - 2.0 * r).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_shapes() {
        let model = SrcnnModel::<f32>::init(micro_shape(), 0.01, 0.1, 0).unwrap();
        let x = Tensor4::<f32>::zeros([1, 2, 4, 4]).unwrap();
        assert!(model.forward(&x).is_err());
        let x = Tensor4::<f32>::zeros([1, 1, 4, 4]).unwrap();
        let t = Tensor4::<f32>::zeros([1, 1, 4, 5]).unwrap();
        assert!(model.backward(&x, &t).is_err());
        let l = |o, i, k| ConvLayer::<f32>::zeros(o, i, k).unwrap();
        assert!(SrcnnModel::from_layers([l(4, 1, 3), l(2, 3, 1), l(1, 2, 3)], 0.01).is_err());
        assert!(SrcnnModel::from_layers([l(4, 1, 3), l(2, 4, 1), l(1, 2, 3)], 1.5).is_err());
    }

    #[test]
    fn receptive_radius_of_default_shape() {
        assert_eq!(ModelShape::default().receptive_radius(), 6);
    }

    #[test]
    fn strips_match_full_frame() {
        let model = SrcnnModel::<f64>::init(ModelShape::default(), 0.01, 0.05, 8).unwrap();
        let x = random_tensor([1, 1, 40, 23], 9);
        let full = model.forward(&x).unwrap();
        let halo = model.shape().receptive_radius();
        for rows in [7, 20] {
            let tiled = model.forward_frame_strips(x.data(), 23, 40, rows, halo);
            for (a, b) in tiled.iter().zip(full.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
