//! Forward and backward kernels for every layer kind in the network.
//!
//! Feature maps are laid out `[maps, height, width]` where height indexes electrodes
//! and width indexes time. All kernels are pure functions of their arguments.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayerParams<T = f32> {
    /// `[out_maps, in_maps, kernel_h, kernel_w]`
    pub weights: Tensor<T>,
    /// `[out_maps]`
    pub bias: Tensor<T>,
}

impl<T: Scalar> ConvLayerParams<T> {
    pub fn new(weights: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        weights.expect_rank("conv params", 4)?;
        bias.expect_shape("conv params", &[weights.shape()[0]])?;
        Ok(Self { weights, bias })
    }

    pub fn zeros(out_maps: usize, in_maps: usize, kernel_h: usize, kernel_w: usize) -> Self {
        Self {
            weights: Tensor::zeros(&[out_maps, in_maps, kernel_h, kernel_w]),
            bias: Tensor::zeros(&[out_maps]),
        }
    }

    pub fn out_maps(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_maps(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn kernel_h(&self) -> usize {
        self.weights.shape()[2]
    }

    pub fn kernel_w(&self) -> usize {
        self.weights.shape()[3]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayerParams<T = f32> {
    /// `[out_features, in_features]`
    pub weights: Tensor<T>,
    /// `[out_features]`
    pub bias: Tensor<T>,
}

impl<T: Scalar> DenseLayerParams<T> {
    pub fn new(weights: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        weights.expect_rank("dense params", 2)?;
        bias.expect_shape("dense params", &[weights.shape()[0]])?;
        Ok(Self { weights, bias })
    }

    pub fn zeros(out_features: usize, in_features: usize) -> Self {
        Self {
            weights: Tensor::zeros(&[out_features, in_features]),
            bias: Tensor::zeros(&[out_features]),
        }
    }

    pub fn out_features(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_features(&self) -> usize {
        self.weights.shape()[1]
    }
}

/// Gradients of a parameterized layer with respect to its input and parameters.
#[derive(Clone, Debug)]
pub struct LayerGrads<T = f32> {
    /// `None` when the caller asked to skip the input gradient.
    pub input: Option<Tensor<T>>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

fn conv_dims<T: Scalar>(
    input: &Tensor<T>,
    params: &ConvLayerParams<T>,
) -> Result<(usize, usize, usize, usize, usize)> {
    input.expect_rank("conv2d", 3)?;
    let [fi, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2]];
    if params.in_maps() != fi {
        return Err(Error::shape(
            "conv2d",
            format!("kernel expects {} input maps, input has {fi}", params.in_maps()),
        ));
    }
    let (kh, kw) = (params.kernel_h(), params.kernel_w());
    if kh > h || kw > w {
        return Err(Error::shape(
            "conv2d",
            format!("kernel {kh}x{kw} larger than input {h}x{w}"),
        ));
    }
    Ok((fi, h, w, h - kh + 1, w - kw + 1))
}

/// Valid (unpadded), stride-1 cross-correlation summed over input maps, plus bias.
pub fn conv2d_valid<T: Scalar>(input: &Tensor<T>, params: &ConvLayerParams<T>) -> Result<Tensor<T>> {
    let (fi, h, w, ho, wo) = conv_dims(input, params)?;
    let fo = params.out_maps();
    let (kh, kw) = (params.kernel_h(), params.kernel_w());
    let x = input.data();
    let wt = params.weights.data();
    let mut out = vec![T::zero(); fo * ho * wo];

    for o in 0..fo {
        let out_map = &mut out[o * ho * wo..(o + 1) * ho * wo];
        out_map.fill(params.bias.data()[o]);
        for i in 0..fi {
            for ki in 0..kh {
                for kj in 0..kw {
                    let k = wt[((o * fi + i) * kh + ki) * kw + kj];
                    for y in 0..ho {
                        let src = &x[(i * h + y + ki) * w + kj..][..wo];
                        let dst = &mut out_map[y * wo..(y + 1) * wo];
                        for (acc, &v) in dst.iter_mut().zip(src) {
                            *acc = *acc + k * v;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![fo, ho, wo], out)
}

/// Exact gradients of [`conv2d_valid`].
pub fn conv2d_grads<T: Scalar>(
    input: &Tensor<T>,
    params: &ConvLayerParams<T>,
    upstream: &Tensor<T>,
) -> Result<LayerGrads<T>> {
    conv2d_backward(input, params, upstream, true)
}

/// As [`conv2d_grads`]; the input gradient is skipped when `want_input` is false
/// (the first layer of a network never needs it).
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    params: &ConvLayerParams<T>,
    upstream: &Tensor<T>,
    want_input: bool,
) -> Result<LayerGrads<T>> {
    let (fi, h, w, ho, wo) = conv_dims(input, params)?;
    let fo = params.out_maps();
    let (kh, kw) = (params.kernel_h(), params.kernel_w());
    upstream.expect_shape("conv2d backward", &[fo, ho, wo])?;
    let x = input.data();
    let g = upstream.data();
    let wt = params.weights.data();

    let grad_bias: Vec<T> = (0..fo)
        .map(|o| g[o * ho * wo..(o + 1) * ho * wo].iter().copied().sum())
        .collect();

    let mut grad_w = vec![T::zero(); wt.len()];
    let mut grad_x = if want_input {
        vec![T::zero(); x.len()]
    } else {
        Vec::new()
    };

    for o in 0..fo {
        let g_map = &g[o * ho * wo..(o + 1) * ho * wo];
        for i in 0..fi {
            for ki in 0..kh {
                for kj in 0..kw {
                    let widx = ((o * fi + i) * kh + ki) * kw + kj;
                    let k = wt[widx];
                    let mut acc = T::zero();
                    for y in 0..ho {
                        let g_row = &g_map[y * wo..(y + 1) * wo];
                        let start = (i * h + y + ki) * w + kj;
                        let x_row = &x[start..start + wo];
                        acc = acc
                            + g_row
                                .iter()
                                .zip(x_row)
                                .fold(T::zero(), |s, (&a, &b)| s + a * b);
                        if want_input {
                            let gx_row = &mut grad_x[start..start + wo];
                            for (dst, &gv) in gx_row.iter_mut().zip(g_row) {
                                *dst = *dst + k * gv;
                            }
                        }
                    }
                    grad_w[widx] = acc;
                }
            }
        }
    }

    Ok(LayerGrads {
        input: if want_input {
            Some(Tensor::new(input.shape().to_vec(), grad_x)?)
        } else {
            None
        },
        weights: Tensor::new(params.weights.shape().to_vec(), grad_w)?,
        bias: Tensor::new(vec![fo], grad_bias)?,
    })
}

/// Pooling window along the time axis (kernel `1 x kernel_w`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct PoolSpec {
    pub kernel_w: usize,
    pub stride_w: usize,
    /// Ceil mode keeps a trailing partial window. Floor mode is only used for
    /// shape diagnostics.
    pub ceil_mode: bool,
}

impl PoolSpec {
    pub fn new(kernel_w: usize, stride_w: usize) -> Self {
        Self {
            kernel_w,
            stride_w,
            ceil_mode: true,
        }
    }

    /// Output width for an input of width `w`, or `None` when the kernel does not fit.
    pub fn output_width(&self, w: usize) -> Option<usize> {
        if self.kernel_w == 0 || self.stride_w == 0 || self.kernel_w > w {
            return None;
        }
        let span = w - self.kernel_w;
        if !self.ceil_mode {
            return Some(span / self.stride_w + 1);
        }
        let out = span.div_ceil(self.stride_w) + 1;
        // a trailing window must start inside the input (matters when stride > kernel)
        Some(if (out - 1) * self.stride_w >= w { out - 1 } else { out })
    }
}

/// Max pooling result: pooled maps plus, per output cell, the flat input index that won.
#[derive(Clone, Debug)]
pub struct Pooled<T = f32> {
    pub output: Tensor<T>,
    pub argmax: Vec<usize>,
}

pub fn maxpool<T: Scalar>(input: &Tensor<T>, spec: PoolSpec) -> Result<Pooled<T>> {
    input.expect_rank("maxpool", 3)?;
    let [f, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2]];
    let wo = spec.output_width(w).ok_or_else(|| {
        Error::shape(
            "maxpool",
            format!("kernel {} / stride {} does not fit width {w}", spec.kernel_w, spec.stride_w),
        )
    })?;
    let x = input.data();
    let mut out = Vec::with_capacity(f * h * wo);
    let mut argmax = Vec::with_capacity(f * h * wo);
    for row in 0..f * h {
        let base = row * w;
        for j in 0..wo {
            let start = j * spec.stride_w;
            let end = (start + spec.kernel_w).min(w);
            // first (lowest-index) maximum wins
            let mut best = base + start;
            for idx in base + start + 1..base + end {
                if x[idx] > x[best] {
                    best = idx;
                }
            }
            out.push(x[best]);
            argmax.push(best);
        }
    }
    Ok(Pooled {
        output: Tensor::new(vec![f, h, wo], out)?,
        argmax,
    })
}

/// Routes each upstream value to the input position recorded in `argmax`.
pub fn maxpool_grads<T: Scalar>(
    argmax: &[usize],
    upstream: &Tensor<T>,
    input_shape: &[usize],
) -> Result<Tensor<T>> {
    if argmax.len() != upstream.len() {
        return Err(Error::shape(
            "maxpool backward",
            format!("{} argmax entries for {} upstream values", argmax.len(), upstream.len()),
        ));
    }
    let mut grad = Tensor::zeros(input_shape);
    let n = grad.len();
    let g = grad.data_mut();
    for (&idx, &u) in argmax.iter().zip(upstream.data()) {
        if idx >= n {
            return Err(Error::shape(
                "maxpool backward",
                format!("argmax index {idx} out of bounds for input of {n} values"),
            ));
        }
        g[idx] = g[idx] + u;
    }
    Ok(grad)
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Upstream passes where `input > 0`; the derivative at 0 is taken as 0.
pub fn relu_grad<T: Scalar>(input: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    upstream.expect_shape("relu backward", input.shape())?;
    let data = input
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

/// `W x + b` for a flat input of length `in_features` (any shape, read row-major).
pub fn dense<T: Scalar>(input: &Tensor<T>, params: &DenseLayerParams<T>) -> Result<Tensor<T>> {
    let (n_out, n_in) = (params.out_features(), params.in_features());
    if input.len() != n_in {
        return Err(Error::shape(
            "dense",
            format!("layer expects {n_in} inputs, got {}", input.len()),
        ));
    }
    let x = input.data();
    let out = params
        .weights
        .data()
        .chunks_exact(n_in)
        .zip(params.bias.data())
        .map(|(row, &b)| row.iter().zip(x).fold(b, |s, (&w, &v)| s + w * v))
        .collect();
    Tensor::new(vec![n_out], out)
}

pub fn dense_grads<T: Scalar>(
    input: &Tensor<T>,
    params: &DenseLayerParams<T>,
    upstream: &Tensor<T>,
) -> Result<LayerGrads<T>> {
    let (n_out, n_in) = (params.out_features(), params.in_features());
    if input.len() != n_in || upstream.len() != n_out {
        return Err(Error::shape(
            "dense backward",
            format!(
                "layer {n_in}->{n_out}, got input {} and upstream {}",
                input.len(),
                upstream.len()
            ),
        ));
    }
    let x = input.data();
    let g = upstream.data();
    let mut grad_w = Vec::with_capacity(n_out * n_in);
    for &go in g {
        grad_w.extend(x.iter().map(|&v| go * v));
    }
    let mut grad_x = vec![T::zero(); n_in];
    for (row, &go) in params.weights.data().chunks_exact(n_in).zip(g) {
        for (dst, &w) in grad_x.iter_mut().zip(row) {
            *dst = *dst + w * go;
        }
    }
    Ok(LayerGrads {
        input: Some(Tensor::new(input.shape().to_vec(), grad_x)?),
        weights: Tensor::new(vec![n_out, n_in], grad_w)?,
        bias: upstream.clone().reshape(&[n_out])?,
    })
}

#[derive(Clone, Debug)]
pub struct SoftmaxXent<T = f32> {
    pub probs: Vec<T>,
    pub loss: T,
    pub grad_logits: Vec<T>,
}

pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Softmax followed by cross-entropy against `label`, stabilized by subtracting the
/// largest logit.
pub fn softmax_xent<T: Scalar>(logits: &[T], label: usize) -> Result<SoftmaxXent<T>> {
    if label >= logits.len() {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let shifted: Vec<T> = logits.iter().map(|&z| z - max).collect();
    let log_total = shifted.iter().map(|&s| s.exp()).sum::<T>().ln();
    let probs: Vec<T> = shifted.iter().map(|&s| (s - log_total).exp()).collect();
    let loss = log_total - shifted[label];
    let grad_logits = probs
        .iter()
        .enumerate()
        .map(|(k, &p)| if k == label { p - T::one() } else { p })
        .collect();
    Ok(SoftmaxXent {
        probs,
        loss,
        grad_logits,
    })
}

/// Per-element multiplier applied by inverted dropout: `0` or `1/(1-rate)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask<T = f32> {
    pub scale: Vec<T>,
}

pub fn dropout<T: Scalar, R: Rng + ?Sized>(
    input: &Tensor<T>,
    rate: f64,
    rng: &mut R,
    training: bool,
) -> Result<(Tensor<T>, DropoutMask<T>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    if !training || rate == 0.0 {
        return Ok((
            input.clone(),
            DropoutMask {
                scale: vec![T::one(); input.len()],
            },
        ));
    }
    let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
    let scale: Vec<T> = (0..input.len())
        .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let out = input.data().iter().zip(&scale).map(|(&x, &s)| x * s).collect();
    Ok((Tensor::new(input.shape().to_vec(), out)?, DropoutMask { scale }))
}

pub fn dropout_grad<T: Scalar>(mask: &DropoutMask<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    if mask.scale.len() != upstream.len() {
        return Err(Error::shape(
            "dropout backward",
            format!("mask of {} for upstream of {}", mask.scale.len(), upstream.len()),
        ));
    }
    let data = upstream.data().iter().zip(&mask.scale).map(|(&g, &s)| g * s).collect();
    Tensor::new(upstream.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn conv_hand_cross_correlation() {
        let input = t(&[1, 1, 3], &[1.0, 2.0, 3.0]);
        let params = ConvLayerParams::new(t(&[1, 1, 1, 2], &[1.0, -1.0]), t(&[1], &[0.0])).unwrap();
        let out = conv2d_valid(&input, &params).unwrap();
        assert_eq!(out.shape(), &[1, 1, 2]);
        assert_eq!(out.data(), &[-1.0, -1.0]);
    }

    #[test]
    fn conv_rejects_map_mismatch_and_oversized_kernel() {
        let input = Tensor::<f64>::zeros(&[2, 3, 5]);
        let wrong_maps = ConvLayerParams::<f64>::zeros(1, 3, 1, 2);
        assert!(matches!(conv2d_valid(&input, &wrong_maps), Err(Error::Shape { .. })));
        let too_tall = ConvLayerParams::<f64>::zeros(1, 2, 4, 1);
        assert!(conv2d_valid(&input, &too_tall).is_err());
    }

    #[test]
    fn conv_zero_upstream_gives_zero_grads() {
        let input = Tensor::<f64>::from_fn(&[2, 3, 5], |i| i as f64 * 0.3 - 1.0);
        let mut params = ConvLayerParams::<f64>::zeros(2, 2, 1, 3);
        params.weights = Tensor::from_fn(&[2, 2, 1, 3], |i| (i as f64).sin());
        let g = conv2d_grads(&input, &params, &Tensor::zeros(&[2, 3, 3])).unwrap();
        assert!(g.input.unwrap().data().iter().all(|&v| v == 0.0));
        assert!(g.weights.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_one_by_one_weight_grad_is_dot_product() {
        let input = t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let params = ConvLayerParams::new(t(&[1, 1, 1, 1], &[0.7]), t(&[1], &[0.1])).unwrap();
        let up = t(&[1, 2, 2], &[0.5, -1.0, 2.0, 1.5]);
        let g = conv2d_grads(&input, &params, &up).unwrap();
        assert_eq!(g.weights.data(), &[0.5 - 2.0 + 6.0 + 6.0]);
        assert_eq!(g.bias.data(), &[3.0]);
    }

    #[test]
    fn conv_rejects_bad_upstream_shape() {
        let input = Tensor::<f64>::zeros(&[1, 1, 4]);
        let params = ConvLayerParams::<f64>::zeros(1, 1, 1, 2);
        assert!(conv2d_grads(&input, &params, &Tensor::zeros(&[1, 1, 4])).is_err());
    }

    #[test]
    fn pool_partial_last_window() {
        let input = t(&[1, 1, 5], &[1.0, 3.0, 2.0, 5.0, 4.0]);
        let p = maxpool(&input, PoolSpec::new(2, 2)).unwrap();
        assert_eq!(p.output.data(), &[3.0, 5.0, 4.0]);
        let g = maxpool_grads(&p.argmax, &t(&[1, 1, 3], &[1.0, 1.0, 1.0]), input.shape()).unwrap();
        assert_eq!(g.data(), &[0.0, 1.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn pool_ties_pick_first() {
        let input = Tensor::<f64>::full(&[1, 1, 6], 2.0);
        let p = maxpool(&input, PoolSpec::new(3, 3)).unwrap();
        assert_eq!(p.argmax, vec![0, 3]);
        let g = maxpool_grads(&p.argmax, &t(&[1, 1, 2], &[1.0, 1.0]), input.shape()).unwrap();
        assert_eq!(g.data(), &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn pool_width_arithmetic() {
        assert_eq!(PoolSpec::new(4, 4).output_width(4082), Some(1021));
        assert_eq!(PoolSpec::new(2, 2).output_width(8182), Some(4091));
        let floor = PoolSpec { ceil_mode: false, ..PoolSpec::new(4, 4) };
        assert_eq!(floor.output_width(4082), Some(1020));
        assert_eq!(PoolSpec::new(5, 1).output_width(4), None);
    }

    #[test]
    fn pool_errors() {
        let input = Tensor::<f64>::zeros(&[1, 1, 3]);
        assert!(maxpool(&input, PoolSpec::new(4, 1)).is_err());
        let up = Tensor::<f64>::zeros(&[1]);
        assert!(maxpool_grads(&[7], &up, &[1, 1, 3]).is_err());
    }

    #[test]
    fn relu_and_grad() {
        let x = t(&[3], &[-1.0, 0.0, 2.0]);
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let g = relu_grad(&x, &t(&[3], &[1.0, 1.0, 1.0])).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
        let pos = t(&[3], &[0.0, 1.5, 9.0]);
        assert_eq!(relu(&pos), pos);
    }

    #[test]
    fn dense_examples() {
        let params = DenseLayerParams::new(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]), t(&[2], &[0.0, 0.0])).unwrap();
        assert_eq!(dense(&t(&[2], &[1.0, 1.0]), &params).unwrap().data(), &[3.0, 7.0]);
        let zero = DenseLayerParams::<f64>::zeros(3, 4);
        let out = dense(&t(&[4], &[5.0, -2.0, 1.0, 8.0]), &zero).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
        assert!(dense(&t(&[3], &[1.0, 1.0, 1.0]), &params).is_err());
    }

    #[test]
    fn softmax_xent_examples() {
        let r = softmax_xent(&[0.0f64, 0.0], 0).unwrap();
        assert_eq!(r.probs, vec![0.5, 0.5]);
        assert!((r.loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(r.grad_logits, vec![-0.5, 0.5]);

        let big = softmax_xent(&[1000.0f64, 0.0], 0).unwrap();
        assert!(big.loss.is_finite() && big.loss.abs() < 1e-300);
        assert!(big.probs.iter().all(|p| p.is_finite()));

        let other = softmax_xent(&[1000.0f64, 0.0], 1).unwrap();
        assert!((other.loss - 1000.0).abs() < 1e-9);

        assert!(softmax_xent(&[0.0f64, 0.0], 2).is_err());
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f64>::from_fn(&[10], |i| i as f64);
        let (y, mask) = dropout(&x, 0.0, &mut rng, true).unwrap();
        assert_eq!(y, x);
        assert!(mask.scale.iter().all(|&s| s == 1.0));
        let (y, _) = dropout(&x, 0.5, &mut rng, false).unwrap();
        assert_eq!(y, x);
        assert!(dropout(&x, 1.0, &mut rng, true).is_err());
    }

    #[test]
    fn dropout_preserves_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::<f64>::full(&[100_000], 1.0);
        let (y, mask) = dropout(&x, 0.2, &mut rng, true).unwrap();
        let mean = y.sum() / y.len() as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
        let g = dropout_grad(&mask, &x).unwrap();
        assert_eq!(g, y);
    }
}
