//! Central-difference verification of the analytic backward passes.
//!
//! Every check runs in `f64`. Each layer is wrapped in a scalar loss
//! `L = sum_i r_i * y_i` with fixed random `r`, so the upstream gradient is dense and
//! nonzero. The whole input and every parameter tensor are perturbed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::{self, ConvLayerParams, DenseLayerParams, PoolSpec};
use crate::tensor::Tensor;

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-6;

/// Denominator floor for relative error, so entries whose true gradient is exactly
/// zero are compared on an absolute scale.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GradCheckLayer {
    Conv {
        in_maps: usize,
        height: usize,
        width: usize,
        out_maps: usize,
        kernel_h: usize,
        kernel_w: usize,
    },
    Dense {
        in_features: usize,
        out_features: usize,
    },
    MaxPool {
        maps: usize,
        height: usize,
        width: usize,
        spec: PoolSpec,
    },
    Relu {
        len: usize,
    },
    Dropout {
        len: usize,
        rate: f64,
    },
    SoftmaxXent {
        classes: usize,
    },
    /// Temporal conv, spatial conv, pool and a dense classifier with softmax
    /// cross-entropy, over a `channels x steps` input.
    MicroNet {
        channels: usize,
        steps: usize,
    },
}

/// Deliberate faults for exercising the checker itself.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Faults {
    /// Added to every analytic conv weight gradient.
    pub conv_weight_grad_offset: f64,
}

/// Maximum elementwise relative error `|a - n| / max(|a|, |n|, floor)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(REL_ERROR_FLOOR))
        .fold(0.0, f64::max)
}

/// Central-difference gradient of `loss` with respect to every entry of every slot.
pub fn numeric_gradient(
    slots: &[Vec<f64>],
    step: f64,
    mut loss: impl FnMut(&[Vec<f64>]) -> Result<f64>,
) -> Result<Vec<Vec<f64>>> {
    let mut work = slots.to_vec();
    let mut grads = Vec::with_capacity(slots.len());
    for s in 0..slots.len() {
        let mut g = Vec::with_capacity(slots[s].len());
        for i in 0..slots[s].len() {
            let orig = work[s][i];
            work[s][i] = orig + step;
            let plus = loss(&work)?;
            work[s][i] = orig - step;
            let minus = loss(&work)?;
            work[s][i] = orig;
            g.push((plus - minus) / (2.0 * step));
        }
        grads.push(g);
    }
    Ok(grads)
}

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn tensor(shape: &[usize], data: &[f64]) -> Result<Tensor<f64>> {
    Tensor::new(shape.to_vec(), data.to_vec())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Runs the finite-difference check for one layer description and returns the
/// largest relative error over all checked entries.
pub fn finite_diff_check(layer: &GradCheckLayer, seed: u64) -> Result<f64> {
    finite_diff_check_with(layer, seed, Faults::default())
}

pub fn finite_diff_check_with(layer: &GradCheckLayer, seed: u64, faults: Faults) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (analytic, numeric) = match *layer {
        GradCheckLayer::Conv {
            in_maps,
            height,
            width,
            out_maps,
            kernel_h,
            kernel_w,
        } => {
            let in_shape = [in_maps, height, width];
            let w_shape = [out_maps, in_maps, kernel_h, kernel_w];
            let out_len = out_maps * (height + 1 - kernel_h) * (width + 1 - kernel_w);
            let r = uniform(&mut rng, out_len);
            let slots = vec![
                uniform(&mut rng, in_shape.iter().product()),
                uniform(&mut rng, w_shape.iter().product()),
                uniform(&mut rng, out_maps),
            ];
            let forward = |s: &[Vec<f64>]| -> Result<(Tensor<f64>, ConvLayerParams<f64>, Tensor<f64>)> {
                let x = tensor(&in_shape, &s[0])?;
                let p = ConvLayerParams::new(tensor(&w_shape, &s[1])?, tensor(&[out_maps], &s[2])?)?;
                let y = nn::conv2d_valid(&x, &p)?;
                Ok((x, p, y))
            };
            let (x, p, y) = forward(&slots)?;
            let up = tensor(y.shape(), &r)?;
            let g = nn::conv2d_grads(&x, &p, &up)?;
            let mut gw = g.weights.into_data();
            gw.iter_mut().for_each(|v| *v += faults.conv_weight_grad_offset);
            let analytic = vec![g.input.expect("requested").into_data(), gw, g.bias.into_data()];
            let numeric = numeric_gradient(&slots, FD_STEP, |s| Ok(dot(forward(s)?.2.data(), &r)))?;
            (analytic, numeric)
        }
        GradCheckLayer::Dense {
            in_features,
            out_features,
        } => {
            let r = uniform(&mut rng, out_features);
            let slots = vec![
                uniform(&mut rng, in_features),
                uniform(&mut rng, in_features * out_features),
                uniform(&mut rng, out_features),
            ];
            let build = |s: &[Vec<f64>]| -> Result<(Tensor<f64>, DenseLayerParams<f64>)> {
                Ok((
                    tensor(&[in_features], &s[0])?,
                    DenseLayerParams::new(
                        tensor(&[out_features, in_features], &s[1])?,
                        tensor(&[out_features], &s[2])?,
                    )?,
                ))
            };
            let (x, p) = build(&slots)?;
            let g = nn::dense_grads(&x, &p, &tensor(&[out_features], &r)?)?;
            let analytic = vec![
                g.input.expect("dense always returns input grad").into_data(),
                g.weights.into_data(),
                g.bias.into_data(),
            ];
            let numeric = numeric_gradient(&slots, FD_STEP, |s| {
                let (x, p) = build(s)?;
                Ok(dot(nn::dense(&x, &p)?.data(), &r))
            })?;
            (analytic, numeric)
        }
        GradCheckLayer::MaxPool {
            maps,
            height,
            width,
            spec,
        } => {
            let shape = [maps, height, width];
            let slots = vec![uniform(&mut rng, shape.iter().product())];
            let pooled = nn::maxpool(&tensor(&shape, &slots[0])?, spec)?;
            let r = uniform(&mut rng, pooled.output.len());
            let up = tensor(pooled.output.shape(), &r)?;
            let analytic = vec![nn::maxpool_grads(&pooled.argmax, &up, &shape)?.into_data()];
            let numeric = numeric_gradient(&slots, FD_STEP, |s| {
                Ok(dot(nn::maxpool(&tensor(&shape, &s[0])?, spec)?.output.data(), &r))
            })?;
            (analytic, numeric)
        }
        GradCheckLayer::Relu { len } => {
            let slots = vec![uniform(&mut rng, len)];
            let r = uniform(&mut rng, len);
            let x = tensor(&[len], &slots[0])?;
            let analytic = vec![nn::relu_grad(&x, &tensor(&[len], &r)?)?.into_data()];
            let numeric = numeric_gradient(&slots, FD_STEP, |s| {
                Ok(dot(nn::relu(&tensor(&[len], &s[0])?).data(), &r))
            })?;
            (analytic, numeric)
        }
        GradCheckLayer::Dropout { len, rate } => {
            let slots = vec![uniform(&mut rng, len)];
            let r = uniform(&mut rng, len);
            let mask_seed = rng.gen::<u64>();
            let run = |s: &[Vec<f64>]| {
                let mut mask_rng = ChaCha8Rng::seed_from_u64(mask_seed);
                nn::dropout(&tensor(&[len], &s[0])?, rate, &mut mask_rng, true)
            };
            let (_, mask) = run(&slots)?;
            let analytic = vec![nn::dropout_grad(&mask, &tensor(&[len], &r)?)?.into_data()];
            let numeric = numeric_gradient(&slots, FD_STEP, |s| Ok(dot(run(s)?.0.data(), &r)))?;
            (analytic, numeric)
        }
        GradCheckLayer::SoftmaxXent { classes } => {
            let slots = vec![uniform(&mut rng, classes)];
            let label = rng.gen_range(0..classes);
            let analytic = vec![nn::softmax_xent(&slots[0], label)?.grad_logits];
            let numeric =
                numeric_gradient(&slots, FD_STEP, |s| Ok(nn::softmax_xent(&s[0], label)?.loss))?;
            (analytic, numeric)
        }
        GradCheckLayer::MicroNet { channels, steps } => micro_net(&mut rng, channels, steps, faults)?,
    };
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| max_relative_error(a, n))
        .fold(0.0, f64::max))
}

const MICRO_MAPS: usize = 3;
const MICRO_KERNEL: usize = 3;

fn micro_net(
    rng: &mut ChaCha8Rng,
    channels: usize,
    steps: usize,
    faults: Faults,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let pool = PoolSpec::new(2, 2);
    let conv_w = steps + 1 - MICRO_KERNEL;
    let pooled_w = pool.output_width(conv_w).expect("micro net too short");
    let flat = MICRO_MAPS * pooled_w;
    let label = rng.gen_range(0..2);

    let shapes: [Vec<usize>; 7] = [
        vec![1, channels, steps],
        vec![MICRO_MAPS, 1, 1, MICRO_KERNEL],
        vec![MICRO_MAPS],
        vec![MICRO_MAPS, MICRO_MAPS, channels, 1],
        vec![MICRO_MAPS],
        vec![2, flat],
        vec![2],
    ];
    let slots: Vec<Vec<f64>> = shapes
        .iter()
        .map(|s| uniform(rng, s.iter().product()))
        .collect();

    struct Cache {
        x: Tensor<f64>,
        c1: ConvLayerParams<f64>,
        z1: Tensor<f64>,
        a1: Tensor<f64>,
        c2: ConvLayerParams<f64>,
        z2: Tensor<f64>,
        a2: Tensor<f64>,
        argmax: Vec<usize>,
        pooled: Tensor<f64>,
        d: DenseLayerParams<f64>,
        loss: f64,
        grad_logits: Vec<f64>,
    }

    let forward = |s: &[Vec<f64>]| -> Result<Cache> {
        let x = tensor(&shapes[0], &s[0])?;
        let c1 = ConvLayerParams::new(tensor(&shapes[1], &s[1])?, tensor(&shapes[2], &s[2])?)?;
        let z1 = nn::conv2d_valid(&x, &c1)?;
        let a1 = nn::relu(&z1);
        let c2 = ConvLayerParams::new(tensor(&shapes[3], &s[3])?, tensor(&shapes[4], &s[4])?)?;
        let z2 = nn::conv2d_valid(&a1, &c2)?;
        let a2 = nn::relu(&z2);
        let p = nn::maxpool(&a2, pool)?;
        let d = DenseLayerParams::new(tensor(&shapes[5], &s[5])?, tensor(&shapes[6], &s[6])?)?;
        let logits = nn::dense(&p.output, &d)?;
        let sx = nn::softmax_xent(logits.data(), label)?;
        Ok(Cache {
            x,
            c1,
            z1,
            a1,
            c2,
            z2,
            a2,
            argmax: p.argmax,
            pooled: p.output,
            d,
            loss: sx.loss,
            grad_logits: sx.grad_logits,
        })
    };

    let c = forward(&slots)?;
    let g_logits = tensor(&[2], &c.grad_logits)?;
    let gd = nn::dense_grads(&c.pooled, &c.d, &g_logits)?;
    let g_pooled = gd.input.expect("dense input grad").reshape(c.pooled.shape())?;
    let g_a2 = nn::maxpool_grads(&c.argmax, &g_pooled, c.a2.shape())?;
    let g_z2 = nn::relu_grad(&c.z2, &g_a2)?;
    let gc2 = nn::conv2d_grads(&c.a1, &c.c2, &g_z2)?;
    let g_z1 = nn::relu_grad(&c.z1, &gc2.input.expect("requested"))?;
    let gc1 = nn::conv2d_grads(&c.x, &c.c1, &g_z1)?;

    let offset = |t: Tensor<f64>| -> Vec<f64> {
        t.into_data()
            .into_iter()
            .map(|v| v + faults.conv_weight_grad_offset)
            .collect()
    };
    let analytic = vec![
        gc1.input.expect("requested").into_data(),
        offset(gc1.weights),
        gc1.bias.into_data(),
        offset(gc2.weights),
        gc2.bias.into_data(),
        gd.weights.into_data(),
        gd.bias.into_data(),
    ];
    let numeric = numeric_gradient(&slots, FD_STEP, |s| Ok(forward(s)?.loss))?;
    Ok((analytic, numeric))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(max_relative_error(&[0.0], &[0.0]), 0.0);
        assert!((max_relative_error(&[1.0], &[1.1]) - 0.1 / 1.1).abs() < 1e-12);
        assert!((max_relative_error(&[0.0], &[1e-9]) - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn conv_spec_case_passes() {
        let layer = GradCheckLayer::Conv {
            in_maps: 2,
            height: 3,
            width: 5,
            out_maps: 2,
            kernel_h: 1,
            kernel_w: 3,
        };
        let err = finite_diff_check(&layer, 0).unwrap();
        assert!(err <= 1e-5, "conv rel error {err}");
    }

    #[test]
    fn dense_case_passes() {
        let layer = GradCheckLayer::Dense {
            in_features: 5,
            out_features: 3,
        };
        let err = finite_diff_check(&layer, 0).unwrap();
        assert!(err <= 1e-6, "dense rel error {err}");
    }

    #[test]
    fn micro_net_passes() {
        let layer = GradCheckLayer::MicroNet { channels: 2, steps: 16 };
        let err = finite_diff_check(&layer, 0).unwrap();
        assert!(err <= 1e-4, "micro net rel error {err}");
    }

    #[test]
    fn injected_fault_is_detected() {
        let layer = GradCheckLayer::Conv {
            in_maps: 2,
            height: 3,
            width: 5,
            out_maps: 2,
            kernel_h: 1,
            kernel_w: 3,
        };
        let faults = Faults {
            conv_weight_grad_offset: 1e-2,
        };
        assert!(finite_diff_check_with(&layer, 0, faults).unwrap() > 1e-4);
    }
}
