//! Forward pass with cached intermediates, backward pass and prediction.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::arch::{Activation, LayerSpec};
use crate::model::params::{LayerParams, ModelParams};
use crate::nn::{
    conv2d_backward, conv2d_valid, dense, dense_grads, dropout, dropout_grad, maxpool, maxpool_grads, relu,
    relu_grad, softmax, DropoutMask,
};
use crate::preprocess::Label;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug)]
enum Aux<T> {
    None,
    Argmax(Vec<usize>),
    Mask(DropoutMask<T>),
}

/// Result of [`forward`]: class probabilities plus what the backward pass needs.
#[derive(Clone, Debug)]
pub struct Forward<T = f32> {
    pub probs: Vec<T>,
    pub logits: Vec<T>,
    input: Tensor<T>,
    /// Post-activation output of every layer.
    outputs: Vec<Tensor<T>>,
    aux: Vec<Aux<T>>,
}

impl<T: Scalar> Forward<T> {
    pub fn outputs(&self) -> &[Tensor<T>] {
        &self.outputs
    }
}

fn activate<T: Scalar>(t: Tensor<T>, a: Activation) -> Tensor<T> {
    match a {
        Activation::Relu => relu(&t),
        Activation::Identity => t,
    }
}

fn params_mismatch(i: usize) -> Error {
    Error::InvalidArgument(format!("parameters of layer {} do not match the architecture", i + 1))
}

/// Runs the network on one window (`[C, T]` or `[1, C, T]`). Dropout draws from
/// `rng` in train mode only.
pub fn forward<T: Scalar, R: Rng + ?Sized>(
    params: &ModelParams<T>,
    window: &Tensor<T>,
    mode: Mode,
    rng: &mut R,
) -> Result<Forward<T>> {
    let [_, c, t] = params.arch.input_dims();
    if window.len() != c * t || !(window.shape() == [c, t] || window.shape() == [1, c, t]) {
        return Err(Error::shape(
            "forward",
            format!("network expects a {c}x{t} window, got {:?}", window.shape()),
        ));
    }
    let input = window.clone().reshape(&[1, c, t])?;
    let n = params.arch.layers.len();
    let mut outputs: Vec<Tensor<T>> = Vec::with_capacity(n);
    let mut aux = Vec::with_capacity(n);
    let mut logits = Vec::new();
    let mut probs = Vec::new();

    for (i, (layer, lp)) in params.arch.layers.iter().zip(&params.layers).enumerate() {
        let x = outputs.last().unwrap_or(&input);
        let (y, a) = match (*layer, lp) {
            (LayerSpec::Conv { activation, .. }, LayerParams::Conv(p)) => {
                (activate(conv2d_valid(x, p)?, activation), Aux::None)
            }
            (LayerSpec::Dense { activation, .. }, LayerParams::Dense(p)) => {
                (activate(dense(x, p)?, activation), Aux::None)
            }
            (LayerSpec::Pool(spec), LayerParams::None) => {
                let pooled = maxpool(x, spec)?;
                (pooled.output, Aux::Argmax(pooled.argmax))
            }
            (LayerSpec::Dropout { rate }, LayerParams::None) => {
                let (y, mask) = dropout(x, rate, rng, mode == Mode::Train)?;
                (y, Aux::Mask(mask))
            }
            (LayerSpec::Softmax, LayerParams::None) => {
                logits = x.data().to_vec();
                probs = softmax(&logits);
                (Tensor::new(vec![probs.len()], probs.clone())?, Aux::None)
            }
            _ => return Err(params_mismatch(i)),
        };
        outputs.push(y);
        aux.push(a);
    }
    if probs.is_empty() {
        return Err(Error::InvalidArgument("architecture has no softmax output".into()));
    }
    Ok(Forward {
        probs,
        logits,
        input,
        outputs,
        aux,
    })
}

/// Gradient of the cross-entropy loss for `label` with respect to every parameter,
/// laid out like the parameters themselves.
pub fn backward<T: Scalar>(params: &ModelParams<T>, fwd: &Forward<T>, label: Label) -> Result<ModelParams<T>> {
    let k = label.index();
    if k >= fwd.probs.len() {
        return Err(Error::InvalidArgument(format!("label {k} out of range")));
    }
    let mut grads = ModelParams::<T>::zeros(&params.arch)?;
    let n = params.arch.layers.len();
    // gradient flowing into the output of layer i
    let mut upstream: Option<Tensor<T>> = None;

    for i in (0..n).rev() {
        let x = if i == 0 { &fwd.input } else { &fwd.outputs[i - 1] };
        let y = &fwd.outputs[i];
        let layer = params.arch.layers[i];
        if let LayerSpec::Softmax = layer {
            let g = fwd
                .probs
                .iter()
                .enumerate()
                .map(|(j, &p)| if j == k { p - T::one() } else { p })
                .collect();
            upstream = Some(Tensor::new(vec![fwd.probs.len()], g)?);
            continue;
        }
        let up = upstream
            .take()
            .ok_or_else(|| Error::InvalidArgument("architecture must end with softmax".into()))?;
        let down = match (layer, &params.layers[i], &fwd.aux[i]) {
            (LayerSpec::Conv { activation, .. }, LayerParams::Conv(p), _) => {
                let up = match activation {
                    Activation::Relu => relu_grad(y, &up)?,
                    Activation::Identity => up,
                };
                let g = conv2d_backward(x, p, &up, i > 0)?;
                if let LayerParams::Conv(dst) = &mut grads.layers[i] {
                    dst.weights = g.weights;
                    dst.bias = g.bias;
                }
                g.input
            }
            (LayerSpec::Dense { activation, .. }, LayerParams::Dense(p), _) => {
                let up = match activation {
                    Activation::Relu => relu_grad(y, &up)?,
                    Activation::Identity => up,
                };
                let g = dense_grads(x, p, &up)?;
                if let LayerParams::Dense(dst) = &mut grads.layers[i] {
                    dst.weights = g.weights;
                    dst.bias = g.bias;
                }
                g.input
            }
            (LayerSpec::Pool(_), _, Aux::Argmax(argmax)) => Some(maxpool_grads(argmax, &up, x.shape())?),
            (LayerSpec::Dropout { .. }, _, Aux::Mask(mask)) => Some(dropout_grad(mask, &up)?),
            _ => return Err(params_mismatch(i)),
        };
        upstream = down;
    }
    Ok(grads)
}

/// Cross-entropy loss of a finished forward pass.
pub fn loss<T: Scalar>(fwd: &Forward<T>, label: Label) -> T {
    let m = fwd.logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = fwd.logits.iter().map(|&z| (z - m).exp()).sum::<T>().ln() + m;
    lse - fwd.logits[label.index()]
}

/// Index of the largest probability; ties go to the lower index (FS).
pub fn argmax_label<T: Scalar>(probs: &[T]) -> Label {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    Label::from_index(best).unwrap_or(Label::Mw)
}

pub fn predict<T: Scalar>(params: &ModelParams<T>, window: &Tensor<T>) -> Result<(Label, Vec<T>)> {
    // eval mode never touches the rng
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let fwd = forward(params, window, Mode::Eval, &mut rng)?;
    Ok((argmax_label(&fwd.probs), fwd.probs))
}
