//! Parameter storage, initialization and the `MWNW` weights file.
//!
//! ```text
//! "MWNW" | version u32 | fingerprint [u8; 32]
//! then per parameterized layer: layer index u16 | tensor count u8
//!      and per tensor: rank u8 | dims u32 x rank | f32 payload
//! ```

use std::path::Path;

use rand::Rng;

use crate::binio::{put_f32s, read_file, write_file, ByteReader};
use crate::error::{Error, Result};
use crate::model::arch::{hex, shape_trace, ArchSpec, LayerShape, LayerSpec};
use crate::nn::{ConvLayerParams, DenseLayerParams};
use crate::rng;
use crate::tensor::{Scalar, Tensor};

const FORMAT: &str = "MWNW";
pub const WEIGHTS_MAGIC: &[u8; 4] = b"MWNW";
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum LayerParams<T = f32> {
    Conv(ConvLayerParams<T>),
    Dense(DenseLayerParams<T>),
    None,
}

impl<T: Scalar> LayerParams<T> {
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        match self {
            LayerParams::Conv(p) => vec![&p.weights, &p.bias],
            LayerParams::Dense(p) => vec![&p.weights, &p.bias],
            LayerParams::None => vec![],
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            LayerParams::Conv(p) => vec![&mut p.weights, &mut p.bias],
            LayerParams::Dense(p) => vec![&mut p.weights, &mut p.bias],
            LayerParams::None => vec![],
        }
    }

    fn cast<U: Scalar>(&self) -> LayerParams<U> {
        match self {
            LayerParams::Conv(p) => LayerParams::Conv(ConvLayerParams {
                weights: p.weights.cast(),
                bias: p.bias.cast(),
            }),
            LayerParams::Dense(p) => LayerParams::Dense(DenseLayerParams {
                weights: p.weights.cast(),
                bias: p.bias.cast(),
            }),
            LayerParams::None => LayerParams::None,
        }
    }
}

/// Network parameters, one entry per layer of `arch` (parameter-free layers hold
/// [`LayerParams::None`]).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T = f32> {
    pub arch: ArchSpec,
    pub layers: Vec<LayerParams<T>>,
}

/// Weight shapes for every layer of `arch`.
fn param_shapes(arch: &ArchSpec) -> Result<Vec<Option<(Vec<usize>, usize)>>> {
    let trace = shape_trace(arch)?;
    let mut prev = LayerShape::Maps {
        height: arch.input.n_channels,
        width: arch.input.n_timesteps,
        maps: 1,
    };
    let mut out = Vec::with_capacity(trace.len());
    for entry in trace {
        out.push(match (entry.layer, prev) {
            (
                LayerSpec::Conv {
                    out_maps,
                    kernel_h,
                    kernel_w,
                    ..
                },
                LayerShape::Maps { maps, .. },
            ) => Some((vec![out_maps, maps, kernel_h, kernel_w], out_maps)),
            (LayerSpec::Dense { out_features, .. }, s) => Some((vec![out_features, s.len()], out_features)),
            _ => None,
        });
        prev = entry.shape;
    }
    Ok(out)
}

/// Glorot-uniform bound `sqrt(6 / (fan_in + fan_out))` for a weight tensor.
pub fn glorot_bound(weight_shape: &[usize]) -> f64 {
    let receptive: usize = weight_shape[2..].iter().product();
    let fan_in = weight_shape[1] * receptive;
    let fan_out = weight_shape[0] * receptive;
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Glorot-uniform weights, zero biases, fully determined by `seed`.
pub fn init_params(arch: &ArchSpec, seed: u64) -> Result<ModelParams> {
    let mut rng = rng::stream(seed, &[0x1417]);
    let layers = param_shapes(arch)?
        .into_iter()
        .zip(&arch.layers)
        .map(|(shape, layer)| match shape {
            None => LayerParams::None,
            Some((w_shape, n_bias)) => {
                let bound = glorot_bound(&w_shape);
                let weights = Tensor::from_fn(&w_shape, |_| rng.gen_range(-bound..=bound) as f32);
                let bias = Tensor::zeros(&[n_bias]);
                match layer {
                    LayerSpec::Conv { .. } => LayerParams::Conv(ConvLayerParams { weights, bias }),
                    _ => LayerParams::Dense(DenseLayerParams { weights, bias }),
                }
            }
        })
        .collect();
    Ok(ModelParams {
        arch: arch.clone(),
        layers,
    })
}

impl<T: Scalar> ModelParams<T> {
    /// All-zero parameters (uniform output probabilities).
    pub fn zeros(arch: &ArchSpec) -> Result<Self> {
        let layers = param_shapes(arch)?
            .into_iter()
            .zip(&arch.layers)
            .map(|(shape, layer)| match shape {
                None => LayerParams::None,
                Some((w, b)) => {
                    let weights = Tensor::zeros(&w);
                    let bias = Tensor::zeros(&[b]);
                    match layer {
                        LayerSpec::Conv { .. } => LayerParams::Conv(ConvLayerParams { weights, bias }),
                        _ => LayerParams::Dense(DenseLayerParams { weights, bias }),
                    }
                }
            })
            .collect();
        Ok(Self {
            arch: arch.clone(),
            layers,
        })
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.layers.iter().flat_map(|l| l.tensors())
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut())
    }

    pub fn n_params(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            arch: self.arch.clone(),
            layers: self.layers.iter().map(LayerParams::cast).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().all(Tensor::all_finite)
    }
}

pub fn encode_params(params: &ModelParams<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(40 + params.n_params() * 4);
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    out.extend_from_slice(&params.arch.fingerprint());
    for (i, layer) in params.layers.iter().enumerate() {
        let tensors = layer.tensors();
        if tensors.is_empty() {
            continue;
        }
        out.extend_from_slice(&(i as u16).to_le_bytes());
        out.push(tensors.len() as u8);
        for t in tensors {
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            put_f32s(&mut out, t.data());
        }
    }
    out
}

/// Decodes weights saved for `arch`. A fingerprint mismatch is reported as
/// [`Error::Fingerprint`] before any tensor is read.
pub fn decode_params(bytes: &[u8], arch: &ArchSpec) -> Result<ModelParams<f32>> {
    let mut r = ByteReader::new(FORMAT, bytes);
    r.expect_magic(WEIGHTS_MAGIC)?;
    let version = r.u32("version")?;
    if version != WEIGHTS_VERSION {
        return Err(Error::parse(FORMAT, "version", format!("unsupported version {version}")));
    }
    let found = r.take(32, "fingerprint")?;
    let expected = arch.fingerprint();
    if found != expected {
        return Err(Error::Fingerprint {
            expected: hex(&expected[..8]),
            found: hex(&found[..8]),
        });
    }
    let mut params = ModelParams::<f32>::zeros(arch)?;
    let mut seen = vec![false; params.layers.len()];
    while !r.is_at_end() {
        let idx = r.u16("layer index")? as usize;
        let count = r.u8("tensor count")? as usize;
        let slot = params
            .layers
            .get_mut(idx)
            .ok_or_else(|| Error::parse(FORMAT, "layer index", format!("layer {idx} does not exist")))?;
        if seen[idx] {
            return Err(Error::parse(FORMAT, "layer index", format!("layer {idx} appears twice")));
        }
        seen[idx] = true;
        let mut targets = slot.tensors_mut();
        if count != targets.len() {
            return Err(Error::parse(
                FORMAT,
                "tensor count",
                format!("layer {idx} stores {count} tensors, expected {}", targets.len()),
            ));
        }
        for t in targets.iter_mut() {
            let rank = r.u8("rank")? as usize;
            let dims = (0..rank)
                .map(|_| r.u32("dims").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            if dims != t.shape() {
                return Err(Error::parse(
                    FORMAT,
                    "dims",
                    format!("layer {idx}: stored {dims:?}, expected {:?}", t.shape()),
                ));
            }
            let data = r.f32_vec(t.len(), "payload")?;
            t.data_mut().copy_from_slice(&data);
        }
    }
    if let Some(missing) = params
        .layers
        .iter()
        .enumerate()
        .find(|(i, l)| !seen[*i] && !matches!(l, LayerParams::None))
    {
        return Err(Error::parse(FORMAT, "layer index", format!("layer {} missing (truncated file?)", missing.0)));
    }
    Ok(params)
}

pub fn save_params(params: &ModelParams<f32>, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_params(params))
}

pub fn load_params(path: impl AsRef<Path>, arch: &ArchSpec) -> Result<ModelParams<f32>> {
    decode_params(&read_file(path.as_ref())?, arch)
}
