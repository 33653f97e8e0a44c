//! Declarative layer list and symbolic shape propagation.

use std::fmt;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::PoolSpec;

pub const DEFAULT_MAPS: usize = 20;
pub const DEFAULT_DROPOUT: f64 = 0.2;

/// Temporal kernel widths of the four conv layers after the spatial one, in order
/// (the first conv layer uses `TEMPORAL_KERNEL_1`).
pub const TEMPORAL_KERNEL_1: usize = 11;
pub const LATER_KERNELS: [usize; 3] = [10, 10, 11];
pub const DENSE_SIZES: [usize; 3] = [100, 50, 2];

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LayerSpec {
    Conv {
        out_maps: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        activation: Activation,
    },
    Pool(PoolSpec),
    Dropout {
        rate: f64,
    },
    Dense {
        out_features: usize,
        activation: Activation,
    },
    Softmax,
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "Convolution",
            LayerSpec::Pool(_) => "Max-pooling",
            LayerSpec::Dropout { .. } => "Dropout",
            LayerSpec::Dense { .. } => "Fully-connected",
            LayerSpec::Softmax => "Softmax",
        }
    }

    /// Dropout and softmax ride along with their neighbours and are not counted as
    /// layers of their own.
    pub fn is_numbered(&self) -> bool {
        !matches!(self, LayerSpec::Dropout { .. } | LayerSpec::Softmax)
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. } | LayerSpec::Dense { .. })
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv { out_maps, kernel_h, kernel_w, .. } => {
                write!(f, "conv {kernel_h}x{kernel_w} -> {out_maps} maps")
            }
            LayerSpec::Pool(p) => write!(f, "max-pool 1x{} stride {}", p.kernel_w, p.stride_w),
            LayerSpec::Dropout { rate } => write!(f, "dropout {rate}"),
            LayerSpec::Dense { out_features, .. } => write!(f, "dense -> {out_features}"),
            LayerSpec::Softmax => write!(f, "softmax"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InputSpec {
    pub n_channels: usize,
    pub n_timesteps: usize,
    /// Feature maps per conv layer.
    pub n_maps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArchSpec {
    pub input: InputSpec,
    pub layers: Vec<LayerSpec>,
}

/// Pooling `(kernel, stride)` of the four pooling layers for each supported window length.
pub fn pooling_for(window_seconds: u32) -> Option<[(usize, usize); 4]> {
    match window_seconds {
        8 => Some([(2, 2), (4, 4), (4, 4), (3, 3)]),
        5 => Some([(2, 2), (2, 2), (3, 3), (4, 4)]),
        2 => Some([(2, 2), (2, 2), (3, 3), (2, 2)]),
        _ => None,
    }
}

/// Architecture for one of the supported window lengths.
pub fn build_arch(window_seconds: u32, fs: f64, n_channels: usize, n_maps: usize) -> Result<ArchSpec> {
    let pools = pooling_for(window_seconds).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "no pooling schedule for {window_seconds} s windows; supply an explicit override"
        ))
    })?;
    let n_timesteps = (f64::from(window_seconds) * fs).round() as usize;
    build_arch_with_pooling(n_channels, n_timesteps, n_maps, pools, DEFAULT_DROPOUT)
}

/// Same layer pattern with an explicit pooling schedule and input length.
pub fn build_arch_with_pooling(
    n_channels: usize,
    n_timesteps: usize,
    n_maps: usize,
    pools: [(usize, usize); 4],
    dropout: f64,
) -> Result<ArchSpec> {
    if n_channels == 0 || n_timesteps == 0 || n_maps == 0 {
        return Err(Error::InvalidArgument("channels, timesteps and maps must be positive".into()));
    }
    if !(0.0..1.0).contains(&dropout) {
        return Err(Error::InvalidArgument(format!("dropout rate must lie in [0, 1), got {dropout}")));
    }
    let conv = |kernel_h, kernel_w| LayerSpec::Conv {
        out_maps: n_maps,
        kernel_h,
        kernel_w,
        stride: 1,
        activation: Activation::Relu,
    };
    let pool = |(k, s): (usize, usize)| LayerSpec::Pool(PoolSpec::new(k, s));
    let mut layers = vec![conv(1, TEMPORAL_KERNEL_1), conv(n_channels, 1), pool(pools[0])];
    for (k, p) in LATER_KERNELS.iter().zip(&pools[1..]) {
        layers.push(conv(1, *k));
        layers.push(pool(*p));
    }
    layers.push(LayerSpec::Dropout { rate: dropout });
    for (i, &n) in DENSE_SIZES.iter().enumerate() {
        layers.push(LayerSpec::Dense {
            out_features: n,
            activation: if i + 1 < DENSE_SIZES.len() {
                Activation::Relu
            } else {
                Activation::Identity
            },
        });
    }
    layers.push(LayerSpec::Softmax);
    let arch = ArchSpec {
        input: InputSpec {
            n_channels,
            n_timesteps,
            n_maps,
        },
        layers,
    };
    shape_trace(&arch)?;
    Ok(arch)
}

/// Output of one layer. Feature maps print as `height × width × maps`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerShape {
    Maps { height: usize, width: usize, maps: usize },
    Flat(usize),
}

impl LayerShape {
    pub fn len(&self) -> usize {
        match *self {
            LayerShape::Maps { height, width, maps } => height * width * maps,
            LayerShape::Flat(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Tensor shape as laid out in memory (`[maps, height, width]` or `[n]`).
    pub fn dims(&self) -> Vec<usize> {
        match *self {
            LayerShape::Maps { height, width, maps } => vec![maps, height, width],
            LayerShape::Flat(n) => vec![n],
        }
    }
}

impl fmt::Display for LayerShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerShape::Maps { height, width, maps } => write!(f, "{height} × {width} × {maps}"),
            LayerShape::Flat(n) => write!(f, "{n}"),
        }
    }
}

/// Expected output sizes for the 8 s, 64-channel, 1024 Hz network, numbered rows 1..=12.
pub const REFERENCE_SHAPES_8S: [LayerShape; 12] = {
    const fn m(height: usize, width: usize) -> LayerShape {
        LayerShape::Maps { height, width, maps: 20 }
    }
    [
        m(64, 8182),
        m(1, 8182),
        m(1, 4091),
        m(1, 4082),
        m(1, 1021),
        m(1, 1012),
        m(1, 253),
        m(1, 243),
        m(1, 81),
        LayerShape::Flat(100),
        LayerShape::Flat(50),
        LayerShape::Flat(2),
    ]
};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceEntry {
    /// 1-based row among numbered layers; `None` for dropout and softmax.
    pub row: Option<usize>,
    pub layer: LayerSpec,
    pub shape: LayerShape,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PoolRounding {
    /// Use each layer's own setting (ceil for every architecture built here).
    #[default]
    AsDeclared,
    /// Force floor rounding everywhere, for diagnosing shape tables.
    Floor,
}

pub fn shape_trace(arch: &ArchSpec) -> Result<Vec<TraceEntry>> {
    shape_trace_with(arch, PoolRounding::AsDeclared)
}

pub fn shape_trace_with(arch: &ArchSpec, rounding: PoolRounding) -> Result<Vec<TraceEntry>> {
    let mut shape = LayerShape::Maps {
        height: arch.input.n_channels,
        width: arch.input.n_timesteps,
        maps: 1,
    };
    let mut out = Vec::with_capacity(arch.layers.len());
    let mut row = 0;
    for (i, layer) in arch.layers.iter().enumerate() {
        let fail = |why: String| Error::shape("shape_trace", format!("layer {} ({layer}): {why}", i + 1));
        shape = match (*layer, shape) {
            (
                LayerSpec::Conv {
                    out_maps,
                    kernel_h,
                    kernel_w,
                    stride,
                    ..
                },
                LayerShape::Maps { height, width, .. },
            ) => {
                if stride != 1 {
                    return Err(fail(format!("stride {stride} unsupported")));
                }
                if kernel_h > height || kernel_w > width || kernel_h == 0 || kernel_w == 0 || out_maps == 0 {
                    return Err(fail(format!("kernel {kernel_h}x{kernel_w} leaves no output from {height}x{width}")));
                }
                LayerShape::Maps {
                    height: height - kernel_h + 1,
                    width: width - kernel_w + 1,
                    maps: out_maps,
                }
            }
            (LayerSpec::Pool(p), LayerShape::Maps { height, width, maps }) => {
                let p = match rounding {
                    PoolRounding::AsDeclared => p,
                    PoolRounding::Floor => PoolSpec { ceil_mode: false, ..p },
                };
                let w = p
                    .output_width(width)
                    .ok_or_else(|| fail(format!("kernel {} does not fit width {width}", p.kernel_w)))?;
                LayerShape::Maps { height, width: w, maps }
            }
            (LayerSpec::Dropout { .. }, s) => s,
            (LayerSpec::Dense { out_features, .. }, _) => {
                if out_features == 0 {
                    return Err(fail("zero output features".into()));
                }
                LayerShape::Flat(out_features)
            }
            (LayerSpec::Softmax, LayerShape::Flat(n)) => LayerShape::Flat(n),
            (l, s) => return Err(fail(format!("{} cannot follow output {s}", l.kind()))),
        };
        let entry_row = layer.is_numbered().then(|| {
            row += 1;
            row
        });
        out.push(TraceEntry {
            row: entry_row,
            layer: *layer,
            shape,
        });
    }
    Ok(out)
}

/// Shapes of the numbered layers only.
pub fn numbered_shapes(trace: &[TraceEntry]) -> Vec<LayerShape> {
    trace.iter().filter(|e| e.row.is_some()).map(|e| e.shape).collect()
}

impl ArchSpec {
    /// Text form hashed into the fingerprint. Floats are written with their exact
    /// bit patterns.
    pub fn canonical(&self) -> String {
        let mut s = format!(
            "mwcnn-arch/1;input={},{},{}",
            self.input.n_channels, self.input.n_timesteps, self.input.n_maps
        );
        for l in &self.layers {
            s.push(';');
            s.push_str(&match *l {
                LayerSpec::Conv {
                    out_maps,
                    kernel_h,
                    kernel_w,
                    stride,
                    activation,
                } => format!("conv={out_maps},{kernel_h},{kernel_w},{stride},{activation:?}"),
                LayerSpec::Pool(p) => format!("pool={},{},{}", p.kernel_w, p.stride_w, p.ceil_mode),
                LayerSpec::Dropout { rate } => format!("dropout={:016x}", rate.to_bits()),
                LayerSpec::Dense {
                    out_features,
                    activation,
                } => format!("dense={out_features},{activation:?}"),
                LayerSpec::Softmax => "softmax".into(),
            });
        }
        s
    }

    pub fn fingerprint(&self) -> [u8; 32] {
        Sha256::digest(self.canonical().as_bytes()).into()
    }

    /// Copy with every dropout layer set to `rate`.
    pub fn with_dropout(&self, rate: f64) -> Result<ArchSpec> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("dropout rate must lie in [0, 1), got {rate}")));
        }
        let mut out = self.clone();
        for l in &mut out.layers {
            if let LayerSpec::Dropout { rate: r } = l {
                *r = rate;
            }
        }
        Ok(out)
    }

    pub fn input_dims(&self) -> [usize; 3] {
        [1, self.input.n_channels, self.input.n_timesteps]
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eight_second_trace_matches_reference() {
        let arch = build_arch(8, 1024.0, 64, 20).unwrap();
        let shapes = numbered_shapes(&shape_trace(&arch).unwrap());
        assert_eq!(shapes, REFERENCE_SHAPES_8S.to_vec());
        assert_eq!(shapes[0].to_string(), "64 × 8182 × 20");
    }

    #[test]
    fn floor_rounding_breaks_row_five() {
        let arch = build_arch(8, 1024.0, 64, 20).unwrap();
        let shapes = numbered_shapes(&shape_trace_with(&arch, PoolRounding::Floor).unwrap());
        assert_eq!(shapes[4], LayerShape::Maps { height: 1, width: 1020, maps: 20 });
    }

    #[test]
    fn shorter_windows_flatten_sizes() {
        let flat = |secs| {
            let arch = build_arch(secs, 1024.0, 64, 20).unwrap();
            numbered_shapes(&shape_trace(&arch).unwrap())[8].len()
        };
        assert_eq!(flat(5), 103 * 20);
        assert_eq!(flat(2), 78 * 20);
        assert!(build_arch(3, 1024.0, 64, 20).is_err());
    }

    #[test]
    fn toy_arch_widths_positive() {
        // the fixed kernels consume 38 steps, so a 32-step toy needs its own kernels
        let conv = |kernel_h, kernel_w| LayerSpec::Conv {
            out_maps: 4,
            kernel_h,
            kernel_w,
            stride: 1,
            activation: Activation::Relu,
        };
        let arch = ArchSpec {
            input: InputSpec {
                n_channels: 1,
                n_timesteps: 32,
                n_maps: 4,
            },
            layers: vec![
                conv(1, 3),
                conv(1, 1),
                LayerSpec::Pool(PoolSpec::new(2, 2)),
                conv(1, 3),
                LayerSpec::Pool(PoolSpec::new(2, 2)),
                LayerSpec::Dense {
                    out_features: 2,
                    activation: Activation::Identity,
                },
                LayerSpec::Softmax,
            ],
        };
        for e in shape_trace(&arch).unwrap() {
            assert!(!e.shape.is_empty());
        }
    }

    #[test]
    fn too_short_input_names_layer() {
        let err = build_arch_with_pooling(2, 30, 4, [(2, 2); 4], 0.2).unwrap_err();
        assert!(err.to_string().contains("layer"), "{err}");
    }

    #[test]
    fn fingerprint_tracks_structure() {
        let a = build_arch(8, 1024.0, 64, 20).unwrap();
        let b = build_arch(5, 1024.0, 64, 20).unwrap();
        assert_eq!(a.fingerprint(), build_arch(8, 1024.0, 64, 20).unwrap().fingerprint());
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
