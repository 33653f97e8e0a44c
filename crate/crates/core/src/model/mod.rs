//! Network architecture, parameters and inference.

pub mod arch;
pub mod network;
pub mod params;

pub use arch::{
    build_arch, build_arch_with_pooling, numbered_shapes, pooling_for, shape_trace, shape_trace_with, Activation,
    ArchSpec, InputSpec, LayerShape, LayerSpec, PoolRounding, TraceEntry, REFERENCE_SHAPES_8S,
};
pub use network::{argmax_label, backward, forward, loss, predict, Forward, Mode};
pub use params::{
    decode_params, encode_params, glorot_bound, init_params, load_params, save_params, LayerParams, ModelParams,
};
