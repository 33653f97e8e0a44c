//! Recording and event ingestion.

use std::ops::Range;

use crate::tensor::Tensor;

pub mod bdf;
pub mod events;
pub mod raw;

pub use bdf::{decode_int24, encode_int24, read_bdf, write_bdf, BdfChannel};
pub use events::{read_events_csv, write_events_csv, Event, EventKind};
pub use raw::{read_raw_matrix, write_raw_matrix};

/// Channel count of the Biosemi montage used throughout.
pub const BIOSEMI_CHANNELS: usize = 64;
/// Sampling rate of the Biosemi recordings, in Hz.
pub const BIOSEMI_SAMPLING_RATE: f64 = 1024.0;

/// Continuous multichannel signal, `[n_channels, n_samples]` in microvolts.
#[derive(Clone, Debug, PartialEq)]
pub struct EegRecording {
    pub data: Tensor<f32>,
    pub sampling_rate: f64,
    pub channel_labels: Vec<String>,
    pub subject_id: u8,
    pub session_id: u16,
    /// Sample span whose values can be trusted. Filtering shrinks it by the
    /// kernel reach at each end; windows must lie inside it.
    pub reliable: Range<usize>,
}

impl EegRecording {
    pub fn new(
        data: Tensor<f32>,
        sampling_rate: f64,
        channel_labels: Vec<String>,
        subject_id: u8,
        session_id: u16,
    ) -> crate::Result<Self> {
        use crate::Error;
        data.expect_rank("recording", 2)?;
        if !(sampling_rate > 0.0 && sampling_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sampling rate must be positive, got {sampling_rate}"
            )));
        }
        if channel_labels.len() != data.shape()[0] {
            return Err(Error::shape(
                "recording",
                format!("{} labels for {} channels", channel_labels.len(), data.shape()[0]),
            ));
        }
        let n = data.shape()[1];
        Ok(Self {
            data,
            sampling_rate,
            channel_labels,
            subject_id,
            session_id,
            reliable: 0..n,
        })
    }

    pub fn n_channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn n_samples(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.n_samples();
        &self.data.data()[c * n..(c + 1) * n]
    }

    /// Samples per second rounded to an integer sample count.
    pub fn samples_for(&self, seconds: f64) -> usize {
        (seconds * self.sampling_rate).round() as usize
    }
}
