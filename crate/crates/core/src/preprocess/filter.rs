//! Linear-phase FIR bandpass design and zero-phase application.

use std::f64::consts::PI;
use std::ops::Range;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::eeg_io::EegRecording;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_LOW_HZ: f64 = 0.5;
pub const DEFAULT_HIGH_HZ: f64 = 50.0;

#[derive(Clone, Debug, PartialEq)]
pub struct FilterKernel {
    pub taps: Vec<f64>,
    pub low_hz: f64,
    pub high_hz: f64,
    pub sampling_rate: f64,
}

/// 4 s of taps plus one, i.e. 4097 at 1024 Hz.
pub fn default_taps(sampling_rate: f64) -> usize {
    4 * sampling_rate.round() as usize + 1
}

/// Hamming-windowed sinc lowpass with unit DC gain. Only the left half including
/// the centre is returned; the kernel is its mirror image.
fn lowpass_half(cutoff: f64, fs: f64, n_taps: usize) -> Vec<f64> {
    let m = (n_taps - 1) as f64;
    let c = (n_taps - 1) / 2;
    let fc = cutoff / fs;
    let mut half: Vec<f64> = (0..=c)
        .map(|n| {
            let k = n as f64 - c as f64;
            let sinc = if n == c { 2.0 * fc } else { (2.0 * PI * fc * k).sin() / (PI * k) };
            let window = 0.54 - 0.46 * (2.0 * PI * n as f64 / m).cos();
            sinc * window
        })
        .collect();
    let dc = half[c] + 2.0 * half[..c].iter().sum::<f64>();
    half.iter_mut().for_each(|v| *v /= dc);
    half
}

/// Difference of two unit-DC lowpass kernels (`high` minus `low`). The centre tap is
/// then set so the symmetric pair-sum is exactly zero, removing the rounding residue.
pub fn design_bandpass(fs: f64, low: f64, high: f64, n_taps: usize) -> Result<FilterKernel> {
    if !(low > 0.0 && low < high && high < fs / 2.0) {
        return Err(Error::InvalidArgument(format!(
            "band must satisfy 0 < low < high < fs/2, got {low}..{high} Hz at {fs} Hz"
        )));
    }
    if n_taps.is_multiple_of(2) || n_taps < 3 {
        return Err(Error::InvalidArgument(format!("tap count must be odd and >= 3, got {n_taps}")));
    }
    let c = (n_taps - 1) / 2;
    let hi = lowpass_half(high, fs, n_taps);
    let lo = lowpass_half(low, fs, n_taps);
    let mut half: Vec<f64> = hi.iter().zip(&lo).map(|(a, b)| a - b).collect();
    half[c] = -(2.0 * half[..c].iter().sum::<f64>());

    let mut taps = half.clone();
    taps.extend(half[..c].iter().rev());
    Ok(FilterKernel {
        taps,
        low_hz: low,
        high_hz: high,
        sampling_rate: fs,
    })
}

impl FilterKernel {
    pub fn n_taps(&self) -> usize {
        self.taps.len()
    }

    fn center(&self) -> usize {
        (self.taps.len() - 1) / 2
    }

    /// Sum of taps taken as centre plus twice the left half.
    pub fn dc_gain(&self) -> f64 {
        let c = self.center();
        self.taps[c] + 2.0 * self.taps[..c].iter().sum::<f64>()
    }

    /// Magnitude of the single-pass frequency response at `hz`.
    pub fn gain_at(&self, hz: f64) -> f64 {
        let c = self.center();
        let w = 2.0 * PI * hz / self.sampling_rate;
        let amp = self.taps[c]
            + 2.0
                * (1..=c)
                    .map(|k| self.taps[c - k] * (w * k as f64).cos())
                    .sum::<f64>();
        amp.abs()
    }

    /// Samples at each end of a zero-phase filtered signal that depend on the zero
    /// extension beyond the recording. The forward and backward passes together reach
    /// `n_taps - 1` samples to either side.
    pub fn edge_len(&self) -> usize {
        self.n_taps() - 1
    }
}

/// Span of a filtered `n_samples` signal unaffected by edge extension.
pub fn reliable_span(n_samples: usize, kernel_len: usize) -> Range<usize> {
    let edge = kernel_len - 1;
    edge..n_samples.saturating_sub(edge).max(edge)
}

/// Zero-phase filtering of one signal: the forward pass followed by the time-reversed
/// pass, evaluated in the frequency domain as multiplication by `|H|^2`.
pub struct ZeroPhaseFilter {
    len: usize,
    fft_len: usize,
    power: Vec<f64>,
    planner: FftPlanner<f64>,
}

impl ZeroPhaseFilter {
    pub fn new(kernel: &FilterKernel, len: usize) -> Self {
        let fft_len = (len + kernel.n_taps() - 1).next_power_of_two();
        let mut planner = FftPlanner::new();
        let mut spec: Vec<Complex<f64>> = kernel.taps.iter().map(|&t| Complex::new(t, 0.0)).collect();
        spec.resize(fft_len, Complex::new(0.0, 0.0));
        planner.plan_fft_forward(fft_len).process(&mut spec);
        let scale = 1.0 / fft_len as f64;
        let power = spec.iter().map(|z| z.norm_sqr() * scale).collect();
        Self {
            len,
            fft_len,
            power,
            planner,
        }
    }

    pub fn apply(&mut self, signal: &[f32]) -> Vec<f32> {
        assert_eq!(signal.len(), self.len);
        let mut buf: Vec<Complex<f64>> = signal.iter().map(|&v| Complex::new(f64::from(v), 0.0)).collect();
        buf.resize(self.fft_len, Complex::new(0.0, 0.0));
        self.planner.plan_fft_forward(self.fft_len).process(&mut buf);
        buf.iter_mut().zip(&self.power).for_each(|(z, &p)| *z *= p);
        self.planner.plan_fft_inverse(self.fft_len).process(&mut buf);
        buf[..self.len].iter().map(|z| z.re as f32).collect()
    }
}

/// Filters every channel with zero phase. The reliable span shrinks by
/// [`FilterKernel::edge_len`] at each end.
pub fn filter_zero_phase(rec: &EegRecording, kernel: &FilterKernel) -> Result<EegRecording> {
    let n = rec.n_samples();
    if n <= 3 * kernel.n_taps() {
        return Err(Error::InvalidArgument(format!(
            "recording of {n} samples is too short for a {}-tap filter (needs more than {})",
            kernel.n_taps(),
            3 * kernel.n_taps()
        )));
    }
    if (kernel.sampling_rate - rec.sampling_rate).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "kernel designed for {} Hz applied to a {} Hz recording",
            kernel.sampling_rate, rec.sampling_rate
        )));
    }
    let mut zp = ZeroPhaseFilter::new(kernel, n);
    let mut data = Vec::with_capacity(rec.data.len());
    for c in 0..rec.n_channels() {
        data.extend(zp.apply(rec.channel(c)));
    }
    let span = reliable_span(n, kernel.n_taps());
    Ok(EegRecording {
        data: Tensor::new(rec.data.shape().to_vec(), data)?,
        reliable: span.start.max(rec.reliable.start)..span.end.min(rec.reliable.end),
        ..rec.clone()
    })
}
