//! Generated data for tests, demos and smoke runs.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::eeg_io::{EegRecording, Event, EventKind};
use crate::error::Result;
use crate::preprocess::{zscore, Dataset, Label, WindowSample};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BurstConfig {
    pub n_samples: usize,
    pub n_channels: usize,
    pub n_timesteps: usize,
    pub sampling_rate: f64,
    /// Oscillation frequency of the burst.
    pub burst_hz: f64,
    /// Burst length in samples (Hann envelope).
    pub burst_len: usize,
    /// Peak burst amplitude relative to unit-variance noise.
    pub amplitude: f64,
}

impl Default for BurstConfig {
    fn default() -> Self {
        Self {
            n_samples: 200,
            n_channels: 8,
            n_timesteps: 256,
            sampling_rate: 128.0,
            burst_hz: 12.0,
            burst_len: 96,
            amplitude: 3.0,
        }
    }
}

/// Balanced two-class set: class FS is white noise, class MW is noise plus an
/// oscillatory burst at a random position with random per-channel gains. Every
/// window is z-scored per channel. Labels alternate FS, MW, ...; samples are
/// assigned to subjects 1 and 2 by halves.
pub fn burst_dataset(cfg: &BurstConfig, seed: u64) -> Result<Dataset> {
    let mut r = rng::stream(seed, &[0xB0057]);
    let (c, t) = (cfg.n_channels, cfg.n_timesteps);
    let burst_len = cfg.burst_len.min(t);
    let samples = (0..cfg.n_samples)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Fs } else { Label::Mw };
            let mut data: Vec<f32> = (0..c * t).map(|_| r.sample::<f64, _>(StandardNormal) as f32).collect();
            if label == Label::Mw {
                let start = r.gen_range(0..=t - burst_len);
                let phase = r.gen_range(0.0..std::f64::consts::TAU);
                for ch in 0..c {
                    let gain = cfg.amplitude * r.gen_range(0.5..1.0);
                    for k in 0..burst_len {
                        let env = 0.5 - 0.5 * (std::f64::consts::TAU * k as f64 / burst_len as f64).cos();
                        let s = (std::f64::consts::TAU * cfg.burst_hz * k as f64 / cfg.sampling_rate + phase).sin();
                        data[ch * t + start + k] += (gain * env * s) as f32;
                    }
                }
            }
            Ok(WindowSample {
                data: zscore(&Tensor::new(vec![c, t], data)?),
                label,
                subject_id: if i < cfg.n_samples / 2 { 1 } else { 2 },
                session_id: 1,
                origin_offset: (i * t) as u64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples, cfg.sampling_rate, c, t)
}

/// A continuous noise recording with a counting start, the given button presses
/// (seconds) and a short questionnaire after each press.
pub fn session(
    n_channels: usize,
    sampling_rate: f64,
    seconds: f64,
    presses: &[f64],
    subject_id: u8,
    session_id: u16,
    seed: u64,
) -> Result<(EegRecording, Vec<Event>)> {
    let n = (seconds * sampling_rate).round() as usize;
    let mut r = rng::stream(seed, &[u64::from(subject_id), u64::from(session_id)]);
    let data = Tensor::from_fn(&[n_channels, n], |_| 20.0 * r.sample::<f64, _>(StandardNormal) as f32);
    let labels = (0..n_channels).map(|i| format!("EEG{}", i + 1)).collect();
    let rec = EegRecording::new(data, sampling_rate, labels, subject_id, session_id)?;
    let at = |s: f64| (s * sampling_rate).round() as usize;
    let mut events = vec![Event {
        session_id,
        sample_index: at(1.0),
        kind: EventKind::CountingStart,
    }];
    for &p in presses {
        for (offset, kind) in [
            (0.0, EventKind::ButtonPress),
            (0.5, EventKind::QuestionStart),
            (3.0, EventKind::QuestionEnd),
        ] {
            events.push(Event {
                session_id,
                sample_index: at(p + offset).min(n - 1),
                kind,
            });
        }
    }
    events.sort_by_key(|e| e.sample_index);
    Ok((rec, events))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn burst_dataset_shape_and_balance() {
        let ds = burst_dataset(&BurstConfig::default(), 1).unwrap();
        assert_eq!(ds.len(), 200);
        assert!(ds.is_balanced());
        assert_eq!(ds.samples[0].data.shape(), &[8, 256]);
        assert_eq!(ds.subjects(), vec![1, 2]);
        assert_eq!(ds.samples, burst_dataset(&BurstConfig::default(), 1).unwrap().samples);
    }

    #[test]
    fn session_events_are_ordered() {
        let (rec, ev) = session(4, 64.0, 60.0, &[20.0, 40.0], 1, 2, 0).unwrap();
        assert_eq!(rec.n_samples(), 3840);
        assert_eq!(ev.len(), 7);
        assert!(ev.windows(2).all(|w| w[0].sample_index <= w[1].sample_index));
    }
}
