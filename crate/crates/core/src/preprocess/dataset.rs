//! Dataset assembly and the `MWDS` container.
//!
//! ```text
//! "MWDS" | version u32 | n_samples u32 | n_channels u32 | n_timesteps u32 | sampling_rate f64
//! then per sample: label u8 (0 = FS, 1 = MW) | subject u8 | session u16 | origin_offset u64
//!                  | f32 data, channel-major
//! ```

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::Path;

use crate::binio::{put_f32s, read_file, write_file, ByteReader};
use crate::eeg_io::{events::session_events, EegRecording, Event};
use crate::error::{Error, Result};
use crate::preprocess::filter::{self, design_bandpass, filter_zero_phase, FilterKernel};
use crate::preprocess::normalize::{zscore_with, ZScoreScope};
use crate::preprocess::windows::{self, cut, Label, WindowSample};
use crate::rng;
use crate::tensor::Tensor;

const FORMAT: &str = "MWDS";
pub const DATASET_MAGIC: &[u8; 4] = b"MWDS";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<WindowSample>,
    pub sampling_rate: f64,
    pub n_channels: usize,
    pub n_timesteps: usize,
}

impl Dataset {
    pub fn new(samples: Vec<WindowSample>, sampling_rate: f64, n_channels: usize, n_timesteps: usize) -> Result<Self> {
        if let Some((i, s)) = samples
            .iter()
            .enumerate()
            .find(|(_, s)| s.data.shape() != [n_channels, n_timesteps])
        {
            return Err(Error::shape(
                "dataset",
                format!("sample {i} has shape {:?}, expected [{n_channels}, {n_timesteps}]", s.data.shape()),
            ));
        }
        Ok(Self {
            samples,
            sampling_rate,
            n_channels,
            n_timesteps,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn window_seconds(&self) -> f64 {
        self.n_timesteps as f64 / self.sampling_rate
    }

    /// `(fs_count, mw_count)`
    pub fn class_counts(&self) -> (usize, usize) {
        let mw = self.samples.iter().filter(|s| s.label == Label::Mw).count();
        (self.samples.len() - mw, mw)
    }

    pub fn is_balanced(&self) -> bool {
        let (fs, mw) = self.class_counts();
        fs == mw
    }

    pub fn labels(&self) -> Vec<Label> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Distinct subject ids in ascending order.
    pub fn subjects(&self) -> Vec<u8> {
        let mut ids: Vec<u8> = self.samples.iter().map(|s| s.subject_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            ..self.without_samples()
        }
    }

    fn without_samples(&self) -> Dataset {
        Dataset {
            samples: Vec::new(),
            sampling_rate: self.sampling_rate,
            n_channels: self.n_channels,
            n_timesteps: self.n_timesteps,
        }
    }
}

pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let per = 16 + ds.n_channels * ds.n_timesteps * 4;
    let mut out = Vec::with_capacity(28 + ds.len() * per);
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&(ds.len() as u32).to_le_bytes());
    out.extend_from_slice(&(ds.n_channels as u32).to_le_bytes());
    out.extend_from_slice(&(ds.n_timesteps as u32).to_le_bytes());
    out.extend_from_slice(&ds.sampling_rate.to_le_bytes());
    for s in &ds.samples {
        out.push(s.label as u8);
        out.push(s.subject_id);
        out.extend_from_slice(&s.session_id.to_le_bytes());
        out.extend_from_slice(&s.origin_offset.to_le_bytes());
        put_f32s(&mut out, s.data.data());
    }
    out
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = ByteReader::new(FORMAT, bytes);
    r.expect_magic(DATASET_MAGIC)?;
    let version = r.u32("version")?;
    if version != DATASET_VERSION {
        return Err(Error::parse(FORMAT, "version", format!("unsupported version {version}")));
    }
    let n = r.u32("n_samples")? as usize;
    let c = r.u32("n_channels")? as usize;
    let t = r.u32("n_timesteps")? as usize;
    if c == 0 || t == 0 {
        return Err(Error::parse(FORMAT, "n_channels", "window dimensions must be positive"));
    }
    let fs = r.f64("sampling_rate")?;
    let mut samples = Vec::with_capacity(n.min(1 << 16));
    for i in 0..n {
        let raw_label = r.u8("label")?;
        let label = Label::from_index(raw_label as usize)
            .ok_or_else(|| Error::parse(FORMAT, "label", format!("sample {i}: label byte {raw_label} not in {{0,1}}")))?;
        let subject_id = r.u8("subject")?;
        let session_id = r.u16("session")?;
        let origin_offset = r.u64("origin_offset")?;
        let data = r.f32_vec(c * t, "data")?;
        samples.push(WindowSample {
            data: Tensor::new(vec![c, t], data)?,
            label,
            subject_id,
            session_id,
            origin_offset,
        });
    }
    if !r.is_at_end() {
        return Err(Error::parse(FORMAT, "n_samples", format!("{} trailing bytes after {n} samples", r.remaining())));
    }
    Dataset::new(samples, fs, c, t)
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_dataset(ds))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    decode_dataset(&read_file(path.as_ref())?)
}

/// Anything that can produce a recording on demand. Dataset assembly loads each
/// recording twice (once to plan windows, once to cut them) so that only one
/// full-length recording is resident at a time.
pub trait RecordingSource: Sync {
    fn load(&self) -> Result<EegRecording>;
}

impl RecordingSource for EegRecording {
    fn load(&self) -> Result<EegRecording> {
        Ok(self.clone())
    }
}

pub struct SessionInput<'a> {
    pub source: &'a dyn RecordingSource,
    /// Events of this session only.
    pub events: Vec<Event>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterSettings {
    pub low_hz: f64,
    pub high_hz: f64,
    /// Defaults to [`filter::default_taps`] for the recording's rate.
    pub n_taps: Option<usize>,
}

impl Default for FilterSettings {
    fn default() -> Self {
        Self {
            low_hz: filter::DEFAULT_LOW_HZ,
            high_hz: filter::DEFAULT_HIGH_HZ,
            n_taps: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrepareOptions {
    pub window_seconds: u32,
    pub seed: u64,
    /// `None` skips bandpass filtering.
    pub filter: Option<FilterSettings>,
    pub zscore_scope: ZScoreScope,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        Self {
            window_seconds: windows::MAX_WINDOW_SECONDS,
            seed: 0,
            filter: Some(FilterSettings::default()),
            zscore_scope: ZScoreScope::PerChannel,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PrepareReport {
    /// Per subject: `(mw, fs)` window counts.
    pub per_subject: BTreeMap<u8, (usize, usize)>,
    pub skipped_presses: usize,
}

impl PrepareReport {
    pub fn totals(&self) -> (usize, usize) {
        self.per_subject
            .values()
            .fold((0, 0), |(m, f), &(a, b)| (m + a, f + b))
    }
}

struct Plan {
    kernel: Option<FilterKernel>,
    mw: Vec<usize>,
    fs: Vec<usize>,
}

/// Filter, crop, balance and normalize. Per subject, the FS count equals the MW
/// count; FS windows are spread over that subject's sessions using an RNG stream
/// derived from `(seed, subject)`.
pub fn build_dataset(sessions: &[SessionInput<'_>], opts: &PrepareOptions) -> Result<(Dataset, PrepareReport)> {
    if sessions.is_empty() {
        return Err(Error::InvalidArgument("no recordings supplied".into()));
    }
    let mut plans = Vec::with_capacity(sessions.len());
    let mut fs_spans: BTreeMap<u8, Vec<(usize, Range<usize>)>> = BTreeMap::new();
    let mut report = PrepareReport::default();
    let mut shape: Option<(f64, usize, usize)> = None;

    for (idx, session) in sessions.iter().enumerate() {
        let rec = session.source.load()?;
        let events = session_events(&session.events, rec.session_id, rec.n_samples())?;
        let len = windows::window_len(&rec, opts.window_seconds)?;
        match shape {
            None => shape = Some((rec.sampling_rate, rec.n_channels(), len)),
            Some((fs, c, _)) if fs != rec.sampling_rate || c != rec.n_channels() => {
                return Err(Error::InvalidArgument(format!(
                    "recording {idx} is {} channels at {} Hz, earlier ones {c} at {fs} Hz",
                    rec.n_channels(),
                    rec.sampling_rate
                )));
            }
            Some(_) => {}
        }
        let kernel = match &opts.filter {
            Some(f) => Some(design_bandpass(
                rec.sampling_rate,
                f.low_hz,
                f.high_hz,
                f.n_taps.unwrap_or_else(|| filter::default_taps(rec.sampling_rate)),
            )?),
            None => None,
        };
        let reliable = match &kernel {
            Some(k) => {
                let span = filter::reliable_span(rec.n_samples(), k.n_taps());
                span.start.max(rec.reliable.start)..span.end.min(rec.reliable.end)
            }
            None => rec.reliable.clone(),
        };
        let (mw, skipped) = windows::mw_window_starts(rec.n_samples(), &reliable, rec.sampling_rate, &events, len);
        report.skipped_presses += skipped;
        report.per_subject.entry(rec.subject_id).or_default().0 += mw.len();
        if !mw.is_empty() {
            let spans = windows::admissible_spans(rec.n_samples(), &reliable, rec.sampling_rate, &events)?;
            fs_spans
                .entry(rec.subject_id)
                .or_default()
                .extend(spans.into_iter().map(|r| (idx, r)));
        }
        plans.push(Plan {
            kernel,
            mw,
            fs: Vec::new(),
        });
    }

    let (fs, n_channels, len) = shape.expect("at least one session");
    if report.totals().0 == 0 {
        return Err(Error::InvalidArgument("no MW window could be extracted from any recording".into()));
    }

    for (&subject, entry) in report.per_subject.iter_mut() {
        let want = entry.0;
        if want == 0 {
            continue;
        }
        let spans = fs_spans.get(&subject).map(Vec::as_slice).unwrap_or(&[]);
        let mut rng = rng::stream(opts.seed, &[u64::from(subject)]);
        for (idx, start) in windows::place_windows(spans, len, want, &mut rng)? {
            plans[idx].fs.push(start);
        }
        entry.1 = want;
    }

    let mut samples = Vec::new();
    for (session, plan) in sessions.iter().zip(&plans) {
        if plan.mw.is_empty() && plan.fs.is_empty() {
            continue;
        }
        let raw = session.source.load()?;
        let rec = match &plan.kernel {
            Some(k) => filter_zero_phase(&raw, k)?,
            None => raw,
        };
        let labeled = plan
            .mw
            .iter()
            .map(|&s| (s, Label::Mw))
            .chain(plan.fs.iter().map(|&s| (s, Label::Fs)));
        for (start, label) in labeled {
            let mut w = cut(&rec, start, len, label)?;
            w.data = zscore_with(&w.data, opts.zscore_scope);
            samples.push(w);
        }
    }
    Ok((Dataset::new(samples, fs, n_channels, len)?, report))
}
