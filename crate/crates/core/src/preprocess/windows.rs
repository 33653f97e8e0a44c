//! Cropping labeled windows out of continuous recordings.
//!
//! A mind-wandering (MW) window starts 10 s before a button press and ends 2 s
//! before it for 8 s windows; shorter windows keep the same start. Focus (FS)
//! windows are drawn at random from time after counting starts, away from every
//! press episode and questionnaire, and never overlap each other.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::eeg_io::{EegRecording, Event, EventKind};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// MW windows start this long before the press.
pub const MW_LEAD_SECONDS: f64 = 10.0;
/// Interval directly before a press that no window may touch.
pub const PRE_PRESS_EXCLUSION_SECONDS: f64 = 2.0;
/// Longest window that fits between the MW start and the pre-press exclusion.
pub const MAX_WINDOW_SECONDS: u32 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Label {
    /// Focusing state, the negative class (index 0).
    Fs = 0,
    /// Mind wandering, the positive class (index 1).
    Mw = 1,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Label::Fs),
            1 => Some(Label::Mw),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Fs => "FS",
            Label::Mw => "MW",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowSample {
    /// `[n_channels, n_timesteps]`
    pub data: Tensor<f32>,
    pub label: Label,
    pub subject_id: u8,
    pub session_id: u16,
    /// Sample index of the window start within its recording.
    pub origin_offset: u64,
}

#[derive(Clone, Debug, Default)]
pub struct MwExtraction {
    pub samples: Vec<WindowSample>,
    /// Presses too close to the recording start (or the unreliable filter edge) to
    /// host a full window.
    pub skipped: usize,
}

pub fn window_len(rec: &EegRecording, window_seconds: u32) -> Result<usize> {
    if window_seconds == 0 || window_seconds > MAX_WINDOW_SECONDS {
        return Err(Error::InvalidArgument(format!(
            "window length must be 1..={MAX_WINDOW_SECONDS} s, got {window_seconds}"
        )));
    }
    Ok(rec.samples_for(f64::from(window_seconds)))
}

pub(crate) fn cut(rec: &EegRecording, start: usize, len: usize, label: Label) -> Result<WindowSample> {
    let n = rec.n_samples();
    let c = rec.n_channels();
    if start + len > n {
        return Err(Error::InvalidArgument(format!(
            "window [{start}, {}) crosses the end of a {n}-sample recording",
            start + len
        )));
    }
    let mut data = Vec::with_capacity(c * len);
    for ch in 0..c {
        data.extend_from_slice(&rec.channel(ch)[start..start + len]);
    }
    Ok(WindowSample {
        data: Tensor::new(vec![c, len], data)?,
        label,
        subject_id: rec.subject_id,
        session_id: rec.session_id,
        origin_offset: start as u64,
    })
}

fn presses(events: &[Event]) -> impl Iterator<Item = usize> + '_ {
    events
        .iter()
        .filter(|e| e.kind == EventKind::ButtonPress)
        .map(|e| e.sample_index)
}

/// Start offsets of MW windows for one recording, plus the number of skipped presses.
pub fn mw_window_starts(
    n_samples: usize,
    reliable: &Range<usize>,
    fs: f64,
    events: &[Event],
    window_len: usize,
) -> (Vec<usize>, usize) {
    let lead = (MW_LEAD_SECONDS * fs).round() as usize;
    let mut starts = Vec::new();
    let mut skipped = 0;
    for p in presses(events) {
        match p.checked_sub(lead) {
            Some(s) if s >= reliable.start && s + window_len <= reliable.end.min(n_samples) => starts.push(s),
            _ => skipped += 1,
        }
    }
    (starts, skipped)
}

pub fn extract_mw_windows(rec: &EegRecording, events: &[Event], window_seconds: u32) -> Result<MwExtraction> {
    let len = window_len(rec, window_seconds)?;
    let (starts, skipped) = mw_window_starts(rec.n_samples(), &rec.reliable, rec.sampling_rate, events, len);
    let samples = starts
        .into_iter()
        .map(|s| cut(rec, s, len, Label::Mw))
        .collect::<Result<_>>()?;
    Ok(MwExtraction { samples, skipped })
}

/// Sample ranges no FS window may overlap: every press episode
/// `[p - 10 s, p]` (covering both the MW window and the 2 s pre-press interval)
/// and every questionnaire `[question_start, question_end)`. An unterminated
/// questionnaire runs to the end of the recording.
pub fn forbidden_spans(n_samples: usize, fs: f64, events: &[Event]) -> Vec<Range<usize>> {
    let lead = (MW_LEAD_SECONDS * fs).round() as usize;
    let mut spans: Vec<Range<usize>> = presses(events)
        .map(|p| p.saturating_sub(lead)..(p + 1).min(n_samples))
        .collect();
    let mut open: Option<usize> = None;
    for e in events {
        match e.kind {
            EventKind::QuestionStart if open.is_none() => open = Some(e.sample_index),
            EventKind::QuestionEnd => {
                if let Some(s) = open.take() {
                    spans.push(s..(e.sample_index + 1).min(n_samples));
                }
            }
            _ => {}
        }
    }
    if let Some(s) = open {
        spans.push(s..n_samples);
    }
    spans.sort_by_key(|r| r.start);
    spans
}

/// Maximal intervals where FS windows may be placed.
pub fn admissible_spans(
    n_samples: usize,
    reliable: &Range<usize>,
    fs: f64,
    events: &[Event],
) -> Result<Vec<Range<usize>>> {
    let counting = events
        .iter()
        .find(|e| e.kind == EventKind::CountingStart)
        .ok_or_else(|| Error::InvalidArgument("no counting_start event; FS windows cannot be placed".into()))?
        .sample_index;
    let lo = counting.max(reliable.start);
    let hi = reliable.end.min(n_samples);
    let mut out = Vec::new();
    let mut cursor = lo;
    for f in forbidden_spans(n_samples, fs, events) {
        if f.end <= cursor {
            continue;
        }
        if f.start > cursor {
            out.push(cursor..f.start.min(hi));
        }
        cursor = cursor.max(f.end);
        if cursor >= hi {
            break;
        }
    }
    if cursor < hi {
        out.push(cursor..hi);
    }
    out.retain(|r| r.start < r.end);
    Ok(out)
}

/// Places `count` mutually disjoint windows of `len` samples uniformly at random
/// inside `spans`. Each span is tagged with an owner (e.g. the recording index);
/// the result is sorted `(owner, start)` pairs.
pub fn place_windows<R: Rng + ?Sized>(
    spans: &[(usize, Range<usize>)],
    len: usize,
    count: usize,
    rng: &mut R,
) -> Result<Vec<(usize, usize)>> {
    let capacity: Vec<usize> = spans.iter().map(|(_, r)| r.len() / len).collect();
    let achievable: usize = capacity.iter().sum();
    if count > achievable {
        return Err(Error::InsufficientSpan {
            requested: count,
            achievable,
        });
    }
    // choose how many windows each span receives by sampling slots without replacement
    let mut slots: Vec<usize> = capacity
        .iter()
        .enumerate()
        .flat_map(|(i, &c)| std::iter::repeat_n(i, c))
        .collect();
    slots.shuffle(rng);
    let mut per_span = vec![0usize; spans.len()];
    for &s in &slots[..count] {
        per_span[s] += 1;
    }

    let mut out = Vec::with_capacity(count);
    for ((owner, span), &m) in spans.iter().zip(&per_span) {
        if m == 0 {
            continue;
        }
        // m sorted gaps out of the slack give a uniform non-overlapping layout
        let slack = span.len() - m * len;
        let mut gaps: Vec<usize> = (0..m).map(|_| rng.gen_range(0..=slack)).collect();
        gaps.sort_unstable();
        out.extend(gaps.iter().enumerate().map(|(j, g)| (*owner, span.start + g + j * len)));
    }
    out.sort_unstable();
    Ok(out)
}

pub fn extract_fs_windows<R: Rng + ?Sized>(
    rec: &EegRecording,
    events: &[Event],
    window_seconds: u32,
    count: usize,
    rng: &mut R,
) -> Result<Vec<WindowSample>> {
    let len = window_len(rec, window_seconds)?;
    let spans: Vec<(usize, Range<usize>)> =
        admissible_spans(rec.n_samples(), &rec.reliable, rec.sampling_rate, events)?
            .into_iter()
            .map(|r| (0, r))
            .collect();
    place_windows(&spans, len, count, rng)?
        .into_iter()
        .map(|(_, s)| cut(rec, s, len, Label::Fs))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(n: usize, fs: f64) -> EegRecording {
        let data = Tensor::from_fn(&[2, n], |i| (i % n) as f32);
        EegRecording::new(data, fs, vec!["a".into(), "b".into()], 1, 1).unwrap()
    }

    fn ev(i: usize, kind: EventKind) -> Event {
        Event {
            session_id: 1,
            sample_index: i,
            kind,
        }
    }

    #[test]
    fn mw_window_ends_two_seconds_before_press() {
        let r = rec(40_000, 1024.0);
        let out = extract_mw_windows(&r, &[ev(20480, EventKind::ButtonPress)], 8).unwrap();
        assert_eq!(out.skipped, 0);
        let w = &out.samples[0];
        assert_eq!(w.origin_offset, 10240);
        assert_eq!(w.data.shape(), &[2, 8192]);
        assert_eq!(w.origin_offset as usize + 8192, 20480 - 2048);
        assert_eq!(w.data.data()[0], 10240.0);
        assert_eq!(w.label, Label::Mw);
    }

    #[test]
    fn early_press_is_skipped() {
        let r = rec(40_000, 1024.0);
        let out = extract_mw_windows(&r, &[ev(5000, EventKind::ButtonPress)], 8).unwrap();
        assert!(out.samples.is_empty());
        assert_eq!(out.skipped, 1);
    }

    #[test]
    fn short_windows_keep_the_start() {
        let r = rec(40_000, 1024.0);
        let out = extract_mw_windows(&r, &[ev(20480, EventKind::ButtonPress)], 2).unwrap();
        assert_eq!(out.samples[0].origin_offset, 10240);
        assert_eq!(out.samples[0].data.shape(), &[2, 2048]);
        assert!(extract_mw_windows(&r, &[], 9).is_err());
    }

    #[test]
    fn admissible_spans_exclude_episodes_and_questionnaires() {
        let fs = 10.0;
        let events = [
            ev(50, EventKind::CountingStart),
            ev(300, EventKind::ButtonPress),
            ev(310, EventKind::QuestionStart),
            ev(400, EventKind::QuestionEnd),
        ];
        let spans = admissible_spans(1000, &(0..1000), fs, &events).unwrap();
        assert_eq!(spans, vec![50..200, 301..310, 401..1000]);
    }

    #[test]
    fn missing_counting_start_rejected() {
        assert!(admissible_spans(1000, &(0..1000), 10.0, &[]).is_err());
    }

    #[test]
    fn capacity_error_reports_achievable() {
        let mut rng = crate::rng::stream(0, &[]);
        let spans = vec![(0, 0..25), (1, 100..110)];
        match place_windows(&spans, 10, 4, &mut rng) {
            Err(Error::InsufficientSpan { requested: 4, achievable: 3 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }
}
