//! Biosemi BDF reader (24-bit EDF variant) and a writer for building fixtures.
//!
//! Layout: a 256-byte main header, 256 bytes of per-channel header, then data
//! records. Each record holds every channel's block of samples in turn, each sample
//! a 3-byte little-endian two's-complement integer.

use std::path::Path;

use crate::binio::{read_file, write_file};
use crate::eeg_io::EegRecording;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const FORMAT: &str = "BDF";
const MAGIC: &[u8; 8] = b"\xffBIOSEMI";
const MAIN_HEADER: usize = 256;
const CHANNEL_HEADER: usize = 256;

pub fn decode_int24(bytes: [u8; 3]) -> i32 {
    // place in the top three bytes, then arithmetic shift sign-extends
    i32::from_le_bytes([0, bytes[0], bytes[1], bytes[2]]) >> 8
}

/// Inverse of [`decode_int24`]; values outside the 24-bit range are truncated.
pub fn encode_int24(value: i32) -> [u8; 3] {
    let b = value.to_le_bytes();
    [b[0], b[1], b[2]]
}

/// Per-channel header fields.
#[derive(Clone, Debug, PartialEq)]
pub struct BdfChannel {
    pub label: String,
    pub physical_dimension: String,
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i32,
    pub digital_max: i32,
    pub samples_per_record: usize,
}

impl BdfChannel {
    /// Biosemi ActiveTwo defaults: full 24-bit range mapped to ±262144 µV.
    pub fn biosemi(label: impl Into<String>, samples_per_record: usize) -> Self {
        Self {
            label: label.into(),
            physical_dimension: "uV".into(),
            physical_min: -262144.0,
            physical_max: 262143.0,
            digital_min: -8_388_608,
            digital_max: 8_388_607,
            samples_per_record,
        }
    }

    pub fn gain(&self) -> f64 {
        (self.physical_max - self.physical_min) / f64::from(self.digital_max - self.digital_min)
    }

    /// Digital to physical: `phys_min + (d - dig_min) * gain`.
    pub fn to_physical(&self, digital: i32) -> f64 {
        self.physical_min + f64::from(digital - self.digital_min) * self.gain()
    }
}

struct Fields<'a> {
    buf: &'a [u8],
}

impl Fields<'_> {
    fn text(&self, offset: usize, len: usize) -> String {
        String::from_utf8_lossy(&self.buf[offset..offset + len]).trim().to_string()
    }

    fn number<T: std::str::FromStr>(&self, offset: usize, len: usize, field: &str) -> Result<T> {
        let s = self.text(offset, len);
        s.parse()
            .map_err(|_| Error::parse(FORMAT, field, format!("not a number: {s:?}")))
    }
}

pub fn read_bdf(path: impl AsRef<Path>) -> Result<EegRecording> {
    let path = path.as_ref();
    parse_bdf(&read_file(path)?)
}

pub fn parse_bdf(bytes: &[u8]) -> Result<EegRecording> {
    if bytes.len() < MAIN_HEADER {
        return Err(Error::parse(FORMAT, "header", format!("file is only {} bytes", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::parse(FORMAT, "version", "missing 0xFF \"BIOSEMI\" identification"));
    }
    let f = Fields { buf: bytes };
    let header_bytes: usize = f.number(184, 8, "header bytes")?;
    let n_records: i64 = f.number(236, 8, "number of data records")?;
    let record_seconds: f64 = f.number(244, 8, "data record duration")?;
    let ns: usize = f.number(252, 4, "number of signals")?;
    if ns == 0 {
        return Err(Error::parse(FORMAT, "number of signals", "no channels declared"));
    }
    if header_bytes != MAIN_HEADER + ns * CHANNEL_HEADER {
        return Err(Error::parse(
            FORMAT,
            "header bytes",
            format!("declares {header_bytes}, {ns} channels need {}", MAIN_HEADER + ns * CHANNEL_HEADER),
        ));
    }
    if n_records < 0 {
        return Err(Error::parse(FORMAT, "number of data records", "unknown (-1) record count unsupported"));
    }
    if !(record_seconds > 0.0) {
        return Err(Error::parse(FORMAT, "data record duration", format!("must be positive, got {record_seconds}")));
    }
    if bytes.len() < header_bytes {
        return Err(Error::parse(FORMAT, "signal headers", "truncated"));
    }

    // per-channel fields are stored field-major: all labels, then all transducers, ...
    let field_offset = |width_before: usize, i: usize, width: usize| MAIN_HEADER + ns * width_before + i * width;
    let mut channels = Vec::with_capacity(ns);
    for i in 0..ns {
        channels.push(BdfChannel {
            label: f.text(field_offset(0, i, 16), 16),
            physical_dimension: f.text(field_offset(96, i, 8), 8),
            physical_min: f.number(field_offset(104, i, 8), 8, "physical minimum")?,
            physical_max: f.number(field_offset(112, i, 8), 8, "physical maximum")?,
            digital_min: f.number(field_offset(120, i, 8), 8, "digital minimum")?,
            digital_max: f.number(field_offset(128, i, 8), 8, "digital maximum")?,
            samples_per_record: f.number(field_offset(216, i, 8), 8, "samples per record")?,
        });
    }
    let spr = channels[0].samples_per_record;
    if spr == 0 {
        return Err(Error::parse(FORMAT, "samples per record", "zero samples per record"));
    }
    if let Some(bad) = channels.iter().find(|c| c.samples_per_record != spr) {
        return Err(Error::parse(
            FORMAT,
            "samples per record",
            format!("channel {:?} has {} samples, channel 1 has {spr}", bad.label, bad.samples_per_record),
        ));
    }
    if let Some(bad) = channels.iter().find(|c| c.digital_max <= c.digital_min) {
        return Err(Error::parse(FORMAT, "digital maximum", format!("channel {:?} has empty digital range", bad.label)));
    }

    let n_records = n_records as usize;
    let record_len = ns * spr * 3;
    let expected = record_len * n_records;
    let payload = &bytes[header_bytes..];
    if payload.len() < expected {
        return Err(Error::parse(
            FORMAT,
            "data records",
            format!("truncated: {n_records} records need {expected} bytes, found {}", payload.len()),
        ));
    }

    let n_samples = n_records * spr;
    let mut data = vec![0f32; ns * n_samples];
    for (r, record) in payload.chunks_exact(record_len).take(n_records).enumerate() {
        for (c, block) in record.chunks_exact(spr * 3).enumerate() {
            let ch = &channels[c];
            let dst = &mut data[c * n_samples + r * spr..][..spr];
            for (d, raw) in dst.iter_mut().zip(block.chunks_exact(3)) {
                *d = ch.to_physical(decode_int24([raw[0], raw[1], raw[2]])) as f32;
            }
        }
    }

    let rate = spr as f64 / record_seconds;
    EegRecording::new(
        Tensor::new(vec![ns, n_samples], data)?,
        rate,
        channels.into_iter().map(|c| c.label).collect(),
        0,
        0,
    )
}

fn pad(out: &mut Vec<u8>, s: &str, width: usize) {
    let mut bytes = s.as_bytes().to_vec();
    bytes.truncate(width);
    bytes.resize(width, b' ');
    out.extend_from_slice(&bytes);
}

/// Writes digital samples (`digital[channel][sample]`) as a BDF file. The sample
/// count of every channel must be a whole number of records.
pub fn write_bdf(
    path: impl AsRef<Path>,
    channels: &[BdfChannel],
    digital: &[Vec<i32>],
    record_seconds: f64,
) -> Result<()> {
    write_file(path.as_ref(), &encode_bdf(channels, digital, record_seconds)?)
}

pub fn encode_bdf(channels: &[BdfChannel], digital: &[Vec<i32>], record_seconds: f64) -> Result<Vec<u8>> {
    if channels.is_empty() || channels.len() != digital.len() {
        return Err(Error::InvalidArgument(format!(
            "{} channel headers for {} sample rows",
            channels.len(),
            digital.len()
        )));
    }
    let spr = channels[0].samples_per_record;
    let n = digital[0].len();
    if spr == 0 || !n.is_multiple_of(spr) || digital.iter().any(|d| d.len() != n) || channels.iter().any(|c| c.samples_per_record != spr) {
        return Err(Error::InvalidArgument("samples must fill whole records uniformly".into()));
    }
    let ns = channels.len();
    let n_records = n / spr;

    let mut out = Vec::with_capacity(MAIN_HEADER + ns * CHANNEL_HEADER + n * ns * 3);
    out.extend_from_slice(MAGIC);
    pad(&mut out, "X X X X", 80);
    pad(&mut out, "Startdate 01-JAN-2000 X X BIOSEMI", 80);
    pad(&mut out, "01.01.00", 8);
    pad(&mut out, "00.00.00", 8);
    pad(&mut out, &(MAIN_HEADER + ns * CHANNEL_HEADER).to_string(), 8);
    pad(&mut out, "24BIT", 44);
    pad(&mut out, &n_records.to_string(), 8);
    pad(&mut out, &record_seconds.to_string(), 8);
    pad(&mut out, &ns.to_string(), 4);

    let field = |out: &mut Vec<u8>, width: usize, get: &dyn Fn(&BdfChannel) -> String| {
        for c in channels {
            pad(out, &get(c), width);
        }
    };
    field(&mut out, 16, &|c| c.label.clone());
    field(&mut out, 80, &|_| "Active Electrode".into());
    field(&mut out, 8, &|c| c.physical_dimension.clone());
    field(&mut out, 8, &|c| c.physical_min.to_string());
    field(&mut out, 8, &|c| c.physical_max.to_string());
    field(&mut out, 8, &|c| c.digital_min.to_string());
    field(&mut out, 8, &|c| c.digital_max.to_string());
    field(&mut out, 80, &|_| "HP:DC; LP:417 Hz".into());
    field(&mut out, 8, &|c| c.samples_per_record.to_string());
    field(&mut out, 32, &|_| String::new());

    for r in 0..n_records {
        for row in digital {
            for &d in &row[r * spr..(r + 1) * spr] {
                out.extend_from_slice(&encode_int24(d));
            }
        }
    }
    Ok(out)
}
