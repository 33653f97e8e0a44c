//! `MWER` raw matrix container.
//!
//! ```text
//! "MWER" | version u32 | n_channels u32 | n_samples u32 | sampling_rate f64
//! | subject u8 | session u16 | f32 samples, channel-major | labels, one per line
//! ```
//! All integers and floats little-endian.

use std::path::Path;

use crate::binio::{put_f32s, read_file, write_file, ByteReader};
use crate::eeg_io::EegRecording;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const FORMAT: &str = "MWER";
pub const RAW_MAGIC: &[u8; 4] = b"MWER";
pub const RAW_VERSION: u32 = 1;

pub fn encode_raw_matrix(rec: &EegRecording) -> Result<Vec<u8>> {
    if rec.channel_labels.iter().any(|l| l.contains('\n')) {
        return Err(Error::InvalidArgument("channel labels may not contain newlines".into()));
    }
    let mut out = Vec::with_capacity(27 + rec.data.len() * 4);
    out.extend_from_slice(RAW_MAGIC);
    out.extend_from_slice(&RAW_VERSION.to_le_bytes());
    out.extend_from_slice(&(rec.n_channels() as u32).to_le_bytes());
    out.extend_from_slice(&(rec.n_samples() as u32).to_le_bytes());
    out.extend_from_slice(&rec.sampling_rate.to_le_bytes());
    out.push(rec.subject_id);
    out.extend_from_slice(&rec.session_id.to_le_bytes());
    put_f32s(&mut out, rec.data.data());
    for label in &rec.channel_labels {
        out.extend_from_slice(label.as_bytes());
        out.push(b'\n');
    }
    Ok(out)
}

pub fn decode_raw_matrix(bytes: &[u8]) -> Result<EegRecording> {
    let mut r = ByteReader::new(FORMAT, bytes);
    r.expect_magic(RAW_MAGIC)?;
    let version = r.u32("version")?;
    if version != RAW_VERSION {
        return Err(Error::parse(FORMAT, "version", format!("unsupported version {version}")));
    }
    let n_channels = r.u32("n_channels")? as usize;
    let n_samples = r.u32("n_samples")? as usize;
    if n_channels == 0 {
        return Err(Error::parse(FORMAT, "n_channels", "empty channel list"));
    }
    if n_samples == 0 {
        return Err(Error::parse(FORMAT, "n_samples", "no samples"));
    }
    let rate = r.f64("sampling_rate")?;
    let subject = r.u8("subject")?;
    let session = r.u16("session")?;
    let data = r.f32_vec(n_channels * n_samples, "samples").map_err(|_| {
        Error::parse(
            FORMAT,
            "n_samples",
            format!("header declares {n_channels}x{n_samples} samples but payload is shorter"),
        )
    })?;
    let rest = r.take(r.remaining(), "labels")?;
    let text = std::str::from_utf8(rest).map_err(|_| Error::parse(FORMAT, "labels", "not UTF-8"))?;
    let labels: Vec<String> = text.lines().map(str::to_string).collect();
    if labels.len() != n_channels {
        return Err(Error::parse(
            FORMAT,
            "labels",
            format!("{} labels for {n_channels} channels (payload size mismatch?)", labels.len()),
        ));
    }
    EegRecording::new(Tensor::new(vec![n_channels, n_samples], data)?, rate, labels, subject, session)
}

pub fn write_raw_matrix(rec: &EegRecording, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_raw_matrix(rec)?)
}

pub fn read_raw_matrix(path: impl AsRef<Path>) -> Result<EegRecording> {
    decode_raw_matrix(&read_file(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EegRecording {
        let data = Tensor::from_fn(&[3, 5], |i| i as f32 * 0.5 - 2.0);
        EegRecording::new(data, 512.0, vec!["Fz".into(), "Cz".into(), "Pz".into()], 2, 7).unwrap()
    }

    #[test]
    fn roundtrip() {
        let rec = sample();
        assert_eq!(decode_raw_matrix(&encode_raw_matrix(&rec).unwrap()).unwrap(), rec);
    }

    #[test]
    fn empty_channel_list_rejected() {
        let mut bytes = encode_raw_matrix(&sample()).unwrap();
        bytes[8..12].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(decode_raw_matrix(&bytes), Err(Error::Parse { ref field, .. }) if field == "n_channels"));
    }

    #[test]
    fn sample_count_mismatch_rejected() {
        let mut bytes = encode_raw_matrix(&sample()).unwrap();
        bytes[12..16].copy_from_slice(&6u32.to_le_bytes());
        assert!(decode_raw_matrix(&bytes).is_err());
        let mut short = encode_raw_matrix(&sample()).unwrap();
        short[12..16].copy_from_slice(&4u32.to_le_bytes());
        assert!(decode_raw_matrix(&short).is_err());
    }

    #[test]
    fn wrong_magic_rejected() {
        let mut bytes = encode_raw_matrix(&sample()).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_raw_matrix(&bytes), Err(Error::Parse { ref field, .. }) if field == "magic"));
    }
}
