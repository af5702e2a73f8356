//! PCM WAV reading (16-bit integer, 32-bit float) and 16-bit writing.

use std::path::Path;

use super::Waveform;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

pub fn load_wav(path: &Path) -> Result<Waveform> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_wav(&bytes)
}

fn format_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        msg: msg.into(),
    }
}

fn u16_at(b: &[u8], at: usize) -> Result<u16> {
    b.get(at..at + 2)
        .map(|s| u16::from_le_bytes([s[0], s[1]]))
        .ok_or_else(|| format_err(at, "truncated"))
}

fn u32_at(b: &[u8], at: usize) -> Result<u32> {
    b.get(at..at + 4)
        .map(|s| u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
        .ok_or_else(|| format_err(at, "truncated"))
}

struct Fmt {
    format: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

pub fn parse_wav(b: &[u8]) -> Result<Waveform> {
    if b.len() < 12 {
        return Err(format_err(b.len(), "truncated RIFF header"));
    }
    if &b[0..4] != b"RIFF" {
        return Err(format_err(0, "missing RIFF tag"));
    }
    if &b[8..12] != b"WAVE" {
        return Err(format_err(8, "missing WAVE tag"));
    }
    let mut pos = 12;
    let mut fmt: Option<Fmt> = None;
    loop {
        if pos + 8 > b.len() {
            return Err(format_err(pos, "no data chunk"));
        }
        let id = &b[pos..pos + 4];
        let size = u32_at(b, pos + 4)? as usize;
        let body = pos + 8;
        match id {
            b"fmt " => {
                if size < 16 || body + 16 > b.len() {
                    return Err(format_err(body, "truncated fmt chunk"));
                }
                let mut format = u16_at(b, body)?;
                if format == FORMAT_EXTENSIBLE {
                    if size < 40 || body + 26 > b.len() {
                        return Err(format_err(body, "truncated extensible fmt chunk"));
                    }
                    format = u16_at(b, body + 24)?;
                }
                fmt = Some(Fmt {
                    format,
                    channels: u16_at(b, body + 2)?,
                    sample_rate: u32_at(b, body + 4)?,
                    bits: u16_at(b, body + 14)?,
                });
            }
            b"data" => {
                let fmt = fmt.ok_or_else(|| format_err(pos, "data chunk before fmt chunk"))?;
                if body + size > b.len() {
                    return Err(format_err(
                        b.len(),
                        format!(
                            "data chunk claims {size} bytes, only {} present",
                            b.len() - body
                        ),
                    ));
                }
                return decode(&b[body..body + size], &fmt, body);
            }
            _ => {}
        }
        pos = body + size + (size & 1);
    }
}

fn decode(data: &[u8], fmt: &Fmt, offset: usize) -> Result<Waveform> {
    if fmt.channels == 0 {
        return Err(format_err(offset, "zero channels"));
    }
    if fmt.sample_rate == 0 {
        return Err(format_err(offset, "zero sample rate"));
    }
    let ch = fmt.channels as usize;
    let frame_samples: Vec<f32> = match (fmt.format, fmt.bits) {
        (FORMAT_PCM, 16) => data
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / 32768.0)
            .collect(),
        (FORMAT_FLOAT, 32) => data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
        (f, bits) => {
            return Err(Error::Unsupported(format!(
                "WAV format tag {f} with {bits} bits per sample"
            )))
        }
    };
    let samples = frame_samples
        .chunks_exact(ch)
        .map(|frame| (frame.iter().map(|&v| v as f64).sum::<f64>() / ch as f64) as f32)
        .collect();
    Waveform::new(samples, fmt.sample_rate)
}

/// Mono 16-bit PCM.
pub fn encode_wav(w: &Waveform) -> Vec<u8> {
    let data_len = 2 * w.samples.len();
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&w.sample_rate.to_le_bytes());
    out.extend_from_slice(&(w.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &w.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    write_atomic(path, &encode_wav(w))
}
