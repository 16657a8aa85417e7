//! Minimal RIFF/WAVE reader and writer.
//!
//! Reads PCM16 (format code 1) and IEEE float32 (code 3), 1 or 2 channels;
//! stereo is averaged down to mono. Writes are always mono float32,
//! little-endian, so a write/read round trip is bit-exact.

use std::fs;
use std::io::Write as IoWrite;
use std::path::Path;

use crate::audio::{resample_linear, AudioBuffer};
use crate::error::{Error, Result};

fn read_u16(b: &[u8], at: usize) -> Result<u16> {
    b.get(at..at + 2)
        .map(|s| u16::from_le_bytes([s[0], s[1]]))
        .ok_or_else(|| Error::MalformedWav("truncated chunk".into()))
}

fn read_u32(b: &[u8], at: usize) -> Result<u32> {
    b.get(at..at + 4)
        .map(|s| u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
        .ok_or_else(|| Error::MalformedWav("truncated chunk".into()))
}

/// Read a WAV file, mix to mono, and resample to `target_rate`.
pub fn read_wav(path: &Path, target_rate: u32) -> Result<AudioBuffer> {
    Ok(resample_linear(&read_wav_native(path)?, target_rate))
}

/// Read a WAV file and mix to mono, keeping the file's own sample rate.
pub fn read_wav_native(path: &Path) -> Result<AudioBuffer> {
    let bytes = fs::read(path)?;
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::MalformedWav("missing RIFF/WAVE header".into()));
    }

    let mut pos = 12usize;
    let mut fmt: Option<(u16, u16, u32, u16)> = None; // (code, channels, rate, bits)
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = read_u32(&bytes, pos + 4)? as usize;
        let body_start = pos + 8;
        if body_start + size > bytes.len() {
            return Err(Error::MalformedWav(format!(
                "chunk {} overruns file",
                String::from_utf8_lossy(id)
            )));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::MalformedWav("fmt chunk too small".into()));
                }
                fmt = Some((
                    read_u16(&bytes, body_start)?,
                    read_u16(&bytes, body_start + 2)?,
                    read_u32(&bytes, body_start + 4)?,
                    read_u16(&bytes, body_start + 14)?,
                ));
            }
            b"data" => data = Some(&bytes[body_start..body_start + size]),
            _ => {}
        }
        // chunks are word-aligned
        pos = body_start + size + (size & 1);
    }

    let (code, channels, rate, bits) =
        fmt.ok_or_else(|| Error::MalformedWav("missing fmt chunk".into()))?;
    let data = data.ok_or_else(|| Error::MalformedWav("missing data chunk".into()))?;
    if channels == 0 || channels > 2 {
        return Err(Error::UnsupportedFormat(format!("{channels} channels")));
    }

    let interleaved: Vec<f32> = match (code, bits) {
        (1, 16) => data
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / 32768.0)
            .collect(),
        (3, 32) => data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
        _ => {
            return Err(Error::UnsupportedFormat(format!(
                "format code {code} / {bits} bits"
            )))
        }
    };

    let mono: Vec<f32> = if channels == 2 {
        interleaved
            .chunks_exact(2)
            .map(|p| 0.5 * (p[0] + p[1]))
            .collect()
    } else {
        interleaved
    };

    Ok(AudioBuffer::new(mono, rate))
}

/// Write a buffer as a mono IEEE float32 WAV file.
pub fn write_wav(buffer: &AudioBuffer, path: &Path) -> Result<()> {
    let data_len = buffer.samples.len() * 4;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&3u16.to_le_bytes()); // IEEE float
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&buffer.sample_rate.to_le_bytes());
    out.extend_from_slice(&(buffer.sample_rate * 4).to_le_bytes()); // byte rate
    out.extend_from_slice(&4u16.to_le_bytes()); // block align
    out.extend_from_slice(&32u16.to_le_bytes()); // bits
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &buffer.samples {
        out.extend_from_slice(&s.to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}
