//! Uncompressed PCM audio: RIFF/WAVE reading and writing plus channel
//! mixdown, normalized to floating-point samples in [-1, 1].

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("not a RIFF/WAVE file: {0}")]
    Format(String),
    #[error("unsupported encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("truncated file: {0}")]
    Truncated(String),
    #[error("clip has no channels")]
    EmptyInput,
    #[error("invalid clip: {0}")]
    InvalidClip(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Decoded audio: one sample sequence per channel, all equal length,
/// samples in [-1, 1]. Immutable once constructed.
#[derive(Debug, Clone)]
pub struct AudioClip {
    channels: Vec<Vec<f64>>,
    sample_rate: u32,
}

impl AudioClip {
    /// Validates channel lengths, sample range and rate.
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::InvalidClip("sample rate must be > 0".into()));
        }
        if let Some(first) = channels.first() {
            let len = first.len();
            for (i, ch) in channels.iter().enumerate() {
                if ch.len() != len {
                    return Err(AudioError::InvalidClip(format!(
                        "channel {} has {} samples, expected {}",
                        i,
                        ch.len(),
                        len
                    )));
                }
                if ch.iter().any(|s| !(-1.0..=1.0).contains(s) || s.is_nan()) {
                    return Err(AudioError::InvalidClip(format!(
                        "channel {} has samples outside [-1, 1]",
                        i
                    )));
                }
            }
        }
        Ok(AudioClip {
            channels,
            sample_rate,
        })
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self, AudioError> {
        AudioClip::new(vec![samples], sample_rate)
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    /// Sample count per channel.
    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Mean signal power over all channels and samples.
    pub fn power(&self) -> f64 {
        let n: usize = self.channels.iter().map(Vec::len).sum();
        if n == 0 {
            return 0.0;
        }
        let sum: f64 = self
            .channels
            .iter()
            .flat_map(|ch| ch.iter())
            .map(|s| s * s)
            .sum();
        sum / n as f64
    }
}

/// Averages all channels into one; sample rate preserved.
pub fn mixdown(clip: &AudioClip) -> Result<AudioClip, AudioError> {
    if clip.num_channels() == 0 {
        return Err(AudioError::EmptyInput);
    }
    if clip.num_channels() == 1 {
        return Ok(clip.clone());
    }
    let n = clip.len();
    let k = clip.num_channels() as f64;
    let mut out = vec![0.0; n];
    for ch in clip.channels() {
        for (acc, s) in out.iter_mut().zip(ch) {
            *acc += s;
        }
    }
    for v in &mut out {
        *v /= k;
    }
    AudioClip::mono(out, clip.sample_rate())
}

fn read_u32_le(bytes: &[u8], at: usize) -> Option<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

fn read_u16_le(bytes: &[u8], at: usize) -> Option<u16> {
    bytes.get(at..at + 2).map(|b| u16::from_le_bytes([b[0], b[1]]))
}

/// Reads a 16-bit signed PCM RIFF/WAVE file. Integer samples are scaled
/// by 1/32768. Unknown chunks (LIST, INFO, ...) are skipped.
pub fn read_wav(path: &Path) -> Result<AudioClip, AudioError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    decode_wav(&bytes)
}

/// Decodes a RIFF/WAVE byte buffer; see [`read_wav`].
pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip, AudioError> {
    if bytes.len() < 12 {
        return Err(AudioError::Truncated("shorter than RIFF header".into()));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(AudioError::Format(format!(
            "bad RIFF magic {:?}",
            &bytes[0..4]
        )));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(AudioError::Format(format!(
            "bad WAVE magic {:?}",
            &bytes[8..12]
        )));
    }

    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None; // (format, channels, rate, bits)
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = read_u32_le(bytes, pos + 4).unwrap() as usize;
        let body_start = pos + 8;
        if body_start + size > bytes.len() {
            // The data chunk is the payload; anything shorter than its
            // declared size means the file was cut off.
            return Err(AudioError::Truncated(format!(
                "chunk {:?} claims {} bytes past end of file",
                String::from_utf8_lossy(id),
                size
            )));
        }
        let body = &bytes[body_start..body_start + size];
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(AudioError::Truncated("fmt chunk shorter than 16".into()));
                }
                let format = read_u16_le(body, 0).unwrap();
                let channels = read_u16_le(body, 2).unwrap();
                let rate = read_u32_le(body, 4).unwrap();
                let bits = read_u16_le(body, 14).unwrap();
                fmt = Some((format, channels, rate, bits));
            }
            b"data" => data = Some(body),
            _ => {} // skip LIST/INFO/fact/...
        }
        // chunks are word-aligned; odd sizes carry a pad byte
        pos = body_start + size + (size & 1);
    }

    let (format, channels, rate, bits) =
        fmt.ok_or_else(|| AudioError::Format("missing fmt chunk".into()))?;
    if format != 1 {
        return Err(AudioError::UnsupportedEncoding(format!(
            "audio format code {} (only PCM = 1)",
            format
        )));
    }
    if bits != 16 {
        return Err(AudioError::UnsupportedEncoding(format!(
            "{} bits per sample (only 16)",
            bits
        )));
    }
    if channels == 0 {
        return Err(AudioError::Format("zero channels".into()));
    }
    if rate == 0 {
        return Err(AudioError::Format("zero sample rate".into()));
    }
    let data = data.ok_or_else(|| AudioError::Format("missing data chunk".into()))?;

    let frame_bytes = channels as usize * 2;
    if data.len() % frame_bytes != 0 {
        return Err(AudioError::Truncated(format!(
            "data chunk of {} bytes is not a whole number of {}-byte frames",
            data.len(),
            frame_bytes
        )));
    }
    let frames = data.len() / frame_bytes;
    let mut out: Vec<Vec<f64>> = vec![Vec::with_capacity(frames); channels as usize];
    for frame in data.chunks_exact(frame_bytes) {
        for (ch, sample) in frame.chunks_exact(2).enumerate() {
            let v = i16::from_le_bytes([sample[0], sample[1]]);
            out[ch].push(v as f64 / 32768.0);
        }
    }
    AudioClip::new(out, rate)
}

/// Writes a 16-bit PCM WAVE file. Samples are clamped to [-1, 1] and
/// quantized to the nearest representable integer, so a read-back differs
/// from the original by at most one quantization step.
pub fn write_wav(clip: &AudioClip, path: &Path) -> Result<(), AudioError> {
    let channels = clip.num_channels();
    if channels == 0 {
        return Err(AudioError::EmptyInput);
    }
    let frames = clip.len();
    let data_len = frames * channels * 2;
    let mut w = BufWriter::new(File::create(path)?);

    w.write_all(b"RIFF")?;
    w.write_all(&(36 + data_len as u32).to_le_bytes())?;
    w.write_all(b"WAVE")?;

    w.write_all(b"fmt ")?;
    w.write_all(&16u32.to_le_bytes())?;
    w.write_all(&1u16.to_le_bytes())?; // PCM
    w.write_all(&(channels as u16).to_le_bytes())?;
    w.write_all(&clip.sample_rate().to_le_bytes())?;
    let byte_rate = clip.sample_rate() * channels as u32 * 2;
    w.write_all(&byte_rate.to_le_bytes())?;
    w.write_all(&((channels * 2) as u16).to_le_bytes())?; // block align
    w.write_all(&16u16.to_le_bytes())?;

    w.write_all(b"data")?;
    w.write_all(&(data_len as u32).to_le_bytes())?;
    for i in 0..frames {
        for ch in clip.channels() {
            w.write_all(&quantize(ch[i]).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn quantize(s: f64) -> i16 {
    let clamped = s.clamp(-1.0, 1.0);
    (clamped * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}
