//! Additive sine-stack rendering of note intervals: a deterministic
//! source of labeled audio at desk scale.

use std::f64::consts::PI;

use thiserror::Error;

use crate::audio::{AudioClip, AudioError};
use crate::midi::NoteIntervalSet;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("out of range: {0}")]
    Range(String),
    #[error("invalid synth config: {0}")]
    Config(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub sample_rate: u32,
    pub amplitude_per_note: f64,
    /// Partials per note with 1/h amplitude rolloff.
    pub harmonics: usize,
    pub attack_ms: f64,
    pub release_ms: f64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.sample_rate == 0 {
            return Err(SynthError::Config("sample_rate must be > 0".into()));
        }
        if self.harmonics < 1 {
            return Err(SynthError::Config("harmonics must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.amplitude_per_note) {
            return Err(SynthError::Config(
                "amplitude_per_note must lie in [0, 1]".into(),
            ));
        }
        if self.attack_ms < 0.0 || self.release_ms < 0.0 {
            return Err(SynthError::Config("envelope times must be >= 0".into()));
        }
        Ok(())
    }
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            sample_rate: 44100,
            amplitude_per_note: 0.25,
            harmonics: 4,
            // ramps long enough to keep note edges from clicking across
            // the whole spectrum
            attack_ms: 10.0,
            release_ms: 50.0,
        }
    }
}

/// Equal-tempered frequency of a MIDI note, A4 (note 69) = 440 Hz.
pub fn note_freq(note: u8) -> Result<f64, SynthError> {
    if note > 127 {
        return Err(SynthError::Range(format!("note {} > 127", note)));
    }
    Ok(440.0 * 2f64.powf((note as f64 - 69.0) / 12.0))
}

/// Renders intervals as enveloped harmonic sine stacks, summed in
/// (onset, note) order and peak-normalized to at most 0.9.
pub fn render(
    p: &NoteIntervalSet,
    cfg: &SynthConfig,
    duration: f64,
) -> Result<AudioClip, SynthError> {
    cfg.validate()?;
    if duration < 0.0 || !duration.is_finite() {
        return Err(SynthError::Range(format!("bad duration {}", duration)));
    }
    for iv in p.iter() {
        if iv.onset < 0.0 || iv.offset > duration + 1e-9 {
            return Err(SynthError::Range(format!(
                "interval [{}, {}) outside [0, {}]",
                iv.onset, iv.offset, duration
            )));
        }
    }

    let sr = cfg.sample_rate as f64;
    let n = (duration * sr).round() as usize;
    let mut buf = vec![0.0f64; n];

    let mut sorted: Vec<_> = p.iter().copied().collect();
    sorted.sort_by(|a, b| {
        a.onset
            .partial_cmp(&b.onset)
            .unwrap()
            .then(a.note.cmp(&b.note))
    });

    let attack = cfg.attack_ms / 1000.0;
    let release = cfg.release_ms / 1000.0;
    let nyquist = sr / 2.0;
    for iv in &sorted {
        let freq = note_freq(iv.note)?;
        let start = (iv.onset * sr).round() as usize;
        let end = ((iv.offset * sr).round() as usize).min(n);
        for (offset, sample) in buf[start..end].iter_mut().enumerate() {
            let t = (start + offset) as f64 / sr;
            let since_on = t - iv.onset;
            let until_off = iv.offset - t;
            let mut env = 1.0f64;
            if attack > 0.0 {
                env = env.min(since_on / attack);
            }
            if release > 0.0 {
                env = env.min(until_off / release);
            }
            let env = env.clamp(0.0, 1.0);
            if env == 0.0 {
                continue;
            }
            let mut v = 0.0;
            for h in 1..=cfg.harmonics {
                let hf = freq * h as f64;
                if hf >= nyquist {
                    break; // partials above Nyquist would alias
                }
                v += (2.0 * PI * hf * since_on).sin() / h as f64;
            }
            *sample += cfg.amplitude_per_note * env * v;
        }
    }

    let peak = buf.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if peak > 0.9 {
        let scale = 0.9 / peak;
        for v in &mut buf {
            *v *= scale;
        }
    }
    Ok(AudioClip::mono(buf, cfg.sample_rate)?)
}
