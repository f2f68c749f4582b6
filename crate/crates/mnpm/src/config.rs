//! Global `key = value` configuration file shared by every subcommand;
//! per-command flags override file values.

use std::path::Path;

use thiserror::Error;

use crate::nn::{Activation, ModelKind, NetworkConfig, TrainConfig};
use crate::spectrogram::{SpectroConfig, SpectroError, Window};
use crate::synth::SynthConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Resolved application configuration with every knob at its default
/// unless the file (or a flag) set it.
#[derive(Debug, Clone, PartialEq)]
pub struct AppConfig {
    pub sample_rate: u32,
    pub frame_length: usize,
    pub hop: usize,
    pub window: Window,
    pub log_scale: bool,
    pub context: usize,
    pub model: ModelKind,
    /// None picks the per-model default widths.
    pub hidden: Option<Vec<usize>>,
    pub activation: Activation,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub validation_fraction: f64,
    pub threshold: f64,
    pub min_frames: usize,
    pub harmonics: usize,
    pub amplitude_per_note: f64,
    pub attack_ms: f64,
    pub release_ms: f64,
    pub division: u16,
    pub tempo: u32,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            sample_rate: 44100,
            frame_length: 2048,
            hop: 512,
            window: Window::Hann,
            log_scale: true,
            context: 5,
            model: ModelKind::A,
            hidden: None,
            activation: Activation::Relu,
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 64,
            epochs: 50,
            seed: 0,
            validation_fraction: 0.2,
            threshold: 0.5,
            min_frames: 2,
            harmonics: 4,
            amplitude_per_note: 0.25,
            attack_ms: 10.0,
            release_ms: 50.0,
            division: 480,
            tempo: 500_000,
        }
    }
}

impl AppConfig {
    pub fn parse(text: &str) -> Result<AppConfig, ConfigError> {
        let mut cfg = AppConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
                line: line_no,
                msg: format!("expected key = value, got '{}'", line),
            })?;
            cfg.apply(key.trim(), value.trim(), line_no)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<AppConfig, ConfigError> {
        AppConfig::parse(&std::fs::read_to_string(path)?)
    }

    fn apply(&mut self, key: &str, value: &str, line: usize) -> Result<(), ConfigError> {
        let bad = |msg: String| ConfigError::Parse { line, msg };
        macro_rules! num {
            ($ty:ty) => {
                value
                    .parse::<$ty>()
                    .map_err(|_| bad(format!("bad value '{}' for {}", value, key)))?
            };
        }
        match key {
            "sample_rate" => self.sample_rate = num!(u32),
            "frame_length" => self.frame_length = num!(usize),
            "hop" => self.hop = num!(usize),
            "window" => {
                self.window = match value {
                    "hann" => Window::Hann,
                    "rectangular" => Window::Rectangular,
                    _ => return Err(bad(format!("unknown window '{}'", value))),
                }
            }
            "log_scale" => {
                self.log_scale = value
                    .parse::<bool>()
                    .map_err(|_| bad(format!("bad value '{}' for log_scale", value)))?
            }
            "context" => self.context = num!(usize),
            "model" => {
                self.model = match value {
                    "A" | "a" => ModelKind::A,
                    "B" | "b" => ModelKind::B,
                    "C" | "c" => ModelKind::C,
                    _ => return Err(bad(format!("unknown model '{}'", value))),
                }
            }
            "hidden" => {
                let widths: Result<Vec<usize>, _> =
                    value.split(',').map(|s| s.trim().parse::<usize>()).collect();
                self.hidden = Some(
                    widths.map_err(|_| bad(format!("bad hidden widths '{}'", value)))?,
                );
            }
            "activation" => {
                self.activation = match value {
                    "relu" => Activation::Relu,
                    "sigmoid" => Activation::Sigmoid,
                    "tanh" => Activation::Tanh,
                    _ => return Err(bad(format!("unknown activation '{}'", value))),
                }
            }
            "learning_rate" => self.learning_rate = num!(f64),
            "momentum" => self.momentum = num!(f64),
            "batch_size" => self.batch_size = num!(usize),
            "epochs" => self.epochs = num!(usize),
            "seed" => self.seed = num!(u64),
            "validation_fraction" => self.validation_fraction = num!(f64),
            "threshold" => self.threshold = num!(f64),
            "min_frames" => self.min_frames = num!(usize),
            "harmonics" => self.harmonics = num!(usize),
            "amplitude_per_note" => self.amplitude_per_note = num!(f64),
            "attack_ms" => self.attack_ms = num!(f64),
            "release_ms" => self.release_ms = num!(f64),
            "division" => self.division = num!(u16),
            "tempo" => self.tempo = num!(u32),
            _ => return Err(bad(format!("unknown key '{}'", key))),
        }
        Ok(())
    }

    pub fn spectro(&self) -> Result<SpectroConfig, SpectroError> {
        SpectroConfig::new(
            self.frame_length,
            self.hop,
            self.window,
            self.log_scale,
            self.sample_rate,
        )
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            sample_rate: self.sample_rate,
            amplitude_per_note: self.amplitude_per_note,
            harmonics: self.harmonics,
            attack_ms: self.attack_ms,
            release_ms: self.release_ms,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            validation_fraction: self.validation_fraction,
        }
    }

    /// Hidden widths for a model when the file does not override them.
    pub fn hidden_for(&self, model: ModelKind) -> Vec<usize> {
        if let Some(h) = &self.hidden {
            return h.clone();
        }
        match model {
            ModelKind::A => vec![512, 256],
            ModelKind::B => vec![1024, 256],
            // shared per-frame width first, then the head
            ModelKind::C => vec![256, 512],
        }
    }

    pub fn network(&self, model: ModelKind, input_bins: usize) -> NetworkConfig {
        NetworkConfig {
            model,
            input_bins,
            context: if model == ModelKind::A { 1 } else { self.context },
            hidden: self.hidden_for(model),
            activation: self.activation,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_empty_file() {
        assert_eq!(AppConfig::parse("").unwrap(), AppConfig::default());
        assert_eq!(
            AppConfig::parse("# just a comment\n\n").unwrap(),
            AppConfig::default()
        );
    }

    #[test]
    fn values_parse_and_apply() {
        let cfg = AppConfig::parse(
            "sample_rate = 22050\nhop=256\nmodel = B\nhidden = 64, 32\nwindow = rectangular\n",
        )
        .unwrap();
        assert_eq!(cfg.sample_rate, 22050);
        assert_eq!(cfg.hop, 256);
        assert_eq!(cfg.model, ModelKind::B);
        assert_eq!(cfg.hidden, Some(vec![64, 32]));
        assert_eq!(cfg.window, Window::Rectangular);
    }

    #[test]
    fn unknown_key_reports_line_number() {
        let err = AppConfig::parse("sample_rate = 44100\nbogus_key = 3\n").unwrap_err();
        match err {
            ConfigError::Parse { line, msg } => {
                assert_eq!(line, 2);
                assert!(msg.contains("bogus_key"));
            }
            other => panic!("unexpected error {:?}", other),
        }
    }

    #[test]
    fn bad_value_reports_line_number() {
        let err = AppConfig::parse("hop = fast\n").unwrap_err();
        assert!(matches!(err, ConfigError::Parse { line: 1, .. }));
    }

    #[test]
    fn per_model_hidden_defaults() {
        let cfg = AppConfig::default();
        assert_eq!(cfg.hidden_for(ModelKind::A), vec![512, 256]);
        assert_eq!(cfg.hidden_for(ModelKind::B), vec![1024, 256]);
        assert_eq!(cfg.hidden_for(ModelKind::C), vec![256, 512]);
        assert_eq!(cfg.network(ModelKind::A, 1025).context, 1);
        assert_eq!(cfg.network(ModelKind::B, 1025).context, 5);
    }
}
