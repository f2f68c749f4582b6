//! Music transcription toolkit: audio and MIDI parsing, spectrograms, note
//! probability matrices, data augmentation and small feedforward networks.
//!
//! The processing chain runs WAV audio through a windowed-DFT spectrogram,
//! maps frames to per-note activation probabilities with a trained network,
//! and postprocesses the probability matrix back into timed note intervals
//! that can be written as a Standard MIDI File. Training labels come from
//! MIDI files aligned to the same frame grid. The [`augment`] module holds
//! the lossless (dihedral, time-reversal, crop) and lossy (noise) dataset
//! transforms; [`pipeline`] ties everything together.
//!
//! See the `examples/` directory for one runnable program per capability,
//! and the `mnpm` binary for the scriptable command-line interface.

pub mod audio;
pub mod augment;
pub mod cli;
pub mod config;
pub mod matrix;
pub mod midi;
pub mod mnpm;
pub mod nn;
pub mod pgm;
pub mod pipeline;
pub mod spectrogram;
pub mod synth;

pub use audio::AudioClip;
pub use augment::{AugmentOp, LabeledSample};
pub use matrix::Matrix;
pub use midi::{MidiFile, NoteInterval, NoteIntervalSet, TempoMap};
pub use mnpm::Mnpm;
pub use nn::{Network, NetworkConfig, TrainConfig};
pub use spectrogram::{ContextTensor, SpectroConfig, Spectrogram};
pub use synth::SynthConfig;
