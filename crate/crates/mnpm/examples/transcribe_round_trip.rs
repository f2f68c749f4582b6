//! End to end: train a small model, transcribe a rendered clip to MIDI,
//! re-synthesize the transcription and transcribe it again.
//!
//! Run with: cargo run --release --example transcribe_round_trip

use mnpm::audio::write_wav;
use mnpm::augment::{LabeledSample, SampleInput};
use mnpm::midi::{NoteInterval, NoteIntervalSet};
use mnpm::mnpm::build_mnpm;
use mnpm::nn::{Activation, ModelKind, NetworkConfig, TrainConfig};
use mnpm::pipeline::{train_model, transcribe, SplitSamples, TranscribeParams};
use mnpm::spectrogram::{compute_spectrogram, SpectroConfig, Window};
use mnpm::synth::{render, SynthConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out_dir = std::path::Path::new("target/example_output");
    std::fs::create_dir_all(out_dir)?;

    let spectro = SpectroConfig::new(512, 256, Window::Hann, true, 8000)?;
    let synth_cfg = SynthConfig {
        sample_rate: 8000,
        ..SynthConfig::default()
    };

    // train on single notes around the target register
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut splits = SplitSamples::default();
    for i in 0..50usize {
        let note = 60 + (i % 13) as u8;
        let secs = rng.gen_range(0.6..=1.2);
        let p = NoteIntervalSet::new(vec![NoteInterval {
            note,
            onset: 0.05,
            offset: secs - 0.05,
        }])?;
        let clip = render(&p, &synth_cfg, secs)?;
        let spec = compute_spectrogram(&clip, &spectro)?;
        let labels = build_mnpm(&p, spec.frames(), &spectro);
        let sample =
            LabeledSample::new(SampleInput::Frames(spec.matrix().clone()), labels)?;
        if i % 5 == 4 {
            splits.val.push(sample);
        } else {
            splits.train.push(sample);
        }
    }
    let net_cfg = NetworkConfig {
        model: ModelKind::A,
        input_bins: spectro.bins(),
        context: 1,
        hidden: vec![64, 32],
        activation: Activation::Relu,
    };
    let train_cfg = TrainConfig {
        learning_rate: 0.25,
        epochs: 40,
        ..TrainConfig::default()
    };
    let (net, curve) = train_model(&splits, &net_cfg, &train_cfg)?;
    println!(
        "trained {} epochs, final val frame F1 {:.4}",
        curve.records.len(),
        curve.records.last().unwrap().val_frame_f1
    );

    // a fresh melody the model never saw
    let melody = NoteIntervalSet::new(vec![
        NoteInterval { note: 64, onset: 0.10, offset: 0.60 },
        NoteInterval { note: 67, onset: 0.70, offset: 1.20 },
        NoteInterval { note: 65, onset: 1.30, offset: 1.80 },
    ])?;
    let clip = render(&melody, &synth_cfg, 2.0)?;
    let wav = out_dir.join("melody.wav");
    write_wav(&clip, &wav)?;

    let params = TranscribeParams {
        threshold: 0.5,
        min_frames: 2,
        division: 480,
        tempo: 500_000,
    };
    let first_mid = out_dir.join("melody_transcribed.mid");
    let first = transcribe(&wav, &net, &first_mid, &spectro, &params)?;
    println!("transcription pass 1: {} notes", first.len());
    for iv in first.iter() {
        println!("  note {:>3}: {:.3} .. {:.3} s", iv.note, iv.onset, iv.offset);
    }

    // re-synthesize the transcription and transcribe again: the note
    // set should be stable
    let resynth = render(&first, &synth_cfg, first.max_offset() + 0.1)?;
    let resynth_wav = out_dir.join("melody_resynth.wav");
    write_wav(&resynth, &resynth_wav)?;
    let second_mid = out_dir.join("melody_transcribed2.mid");
    let second = transcribe(&resynth_wav, &net, &second_mid, &spectro, &params)?;

    let notes = |s: &NoteIntervalSet| {
        let mut v: Vec<u8> = s.iter().map(|iv| iv.note).collect();
        v.sort_unstable();
        v
    };
    println!(
        "pass 1 notes {:?} / pass 2 notes {:?} -> {}",
        notes(&first),
        notes(&second),
        if notes(&first) == notes(&second) {
            "stable"
        } else {
            "CHANGED"
        }
    );
    Ok(())
}
