//! Measure the generalization gap between chords a model trained on and
//! note combinations it never saw.
//!
//! Run with: cargo run --release --example unseen_chords

use mnpm::nn::{Activation, TrainConfig};
use mnpm::pipeline::{unseen_combination_study, StudyConfig};
use mnpm::spectrogram::{SpectroConfig, Window};
use mnpm::synth::SynthConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out_dir = std::path::Path::new("target/example_output");
    std::fs::create_dir_all(out_dir)?;

    // two-note chords over one octave; train on 8 chords, hold out 4
    let train_chords: Vec<Vec<u8>> = vec![
        vec![60, 64],
        vec![60, 67],
        vec![62, 65],
        vec![62, 69],
        vec![64, 67],
        vec![65, 69],
        vec![67, 71],
        vec![60, 69],
    ];
    let test_chords: Vec<Vec<u8>> = vec![
        vec![60, 65],
        vec![62, 67],
        vec![64, 69],
        vec![65, 71],
    ];

    let cfg = StudyConfig {
        spectro: SpectroConfig::new(512, 256, Window::Hann, true, 8000)?,
        synth: SynthConfig {
            sample_rate: 8000,
            ..SynthConfig::default()
        },
        train: TrainConfig {
            learning_rate: 0.1,
            epochs: 12,
            seed: 11,
            ..TrainConfig::default()
        },
        hidden: vec![64, 32],
        activation: Activation::Relu,
        clips_per_chord: 3,
        eval_clips_per_chord: 2,
        clip_secs: (0.5, 1.2),
        threshold: 0.5,
    };

    let report = unseen_combination_study(&train_chords, &test_chords, &cfg)?;
    print!("{}", report.render_text());
    let csv = out_dir.join("unseen_chords.csv");
    report.export_csv(&csv)?;
    println!("wrote {}", csv.display());
    Ok(())
}
