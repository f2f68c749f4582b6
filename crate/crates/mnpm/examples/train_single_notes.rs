//! Train a small frame-level model on synthesized single notes and
//! export its learning curve.
//!
//! Run with: cargo run --release --example train_single_notes

use mnpm::augment::{LabeledSample, SampleInput};
use mnpm::midi::{NoteInterval, NoteIntervalSet};
use mnpm::mnpm::build_mnpm;
use mnpm::nn::{Activation, ModelKind, NetworkConfig, TrainConfig};
use mnpm::pipeline::{evaluate, train_model, SplitSamples};
use mnpm::spectrogram::{compute_spectrogram, SpectroConfig, Window};
use mnpm::synth::{render, SynthConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out_dir = std::path::Path::new("target/example_output");
    std::fs::create_dir_all(out_dir)?;

    // desk scale: 8 kHz audio, 60 clips over one and a half octaves
    let spectro = SpectroConfig::new(512, 256, Window::Hann, true, 8000)?;
    let synth_cfg = SynthConfig {
        sample_rate: 8000,
        ..SynthConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut samples = Vec::new();
    for i in 0..60usize {
        let note = 55 + (i % 18) as u8;
        let secs = rng.gen_range(0.6..=1.2);
        let p = NoteIntervalSet::new(vec![NoteInterval {
            note,
            onset: 0.05,
            offset: secs - 0.05,
        }])?;
        let clip = render(&p, &synth_cfg, secs)?;
        let spec = compute_spectrogram(&clip, &spectro)?;
        let labels = build_mnpm(&p, spec.frames(), &spectro);
        samples.push(LabeledSample::new(
            SampleInput::Frames(spec.matrix().clone()),
            labels,
        )?);
    }
    let mut splits = SplitSamples::default();
    for (i, s) in samples.into_iter().enumerate() {
        if i % 5 == 4 {
            splits.val.push(s);
        } else {
            splits.train.push(s);
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
    println!(
        "training model A ({} -> 64 -> 32 -> 128) on {} clips",
        spectro.bins(),
        splits.train.len()
    );
    let (net, curve) = train_model(&splits, &net_cfg, &train_cfg)?;
    for r in &curve.records {
        println!(
            "epoch {:>2}: train loss {:.5}  val loss {:.5}  val frame F1 {:.4}",
            r.epoch, r.train_loss, r.val_loss, r.val_frame_f1
        );
    }

    let metrics = evaluate(&net, &splits.val, 0.5)?;
    println!(
        "validation: frame P {:.4} / R {:.4} / F1 {:.4}, note F1 {:.4}",
        metrics.frame_precision, metrics.frame_recall, metrics.frame_f1, metrics.note_f1
    );

    let curve_path = out_dir.join("single_notes_curve.csv");
    curve.export_csv(&curve_path)?;
    mnpm::nn::save_checkpoint(&net, &out_dir.join("single_notes.ckpt"))?;
    println!("wrote {} and single_notes.ckpt", curve_path.display());
    Ok(())
}
