//! Walk through the augmentation catalog: the 8 lossless 2D transforms,
//! time reversal with paired labels, crop bootstrapping and calibrated
//! noise.
//!
//! Run with: cargo run --release --example augmentation_catalog

use mnpm::audio::AudioClip;
use mnpm::augment::{
    add_noise, crop_bootstrap, dihedral_transform, expand_dataset, time_reverse, LabeledSample,
    NoiseKind, PlanOp, SampleInput,
};
use mnpm::matrix::Matrix;
use mnpm::midi::{NoteInterval, NoteIntervalSet};
use mnpm::mnpm::build_mnpm;
use mnpm::spectrogram::{compute_spectrogram, SpectroConfig};
use mnpm::synth::{render, SynthConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn print_matrix(label: &str, m: &Matrix) {
    println!("{} ({}x{}):", label, m.rows(), m.cols());
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{:>2}", v)).collect();
        println!("  [{}]", row.join(" "));
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // the 8 lossless transforms of a generic 2x3 matrix
    let m = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let names = [
        "identity",
        "rot90",
        "rot180",
        "rot270",
        "flip-rows",
        "flip-cols",
        "transpose",
        "anti-transpose",
    ];
    for (index, name) in names.iter().enumerate() {
        print_matrix(
            &format!("dihedral {} = {}", index, name),
            &dihedral_transform(&m, index as u8)?,
        );
    }

    // a labeled sample: C4 then E4, spectrogram paired with its labels
    let cfg = SpectroConfig::default();
    let p = NoteIntervalSet::new(vec![
        NoteInterval { note: 60, onset: 0.05, offset: 0.5 },
        NoteInterval { note: 64, onset: 0.55, offset: 1.0 },
    ])?;
    let clip = render(&p, &SynthConfig::default(), 1.05)?;
    let spec = compute_spectrogram(&clip, &cfg)?;
    let labels = build_mnpm(&p, spec.frames(), &cfg);
    let sample = LabeledSample::new(SampleInput::Frames(spec.matrix().clone()), labels)?;
    println!("\nbase sample: {} frames", sample.frames());

    // time reversal flips inputs and labels together
    let reversed = time_reverse(&sample);
    let first_active = |s: &LabeledSample, note: usize| {
        (0..s.frames()).find(|&i| s.labels.matrix().get(i, note) == 1.0)
    };
    println!(
        "note 60 first active frame: {:?} forward, {:?} reversed",
        first_active(&sample, 60),
        first_active(&reversed, 60)
    );

    // crop bootstrapping draws random windows, labels cropped alongside
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let crops = crop_bootstrap(&sample, &mut rng, 3, 20)?;
    for (i, c) in crops.iter().enumerate() {
        println!("crop {}: {} frames, provenance {:?}", i, c.frames(), c.provenance);
    }

    // a full plan multiplies the dataset
    let plan = vec![
        PlanOp::TimeReverse,
        PlanOp::Crop { count: 3, min_frames: 20, seed: 42 },
    ];
    let expanded = expand_dataset(&[sample], &plan)?;
    println!("1 sample under [time_reverse, crop x3] -> {} samples", expanded.len());

    // calibrated noise in the waveform domain
    for (kind, name) in [(NoiseKind::White, "white"), (NoiseKind::Pink, "pink")] {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let noisy = add_noise(&clip, kind, 20.0, &mut rng)?;
        let measured = measured_snr(&clip, &noisy);
        println!("{} noise at 20 dB target: measured {:.2} dB", name, measured);
    }
    Ok(())
}

fn measured_snr(clean: &AudioClip, noisy: &AudioClip) -> f64 {
    let p_signal = clean.power();
    let p_noise: f64 = clean.channels()[0]
        .iter()
        .zip(&noisy.channels()[0])
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / clean.len() as f64;
    10.0 * (p_signal / p_noise).log10()
}
