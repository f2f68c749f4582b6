//! Render a tone, compute its spectrogram and export CSV + PGM.
//!
//! Run with: cargo run --release --example spectrogram_of_tone

use mnpm::midi::{NoteInterval, NoteIntervalSet};
use mnpm::spectrogram::{compute_spectrogram, export_csv, export_pgm, SpectroConfig};
use mnpm::synth::{note_freq, render, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out_dir = std::path::Path::new("target/example_output");
    std::fs::create_dir_all(out_dir)?;

    // one second of A4 followed by an A-major triad
    let notes = NoteIntervalSet::new(vec![
        NoteInterval { note: 69, onset: 0.0, offset: 1.0 },
        NoteInterval { note: 69, onset: 1.2, offset: 2.2 },
        NoteInterval { note: 73, onset: 1.2, offset: 2.2 },
        NoteInterval { note: 76, onset: 1.2, offset: 2.2 },
    ])?;
    let clip = render(&notes, &SynthConfig::default(), 2.4)?;

    let cfg = SpectroConfig::default();
    let spec = compute_spectrogram(&clip, &cfg)?;
    println!(
        "spectrogram: {} frames x {} bins ({} Hz per bin)",
        spec.frames(),
        spec.bins(),
        cfg.sample_rate as f64 / cfg.frame_length() as f64
    );

    // the strongest bin of an interior frame should sit at the A4
    // fundamental
    let frame = spec.matrix().row(20);
    let argmax = frame
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap()
        .0;
    let expected = (note_freq(69)? * cfg.frame_length() as f64 / cfg.sample_rate as f64).round();
    println!("frame 20 peak bin: {} (A4 fundamental bin: {})", argmax, expected);

    let csv = out_dir.join("tone_spectrogram.csv");
    let pgm = out_dir.join("tone_spectrogram.pgm");
    export_csv(&spec, &csv)?;
    export_pgm(&spec, &pgm)?;
    println!("wrote {} and {}", csv.display(), pgm.display());
    Ok(())
}
