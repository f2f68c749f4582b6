//! Render a short chord progression to a WAV file.
//!
//! Run with: cargo run --release --example synthesize_chords

use mnpm::audio::write_wav;
use mnpm::midi::{write_smf, NoteInterval, NoteIntervalSet};
use mnpm::synth::{render, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out_dir = std::path::Path::new("target/example_output");
    std::fs::create_dir_all(out_dir)?;

    // I-vi-IV-V in C, one chord per second
    let progression: [&[u8]; 4] = [
        &[60, 64, 67],
        &[57, 60, 64],
        &[53, 57, 60],
        &[55, 59, 62],
    ];
    let mut intervals = Vec::new();
    for (i, chord) in progression.iter().enumerate() {
        let onset = i as f64;
        for &note in *chord {
            intervals.push(NoteInterval {
                note,
                onset,
                offset: onset + 0.95,
            });
        }
    }
    let p = NoteIntervalSet::new(intervals)?;

    let cfg = SynthConfig::default();
    let clip = render(&p, &cfg, 4.0)?;
    let peak = clip.channels()[0].iter().fold(0.0f64, |m, &s| m.max(s.abs()));
    println!(
        "rendered {} notes: {} samples at {} Hz, peak {:.3}",
        p.len(),
        clip.len(),
        clip.sample_rate(),
        peak
    );

    let wav = out_dir.join("progression.wav");
    let mid = out_dir.join("progression.mid");
    write_wav(&clip, &wav)?;
    write_smf(&p, 480, 500_000, &mid)?;
    println!("wrote {} and {}", wav.display(), mid.display());
    Ok(())
}
