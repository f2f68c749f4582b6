//! Build the note probability matrix from intervals, render it as an
//! image, and invert it back into intervals.
//!
//! Run with: cargo run --release --example note_matrix

use mnpm::midi::{NoteInterval, NoteIntervalSet};
use mnpm::mnpm::{build_mnpm, postprocess, render_mnpm_image, save_mnpm};
use mnpm::spectrogram::SpectroConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out_dir = std::path::Path::new("target/example_output");
    std::fs::create_dir_all(out_dir)?;

    let cfg = SpectroConfig::default();
    let intervals = NoteIntervalSet::new(vec![
        NoteInterval { note: 60, onset: 0.10, offset: 0.60 },
        NoteInterval { note: 64, onset: 0.35, offset: 0.85 },
        NoteInterval { note: 67, onset: 0.60, offset: 1.10 },
        NoteInterval { note: 72, onset: 0.85, offset: 1.35 },
    ])?;

    // a 1.5 s clip at the default grid
    let frames = cfg.num_frames((1.5 * cfg.sample_rate as f64) as usize);
    let matrix = build_mnpm(&intervals, frames, &cfg);
    let active: usize = matrix.matrix().data().iter().filter(|&&v| v == 1.0).count();
    println!(
        "matrix: {} frames x 128 notes, {} active cells",
        matrix.rows(),
        active
    );

    let img = out_dir.join("note_matrix.pgm");
    render_mnpm_image(&matrix, &img)?;
    save_mnpm(&matrix, &out_dir.join("note_matrix.mnpm"))?;
    println!("wrote {} (white = silent, black = sounding)", img.display());

    // invert the matrix back into intervals
    let recovered = postprocess(&matrix, 0.5, 2);
    println!("recovered {} intervals:", recovered.len());
    for iv in recovered.iter() {
        println!("  note {:>3}: {:.3} .. {:.3} s", iv.note, iv.onset, iv.offset);
    }
    let hop = cfg.hop_seconds();
    for (a, b) in intervals.iter().zip(recovered.iter()) {
        assert_eq!(a.note, b.note);
        assert!((a.onset - b.onset).abs() <= hop);
    }
    println!("boundary error stays within one hop ({:.4} s)", hop);
    Ok(())
}
