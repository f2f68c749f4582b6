//! Write a MIDI file from note intervals, parse it back and extract the
//! intervals again.
//!
//! Run with: cargo run --release --example midi_round_trip

use mnpm::midi::{encode_smf, parse_smf, NoteInterval, NoteIntervalSet};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // a C major arpeggio with a sustained bass note underneath
    let original = NoteIntervalSet::new(vec![
        NoteInterval { note: 36, onset: 0.0, offset: 2.0 },
        NoteInterval { note: 60, onset: 0.0, offset: 0.5 },
        NoteInterval { note: 64, onset: 0.5, offset: 1.0 },
        NoteInterval { note: 67, onset: 1.0, offset: 1.5 },
        NoteInterval { note: 72, onset: 1.5, offset: 2.0 },
    ])?;

    let bytes = encode_smf(&original, 480, 500_000)?;
    println!("encoded {} intervals into {} bytes of SMF", original.len(), bytes.len());

    let parsed = parse_smf(&bytes)?;
    println!(
        "parsed: format {}, division {}, {} track(s), {} events",
        parsed.format,
        parsed.division,
        parsed.tracks.len(),
        parsed.tracks[0].len()
    );

    let (recovered, unmatched) = parsed.extract_intervals();
    assert_eq!(unmatched, 0);
    println!("{:<6} {:>8} {:>8}", "note", "onset", "offset");
    for iv in recovered.iter() {
        println!("{:<6} {:>8.3} {:>8.3}", iv.note, iv.onset, iv.offset);
    }

    let max_drift = original
        .iter()
        .zip(recovered.iter())
        .map(|(a, b)| (a.onset - b.onset).abs().max((a.offset - b.offset).abs()))
        .fold(0.0f64, f64::max);
    println!("worst timing drift after the round trip: {:.6} s", max_drift);
    Ok(())
}
