//! The note probability matrix: timesteps × 128 per-note activations,
//! built from note intervals, aligned to spectrogram frames, and
//! invertible back to intervals by thresholded run extraction.

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::matrix::Matrix;
use crate::midi::{NoteInterval, NoteIntervalSet};
use crate::pgm;
use crate::spectrogram::SpectroConfig;

/// MIDI note space: every matrix has exactly this many columns.
pub const NUM_NOTES: usize = 128;

const MAGIC: &[u8; 8] = b"MNPM0001";

#[derive(Debug, Error)]
pub enum MnpmError {
    #[error("bad MNPM file: {0}")]
    Format(String),
    #[error("invalid matrix: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Per-frame note probabilities plus the frame-center times that anchor
/// rows to seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct Mnpm {
    data: Matrix,
    frame_times: Vec<f64>,
}

impl Mnpm {
    /// Wraps a frames × 128 matrix, deriving row times from the config's
    /// frame grid.
    pub fn new(data: Matrix, cfg: &SpectroConfig) -> Result<Self, MnpmError> {
        let frame_times = (0..data.rows()).map(|i| cfg.frame_center_time(i)).collect();
        Mnpm::from_parts(data, frame_times)
    }

    pub fn from_parts(data: Matrix, frame_times: Vec<f64>) -> Result<Self, MnpmError> {
        if data.cols() != NUM_NOTES {
            return Err(MnpmError::Invalid(format!(
                "matrix has {} columns, must be {}",
                data.cols(),
                NUM_NOTES
            )));
        }
        if frame_times.len() != data.rows() {
            return Err(MnpmError::Invalid(format!(
                "{} frame times for {} rows",
                frame_times.len(),
                data.rows()
            )));
        }
        if data.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(MnpmError::Invalid(
                "probabilities must lie in [0, 1]".into(),
            ));
        }
        if frame_times.iter().any(|t| !t.is_finite() || *t < 0.0)
            || frame_times.windows(2).any(|w| w[1] < w[0])
        {
            return Err(MnpmError::Invalid(
                "frame times must be non-negative and non-decreasing".into(),
            ));
        }
        Ok(Mnpm { data, frame_times })
    }

    pub fn rows(&self) -> usize {
        self.data.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.data
    }

    pub fn frame_times(&self) -> &[f64] {
        &self.frame_times
    }

    /// New matrix with reversed row order; the frame grid itself is
    /// unchanged (row i still sits at time `frame_times[i]`).
    pub fn reverse_rows(&self) -> Mnpm {
        Mnpm {
            data: self.data.reverse_rows(),
            frame_times: self.frame_times.clone(),
        }
    }

    /// Rows `start..end` with their original times kept.
    pub fn slice_rows(&self, start: usize, end: usize) -> Mnpm {
        Mnpm {
            data: self.data.slice_rows(start, end),
            frame_times: self.frame_times[start..end].to_vec(),
        }
    }
}

/// Builds the binary note matrix from intervals: entry (i, j) is 1 iff
/// some interval on note j covers frame i's center time under the
/// half-open rule `onset <= t < offset`.
pub fn build_mnpm(p: &NoteIntervalSet, num_frames: usize, cfg: &SpectroConfig) -> Mnpm {
    let mut data = Matrix::zeros(num_frames, NUM_NOTES);
    for iv in p.iter() {
        // candidate frame range from the grid algebra, padded by one so
        // the per-frame predicate below is the only boundary authority
        let sr = cfg.sample_rate as f64;
        let half = cfg.frame_length() as f64 / 2.0;
        let lo = ((iv.onset * sr - half) / cfg.hop() as f64).floor() as i64 - 1;
        let hi = ((iv.offset * sr - half) / cfg.hop() as f64).ceil() as i64 + 1;
        let lo = lo.max(0) as usize;
        let hi = (hi.max(0) as usize).min(num_frames);
        for i in lo..hi {
            let t = cfg.frame_center_time(i);
            if iv.onset <= t && t < iv.offset {
                data.set(i, iv.note as usize, 1.0);
            }
        }
    }
    let frame_times = (0..num_frames).map(|i| cfg.frame_center_time(i)).collect();
    Mnpm { data, frame_times }
}

/// Inverts a probability matrix to intervals: per note, maximal runs of
/// consecutive frames at or above `threshold` become intervals spanning
/// [first-frame center, one-past-last-frame center); runs shorter than
/// `min_frames` are discarded.
pub fn postprocess(m: &Mnpm, threshold: f64, min_frames: usize) -> NoteIntervalSet {
    let rows = m.rows();
    let times = m.frame_times();
    let step = if rows >= 2 { times[1] - times[0] } else { 0.0 };
    let end_time = |last: usize| {
        if last + 1 < rows {
            times[last + 1]
        } else {
            times[last] + step
        }
    };

    let mut intervals = Vec::new();
    for note in 0..NUM_NOTES {
        let mut run_start: Option<usize> = None;
        for i in 0..=rows {
            let active = i < rows && m.matrix().get(i, note) >= threshold;
            match (active, run_start) {
                (true, None) => run_start = Some(i),
                (false, Some(start)) => {
                    let len = i - start;
                    if len >= min_frames {
                        let onset = times[start];
                        let offset = end_time(i - 1);
                        if offset > onset {
                            intervals.push(NoteInterval {
                                note: note as u8,
                                onset,
                                offset,
                            });
                        }
                    }
                    run_start = None;
                }
                _ => {}
            }
        }
    }
    intervals.sort_by(|a, b| {
        a.onset
            .partial_cmp(&b.onset)
            .unwrap()
            .then(a.note.cmp(&b.note))
    });
    NoteIntervalSet::new(intervals).expect("postprocess output satisfies interval invariants")
}

/// Saves the matrix: magic, little-endian u32 rows and cols, the f64
/// frame-time array, then the matrix as row-major f32.
pub fn save_mnpm(m: &Mnpm, path: &Path) -> Result<(), MnpmError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(m.rows() as u32).to_le_bytes())?;
    w.write_all(&(NUM_NOTES as u32).to_le_bytes())?;
    for &t in m.frame_times() {
        w.write_all(&t.to_le_bytes())?;
    }
    for &v in m.matrix().data() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_mnpm(path: &Path) -> Result<Mnpm, MnpmError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 16 {
        return Err(MnpmError::Format("shorter than header".into()));
    }
    if &bytes[0..8] != MAGIC {
        return Err(MnpmError::Format(format!(
            "bad magic {:?}",
            String::from_utf8_lossy(&bytes[0..8])
        )));
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if cols != NUM_NOTES {
        return Err(MnpmError::Format(format!(
            "{} columns, must be {}",
            cols, NUM_NOTES
        )));
    }
    let expected = 16 + rows * 8 + rows * cols * 4;
    if bytes.len() != expected {
        return Err(MnpmError::Format(format!(
            "file is {} bytes, expected {}",
            bytes.len(),
            expected
        )));
    }
    let mut frame_times = Vec::with_capacity(rows);
    let mut pos = 16;
    for _ in 0..rows {
        frame_times.push(f64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap()));
        pos += 8;
    }
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(f32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as f64);
        pos += 4;
    }
    Mnpm::from_parts(Matrix::from_vec(rows, cols, data), frame_times)
}

/// CSV mirror of the matrix: one row per timestep, 128 columns.
pub fn export_csv(m: &Mnpm, path: &Path) -> Result<(), MnpmError> {
    let mut w = BufWriter::new(File::create(path)?);
    for i in 0..m.rows() {
        let row = m.matrix().row(i);
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                write!(w, ",")?;
            }
            write!(w, "{}", v)?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// PGM rendering with probability 0 as white and 1 as black:
/// `pixel = 255 * (1 - m_ij)`.
pub fn render_mnpm_image(m: &Mnpm, path: &Path) -> Result<(), MnpmError> {
    if m.rows() == 0 {
        return Err(MnpmError::Invalid("cannot render an empty matrix".into()));
    }
    let pixels: Vec<u8> = m
        .matrix()
        .data()
        .iter()
        .map(|&v| (255.0 * (1.0 - v)).round() as u8)
        .collect();
    pgm::write_pgm(path, NUM_NOTES, m.rows(), &pixels)?;
    Ok(())
}
