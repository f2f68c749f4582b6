//! Magnitude spectrograms from windowed DFT frames, and the context
//! tensors that stack neighboring frames into one network input.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::audio::AudioClip;
use crate::matrix::Matrix;
use crate::pgm;

#[derive(Debug, Error)]
pub enum SpectroError {
    #[error("invalid length: {0}")]
    InvalidLength(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid context: {0}")]
    InvalidContext(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("multichannel clip: mix down or stack per-channel spectrograms")]
    Multichannel,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    Hann,
    Rectangular,
}

/// Analysis parameters for [`compute_spectrogram`].
#[derive(Debug, Clone, PartialEq)]
pub struct SpectroConfig {
    frame_length: usize,
    hop: usize,
    pub window: Window,
    pub log_scale: bool,
    pub sample_rate: u32,
}

impl SpectroConfig {
    pub fn new(
        frame_length: usize,
        hop: usize,
        window: Window,
        log_scale: bool,
        sample_rate: u32,
    ) -> Result<Self, SpectroError> {
        if frame_length < 2 || !frame_length.is_power_of_two() {
            return Err(SpectroError::InvalidConfig(format!(
                "frame_length {} must be a power of two >= 2",
                frame_length
            )));
        }
        if hop == 0 || hop > frame_length {
            return Err(SpectroError::InvalidConfig(format!(
                "hop {} must satisfy 0 < hop <= frame_length {}",
                hop, frame_length
            )));
        }
        if sample_rate == 0 {
            return Err(SpectroError::InvalidConfig("sample_rate must be > 0".into()));
        }
        Ok(SpectroConfig {
            frame_length,
            hop,
            window,
            log_scale,
            sample_rate,
        })
    }

    pub fn frame_length(&self) -> usize {
        self.frame_length
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn bins(&self) -> usize {
        self.frame_length / 2 + 1
    }

    /// Center time of frame `i` in seconds: frame `i` covers samples
    /// `[i*hop, i*hop + frame_length)`.
    pub fn frame_center_time(&self, i: usize) -> f64 {
        (i as f64 * self.hop as f64 + self.frame_length as f64 / 2.0) / self.sample_rate as f64
    }

    /// Seconds between consecutive frame centers.
    pub fn hop_seconds(&self) -> f64 {
        self.hop as f64 / self.sample_rate as f64
    }

    pub fn num_frames(&self, signal_len: usize) -> usize {
        if signal_len >= self.frame_length {
            (signal_len - self.frame_length) / self.hop + 1
        } else {
            0
        }
    }
}

impl Default for SpectroConfig {
    fn default() -> Self {
        SpectroConfig::new(2048, 512, Window::Hann, true, 44100).unwrap()
    }
}

/// Time-frequency magnitudes: one frames × bins matrix per channel
/// (mono spectrograms have exactly one).
#[derive(Debug, Clone)]
pub struct Spectrogram {
    channels: Vec<Matrix>,
    config: SpectroConfig,
}

impl Spectrogram {
    pub fn frames(&self) -> usize {
        self.channels[0].rows()
    }

    pub fn bins(&self) -> usize {
        self.channels[0].cols()
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn channel(&self, i: usize) -> &Matrix {
        &self.channels[i]
    }

    /// First (for mono: only) channel.
    pub fn matrix(&self) -> &Matrix {
        &self.channels[0]
    }

    pub fn config(&self) -> &SpectroConfig {
        &self.config
    }
}

/// Hann weights `w[i] = 0.5 * (1 - cos(2*pi*i/(n-1)))`.
pub fn hann_window(n: usize) -> Result<Vec<f64>, SpectroError> {
    if n < 2 {
        return Err(SpectroError::InvalidLength(format!(
            "window length {} must be >= 2",
            n
        )));
    }
    Ok((0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / (n - 1) as f64).cos()))
        .collect())
}

/// In-place radix-2 FFT over `re`/`im` (equal power-of-two length).
pub fn fft(re: &mut [f64], im: &mut [f64]) -> Result<(), SpectroError> {
    let n = re.len();
    if n != im.len() {
        return Err(SpectroError::InvalidLength(
            "re/im length mismatch".into(),
        ));
    }
    if !n.is_power_of_two() {
        return Err(SpectroError::InvalidLength(format!(
            "FFT length {} is not a power of two",
            n
        )));
    }
    if n <= 1 {
        return Ok(());
    }

    // bit-reversal permutation
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }

    let mut len = 2;
    while len <= n {
        let ang = -2.0 * PI / len as f64;
        let (w_re, w_im) = (ang.cos(), ang.sin());
        for start in (0..n).step_by(len) {
            let mut cur_re = 1.0;
            let mut cur_im = 0.0;
            for k in 0..len / 2 {
                let a = start + k;
                let b = a + len / 2;
                let t_re = re[b] * cur_re - im[b] * cur_im;
                let t_im = re[b] * cur_im + im[b] * cur_re;
                re[b] = re[a] - t_re;
                im[b] = im[a] - t_im;
                re[a] += t_re;
                im[a] += t_im;
                let next_re = cur_re * w_re - cur_im * w_im;
                cur_im = cur_re * w_im + cur_im * w_re;
                cur_re = next_re;
            }
        }
        len <<= 1;
    }
    Ok(())
}

/// Inverse FFT; undoes [`fft`] including the 1/N scale.
pub fn ifft(re: &mut [f64], im: &mut [f64]) -> Result<(), SpectroError> {
    for v in im.iter_mut() {
        *v = -*v;
    }
    fft(re, im)?;
    let scale = 1.0 / re.len() as f64;
    for v in re.iter_mut() {
        *v *= scale;
    }
    for v in im.iter_mut() {
        *v = -*v * scale;
    }
    Ok(())
}

/// Magnitudes `|X_k|` for `k = 0..N/2` of a real frame of power-of-two
/// length N.
pub fn dft_magnitudes(frame: &[f64]) -> Result<Vec<f64>, SpectroError> {
    let n = frame.len();
    if n == 0 || !n.is_power_of_two() {
        return Err(SpectroError::InvalidLength(format!(
            "frame length {} is not a power of two",
            n
        )));
    }
    let mut re = frame.to_vec();
    let mut im = vec![0.0; n];
    fft(&mut re, &mut im)?;
    Ok((0..=n / 2)
        .map(|k| (re[k] * re[k] + im[k] * im[k]).sqrt())
        .collect())
}

/// Windowed-DFT magnitude spectrogram of a mono clip. Frame `i` covers
/// samples `[i*hop, i*hop + frame_length)`; signals shorter than one
/// frame give an empty (0-frame) spectrogram.
pub fn compute_spectrogram(
    clip: &AudioClip,
    cfg: &SpectroConfig,
) -> Result<Spectrogram, SpectroError> {
    if clip.num_channels() != 1 {
        return Err(SpectroError::Multichannel);
    }
    let samples = &clip.channels()[0];
    let frames = cfg.num_frames(samples.len());
    let bins = cfg.bins();
    let window = match cfg.window {
        Window::Hann => Some(hann_window(cfg.frame_length())?),
        Window::Rectangular => None,
    };

    let rows: Vec<Vec<f64>> = (0..frames)
        .into_par_iter()
        .map(|i| {
            let start = i * cfg.hop();
            let frame = &samples[start..start + cfg.frame_length()];
            let mut buf: Vec<f64> = match &window {
                Some(w) => frame.iter().zip(w).map(|(s, w)| s * w).collect(),
                None => frame.to_vec(),
            };
            let mut im = vec![0.0; buf.len()];
            fft(&mut buf, &mut im).expect("frame length validated as power of two");
            let n = cfg.frame_length();
            let mut mags: Vec<f64> = (0..=n / 2)
                .map(|k| (buf[k] * buf[k] + im[k] * im[k]).sqrt())
                .collect();
            if cfg.log_scale {
                for v in &mut mags {
                    *v = v.ln_1p();
                }
            }
            mags
        })
        .collect();

    let mut data = Matrix::zeros(frames, bins);
    for (i, row) in rows.iter().enumerate() {
        data.row_mut(i).copy_from_slice(row);
    }
    Ok(Spectrogram {
        channels: vec![data],
        config: cfg.clone(),
    })
}

/// Combines per-channel spectrograms into one with a channel axis.
/// All inputs must share frame count, bins and config.
pub fn stack_channels(parts: &[Spectrogram]) -> Result<Spectrogram, SpectroError> {
    let first = parts
        .first()
        .ok_or_else(|| SpectroError::ShapeMismatch("no spectrograms to stack".into()))?;
    let mut channels = Vec::new();
    for p in parts {
        if p.frames() != first.frames() || p.bins() != first.bins() || p.config != first.config {
            return Err(SpectroError::ShapeMismatch(format!(
                "spectrogram {}x{} does not match {}x{}",
                p.frames(),
                p.bins(),
                first.frames(),
                first.bins()
            )));
        }
        channels.extend(p.channels.iter().cloned());
    }
    Ok(Spectrogram {
        channels,
        config: first.config.clone(),
    })
}

/// Per-frame stacks of neighboring frames. Row `i` is the concatenation
/// of `context` frame slices centered on frame `i`, each `bins` wide
/// (times channels for stacked input); frames past either end are
/// edge-replicated.
#[derive(Debug, Clone)]
pub struct ContextTensor {
    data: Matrix,
    context: usize,
    slice_width: usize,
}

impl ContextTensor {
    pub fn frames(&self) -> usize {
        self.data.rows()
    }

    pub fn context(&self) -> usize {
        self.context
    }

    /// Width of one frame slice within a row.
    pub fn slice_width(&self) -> usize {
        self.slice_width
    }

    pub fn matrix(&self) -> &Matrix {
        &self.data
    }

    pub fn into_matrix(self) -> Matrix {
        self.data
    }

    /// Frame slice `c` (0-based within the window) of entry `i`.
    pub fn slice(&self, i: usize, c: usize) -> &[f64] {
        &self.data.row(i)[c * self.slice_width..(c + 1) * self.slice_width]
    }
}

/// Builds the context tensor of a spectrogram; `context` must be odd.
pub fn context_windows(
    spec: &Spectrogram,
    context: usize,
) -> Result<ContextTensor, SpectroError> {
    let frames = spec.frames();
    let slice_width = spec.bins() * spec.num_channels();
    let mut flat = Matrix::zeros(frames, slice_width);
    for i in 0..frames {
        let row = flat.row_mut(i);
        for (c, ch) in spec.channels.iter().enumerate() {
            row[c * spec.bins()..(c + 1) * spec.bins()].copy_from_slice(ch.row(i));
        }
    }
    let data = context_windows_matrix(&flat, context)?;
    Ok(ContextTensor {
        data,
        context,
        slice_width,
    })
}

/// Context windowing over a plain frames × width matrix: output row `i`
/// concatenates `context` input rows centered on `i`, edge-replicated
/// at the boundaries.
pub fn context_windows_matrix(frames: &Matrix, context: usize) -> Result<Matrix, SpectroError> {
    if context < 1 || context % 2 == 0 {
        return Err(SpectroError::InvalidContext(format!(
            "context {} must be odd and >= 1",
            context
        )));
    }
    let n = frames.rows();
    let width = frames.cols();
    let half = (context - 1) / 2;
    let mut data = Matrix::zeros(n, context * width);
    for i in 0..n {
        let row = data.row_mut(i);
        for c in 0..context {
            let neighbor =
                (i as isize + c as isize - half as isize).clamp(0, n as isize - 1) as usize;
            row[c * width..(c + 1) * width].copy_from_slice(frames.row(neighbor));
        }
    }
    Ok(data)
}

/// CSV export of the first channel: one row per frame, bins as columns,
/// 9 significant digits.
pub fn export_csv(spec: &Spectrogram, path: &Path) -> Result<(), SpectroError> {
    let mut w = BufWriter::new(File::create(path)?);
    for i in 0..spec.frames() {
        let row = spec.matrix().row(i);
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                write!(w, ",")?;
            }
            write!(w, "{:.8e}", v)?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// PGM export of the first channel, min-max normalized per file; high
/// magnitudes map to dark pixels. Rows are frames, columns are bins.
pub fn export_pgm(spec: &Spectrogram, path: &Path) -> Result<(), SpectroError> {
    let m = spec.matrix();
    let (lo, hi) = m.min_max();
    let span = if hi > lo { hi - lo } else { 1.0 };
    let pixels: Vec<u8> = m
        .data()
        .iter()
        .map(|&v| {
            let norm = (v - lo) / span;
            (255.0 * (1.0 - norm)).round() as u8
        })
        .collect();
    if m.rows() == 0 {
        return Err(SpectroError::ShapeMismatch(
            "cannot render empty spectrogram".into(),
        ));
    }
    pgm::write_pgm(path, m.cols(), m.rows(), &pixels)?;
    Ok(())
}
