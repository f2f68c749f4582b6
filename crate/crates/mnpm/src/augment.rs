//! Dataset augmentation: the 8-element lossless transform group of a 2D
//! array, time reversal, random crop bootstrapping and calibrated noise
//! injection.
//!
//! Only the time-axis-consistent operations (identity, time reversal /
//! dihedral 4, crops, noise) carry defined label semantics and belong in
//! the default training set. The remaining dihedral transforms are
//! exposed for experimentation; they leave labels untouched because
//! per-frame note labels have no image under a frequency flip or an axis
//! swap.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::audio::{AudioClip, AudioError};
use crate::matrix::Matrix;
use crate::mnpm::Mnpm;
use crate::spectrogram::{fft, ifft};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("invalid augmentation op: {0}")]
    InvalidOp(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("SNR is undefined for a silent clip")]
    UndefinedSnr,
    #[error("augmentation plan line {line}: {msg}")]
    Plan { line: usize, msg: String },
    #[error(transparent)]
    Audio(#[from] AudioError),
}

/// What was applied to a sample, recorded in its provenance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AugmentOp {
    Identity,
    /// One of the 8 lossless 2D transforms; see [`dihedral_transform`].
    Dihedral(u8),
    TimeReverse,
    /// The realized frame window of a crop, half-open.
    Crop { start: usize, end: usize },
    Noise { kind: NoiseKind, snr_db: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    White,
    Pink,
}

/// One line of an augmentation plan file.
#[derive(Debug, Clone, PartialEq)]
pub enum PlanOp {
    Identity,
    TimeReverse,
    Dihedral { index: u8 },
    Crop { count: usize, min_frames: usize, seed: u64 },
    Noise { kind: NoiseKind, snr_db: f64, seed: u64 },
}

impl PlanOp {
    /// How many output samples one input sample contributes under this op.
    pub fn multiplicity(&self) -> usize {
        match self {
            PlanOp::Crop { count, .. } => *count,
            _ => 1,
        }
    }

    /// Ops whose labels stay paired with the time axis. The other
    /// dihedral indices are the experimental set.
    pub fn is_time_aligned(&self) -> bool {
        !matches!(self, PlanOp::Dihedral { index } if *index != 0 && *index != 4)
    }
}

/// Network input of a labeled sample: plain spectrogram frames or
/// context-windowed rows. Either way, row `i` is the input for frame `i`.
#[derive(Debug, Clone, PartialEq)]
pub enum SampleInput {
    Frames(Matrix),
    Context {
        data: Matrix,
        context: usize,
        slice_width: usize,
    },
}

impl SampleInput {
    pub fn frames(&self) -> usize {
        self.matrix().rows()
    }

    pub fn matrix(&self) -> &Matrix {
        match self {
            SampleInput::Frames(m) => m,
            SampleInput::Context { data, .. } => data,
        }
    }
}

/// A supervised training pair plus the ops that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub input: SampleInput,
    pub labels: Mnpm,
    pub provenance: Vec<AugmentOp>,
}

impl LabeledSample {
    /// Pairs input rows with label rows; counts must match.
    pub fn new(input: SampleInput, labels: Mnpm) -> Result<Self, AugmentError> {
        if input.frames() != labels.rows() {
            return Err(AugmentError::InvalidOp(format!(
                "input has {} frames but labels have {} rows",
                input.frames(),
                labels.rows()
            )));
        }
        Ok(LabeledSample {
            input,
            labels,
            provenance: Vec::new(),
        })
    }

    pub fn frames(&self) -> usize {
        self.input.frames()
    }
}

/// Applies one of the 8 lossless transforms of a 2D matrix:
/// 0 identity, 1 rot90, 2 rot180, 3 rot270, 4 flip-rows, 5 flip-cols,
/// 6 transpose, 7 anti-transpose. rot90 maps `in[i][j]` to
/// `out[j][rows-1-i]`; indices 1, 3, 6 and 7 swap the dimensions.
pub fn dihedral_transform(mat: &Matrix, index: u8) -> Result<Matrix, AugmentError> {
    let (r, c) = (mat.rows(), mat.cols());
    let mut out = match index {
        0 | 2 | 4 | 5 => Matrix::zeros(r, c),
        1 | 3 | 6 | 7 => Matrix::zeros(c, r),
        _ => {
            return Err(AugmentError::InvalidOp(format!(
                "dihedral index {} not in 0..8",
                index
            )))
        }
    };
    for i in 0..r {
        for j in 0..c {
            let v = mat.get(i, j);
            match index {
                0 => out.set(i, j, v),
                1 => out.set(j, r - 1 - i, v),
                2 => out.set(r - 1 - i, c - 1 - j, v),
                3 => out.set(c - 1 - j, i, v),
                4 => out.set(r - 1 - i, j, v),
                5 => out.set(i, c - 1 - j, v),
                6 => out.set(j, i, v),
                7 => out.set(c - 1 - j, r - 1 - i, v),
                _ => unreachable!(),
            }
        }
    }
    Ok(out)
}

fn reverse_input(input: &SampleInput) -> SampleInput {
    match input {
        SampleInput::Frames(m) => SampleInput::Frames(m.reverse_rows()),
        SampleInput::Context {
            data,
            context,
            slice_width,
        } => {
            // reversing time also reverses each window's slice order, so
            // the result equals re-windowing the reversed spectrogram
            let reversed = data.reverse_rows();
            let mut out = Matrix::zeros(reversed.rows(), reversed.cols());
            for i in 0..reversed.rows() {
                let src = reversed.row(i);
                let dst = out.row_mut(i);
                for c in 0..*context {
                    let from = &src[c * slice_width..(c + 1) * slice_width];
                    let to_start = (context - 1 - c) * slice_width;
                    dst[to_start..to_start + slice_width].copy_from_slice(from);
                }
            }
            SampleInput::Context {
                data: out,
                context: *context,
                slice_width: *slice_width,
            }
        }
    }
}

/// Reverses the sample's time axis: input frame order and label row
/// order flip together, keeping the supervised pairing.
pub fn time_reverse(sample: &LabeledSample) -> LabeledSample {
    let mut provenance = sample.provenance.clone();
    provenance.push(AugmentOp::TimeReverse);
    LabeledSample {
        input: reverse_input(&sample.input),
        labels: sample.labels.reverse_rows(),
        provenance,
    }
}

fn crop_input(input: &SampleInput, start: usize, end: usize) -> SampleInput {
    match input {
        SampleInput::Frames(m) => SampleInput::Frames(m.slice_rows(start, end)),
        SampleInput::Context {
            data,
            context,
            slice_width,
        } => SampleInput::Context {
            data: data.slice_rows(start, end),
            context: *context,
            slice_width: *slice_width,
        },
    }
}

/// Draws `count` contiguous frame windows, each at least `min_frames`
/// long, uniformly over all valid (start, end) pairs; labels are cropped
/// identically. Deterministic for a given generator state.
pub fn crop_bootstrap(
    sample: &LabeledSample,
    rng: &mut impl Rng,
    count: usize,
    min_frames: usize,
) -> Result<Vec<LabeledSample>, AugmentError> {
    let frames = sample.frames();
    if min_frames < 1 {
        return Err(AugmentError::InvalidOp("min_frames must be >= 1".into()));
    }
    if frames < min_frames {
        return Err(AugmentError::EmptyInput(format!(
            "sample of {} frames is shorter than min_frames {}",
            frames, min_frames
        )));
    }

    // number of valid (start, end) pairs: sum over lengths L of the
    // (frames - L + 1) possible starts
    let spread = (frames - min_frames + 1) as u64;
    let total_pairs = spread * (spread + 1) / 2;

    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut pick = rng.gen_range(0..total_pairs);
        // decode: length index l = L - min_frames has (spread - l) starts
        let mut l = 0u64;
        while pick >= spread - l {
            pick -= spread - l;
            l += 1;
        }
        let len = min_frames + l as usize;
        let start = pick as usize;
        let end = start + len;

        let mut provenance = sample.provenance.clone();
        provenance.push(AugmentOp::Crop { start, end });
        out.push(LabeledSample {
            input: crop_input(&sample.input, start, end),
            labels: sample.labels.slice_rows(start, end),
            provenance,
        });
    }
    Ok(out)
}

/// Unit-power noise of the requested spectral shape. White is i.i.d.
/// Gaussian; pink shapes a white buffer by 1/sqrt(f) in the frequency
/// domain, giving an exact -3 dB/octave power slope.
pub fn generate_noise(kind: NoiseKind, len: usize, rng: &mut impl Rng) -> Vec<f64> {
    if len == 0 {
        return Vec::new();
    }
    let mut noise: Vec<f64> = (0..len)
        .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect();
    if kind == NoiseKind::Pink {
        let n = len.next_power_of_two();
        let mut re = noise.clone();
        re.resize(n, 0.0);
        let mut im = vec![0.0; n];
        fft(&mut re, &mut im).expect("length is a power of two");
        re[0] = 0.0; // no DC
        im[0] = 0.0;
        for k in 1..n {
            let k_eff = k.min(n - k) as f64;
            let gain = 1.0 / k_eff.sqrt();
            re[k] *= gain;
            im[k] *= gain;
        }
        ifft(&mut re, &mut im).expect("length is a power of two");
        re.truncate(len);
        noise = re;
    }
    let power: f64 = noise.iter().map(|v| v * v).sum::<f64>() / len as f64;
    if power > 0.0 {
        let scale = 1.0 / power.sqrt();
        for v in &mut noise {
            *v *= scale;
        }
    }
    noise
}

/// Adds noise scaled so the signal-to-noise ratio matches `snr_db`;
/// the mixed output is clamped to [-1, 1]. An infinite SNR returns the
/// clip unchanged.
pub fn add_noise(
    clip: &AudioClip,
    kind: NoiseKind,
    snr_db: f64,
    rng: &mut impl Rng,
) -> Result<AudioClip, AugmentError> {
    if snr_db.is_infinite() && snr_db > 0.0 {
        return Ok(clip.clone());
    }
    let signal_power = clip.power();
    if signal_power <= 0.0 {
        return Err(AugmentError::UndefinedSnr);
    }
    let noise_power = signal_power / 10f64.powf(snr_db / 10.0);

    let noise: Vec<Vec<f64>> = clip
        .channels()
        .iter()
        .map(|ch| generate_noise(kind, ch.len(), rng))
        .collect();
    let total: usize = clip.channels().iter().map(Vec::len).sum();
    let mix = |amplitude: f64| -> Vec<Vec<f64>> {
        clip.channels()
            .iter()
            .zip(&noise)
            .map(|(ch, n)| {
                ch.iter()
                    .zip(n)
                    .map(|(s, v)| (s + amplitude * v).clamp(-1.0, 1.0))
                    .collect()
            })
            .collect()
    };
    let residual_power = |mixed: &[Vec<f64>]| -> f64 {
        let sum: f64 = clip
            .channels()
            .iter()
            .zip(mixed)
            .flat_map(|(ch, m)| ch.iter().zip(m))
            .map(|(s, m)| (m - s) * (m - s))
            .sum();
        sum / total as f64
    };

    // clamping at the rails eats part of the injected power, so refine
    // the amplitude against the post-clamp residual until the measured
    // ratio is inside the calibration tolerance
    let mut amplitude = noise_power.sqrt();
    let mut mixed = mix(amplitude);
    for _ in 0..3 {
        let measured = residual_power(&mixed);
        if measured <= 0.0 {
            break;
        }
        let err = noise_power / measured;
        if (10.0 * err.log10()).abs() < 0.05 {
            break;
        }
        amplitude *= err.sqrt();
        mixed = mix(amplitude);
    }
    Ok(AudioClip::new(mixed, clip.sample_rate())?)
}

fn apply_dihedral_to_sample(
    sample: &LabeledSample,
    index: u8,
) -> Result<LabeledSample, AugmentError> {
    match index {
        0 => {
            let mut out = sample.clone();
            out.provenance.push(AugmentOp::Identity);
            Ok(out)
        }
        4 => {
            // flip-rows is exactly time reversal
            let mut out = time_reverse(sample);
            let last = out.provenance.len() - 1;
            out.provenance[last] = AugmentOp::Dihedral(4);
            Ok(out)
        }
        1..=3 | 5..=7 => match &sample.input {
            SampleInput::Frames(m) => {
                let mut provenance = sample.provenance.clone();
                provenance.push(AugmentOp::Dihedral(index));
                Ok(LabeledSample {
                    input: SampleInput::Frames(dihedral_transform(m, index)?),
                    // labels have no defined image under frequency flips
                    // or axis swaps; they pass through unchanged
                    labels: sample.labels.clone(),
                    provenance,
                })
            }
            SampleInput::Context { .. } => Err(AugmentError::InvalidOp(format!(
                "dihedral index {} is not defined on context tensors",
                index
            ))),
        },
        _ => Err(AugmentError::InvalidOp(format!(
            "dihedral index {} not in 0..8",
            index
        ))),
    }
}

/// One generator per (op seed, element index), so per-element draws do
/// not depend on evaluation order.
pub fn derive_rng(seed: u64, stream: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (stream as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// The block of new samples one plan op contributes, in sample order.
/// Noise ops operate on waveforms and are the dataset builder's job,
/// so they are rejected here.
pub fn apply_plan_op(
    samples: &[LabeledSample],
    op: &PlanOp,
) -> Result<Vec<LabeledSample>, AugmentError> {
    let mut block = Vec::new();
    match op {
        PlanOp::Identity => {
            for s in samples {
                block.push(apply_dihedral_to_sample(s, 0)?);
            }
        }
        PlanOp::TimeReverse => {
            for s in samples {
                block.push(time_reverse(s));
            }
        }
        PlanOp::Dihedral { index } => {
            for s in samples {
                block.push(apply_dihedral_to_sample(s, *index)?);
            }
        }
        PlanOp::Crop {
            count,
            min_frames,
            seed,
        } => {
            for (i, s) in samples.iter().enumerate() {
                let mut rng = derive_rng(*seed, i);
                block.extend(crop_bootstrap(s, &mut rng, *count, *min_frames)?);
            }
        }
        PlanOp::Noise { .. } => {
            return Err(AugmentError::InvalidOp(
                "noise applies to waveforms before spectrogram computation, \
                 not to labeled samples"
                    .into(),
            ));
        }
    }
    Ok(block)
}

/// Applies every plan op to every sample: output is the originals
/// followed by one block per op in plan order, each block in sample
/// order. Crop ops contribute `count` samples per input, everything
/// else one.
pub fn expand_dataset(
    samples: &[LabeledSample],
    ops: &[PlanOp],
) -> Result<Vec<LabeledSample>, AugmentError> {
    let mut out = samples.to_vec();
    for op in ops {
        out.extend(apply_plan_op(samples, op)?);
    }
    Ok(out)
}

/// Parses an augmentation plan: one op per line, `key=value` tokens,
/// e.g. `op=crop count=3 min_frames=50 seed=42`. Blank lines and
/// `#` comments are allowed.
pub fn parse_plan(text: &str) -> Result<Vec<PlanOp>, AugmentError> {
    let mut ops = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut op_name: Option<String> = None;
        let mut kv: Vec<(String, String)> = Vec::new();
        for token in line.split_whitespace() {
            let (k, v) = token.split_once('=').ok_or_else(|| AugmentError::Plan {
                line: line_no,
                msg: format!("token '{}' is not key=value", token),
            })?;
            if k == "op" {
                op_name = Some(v.to_string());
            } else {
                kv.push((k.to_string(), v.to_string()));
            }
        }
        let op_name = op_name.ok_or_else(|| AugmentError::Plan {
            line: line_no,
            msg: "missing op=<name>".into(),
        })?;

        let mut take = |key: &str| -> Result<String, AugmentError> {
            let pos = kv.iter().position(|(k, _)| k == key);
            match pos {
                Some(i) => Ok(kv.remove(i).1),
                None => Err(AugmentError::Plan {
                    line: line_no,
                    msg: format!("missing {}=<value>", key),
                }),
            }
        };
        let parse_num = |key: &str, v: String| -> Result<f64, AugmentError> {
            v.parse().map_err(|_| AugmentError::Plan {
                line: line_no,
                msg: format!("bad {} value '{}'", key, v),
            })
        };

        let op = match op_name.as_str() {
            "identity" => PlanOp::Identity,
            "time_reverse" => PlanOp::TimeReverse,
            "dihedral" => {
                let index = parse_num("index", take("index")?)? as i64;
                if !(0..8).contains(&index) {
                    return Err(AugmentError::Plan {
                        line: line_no,
                        msg: format!("dihedral index {} not in 0..8", index),
                    });
                }
                PlanOp::Dihedral { index: index as u8 }
            }
            "crop" => PlanOp::Crop {
                count: parse_num("count", take("count")?)? as usize,
                min_frames: parse_num("min_frames", take("min_frames")?)? as usize,
                seed: parse_num("seed", take("seed")?)? as u64,
            },
            "noise" => {
                let kind = match take("kind")?.as_str() {
                    "white" => NoiseKind::White,
                    "pink" => NoiseKind::Pink,
                    other => {
                        return Err(AugmentError::Plan {
                            line: line_no,
                            msg: format!("unknown noise kind '{}'", other),
                        })
                    }
                };
                PlanOp::Noise {
                    kind,
                    snr_db: parse_num("snr_db", take("snr_db")?)?,
                    seed: parse_num("seed", take("seed")?)? as u64,
                }
            }
            other => {
                return Err(AugmentError::Plan {
                    line: line_no,
                    msg: format!("unknown op '{}'", other),
                })
            }
        };
        if let Some((k, _)) = kv.first() {
            return Err(AugmentError::Plan {
                line: line_no,
                msg: format!("unknown key '{}' for op {}", k, op_name),
            });
        }
        ops.push(op);
    }
    Ok(ops)
}

pub fn load_plan(path: &std::path::Path) -> Result<Vec<PlanOp>, AugmentError> {
    let text = std::fs::read_to_string(path).map_err(AudioError::Io)?;
    parse_plan(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mnpm::NUM_NOTES;
    use crate::spectrogram::SpectroConfig;
    use rand::SeedableRng;

    fn generic_2x3() -> Matrix {
        Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
    }

    fn sample(frames: usize) -> LabeledSample {
        let mut input = Matrix::zeros(frames, 8);
        for i in 0..frames {
            for j in 0..8 {
                input.set(i, j, (i * 8 + j) as f64);
            }
        }
        let mut labels = Matrix::zeros(frames, NUM_NOTES);
        for i in 0..frames.min(3) {
            labels.set(i, 60, 1.0);
        }
        let cfg = SpectroConfig::new(16, 4, crate::spectrogram::Window::Hann, true, 100).unwrap();
        LabeledSample::new(
            SampleInput::Frames(input),
            Mnpm::new(labels, &cfg).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn identity_and_involutions() {
        let m = generic_2x3();
        assert_eq!(dihedral_transform(&m, 0).unwrap(), m);
        for index in [2u8, 4, 5, 6, 7] {
            let once = dihedral_transform(&m, index).unwrap();
            let twice = dihedral_transform(&once, index).unwrap();
            assert_eq!(twice, m, "index {} twice", index);
        }
        assert!(dihedral_transform(&m, 8).is_err());
    }

    #[test]
    fn rot90_definition() {
        // in[i][j] -> out[j][rows-1-i]
        let m = generic_2x3();
        let r = dihedral_transform(&m, 1).unwrap();
        assert_eq!(r.rows(), 3);
        assert_eq!(r.cols(), 2);
        assert_eq!(r.row(0), &[4.0, 1.0]);
        assert_eq!(r.row(1), &[5.0, 2.0]);
        assert_eq!(r.row(2), &[6.0, 3.0]);
    }

    #[test]
    fn eight_transforms_pairwise_distinct() {
        let m = generic_2x3();
        let all: Vec<Matrix> = (0..8)
            .map(|i| dihedral_transform(&m, i).unwrap())
            .collect();
        for i in 0..8 {
            for j in 0..8 {
                if i != j {
                    assert_ne!(all[i], all[j], "indices {} and {}", i, j);
                }
            }
        }
    }

    #[test]
    fn rotation_composition() {
        let m = generic_2x3();
        let twice = dihedral_transform(&dihedral_transform(&m, 1).unwrap(), 1).unwrap();
        assert_eq!(twice, dihedral_transform(&m, 2).unwrap());
    }

    #[test]
    fn group_closure_and_inverses() {
        let m = generic_2x3();
        let all: Vec<Matrix> = (0..8)
            .map(|i| dihedral_transform(&m, i).unwrap())
            .collect();
        for a in 0..8u8 {
            for b in 0..8u8 {
                let composed =
                    dihedral_transform(&dihedral_transform(&m, a).unwrap(), b).unwrap();
                let matches: Vec<u8> = (0..8)
                    .filter(|&c| all[c as usize] == composed)
                    .collect();
                assert_eq!(matches.len(), 1, "{} then {} must be one element", a, b);
            }
            // an inverse exists: some b with b∘a = identity
            let inverse_count = (0..8u8)
                .filter(|&b| {
                    dihedral_transform(&dihedral_transform(&m, a).unwrap(), b).unwrap() == m
                })
                .count();
            assert_eq!(inverse_count, 1, "index {} needs exactly one inverse", a);
        }
    }

    #[test]
    fn time_reverse_is_involution_and_maps_rows() {
        let s = sample(10);
        let rev = time_reverse(&s);
        // note 60 active in rows 0..2 of 10 -> rows 7..9 after reversal
        for i in 0..10 {
            let expected = if (7..=9).contains(&i) { 1.0 } else { 0.0 };
            assert_eq!(rev.labels.matrix().get(i, 60), expected, "row {}", i);
        }
        assert_eq!(rev.input.matrix().row(0), s.input.matrix().row(9));

        let back = time_reverse(&rev);
        assert_eq!(back.input, s.input);
        assert_eq!(back.labels.matrix(), s.labels.matrix());
        assert_eq!(back.provenance.len(), 2);

        let single = sample(1);
        let rev = time_reverse(&single);
        assert_eq!(rev.input, single.input);
    }

    #[test]
    fn time_reverse_of_context_rewindows() {
        use crate::spectrogram::context_windows_matrix;
        let s = sample(6);
        let frames = match &s.input {
            SampleInput::Frames(m) => m.clone(),
            _ => unreachable!(),
        };
        let ctx = SampleInput::Context {
            data: context_windows_matrix(&frames, 3).unwrap(),
            context: 3,
            slice_width: 8,
        };
        let ctx_sample = LabeledSample::new(ctx, s.labels.clone()).unwrap();

        let reversed = time_reverse(&ctx_sample);
        let expected = context_windows_matrix(&frames.reverse_rows(), 3).unwrap();
        assert_eq!(reversed.input.matrix(), &expected);
    }

    #[test]
    fn crop_bootstrap_determinism_and_bounds() {
        let s = sample(100);
        let crops = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            crop_bootstrap(&s, &mut rng, 10, 5).unwrap()
        };
        let a = crops(42);
        let b = crops(42);
        assert_eq!(a, b);
        let c = crops(43);
        assert_ne!(a, c);

        for crop in &a {
            assert!(crop.frames() >= 5);
            assert_eq!(crop.input.frames(), crop.labels.rows());
            match crop.provenance.last() {
                Some(AugmentOp::Crop { start, end }) => {
                    assert!(start < end && *end <= 100);
                    assert_eq!(end - start, crop.frames());
                }
                other => panic!("unexpected provenance {:?}", other),
            }
        }
    }

    #[test]
    fn crop_edge_cases() {
        let s = sample(5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(crop_bootstrap(&s, &mut rng, 0, 2).unwrap().is_empty());

        // a sample of exactly min_frames frames: every crop is the whole
        // sample
        let crops = crop_bootstrap(&s, &mut rng, 4, 5).unwrap();
        assert_eq!(crops.len(), 4);
        for c in &crops {
            assert_eq!(c.frames(), 5);
            assert_eq!(c.input, s.input);
        }

        assert!(crop_bootstrap(&s, &mut rng, 1, 6).is_err());
        assert!(crop_bootstrap(&s, &mut rng, 1, 0).is_err());
    }

    #[test]
    fn infinite_snr_is_identity() {
        let clip = AudioClip::mono(vec![0.1, -0.2, 0.3], 44100).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let out = add_noise(&clip, NoiseKind::White, f64::INFINITY, &mut rng).unwrap();
        assert_eq!(out.channels()[0], clip.channels()[0]);
    }

    #[test]
    fn silent_clip_has_undefined_snr() {
        let clip = AudioClip::mono(vec![0.0; 100], 44100).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(matches!(
            add_noise(&clip, NoiseKind::White, 20.0, &mut rng),
            Err(AugmentError::UndefinedSnr)
        ));
    }

    #[test]
    fn white_noise_snr_is_calibrated() {
        use std::f64::consts::PI;
        let sr = 44100;
        let sine: Vec<f64> = (0..sr as usize)
            .map(|i| (2.0 * PI * 440.0 * i as f64 / sr as f64).sin())
            .collect();
        let clip = AudioClip::mono(sine, sr).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let noisy = add_noise(&clip, NoiseKind::White, 20.0, &mut rng).unwrap();

        let p_signal = clip.power();
        let p_noise: f64 = clip.channels()[0]
            .iter()
            .zip(&noisy.channels()[0])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / clip.len() as f64;
        let measured = 10.0 * (p_signal / p_noise).log10();
        assert!(
            (19.5..=20.5).contains(&measured),
            "measured SNR {} dB",
            measured
        );
    }

    #[test]
    fn pink_noise_slope_is_3db_per_octave() {
        let n = 4096;
        let sr = 44100.0;
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let mut avg_power = vec![0.0f64; n / 2 + 1];
        for _ in 0..100 {
            let noise = generate_noise(NoiseKind::Pink, n, &mut rng);
            let mags = crate::spectrogram::dft_magnitudes(&noise).unwrap();
            for (acc, m) in avg_power.iter_mut().zip(&mags) {
                *acc += m * m;
            }
        }
        // least-squares slope of 10*log10(P) against log2(f) between
        // 100 Hz and 5 kHz
        let lo = (100.0 * n as f64 / sr).ceil() as usize;
        let hi = (5000.0 * n as f64 / sr).floor() as usize;
        let points: Vec<(f64, f64)> = (lo..=hi)
            .map(|k| {
                let f = k as f64 * sr / n as f64;
                (f.log2(), 10.0 * (avg_power[k] / 100.0).log10())
            })
            .collect();
        let count = points.len() as f64;
        let mean_x = points.iter().map(|p| p.0).sum::<f64>() / count;
        let mean_y = points.iter().map(|p| p.1).sum::<f64>() / count;
        let slope = points
            .iter()
            .map(|p| (p.0 - mean_x) * (p.1 - mean_y))
            .sum::<f64>()
            / points.iter().map(|p| (p.0 - mean_x).powi(2)).sum::<f64>();
        let expected = -10.0 * 2f64.log10(); // -3.0103 dB per octave
        assert!(
            (slope - expected).abs() <= 1.0,
            "slope {} dB/octave, expected {}",
            slope,
            expected
        );
    }

    #[test]
    fn expand_counts_and_order() {
        let samples: Vec<LabeledSample> = (0..10).map(|_| sample(60)).collect();

        let unchanged = expand_dataset(&samples, &[]).unwrap();
        assert_eq!(unchanged, samples);

        let doubled = expand_dataset(&samples, &[PlanOp::TimeReverse]).unwrap();
        assert_eq!(doubled.len(), 20);
        assert_eq!(&doubled[..10], &samples[..]);
        assert_eq!(doubled[10], time_reverse(&samples[0]));

        let ops = vec![
            PlanOp::TimeReverse,
            PlanOp::Crop {
                count: 3,
                min_frames: 10,
                seed: 42,
            },
        ];
        let expanded = expand_dataset(&samples, &ops).unwrap();
        assert_eq!(expanded.len(), 10 + 10 + 30);
        // originals unchanged up front, time reversals next, crops last
        assert_eq!(&expanded[..10], &samples[..]);
        assert!(expanded[10..20]
            .iter()
            .all(|s| s.provenance == vec![AugmentOp::TimeReverse]));
        assert!(expanded[20..]
            .iter()
            .all(|s| matches!(s.provenance[..], [AugmentOp::Crop { .. }])));

        // time-aligned pairing holds everywhere
        for s in &expanded {
            assert_eq!(s.input.frames(), s.labels.rows());
        }
    }

    #[test]
    fn expand_rejects_noise_ops() {
        let samples = vec![sample(10)];
        let err = expand_dataset(
            &samples,
            &[PlanOp::Noise {
                kind: NoiseKind::White,
                snr_db: 20.0,
                seed: 7,
            }],
        );
        assert!(matches!(err, Err(AugmentError::InvalidOp(_))));
    }

    #[test]
    fn lossless_ops_have_inverses_on_samples() {
        let s = sample(12);
        // time reversal undoes itself on both input and labels
        let there_and_back = time_reverse(&time_reverse(&s));
        assert_eq!(there_and_back.input, s.input);
        assert_eq!(there_and_back.labels.matrix(), s.labels.matrix());

        // every dihedral index has an inverse index on the input matrix
        let m = match &s.input {
            SampleInput::Frames(m) => m.clone(),
            _ => unreachable!(),
        };
        for a in 0..8u8 {
            let forward = dihedral_transform(&m, a).unwrap();
            let recovered = (0..8u8)
                .any(|b| dihedral_transform(&forward, b).unwrap() == m);
            assert!(recovered, "no inverse for index {}", a);
        }
    }

    proptest::proptest! {
        #[test]
        fn dihedral_group_laws_hold_on_arbitrary_matrices(
            rows in 1usize..6,
            cols in 1usize..6,
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = Matrix::from_vec(
                rows,
                cols,
                (0..rows * cols).map(|_| rng.gen_range(-10.0..10.0)).collect(),
            );
            let all: Vec<Matrix> = (0..8)
                .map(|i| dihedral_transform(&m, i).unwrap())
                .collect();
            for a in 0..8u8 {
                // closed under composition
                for b in 0..8u8 {
                    let composed =
                        dihedral_transform(&dihedral_transform(&m, a).unwrap(), b).unwrap();
                    proptest::prop_assert!(all.contains(&composed));
                }
                // an inverse exists
                let inverted = (0..8u8).any(|b| {
                    dihedral_transform(&dihedral_transform(&m, a).unwrap(), b).unwrap() == m
                });
                proptest::prop_assert!(inverted);
            }
        }
    }

    #[test]
    fn plan_parsing() {
        let text = "\
# default training plan
op=time_reverse

op=crop count=3 min_frames=50 seed=42
op=noise kind=white snr_db=20 seed=7
op=dihedral index=4
";
        let ops = parse_plan(text).unwrap();
        assert_eq!(
            ops,
            vec![
                PlanOp::TimeReverse,
                PlanOp::Crop {
                    count: 3,
                    min_frames: 50,
                    seed: 42
                },
                PlanOp::Noise {
                    kind: NoiseKind::White,
                    snr_db: 20.0,
                    seed: 7
                },
                PlanOp::Dihedral { index: 4 },
            ]
        );
        assert!(ops[3].is_time_aligned());
        assert!(!PlanOp::Dihedral { index: 5 }.is_time_aligned());

        assert!(matches!(
            parse_plan("op=warp factor=2"),
            Err(AugmentError::Plan { line: 1, .. })
        ));
        assert!(matches!(
            parse_plan("op=crop count=3"),
            Err(AugmentError::Plan { line: 1, .. })
        ));
        assert!(matches!(
            parse_plan("\nop=dihedral index=9"),
            Err(AugmentError::Plan { line: 2, .. })
        ));
        assert!(matches!(
            parse_plan("op=time_reverse speed=2"),
            Err(AugmentError::Plan { line: 1, .. })
        ));
    }
}
