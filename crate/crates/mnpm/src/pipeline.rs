//! End-to-end orchestration: dataset construction from (audio, MIDI)
//! pairs, training with learning-curve export, frame- and note-level
//! evaluation, the unseen-chord generalization study, and full
//! audio-to-MIDI transcription.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::audio::{self, AudioClip, AudioError};
use crate::augment::{
    self, apply_plan_op, AugmentError, AugmentOp, LabeledSample, PlanOp, SampleInput,
};
use crate::matrix::Matrix;
use crate::midi::{self, MidiError, NoteInterval, NoteIntervalSet};
use crate::mnpm::{build_mnpm, postprocess, Mnpm, MnpmError, NUM_NOTES};
use crate::nn::{
    self, init_network, Activation, Dataset, ModelKind, Network, NetworkConfig, NnError,
    TrainConfig, Trainer,
};
use crate::spectrogram::{
    compute_spectrogram, context_windows_matrix, SpectroConfig, SpectroError,
};
use crate::synth::{self, SynthConfig, SynthError};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Note-level matches require onsets within this many seconds.
pub const ONSET_TOLERANCE: f64 = 0.05;
/// Minimum run length when postprocessing network output into notes.
pub const EVAL_MIN_FRAMES: usize = 2;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error("invalid pipeline input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Spectro(#[from] SpectroError),
    #[error(transparent)]
    Midi(#[from] MidiError),
    #[error(transparent)]
    Mnpm(#[from] MnpmError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub split: Split,
    pub audio: PathBuf,
    pub midi: PathBuf,
}

/// The (audio, MIDI) pair list with its split assignment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

/// Parses `train|val|test <wav> <mid>` lines; `#` comments and blank
/// lines are skipped. A pair may not appear in two different splits.
pub fn parse_manifest(text: &str) -> Result<DatasetManifest, PipelineError> {
    let mut entries: Vec<ManifestEntry> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 3 {
            return Err(PipelineError::Manifest {
                line: line_no,
                msg: format!("expected 'train|val|test <wav> <mid>', got '{}'", line),
            });
        }
        let split = match tokens[0] {
            "train" => Split::Train,
            "val" => Split::Val,
            "test" => Split::Test,
            other => {
                return Err(PipelineError::Manifest {
                    line: line_no,
                    msg: format!("unknown split '{}'", other),
                })
            }
        };
        let entry = ManifestEntry {
            split,
            audio: PathBuf::from(tokens[1]),
            midi: PathBuf::from(tokens[2]),
        };
        if let Some(dup) = entries
            .iter()
            .find(|e| e.audio == entry.audio && e.midi == entry.midi && e.split != entry.split)
        {
            return Err(PipelineError::Manifest {
                line: line_no,
                msg: format!(
                    "pair already assigned to another split ({:?})",
                    dup.split
                ),
            });
        }
        entries.push(entry);
    }
    Ok(DatasetManifest { entries })
}

/// Loads a manifest file, resolving relative paths against its parent
/// directory.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, PipelineError> {
    let mut manifest = parse_manifest(&std::fs::read_to_string(path)?)?;
    if let Some(base) = path.parent() {
        for e in &mut manifest.entries {
            if e.audio.is_relative() {
                e.audio = base.join(&e.audio);
            }
            if e.midi.is_relative() {
                e.midi = base.join(&e.midi);
            }
        }
    }
    Ok(manifest)
}

#[derive(Debug, Clone, Default)]
pub struct SplitSamples {
    pub train: Vec<LabeledSample>,
    pub val: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
}

fn pair_to_sample(
    audio_path: &Path,
    midi_path: &Path,
    cfg: &SpectroConfig,
) -> Result<(LabeledSample, AudioClip), PipelineError> {
    let clip = audio::read_wav(audio_path)?;
    let mono = audio::mixdown(&clip)?;
    if mono.sample_rate() != cfg.sample_rate {
        return Err(PipelineError::Invalid(format!(
            "{}: sample rate {} does not match configured {}",
            audio_path.display(),
            mono.sample_rate(),
            cfg.sample_rate
        )));
    }
    let spec = compute_spectrogram(&mono, cfg)?;
    let (intervals, _unmatched) = midi::read_smf(midi_path)?.extract_intervals();
    let labels = build_mnpm(&intervals, spec.frames(), cfg);
    let sample = LabeledSample::new(SampleInput::Frames(spec.matrix().clone()), labels)?;
    Ok((sample, mono))
}

fn to_context(sample: LabeledSample, context: usize) -> Result<LabeledSample, PipelineError> {
    if context <= 1 {
        return Ok(sample);
    }
    match sample.input {
        SampleInput::Frames(m) => {
            let slice_width = m.cols();
            let data = context_windows_matrix(&m, context)?;
            Ok(LabeledSample {
                input: SampleInput::Context {
                    data,
                    context,
                    slice_width,
                },
                labels: sample.labels,
                provenance: sample.provenance,
            })
        }
        SampleInput::Context { .. } => Err(PipelineError::Invalid(
            "sample is already context-windowed".into(),
        )),
    }
}

/// Builds labeled samples per split: audio is decoded, mixed down and
/// turned into spectrogram frames; the paired MIDI supplies the note
/// matrix on the same frame grid. The augmentation plan applies to the
/// training split only (noise ops at the waveform stage, the rest on
/// the spectrogram samples); a context > 1 windows every split at the
/// end. Any unreadable file fails the whole build.
pub fn build_dataset(
    manifest: &DatasetManifest,
    cfg: &SpectroConfig,
    plan: &[PlanOp],
    context: usize,
) -> Result<SplitSamples, PipelineError> {
    let built: Vec<(Split, LabeledSample, AudioClip)> = manifest
        .entries
        .par_iter()
        .map(|e| {
            let (sample, clip) = pair_to_sample(&e.audio, &e.midi, cfg)?;
            Ok((e.split, sample, clip))
        })
        .collect::<Result<_, PipelineError>>()?;

    let mut train: Vec<LabeledSample> = Vec::new();
    let mut train_clips: Vec<AudioClip> = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for (split, sample, clip) in built {
        match split {
            Split::Train => {
                train.push(sample);
                train_clips.push(clip);
            }
            Split::Val => val.push(sample),
            Split::Test => test.push(sample),
        }
    }

    // originals first, then one block per plan op in order
    let base = train.clone();
    for op in plan {
        match op {
            PlanOp::Noise { kind, snr_db, seed } => {
                for (i, (sample, clip)) in base.iter().zip(&train_clips).enumerate() {
                    let mut rng = augment::derive_rng(*seed, i);
                    let noisy = augment::add_noise(clip, *kind, *snr_db, &mut rng)?;
                    let spec = compute_spectrogram(&noisy, cfg)?;
                    let mut provenance = sample.provenance.clone();
                    provenance.push(AugmentOp::Noise {
                        kind: *kind,
                        snr_db: *snr_db,
                    });
                    train.push(LabeledSample {
                        input: SampleInput::Frames(spec.matrix().clone()),
                        labels: sample.labels.clone(),
                        provenance,
                    });
                }
            }
            other => train.extend(apply_plan_op(&base, other)?),
        }
    }

    Ok(SplitSamples {
        train: train
            .into_iter()
            .map(|s| to_context(s, context))
            .collect::<Result<_, _>>()?,
        val: val
            .into_iter()
            .map(|s| to_context(s, context))
            .collect::<Result<_, _>>()?,
        test: test
            .into_iter()
            .map(|s| to_context(s, context))
            .collect::<Result<_, _>>()?,
    })
}

/// Stacks samples into one frame-level dataset.
pub fn flatten_samples(samples: &[LabeledSample]) -> Result<Dataset, PipelineError> {
    let inputs: Vec<&Matrix> = samples.iter().map(|s| s.input.matrix()).collect();
    let targets: Vec<&Matrix> = samples.iter().map(|s| s.labels.matrix()).collect();
    if inputs.is_empty() {
        return Ok(Dataset::new(Matrix::zeros(0, 0), Matrix::zeros(0, NUM_NOTES))?);
    }
    Ok(Dataset::new(
        Matrix::vstack(&inputs),
        Matrix::vstack(&targets),
    )?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_frame_f1: f64,
}

/// Per-epoch training statistics, exportable as CSV.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LearningCurve {
    pub records: Vec<EpochRecord>,
}

impl LearningCurve {
    /// CSV with header `epoch,train_loss,val_loss,val_frame_f1` and six
    /// significant digits.
    pub fn export_csv(&self, path: &Path) -> Result<(), PipelineError> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "epoch,train_loss,val_loss,val_frame_f1")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{:.5e},{:.5e},{:.5e}",
                r.epoch, r.train_loss, r.val_loss, r.val_frame_f1
            )?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_csv(path: &Path) -> Result<LearningCurve, PipelineError> {
        let text = std::fs::read_to_string(path)?;
        let mut records = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if idx == 0 {
                if line != "epoch,train_loss,val_loss,val_frame_f1" {
                    return Err(PipelineError::Invalid(format!(
                        "bad curve header '{}'",
                        line
                    )));
                }
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 4 {
                return Err(PipelineError::Invalid(format!(
                    "curve line {}: expected 4 fields",
                    idx + 1
                )));
            }
            let parse = |s: &str| -> Result<f64, PipelineError> {
                s.parse()
                    .map_err(|_| PipelineError::Invalid(format!("bad number '{}'", s)))
            };
            records.push(EpochRecord {
                epoch: parts[0]
                    .parse()
                    .map_err(|_| PipelineError::Invalid(format!("bad epoch '{}'", parts[0])))?,
                train_loss: parse(parts[1])?,
                val_loss: parse(parts[2])?,
                val_frame_f1: parse(parts[3])?,
            });
        }
        Ok(LearningCurve { records })
    }
}

/// Frame-level loss and F1 of a network over a dataset, forwarding in
/// bounded chunks.
fn eval_frames(net: &Network, data: &Dataset, threshold: f64) -> Result<(f64, f64), NnError> {
    if data.is_empty() {
        return Ok((0.0, 0.0));
    }
    let chunk_rows = 4096;
    let mut loss_sum = 0.0;
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut fn_ = 0u64;
    let mut row = 0;
    while row < data.len() {
        let end = (row + chunk_rows).min(data.len());
        let x = data.inputs.slice_rows(row, end);
        let y = data.targets.slice_rows(row, end);
        let out = net.forward(&x)?;
        loss_sum += nn::bce_loss(&out, &y)? * (end - row) as f64;
        for (p, t) in out.data().iter().zip(y.data()) {
            let pred = *p >= threshold;
            let truth = *t >= 0.5;
            match (pred, truth) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        row = end;
    }
    let precision = if tp + fp > 0 {
        tp as f64 / (tp + fp) as f64
    } else {
        0.0
    };
    let recall = if tp + fn_ > 0 {
        tp as f64 / (tp + fn_) as f64
    } else {
        0.0
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok((loss_sum / data.len() as f64, f1))
}

/// Trains on the train split, tracking validation loss per epoch, and
/// returns the best-validation-loss parameters with the full curve.
/// With no explicit validation split, `validation_fraction` of the
/// training frames is carved off instead.
pub fn train_model(
    splits: &SplitSamples,
    net_cfg: &NetworkConfig,
    train_cfg: &TrainConfig,
) -> Result<(Network, LearningCurve), PipelineError> {
    train_model_until(splits, net_cfg, train_cfg, |_| false)
}

/// [`train_model`] with an early-stop predicate checked after each
/// epoch's record is written.
pub fn train_model_until(
    splits: &SplitSamples,
    net_cfg: &NetworkConfig,
    train_cfg: &TrainConfig,
    stop: impl Fn(&EpochRecord) -> bool,
) -> Result<(Network, LearningCurve), PipelineError> {
    if splits.train.is_empty() {
        return Err(PipelineError::Nn(NnError::EmptyInput));
    }
    let full_train = flatten_samples(&splits.train)?;
    let (train_data, val_data) = if splits.val.is_empty() {
        carve_validation(&full_train, train_cfg)
    } else {
        (full_train, flatten_samples(&splits.val)?)
    };

    let mut net = init_network(net_cfg, train_cfg.seed)?;
    let mut trainer = Trainer::new(&net, train_cfg.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed.wrapping_add(0x5EED));

    let mut curve = LearningCurve::default();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for epoch in 1..=train_cfg.epochs {
        let train_loss = trainer.train_epoch(&mut net, &train_data, &mut rng)?;
        let (val_loss, val_frame_f1) = eval_frames(&net, &val_data, 0.5)?;
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_frame_f1,
        };
        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, net.flat_params()));
        }
        let done = stop(&record);
        curve.records.push(record);
        if done {
            break;
        }
    }
    if let Some((_, params)) = best {
        net.set_flat_params(&params);
    }
    Ok((net, curve))
}

fn carve_validation(data: &Dataset, cfg: &TrainConfig) -> (Dataset, Dataset) {
    let n = data.len();
    let n_val = ((n as f64) * cfg.validation_fraction).round() as usize;
    let n_val = n_val.clamp(usize::from(n > 1), n.saturating_sub(1));
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x7A11));
    order.shuffle(&mut rng);

    let width = data.inputs.cols();
    let gather = |idx: &[usize]| {
        let mut x = Matrix::zeros(idx.len(), width);
        let mut y = Matrix::zeros(idx.len(), NUM_NOTES);
        for (row, &i) in idx.iter().enumerate() {
            x.row_mut(row).copy_from_slice(data.inputs.row(i));
            y.row_mut(row).copy_from_slice(data.targets.row(i));
        }
        Dataset::new(x, y).expect("gathered rows keep their pairing")
    };
    (gather(&order[n_val..]), gather(&order[..n_val]))
}

/// Threshold-based evaluation results. `frame_precision_undefined`
/// flags the degenerate no-positive-prediction case, which reports a
/// precision of 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub frame_precision: f64,
    pub frame_recall: f64,
    pub frame_f1: f64,
    pub note_f1: f64,
    pub frame_precision_undefined: bool,
}

#[derive(Debug, Clone, Copy, Default)]
struct MetricCounts {
    tp: u64,
    fp: u64,
    fn_: u64,
    note_matched: u64,
    note_pred: u64,
    note_truth: u64,
}

impl MetricCounts {
    fn merge(mut self, other: MetricCounts) -> MetricCounts {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.note_matched += other.note_matched;
        self.note_pred += other.note_pred;
        self.note_truth += other.note_truth;
        self
    }

    fn into_metrics(self) -> Metrics {
        let undefined = self.tp + self.fp == 0;
        let precision = if undefined {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        };
        let recall = if self.tp + self.fn_ == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        };
        let frame_f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        let note_f1 = if self.note_pred + self.note_truth == 0 {
            1.0
        } else {
            2.0 * self.note_matched as f64 / (self.note_pred + self.note_truth) as f64
        };
        Metrics {
            frame_precision: precision,
            frame_recall: recall,
            frame_f1,
            note_f1,
            frame_precision_undefined: undefined,
        }
    }
}

/// Counts one sample's frame hits and note matches given its predicted
/// probabilities.
fn sample_counts(probs: &Matrix, sample: &LabeledSample, threshold: f64) -> MetricCounts {
    let labels = sample.labels.matrix();
    let mut c = MetricCounts::default();
    for (p, t) in probs.data().iter().zip(labels.data()) {
        match (*p >= threshold, *t >= 0.5) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => {}
        }
    }

    let prob_mnpm = Mnpm::from_parts(
        probs.clone(),
        sample.labels.frame_times().to_vec(),
    )
    .expect("network outputs are valid probabilities on the label grid");
    let predicted = postprocess(&prob_mnpm, threshold, EVAL_MIN_FRAMES);
    let truth = postprocess(&sample.labels, 0.5, 1);

    let mut used = vec![false; truth.len()];
    for pred in predicted.iter() {
        for (i, gt) in truth.iter().enumerate() {
            if !used[i]
                && gt.note == pred.note
                && (gt.onset - pred.onset).abs() <= ONSET_TOLERANCE
            {
                used[i] = true;
                c.note_matched += 1;
                break;
            }
        }
    }
    c.note_pred += predicted.len() as u64;
    c.note_truth += truth.len() as u64;
    c
}

/// Frame metrics from thresholded outputs against the note matrix, and
/// note metrics from postprocessed intervals matched by note identity
/// and ±50 ms onsets. Totals are order-independent.
pub fn evaluate(
    net: &Network,
    samples: &[LabeledSample],
    threshold: f64,
) -> Result<Metrics, PipelineError> {
    if samples.is_empty() {
        return Err(PipelineError::Nn(NnError::EmptyInput));
    }
    let counts = samples
        .par_iter()
        .map(|s| -> Result<MetricCounts, PipelineError> {
            let probs = net.forward(s.input.matrix())?;
            Ok(sample_counts(&probs, s, threshold))
        })
        .try_reduce(MetricCounts::default, |a, b| Ok(a.merge(b)));
    Ok(counts?.into_metrics())
}

/// Everything the unseen-chord study needs besides the chord lists.
#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub spectro: SpectroConfig,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Rendered training clips per chord.
    pub clips_per_chord: usize,
    /// Held-out evaluation clips per chord (both seen and unseen sets).
    pub eval_clips_per_chord: usize,
    /// Clip durations are drawn uniformly from this range (seconds).
    pub clip_secs: (f64, f64),
    pub threshold: f64,
}

/// Measurement-only comparison of recognition on chords the model
/// trained on versus chord combinations it never saw.
#[derive(Debug, Clone)]
pub struct StudyReport {
    pub seen: Metrics,
    pub unseen: Metrics,
    pub train_chords: usize,
    pub test_chords: usize,
}

impl StudyReport {
    /// Seen minus unseen frame F1: the generalization gap.
    pub fn gap(&self) -> f64 {
        self.seen.frame_f1 - self.unseen.frame_f1
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        s.push_str("unseen-combination study\n");
        s.push_str(&format!(
            "train chords: {}   unseen test chords: {}\n\n",
            self.train_chords, self.test_chords
        ));
        s.push_str("set      frame_p  frame_r  frame_f1  note_f1\n");
        for (name, m) in [("seen", &self.seen), ("unseen", &self.unseen)] {
            s.push_str(&format!(
                "{:<8} {:>7.4}  {:>7.4}  {:>8.4}  {:>7.4}\n",
                name, m.frame_precision, m.frame_recall, m.frame_f1, m.note_f1
            ));
        }
        s.push_str(&format!("\ngap (seen - unseen frame F1): {:.4}\n", self.gap()));
        s
    }

    pub fn export_csv(&self, path: &Path) -> Result<(), PipelineError> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "set,frame_precision,frame_recall,frame_f1,note_f1")?;
        for (name, m) in [("seen", &self.seen), ("unseen", &self.unseen)] {
            writeln!(
                w,
                "{},{:.5e},{:.5e},{:.5e},{:.5e}",
                name, m.frame_precision, m.frame_recall, m.frame_f1, m.note_f1
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

fn render_chord_sample(
    chord: &[u8],
    cfg: &StudyConfig,
    rng: &mut ChaCha8Rng,
) -> Result<LabeledSample, PipelineError> {
    let secs = rng.gen_range(cfg.clip_secs.0..=cfg.clip_secs.1);
    let margin = 0.05;
    let intervals: Vec<NoteInterval> = chord
        .iter()
        .map(|&note| NoteInterval {
            note,
            onset: margin,
            offset: secs - margin,
        })
        .collect();
    let p = NoteIntervalSet::new(intervals)?;
    let clip = synth::render(&p, &cfg.synth, secs)?;
    let spec = compute_spectrogram(&clip, &cfg.spectro)?;
    let labels = build_mnpm(&p, spec.frames(), &cfg.spectro);
    Ok(LabeledSample::new(
        SampleInput::Frames(spec.matrix().clone()),
        labels,
    )?)
}

fn chord_key(chord: &[u8]) -> Vec<u8> {
    let mut k = chord.to_vec();
    k.sort_unstable();
    k
}

/// Trains on the train-chord clips and evaluates two held-out clip
/// sets; shared by the study entry point and its control test.
fn study_with_sets(
    train_chords: &[Vec<u8>],
    seen_eval: &[LabeledSample],
    unseen_eval: &[LabeledSample],
    cfg: &StudyConfig,
) -> Result<(Network, StudyReport, usize), PipelineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed.wrapping_add(0x57D));
    let mut train_samples = Vec::new();
    for chord in train_chords {
        for _ in 0..cfg.clips_per_chord {
            train_samples.push(render_chord_sample(chord, cfg, &mut rng)?);
        }
    }
    let splits = SplitSamples {
        train: train_samples,
        val: Vec::new(),
        test: Vec::new(),
    };
    let bins = cfg.spectro.bins();
    let net_cfg = NetworkConfig {
        model: ModelKind::A,
        input_bins: bins,
        context: 1,
        hidden: cfg.hidden.clone(),
        activation: cfg.activation,
    };
    let (net, curve) = train_model(&splits, &net_cfg, &cfg.train)?;
    let seen = evaluate(&net, seen_eval, cfg.threshold)?;
    let unseen = evaluate(&net, unseen_eval, cfg.threshold)?;
    Ok((
        net,
        StudyReport {
            seen,
            unseen,
            train_chords: train_chords.len(),
            test_chords: 0,
        },
        curve.records.len(),
    ))
}

/// Synthesizes clips per chord set, trains on the train chords, and
/// reports metrics separately for held-out clips of seen chords and
/// clips of never-seen chords. The chord sets must be disjoint.
pub fn unseen_combination_study(
    train_chords: &[Vec<u8>],
    test_chords: &[Vec<u8>],
    cfg: &StudyConfig,
) -> Result<StudyReport, PipelineError> {
    if train_chords.is_empty() || test_chords.is_empty() {
        return Err(PipelineError::Invalid("both chord sets must be non-empty".into()));
    }
    for chord in train_chords.iter().chain(test_chords) {
        if chord.is_empty() {
            return Err(PipelineError::Invalid("empty chord".into()));
        }
        if chord.iter().any(|&n| n > 127) {
            return Err(PipelineError::Invalid(format!("bad note in chord {:?}", chord)));
        }
    }
    let train_keys: Vec<Vec<u8>> = train_chords.iter().map(|c| chord_key(c)).collect();
    for test in test_chords {
        if train_keys.contains(&chord_key(test)) {
            return Err(PipelineError::Invalid(format!(
                "chord {:?} appears in both sets",
                test
            )));
        }
    }

    let mut eval_rng = ChaCha8Rng::seed_from_u64(cfg.train.seed.wrapping_add(0xE7A1));
    let mut seen_eval = Vec::new();
    for chord in train_chords {
        for _ in 0..cfg.eval_clips_per_chord {
            seen_eval.push(render_chord_sample(chord, cfg, &mut eval_rng)?);
        }
    }
    let mut unseen_eval = Vec::new();
    for chord in test_chords {
        for _ in 0..cfg.eval_clips_per_chord {
            unseen_eval.push(render_chord_sample(chord, cfg, &mut eval_rng)?);
        }
    }

    let (_, mut report, _) = study_with_sets(train_chords, &seen_eval, &unseen_eval, cfg)?;
    report.test_chords = test_chords.len();
    Ok(report)
}

#[derive(Debug, Clone, Copy)]
pub struct TranscribeParams {
    pub threshold: f64,
    pub min_frames: usize,
    pub division: u16,
    pub tempo: u32,
}

/// Full transcription: spectrogram, per-frame network outputs, run
/// extraction, and a format-0 MIDI file at the given output path.
pub fn transcribe(
    audio_path: &Path,
    net: &Network,
    out_midi: &Path,
    cfg: &SpectroConfig,
    params: &TranscribeParams,
) -> Result<NoteIntervalSet, PipelineError> {
    if net.config().input_bins != cfg.bins() {
        return Err(PipelineError::Invalid(format!(
            "network expects {} bins but the spectrogram config yields {}",
            net.config().input_bins,
            cfg.bins()
        )));
    }
    let clip = audio::read_wav(audio_path)?;
    let mono = audio::mixdown(&clip)?;
    if mono.sample_rate() != cfg.sample_rate {
        return Err(PipelineError::Invalid(format!(
            "{}: sample rate {} does not match configured {}",
            audio_path.display(),
            mono.sample_rate(),
            cfg.sample_rate
        )));
    }
    let spec = compute_spectrogram(&mono, cfg)?;
    let context = net.config().context;
    let input = if context > 1 {
        context_windows_matrix(spec.matrix(), context)?
    } else {
        spec.matrix().clone()
    };
    let probs = if input.rows() == 0 {
        Matrix::zeros(0, NUM_NOTES)
    } else {
        net.forward(&input)?
    };
    let matrix = Mnpm::new(probs, cfg)?;
    let intervals = postprocess(&matrix, params.threshold, params.min_frames);
    midi::write_smf(&intervals, params.division, params.tempo, out_midi)?;
    Ok(intervals)
}

/// Writes the probability matrix a network assigns to a clip, without
/// thresholding; used by the `midi2mnpm`-adjacent inspection flows.
pub fn infer_mnpm(
    net: &Network,
    clip: &AudioClip,
    cfg: &SpectroConfig,
) -> Result<Mnpm, PipelineError> {
    let spec = compute_spectrogram(clip, cfg)?;
    let context = net.config().context;
    let input = if context > 1 {
        context_windows_matrix(spec.matrix(), context)?
    } else {
        spec.matrix().clone()
    };
    let probs = if input.rows() == 0 {
        Matrix::zeros(0, NUM_NOTES)
    } else {
        net.forward(&input)?
    };
    Ok(Mnpm::new(probs, cfg)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrogram::Window;

    fn small_spectro() -> SpectroConfig {
        SpectroConfig::new(256, 128, Window::Hann, true, 8000).unwrap()
    }

    fn small_synth() -> SynthConfig {
        SynthConfig {
            sample_rate: 8000,
            ..SynthConfig::default()
        }
    }

    fn write_pair(
        dir: &Path,
        stem: &str,
        notes: &[(u8, f64, f64)],
        secs: f64,
    ) -> (PathBuf, PathBuf) {
        let intervals: Vec<NoteInterval> = notes
            .iter()
            .map(|&(note, onset, offset)| NoteInterval {
                note,
                onset,
                offset,
            })
            .collect();
        let p = NoteIntervalSet::new(intervals).unwrap();
        let wav = dir.join(format!("{}.wav", stem));
        let mid = dir.join(format!("{}.mid", stem));
        let clip = synth::render(&p, &small_synth(), secs).unwrap();
        audio::write_wav(&clip, &wav).unwrap();
        midi::write_smf(&p, 480, 500_000, &mid).unwrap();
        (wav, mid)
    }

    #[test]
    fn manifest_parsing_and_split_exclusivity() {
        let m = parse_manifest("# corpus\ntrain a.wav a.mid\nval b.wav b.mid\n\n").unwrap();
        assert_eq!(m.entries.len(), 2);
        assert_eq!(m.entries[0].split, Split::Train);

        assert!(parse_manifest("train a.wav\n").is_err());
        assert!(parse_manifest("dev a.wav a.mid\n").is_err());
        let err = parse_manifest("train a.wav a.mid\ntest a.wav a.mid\n");
        assert!(matches!(err, Err(PipelineError::Manifest { line: 2, .. })));
    }

    #[test]
    fn empty_manifest_builds_empty_splits() {
        let splits =
            build_dataset(&DatasetManifest::default(), &small_spectro(), &[], 1).unwrap();
        assert!(splits.train.is_empty());
        assert!(splits.val.is_empty());
        assert!(splits.test.is_empty());
    }

    #[test]
    fn build_dataset_aligns_frames_and_isolates_splits() {
        let dir = tempfile::tempdir().unwrap();
        let (wav_a, mid_a) = write_pair(dir.path(), "a", &[(60, 0.1, 0.9)], 1.0);
        let (wav_b, mid_b) = write_pair(dir.path(), "b", &[(64, 0.1, 0.9)], 1.0);
        let (wav_c, mid_c) = write_pair(dir.path(), "c", &[(67, 0.1, 0.9)], 1.0);
        let manifest = DatasetManifest {
            entries: vec![
                ManifestEntry {
                    split: Split::Train,
                    audio: wav_a,
                    midi: mid_a,
                },
                ManifestEntry {
                    split: Split::Val,
                    audio: wav_b,
                    midi: mid_b,
                },
                ManifestEntry {
                    split: Split::Test,
                    audio: wav_c,
                    midi: mid_c,
                },
            ],
        };

        let plan = vec![PlanOp::TimeReverse];
        let splits = build_dataset(&manifest, &small_spectro(), &plan, 1).unwrap();
        assert_eq!(splits.train.len(), 2, "train split doubles");
        assert_eq!(splits.val.len(), 1);
        assert_eq!(splits.test.len(), 1);

        for s in splits.train.iter().chain(&splits.val).chain(&splits.test) {
            assert_eq!(s.input.frames(), s.labels.rows());
        }
        // split isolation: only training samples carry augmentation
        assert!(splits.val.iter().all(|s| s.provenance.is_empty()));
        assert!(splits.test.iter().all(|s| s.provenance.is_empty()));
        assert_eq!(splits.train[1].provenance, vec![AugmentOp::TimeReverse]);
    }

    #[test]
    fn build_dataset_with_noise_and_context() {
        let dir = tempfile::tempdir().unwrap();
        let (wav, mid) = write_pair(dir.path(), "n", &[(60, 0.1, 0.9)], 1.0);
        let manifest = DatasetManifest {
            entries: vec![ManifestEntry {
                split: Split::Train,
                audio: wav,
                midi: mid,
            }],
        };
        let plan = vec![PlanOp::Noise {
            kind: augment::NoiseKind::White,
            snr_db: 20.0,
            seed: 3,
        }];
        let splits = build_dataset(&manifest, &small_spectro(), &plan, 3).unwrap();
        assert_eq!(splits.train.len(), 2);
        match &splits.train[0].input {
            SampleInput::Context {
                context,
                slice_width,
                ..
            } => {
                assert_eq!(*context, 3);
                assert_eq!(*slice_width, small_spectro().bins());
            }
            other => panic!("expected context input, got {:?}", other),
        }
        assert_eq!(
            splits.train[1].provenance,
            vec![AugmentOp::Noise {
                kind: augment::NoiseKind::White,
                snr_db: 20.0
            }]
        );
        // the noisy twin shares its labels with the original
        assert_eq!(
            splits.train[0].labels.matrix(),
            splits.train[1].labels.matrix()
        );
    }

    #[test]
    fn metric_counting_closed_forms() {
        let cfg = small_spectro();
        let mut labels = Matrix::zeros(10, NUM_NOTES);
        for i in 0..4 {
            labels.set(i, 60, 1.0);
        }
        let sample = LabeledSample::new(
            SampleInput::Frames(Matrix::zeros(10, cfg.bins())),
            Mnpm::new(labels.clone(), &cfg).unwrap(),
        )
        .unwrap();

        // identical predictions: everything 1.0
        let m = sample_counts(&labels, &sample, 0.5).into_metrics();
        assert_eq!(m.frame_precision, 1.0);
        assert_eq!(m.frame_recall, 1.0);
        assert_eq!(m.frame_f1, 1.0);
        assert_eq!(m.note_f1, 1.0);
        assert!(!m.frame_precision_undefined);

        // all-zero predictions: recall 0, precision reported 0 + flag
        let zeros = Matrix::zeros(10, NUM_NOTES);
        let m = sample_counts(&zeros, &sample, 0.5).into_metrics();
        assert_eq!(m.frame_recall, 0.0);
        assert_eq!(m.frame_precision, 0.0);
        assert!(m.frame_precision_undefined);

        // half the active frames hit, no false positives:
        // precision 1, recall 0.5, f1 = 2/3
        let mut half = Matrix::zeros(10, NUM_NOTES);
        half.set(0, 60, 1.0);
        half.set(1, 60, 1.0);
        let m = sample_counts(&half, &sample, 0.5).into_metrics();
        assert_eq!(m.frame_precision, 1.0);
        assert_eq!(m.frame_recall, 0.5);
        assert!((m.frame_f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn curve_csv_round_trips_exactly() {
        let curve = LearningCurve {
            records: vec![
                EpochRecord {
                    epoch: 1,
                    train_loss: 0.684231,
                    val_loss: 0.70001,
                    val_frame_f1: 0.25,
                },
                EpochRecord {
                    epoch: 2,
                    train_loss: 0.11111,
                    val_loss: 0.2,
                    val_frame_f1: 0.875,
                },
            ],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curve.csv");
        curve.export_csv(&path).unwrap();
        let loaded = LearningCurve::load_csv(&path).unwrap();
        let path2 = dir.path().join("curve2.csv");
        loaded.export_csv(&path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
        assert_eq!(loaded.records.len(), 2);
        assert_eq!(loaded.records[1].epoch, 2);
    }

    #[test]
    fn train_model_curve_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let (wav, mid) = write_pair(dir.path(), "t", &[(60, 0.1, 0.9)], 1.0);
        let manifest = DatasetManifest {
            entries: vec![ManifestEntry {
                split: Split::Train,
                audio: wav,
                midi: mid,
            }],
        };
        let splits = build_dataset(&manifest, &small_spectro(), &[], 1).unwrap();
        let net_cfg = NetworkConfig {
            model: ModelKind::A,
            input_bins: small_spectro().bins(),
            context: 1,
            hidden: vec![16],
            activation: Activation::Relu,
        };
        let train_cfg = TrainConfig {
            epochs: 1,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let (_, curve) = train_model(&splits, &net_cfg, &train_cfg).unwrap();
        assert_eq!(curve.records.len(), 1);
        assert_eq!(curve.records[0].epoch, 1);

        let (net_a, curve_a) = train_model(&splits, &net_cfg, &train_cfg).unwrap();
        let (net_b, curve_b) = train_model(&splits, &net_cfg, &train_cfg).unwrap();
        assert_eq!(curve_a, curve_b);
        assert_eq!(net_a.flat_params(), net_b.flat_params());

        let empty = SplitSamples::default();
        assert!(train_model(&empty, &net_cfg, &train_cfg).is_err());
    }

    #[test]
    fn evaluate_is_order_invariant() {
        let cfg = small_spectro();
        let net_cfg = NetworkConfig {
            model: ModelKind::A,
            input_bins: cfg.bins(),
            context: 1,
            hidden: vec![8],
            activation: Activation::Tanh,
        };
        let net = init_network(&net_cfg, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let samples: Vec<LabeledSample> = (0..4)
            .map(|_| {
                let rows = rng.gen_range(3..10);
                let input = Matrix::from_vec(
                    rows,
                    cfg.bins(),
                    (0..rows * cfg.bins()).map(|_| rng.gen_range(0.0..1.0)).collect(),
                );
                let mut labels = Matrix::zeros(rows, NUM_NOTES);
                labels.set(0, 65, 1.0);
                LabeledSample::new(
                    SampleInput::Frames(input),
                    Mnpm::new(labels, &cfg).unwrap(),
                )
                .unwrap()
            })
            .collect();
        let forward = evaluate(&net, &samples, 0.5).unwrap();
        let mut shuffled = samples.clone();
        shuffled.reverse();
        let backward = evaluate(&net, &shuffled, 0.5).unwrap();
        assert_eq!(forward, backward);

        assert!(evaluate(&net, &[], 0.5).is_err());
    }

    #[test]
    fn study_control_equal_sets_give_equal_metrics() {
        let cfg = StudyConfig {
            spectro: small_spectro(),
            synth: small_synth(),
            train: TrainConfig {
                epochs: 2,
                batch_size: 32,
                learning_rate: 0.1,
                ..TrainConfig::default()
            },
            hidden: vec![16],
            activation: Activation::Relu,
            clips_per_chord: 2,
            eval_clips_per_chord: 1,
            clip_secs: (0.4, 0.6),
            threshold: 0.5,
        };
        let train_chords = vec![vec![60u8, 64], vec![62, 65], vec![64, 67]];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let eval: Vec<LabeledSample> = train_chords
            .iter()
            .map(|c| render_chord_sample(c, &cfg, &mut rng).unwrap())
            .collect();
        // feeding the same clips into both slots must give identical
        // metric blocks
        let (_, report, _) = study_with_sets(&train_chords, &eval, &eval, &cfg).unwrap();
        assert_eq!(report.seen, report.unseen);
        assert_eq!(report.gap(), 0.0);
    }

    #[test]
    fn study_rejects_overlapping_chord_sets() {
        let cfg = StudyConfig {
            spectro: small_spectro(),
            synth: small_synth(),
            train: TrainConfig::default(),
            hidden: vec![8],
            activation: Activation::Relu,
            clips_per_chord: 1,
            eval_clips_per_chord: 1,
            clip_secs: (0.4, 0.5),
            threshold: 0.5,
        };
        let err = unseen_combination_study(
            &[vec![60, 64], vec![62, 65]],
            &[vec![64, 60]],
            &cfg,
        );
        assert!(matches!(err, Err(PipelineError::Invalid(_))));
    }

    #[test]
    fn transcribe_trained_model_handles_silence() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_spectro();
        // a couple of training clips so silence maps to no activations
        let (wav_a, mid_a) = write_pair(dir.path(), "s1", &[(60, 0.1, 0.9)], 1.0);
        let (wav_b, mid_b) = write_pair(dir.path(), "s2", &[(72, 0.1, 0.9)], 1.0);
        let manifest = DatasetManifest {
            entries: vec![
                ManifestEntry {
                    split: Split::Train,
                    audio: wav_a,
                    midi: mid_a,
                },
                ManifestEntry {
                    split: Split::Train,
                    audio: wav_b,
                    midi: mid_b,
                },
            ],
        };
        let splits = build_dataset(&manifest, &cfg, &[], 1).unwrap();
        let net_cfg = NetworkConfig {
            model: ModelKind::A,
            input_bins: cfg.bins(),
            context: 1,
            hidden: vec![16],
            activation: Activation::Relu,
        };
        let train_cfg = TrainConfig {
            epochs: 10,
            batch_size: 16,
            learning_rate: 0.2,
            ..TrainConfig::default()
        };
        let (net, _) = train_model(&splits, &net_cfg, &train_cfg).unwrap();

        let silence = AudioClip::mono(vec![0.0; 8000], 8000).unwrap();
        let silent_wav = dir.path().join("silence.wav");
        audio::write_wav(&silence, &silent_wav).unwrap();
        let out_mid = dir.path().join("out.mid");
        let params = TranscribeParams {
            threshold: 0.5,
            min_frames: 2,
            division: 480,
            tempo: 500_000,
        };
        let set = transcribe(&silent_wav, &net, &out_mid, &cfg, &params).unwrap();
        assert!(set.is_empty(), "got notes from silence: {:?}", set.intervals());
        // the written file is a valid empty SMF
        let midi = midi::read_smf(&out_mid).unwrap();
        assert_eq!(midi.extract_intervals().0.len(), 0);
    }
}
