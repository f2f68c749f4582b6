//! Command-line interface: one subcommand per pipeline stage, exit code
//! 0 on success, 1 on usage errors, 2 on data or format errors. All
//! diagnostics go to stderr; data goes to files or stdout.

use std::collections::HashSet;
use std::fmt::Display;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio;
use crate::augment::{self, PlanOp};
use crate::config::AppConfig;
use crate::midi;
use crate::mnpm::{build_mnpm, render_mnpm_image, save_mnpm};
use crate::nn::{load_checkpoint, save_checkpoint, ModelKind};
use crate::pipeline::{
    self, build_dataset, evaluate, load_manifest, train_model, transcribe, Split, StudyConfig,
    TranscribeParams,
};
use crate::spectrogram::{compute_spectrogram, SpectroConfig, Window};
use crate::synth;

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
}

impl<E: Display> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Data(e.to_string())
    }
}

type CliResult = Result<(), CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Parser)]
#[command(
    name = "mnpm",
    version,
    about = "Audio-to-MIDI transcription via note probability matrices"
)]
struct Cli {
    /// Config file (key = value); defaults to ./mnpm.conf when present
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for parallel stages; 0 uses every core
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute a spectrogram and export it as CSV (and optionally PGM)
    Spectrogram {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Also render a min-max normalized PGM image
        #[arg(long)]
        pgm: Option<PathBuf>,
        #[arg(long)]
        frame_length: Option<usize>,
        #[arg(long)]
        hop: Option<usize>,
        /// Window function: hann or rectangular
        #[arg(long)]
        window: Option<String>,
        /// Keep linear magnitudes instead of log scaling
        #[arg(long)]
        linear: bool,
    },

    /// Build the note probability matrix of a MIDI file on a frame grid
    #[command(name = "midi2mnpm")]
    Midi2Mnpm {
        input: PathBuf,
        /// Take the frame count from this WAV under the current config
        #[arg(long)]
        frames_from: Option<PathBuf>,
        /// Explicit frame count
        #[arg(long)]
        frames: Option<usize>,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        pgm: Option<PathBuf>,
        /// MIDI channels to ignore (repeatable)
        #[arg(long)]
        exclude_channel: Vec<u8>,
    },

    /// Render a MIDI file to a WAV via additive synthesis
    Synth {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Seconds; defaults to the last note offset plus release
        #[arg(long)]
        duration: Option<f64>,
    },

    /// Expand one labeled (wav, midi) pair under an augmentation plan
    Augment {
        audio: PathBuf,
        midi: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        /// Output directory for the expanded samples
        #[arg(short, long)]
        output: PathBuf,
    },

    /// Train a model on a manifest of (wav, midi) pairs
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Model (A, B or C); overrides the config file
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Augmentation plan applied to the training split
        #[arg(long)]
        plan: Option<PathBuf>,
        /// Learning-curve CSV path
        #[arg(long)]
        curve: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },

    /// Evaluate a checkpoint on one split of a manifest
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Split to evaluate: train, val or test
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        threshold: Option<f64>,
    },

    /// Run the unseen-chord generalization study
    Study {
        /// Note pool, comma-separated MIDI numbers
        #[arg(long)]
        notes: String,
        #[arg(long, default_value_t = 2)]
        chord_size: usize,
        #[arg(long, default_value_t = 30)]
        train_chords: usize,
        #[arg(long, default_value_t = 10)]
        test_chords: usize,
        /// Plain-text report path
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Rendered training clips per chord
        #[arg(long, default_value_t = 3)]
        clips_per_chord: usize,
    },

    /// Transcribe a WAV to MIDI with a trained checkpoint
    Transcribe {
        input: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Also export the intervals as note,onset_seconds,offset_seconds
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Also dump the raw probability matrix before thresholding
        #[arg(long)]
        mnpm: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        min_frames: Option<usize>,
    },
}

/// Parses argv and dispatches; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };

    if cli.jobs > 0 {
        // ignore failure: the global pool may already exist in-process
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global();
    }

    let config = match load_config(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}", e);
            return 2;
        }
    };

    match dispatch(cli.command, &config) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {}", msg);
            1
        }
        Err(CliError::Data(msg)) => {
            eprintln!("error: {}", msg);
            2
        }
    }
}

fn load_config(explicit: Option<&Path>) -> Result<AppConfig, String> {
    match explicit {
        Some(path) => AppConfig::load(path).map_err(|e| e.to_string()),
        None => {
            let default = Path::new("mnpm.conf");
            if default.exists() {
                AppConfig::load(default).map_err(|e| e.to_string())
            } else {
                Ok(AppConfig::default())
            }
        }
    }
}

fn parse_model(name: &str) -> Result<ModelKind, CliError> {
    match name {
        "A" | "a" => Ok(ModelKind::A),
        "B" | "b" => Ok(ModelKind::B),
        "C" | "c" => Ok(ModelKind::C),
        _ => Err(usage(format!("unknown model '{}'", name))),
    }
}

fn dispatch(command: Command, config: &AppConfig) -> CliResult {
    match command {
        Command::Spectrogram {
            input,
            output,
            pgm,
            frame_length,
            hop,
            window,
            linear,
        } => {
            let clip = audio::read_wav(&input)?;
            let mono = audio::mixdown(&clip)?;
            let window = match window.as_deref() {
                None => config.window,
                Some("hann") => Window::Hann,
                Some("rectangular") => Window::Rectangular,
                Some(other) => return Err(usage(format!("unknown window '{}'", other))),
            };
            let cfg = SpectroConfig::new(
                frame_length.unwrap_or(config.frame_length),
                hop.unwrap_or(config.hop),
                window,
                if linear { false } else { config.log_scale },
                mono.sample_rate(),
            )?;
            let spec = compute_spectrogram(&mono, &cfg)?;
            crate::spectrogram::export_csv(&spec, &output)?;
            if let Some(pgm_path) = pgm {
                crate::spectrogram::export_pgm(&spec, &pgm_path)?;
            }
            eprintln!(
                "{}: {} frames x {} bins",
                input.display(),
                spec.frames(),
                spec.bins()
            );
            Ok(())
        }

        Command::Midi2Mnpm {
            input,
            frames_from,
            frames,
            output,
            csv,
            pgm,
            exclude_channel,
        } => {
            let cfg = config.spectro()?;
            let num_frames = match (frames_from, frames) {
                (Some(wav), None) => {
                    let clip = audio::read_wav(&wav)?;
                    let mono = audio::mixdown(&clip)?;
                    if mono.sample_rate() != cfg.sample_rate {
                        return Err(CliError::Data(format!(
                            "{}: sample rate {} does not match configured {}",
                            wav.display(),
                            mono.sample_rate(),
                            cfg.sample_rate
                        )));
                    }
                    cfg.num_frames(mono.len())
                }
                (None, Some(n)) => n,
                _ => {
                    return Err(usage(
                        "provide exactly one of --frames-from <wav> or --frames <n>",
                    ))
                }
            };
            let file = midi::read_smf(&input)?;
            let (intervals, unmatched) = file.extract_intervals_filtered(&exclude_channel);
            if unmatched > 0 {
                eprintln!(
                    "warning: {} note-on events were never closed; ended at final event",
                    unmatched
                );
            }
            let matrix = build_mnpm(&intervals, num_frames, &cfg);
            save_mnpm(&matrix, &output)?;
            if let Some(csv_path) = csv {
                crate::mnpm::export_csv(&matrix, &csv_path)?;
            }
            if let Some(pgm_path) = pgm {
                render_mnpm_image(&matrix, &pgm_path)?;
            }
            eprintln!(
                "{}: {} intervals over {} frames",
                input.display(),
                intervals.len(),
                num_frames
            );
            Ok(())
        }

        Command::Synth {
            input,
            output,
            duration,
        } => {
            let file = midi::read_smf(&input)?;
            let (intervals, _) = file.extract_intervals();
            let synth_cfg = config.synth();
            let secs = duration
                .unwrap_or(intervals.max_offset() + config.release_ms / 1000.0 + 0.05);
            let clip = synth::render(&intervals, &synth_cfg, secs)?;
            audio::write_wav(&clip, &output)?;
            eprintln!(
                "{}: rendered {} notes over {:.2} s",
                output.display(),
                intervals.len(),
                secs
            );
            Ok(())
        }

        Command::Augment {
            audio: audio_path,
            midi: midi_path,
            plan,
            output,
        } => {
            let cfg = config.spectro()?;
            let ops = augment::load_plan(&plan)?;
            warn_experimental(&ops);
            let manifest = pipeline::DatasetManifest {
                entries: vec![pipeline::ManifestEntry {
                    split: Split::Train,
                    audio: audio_path,
                    midi: midi_path,
                }],
            };
            let splits = build_dataset(&manifest, &cfg, &ops, 1)?;
            std::fs::create_dir_all(&output).map_err(|e| CliError::Data(e.to_string()))?;
            let mut provenance = String::new();
            for (i, sample) in splits.train.iter().enumerate() {
                let spec_csv = output.join(format!("sample_{:03}.spec.csv", i));
                write_matrix_csv(sample.input.matrix(), &spec_csv)?;
                save_mnpm(&sample.labels, &output.join(format!("sample_{:03}.mnpm", i)))?;
                provenance.push_str(&format!("sample_{:03}: {:?}\n", i, sample.provenance));
            }
            std::fs::write(output.join("provenance.txt"), provenance)
                .map_err(|e| CliError::Data(e.to_string()))?;
            eprintln!("wrote {} samples to {}", splits.train.len(), output.display());
            Ok(())
        }

        Command::Train {
            manifest,
            model,
            epochs,
            plan,
            curve,
            output,
            seed,
        } => {
            let cfg = config.spectro()?;
            let model = match model {
                Some(name) => parse_model(&name)?,
                None => config.model,
            };
            let ops = match plan {
                Some(path) => augment::load_plan(&path)?,
                None => Vec::new(),
            };
            warn_experimental(&ops);
            let mut train_cfg = config.train();
            if let Some(e) = epochs {
                train_cfg.epochs = e;
            }
            if let Some(s) = seed {
                train_cfg.seed = s;
            }
            let net_cfg = config.network(model, cfg.bins());
            let manifest = load_manifest(&manifest)?;
            let splits = build_dataset(&manifest, &cfg, &ops, net_cfg.context)?;
            eprintln!(
                "dataset: {} train / {} val / {} test samples",
                splits.train.len(),
                splits.val.len(),
                splits.test.len()
            );
            let (net, learning_curve) = train_model(&splits, &net_cfg, &train_cfg)?;
            for r in &learning_curve.records {
                eprintln!(
                    "epoch {:>3}: train loss {:.6}  val loss {:.6}  val F1 {:.4}",
                    r.epoch, r.train_loss, r.val_loss, r.val_frame_f1
                );
            }
            if let Some(curve_path) = curve {
                learning_curve.export_csv(&curve_path)?;
            }
            save_checkpoint(&net, &output)?;
            eprintln!("checkpoint written to {}", output.display());
            Ok(())
        }

        Command::Eval {
            manifest,
            checkpoint,
            split,
            threshold,
        } => {
            let cfg = config.spectro()?;
            let net = load_checkpoint(&checkpoint)?;
            let manifest = load_manifest(&manifest)?;
            let splits = build_dataset(&manifest, &cfg, &[], net.config().context)?;
            let samples = match split.as_str() {
                "train" => &splits.train,
                "val" => &splits.val,
                "test" => &splits.test,
                other => return Err(usage(format!("unknown split '{}'", other))),
            };
            let metrics = evaluate(&net, samples, threshold.unwrap_or(config.threshold))?;
            println!("frame_precision,{:.6}", metrics.frame_precision);
            println!("frame_recall,{:.6}", metrics.frame_recall);
            println!("frame_f1,{:.6}", metrics.frame_f1);
            println!("note_f1,{:.6}", metrics.note_f1);
            if metrics.frame_precision_undefined {
                eprintln!("note: no positive predictions; precision reported as 0");
            }
            Ok(())
        }

        Command::Study {
            notes,
            chord_size,
            train_chords,
            test_chords,
            output,
            csv,
            seed,
            epochs,
            clips_per_chord,
        } => {
            let pool: Vec<u8> = notes
                .split(',')
                .map(|t| t.trim().parse::<u8>())
                .collect::<Result<_, _>>()
                .map_err(|_| usage(format!("bad note list '{}'", notes)))?;
            let seed = seed.unwrap_or(config.seed);
            let (train_set, test_set) =
                draw_chord_sets(&pool, chord_size, train_chords, test_chords, seed)?;

            let mut train_cfg = config.train();
            train_cfg.seed = seed;
            if let Some(e) = epochs {
                train_cfg.epochs = e;
            }
            let study_cfg = StudyConfig {
                spectro: config.spectro()?,
                synth: config.synth(),
                train: train_cfg,
                hidden: config.hidden_for(ModelKind::A),
                activation: config.activation,
                clips_per_chord,
                eval_clips_per_chord: 2,
                clip_secs: (0.5, 1.5),
                threshold: config.threshold,
            };
            let report = pipeline::unseen_combination_study(&train_set, &test_set, &study_cfg)?;
            std::fs::write(&output, report.render_text())
                .map_err(|e| CliError::Data(e.to_string()))?;
            if let Some(csv_path) = csv {
                report.export_csv(&csv_path)?;
            }
            print!("{}", report.render_text());
            Ok(())
        }

        Command::Transcribe {
            input,
            checkpoint,
            output,
            csv,
            mnpm,
            threshold,
            min_frames,
        } => {
            let net = load_checkpoint(&checkpoint)?;
            // the checkpoint pins the bin count; everything else comes
            // from the config
            let frame_length = (net.config().input_bins - 1) * 2;
            let cfg = SpectroConfig::new(
                frame_length,
                config.hop,
                config.window,
                config.log_scale,
                config.sample_rate,
            )?;
            let params = TranscribeParams {
                threshold: threshold.unwrap_or(config.threshold),
                min_frames: min_frames.unwrap_or(config.min_frames),
                division: config.division,
                tempo: config.tempo,
            };
            let intervals = transcribe(&input, &net, &output, &cfg, &params)?;
            if let Some(csv_path) = csv {
                intervals.export_csv(&csv_path)?;
            }
            if let Some(mnpm_path) = mnpm {
                let clip = audio::mixdown(&audio::read_wav(&input)?)?;
                let probs = pipeline::infer_mnpm(&net, &clip, &cfg)?;
                save_mnpm(&probs, &mnpm_path)?;
            }
            eprintln!(
                "{}: {} notes -> {}",
                input.display(),
                intervals.len(),
                output.display()
            );
            Ok(())
        }
    }
}

fn warn_experimental(ops: &[PlanOp]) {
    for op in ops {
        if !op.is_time_aligned() {
            eprintln!(
                "warning: {:?} has no defined label semantics; labels pass through unchanged",
                op
            );
        }
    }
}

fn write_matrix_csv(m: &crate::matrix::Matrix, path: &Path) -> CliResult {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for i in 0..m.rows() {
        let row = m.row(i);
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

/// Draws disjoint chord sets from a note pool, deterministically per
/// seed.
fn draw_chord_sets(
    pool: &[u8],
    chord_size: usize,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<(Vec<Vec<u8>>, Vec<Vec<u8>>), CliError> {
    if chord_size == 0 || chord_size > pool.len() {
        return Err(usage(format!(
            "chord size {} impossible with a pool of {} notes",
            chord_size,
            pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen: HashSet<Vec<u8>> = HashSet::new();
    let mut chords = Vec::new();
    let needed = n_train + n_test;
    let mut tries = 0usize;
    while chords.len() < needed {
        tries += 1;
        if tries > needed.saturating_mul(10_000) {
            return Err(usage(format!(
                "could not draw {} distinct chords of size {} from {} notes",
                needed,
                chord_size,
                pool.len()
            )));
        }
        let mut indices: Vec<usize> = (0..pool.len()).collect();
        indices.shuffle(&mut rng);
        let mut chord: Vec<u8> = indices[..chord_size].iter().map(|&i| pool[i]).collect();
        chord.sort_unstable();
        if seen.insert(chord.clone()) {
            chords.push(chord);
        }
    }
    let test = chords.split_off(n_train);
    Ok((chords, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chord_sets_are_disjoint_and_deterministic() {
        let pool: Vec<u8> = (60..72).collect();
        let (train, test) = draw_chord_sets(&pool, 2, 30, 10, 7).unwrap();
        assert_eq!(train.len(), 30);
        assert_eq!(test.len(), 10);
        for t in &test {
            assert!(!train.contains(t));
        }
        let (train2, test2) = draw_chord_sets(&pool, 2, 30, 10, 7).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);

        // 12 choose 2 = 66 distinct chords; asking for more must fail
        assert!(draw_chord_sets(&pool, 2, 60, 10, 7).is_err());
    }

    #[test]
    fn model_names_parse() {
        assert_eq!(parse_model("A").unwrap(), ModelKind::A);
        assert_eq!(parse_model("b").unwrap(), ModelKind::B);
        assert!(parse_model("D").is_err());
    }
}
