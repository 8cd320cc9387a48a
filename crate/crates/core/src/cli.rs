//! Command-line front end: `synth`, `mix`, `train`, `track` and `eval`.
//!
//! Output layout under the manifest's output directory:
//! `noisy/{split}/{condition}/{utt}.wav`, `models/{kind}.f0tk`,
//! `models/{kind}_log.csv`, `contours/{tracker}/{condition}/{utt}.csv`,
//! `report.csv` and `report_by_utterance.csv`.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::dsp::FramingConfig;
use crate::error::{Error, Result};
use crate::eval::{aggregate, report_csv, score_utterance, utterance_csv, GroupKey, ScoreRow};
use crate::manifest::{Condition, ExperimentManifest, NoiseEntry, Split, Splits, TrackerName};
use crate::models::{
    align_ground_truth, load_model, load_model_expecting, save_model, track, train_tracker,
    write_training_log, TrackerKind, TrackerModel, Utterance,
};
use crate::rng::derive_seed;
use crate::signal_io::{
    load_f0_ground_truth, mix_noise_components, read_wav, write_wav, F0Contour, NoiseSpec,
};
use crate::synth::{
    generate_corpus, utterance_id, white_noise, write_corpus, ContourShape, SynthConfig,
};
use crate::yin::{yin_track, YinConfig};

#[derive(Debug, Parser)]
#[command(name = "f0track", version, about = "F0 contour tracking experiments")]
pub struct Cli {
    /// Experiment manifest (TOML).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    /// Overrides the manifest seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory; overrides the manifest's `output_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic harmonic corpus, a white-noise file and a manifest.
    Synth(SynthArgs),
    /// Render every split in every noise condition.
    Mix,
    /// Train one tracker on the train split, selecting epochs on cv.
    Train(TrainArgs),
    /// Track WAV files with a model, or the whole test split from a manifest.
    Track(TrackArgs),
    /// Score tracked contours against the references.
    Eval,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    pub n_train: usize,
    #[arg(long, default_value_t = 20)]
    pub n_cv: usize,
    #[arg(long, default_value_t = 50)]
    pub n_test: usize,
    #[arg(long, default_value_t = 2.0)]
    pub duration: f64,
    #[arg(long, default_value_t = 80.0)]
    pub f0_min: f64,
    #[arg(long, default_value_t = 300.0)]
    pub f0_max: f64,
    /// constant, glide, vibrato or mixed.
    #[arg(long, default_value = "mixed")]
    pub shape: String,
    /// Mixing SNRs written to the manifest.
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        default_value = "10"
    )]
    pub snr_db: Vec<f64>,
    #[arg(long, default_value_t = 30.0)]
    pub noise_seconds: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// dnn_reg, rnn_reg or dnn_hmm.
    #[arg(long)]
    pub kind: TrackerKind,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    /// Model file or `yin`; with no model the manifest's trackers are run.
    #[arg(long)]
    pub model: Option<String>,
    /// WAV files to track in model mode.
    pub inputs: Vec<PathBuf>,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Error::Config("--jobs must be positive".into()));
        }
        // A pool may already exist when called repeatedly in one process.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    match &cli.command {
        Command::Synth(args) => synth(cli, args),
        Command::Mix => mix(&manifest(cli)?),
        Command::Train(args) => train(&manifest(cli)?, args.kind),
        Command::Track(args) => match &args.model {
            Some(model) => track_files(cli, model, &args.inputs),
            None => track_manifest(&manifest(cli)?),
        },
        Command::Eval => evaluate(&manifest(cli)?),
    }
}

fn manifest(cli: &Cli) -> Result<ExperimentManifest> {
    let path = cli
        .manifest
        .as_ref()
        .ok_or_else(|| Error::Config("this command needs --manifest".into()))?;
    let mut m = ExperimentManifest::load(path)?;
    if let Some(seed) = cli.seed {
        m.seed = seed;
    }
    if let Some(out) = &cli.out {
        m.output_dir = std::env::current_dir()
            .map_err(|e| Error::io(".", e))?
            .join(out);
    }
    Ok(m)
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn parse_shape(s: &str) -> Result<ContourShape> {
    match s {
        "constant" => Ok(ContourShape::Constant),
        "glide" => Ok(ContourShape::Glide),
        "vibrato" => Ok(ContourShape::Vibrato),
        "mixed" => Ok(ContourShape::Mixed),
        other => Err(Error::Config(format!("unknown contour shape {other:?}"))),
    }
}

fn synth(cli: &Cli, args: &SynthArgs) -> Result<()> {
    let dir = cli
        .out
        .as_ref()
        .ok_or_else(|| Error::Config("synth needs --out for the corpus directory".into()))?;
    let seed = cli.seed.unwrap_or(0);
    let cfg = SynthConfig {
        n_utts: args.n_train + args.n_cv + args.n_test,
        duration_s: args.duration,
        f0_min_hz: args.f0_min,
        f0_max_hz: args.f0_max,
        shape: parse_shape(&args.shape)?,
        seed,
        ..Default::default()
    };
    if cfg.n_utts == 0 {
        return Err(Error::Config("synth needs at least one utterance".into()));
    }
    if !(args.noise_seconds > 0.0) {
        return Err(Error::Config("--noise-seconds must be positive".into()));
    }
    let utts = generate_corpus(&cfg)?;
    write_corpus(dir, &utts)?;
    let noise_dir = dir.join("noise");
    create_dir(&noise_dir)?;
    let n_noise = (args.noise_seconds * f64::from(cfg.sample_rate_hz)).round() as usize;
    let noise = white_noise(n_noise, cfg.sample_rate_hz, 0.5, derive_seed(seed, "white"))?;
    write_wav(&noise_dir.join("white.wav"), &noise)?;

    let ids: Vec<String> = (0..cfg.n_utts).map(utterance_id).collect();
    let (train, rest) = ids.split_at(args.n_train);
    let (cv, test) = rest.split_at(args.n_cv);
    let m = ExperimentManifest {
        seed,
        output_dir: PathBuf::from("run"),
        snr_db: args.snr_db.clone(),
        splits: Splits {
            train: train.to_vec(),
            cv: cv.to_vec(),
            test: test.to_vec(),
        },
        noises: vec![NoiseEntry {
            name: "white".into(),
            path: PathBuf::from("noise/white.wav"),
            train: true,
            test: true,
        }],
        framing: FramingConfig::untrimmed(),
        synth: cfg,
        ..Default::default()
    };
    m.validate()?;
    let path = dir.join("manifest.toml");
    fs::write(&path, m.to_toml()?).map_err(|e| Error::io(&path, e))?;
    log::info!("wrote {} utterances and {}", ids.len(), path.display());
    Ok(())
}

fn noisy_path(m: &ExperimentManifest, split: Split, cond: &Condition, id: &str) -> PathBuf {
    m.out_dir()
        .join("noisy")
        .join(split.as_str())
        .join(cond.label())
        .join(format!("{id}.wav"))
}

/// Where the audio of `id` in `cond` lives: the dataset for clean audio,
/// the mixing output otherwise.
fn audio_path(m: &ExperimentManifest, split: Split, cond: &Condition, id: &str) -> PathBuf {
    match cond {
        Condition::Clean => m.clean_wav_path(id),
        Condition::Noisy { .. } => noisy_path(m, split, cond, id),
    }
}

/// Test conditions; clean when no noise applies to the test split.
fn test_conditions(m: &ExperimentManifest) -> Vec<Condition> {
    let c = m.conditions(Split::Test);
    if c.is_empty() {
        vec![Condition::Clean]
    } else {
        c
    }
}

fn load_noises(m: &ExperimentManifest) -> Result<HashMap<String, crate::Waveform>> {
    m.noises
        .iter()
        .map(|n| Ok((n.name.clone(), read_wav(&m.resolve(&n.path))?)))
        .collect()
}

fn mix(m: &ExperimentManifest) -> Result<()> {
    let noises = load_noises(m)?;
    let mut jobs = Vec::new();
    for split in Split::ALL {
        for cond in m.conditions(split) {
            create_dir(&noisy_path(m, split, &cond, "x").with_file_name(""))?;
            for id in m.splits.ids(split) {
                jobs.push((split, cond.clone(), id.clone()));
            }
        }
    }
    jobs.par_iter()
        .try_for_each(|(split, cond, id)| -> Result<()> {
            let speech = read_wav(&m.clean_wav_path(id))?;
            let out = match cond {
                Condition::Clean => speech,
                Condition::Noisy { noise, snr_db } => {
                    let spec = NoiseSpec {
                        noise: noises[noise].clone(),
                        snr_db: *snr_db,
                    };
                    let seed = derive_seed(
                        m.seed,
                        &format!("mix/{}/{}/{id}", split.as_str(), cond.label()),
                    );
                    mix_noise_components(&speech, &spec, seed)?.mixed
                }
            };
            write_wav(&noisy_path(m, *split, cond, id), &out)
        })?;
    log::info!("mixed {} files", jobs.len());
    Ok(())
}

fn load_split(m: &ExperimentManifest, split: Split) -> Result<Vec<Utterance>> {
    let mut jobs = Vec::new();
    for cond in m.conditions(split) {
        for id in m.splits.ids(split) {
            jobs.push((cond.clone(), id.clone()));
        }
    }
    jobs.par_iter()
        .map(|(cond, id)| {
            Ok(Utterance {
                id: format!("{}/{id}", cond.label()),
                wave: read_wav(&audio_path(m, split, cond, id))?,
                truth: load_f0_ground_truth(&m.ground_truth_path(id), &m.dataset.ground_truth)?,
            })
        })
        .collect()
}

fn model_path(m: &ExperimentManifest, kind: TrackerKind) -> PathBuf {
    m.out_dir().join("models").join(format!("{kind}.f0tk"))
}

fn train(m: &ExperimentManifest, kind: TrackerKind) -> Result<()> {
    let train = load_split(m, Split::Train)?;
    let cv = load_split(m, Split::Cv)?;
    log::info!(
        "training {kind} on {} utterances ({} cv)",
        train.len(),
        cv.len()
    );
    let (model, log) = train_tracker(kind, &train, &cv, &m.tracker_setup())?;
    let path = model_path(m, kind);
    create_dir(path.parent().expect("model path has a parent"))?;
    save_model(&model, &path)?;
    write_training_log(&path.with_file_name(format!("{kind}_log.csv")), &log)?;
    log::info!("saved {}", path.display());
    Ok(())
}

enum Tracker {
    Model(Box<TrackerModel>),
    Yin(YinConfig),
}

impl Tracker {
    fn run(&self, w: &crate::Waveform) -> Result<F0Contour> {
        match self {
            Tracker::Model(model) => track(model, w),
            Tracker::Yin(cfg) => yin_track(w, cfg),
        }
    }
}

fn track_files(cli: &Cli, model: &str, inputs: &[PathBuf]) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::Config(
            "track --model needs at least one WAV file".into(),
        ));
    }
    let tracker = if model == "yin" {
        let cfg = match &cli.manifest {
            Some(_) => manifest(cli)?.yin_config(),
            None => YinConfig::default(),
        };
        Tracker::Yin(cfg)
    } else {
        Tracker::Model(Box::new(load_model(Path::new(model))?))
    };
    if let Some(out) = &cli.out {
        create_dir(out)?;
    }
    for input in inputs {
        let contour = tracker.run(&read_wav(input)?)?;
        match &cli.out {
            Some(out) => {
                let stem = input.file_stem().unwrap_or(input.as_os_str());
                contour.write_csv(&out.join(stem).with_extension("csv"))?;
            }
            None => print!("{}", contour.to_csv()),
        }
    }
    Ok(())
}

fn contour_dir(m: &ExperimentManifest) -> PathBuf {
    m.out_dir().join("contours")
}

fn track_manifest(m: &ExperimentManifest) -> Result<()> {
    if m.trackers.is_empty() {
        return Err(Error::Config("manifest lists no trackers".into()));
    }
    let conds = test_conditions(m);
    for name in &m.trackers {
        let tracker = match name {
            TrackerName::Yin => Tracker::Yin(m.yin_config()),
            TrackerName::Model(kind) => Tracker::Model(Box::new(load_model_expecting(
                &model_path(m, *kind),
                *kind,
            )?)),
        };
        let mut jobs = Vec::new();
        for cond in &conds {
            let dir = contour_dir(m).join(name.to_string()).join(cond.label());
            create_dir(&dir)?;
            for id in &m.splits.test {
                jobs.push((cond, id, dir.join(format!("{id}.csv"))));
            }
        }
        jobs.par_iter()
            .try_for_each(|(cond, id, out)| -> Result<()> {
                let w = read_wav(&audio_path(m, Split::Test, cond, id))?;
                tracker.run(&w)?.write_csv(out)
            })?;
        log::info!("{name}: tracked {} files", jobs.len());
    }
    Ok(())
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    out.sort();
    Ok(out)
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn evaluate(m: &ExperimentManifest) -> Result<()> {
    let root = contour_dir(m);
    let mut jobs = Vec::new();
    for tracker_dir in sorted_entries(&root)?.into_iter().filter(|p| p.is_dir()) {
        let tracker = file_name(&tracker_dir);
        for cond_dir in sorted_entries(&tracker_dir)?
            .into_iter()
            .filter(|p| p.is_dir())
        {
            let cond = Condition::parse_label(&file_name(&cond_dir))?;
            for file in sorted_entries(&cond_dir)? {
                if file.extension().is_some_and(|e| e == "csv") {
                    let key = GroupKey {
                        tracker: tracker.clone(),
                        noise: cond.noise_name().to_string(),
                        snr_db: cond.snr_db(),
                    };
                    jobs.push((key, file));
                }
            }
        }
    }
    if jobs.is_empty() {
        return Err(Error::DegenerateInput(format!(
            "no contours under {}",
            root.display()
        )));
    }
    let hop_s = m.framing.hop_s;
    let rows: Vec<ScoreRow> = jobs
        .par_iter()
        .map(|(key, file)| {
            let id = file
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let est = F0Contour::read_csv(file, hop_s)?;
            let truth = load_f0_ground_truth(&m.ground_truth_path(&id), &m.dataset.ground_truth)?;
            let reference = align_ground_truth(&truth, est.hop_s, est.offset_s, est.len())?;
            Ok(ScoreRow {
                utterance: id,
                key: key.clone(),
                score: score_utterance(&est, &reference, &m.eval)?,
            })
        })
        .collect::<Result<_>>()?;
    let report = aggregate(&rows);
    let out = m.out_dir();
    let pooled = report_csv(&report);
    for (name, text) in [
        ("report.csv", &pooled),
        ("report_by_utterance.csv", &utterance_csv(&rows)),
    ] {
        let p = out.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    }
    print!("{pooled}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_global_flags_after_subcommand() {
        let cli = Cli::try_parse_from([
            "f0track",
            "train",
            "--kind",
            "rnn_reg",
            "--manifest",
            "m.toml",
            "--seed",
            "3",
        ])
        .unwrap();
        assert_eq!(cli.seed, Some(3));
        assert!(matches!(
            cli.command,
            Command::Train(TrainArgs {
                kind: TrackerKind::RnnReg
            })
        ));
    }

    #[test]
    fn unknown_kind_is_rejected() {
        assert!(Cli::try_parse_from(["f0track", "train", "--kind", "crepe"]).is_err());
    }

    #[test]
    fn missing_manifest_is_a_config_error() {
        assert_eq!(main_with_args(["f0track", "mix"]), 2);
    }

    #[test]
    fn bad_shape_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        assert_eq!(
            main_with_args(["f0track", "synth", "--out", out, "--shape", "zigzag"]),
            2
        );
    }
}
