//! TOML experiment manifest: one file describes a whole experiment.
//!
//! Relative paths resolve against the manifest's own directory.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dsp::{FeatureKind, FramingConfig};
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::features::{ContextConfig, Quantizer};
use crate::models::{ArchitectureConfig, TrackerKind, TrackerSetup};
use crate::nn::TrainConfig;
use crate::signal_io::GroundTruthFormat;
use crate::synth::SynthConfig;
use crate::yin::YinConfig;

/// A learned tracker or the YIN baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrackerName {
    Model(TrackerKind),
    Yin,
}

impl fmt::Display for TrackerName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrackerName::Model(k) => k.fmt(f),
            TrackerName::Yin => f.write_str("yin"),
        }
    }
}

impl FromStr for TrackerName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "yin" {
            Ok(TrackerName::Yin)
        } else {
            s.parse().map(TrackerName::Model)
        }
    }
}

impl Serialize for TrackerName {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TrackerName {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub root: PathBuf,
    pub wav_dir: PathBuf,
    pub f0_dir: PathBuf,
    pub f0_extension: String,
    pub ground_truth: GroundTruthFormat,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            root: PathBuf::from("."),
            wav_dir: PathBuf::from("wav"),
            f0_dir: PathBuf::from("f0"),
            f0_extension: crate::synth::F0_EXTENSION.into(),
            ground_truth: GroundTruthFormat::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Splits {
    pub train: Vec<String>,
    pub cv: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Cv,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Cv, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Cv => "cv",
            Split::Test => "test",
        }
    }
}

impl Splits {
    pub fn ids(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Cv => &self.cv,
            Split::Test => &self.test,
        }
    }
}

/// A noise recording and the splits it contaminates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseEntry {
    pub name: String,
    pub path: PathBuf,
    /// Applied to the training and CV splits (known noise).
    #[serde(default = "yes")]
    pub train: bool,
    #[serde(default = "yes")]
    pub test: bool,
}

fn yes() -> bool {
    true
}

impl NoiseEntry {
    pub fn applies_to(&self, split: Split) -> bool {
        match split {
            Split::Train | Split::Cv => self.train,
            Split::Test => self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentManifest {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub feature_kind: FeatureKind,
    pub trackers: Vec<TrackerName>,
    pub snr_db: Vec<f64>,
    pub dataset: DatasetConfig,
    pub splits: Splits,
    pub noises: Vec<NoiseEntry>,
    pub framing: FramingConfig,
    pub context: ContextConfig,
    pub quantizer: Quantizer,
    pub training: TrainConfig,
    pub architecture: ArchitectureConfig,
    pub yin: YinConfig,
    pub eval: EvalConfig,
    pub synth: SynthConfig,
    /// Directory the manifest was read from; relative paths resolve here.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for ExperimentManifest {
    fn default() -> Self {
        ExperimentManifest {
            seed: 0,
            output_dir: PathBuf::from("out"),
            feature_kind: FeatureKind::LogPsd,
            trackers: vec![
                TrackerName::Model(TrackerKind::RnnReg),
                TrackerName::Model(TrackerKind::DnnReg),
                TrackerName::Model(TrackerKind::DnnHmm),
                TrackerName::Yin,
            ],
            snr_db: vec![-10.0, -5.0, 0.0, 5.0, 10.0],
            dataset: DatasetConfig::default(),
            splits: Splits::default(),
            noises: Vec::new(),
            framing: FramingConfig::default(),
            context: ContextConfig::default(),
            quantizer: Quantizer::default(),
            training: TrainConfig::default(),
            architecture: ArchitectureConfig::default(),
            yin: YinConfig::default(),
            eval: EvalConfig::default(),
            synth: SynthConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

impl ExperimentManifest {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut m: ExperimentManifest =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        m.base_dir = base_dir.to_path_buf();
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        ExperimentManifest::parse(&text, base)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen: HashSet<&str> = HashSet::new();
        for split in Split::ALL {
            let mut local = HashSet::new();
            for id in self.splits.ids(split) {
                if !local.insert(id.as_str()) {
                    return Err(Error::Config(format!(
                        "utterance {id} listed twice in {}",
                        split.as_str()
                    )));
                }
                if !seen.insert(id.as_str()) {
                    return Err(Error::Config(format!(
                        "utterance {id} appears in more than one split"
                    )));
                }
            }
        }
        if let Some(s) = self.snr_db.iter().find(|s| !s.is_finite()) {
            return Err(Error::Config(format!("SNR {s} is not finite")));
        }
        let mut names = HashSet::new();
        for n in &self.noises {
            if n.name.is_empty() || n.name == "clean" || n.name.contains(['/', '\\', '_']) {
                return Err(Error::Config(format!(
                    "noise name {:?} must be non-empty, not \"clean\", and free of '/' and '_'",
                    n.name
                )));
            }
            if !names.insert(n.name.as_str()) {
                return Err(Error::Config(format!("noise {} listed twice", n.name)));
            }
        }
        self.training
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.quantizer
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.eval
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    fn dataset_root(&self) -> PathBuf {
        self.resolve(&self.dataset.root)
    }

    pub fn clean_wav_path(&self, id: &str) -> PathBuf {
        self.dataset_root()
            .join(&self.dataset.wav_dir)
            .join(format!("{id}.wav"))
    }

    pub fn ground_truth_path(&self, id: &str) -> PathBuf {
        self.dataset_root()
            .join(&self.dataset.f0_dir)
            .join(format!("{id}.{}", self.dataset.f0_extension))
    }

    pub fn tracker_setup(&self) -> TrackerSetup {
        TrackerSetup {
            framing: self.framing.clone(),
            feature_kind: self.feature_kind,
            context: self.context,
            quantizer: self.quantizer,
            architecture: self.architecture,
            training: TrainConfig {
                seed: self.training.seed ^ self.seed,
                ..self.training.clone()
            },
        }
    }

    /// YIN settings on the trackers' frame grid.
    pub fn yin_config(&self) -> YinConfig {
        YinConfig {
            framing: self.framing.clone(),
            ..self.yin.clone()
        }
    }

    /// Conditions a split is rendered in: clean for train/cv, plus each
    /// applicable noise at each SNR.
    pub fn conditions(&self, split: Split) -> Vec<Condition> {
        let mut out = Vec::new();
        if split != Split::Test {
            out.push(Condition::Clean);
        }
        for n in self.noises.iter().filter(|n| n.applies_to(split)) {
            for &snr in &self.snr_db {
                out.push(Condition::Noisy {
                    noise: n.name.clone(),
                    snr_db: snr,
                });
            }
        }
        out
    }
}

/// Recording condition of a mixed utterance.
#[derive(Debug, Clone, PartialEq)]
pub enum Condition {
    Clean,
    Noisy { noise: String, snr_db: f64 },
}

impl Condition {
    /// Directory label: `clean` or `{noise}_{snr}`.
    pub fn label(&self) -> String {
        match self {
            Condition::Clean => "clean".into(),
            Condition::Noisy { noise, snr_db } => format!("{noise}_{snr_db}"),
        }
    }

    pub fn parse_label(label: &str) -> Result<Condition> {
        if label == "clean" {
            return Ok(Condition::Clean);
        }
        let (noise, snr) = label.rsplit_once('_').ok_or_else(|| {
            Error::Config(format!(
                "condition label {label:?} is not clean or noise_snr"
            ))
        })?;
        let snr_db = snr.parse::<f64>().map_err(|_| {
            Error::Config(format!("condition label {label:?} has a non-numeric SNR"))
        })?;
        Ok(Condition::Noisy {
            noise: noise.into(),
            snr_db,
        })
    }

    pub fn noise_name(&self) -> &str {
        match self {
            Condition::Clean => "clean",
            Condition::Noisy { noise, .. } => noise,
        }
    }

    pub fn snr_db(&self) -> Option<f64> {
        match self {
            Condition::Clean => None,
            Condition::Noisy { snr_db, .. } => Some(*snr_db),
        }
    }
}
