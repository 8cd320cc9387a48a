//! Synthetic harmonic corpus with known F0 contours.
//!
//! Each utterance alternates unvoiced gaps and voiced segments. A voiced
//! segment follows one contour shape; contour frames sit on the analysis
//! grid (`hop_s`, centre of the first frame at `offset_s`), so an untrimmed
//! analysis yields one frame per contour frame.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::signal_io::{synth_harmonic, write_f0_ground_truth, write_wav, F0Contour, Waveform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContourShape {
    Constant,
    Glide,
    Vibrato,
    /// Shape drawn per voiced segment.
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_utts: usize,
    pub duration_s: f64,
    pub f0_min_hz: f64,
    pub f0_max_hz: f64,
    pub shape: ContourShape,
    pub sample_rate_hz: u32,
    pub n_harmonics: usize,
    /// Peak amplitude bound of the harmonic sum.
    pub peak: f64,
    pub hop_s: f64,
    pub offset_s: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_utts: 20,
            duration_s: 2.0,
            f0_min_hz: 80.0,
            f0_max_hz: 300.0,
            shape: ContourShape::Mixed,
            sample_rate_hz: 16_000,
            n_harmonics: 10,
            peak: 0.5,
            hop_s: 0.005,
            offset_s: 0.0125,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.f0_min_hz > 60.0 && self.f0_min_hz <= self.f0_max_hz && self.f0_max_hz < 400.0) {
            return Err(Error::Parameter(format!(
                "F0 range [{}, {}] must lie within (60, 400) Hz",
                self.f0_min_hz, self.f0_max_hz
            )));
        }
        if !(self.duration_s > 0.0 && self.hop_s > 0.0 && self.offset_s >= 0.0 && self.peak > 0.0) {
            return Err(Error::Parameter(
                "duration, hop and peak must be positive".into(),
            ));
        }
        if self.n_harmonics == 0
            || self.f0_max_hz * self.n_harmonics as f64 >= f64::from(self.sample_rate_hz) / 2.0
        {
            return Err(Error::Parameter(format!(
                "{} harmonics of {} Hz alias at {} Hz",
                self.n_harmonics, self.f0_max_hz, self.sample_rate_hz
            )));
        }
        Ok(())
    }

    fn n_frames(&self) -> usize {
        (((self.duration_s - self.offset_s) / self.hop_s).floor() as usize).max(1)
    }
}

pub fn constant_values(f0_hz: f64, n: usize) -> Vec<f64> {
    vec![f0_hz; n]
}

/// Linear glide from `start_hz` at the first frame to `end_hz` at the last.
pub fn glide_values(start_hz: f64, end_hz: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![start_hz];
    }
    (0..n)
        .map(|i| start_hz + (end_hz - start_hz) * i as f64 / (n - 1) as f64)
        .collect()
}

/// `centre * (1 + depth * sin(2 pi rate t))` sampled every `hop_s`.
pub fn vibrato_values(centre_hz: f64, depth: f64, rate_hz: f64, hop_s: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            centre_hz * (1.0 + depth * (std::f64::consts::TAU * rate_hz * i as f64 * hop_s).sin())
        })
        .collect()
}

fn segment(cfg: &SynthConfig, shape: ContourShape, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (lo, hi) = (cfg.f0_min_hz, cfg.f0_max_hz);
    let draw = |rng: &mut ChaCha8Rng| {
        if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            lo
        }
    };
    let shape = match shape {
        ContourShape::Mixed => [
            ContourShape::Constant,
            ContourShape::Glide,
            ContourShape::Vibrato,
        ][rng.random_range(0..3)],
        s => s,
    };
    match shape {
        ContourShape::Constant => constant_values(draw(rng), n),
        ContourShape::Glide => {
            let a = draw(rng);
            let b = draw(rng);
            glide_values(a, b, n)
        }
        _ => {
            let depth = rng.random_range(0.02..0.06);
            let rate = rng.random_range(4.0..7.0);
            // Keep the excursion inside the range.
            let c_lo = (lo / (1.0 - depth)).min(hi);
            let c_hi = (hi / (1.0 + depth)).max(c_lo);
            let centre = if c_hi > c_lo {
                rng.random_range(c_lo..=c_hi)
            } else {
                c_lo
            };
            vibrato_values(centre, depth, rate, cfg.hop_s, n)
                .into_iter()
                .map(|f| f.clamp(lo, hi))
                .collect()
        }
    }
}

/// Random contour of `cfg.duration_s`: unvoiced lead-in, then voiced
/// segments of 0.2-0.6 s separated by 0.05-0.2 s gaps.
pub fn random_contour(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<F0Contour> {
    cfg.validate()?;
    let n = cfg.n_frames();
    let frames_of = |s: f64| ((s / cfg.hop_s).round() as usize).max(1);
    let mut values = Vec::with_capacity(n);
    let lead = frames_of(rng.random_range(0.05..0.15));
    values.resize(lead.min(n), 0.0);
    while values.len() < n {
        let len = frames_of(rng.random_range(0.2..0.6)).min(n - values.len());
        values.extend(segment(cfg, cfg.shape, len, rng));
        let gap = frames_of(rng.random_range(0.05..0.2)).min(n - values.len());
        values.extend(std::iter::repeat_n(0.0, gap));
    }
    F0Contour::from_values(&values, cfg.hop_s, cfg.offset_s)
}

#[derive(Debug, Clone)]
pub struct SynthUtterance {
    pub id: String,
    pub truth: F0Contour,
    pub wave: Waveform,
}

pub fn utterance_id(index: usize) -> String {
    format!("syn{index:04}")
}

/// Renders one contour with `cfg`'s harmonics and peak bound.
pub fn render(cfg: &SynthConfig, truth: &F0Contour) -> Result<Waveform> {
    synth_harmonic(
        truth,
        cfg.n_harmonics,
        cfg.sample_rate_hz,
        cfg.peak / cfg.n_harmonics as f64,
    )
}

/// Utterance `index` of the corpus; depends only on `(cfg, index)`.
pub fn synth_utterance(cfg: &SynthConfig, index: usize) -> Result<SynthUtterance> {
    let mut rng = rng_for(cfg.seed, &format!("synth-{index}"));
    let truth = random_contour(cfg, &mut rng)?;
    let wave = render(cfg, &truth)?;
    Ok(SynthUtterance {
        id: utterance_id(index),
        truth,
        wave,
    })
}

pub fn generate_corpus(cfg: &SynthConfig) -> Result<Vec<SynthUtterance>> {
    cfg.validate()?;
    (0..cfg.n_utts).map(|i| synth_utterance(cfg, i)).collect()
}

/// Uniform white noise in `[-amp, amp)`.
pub fn white_noise(n_samples: usize, sample_rate_hz: u32, amp: f64, seed: u64) -> Result<Waveform> {
    let mut rng = rng_for(seed, "white-noise");
    Waveform::new(
        (0..n_samples)
            .map(|_| rng.random_range(-amp..amp))
            .collect(),
        sample_rate_hz,
    )
}

/// On-disk layout written by [`write_corpus`].
#[derive(Debug, Clone)]
pub struct CorpusPaths {
    pub wav_dir: PathBuf,
    pub f0_dir: PathBuf,
}

pub const F0_EXTENSION: &str = "f0";

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Writes `wav/{id}.wav` and `f0/{id}.f0` under `dir`.
pub fn write_corpus(dir: &Path, utts: &[SynthUtterance]) -> Result<CorpusPaths> {
    let paths = CorpusPaths {
        wav_dir: dir.join("wav"),
        f0_dir: dir.join("f0"),
    };
    create_dir(&paths.wav_dir)?;
    create_dir(&paths.f0_dir)?;
    for u in utts {
        write_wav(&paths.wav_dir.join(format!("{}.wav", u.id)), &u.wave)?;
        write_f0_ground_truth(
            &paths.f0_dir.join(format!("{}.{F0_EXTENSION}", u.id)),
            &u.truth,
        )?;
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal_io::{load_f0_ground_truth, GroundTruthFormat};

    #[test]
    fn glide_endpoints() {
        let v = glide_values(100.0, 200.0, 201);
        assert_eq!((v[0], v[200]), (100.0, 200.0));
        assert!((v[100] - 150.0).abs() < 1e-12);
    }

    #[test]
    fn vibrato_stays_near_centre() {
        let v = vibrato_values(200.0, 0.05, 5.0, 0.005, 400);
        assert!(v.iter().all(|f| (190.0 - 1e-9..=210.0 + 1e-9).contains(f)));
        assert!(v.iter().any(|&f| f > 209.0) && v.iter().any(|&f| f < 191.0));
    }

    #[test]
    fn contours_respect_range_and_have_both_voicings() {
        let cfg = SynthConfig::default();
        for i in 0..10 {
            let u = synth_utterance(&cfg, i).unwrap();
            let voiced = u.truth.n_voiced();
            assert!(voiced > 0 && voiced < u.truth.len());
            assert!(u
                .truth
                .values()
                .iter()
                .all(|&f| f == 0.0 || (cfg.f0_min_hz..=cfg.f0_max_hz).contains(&f)));
            assert!(u.wave.samples.iter().all(|x| x.abs() <= cfg.peak + 1e-12));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynthConfig {
            n_utts: 3,
            ..Default::default()
        };
        let a = generate_corpus(&cfg).unwrap();
        let b = generate_corpus(&cfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.truth, y.truth);
            assert_eq!(x.wave, y.wave);
        }
    }

    #[test]
    fn range_outside_limits_is_rejected() {
        let cfg = SynthConfig {
            f0_min_hz: 50.0,
            ..Default::default()
        };
        assert!(matches!(generate_corpus(&cfg), Err(Error::Parameter(_))));
    }

    #[test]
    fn written_ground_truth_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            n_utts: 2,
            duration_s: 0.5,
            ..Default::default()
        };
        let utts = generate_corpus(&cfg).unwrap();
        let paths = write_corpus(dir.path(), &utts).unwrap();
        let fmt = GroundTruthFormat::default();
        for u in &utts {
            let back =
                load_f0_ground_truth(&paths.f0_dir.join(format!("{}.f0", u.id)), &fmt).unwrap();
            assert_eq!(back.len(), u.truth.len());
            for (a, b) in back.values().iter().zip(u.truth.values()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
