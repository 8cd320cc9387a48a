//! Waveform and contour I/O, harmonic test-signal synthesis and additive
//! noise mixing at a target SNR.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_for;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::Parameter("sample rate must be positive".into()));
        }
        Ok(Waveform {
            samples,
            sample_rate_hz,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate_hz)
    }

    pub fn mean_power(&self) -> f64 {
        mean_power(&self.samples)
    }
}

pub fn mean_power(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|x| x * x).sum::<f64>() / samples.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F0Frame {
    pub frame_index: usize,
    pub f0_hz: f64,
    pub voiced: bool,
}

/// Per-frame F0 sequence. Frame `i` sits at `offset_s + frame_index * hop_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct F0Contour {
    pub frames: Vec<F0Frame>,
    pub hop_s: f64,
    pub offset_s: f64,
}

impl F0Contour {
    /// Validating constructor: `voiced <=> f0 > 0`, strictly increasing indices.
    pub fn new(frames: Vec<F0Frame>, hop_s: f64, offset_s: f64) -> Result<Self> {
        if !(hop_s > 0.0) || !hop_s.is_finite() {
            return Err(Error::Parameter(format!(
                "contour hop must be positive, got {hop_s}"
            )));
        }
        for (n, f) in frames.iter().enumerate() {
            if !f.f0_hz.is_finite() || f.f0_hz < 0.0 {
                return Err(Error::Parameter(format!(
                    "frame {n}: invalid f0 {}",
                    f.f0_hz
                )));
            }
            if f.voiced != (f.f0_hz > 0.0) {
                return Err(Error::Parameter(format!(
                    "frame {n}: voicing flag disagrees with f0 {}",
                    f.f0_hz
                )));
            }
            if n > 0 && f.frame_index <= frames[n - 1].frame_index {
                return Err(Error::Parameter(format!(
                    "frame indices must be strictly increasing (row {n})"
                )));
            }
        }
        Ok(F0Contour {
            frames,
            hop_s,
            offset_s,
        })
    }

    /// Dense contour from per-frame values; `f <= 0` (or NaN) is unvoiced.
    pub fn from_values(f0_hz: &[f64], hop_s: f64, offset_s: f64) -> Result<Self> {
        let frames = f0_hz
            .iter()
            .enumerate()
            .map(|(i, &f)| {
                let voiced = f > 0.0 && f.is_finite();
                F0Frame {
                    frame_index: i,
                    f0_hz: if voiced { f } else { 0.0 },
                    voiced,
                }
            })
            .collect();
        F0Contour::new(frames, hop_s, offset_s)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn time_s(&self, frame_index: usize) -> f64 {
        self.offset_s + frame_index as f64 * self.hop_s
    }

    pub fn values(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.f0_hz).collect()
    }

    pub fn n_voiced(&self) -> usize {
        self.frames.iter().filter(|f| f.voiced).count()
    }

    /// f0 at `frame_index`, or `None` when the contour has no such frame.
    pub fn f0_at(&self, frame_index: usize) -> Option<f64> {
        self.frames
            .binary_search_by_key(&frame_index, |f| f.frame_index)
            .ok()
            .map(|n| self.frames[n].f0_hz)
    }

    /// Drops `head` leading and `tail` trailing frames and re-bases indices
    /// at zero, moving the offset so times are preserved.
    pub fn trimmed(&self, head: usize, tail: usize) -> F0Contour {
        let n = self.frames.len();
        if head + tail >= n {
            return F0Contour {
                frames: Vec::new(),
                hop_s: self.hop_s,
                offset_s: self.offset_s + head as f64 * self.hop_s,
            };
        }
        let base = self.frames[head].frame_index;
        let frames = self.frames[head..n - tail]
            .iter()
            .map(|f| F0Frame {
                frame_index: f.frame_index - base,
                ..*f
            })
            .collect();
        F0Contour {
            frames,
            hop_s: self.hop_s,
            offset_s: self.offset_s + base as f64 * self.hop_s,
        }
    }

    /// First `n` frames (by position).
    pub fn truncated(&self, n: usize) -> F0Contour {
        F0Contour {
            frames: self.frames.iter().take(n).copied().collect(),
            hop_s: self.hop_s,
            offset_s: self.offset_s,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_s,f0_hz,voiced\n");
        for f in &self.frames {
            let _ = writeln!(
                out,
                "{:.6},{},{}",
                self.time_s(f.frame_index),
                f.f0_hz,
                u8::from(f.voiced)
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Parses `time_s,f0_hz,voiced`. Frame indices are recovered from the
    /// times on the `hop_s` grid anchored at the first row.
    pub fn parse_csv(text: &str, hop_s: f64) -> Result<F0Contour> {
        let mut rows = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (n == 0 && line.starts_with("time_s")) {
                continue;
            }
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            if cells.len() != 3 {
                return Err(Error::Parse {
                    line: n + 1,
                    message: format!("expected 3 columns, found {}", cells.len()),
                });
            }
            let num = |s: &str| -> Result<f64> {
                s.parse::<f64>().map_err(|_| Error::Parse {
                    line: n + 1,
                    message: format!("non-numeric cell {s:?}"),
                })
            };
            let t = num(cells[0])?;
            let f0 = num(cells[1])?;
            let voiced = num(cells[2])? != 0.0 && f0 > 0.0;
            rows.push((t, if voiced { f0 } else { 0.0 }, voiced));
        }
        let offset_s = rows.first().map_or(0.0, |r| r.0);
        let frames = rows
            .iter()
            .map(|&(t, f0_hz, voiced)| F0Frame {
                frame_index: ((t - offset_s) / hop_s).round().max(0.0) as usize,
                f0_hz,
                voiced,
            })
            .collect();
        F0Contour::new(frames, hop_s, offset_s)
    }

    pub fn read_csv(path: &Path, hop_s: f64) -> Result<F0Contour> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        F0Contour::parse_csv(&text, hop_s)
    }
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let reader = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Format(format!(
            "{}: expected mono, found {} channels",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Format(format!(
            "{}: expected 16-bit PCM, found {:?} {}-bit",
            path.display(),
            spec.sample_format,
            spec.bits_per_sample
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| f64::from(v) / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| wav_error(path, e))?;
    Waveform::new(samples, spec.sample_rate)
}

/// Writes 16-bit PCM mono. Samples are scaled by 32768, rounded and clipped.
pub fn write_wav(path: &Path, wave: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
    for &x in &wave.samples {
        writer
            .write_sample(to_pcm16(x))
            .map_err(|e| wav_error(path, e))?;
    }
    writer.finalize().map_err(|e| wav_error(path, e))
}

pub fn to_pcm16(x: f64) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

fn wav_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

/// Sum of `n_harmonics` equal-amplitude cosines at `k * f0` following the
/// contour, with phase carried continuously from frame to frame.
///
/// Contour frames are treated as analysis-window centres: sample `n` takes
/// the f0 of the nearest frame time. The waveform spans
/// `[0, t_last + max(offset_s, hop_s / 2)]`, so a contour with
/// `offset_s = frame_len / 2` yields exactly one analysis frame per contour
/// frame. Unvoiced frames are silent.
pub fn synth_harmonic(
    f0_track: &F0Contour,
    n_harmonics: usize,
    sample_rate_hz: u32,
    amp: f64,
) -> Result<Waveform> {
    if n_harmonics == 0 {
        return Err(Error::Parameter("n_harmonics must be at least 1".into()));
    }
    if sample_rate_hz == 0 {
        return Err(Error::Parameter("sample rate must be positive".into()));
    }
    let fs = f64::from(sample_rate_hz);
    let nyquist = fs / 2.0;
    for f in f0_track.frames.iter().filter(|f| f.voiced) {
        if f.f0_hz * n_harmonics as f64 >= nyquist {
            return Err(Error::Parameter(format!(
                "harmonic {n_harmonics} of {} Hz aliases at {sample_rate_hz} Hz",
                f.f0_hz
            )));
        }
    }
    let Some(last) = f0_track.frames.last() else {
        return Waveform::new(Vec::new(), sample_rate_hz);
    };
    let hop = f0_track.hop_s;
    let end_s = f0_track.time_s(last.frame_index) + f0_track.offset_s.max(hop / 2.0);
    let n_samples = (end_s * fs).round().max(0.0) as usize;

    // Dense per-index lookup; gaps in a sparse contour are silent.
    let n_slots = last.frame_index + 1;
    let mut f0_by_index = vec![0.0; n_slots];
    for f in &f0_track.frames {
        f0_by_index[f.frame_index] = f.f0_hz;
    }

    let mut samples = Vec::with_capacity(n_samples);
    let mut phase = 0.0f64;
    for n in 0..n_samples {
        let t = n as f64 / fs;
        let slot = ((t - f0_track.offset_s) / hop)
            .round()
            .clamp(0.0, (n_slots - 1) as f64) as usize;
        let f0 = f0_by_index[slot];
        if f0 > 0.0 {
            let s: f64 = (1..=n_harmonics).map(|k| (k as f64 * phase).cos()).sum();
            samples.push(amp * s);
            phase = (phase + TAU * f0 / fs) % TAU;
        } else {
            samples.push(0.0);
        }
    }
    Waveform::new(samples, sample_rate_hz)
}

#[derive(Debug, Clone)]
pub struct NoiseSpec {
    pub noise: Waveform,
    pub snr_db: f64,
}

/// Result of mixing, keeping the scaled noise so the SNR can be measured.
#[derive(Debug, Clone)]
pub struct Mixture {
    pub mixed: Waveform,
    pub noise_component: Waveform,
    pub gain: f64,
    pub noise_offset: usize,
}

/// Gain applied to noise of power `noise_power` so that the mixture has the
/// requested SNR against speech of power `speech_power`.
pub fn noise_gain(speech_power: f64, noise_power: f64, snr_db: f64) -> f64 {
    (speech_power / (noise_power * 10f64.powf(snr_db / 10.0))).sqrt()
}

/// Adds noise at `spec.snr_db`, measured over the whole utterance.
///
/// The noise segment starts at a seeded uniform offset; noise shorter than
/// the speech is tiled cyclically.
pub fn mix_noise_components(speech: &Waveform, spec: &NoiseSpec, seed: u64) -> Result<Mixture> {
    if spec.noise.sample_rate_hz != speech.sample_rate_hz {
        return Err(Error::Parameter(format!(
            "noise rate {} Hz differs from speech rate {} Hz",
            spec.noise.sample_rate_hz, speech.sample_rate_hz
        )));
    }
    if !spec.snr_db.is_finite() {
        return Err(Error::Parameter(format!(
            "SNR must be finite, got {}",
            spec.snr_db
        )));
    }
    if speech.is_empty() || spec.noise.is_empty() {
        return Err(Error::DegenerateInput("empty speech or noise".into()));
    }
    let n = speech.len();
    let noise = &spec.noise.samples;
    let mut rng = rng_for(seed, "noise-offset");
    let noise_offset = if noise.len() >= n {
        rng.random_range(0..=noise.len() - n)
    } else {
        rng.random_range(0..noise.len())
    };
    let segment: Vec<f64> = (0..n)
        .map(|i| noise[(noise_offset + i) % noise.len()])
        .collect();

    let p_s = speech.mean_power();
    let p_n = mean_power(&segment);
    if p_s == 0.0 {
        return Err(Error::DegenerateInput("speech is silent".into()));
    }
    if p_n == 0.0 {
        return Err(Error::DegenerateInput("noise segment is silent".into()));
    }
    let gain = noise_gain(p_s, p_n, spec.snr_db);
    let component: Vec<f64> = segment.iter().map(|x| gain * x).collect();
    let mixed = speech
        .samples
        .iter()
        .zip(&component)
        .map(|(s, v)| s + v)
        .collect();
    Ok(Mixture {
        mixed: Waveform::new(mixed, speech.sample_rate_hz)?,
        noise_component: Waveform::new(component, speech.sample_rate_hz)?,
        gain,
        noise_offset,
    })
}

pub fn mix_noise_at_snr(speech: &Waveform, spec: &NoiseSpec, seed: u64) -> Result<Waveform> {
    mix_noise_components(speech, spec, seed).map(|m| m.mixed)
}

/// `10 log10(P_s / P_n)`. A silent noise component yields `+inf`.
pub fn measure_snr(speech: &Waveform, noise_component: &Waveform) -> Result<f64> {
    if speech.len() != noise_component.len() {
        return Err(Error::Dimension(format!(
            "speech has {} samples, noise {}",
            speech.len(),
            noise_component.len()
        )));
    }
    let p_n = noise_component.mean_power();
    if p_n == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (speech.mean_power() / p_n).log10())
}

/// Column layout of a delimited ground-truth file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFormat {
    pub f0_column: usize,
    #[serde(default)]
    pub voicing_column: Option<usize>,
    pub hop_s: f64,
    #[serde(default)]
    pub offset_s: f64,
    #[serde(default)]
    pub skip_rows: usize,
}

impl Default for GroundTruthFormat {
    fn default() -> Self {
        GroundTruthFormat {
            f0_column: 0,
            voicing_column: Some(1),
            hop_s: 0.005,
            offset_s: 0.0125,
            skip_rows: 0,
        }
    }
}

/// Parses whitespace- or comma-delimited rows; blank lines and `#` comments
/// are skipped. Row `n` becomes frame `n`.
pub fn parse_f0_ground_truth(text: &str, format: &GroundTruthFormat) -> Result<F0Contour> {
    let mut values = Vec::new();
    for (n, line) in text.lines().enumerate().skip(format.skip_rows) {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cells: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|c| !c.is_empty())
            .collect();
        let cell = |col: usize| -> Result<f64> {
            let raw = cells.get(col).ok_or_else(|| Error::Parse {
                line: n + 1,
                message: format!("missing column {col}"),
            })?;
            raw.parse::<f64>().map_err(|_| Error::Parse {
                line: n + 1,
                message: format!("non-numeric cell {raw:?} in column {col}"),
            })
        };
        let f0 = cell(format.f0_column)?;
        let voiced_flag = match format.voicing_column {
            Some(col) => cell(col)? != 0.0,
            None => true,
        };
        values.push(if voiced_flag && f0 > 0.0 { f0 } else { 0.0 });
    }
    F0Contour::from_values(&values, format.hop_s, format.offset_s)
}

pub fn load_f0_ground_truth(path: &Path, format: &GroundTruthFormat) -> Result<F0Contour> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_f0_ground_truth(&text, format)
}

/// Writes a two-column `f0 voicing` file readable with the default format.
pub fn write_f0_ground_truth(path: &Path, contour: &F0Contour) -> Result<()> {
    let mut out = String::new();
    for f in &contour.frames {
        let _ = writeln!(out, "{} {}", f.f0_hz, u8::from(f.voiced));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
