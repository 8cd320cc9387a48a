//! Framing, windowing and STFT spectrograms.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal_io::Waveform;

/// Floor added before taking the log of a PSD bin.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Hann,
    Hamming,
    Rect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Magnitude,
    Psd,
    LogPsd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FramingConfig {
    pub frame_len_s: f64,
    pub hop_s: f64,
    pub window: WindowKind,
    pub fft_size: usize,
    pub head_trim_frames: usize,
    pub tail_trim_frames: usize,
}

impl Default for FramingConfig {
    fn default() -> Self {
        FramingConfig {
            frame_len_s: 0.025,
            hop_s: 0.005,
            window: WindowKind::Hann,
            fft_size: 1024,
            head_trim_frames: 400,
            tail_trim_frames: 200,
        }
    }
}

impl FramingConfig {
    /// Default framing without utterance trimming.
    pub fn untrimmed() -> Self {
        FramingConfig {
            head_trim_frames: 0,
            tail_trim_frames: 0,
            ..Default::default()
        }
    }

    pub fn frame_len_samples(&self, sample_rate_hz: u32) -> usize {
        (self.frame_len_s * f64::from(sample_rate_hz)).round() as usize
    }

    pub fn hop_samples(&self, sample_rate_hz: u32) -> usize {
        (self.hop_s * f64::from(sample_rate_hz)).round() as usize
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Time of the centre of the first frame kept after trimming.
    pub fn offset_s(&self, sample_rate_hz: u32) -> f64 {
        let fs = f64::from(sample_rate_hz);
        (self.head_trim_frames * self.hop_samples(sample_rate_hz)) as f64 / fs
            + self.frame_len_samples(sample_rate_hz) as f64 / (2.0 * fs)
    }

    /// Hop in seconds as realised on the sample grid.
    pub fn hop_s_at(&self, sample_rate_hz: u32) -> f64 {
        self.hop_samples(sample_rate_hz) as f64 / f64::from(sample_rate_hz)
    }

    pub fn validate(&self, sample_rate_hz: u32) -> Result<()> {
        let n = self.frame_len_samples(sample_rate_hz);
        if n == 0 {
            return Err(Error::Parameter(
                "frame length rounds to zero samples".into(),
            ));
        }
        if self.hop_samples(sample_rate_hz) == 0 {
            return Err(Error::Parameter("hop must be positive".into()));
        }
        if !self.fft_size.is_power_of_two() {
            return Err(Error::Parameter(format!(
                "fft size {} is not a power of two",
                self.fft_size
            )));
        }
        if self.fft_size < n {
            return Err(Error::Parameter(format!(
                "fft size {} shorter than frame of {n} samples",
                self.fft_size
            )));
        }
        Ok(())
    }

    /// Frames fully inside a signal of `n_samples`, before trimming.
    pub fn total_frames(&self, n_samples: usize, sample_rate_hz: u32) -> usize {
        let n = self.frame_len_samples(sample_rate_hz);
        if n_samples < n {
            return 0;
        }
        (n_samples - n) / self.hop_samples(sample_rate_hz) + 1
    }
}

pub fn window(kind: WindowKind, len: usize) -> Vec<f64> {
    if len <= 1 {
        return vec![1.0; len];
    }
    let denom = (len - 1) as f64;
    (0..len)
        .map(|n| {
            let c = (2.0 * PI * n as f64 / denom).cos();
            match kind {
                WindowKind::Hann => 0.5 - 0.5 * c,
                WindowKind::Hamming => 0.54 - 0.46 * c,
                WindowKind::Rect => 1.0,
            }
        })
        .collect()
}

/// Framed signal: one row per kept frame.
#[derive(Debug, Clone)]
pub struct Framed {
    pub frames: Array2<f64>,
    /// Index of the first kept frame in the untrimmed frame sequence.
    pub first_frame: usize,
    /// Set when the trims consumed every frame.
    pub trimmed_empty: bool,
}

/// Splits `w` into frames starting every hop (no tail padding), then applies
/// the head/tail trims.
pub fn frame_signal(w: &Waveform, cfg: &FramingConfig) -> Result<Framed> {
    cfg.validate(w.sample_rate_hz)?;
    let n = cfg.frame_len_samples(w.sample_rate_hz);
    let hop = cfg.hop_samples(w.sample_rate_hz);
    if w.len() < n {
        return Err(Error::DegenerateInput(format!(
            "waveform of {} samples is shorter than one {n}-sample frame",
            w.len()
        )));
    }
    let total = cfg.total_frames(w.len(), w.sample_rate_hz);
    let trims = cfg.head_trim_frames + cfg.tail_trim_frames;
    if trims >= total {
        log::warn!("trims of {trims} frames consume all {total} frames");
        return Ok(Framed {
            frames: Array2::zeros((0, n)),
            first_frame: cfg.head_trim_frames,
            trimmed_empty: true,
        });
    }
    let kept = total - trims;
    let first = cfg.head_trim_frames;
    let frames = Array2::from_shape_fn((kept, n), |(i, m)| w.samples[(first + i) * hop + m]);
    Ok(Framed {
        frames,
        first_frame: first,
        trimmed_empty: false,
    })
}

/// In-place iterative radix-2 FFT with precomputed twiddles.
#[derive(Debug, Clone)]
pub struct Radix2Fft {
    size: usize,
    twiddles: Vec<Complex64>,
    bit_reverse: Vec<usize>,
}

impl Radix2Fft {
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 || !size.is_power_of_two() {
            return Err(Error::Parameter(format!(
                "fft size {size} is not a power of two"
            )));
        }
        let bits = size.trailing_zeros();
        let bit_reverse = (0..size)
            .map(|i| {
                if bits == 0 {
                    0
                } else {
                    i.reverse_bits() >> (usize::BITS - bits)
                }
            })
            .collect();
        let twiddles = (0..size / 2)
            .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / size as f64))
            .collect();
        Ok(Radix2Fft {
            size,
            twiddles,
            bit_reverse,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn process(&self, buf: &mut [Complex64]) {
        assert_eq!(
            buf.len(),
            self.size,
            "buffer length must equal the fft size"
        );
        for i in 0..self.size {
            let j = self.bit_reverse[i];
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= self.size {
            let half = len / 2;
            let stride = self.size / len;
            for start in (0..self.size).step_by(len) {
                for k in 0..half {
                    let t = self.twiddles[k * stride] * buf[start + k + half];
                    let u = buf[start + k];
                    buf[start + k] = u + t;
                    buf[start + k + half] = u - t;
                }
            }
            len <<= 1;
        }
    }

    /// `|X(k)|` for `k = 0..=size/2` of a zero-padded real frame.
    pub fn magnitude(&self, frame: &[f64], out: &mut [f64], scratch: &mut Vec<Complex64>) {
        scratch.clear();
        scratch.extend(frame.iter().map(|&x| Complex64::new(x, 0.0)));
        scratch.resize(self.size, Complex64::new(0.0, 0.0));
        self.process(scratch);
        for (o, c) in out.iter_mut().zip(scratch.iter()) {
            *o = c.norm();
        }
    }
}

pub fn fft_magnitude(frame: &[f64], fft_size: usize) -> Result<Vec<f64>> {
    let fft = Radix2Fft::new(fft_size)?;
    if frame.len() > fft_size {
        return Err(Error::Parameter(format!(
            "frame of {} samples exceeds fft size {fft_size}",
            frame.len()
        )));
    }
    let mut out = vec![0.0; fft_size / 2 + 1];
    fft.magnitude(frame, &mut out, &mut Vec::with_capacity(fft_size));
    Ok(out)
}

/// Time-major spectral frames (`I x K`).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub frames: Array2<f64>,
    pub kind: FeatureKind,
    pub bin_hz: f64,
    pub hop_s: f64,
    pub offset_s: f64,
}

impl Spectrogram {
    pub fn n_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn n_bins(&self) -> usize {
        self.frames.ncols()
    }
}

pub fn spectrogram(w: &Waveform, cfg: &FramingConfig, kind: FeatureKind) -> Result<Spectrogram> {
    let framed = frame_signal(w, cfg)?;
    let n = framed.frames.ncols();
    let win = window(cfg.window, n);
    let win_energy: f64 = win.iter().map(|x| x * x).sum();
    let fs = f64::from(w.sample_rate_hz);
    let fft = Radix2Fft::new(cfg.fft_size)?;
    let k = cfg.n_bins();
    let mut frames = Array2::zeros((framed.frames.nrows(), k));
    let mut windowed = vec![0.0; n];
    let mut scratch = Vec::with_capacity(cfg.fft_size);
    for (row, mut out) in framed.frames.rows().into_iter().zip(frames.rows_mut()) {
        for ((dst, &x), &g) in windowed.iter_mut().zip(row.iter()).zip(&win) {
            *dst = x * g;
        }
        let out = out.as_slice_mut().expect("standard layout");
        fft.magnitude(&windowed, out, &mut scratch);
        match kind {
            FeatureKind::Magnitude => {}
            FeatureKind::Psd => out
                .iter_mut()
                .for_each(|v| *v = *v * *v / (fs * win_energy)),
            FeatureKind::LogPsd => out
                .iter_mut()
                .for_each(|v| *v = 10.0 * (*v * *v / (fs * win_energy) + LOG_FLOOR).log10()),
        }
    }
    Ok(Spectrogram {
        frames,
        kind,
        bin_hz: fs / cfg.fft_size as f64,
        hop_s: cfg.hop_s_at(w.sample_rate_hz),
        offset_s: cfg.offset_s(w.sample_rate_hz),
    })
}

const DUMP_MAGIC: &[u8; 4] = b"F0SG";

fn kind_code(kind: FeatureKind) -> u32 {
    match kind {
        FeatureKind::Magnitude => 0,
        FeatureKind::Psd => 1,
        FeatureKind::LogPsd => 2,
    }
}

/// Flat dump: 16-byte header (magic, I, K, kind as LE u32) followed by
/// frame-major LE f32 values.
pub fn encode_spectrogram(spec: &Spectrogram) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * spec.frames.len());
    out.extend_from_slice(DUMP_MAGIC);
    out.extend_from_slice(&(spec.n_frames() as u32).to_le_bytes());
    out.extend_from_slice(&(spec.n_bins() as u32).to_le_bytes());
    out.extend_from_slice(&kind_code(spec.kind).to_le_bytes());
    for &v in spec.frames.iter() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

/// Inverse of [`encode_spectrogram`]. Timing metadata is not stored in the
/// dump and comes back as zeros.
pub fn decode_spectrogram(bytes: &[u8]) -> Result<Spectrogram> {
    if bytes.len() < 16 || &bytes[..4] != DUMP_MAGIC {
        return Err(Error::Format("not a spectrogram dump".into()));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let (i, k, code) = (word(4), word(8), word(12));
    let kind = match code {
        0 => FeatureKind::Magnitude,
        1 => FeatureKind::Psd,
        2 => FeatureKind::LogPsd,
        c => return Err(Error::Format(format!("unknown feature kind {c}"))),
    };
    if bytes.len() != 16 + 4 * i * k {
        return Err(Error::Format(format!(
            "dump holds {} bytes, header implies {}",
            bytes.len(),
            16 + 4 * i * k
        )));
    }
    let values = bytes[16..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    let frames = Array2::from_shape_vec((i, k), values).expect("length checked");
    Ok(Spectrogram {
        frames,
        kind,
        bin_hz: 0.0,
        hop_s: 0.0,
        offset_s: 0.0,
    })
}

pub fn write_spectrogram(path: &Path, spec: &Spectrogram) -> Result<()> {
    fs::write(path, encode_spectrogram(spec)).map_err(|e| Error::io(path, e))
}

pub fn read_spectrogram(path: &Path) -> Result<Spectrogram> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_spectrogram(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, n: usize, fs: u32) -> Waveform {
        let samples = (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / f64::from(fs)).cos())
            .collect();
        Waveform::new(samples, fs).unwrap()
    }

    #[test]
    fn default_framing_at_16k() {
        let cfg = FramingConfig::default();
        assert_eq!(cfg.frame_len_samples(16000), 400);
        assert_eq!(cfg.hop_samples(16000), 80);
        assert_eq!(cfg.n_bins(), 513);
    }

    #[test]
    fn one_second_yields_196_frames() {
        let w = Waveform::new(vec![0.1; 16000], 16000).unwrap();
        let f = frame_signal(&w, &FramingConfig::untrimmed()).unwrap();
        // floor((16000 - 400) / 80) + 1
        assert_eq!(f.frames.nrows(), 196);
        assert!(!f.trimmed_empty);
    }

    #[test]
    fn oversized_trims_give_empty_output() {
        let w = Waveform::new(vec![0.1; 16000], 16000).unwrap();
        let f = frame_signal(&w, &FramingConfig::default()).unwrap();
        assert_eq!(f.frames.nrows(), 0);
        assert!(f.trimmed_empty);
        let s = spectrogram(&w, &FramingConfig::default(), FeatureKind::LogPsd).unwrap();
        assert_eq!(s.n_frames(), 0);
    }

    #[test]
    fn frame_starts_at_hop_multiples() {
        let w = Waveform::new((0..2000).map(f64::from).collect(), 16000).unwrap();
        let cfg = FramingConfig {
            head_trim_frames: 2,
            tail_trim_frames: 1,
            ..FramingConfig::untrimmed()
        };
        let f = frame_signal(&w, &cfg).unwrap();
        assert_eq!(f.frames[[0, 0]], 160.0);
        assert_eq!(f.frames[[1, 3]], 243.0);
        assert_eq!(f.frames.nrows(), (2000 - 400) / 80 + 1 - 3);
    }

    #[test]
    fn non_power_of_two_is_rejected() {
        assert!(matches!(
            fft_magnitude(&[0.0; 8], 1000),
            Err(Error::Parameter(_))
        ));
        let cfg = FramingConfig {
            fft_size: 300,
            ..FramingConfig::untrimmed()
        };
        assert!(cfg.validate(16000).is_err());
    }

    #[test]
    fn zero_frame_has_zero_spectrum() {
        assert!(fft_magnitude(&[0.0; 400], 1024)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn bin_centred_cosine_peaks_at_its_bin() {
        let n = 1024;
        let k0 = 37;
        let x: Vec<f64> = (0..n)
            .map(|i| (2.0 * PI * k0 as f64 * i as f64 / n as f64).cos())
            .collect();
        let mag = fft_magnitude(&x, n).unwrap();
        let peak = argmax(&mag);
        assert_eq!(peak, k0);
        assert!((mag[k0] - n as f64 / 2.0).abs() < 1e-8);
    }

    #[test]
    fn tone_spectrogram_peaks_at_bin_14() {
        let w = tone(220.0, 16000, 16000);
        for kind in [
            FeatureKind::Magnitude,
            FeatureKind::Psd,
            FeatureKind::LogPsd,
        ] {
            let s = spectrogram(&w, &FramingConfig::untrimmed(), kind).unwrap();
            assert_eq!(s.frames.dim(), (196, 513));
            for row in s.frames.rows() {
                assert_eq!(argmax(row.as_slice().unwrap()), 14);
            }
        }
    }

    #[test]
    fn silence_log_psd_is_floor() {
        let w = Waveform::new(vec![0.0; 4000], 16000).unwrap();
        let s = spectrogram(&w, &FramingConfig::untrimmed(), FeatureKind::LogPsd).unwrap();
        let floor = 10.0 * LOG_FLOOR.log10();
        assert!(s.frames.iter().all(|&v| (v - floor).abs() < 1e-9));
    }

    #[test]
    fn dump_round_trip() {
        let w = tone(300.0, 4000, 16000);
        let s = spectrogram(&w, &FramingConfig::untrimmed(), FeatureKind::LogPsd).unwrap();
        let back = decode_spectrogram(&encode_spectrogram(&s)).unwrap();
        assert_eq!(back.frames.dim(), s.frames.dim());
        assert_eq!(back.kind, FeatureKind::LogPsd);
        for (a, b) in back.frames.iter().zip(s.frames.iter()) {
            assert_eq!(*a, f64::from(*b as f32));
        }
        assert!(decode_spectrogram(&encode_spectrogram(&s)[..20]).is_err());
    }

    fn argmax(v: &[f64]) -> usize {
        v.iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &x)| {
                if x > best.1 {
                    (i, x)
                } else {
                    best
                }
            })
            .0
    }
}
