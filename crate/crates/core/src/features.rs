//! Network inputs: context augmentation for the DNNs, per-step sequences for
//! the RNN encoder, per-bin normalisation and F0 quantisation.

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dsp::Spectrogram;
use crate::error::{Error, Result};
use crate::signal_io::F0Contour;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContextConfig {
    /// Frames added on each side of the target frame.
    pub p: usize,
}

impl Default for ContextConfig {
    fn default() -> Self {
        ContextConfig { p: 7 }
    }
}

impl ContextConfig {
    pub fn width(&self) -> usize {
        2 * self.p + 1
    }
}

/// Index of context position `n` (0..2p) around frame `i`, clamped to the
/// utterance.
#[inline]
pub fn context_index(i: usize, n: usize, p: usize, n_frames: usize) -> usize {
    (i + n).saturating_sub(p).min(n_frames - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantScale {
    Log,
    Linear,
}

/// F0 quantiser: state 0 is unvoiced, states `1..n_states` are bin centres
/// spaced on `scale` from `f_min_hz` to `f_max_hz` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Quantizer {
    pub n_states: usize,
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    pub scale: QuantScale,
}

impl Default for Quantizer {
    fn default() -> Self {
        Quantizer {
            n_states: 68,
            f_min_hz: 60.0,
            f_max_hz: 400.0,
            scale: QuantScale::Log,
        }
    }
}

impl Quantizer {
    pub fn validate(&self) -> Result<()> {
        if self.n_states < 3 {
            return Err(Error::Parameter(
                "quantizer needs at least 2 voiced states".into(),
            ));
        }
        if !(self.f_min_hz > 0.0 && self.f_min_hz < self.f_max_hz) {
            return Err(Error::Parameter(format!(
                "quantizer range [{}, {}] is invalid",
                self.f_min_hz, self.f_max_hz
            )));
        }
        Ok(())
    }

    fn n_voiced(&self) -> usize {
        self.n_states - 1
    }

    fn axis(&self, f: f64) -> f64 {
        match self.scale {
            QuantScale::Log => f.ln(),
            QuantScale::Linear => f,
        }
    }

    fn hz(&self, a: f64) -> f64 {
        match self.scale {
            QuantScale::Log => a.exp(),
            QuantScale::Linear => a,
        }
    }

    fn step(&self) -> f64 {
        (self.axis(self.f_max_hz) - self.axis(self.f_min_hz)) / (self.n_voiced() - 1) as f64
    }

    /// Bin centre of voiced state `state` (1-based).
    pub fn center(&self, state: usize) -> f64 {
        debug_assert!(state >= 1 && state < self.n_states);
        if state == self.n_states - 1 {
            return self.f_max_hz;
        }
        self.hz(self.axis(self.f_min_hz) + (state - 1) as f64 * self.step())
    }

    pub fn centers(&self) -> Vec<f64> {
        (1..self.n_states).map(|s| self.center(s)).collect()
    }

    /// Nearest bin centre in Hz; out-of-range voiced values clamp to the end
    /// bins, `f <= 0` maps to state 0.
    pub fn quantize(&self, f_hz: f64) -> usize {
        if !(f_hz > 0.0) {
            return 0;
        }
        let last = self.n_states - 1;
        if f_hz <= self.f_min_hz {
            return 1;
        }
        if f_hz >= self.f_max_hz {
            return last;
        }
        let guess =
            1 + ((self.axis(f_hz) - self.axis(self.f_min_hz)) / self.step()).floor() as usize;
        let lo = guess.clamp(1, last);
        let hi = (lo + 1).min(last);
        // f lies between centre(lo) and centre(hi); pick the closer in Hz.
        if (f_hz - self.center(lo)).abs() <= (self.center(hi) - f_hz).abs() {
            lo
        } else {
            hi
        }
    }

    pub fn dequantize(&self, state: usize) -> f64 {
        if state == 0 || state >= self.n_states {
            0.0
        } else {
            self.center(state)
        }
    }

    /// Half the mean spacing between `state` and its neighbouring centres:
    /// the resolution floor of a tracker that outputs bin centres.
    pub fn half_bin_width_hz(&self, state: usize) -> f64 {
        let last = self.n_states - 1;
        let state = state.clamp(1, last);
        let lo = self.center(state.saturating_sub(1).max(1));
        let hi = self.center((state + 1).min(last));
        let gaps = (state > 1) as usize + (state < last) as usize;
        (hi - lo) / gaps as f64 / 2.0
    }
}

/// Per-bin z-score statistics, frozen from the training set.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-8;

impl NormStats {
    pub fn fit<'a>(spectrograms: impl IntoIterator<Item = &'a Spectrogram>) -> Result<NormStats> {
        let mut count = 0usize;
        let mut mean: Vec<f64> = Vec::new();
        let mut m2: Vec<f64> = Vec::new();
        for spec in spectrograms {
            if mean.is_empty() {
                mean = vec![0.0; spec.n_bins()];
                m2 = vec![0.0; spec.n_bins()];
            } else if spec.n_bins() != mean.len() {
                return Err(Error::Dimension(format!(
                    "spectrogram has {} bins, expected {}",
                    spec.n_bins(),
                    mean.len()
                )));
            }
            // Welford update per frame.
            for row in spec.frames.rows() {
                count += 1;
                let inv = 1.0 / count as f64;
                for ((m, q), &x) in mean.iter_mut().zip(m2.iter_mut()).zip(row.iter()) {
                    let d = x - *m;
                    *m += d * inv;
                    *q += d * (x - *m);
                }
            }
        }
        if count == 0 {
            return Err(Error::DegenerateInput(
                "no frames to fit normalisation".into(),
            ));
        }
        let std = m2
            .iter()
            .map(|q| (q / count as f64).sqrt().max(STD_FLOOR))
            .collect();
        Ok(NormStats { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, frames: ArrayView2<f64>) -> Result<Array2<f64>> {
        if frames.ncols() != self.dim() {
            return Err(Error::Dimension(format!(
                "features have {} bins, normaliser expects {}",
                frames.ncols(),
                self.dim()
            )));
        }
        let mut out = frames.to_owned();
        for mut row in out.rows_mut() {
            for ((x, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *x = (*x - m) / s;
            }
        }
        Ok(out)
    }
}

/// `[x_{i-p}; ...; x_i; ...; x_{i+p}]` with edge clamping.
pub fn augment_context(spec: &Spectrogram, i: usize, cfg: &ContextConfig) -> Result<Vec<f64>> {
    let n_frames = spec.n_frames();
    if i >= n_frames {
        return Err(Error::Index {
            index: i,
            len: n_frames,
        });
    }
    let mut out = Vec::with_capacity(cfg.width() * spec.n_bins());
    for n in 0..cfg.width() {
        out.extend(spec.frames.row(context_index(i, n, cfg.p, n_frames)).iter());
    }
    Ok(out)
}

/// Stacks the context windows of `picks` (utterance, frame) from normalised
/// per-utterance feature matrices into one `M x (2p+1)K` matrix.
pub fn gather_context_rows(
    utts: &[Array2<f64>],
    picks: &[(usize, usize)],
    p: usize,
) -> Array2<f64> {
    let k = utts.first().map_or(0, |u| u.ncols());
    let width = 2 * p + 1;
    let mut out = Array2::zeros((picks.len(), width * k));
    for (mut row, &(u, i)) in out.rows_mut().into_iter().zip(picks) {
        let feats = &utts[u];
        for n in 0..width {
            let src = feats.row(context_index(i, n, p, feats.nrows()));
            row.slice_mut(s![n * k..(n + 1) * k]).assign(&src);
        }
    }
    out
}

/// Per-step `M x K` matrices: step `n` holds frame `i - p + n`, clamped.
pub fn gather_sequence_steps(
    utts: &[Array2<f64>],
    picks: &[(usize, usize)],
    p: usize,
) -> Vec<Array2<f64>> {
    let k = utts.first().map_or(0, |u| u.ncols());
    (0..2 * p + 1)
        .map(|n| {
            let mut step = Array2::zeros((picks.len(), k));
            for (mut row, &(u, i)) in step.rows_mut().into_iter().zip(picks) {
                let feats = &utts[u];
                row.assign(&feats.row(context_index(i, n, p, feats.nrows())));
            }
            step
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum BatchTargets {
    /// F0 in Hz.
    Regression(Vec<f64>),
    /// Quantiser states.
    Classes(Vec<usize>),
}

impl BatchTargets {
    pub fn len(&self) -> usize {
        match self {
            BatchTargets::Regression(v) => v.len(),
            BatchTargets::Classes(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct DnnBatch {
    pub inputs: Array2<f64>,
    pub targets: BatchTargets,
    pub frame_ids: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct RnnBatch {
    pub steps: Vec<Array2<f64>>,
    pub targets: Vec<f64>,
    pub frame_ids: Vec<usize>,
}

/// Resolves targets for `frame_ids`. Regression keeps voiced frames only.
fn select_targets(
    spec: &Spectrogram,
    contour: &F0Contour,
    frame_ids: &[usize],
    quantizer: Option<&Quantizer>,
) -> Result<(Vec<usize>, BatchTargets)> {
    let n_frames = spec.n_frames();
    let mut kept = Vec::with_capacity(frame_ids.len());
    let mut hz = Vec::new();
    let mut states = Vec::new();
    for &id in frame_ids {
        if id >= n_frames {
            return Err(Error::Index {
                index: id,
                len: n_frames,
            });
        }
        let f0 = contour.f0_at(id).ok_or(Error::Index {
            index: id,
            len: contour.len(),
        })?;
        match quantizer {
            Some(q) => {
                kept.push(id);
                states.push(q.quantize(f0));
            }
            None if f0 > 0.0 => {
                kept.push(id);
                hz.push(f0);
            }
            None => {}
        }
    }
    if kept.is_empty() {
        return Err(Error::EmptyBatch(
            "no usable frames among the requested ids".into(),
        ));
    }
    let targets = match quantizer {
        Some(_) => BatchTargets::Classes(states),
        None => BatchTargets::Regression(hz),
    };
    Ok((kept, targets))
}

/// DNN mini-batch of normalised context vectors. Without a quantiser the
/// targets are F0 in Hz and unvoiced frames are dropped.
pub fn build_dnn_batch(
    spec: &Spectrogram,
    contour: &F0Contour,
    frame_ids: &[usize],
    cfg: &ContextConfig,
    quantizer: Option<&Quantizer>,
    stats: &NormStats,
) -> Result<DnnBatch> {
    let (kept, targets) = select_targets(spec, contour, frame_ids, quantizer)?;
    let feats = [stats.apply(spec.frames.view())?];
    let picks: Vec<(usize, usize)> = kept.iter().map(|&i| (0, i)).collect();
    Ok(DnnBatch {
        inputs: gather_context_rows(&feats, &picks, cfg.p),
        targets,
        frame_ids: kept,
    })
}

/// RNN mini-batch of `2p + 1` normalised steps with F0 targets (voiced only).
pub fn build_rnn_batch(
    spec: &Spectrogram,
    contour: &F0Contour,
    frame_ids: &[usize],
    cfg: &ContextConfig,
    stats: &NormStats,
) -> Result<RnnBatch> {
    let (kept, targets) = select_targets(spec, contour, frame_ids, None)?;
    let BatchTargets::Regression(targets) = targets else {
        unreachable!("regression targets requested");
    };
    let feats = [stats.apply(spec.frames.view())?];
    let picks: Vec<(usize, usize)> = kept.iter().map(|&i| (0, i)).collect();
    Ok(RnnBatch {
        steps: gather_sequence_steps(&feats, &picks, cfg.p),
        targets,
        frame_ids: kept,
    })
}
