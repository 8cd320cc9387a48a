//! The three learned trackers: DNN regression, RNN encoder regression and
//! the DNN-HMM classifier, plus training, decoding and persistence.

mod hmm;
mod persist;

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{s, Array2, ArrayView2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dsp::{spectrogram, FeatureKind, FramingConfig, Spectrogram};
use crate::error::{Error, Result};
use crate::features::{
    gather_context_rows, gather_sequence_steps, ContextConfig, NormStats, Quantizer,
};
use crate::nn::{
    Activation, FeedForwardNet, ForwardMode, OptimizerState, RecurrentEncoder, Targets, TrainConfig,
};
use crate::rng::rng_for;
use crate::signal_io::{F0Contour, Waveform};

pub use hmm::{
    path_score, scaled_emission, viterbi_decode, viterbi_decode_scored, HmmParams, PRIOR_FLOOR,
};
pub use persist::{
    decode_model, encode_model, load_model, load_model_expecting, save_model, FORMAT_VERSION,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackerKind {
    DnnReg,
    RnnReg,
    DnnHmm,
}

impl TrackerKind {
    pub const ALL: [TrackerKind; 3] = [
        TrackerKind::DnnReg,
        TrackerKind::RnnReg,
        TrackerKind::DnnHmm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TrackerKind::DnnReg => "dnn_reg",
            TrackerKind::RnnReg => "rnn_reg",
            TrackerKind::DnnHmm => "dnn_hmm",
        }
    }

    pub fn is_regression(self) -> bool {
        !matches!(self, TrackerKind::DnnHmm)
    }
}

impl fmt::Display for TrackerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrackerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TrackerKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown tracker kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Network {
    Dense(FeedForwardNet),
    Recurrent(RecurrentEncoder),
}

/// Affine map between F0 in Hz and the regression network's output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetScaler {
    pub mean_hz: f64,
    pub std_hz: f64,
}

impl TargetScaler {
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::DegenerateInput("no voiced training frames".into()));
        }
        let n = values.len() as f64;
        let mean_hz = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean_hz).powi(2)).sum::<f64>() / n;
        Ok(TargetScaler {
            mean_hz,
            std_hz: var.sqrt().max(1.0),
        })
    }

    pub fn to_net(&self, f_hz: f64) -> f64 {
        (f_hz - self.mean_hz) / self.std_hz
    }

    pub fn to_hz(&self, y: f64) -> f64 {
        y * self.std_hz + self.mean_hz
    }
}

/// Hidden-layer shape shared by all three trackers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchitectureConfig {
    pub hidden_layers: usize,
    pub hidden_units: usize,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        ArchitectureConfig {
            hidden_layers: 3,
            hidden_units: 1024,
        }
    }
}

/// A trained tracker. Regression kinds carry `target_scaler`; `dnn_hmm`
/// carries `quantizer` and `hmm`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackerModel {
    pub kind: TrackerKind,
    pub sample_rate_hz: u32,
    pub framing: FramingConfig,
    pub feature_kind: FeatureKind,
    pub context: ContextConfig,
    pub norm_stats: NormStats,
    pub target_scaler: Option<TargetScaler>,
    pub quantizer: Option<Quantizer>,
    pub hmm: Option<HmmParams>,
    pub network: Network,
}

impl TrackerModel {
    /// Checks that the kind-dependent fields and network shapes agree.
    pub fn validate(&self) -> Result<()> {
        let k = self.norm_stats.dim();
        if k != self.framing.n_bins() {
            return Err(Error::ModelMismatch(format!(
                "normaliser has {k} bins, framing gives {}",
                self.framing.n_bins()
            )));
        }
        let mismatch =
            |what: &str| Err(Error::ModelMismatch(format!("{} model {what}", self.kind)));
        match (self.kind, &self.network) {
            (TrackerKind::DnnReg | TrackerKind::DnnHmm, Network::Dense(net)) => {
                net.validate()?;
                if net.input_dim() != self.context.width() * k {
                    return mismatch("input width does not match the context layout");
                }
            }
            (TrackerKind::RnnReg, Network::Recurrent(net)) => {
                net.validate()?;
                if net.input_dim() != k || net.steps != self.context.width() {
                    return mismatch("encoder shape does not match the context layout");
                }
            }
            _ => return mismatch("has the wrong network type"),
        }
        if self.kind.is_regression() {
            if self.target_scaler.is_none() || self.quantizer.is_some() || self.hmm.is_some() {
                return mismatch("must carry a target scaler and no HMM");
            }
            if let Network::Dense(net) = &self.network {
                if net.output_activation() != Activation::Identity || net.output_dim() != 1 {
                    return mismatch("needs one identity output unit");
                }
            }
        } else {
            let (Some(q), Some(h)) = (&self.quantizer, &self.hmm) else {
                return mismatch("must carry a quantiser and HMM");
            };
            if self.target_scaler.is_some() {
                return mismatch("must not carry a target scaler");
            }
            q.validate()?;
            h.validate()?;
            let Network::Dense(net) = &self.network else {
                unreachable!("checked above")
            };
            if net.output_activation() != Activation::Softmax
                || net.output_dim() != q.n_states
                || h.n_states() != q.n_states
            {
                return mismatch("softmax head does not match the quantiser");
            }
        }
        Ok(())
    }

    /// Analysis-frame features normalised with the frozen statistics.
    pub fn features(&self, spec: &Spectrogram) -> Result<Array2<f64>> {
        if spec.n_bins() != self.norm_stats.dim() {
            return Err(Error::ModelMismatch(format!(
                "spectrogram has {} bins, model expects {}",
                spec.n_bins(),
                self.norm_stats.dim()
            )));
        }
        self.norm_stats.apply(spec.frames.view())
    }

    pub fn spectrogram(&self, w: &Waveform) -> Result<Spectrogram> {
        if w.sample_rate_hz != self.sample_rate_hz {
            return Err(Error::ModelMismatch(format!(
                "waveform at {} Hz, model trained at {} Hz",
                w.sample_rate_hz, self.sample_rate_hz
            )));
        }
        spectrogram(w, &self.framing, self.feature_kind)
    }
}

/// One training or evaluation utterance: audio plus its reference contour on
/// the reference's own frame grid.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    pub wave: Waveform,
    pub truth: F0Contour,
}

/// Resamples `truth` onto the grid `offset_s + i * hop_s` (`n_frames`
/// frames) by nearest frame time. Grid points further than half a
/// reference hop from any reference frame are unvoiced.
pub fn align_ground_truth(
    truth: &F0Contour,
    hop_s: f64,
    offset_s: f64,
    n_frames: usize,
) -> Result<F0Contour> {
    let values: Vec<f64> = (0..n_frames)
        .map(|i| {
            let t = offset_s + i as f64 * hop_s;
            let pos = (t - truth.offset_s) / truth.hop_s;
            let idx = pos.round();
            if idx < 0.0 || (pos - idx).abs() > 0.5 + 1e-9 {
                return 0.0;
            }
            truth.f0_at(idx as usize).unwrap_or(0.0)
        })
        .collect();
    F0Contour::from_values(&values, hop_s, offset_s)
}

/// Per-epoch training record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub cv_loss: f64,
    pub lr: f64,
    pub seconds: f64,
}

pub fn training_log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,train_loss,cv_loss,lr,seconds\n");
    for e in log {
        out.push_str(&format!(
            "{},{},{},{},{:.3}\n",
            e.epoch, e.train_loss, e.cv_loss, e.lr, e.seconds
        ));
    }
    out
}

pub fn write_training_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    fs::write(path, training_log_csv(log)).map_err(|e| Error::io(path, e))
}

/// Everything `train_tracker` needs besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackerSetup {
    pub framing: FramingConfig,
    pub feature_kind: FeatureKind,
    pub context: ContextConfig,
    pub quantizer: Quantizer,
    pub architecture: ArchitectureConfig,
    pub training: TrainConfig,
}

impl Default for TrackerSetup {
    fn default() -> Self {
        TrackerSetup {
            framing: FramingConfig::default(),
            feature_kind: FeatureKind::LogPsd,
            context: ContextConfig::default(),
            quantizer: Quantizer::default(),
            architecture: ArchitectureConfig::default(),
            training: TrainConfig::default(),
        }
    }
}

/// Normalised features and frame-aligned targets for a set of utterances.
struct Prepared {
    feats: Vec<Array2<f64>>,
    truth: Vec<F0Contour>,
}

fn analyse(
    utts: &[Utterance],
    setup: &TrackerSetup,
    sample_rate_hz: u32,
) -> Result<(Vec<Spectrogram>, Vec<F0Contour>)> {
    let mut specs = Vec::with_capacity(utts.len());
    let mut truth = Vec::with_capacity(utts.len());
    for u in utts {
        if u.wave.sample_rate_hz != sample_rate_hz {
            return Err(Error::Parameter(format!(
                "utterance {} is at {} Hz, expected {sample_rate_hz} Hz",
                u.id, u.wave.sample_rate_hz
            )));
        }
        let spec = spectrogram(&u.wave, &setup.framing, setup.feature_kind)?;
        if spec.n_frames() == 0 {
            log::warn!("utterance {} has no frames after trimming; skipped", u.id);
            continue;
        }
        truth.push(align_ground_truth(
            &u.truth,
            spec.hop_s,
            spec.offset_s,
            spec.n_frames(),
        )?);
        specs.push(spec);
    }
    Ok((specs, truth))
}

fn prepare(
    utts: &[Utterance],
    setup: &TrackerSetup,
    sample_rate_hz: u32,
    stats: &NormStats,
) -> Result<Prepared> {
    let (specs, truth) = analyse(utts, setup, sample_rate_hz)?;
    let feats = specs
        .iter()
        .map(|s| stats.apply(s.frames.view()))
        .collect::<Result<Vec<_>>>()?;
    Ok(Prepared { feats, truth })
}

/// (utterance, frame) pairs usable as training samples with their targets
/// in network units.
fn samples(
    data: &Prepared,
    kind: TrackerKind,
    scaler: Option<&TargetScaler>,
    quantizer: &Quantizer,
) -> (Vec<(usize, usize)>, Vec<f64>, Vec<usize>) {
    let mut picks = Vec::new();
    let mut values = Vec::new();
    let mut classes = Vec::new();
    for (u, contour) in data.truth.iter().enumerate() {
        for f in &contour.frames {
            if kind.is_regression() {
                if f.voiced {
                    picks.push((u, f.frame_index));
                    values.push(scaler.expect("regression scaler").to_net(f.f0_hz));
                }
            } else {
                picks.push((u, f.frame_index));
                classes.push(quantizer.quantize(f.f0_hz));
            }
        }
    }
    (picks, values, classes)
}

fn build_network(kind: TrackerKind, setup: &TrackerSetup, k: usize) -> Result<Network> {
    let arch = setup.architecture;
    if arch.hidden_layers == 0 || arch.hidden_units == 0 {
        return Err(Error::Config(
            "architecture needs at least one hidden unit and layer".into(),
        ));
    }
    let mut rng = rng_for(setup.training.seed, "init");
    let hidden = vec![arch.hidden_units; arch.hidden_layers];
    Ok(match kind {
        TrackerKind::RnnReg => Network::Recurrent(RecurrentEncoder::new(
            k,
            &hidden,
            setup.context.width(),
            &mut rng,
        )?),
        TrackerKind::DnnReg | TrackerKind::DnnHmm => {
            let (out_units, out_act) = if kind == TrackerKind::DnnHmm {
                (setup.quantizer.n_states, Activation::Softmax)
            } else {
                (1, Activation::Identity)
            };
            let mut sizes = vec![setup.context.width() * k];
            sizes.extend(&hidden);
            sizes.push(out_units);
            Network::Dense(FeedForwardNet::new(
                &sizes,
                Activation::Relu,
                out_act,
                true,
                &mut rng,
            )?)
        }
    })
}

/// Mean loss over `picks` in inference mode, evaluated in fixed-size chunks.
fn dataset_loss(
    network: &Network,
    data: &Prepared,
    p: usize,
    picks: &[(usize, usize)],
    values: &[f64],
    classes: &[usize],
    chunk: usize,
) -> Result<f64> {
    if picks.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for start in (0..picks.len()).step_by(chunk) {
        let end = (start + chunk).min(picks.len());
        let part = &picks[start..end];
        let l = match network {
            Network::Dense(net) => {
                let x = gather_context_rows(&data.feats, part, p);
                let t = if classes.is_empty() {
                    Targets::Values(&values[start..end])
                } else {
                    Targets::Classes(&classes[start..end])
                };
                net.loss(x.view(), t)?
            }
            Network::Recurrent(net) => net.loss(
                &gather_sequence_steps(&data.feats, part, p),
                &values[start..end],
            )?,
        };
        total += l * part.len() as f64;
    }
    Ok(total / picks.len() as f64)
}

/// Trains a tracker of `kind` on `train`, selecting the epoch with the
/// lowest loss on `cv` (training loss when `cv` is empty).
pub fn train_tracker(
    kind: TrackerKind,
    train: &[Utterance],
    cv: &[Utterance],
    setup: &TrackerSetup,
) -> Result<(TrackerModel, Vec<EpochLog>)> {
    let cfg = &setup.training;
    cfg.validate()?;
    setup.quantizer.validate()?;
    let Some(first) = train.first() else {
        return Err(Error::Config("training set is empty".into()));
    };
    let fs = first.wave.sample_rate_hz;
    setup.framing.validate(fs)?;

    let (train_specs, train_truth) = analyse(train, setup, fs)?;
    let norm_stats = NormStats::fit(&train_specs)?;
    let train_data = Prepared {
        feats: train_specs
            .iter()
            .map(|s| norm_stats.apply(s.frames.view()))
            .collect::<Result<Vec<_>>>()?,
        truth: train_truth,
    };
    drop(train_specs);
    let cv_data = prepare(cv, setup, fs, &norm_stats)?;

    let target_scaler = if kind.is_regression() {
        let voiced: Vec<f64> = train_data
            .truth
            .iter()
            .flat_map(|c| c.frames.iter().filter(|f| f.voiced).map(|f| f.f0_hz))
            .collect();
        Some(TargetScaler::fit(&voiced)?)
    } else {
        None
    };
    let hmm = if kind.is_regression() {
        None
    } else {
        Some(HmmParams::estimate(&train_data.truth, &setup.quantizer)?)
    };

    let (picks, values, classes) =
        samples(&train_data, kind, target_scaler.as_ref(), &setup.quantizer);
    if picks.is_empty() {
        return Err(Error::EmptyBatch("no usable training frames".into()));
    }
    let (cv_picks, cv_values, cv_classes) =
        samples(&cv_data, kind, target_scaler.as_ref(), &setup.quantizer);

    let k = setup.framing.n_bins();
    let p = setup.context.p;
    let mut network = build_network(kind, setup, k)?;
    let mut optimizer = OptimizerState::new(cfg.optimizer);
    let mut drop_rng = rng_for(cfg.seed, "dropout");
    let per_epoch = cfg
        .max_samples_per_epoch
        .unwrap_or(usize::MAX)
        .min(picks.len());
    let eval_chunk = 512;

    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, Network)> = None;
    let mut order: Vec<usize> = (0..picks.len()).collect();
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let lr = cfg.learning_rate_at(epoch);
        order.shuffle(&mut rng_for(cfg.seed, &format!("shuffle-{epoch}")));
        let mut loss_sum = 0.0;
        for batch in order[..per_epoch].chunks(cfg.batch_size) {
            let bp: Vec<(usize, usize)> = batch.iter().map(|&j| picks[j]).collect();
            let loss = match &mut network {
                Network::Dense(net) => {
                    let x = gather_context_rows(&train_data.feats, &bp, p);
                    let tv: Vec<f64>;
                    let tc: Vec<usize>;
                    let targets = if kind.is_regression() {
                        tv = batch.iter().map(|&j| values[j]).collect();
                        Targets::Values(&tv)
                    } else {
                        tc = batch.iter().map(|&j| classes[j]).collect();
                        Targets::Classes(&tc)
                    };
                    let mode = if cfg.dropout_rate > 0.0 {
                        ForwardMode::Dropout {
                            rate: cfg.dropout_rate,
                            rng: &mut drop_rng,
                        }
                    } else {
                        ForwardMode::Deterministic
                    };
                    net.train_step(x.view(), targets, lr, &mut optimizer, mode)?
                }
                Network::Recurrent(net) => {
                    let steps = gather_sequence_steps(&train_data.feats, &bp, p);
                    let tv: Vec<f64> = batch.iter().map(|&j| values[j]).collect();
                    net.train_step(&steps, &tv, lr, &mut optimizer, cfg.clip_norm)?
                        .0
                }
            };
            loss_sum += loss * batch.len() as f64;
        }
        let train_loss = loss_sum / per_epoch as f64;
        let cv_loss = dataset_loss(
            &network,
            &cv_data,
            p,
            &cv_picks,
            &cv_values,
            &cv_classes,
            eval_chunk,
        )?;
        if !train_loss.is_finite() {
            return Err(Error::Divergence(format!(
                "epoch {} training loss {train_loss}",
                epoch + 1
            )));
        }
        let select = if cv_picks.is_empty() {
            train_loss
        } else {
            cv_loss
        };
        if best.as_ref().is_none_or(|(b, _)| select < *b) {
            best = Some((select, network.clone()));
        }
        let entry = EpochLog {
            epoch: epoch + 1,
            train_loss,
            cv_loss,
            lr,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "{kind} epoch {}: train {:.5} cv {:.5} ({:.1}s)",
            entry.epoch,
            train_loss,
            cv_loss,
            entry.seconds
        );
        log.push(entry);
    }
    let network = best.map_or(network, |(_, n)| n);
    let model = TrackerModel {
        kind,
        sample_rate_hz: fs,
        framing: setup.framing.clone(),
        feature_kind: setup.feature_kind,
        context: setup.context,
        norm_stats,
        target_scaler,
        quantizer: (!kind.is_regression()).then_some(setup.quantizer),
        hmm,
        network,
    };
    model.validate()?;
    Ok((model, log))
}

const INFER_CHUNK: usize = 512;

/// Network outputs for every frame of normalised `feats`, in chunks.
fn network_outputs(model: &TrackerModel, feats: &Array2<f64>) -> Result<Array2<f64>> {
    let n = feats.nrows();
    let p = model.context.p;
    let utts = std::slice::from_ref(feats);
    let width = match &model.network {
        Network::Dense(net) => net.output_dim(),
        Network::Recurrent(_) => 1,
    };
    let mut out = Array2::zeros((n, width));
    for start in (0..n).step_by(INFER_CHUNK) {
        let end = (start + INFER_CHUNK).min(n);
        let picks: Vec<(usize, usize)> = (start..end).map(|i| (0, i)).collect();
        match &model.network {
            Network::Dense(net) => {
                let y = net.forward(gather_context_rows(utts, &picks, p).view())?;
                out.slice_mut(s![start..end, ..]).assign(&y);
            }
            Network::Recurrent(net) => {
                let y = net.forward(&gather_sequence_steps(utts, &picks, p))?;
                out.slice_mut(s![start..end, 0])
                    .assign(&ndarray::ArrayView1::from(&y));
            }
        }
    }
    Ok(out)
}

/// Continuous per-frame F0 for the regression kinds, clamped to
/// `[0, Nyquist]`. Every frame with a positive estimate is voiced.
pub fn infer_regression(model: &TrackerModel, spec: &Spectrogram) -> Result<F0Contour> {
    let Some(scaler) = model.target_scaler.filter(|_| model.kind.is_regression()) else {
        return Err(Error::ModelMismatch(format!(
            "{} is not a regression tracker",
            model.kind
        )));
    };
    let feats = model.features(spec)?;
    let y = network_outputs(model, &feats)?;
    let nyquist = f64::from(model.sample_rate_hz) / 2.0;
    let values: Vec<f64> = y
        .column(0)
        .iter()
        .map(|&v| scaler.to_hz(v).clamp(0.0, nyquist))
        .collect();
    F0Contour::from_values(&values, spec.hop_s, spec.offset_s)
}

/// Per-frame state posteriors (`I x U`) of a DNN-HMM tracker.
pub fn posteriors(model: &TrackerModel, spec: &Spectrogram) -> Result<Array2<f64>> {
    if model.kind != TrackerKind::DnnHmm {
        return Err(Error::ModelMismatch(format!(
            "{} has no state posteriors",
            model.kind
        )));
    }
    network_outputs(model, &model.features(spec)?)
}

/// Decoded DNN-HMM contour; state 0 is unvoiced.
pub fn decode_hmm(
    model: &TrackerModel,
    post: ArrayView2<f64>,
    spec: &Spectrogram,
) -> Result<F0Contour> {
    let (Some(q), Some(h)) = (&model.quantizer, &model.hmm) else {
        return Err(Error::ModelMismatch(format!("{} has no HMM", model.kind)));
    };
    let path = viterbi_decode(post, h)?;
    let values: Vec<f64> = path.iter().map(|&s| q.dequantize(s)).collect();
    F0Contour::from_values(&values, spec.hop_s, spec.offset_s)
}

/// Waveform to F0 contour with the model's own framing.
pub fn track(model: &TrackerModel, w: &Waveform) -> Result<F0Contour> {
    let spec = model.spectrogram(w)?;
    if spec.n_frames() == 0 {
        return F0Contour::new(Vec::new(), spec.hop_s, spec.offset_s);
    }
    if model.kind.is_regression() {
        infer_regression(model, &spec)
    } else {
        let post = posteriors(model, &spec)?;
        decode_hmm(model, post.view(), &spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal_io::synth_harmonic;

    pub(crate) fn tiny_setup() -> TrackerSetup {
        TrackerSetup {
            framing: FramingConfig {
                fft_size: 512,
                ..FramingConfig::untrimmed()
            },
            context: ContextConfig { p: 1 },
            architecture: ArchitectureConfig {
                hidden_layers: 1,
                hidden_units: 6,
            },
            training: TrainConfig {
                epochs: 3,
                batch_size: 32,
                learning_rate: 0.01,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    pub(crate) fn tone_utterance(id: &str, f0: f64, n_frames: usize) -> Utterance {
        let mut values = vec![f0; n_frames];
        values[0] = 0.0;
        let truth = F0Contour::from_values(&values, 0.005, 0.0125).unwrap();
        let wave = synth_harmonic(&truth, 3, 16_000, 0.3).unwrap();
        Utterance {
            id: id.into(),
            wave,
            truth,
        }
    }

    #[test]
    fn kind_names_round_trip() {
        for k in TrackerKind::ALL {
            assert_eq!(k.as_str().parse::<TrackerKind>().unwrap(), k);
        }
        assert!(matches!(
            "rnn".parse::<TrackerKind>(),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn align_ground_truth_on_same_grid_is_identity() {
        let c = F0Contour::from_values(&[0.0, 100.0, 110.0, 0.0], 0.005, 0.0125).unwrap();
        assert_eq!(align_ground_truth(&c, 0.005, 0.0125, 4).unwrap(), c);
    }

    #[test]
    fn align_ground_truth_resamples_coarser_reference() {
        let c = F0Contour::from_values(&[100.0, 200.0, 300.0], 0.010, 0.0).unwrap();
        // Grid times 2.5, 7.5, ... ms: frame 2 covers up to 25 ms.
        let a = align_ground_truth(&c, 0.005, 0.0025, 7).unwrap();
        assert_eq!(
            a.values(),
            vec![100.0, 200.0, 200.0, 300.0, 300.0, 0.0, 0.0]
        );
    }

    #[test]
    fn dnn_architectures_match_configuration() {
        let setup = TrackerSetup::default();
        let Network::Dense(net) = build_network(TrackerKind::DnnReg, &setup, 513).unwrap() else {
            panic!("dense expected")
        };
        let shape: Vec<usize> = std::iter::once(net.input_dim())
            .chain(net.layers.iter().map(|l| l.units()))
            .collect();
        assert_eq!(shape, vec![7695, 1024, 1024, 1024, 1]);
        assert!(net.layers[..3]
            .iter()
            .all(|l| l.activation == Activation::Relu && l.batch_norm.is_some()));
        assert_eq!(net.output_activation(), Activation::Identity);

        let small = TrackerSetup {
            architecture: ArchitectureConfig {
                hidden_layers: 1,
                hidden_units: 4,
            },
            ..Default::default()
        };
        let Network::Dense(hmm) = build_network(TrackerKind::DnnHmm, &small, 513).unwrap() else {
            panic!("dense expected")
        };
        assert_eq!(hmm.output_dim(), 68);
        assert_eq!(hmm.output_activation(), Activation::Softmax);
    }

    #[test]
    fn untrained_uniform_logits_give_uniform_posteriors() {
        let train = vec![tone_utterance("a", 150.0, 40)];
        let mut setup = tiny_setup();
        setup.training.epochs = 1;
        let (mut model, _) = train_tracker(TrackerKind::DnnHmm, &train, &[], &setup).unwrap();
        if let Network::Dense(net) = &mut model.network {
            net.layers.last_mut().unwrap().weights.fill(0.0);
        }
        let spec = model.spectrogram(&train[0].wave).unwrap();
        let post = posteriors(&model, &spec).unwrap();
        assert_eq!(post.dim(), (spec.n_frames(), 68));
        for row in post.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&v| (v - 1.0 / 68.0).abs() < 1e-15));
        }
    }

    #[test]
    fn hmm_output_lies_on_bin_centres() {
        let train = vec![
            tone_utterance("a", 150.0, 40),
            tone_utterance("b", 220.0, 40),
        ];
        let (model, _) = train_tracker(TrackerKind::DnnHmm, &train, &[], &tiny_setup()).unwrap();
        let c = track(&model, &train[0].wave).unwrap();
        let centres = model.quantizer.unwrap().centers();
        assert!(c.values().iter().all(|&v| v == 0.0 || centres.contains(&v)));
    }

    #[test]
    fn regression_tracking_is_deterministic_and_sized() {
        let train = vec![
            tone_utterance("a", 150.0, 40),
            tone_utterance("b", 220.0, 40),
        ];
        for kind in [TrackerKind::DnnReg, TrackerKind::RnnReg] {
            let (model, log) = train_tracker(kind, &train, &train[..1], &tiny_setup()).unwrap();
            assert_eq!(log.len(), 3);
            let spec = model.spectrogram(&train[1].wave).unwrap();
            let a = infer_regression(&model, &spec).unwrap();
            assert_eq!(a.len(), spec.n_frames());
            assert_eq!((a.hop_s, a.offset_s), (spec.hop_s, spec.offset_s));
            assert_eq!(a, infer_regression(&model, &spec).unwrap());
        }
    }

    #[test]
    fn wrong_sample_rate_is_a_model_mismatch() {
        let train = vec![tone_utterance("a", 150.0, 40)];
        let (model, _) = train_tracker(TrackerKind::DnnReg, &train, &[], &tiny_setup()).unwrap();
        let w = Waveform::new(vec![0.0; 4000], 8000).unwrap();
        assert!(matches!(track(&model, &w), Err(Error::ModelMismatch(_))));
    }

    #[test]
    fn empty_training_set_is_a_config_error() {
        assert!(matches!(
            train_tracker(TrackerKind::DnnReg, &[], &[], &tiny_setup()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn training_log_csv_layout() {
        let csv = training_log_csv(&[EpochLog {
            epoch: 1,
            train_loss: 0.5,
            cv_loss: 0.25,
            lr: 0.01,
            seconds: 1.0,
        }]);
        assert_eq!(
            csv,
            "epoch,train_loss,cv_loss,lr,seconds\n1,0.5,0.25,0.01,1.000\n"
        );
    }
}
