//! Binary model container.
//!
//! Layout (all integers and floats little-endian): magic `F0TK`, u32 format
//! version, u8 kind tag, then framing, feature kind, context, normaliser,
//! optional target scaler, optional quantiser, optional HMM and the network.
//! Every float is stored as f64, so a round trip is bit-exact.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::dsp::{FeatureKind, FramingConfig, WindowKind};
use crate::error::{Error, Result};
use crate::features::{ContextConfig, NormStats, QuantScale, Quantizer};
use crate::nn::{
    Activation, BatchNorm, DenseLayer, FeedForwardNet, RecurrentEncoder, RecurrentLayer,
};

use super::{HmmParams, Network, TargetScaler, TrackerKind, TrackerModel};

const MAGIC: &[u8; 4] = b"F0TK";
pub const FORMAT_VERSION: u32 = 1;

fn kind_tag(kind: TrackerKind) -> u8 {
    match kind {
        TrackerKind::DnnReg => 0,
        TrackerKind::RnnReg => 1,
        TrackerKind::DnnHmm => 2,
    }
}

fn window_tag(w: WindowKind) -> u8 {
    match w {
        WindowKind::Hann => 0,
        WindowKind::Hamming => 1,
        WindowKind::Rect => 2,
    }
}

fn feature_tag(k: FeatureKind) -> u8 {
    match k {
        FeatureKind::Magnitude => 0,
        FeatureKind::Psd => 1,
        FeatureKind::LogPsd => 2,
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0
            .extend_from_slice(&u32::try_from(v).expect("size fits in u32").to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        v.iter().for_each(|&x| self.f64(x));
    }
    fn matrix(&mut self, m: &Array2<f64>) {
        self.u32(m.nrows());
        self.u32(m.ncols());
        m.iter().for_each(|&x| self.f64(x));
    }
    fn dense(&mut self, layer: &DenseLayer) {
        self.u8(layer.activation.code());
        self.matrix(&layer.weights);
        match &layer.batch_norm {
            None => self.u8(0),
            Some(bn) => {
                self.u8(1);
                self.f64s(&bn.gamma);
                self.f64s(&bn.beta);
                self.f64s(&bn.running_mean);
                self.f64s(&bn.running_var);
                self.f64(bn.momentum);
                self.f64(bn.eps);
            }
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("model truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        // Bounds-check the whole run before allocating.
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Format("length overflow".into()))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
    fn flag(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            t => Err(Error::Format(format!("invalid flag byte {t}"))),
        }
    }
    fn matrix(&mut self) -> Result<Array2<f64>> {
        let r = self.u32()?;
        let c = self.u32()?;
        let n = r
            .checked_mul(c)
            .ok_or_else(|| Error::Format("matrix size overflow".into()))?;
        Ok(Array2::from_shape_vec((r, c), self.f64s(n)?).expect("shape matches length"))
    }
    fn dense(&mut self) -> Result<DenseLayer> {
        let code = self.u8()?;
        let activation = Activation::from_code(code)
            .ok_or_else(|| Error::Format(format!("unknown activation {code}")))?;
        let weights = self.matrix()?;
        let units = weights.nrows();
        let batch_norm = if self.flag()? {
            Some(BatchNorm {
                gamma: self.f64s(units)?,
                beta: self.f64s(units)?,
                running_mean: self.f64s(units)?,
                running_var: self.f64s(units)?,
                momentum: self.f64()?,
                eps: self.f64()?,
            })
        } else {
            None
        };
        Ok(DenseLayer {
            weights,
            activation,
            batch_norm,
        })
    }
}

pub fn encode_model(model: &TrackerModel) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION as usize);
    w.u8(kind_tag(model.kind));
    w.u32(model.sample_rate_hz as usize);

    let f = &model.framing;
    w.f64(f.frame_len_s);
    w.f64(f.hop_s);
    w.u8(window_tag(f.window));
    w.u32(f.fft_size);
    w.u32(f.head_trim_frames);
    w.u32(f.tail_trim_frames);
    w.u8(feature_tag(model.feature_kind));
    w.u32(model.context.p);

    w.u32(model.norm_stats.dim());
    w.f64s(&model.norm_stats.mean);
    w.f64s(&model.norm_stats.std);

    match &model.target_scaler {
        None => w.u8(0),
        Some(s) => {
            w.u8(1);
            w.f64(s.mean_hz);
            w.f64(s.std_hz);
        }
    }
    match &model.quantizer {
        None => w.u8(0),
        Some(q) => {
            w.u8(1);
            w.u32(q.n_states);
            w.f64(q.f_min_hz);
            w.f64(q.f_max_hz);
            w.u8(match q.scale {
                QuantScale::Log => 0,
                QuantScale::Linear => 1,
            });
        }
    }
    match &model.hmm {
        None => w.u8(0),
        Some(h) => {
            w.u8(1);
            w.u32(h.n_states());
            w.f64s(&h.log_prior);
            w.matrix(&h.log_trans);
        }
    }
    match &model.network {
        Network::Dense(net) => {
            w.u8(0);
            w.u32(net.layers.len());
            net.layers.iter().for_each(|l| w.dense(l));
        }
        Network::Recurrent(net) => {
            w.u8(1);
            w.u32(net.steps);
            w.u32(net.layers.len());
            for l in &net.layers {
                w.matrix(&l.w);
                w.matrix(&l.h);
            }
            w.dense(&net.head);
        }
    }
    w.0
}

pub fn decode_model(bytes: &[u8]) -> Result<TrackerModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION as usize {
        return Err(Error::Format(format!(
            "model format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let kind = match r.u8()? {
        0 => TrackerKind::DnnReg,
        1 => TrackerKind::RnnReg,
        2 => TrackerKind::DnnHmm,
        t => return Err(Error::Format(format!("unknown tracker tag {t}"))),
    };
    let sample_rate_hz = r.u32()? as u32;
    let frame_len_s = r.f64()?;
    let hop_s = r.f64()?;
    let window = match r.u8()? {
        0 => WindowKind::Hann,
        1 => WindowKind::Hamming,
        2 => WindowKind::Rect,
        t => return Err(Error::Format(format!("unknown window tag {t}"))),
    };
    let framing = FramingConfig {
        frame_len_s,
        hop_s,
        window,
        fft_size: r.u32()?,
        head_trim_frames: r.u32()?,
        tail_trim_frames: r.u32()?,
    };
    let feature_kind = match r.u8()? {
        0 => FeatureKind::Magnitude,
        1 => FeatureKind::Psd,
        2 => FeatureKind::LogPsd,
        t => return Err(Error::Format(format!("unknown feature tag {t}"))),
    };
    let context = ContextConfig { p: r.u32()? };
    let k = r.u32()?;
    let norm_stats = NormStats {
        mean: r.f64s(k)?,
        std: r.f64s(k)?,
    };
    let target_scaler = if r.flag()? {
        Some(TargetScaler {
            mean_hz: r.f64()?,
            std_hz: r.f64()?,
        })
    } else {
        None
    };
    let quantizer = if r.flag()? {
        Some(Quantizer {
            n_states: r.u32()?,
            f_min_hz: r.f64()?,
            f_max_hz: r.f64()?,
            scale: match r.u8()? {
                0 => QuantScale::Log,
                1 => QuantScale::Linear,
                t => return Err(Error::Format(format!("unknown quantiser scale {t}"))),
            },
        })
    } else {
        None
    };
    let hmm = if r.flag()? {
        let u = r.u32()?;
        Some(HmmParams {
            log_prior: r.f64s(u)?,
            log_trans: r.matrix()?,
        })
    } else {
        None
    };
    let network = match r.u8()? {
        0 => {
            let n = r.u32()?;
            let layers = (0..n).map(|_| r.dense()).collect::<Result<Vec<_>>>()?;
            Network::Dense(FeedForwardNet { layers })
        }
        1 => {
            let steps = r.u32()?;
            let n = r.u32()?;
            let layers = (0..n)
                .map(|_| {
                    Ok(RecurrentLayer {
                        w: r.matrix()?,
                        h: r.matrix()?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let head = r.dense()?;
            Network::Recurrent(RecurrentEncoder {
                layers,
                head,
                steps,
            })
        }
        t => return Err(Error::Format(format!("unknown network tag {t}"))),
    };
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after model",
            bytes.len() - r.pos
        )));
    }
    let model = TrackerModel {
        kind,
        sample_rate_hz,
        framing,
        feature_kind,
        context,
        norm_stats,
        target_scaler,
        quantizer,
        hmm,
        network,
    };
    model
        .validate()
        .map_err(|e| Error::Format(format!("inconsistent model: {e}")))?;
    Ok(model)
}

pub fn save_model(model: &TrackerModel, path: &Path) -> Result<()> {
    fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<TrackerModel> {
    decode_model(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Loads a model and refuses one of a different kind.
pub fn load_model_expecting(path: &Path, kind: TrackerKind) -> Result<TrackerModel> {
    let model = load_model(path)?;
    if model.kind != kind {
        return Err(Error::ModelMismatch(format!(
            "{} holds a {} model, expected {kind}",
            path.display(),
            model.kind
        )));
    }
    Ok(model)
}
