//! YIN-style autocorrelation baseline.
//!
//! Frames share the trackers' grid (same centres, hop and trims), but each
//! frame is analysed over its own window of `window_s`, centred on the frame
//! centre and shifted inward at the signal edges, so low F0 still fits two
//! periods when the framing uses short frames.

use serde::{Deserialize, Serialize};

use crate::dsp::FramingConfig;
use crate::error::{Error, Result};
use crate::signal_io::{F0Contour, Waveform};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct YinConfig {
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    /// Dip threshold on the cumulative-mean-normalised difference.
    pub threshold: f64,
    /// Frames whose chosen normalised difference exceeds this are unvoiced.
    pub unvoiced_threshold: f64,
    pub framing: FramingConfig,
    /// Analysis window per frame; must span two periods of `f_min_hz`.
    pub window_s: f64,
}

impl Default for YinConfig {
    fn default() -> Self {
        YinConfig {
            f_min_hz: 60.0,
            f_max_hz: 400.0,
            threshold: 0.1,
            unvoiced_threshold: 0.5,
            framing: FramingConfig::default(),
            window_s: 0.04,
        }
    }
}

/// Lag bounds and window length in samples at one sample rate.
#[derive(Debug, Clone, Copy)]
struct Lags {
    min: usize,
    max: usize,
    window: usize,
}

impl YinConfig {
    fn lags(&self, sample_rate_hz: u32) -> Result<Lags> {
        let fs = f64::from(sample_rate_hz);
        if !(self.f_min_hz > 0.0 && self.f_min_hz < self.f_max_hz && self.f_max_hz < fs / 2.0) {
            return Err(Error::Parameter(format!(
                "need 0 < f_min < f_max < {} Hz, got [{}, {}]",
                fs / 2.0,
                self.f_min_hz,
                self.f_max_hz
            )));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Parameter(format!(
                "threshold {} not in (0, 1)",
                self.threshold
            )));
        }
        if !(self.unvoiced_threshold > 0.0) {
            return Err(Error::Parameter(
                "unvoiced threshold must be positive".into(),
            ));
        }
        self.framing.validate(sample_rate_hz)?;
        let min = ((fs / self.f_max_hz).floor() as usize).max(2);
        let max = (fs / self.f_min_hz).ceil() as usize;
        let window = (self.window_s * fs).round() as usize;
        if window < 2 * max {
            return Err(Error::Parameter(format!(
                "{window}-sample window cannot hold two periods of {} Hz ({} samples)",
                self.f_min_hz,
                2 * max
            )));
        }
        Ok(Lags { min, max, window })
    }

    pub fn validate(&self, sample_rate_hz: u32) -> Result<()> {
        self.lags(sample_rate_hz).map(|_| ())
    }
}

/// Cumulative-mean-normalised difference `d'(tau)` for `tau = 0..=max_lag`
/// over a window of `x`; the integration length is `x.len() - max_lag`.
pub fn cmnd(x: &[f64], max_lag: usize) -> Vec<f64> {
    let w = x.len() - max_lag;
    let mut out = vec![1.0; max_lag + 1];
    let mut running = 0.0;
    for tau in 1..=max_lag {
        let d: f64 = x[..w]
            .iter()
            .zip(&x[tau..tau + w])
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        running += d;
        out[tau] = if running > 0.0 {
            d * tau as f64 / running
        } else {
            1.0
        };
    }
    out
}

/// Interpolated period in samples for one analysis window, or `None` when
/// the window is unvoiced.
fn frame_period(x: &[f64], lags: &Lags, cfg: &YinConfig) -> Option<f64> {
    let d = cmnd(x, lags.max);
    let range = lags.min..=lags.max;
    let mut tau = None;
    for t in range.clone() {
        if d[t] < cfg.threshold {
            // Walk to the bottom of the dip.
            let mut b = t;
            while b < lags.max && d[b + 1] < d[b] {
                b += 1;
            }
            tau = Some(b);
            break;
        }
    }
    let tau = tau
        .unwrap_or_else(|| range.fold(lags.min, |best, t| if d[t] < d[best] { t } else { best }));
    if d[tau] > cfg.unvoiced_threshold {
        return None;
    }
    let mut period = tau as f64;
    if tau < lags.max {
        let (a, b, c) = (d[tau - 1], d[tau], d[tau + 1]);
        let denom = a - 2.0 * b + c;
        if denom > 0.0 {
            period += (0.5 * (a - c) / denom).clamp(-1.0, 1.0);
        }
    }
    Some(period)
}

pub fn yin_track(w: &Waveform, cfg: &YinConfig) -> Result<F0Contour> {
    let fs = w.sample_rate_hz;
    let lags = cfg.lags(fs)?;
    let framing = &cfg.framing;
    let hop_s = framing.hop_s_at(fs);
    let offset_s = framing.offset_s(fs);
    let frame_len = framing.frame_len_samples(fs);
    let hop = framing.hop_samples(fs);
    let total = framing.total_frames(w.len(), fs);
    if total == 0 {
        return Err(Error::DegenerateInput(format!(
            "waveform of {} samples is shorter than one {frame_len}-sample frame",
            w.len()
        )));
    }
    if w.len() < lags.window {
        return Err(Error::DegenerateInput(format!(
            "waveform of {} samples is shorter than the {}-sample analysis window",
            w.len(),
            lags.window
        )));
    }
    let trims = framing.head_trim_frames + framing.tail_trim_frames;
    if trims >= total {
        log::warn!("trims of {trims} frames consume all {total} frames");
        return F0Contour::new(Vec::new(), hop_s, offset_s);
    }
    let fsf = f64::from(fs);
    let values: Vec<f64> = (framing.head_trim_frames..total - framing.tail_trim_frames)
        .map(|j| {
            let centre = j * hop + frame_len / 2;
            let start = centre
                .saturating_sub(lags.window / 2)
                .min(w.len() - lags.window);
            let x = &w.samples[start..start + lags.window];
            frame_period(x, &lags, cfg).map_or(0.0, |p| (fsf / p).clamp(cfg.f_min_hz, cfg.f_max_hz))
        })
        .collect();
    F0Contour::from_values(&values, hop_s, offset_s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use std::f64::consts::TAU;

    fn untrimmed() -> YinConfig {
        YinConfig {
            framing: FramingConfig::untrimmed(),
            ..Default::default()
        }
    }

    fn tone(parts: &[(f64, f64)], seconds: f64) -> Waveform {
        let fs = 16_000.0;
        let n = (seconds * fs) as usize;
        let samples = (0..n)
            .map(|i| {
                parts
                    .iter()
                    .map(|(f, a)| a * (TAU * f * i as f64 / fs).cos())
                    .sum()
            })
            .collect();
        Waveform::new(samples, 16_000).unwrap()
    }

    #[test]
    fn clean_tone_is_tracked_within_one_percent() {
        let c = yin_track(&tone(&[(220.0, 0.5)], 1.0), &untrimmed()).unwrap();
        assert_eq!(c.n_voiced(), c.len());
        assert!(c.values().iter().all(|f| (f - 220.0).abs() < 2.2));
    }

    #[test]
    fn octave_content_keeps_the_fundamental() {
        let c = yin_track(&tone(&[(100.0, 0.3), (200.0, 0.9)], 0.5), &untrimmed()).unwrap();
        assert!(
            c.values().iter().all(|f| (f - 100.0).abs() < 2.0),
            "{:?}",
            &c.values()[..5]
        );
    }

    #[test]
    fn white_noise_is_mostly_unvoiced() {
        let mut rng = crate::rng::rng_for(3, "yin-noise");
        let samples = (0..16_000).map(|_| rng.random_range(-0.5..0.5)).collect();
        let c = yin_track(&Waveform::new(samples, 16_000).unwrap(), &untrimmed()).unwrap();
        assert!((c.len() - c.n_voiced()) as f64 >= 0.8 * c.len() as f64);
    }

    #[test]
    fn silence_is_unvoiced_and_outputs_stay_in_range() {
        let c = yin_track(
            &Waveform::new(vec![0.0; 8000], 16_000).unwrap(),
            &untrimmed(),
        )
        .unwrap();
        assert_eq!(c.n_voiced(), 0);
        let cfg = untrimmed();
        let c = yin_track(&tone(&[(45.0, 0.5), (430.0, 0.4)], 0.5), &cfg).unwrap();
        assert!(c
            .values()
            .iter()
            .all(|&f| f == 0.0 || (cfg.f_min_hz..=cfg.f_max_hz).contains(&f)));
    }

    #[test]
    fn short_window_is_a_parameter_error() {
        let cfg = YinConfig {
            window_s: 0.025,
            ..untrimmed()
        };
        assert!(matches!(
            yin_track(&tone(&[(220.0, 0.5)], 0.5), &cfg),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn grid_matches_framing() {
        let cfg = untrimmed();
        let w = tone(&[(150.0, 0.5)], 0.5);
        let c = yin_track(&w, &cfg).unwrap();
        assert_eq!(c.len(), cfg.framing.total_frames(w.len(), 16_000));
        assert_eq!(c.hop_s, 0.005);
        assert_eq!(c.offset_s, 0.0125);
    }

    #[test]
    fn interpolated_lag_stays_near_discrete_minimum() {
        let cfg = untrimmed();
        let lags = cfg.lags(16_000).unwrap();
        for f in [97.3, 151.0, 233.3] {
            let w = tone(&[(f, 0.5)], 0.05);
            let x = &w.samples[..lags.window];
            let p = frame_period(x, &lags, &cfg).unwrap();
            let d = cmnd(x, lags.max);
            let mut bottom = (lags.min..=lags.max)
                .find(|&t| d[t] < cfg.threshold)
                .unwrap();
            while d[bottom + 1] < d[bottom] {
                bottom += 1;
            }
            assert!((p - bottom as f64).abs() <= 1.0, "f={f}: {p} vs {bottom}");
            assert!((p - 16_000.0 / f).abs() < 0.01 * 16_000.0 / f);
        }
    }
}
