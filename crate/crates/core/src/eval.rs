//! Gross and fine pitch error scoring and per-condition aggregation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal_io::F0Contour;

/// Contours whose offsets differ by more than this are not aligned. Matches
/// the microsecond resolution of the contour CSV.
pub const OFFSET_TOLERANCE_S: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub gpe_period_threshold_s: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            gpe_period_threshold_s: 0.000625,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gpe_period_threshold_s > 0.0 && self.gpe_period_threshold_s.is_finite()) {
            return Err(Error::Parameter(format!(
                "GPE threshold {} must be positive",
                self.gpe_period_threshold_s
            )));
        }
        Ok(())
    }
}

/// Count, mean and sum of squared deviations of fine pitch errors.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FpeMoments {
    pub n: usize,
    pub mean: f64,
    pub m2: f64,
}

impl FpeMoments {
    /// Two-pass moments of `errors`.
    pub fn from_errors(errors: &[f64]) -> Self {
        if errors.is_empty() {
            return FpeMoments::default();
        }
        let n = errors.len();
        let mean = errors.iter().sum::<f64>() / n as f64;
        let m2 = errors.iter().map(|e| (e - mean) * (e - mean)).sum();
        FpeMoments { n, mean, m2 }
    }

    /// Pooled moments of two disjoint sets.
    pub fn merge(&self, other: &FpeMoments) -> FpeMoments {
        if self.n == 0 {
            return *other;
        }
        if other.n == 0 {
            return *self;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let (na, nb) = (self.n as f64, other.n as f64);
        FpeMoments {
            n,
            mean: self.mean + delta * nb / n as f64,
            m2: self.m2 + other.m2 + delta * delta * na * nb / n as f64,
        }
    }

    /// Population standard deviation; 0 for an empty set.
    pub fn std(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.m2 / self.n as f64).sqrt()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Score {
    pub n_voiced: usize,
    pub n_gpe: usize,
    pub fpe: FpeMoments,
}

impl Score {
    pub fn n_fpe(&self) -> usize {
        self.fpe.n
    }

    /// GPE frames over reference-voiced frames; 0 when nothing is voiced.
    pub fn gpe_rate(&self) -> f64 {
        if self.n_voiced == 0 {
            0.0
        } else {
            self.n_gpe as f64 / self.n_voiced as f64
        }
    }

    pub fn fpe_mean_hz(&self) -> f64 {
        self.fpe.mean
    }

    pub fn fpe_std_hz(&self) -> f64 {
        self.fpe.std()
    }

    pub fn merge(&self, other: &Score) -> Score {
        Score {
            n_voiced: self.n_voiced + other.n_voiced,
            n_gpe: self.n_gpe + other.n_gpe,
            fpe: self.fpe.merge(&other.fpe),
        }
    }
}

/// Whether an estimate at a reference-voiced frame is a gross error. An
/// unvoiced or non-positive estimate always is.
pub fn is_gross_error(est_hz: f64, ref_hz: f64, threshold_s: f64) -> bool {
    if !(est_hz > 0.0) {
        return true;
    }
    (1.0 / est_hz - 1.0 / ref_hz).abs() > threshold_s
}

pub fn check_alignment(est: &F0Contour, reference: &F0Contour) -> Result<()> {
    if (est.hop_s - reference.hop_s).abs() > 1e-9 {
        return Err(Error::Alignment(format!(
            "estimate hop {} s, reference hop {} s",
            est.hop_s, reference.hop_s
        )));
    }
    if (est.offset_s - reference.offset_s).abs() > OFFSET_TOLERANCE_S {
        return Err(Error::Alignment(format!(
            "estimate offset {} s, reference offset {} s",
            est.offset_s, reference.offset_s
        )));
    }
    Ok(())
}

/// Scores `est` on the reference-voiced frames of `reference`. A voiced
/// reference frame missing from the estimate counts as gross.
pub fn score_utterance(est: &F0Contour, reference: &F0Contour, cfg: &EvalConfig) -> Result<Score> {
    cfg.validate()?;
    check_alignment(est, reference)?;
    let mut n_voiced = 0;
    let mut n_gpe = 0;
    let mut errors = Vec::new();
    for f in reference.frames.iter().filter(|f| f.voiced) {
        n_voiced += 1;
        let e = est.f0_at(f.frame_index).unwrap_or(0.0);
        if is_gross_error(e, f.f0_hz, cfg.gpe_period_threshold_s) {
            n_gpe += 1;
        } else {
            errors.push((e - f.f0_hz).abs());
        }
    }
    Ok(Score {
        n_voiced,
        n_gpe,
        fpe: FpeMoments::from_errors(&errors),
    })
}

/// Grouping key of a score row. `snr_db` is `None` for clean audio.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupKey {
    pub tracker: String,
    pub noise: String,
    pub snr_db: Option<f64>,
}

impl GroupKey {
    fn sort_key(&self) -> (String, String, i64) {
        // SNRs on a millidecibel grid order and group exactly.
        let snr = self
            .snr_db
            .map_or(i64::MAX, |s| (s * 1000.0).round() as i64);
        (self.tracker.clone(), self.noise.clone(), snr)
    }

    fn snr_field(&self) -> String {
        self.snr_db.map_or(String::new(), |s| s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub utterance: String,
    pub key: GroupKey,
    pub score: Score,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub key: GroupKey,
    /// Counts and FPE moments pooled over the group's frames.
    pub pooled: Score,
    pub n_utterances: usize,
    /// Unweighted mean of per-utterance GPE rates (utterances with voiced
    /// frames only).
    pub mean_utterance_gpe_rate: f64,
}

/// Pools rows per (tracker, noise, SNR). Groups without voiced frames are
/// omitted with a warning. Output is sorted by key.
pub fn aggregate(rows: &[ScoreRow]) -> Vec<ReportRow> {
    let mut groups: BTreeMap<(String, String, i64), Vec<&ScoreRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(r.key.sort_key()).or_default().push(r);
    }
    groups
        .into_values()
        .filter_map(|members| {
            let key = members[0].key.clone();
            let pooled = members
                .iter()
                .fold(Score::default(), |acc, r| acc.merge(&r.score));
            if pooled.n_voiced == 0 {
                log::warn!(
                    "group {}/{}/{} has no voiced frames; omitted",
                    key.tracker,
                    key.noise,
                    key.snr_field()
                );
                return None;
            }
            let rates: Vec<f64> = members
                .iter()
                .filter(|r| r.score.n_voiced > 0)
                .map(|r| r.score.gpe_rate())
                .collect();
            Some(ReportRow {
                key,
                pooled,
                n_utterances: members.len(),
                mean_utterance_gpe_rate: rates.iter().sum::<f64>() / rates.len() as f64,
            })
        })
        .collect()
}

pub const REPORT_HEADER: &str =
    "tracker,noise,snr_db,n_voiced,n_gpe,gpe_rate,fpe_mean_hz,fpe_std_hz";

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.key.tracker,
            r.key.noise,
            r.key.snr_field(),
            r.pooled.n_voiced,
            r.pooled.n_gpe,
            r.pooled.gpe_rate(),
            r.pooled.fpe_mean_hz(),
            r.pooled.fpe_std_hz()
        );
    }
    out
}

pub fn utterance_csv(rows: &[ScoreRow]) -> String {
    let mut out = String::from(
        "tracker,noise,snr_db,utterance,n_voiced,n_gpe,n_fpe,gpe_rate,fpe_mean_hz,fpe_std_hz\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.key.tracker,
            r.key.noise,
            r.key.snr_field(),
            r.utterance,
            r.score.n_voiced,
            r.score.n_gpe,
            r.score.n_fpe(),
            r.score.gpe_rate(),
            r.score.fpe_mean_hz(),
            r.score.fpe_std_hz()
        );
    }
    out
}
