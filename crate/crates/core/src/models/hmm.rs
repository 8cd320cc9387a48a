use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::features::Quantizer;
use crate::signal_io::F0Contour;

/// Priors below this are raised to it before taking logs.
pub const PRIOR_FLOOR: f64 = 1e-8;

/// State priors and bigram transitions in log space.
#[derive(Debug, Clone, PartialEq)]
pub struct HmmParams {
    pub log_prior: Vec<f64>,
    /// `log_trans[[u, v]]` is the log probability of moving from `u` to `v`.
    pub log_trans: Array2<f64>,
}

impl HmmParams {
    pub fn n_states(&self) -> usize {
        self.log_prior.len()
    }

    /// Add-one smoothed prior and transition estimates from quantised
    /// contours. Transitions are counted within each contour only.
    pub fn estimate<'a>(
        contours: impl IntoIterator<Item = &'a F0Contour>,
        quantizer: &Quantizer,
    ) -> Result<Self> {
        quantizer.validate()?;
        let u = quantizer.n_states;
        let mut prior = vec![1.0f64; u];
        let mut trans = Array2::<f64>::from_elem((u, u), 1.0);
        for contour in contours {
            let mut prev: Option<(usize, usize)> = None;
            for f in &contour.frames {
                let s = quantizer.quantize(f.f0_hz);
                prior[s] += 1.0;
                if let Some((idx, p)) = prev {
                    if f.frame_index == idx + 1 {
                        trans[[p, s]] += 1.0;
                    }
                }
                prev = Some((f.frame_index, s));
            }
        }
        let total: f64 = prior.iter().sum();
        let log_prior = prior.iter().map(|c| (c / total).ln()).collect();
        for mut row in trans.rows_mut() {
            let sum = row.sum();
            row.mapv_inplace(|c| (c / sum).ln());
        }
        Ok(HmmParams {
            log_prior,
            log_trans: trans,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let u = self.n_states();
        if u == 0 || self.log_trans.dim() != (u, u) {
            return Err(Error::Dimension(format!(
                "{u} priors with a {:?} transition matrix",
                self.log_trans.dim()
            )));
        }
        let prior_sum: f64 = self.log_prior.iter().map(|l| l.exp()).sum();
        if (prior_sum - 1.0).abs() > 1e-9 {
            return Err(Error::Parameter(format!("priors sum to {prior_sum}")));
        }
        for (r, row) in self.log_trans.rows().into_iter().enumerate() {
            let s: f64 = row.iter().map(|l| l.exp()).sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::Parameter(format!("transition row {r} sums to {s}")));
            }
        }
        Ok(())
    }
}

/// Bayes-scaled log emission: `log P(s|x) - log P(s)`.
#[inline]
pub fn scaled_emission(posterior: f64, log_prior: f64) -> f64 {
    posterior.max(f64::MIN_POSITIVE).ln() - log_prior.max(PRIOR_FLOOR.ln())
}

fn check_shapes(post: ArrayView2<f64>, hmm: &HmmParams) -> Result<()> {
    if post.ncols() != hmm.n_states() || hmm.log_trans.dim() != (hmm.n_states(), hmm.n_states()) {
        return Err(Error::Dimension(format!(
            "posteriors have {} states, HMM has {}",
            post.ncols(),
            hmm.n_states()
        )));
    }
    Ok(())
}

/// Log score of `path`: scaled emissions plus transitions. There is no
/// initial-state term.
pub fn path_score(post: ArrayView2<f64>, hmm: &HmmParams, path: &[usize]) -> Result<f64> {
    check_shapes(post, hmm)?;
    if path.len() != post.nrows() {
        return Err(Error::Dimension(format!(
            "path of {} for {} frames",
            path.len(),
            post.nrows()
        )));
    }
    let mut score = 0.0;
    for (i, &s) in path.iter().enumerate() {
        if s >= hmm.n_states() {
            return Err(Error::Index {
                index: s,
                len: hmm.n_states(),
            });
        }
        score += scaled_emission(post[[i, s]], hmm.log_prior[s]);
        if i > 0 {
            score += hmm.log_trans[[path[i - 1], s]];
        }
    }
    Ok(score)
}

/// Best path and its score. Ties go to the lower state id.
pub fn viterbi_decode_scored(post: ArrayView2<f64>, hmm: &HmmParams) -> Result<(Vec<usize>, f64)> {
    check_shapes(post, hmm)?;
    let (n_frames, u) = post.dim();
    if n_frames == 0 {
        return Ok((Vec::new(), 0.0));
    }
    let emit = |i: usize, s: usize| scaled_emission(post[[i, s]], hmm.log_prior[s]);
    let mut delta: Vec<f64> = (0..u).map(|s| emit(0, s)).collect();
    let mut back = Array2::<usize>::zeros((n_frames, u));
    let mut next = vec![0.0; u];
    for i in 1..n_frames {
        for v in 0..u {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for (p, &d) in delta.iter().enumerate() {
                let cand = d + hmm.log_trans[[p, v]];
                if cand > best {
                    best = cand;
                    arg = p;
                }
            }
            next[v] = best + emit(i, v);
            back[[i, v]] = arg;
        }
        std::mem::swap(&mut delta, &mut next);
    }
    let mut last = 0;
    for s in 1..u {
        if delta[s] > delta[last] {
            last = s;
        }
    }
    let score = delta[last];
    let mut path = vec![0; n_frames];
    path[n_frames - 1] = last;
    for i in (1..n_frames).rev() {
        path[i - 1] = back[[i, path[i]]];
    }
    Ok((path, score))
}

pub fn viterbi_decode(post: ArrayView2<f64>, hmm: &HmmParams) -> Result<Vec<usize>> {
    Ok(viterbi_decode_scored(post, hmm)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn uniform_hmm(u: usize) -> HmmParams {
        HmmParams {
            log_prior: vec![(1.0 / u as f64).ln(); u],
            log_trans: Array2::from_elem((u, u), (1.0 / u as f64).ln()),
        }
    }

    #[test]
    fn single_frame_is_argmax_of_scaled_scores() {
        let mut hmm = uniform_hmm(3);
        hmm.log_prior = vec![0.7f64.ln(), 0.2f64.ln(), 0.1f64.ln()];
        // Scaled: 0.5/0.7, 0.3/0.2, 0.2/0.1 -> state 2 wins.
        let post = array![[0.5, 0.3, 0.2]];
        assert_eq!(viterbi_decode(post.view(), &hmm).unwrap(), vec![2]);
    }

    #[test]
    fn ties_go_to_lower_state() {
        let hmm = uniform_hmm(3);
        let post = Array2::from_elem((4, 3), 1.0 / 3.0);
        assert_eq!(viterbi_decode(post.view(), &hmm).unwrap(), vec![0; 4]);
    }

    #[test]
    fn sticky_transitions_give_constant_path() {
        let u = 3;
        let stay: f64 = 1.0 - 1e-9;
        let log_trans = Array2::from_shape_fn((u, u), |(a, b)| {
            if a == b {
                stay.ln()
            } else {
                ((1.0 - stay) / (u - 1) as f64).ln()
            }
        });
        let hmm = HmmParams {
            log_prior: vec![(1.0 / 3.0f64).ln(); 3],
            log_trans,
        };
        let post = array![
            [0.6, 0.3, 0.1],
            [0.1, 0.5, 0.4],
            [0.2, 0.5, 0.3],
            [0.3, 0.4, 0.3]
        ];
        let path = viterbi_decode(post.view(), &hmm).unwrap();
        // Aggregate log posteriors per constant path: state 1 is best.
        assert_eq!(path, vec![1; 4]);
    }

    #[test]
    fn decoded_score_matches_path_score() {
        let hmm = HmmParams {
            log_prior: vec![0.5f64.ln(), 0.3f64.ln(), 0.2f64.ln()],
            log_trans: array![[0.8, 0.1, 0.1], [0.2, 0.6, 0.2], [0.3, 0.3, 0.4]].mapv(f64::ln),
        };
        let post = array![[0.2, 0.5, 0.3], [0.7, 0.2, 0.1], [0.1, 0.1, 0.8]];
        let (path, score) = viterbi_decode_scored(post.view(), &hmm).unwrap();
        assert!((path_score(post.view(), &hmm, &path).unwrap() - score).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let hmm = uniform_hmm(3);
        let post = Array2::from_elem((2, 4), 0.25);
        assert!(matches!(
            viterbi_decode(post.view(), &hmm),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn estimate_is_stochastic_and_smoothed() {
        let q = Quantizer::default();
        let c = F0Contour::from_values(&[0.0, 100.0, 100.0, 120.0, 0.0], 0.005, 0.0125).unwrap();
        let hmm = HmmParams::estimate([&c], &q).unwrap();
        hmm.validate().unwrap();
        assert_eq!(hmm.n_states(), 68);
        assert!(hmm.log_trans.iter().all(|l| l.is_finite()));
        let s100 = q.quantize(100.0);
        // Prior counts: unvoiced 2+1, s100 2+1, others 1; total 68 + 5.
        assert!((hmm.log_prior[s100] - (3.0f64 / 73.0).ln()).abs() < 1e-12);
        assert!((hmm.log_prior[1] - (1.0f64 / 73.0).ln()).abs() < 1e-12);
        // Row s100: self 1+1, to s120 1+1, total 68 + 2.
        assert!((hmm.log_trans[[s100, s100]] - (2.0f64 / 70.0).ln()).abs() < 1e-12);
    }
}
