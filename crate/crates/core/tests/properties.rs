//! Invariants checked over random inputs.

use f0track::eval::{score_utterance, EvalConfig, FpeMoments};
use f0track::features::Quantizer;
use f0track::models::{align_ground_truth, path_score, viterbi_decode_scored, HmmParams};
use f0track::signal_io::{mix_noise_components, NoiseSpec};
use f0track::{F0Contour, Waveform};
use ndarray::Array2;
use proptest::prelude::*;

fn log_normalise(w: &[f64]) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    w.iter().map(|v| (v / s).ln()).collect()
}

/// Random HMM with `u` states and `frames` posterior rows.
fn hmm_instance() -> impl Strategy<Value = (Array2<f64>, HmmParams)> {
    (1usize..=5, 1usize..=8).prop_flat_map(|(u, frames)| {
        (
            prop::collection::vec(0.01f64..1.0, frames * u),
            prop::collection::vec(0.01f64..1.0, u),
            prop::collection::vec(0.01f64..1.0, u * u),
        )
            .prop_map(move |(post, prior, trans)| {
                let mut p = Array2::from_shape_vec((frames, u), post).unwrap();
                for mut row in p.rows_mut() {
                    let s = row.sum();
                    row.mapv_inplace(|v| v / s);
                }
                let log_trans = Array2::from_shape_vec(
                    (u, u),
                    trans.chunks(u).flat_map(log_normalise).collect(),
                )
                .unwrap();
                (
                    p,
                    HmmParams {
                        log_prior: log_normalise(&prior),
                        log_trans,
                    },
                )
            })
    })
}

proptest! {
    #[test]
    fn viterbi_path_beats_any_other_path((post, hmm) in hmm_instance(), seed in any::<u64>()) {
        let (path, score) = viterbi_decode_scored(post.view(), &hmm).unwrap();
        prop_assert!((path_score(post.view(), &hmm, &path).unwrap() - score).abs() < 1e-9);
        let u = hmm.n_states() as u64;
        let other: Vec<usize> = (0..post.nrows())
            .map(|i| ((seed.rotate_left(7 * i as u32) ^ i as u64) % u) as usize)
            .collect();
        prop_assert!(path_score(post.view(), &hmm, &other).unwrap() <= score + 1e-9);
    }

    #[test]
    fn quantiser_is_monotone_and_nearest(a in 1.0f64..1000.0, b in 1.0f64..1000.0) {
        let q = Quantizer::default();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(q.quantize(lo) <= q.quantize(hi));
        let s = q.quantize(a);
        prop_assert!((1..q.n_states).contains(&s));
        for t in 1..q.n_states {
            prop_assert!((a - q.center(s)).abs() <= (a - q.center(t)).abs() + 1e-9);
        }
    }

    #[test]
    fn pooled_moments_equal_moments_of_the_union(
        a in prop::collection::vec(0.0f64..20.0, 0..50),
        b in prop::collection::vec(0.0f64..20.0, 0..50),
    ) {
        let merged = FpeMoments::from_errors(&a).merge(&FpeMoments::from_errors(&b));
        let all: Vec<f64> = a.iter().chain(&b).copied().collect();
        let direct = FpeMoments::from_errors(&all);
        prop_assert_eq!(merged.n, direct.n);
        prop_assert!((merged.mean - direct.mean).abs() < 1e-9);
        prop_assert!((merged.std() - direct.std()).abs() < 1e-9);
    }

    #[test]
    fn perfect_estimate_scores_zero(values in prop::collection::vec(prop_oneof![Just(0.0), 60.0f64..400.0], 1..100)) {
        let c = F0Contour::from_values(&values, 0.005, 0.0125).unwrap();
        let s = score_utterance(&c, &c, &EvalConfig::default()).unwrap();
        prop_assert_eq!(s.n_gpe, 0);
        prop_assert_eq!(s.n_fpe(), s.n_voiced);
        prop_assert_eq!(s.fpe_std_hz(), 0.0);
    }

    #[test]
    fn alignment_onto_own_grid_is_identity(values in prop::collection::vec(prop_oneof![Just(0.0), 60.0f64..400.0], 1..100)) {
        let c = F0Contour::from_values(&values, 0.005, 0.0125).unwrap();
        prop_assert_eq!(align_ground_truth(&c, c.hop_s, c.offset_s, c.len()).unwrap(), c);
    }

    #[test]
    fn csv_round_trip_preserves_contours(values in prop::collection::vec(prop_oneof![Just(0.0), 60.0f64..400.0], 1..100)) {
        let c = F0Contour::from_values(&values, 0.005, 0.0125).unwrap();
        let back = F0Contour::parse_csv(&c.to_csv(), 0.005).unwrap();
        prop_assert_eq!(back.values(), c.values());
        prop_assert!((back.offset_s - c.offset_s).abs() < 1e-6);
    }

    #[test]
    fn mixing_hits_the_requested_snr(
        snr in -20.0f64..30.0,
        speech in prop::collection::vec(-1.0f64..1.0, 64..512),
        noise in prop::collection::vec(-1.0f64..1.0, 16..1024),
        seed in any::<u64>(),
    ) {
        prop_assume!(speech.iter().any(|&x| x.abs() > 1e-3));
        prop_assume!(noise.iter().filter(|&&x| x.abs() > 1e-3).count() > noise.len() / 2);
        let s = Waveform::new(speech, 16_000).unwrap();
        let spec = NoiseSpec { noise: Waveform::new(noise, 16_000).unwrap(), snr_db: snr };
        let m = mix_noise_components(&s, &spec, seed).unwrap();
        let ps: f64 = s.samples.iter().map(|x| x * x).sum();
        let pn: f64 = m.noise_component.samples.iter().map(|x| x * x).sum();
        prop_assert!((10.0 * (ps / pn).log10() - snr).abs() < 1e-6);
    }
}
