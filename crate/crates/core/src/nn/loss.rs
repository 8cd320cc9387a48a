use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Row-wise numerically stable softmax.
pub fn softmax_rows(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} targets",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::DegenerateInput("MSE over an empty batch".into()));
    }
    let m = pred.len() as f64;
    let diff: Vec<f64> = pred.iter().zip(target).map(|(p, t)| p - t).collect();
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / m;
    let grad = diff.iter().map(|d| 2.0 * d / m).collect();
    Ok((loss, grad))
}

/// Mean negative log-probability of the target states, with the gradient at
/// the softmax logits `(probs - onehot) / M`.
pub fn cross_entropy_loss(probs: ArrayView2<f64>, targets: &[usize]) -> Result<(f64, Array2<f64>)> {
    let (m, u) = probs.dim();
    if m != targets.len() {
        return Err(Error::Dimension(format!(
            "{m} rows for {} targets",
            targets.len()
        )));
    }
    if m == 0 {
        return Err(Error::DegenerateInput(
            "cross-entropy over an empty batch".into(),
        ));
    }
    for (i, row) in probs.rows().into_iter().enumerate() {
        if (row.sum() - 1.0).abs() > 1e-6 {
            return Err(Error::Parameter(format!(
                "probability row {i} does not sum to 1"
            )));
        }
    }
    let mut grad = probs.to_owned();
    let mut loss = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        if t >= u {
            return Err(Error::Index { index: t, len: u });
        }
        loss -= probs[[i, t]].max(f64::MIN_POSITIVE).ln();
        grad[[i, t]] -= 1.0;
    }
    grad.mapv_inplace(|g| g / m as f64);
    Ok((loss / m as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn mse_cases() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap().0, 0.0);
        let (l, g) = mse_loss(&[3.0], &[1.0]).unwrap();
        assert_eq!((l, g[0]), (4.0, 4.0));
        assert!(matches!(mse_loss(&[], &[]), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn mse_gradient_matches_central_difference() {
        let pred = [0.3, -1.2, 2.5, 0.0];
        let target = [0.1, 0.4, 2.0, -0.7];
        let (_, g) = mse_loss(&pred, &target).unwrap();
        let h = 1e-4;
        for i in 0..pred.len() {
            let mut p = pred;
            p[i] += h;
            let up = mse_loss(&p, &target).unwrap().0;
            p[i] -= 2.0 * h;
            let down = mse_loss(&p, &target).unwrap().0;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-6 * g[i].abs().max(1e-12), "i={i}");
        }
    }

    #[test]
    fn one_hot_probs_have_zero_loss() {
        let (l, _) = cross_entropy_loss(array![[0.0, 1.0, 0.0]].view(), &[1]).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn uniform_over_68_states() {
        let probs = Array2::from_elem((3, 68), 1.0 / 68.0);
        let (l, _) = cross_entropy_loss(probs.view(), &[0, 5, 67]).unwrap();
        assert!((l - 68f64.ln()).abs() < 1e-12);
        assert!((l - 4.2195).abs() < 1e-4);
    }

    #[test]
    fn cross_entropy_gradient_at_logits_matches_central_difference() {
        let logits = array![[0.2, -0.5, 1.1, 0.0], [1.5, 0.3, -0.2, -1.0]];
        let targets = [2usize, 0];
        let loss_of = |z: &Array2<f64>| {
            let mut p = z.clone();
            softmax_rows(&mut p);
            cross_entropy_loss(p.view(), &targets).unwrap().0
        };
        let mut p = logits.clone();
        softmax_rows(&mut p);
        let (_, g) = cross_entropy_loss(p.view(), &targets).unwrap();
        let h = 1e-4;
        for i in 0..2 {
            for j in 0..4 {
                let mut z = logits.clone();
                z[[i, j]] += h;
                let up = loss_of(&z);
                z[[i, j]] -= 2.0 * h;
                let down = loss_of(&z);
                let fd = (up - down) / (2.0 * h);
                assert!(
                    (fd - g[[i, j]]).abs() <= 1e-5 * g[[i, j]].abs().max(1e-3),
                    "({i},{j})"
                );
            }
        }
    }

    #[test]
    fn target_out_of_range() {
        let probs = Array2::from_elem((1, 4), 0.25);
        assert!(matches!(
            cross_entropy_loss(probs.view(), &[4]),
            Err(Error::Index { .. })
        ));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut z = array![[1000.0, 999.0, 990.0], [0.1, 0.2, 0.3]];
        softmax_rows(&mut z);
        for row in z.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }
}
