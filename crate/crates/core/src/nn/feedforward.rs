use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::features::{BatchTargets, DnnBatch};

use super::layers::{affine, check_finite, Activation, DenseLayer};
use super::loss::{cross_entropy_loss, mse_loss};
use super::optim::{Gradients, OptimizerKind, OptimizerState, TrainConfig};
use super::{Parameters, Targets};

/// Batch-norm statistics observed per layer in one training forward pass.
pub type BatchStats = Vec<Option<(Vec<f64>, Vec<f64>)>>;

/// How a training forward pass treats dropout.
pub enum ForwardMode<'a, R: Rng> {
    /// Batch statistics for batch norm, no dropout.
    Deterministic,
    /// Batch statistics plus inverted dropout on hidden outputs.
    Dropout { rate: f64, rng: &'a mut R },
}

/// Inverted-dropout mask: kept units are scaled by `1 / (1 - rate)`.
pub(crate) fn dropout_mask<R: Rng>(dim: (usize, usize), rate: f64, rng: &mut R) -> Array2<f64> {
    let keep = 1.0 - rate;
    Array2::from_shape_fn(dim, |_| {
        if rng.random::<f64>() < keep {
            1.0 / keep
        } else {
            0.0
        }
    })
}

/// Stack of dense layers; every layer but the last is hidden.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForwardNet {
    pub layers: Vec<DenseLayer>,
}

struct LayerTrace {
    input: Array2<f64>,
    /// Activation output before dropout.
    out: Array2<f64>,
    zhat: Option<Array2<f64>>,
    inv_std: Option<Vec<f64>>,
    mask: Option<Array2<f64>>,
}

impl FeedForwardNet {
    /// `sizes = [inputs, hidden..., outputs]`.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        batch_norm: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Parameter(
                "network needs at least input and output sizes".into(),
            ));
        }
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|l| {
                let last = l + 1 == n;
                let layer = DenseLayer::new(
                    sizes[l],
                    sizes[l + 1],
                    if last { output } else { hidden },
                    rng,
                );
                if batch_norm && !last {
                    layer.with_batch_norm()
                } else {
                    layer
                }
            })
            .collect();
        let net = FeedForwardNet { layers };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Parameter("network has no layers".into()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            check_finite("dense weights", &layer.weights)?;
            if layer.activation == Activation::Softmax && l + 1 != self.layers.len() {
                return Err(Error::Parameter(
                    "softmax is only allowed on the output layer".into(),
                ));
            }
            if l > 0 && layer.inputs() != self.layers[l - 1].units() {
                return Err(Error::Dimension(format!(
                    "layer {l} expects {} inputs, previous layer has {} units",
                    layer.inputs(),
                    self.layers[l - 1].units()
                )));
            }
            if let Some(bn) = &layer.batch_norm {
                if bn.units() != layer.units() {
                    return Err(Error::Dimension("batch norm width mismatch".into()));
                }
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("validated").units()
    }

    pub fn output_activation(&self) -> Activation {
        self.layers.last().expect("validated").activation
    }

    /// Inference-mode forward pass.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut a = self.layers[0].forward(x)?;
        for layer in &self.layers[1..] {
            a = layer.forward(a.view())?;
        }
        Ok(a)
    }

    /// Inference-mode loss (running batch-norm statistics, no dropout).
    pub fn loss(&self, x: ArrayView2<f64>, targets: Targets) -> Result<f64> {
        let out = self.forward(x)?;
        Ok(self.loss_and_output_grad(&out, targets)?.0)
    }

    /// Loss and gradient at the output layer's pre-activation.
    fn loss_and_output_grad(
        &self,
        out: &Array2<f64>,
        targets: Targets,
    ) -> Result<(f64, Array2<f64>)> {
        if targets.len() != out.nrows() {
            return Err(Error::Dimension(format!(
                "{} outputs for {} targets",
                out.nrows(),
                targets.len()
            )));
        }
        match (self.output_activation(), targets) {
            (Activation::Identity, Targets::Values(t)) if self.output_dim() == 1 => {
                let pred: Vec<f64> = out.column(0).to_vec();
                let (loss, g) = mse_loss(&pred, t)?;
                Ok((
                    loss,
                    Array2::from_shape_vec((g.len(), 1), g).expect("column"),
                ))
            }
            (Activation::Softmax, Targets::Classes(c)) => cross_entropy_loss(out.view(), c),
            (act, _) => Err(Error::ModelMismatch(format!(
                "{act:?} output head with {} units does not match the target kind",
                self.output_dim()
            ))),
        }
    }

    /// Training-mode forward and backward pass. Batch norm uses batch
    /// statistics; the parameters are not modified.
    pub fn compute_gradients<R: Rng>(
        &self,
        x: ArrayView2<f64>,
        targets: Targets,
        mode: ForwardMode<'_, R>,
    ) -> Result<(f64, Gradients, BatchStats)> {
        self.layers[0].check_input(x)?;
        if x.nrows() == 0 {
            return Err(Error::EmptyBatch("training batch has no rows".into()));
        }
        let (rate, mut rng) = match mode {
            ForwardMode::Deterministic => (0.0, None),
            ForwardMode::Dropout { rate, rng } => (rate, Some(rng)),
        };
        let n_layers = self.layers.len();
        let mut traces = Vec::with_capacity(n_layers);
        let mut stats: BatchStats = Vec::with_capacity(n_layers);
        let mut a = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = affine(&layer.weights, a.view());
            let (zhat, inv_std) = match &layer.batch_norm {
                Some(bn) => {
                    let (zhat, inv_std, mean, var) = bn.forward_train(&mut z);
                    stats.push(Some((mean, var)));
                    (Some(zhat), Some(inv_std))
                }
                None => {
                    stats.push(None);
                    (None, None)
                }
            };
            layer.activation.apply(&mut z);
            let out = z;
            let hidden = l + 1 < n_layers;
            let (next, mask) = match rng.as_deref_mut() {
                Some(rng) if hidden && rate > 0.0 => {
                    let mask = dropout_mask(out.dim(), rate, rng);
                    (&out * &mask, Some(mask))
                }
                _ => (out.clone(), None),
            };
            traces.push(LayerTrace {
                input: a,
                out,
                zhat,
                inv_std,
                mask,
            });
            a = next;
        }

        let (loss, mut delta) = self.loss_and_output_grad(&a, targets)?;
        if !loss.is_finite() {
            return Err(Error::Divergence(format!("non-finite loss {loss}")));
        }

        let mut grads: Vec<Vec<Vec<f64>>> = Vec::with_capacity(n_layers);
        for l in (0..n_layers).rev() {
            let layer = &self.layers[l];
            let trace = &traces[l];
            if l + 1 < n_layers {
                // delta currently holds dL/d(layer output after dropout)
                if let Some(mask) = &trace.mask {
                    delta *= mask;
                }
                layer.activation.backward(&trace.out, &mut delta);
            }
            let mut layer_grads = Vec::new();
            let dz = match (&layer.batch_norm, &trace.zhat, &trace.inv_std) {
                (Some(bn), Some(zhat), Some(inv_std)) => {
                    let m = delta.nrows() as f64;
                    let dgamma: Vec<f64> = (&delta * zhat).sum_axis(Axis(0)).to_vec();
                    let dbeta: Vec<f64> = delta.sum_axis(Axis(0)).to_vec();
                    let mut dzhat = delta.clone();
                    for mut row in dzhat.rows_mut() {
                        row.iter_mut().zip(&bn.gamma).for_each(|(d, g)| *d *= g);
                    }
                    let sum_d = dzhat.sum_axis(Axis(0));
                    let sum_dx = (&dzhat * zhat).sum_axis(Axis(0));
                    let mut dz = dzhat;
                    for (mut row, hrow) in dz.rows_mut().into_iter().zip(zhat.rows()) {
                        for j in 0..row.len() {
                            row[j] = inv_std[j] / m * (m * row[j] - sum_d[j] - hrow[j] * sum_dx[j]);
                        }
                    }
                    layer_grads.push(dgamma);
                    layer_grads.push(dbeta);
                    dz
                }
                _ => delta,
            };
            let mut dw = Array2::zeros(layer.weights.dim());
            dw.column_mut(0).assign(&dz.sum_axis(Axis(0)));
            dw.slice_mut(s![.., 1..]).assign(&dz.t().dot(&trace.input));
            layer_grads.insert(0, dw.iter().copied().collect());
            grads.push(layer_grads);
            delta = if l > 0 {
                dz.dot(&layer.weights.slice(s![.., 1..]))
            } else {
                Array2::zeros((0, 0))
            };
        }
        grads.reverse();
        let grads = Gradients {
            tensors: grads.into_iter().flatten().collect(),
        };
        Ok((loss, grads, stats))
    }

    /// One optimiser step on a mini-batch. Returns the training loss.
    pub fn train_step<R: Rng>(
        &mut self,
        x: ArrayView2<f64>,
        targets: Targets,
        lr: f64,
        optimizer: &mut OptimizerState,
        mode: ForwardMode<'_, R>,
    ) -> Result<f64> {
        let (loss, grads, stats) = self.compute_gradients(x, targets, mode)?;
        if !grads.is_finite() {
            return Err(Error::Divergence(format!(
                "non-finite gradient at loss {loss}"
            )));
        }
        optimizer.step(self, &grads, lr);
        let m = x.nrows();
        for (layer, st) in self.layers.iter_mut().zip(stats) {
            if let (Some(bn), Some((mean, var))) = (&mut layer.batch_norm, st) {
                bn.update_running(&mean, &var, m);
            }
        }
        Ok(loss)
    }
}

impl Parameters for FeedForwardNet {
    fn params(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.push(layer.weights.as_slice().expect("standard layout"));
            if let Some(bn) = &layer.batch_norm {
                out.push(bn.gamma.as_slice());
                out.push(bn.beta.as_slice());
            }
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            out.push(layer.weights.as_slice_mut().expect("standard layout"));
            if let Some(bn) = &mut layer.batch_norm {
                out.push(bn.gamma.as_mut_slice());
                out.push(bn.beta.as_mut_slice());
            }
        }
        out
    }
}

/// One plain-SGD backpropagation step on a DNN mini-batch, with dropout at
/// `cfg.dropout_rate` and batch statistics for batch norm.
pub fn backprop_dnn<R: Rng>(
    net: &mut FeedForwardNet,
    batch: &DnnBatch,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<f64> {
    cfg.validate()?;
    let targets = match &batch.targets {
        BatchTargets::Regression(v) => Targets::Values(v),
        BatchTargets::Classes(c) => Targets::Classes(c),
    };
    let mut sgd = OptimizerState::new(OptimizerKind::Sgd);
    let mode = if cfg.dropout_rate > 0.0 {
        ForwardMode::Dropout {
            rate: cfg.dropout_rate,
            rng,
        }
    } else {
        ForwardMode::Deterministic
    };
    net.train_step(
        batch.inputs.view(),
        targets,
        cfg.learning_rate,
        &mut sgd,
        mode,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    type Rng8 = ChaCha8Rng;

    fn toy_regression() -> (Array2<f64>, Vec<f64>) {
        let mut rng = Rng8::seed_from_u64(3);
        let x = Array2::from_shape_fn((32, 3), |_| rng.random_range(-1.0..1.0));
        let y = x
            .rows()
            .into_iter()
            .map(|r| 0.5 * r[0] - 1.5 * r[1] + 0.25 * r[2] + 0.1)
            .collect();
        (x, y)
    }

    #[test]
    fn zero_learning_rate_leaves_weights() {
        let mut rng = Rng8::seed_from_u64(1);
        let mut net = FeedForwardNet::new(
            &[3, 4, 1],
            Activation::Relu,
            Activation::Identity,
            true,
            &mut rng,
        )
        .unwrap();
        let before = net.clone();
        let (x, y) = toy_regression();
        let batch = DnnBatch {
            inputs: x,
            targets: BatchTargets::Regression(y),
            frame_ids: (0..32).collect(),
        };
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        backprop_dnn(&mut net, &batch, &cfg, &mut rng).unwrap();
        for (a, b) in net.layers.iter().zip(&before.layers) {
            assert_eq!(a.weights, b.weights);
            assert_eq!(
                a.batch_norm.as_ref().map(|b| &b.gamma),
                b.batch_norm.as_ref().map(|b| &b.gamma)
            );
        }
    }

    #[test]
    fn loss_decreases_on_linear_toy() {
        let mut rng = Rng8::seed_from_u64(2);
        let mut net = FeedForwardNet::new(
            &[3, 1],
            Activation::Identity,
            Activation::Identity,
            false,
            &mut rng,
        )
        .unwrap();
        let (x, y) = toy_regression();
        let mut opt = OptimizerState::new(OptimizerKind::Sgd);
        let mut losses = Vec::new();
        for _ in 0..100 {
            losses.push(
                net.train_step(
                    x.view(),
                    Targets::Values(&y),
                    0.1,
                    &mut opt,
                    ForwardMode::<Rng8>::Deterministic,
                )
                .unwrap(),
            );
        }
        assert!(losses[99] < 0.05 * losses[0]);
        // Allow small non-monotone wiggles but the trend must be downward.
        for w in losses.windows(10).step_by(10) {
            assert!(w[9] <= w[0] * 1.001);
        }
    }

    #[test]
    fn mismatched_head_is_rejected() {
        let mut rng = Rng8::seed_from_u64(4);
        let net = FeedForwardNet::new(
            &[3, 2],
            Activation::Relu,
            Activation::Softmax,
            false,
            &mut rng,
        )
        .unwrap();
        let (x, y) = toy_regression();
        assert!(matches!(
            net.loss(x.view(), Targets::Values(&y)),
            Err(Error::ModelMismatch(_))
        ));
    }

    #[test]
    fn softmax_hidden_layer_is_rejected() {
        let mut rng = Rng8::seed_from_u64(4);
        assert!(FeedForwardNet::new(
            &[3, 4, 2],
            Activation::Softmax,
            Activation::Softmax,
            false,
            &mut rng
        )
        .is_err());
    }

    #[test]
    fn inference_is_bit_identical() {
        let mut rng = Rng8::seed_from_u64(9);
        let net = FeedForwardNet::new(
            &[3, 5, 5, 1],
            Activation::Relu,
            Activation::Identity,
            true,
            &mut rng,
        )
        .unwrap();
        let (x, _) = toy_regression();
        assert_eq!(
            net.forward(x.view()).unwrap(),
            net.forward(x.view()).unwrap()
        );
    }

    #[test]
    fn inverted_dropout_preserves_expectation() {
        let mut rng = Rng8::seed_from_u64(12);
        let activation = 0.8;
        let mask = dropout_mask((100_000, 1), 0.5, &mut rng);
        let mean = mask.iter().map(|m| m * activation).sum::<f64>() / 100_000.0;
        assert!((mean - activation).abs() / activation < 0.01);
    }
}
