use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::features::RnnBatch;

use super::layers::{affine, check_finite, Activation, DenseLayer, RecurrentLayer};
use super::loss::mse_loss;
use super::optim::{Gradients, OptimizerKind, OptimizerState, TrainConfig};
use super::Parameters;

/// One time step of a recurrent layer.
pub fn recurrent_step(
    layer: &RecurrentLayer,
    input_t: ArrayView2<f64>,
    hidden_prev: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    if input_t.ncols() != layer.inputs() {
        return Err(Error::Dimension(format!(
            "recurrent layer expects {} inputs, got {}",
            layer.inputs(),
            input_t.ncols()
        )));
    }
    if hidden_prev.dim() != (input_t.nrows(), layer.units()) {
        return Err(Error::Dimension(format!(
            "hidden state is {:?}, expected ({}, {})",
            hidden_prev.dim(),
            input_t.nrows(),
            layer.units()
        )));
    }
    let mut z = affine(&layer.w, input_t);
    z += &affine(&layer.h, hidden_prev);
    z.mapv_inplace(f64::tanh);
    Ok(z)
}

/// Stacked simple-recurrent layers read `steps` inputs; a single identity
/// unit reads the top layer's state after the last step only.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentEncoder {
    pub layers: Vec<RecurrentLayer>,
    pub head: DenseLayer,
    pub steps: usize,
}

struct EncoderTrace {
    /// Per layer: time-stacked inputs `(T*M) x in`.
    inputs: Vec<Array2<f64>>,
    /// Per layer, per step: hidden states `M x q`.
    states: Vec<Vec<Array2<f64>>>,
    output: Vec<f64>,
}

impl RecurrentEncoder {
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        steps: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if hidden.is_empty() || steps == 0 {
            return Err(Error::Parameter(
                "encoder needs at least one layer and one step".into(),
            ));
        }
        let mut layers = Vec::with_capacity(hidden.len());
        let mut width = input_dim;
        for &units in hidden {
            layers.push(RecurrentLayer::new(width, units, rng));
            width = units;
        }
        let head = DenseLayer::new(width, 1, Activation::Identity, rng);
        let net = RecurrentEncoder {
            layers,
            head,
            steps,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Parameter("encoder has no recurrent layers".into()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            layer.validate()?;
            if l > 0 && layer.inputs() != self.layers[l - 1].units() {
                return Err(Error::Dimension(format!(
                    "recurrent layer {l} input width mismatch"
                )));
            }
        }
        let top = self.layers.last().expect("non-empty").units();
        if self.head.activation != Activation::Identity
            || self.head.units() != 1
            || self.head.inputs() != top
        {
            return Err(Error::Parameter(
                "encoder head must be one identity unit on the top layer".into(),
            ));
        }
        check_finite("encoder head", &self.head.weights)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    fn check_steps(&self, steps: &[Array2<f64>]) -> Result<usize> {
        if steps.len() != self.steps {
            return Err(Error::Dimension(format!(
                "encoder expects {} steps, got {}",
                self.steps,
                steps.len()
            )));
        }
        let m = steps[0].nrows();
        for s in steps {
            if s.dim() != (m, self.input_dim()) {
                return Err(Error::Dimension(format!(
                    "step is {:?}, expected ({m}, {})",
                    s.dim(),
                    self.input_dim()
                )));
            }
        }
        Ok(m)
    }

    fn trace(&self, steps: &[Array2<f64>]) -> Result<EncoderTrace> {
        let m = self.check_steps(steps)?;
        let t_len = steps.len();
        let views: Vec<ArrayView2<f64>> = steps.iter().map(|s| s.view()).collect();
        let mut stacked = concatenate(Axis(0), &views).expect("equal widths");
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut states = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let q = layer.units();
            // Feed-forward part for all steps at once.
            let ff = affine(&layer.w, stacked.view());
            let mut hs: Vec<Array2<f64>> = Vec::with_capacity(t_len);
            let mut out = Array2::zeros((t_len * m, q));
            for n in 0..t_len {
                let mut z = ff.slice(s![n * m..(n + 1) * m, ..]).to_owned();
                match hs.last() {
                    Some(prev) => z += &affine(&layer.h, prev.view()),
                    None => z += &layer.h.column(0),
                }
                z.mapv_inplace(f64::tanh);
                out.slice_mut(s![n * m..(n + 1) * m, ..]).assign(&z);
                hs.push(z);
            }
            inputs.push(std::mem::replace(&mut stacked, out));
            states.push(hs);
        }
        let last = states
            .last()
            .and_then(|h| h.last())
            .expect("at least one step");
        let output = self.head.forward(last.view())?.column(0).to_vec();
        Ok(EncoderTrace {
            inputs,
            states,
            output,
        })
    }

    /// F0 estimate (in target units) per batch row.
    pub fn forward(&self, steps: &[Array2<f64>]) -> Result<Vec<f64>> {
        Ok(self.trace(steps)?.output)
    }

    pub fn loss(&self, steps: &[Array2<f64>], targets: &[f64]) -> Result<f64> {
        Ok(mse_loss(&self.forward(steps)?, targets)?.0)
    }

    /// MSE loss and exact gradients by backpropagation through all steps.
    pub fn compute_gradients(
        &self,
        steps: &[Array2<f64>],
        targets: &[f64],
    ) -> Result<(f64, Gradients)> {
        let tr = self.trace(steps)?;
        let (loss, dy) = mse_loss(&tr.output, targets)?;
        if !loss.is_finite() {
            return Err(Error::Divergence(format!("non-finite loss {loss}")));
        }
        let m = dy.len();
        let t_len = steps.len();
        let dy = Array2::from_shape_vec((m, 1), dy).expect("column");

        let top = tr.states.last().expect("layers");
        let last = &top[t_len - 1];
        let mut d_head = Array2::zeros(self.head.weights.dim());
        d_head.column_mut(0).assign(&dy.sum_axis(Axis(0)));
        d_head.slice_mut(s![.., 1..]).assign(&dy.t().dot(last));

        // Gradient arriving at each step's output of the current layer.
        let q_top = self.layers.last().expect("layers").units();
        let mut d_out: Vec<Option<Array2<f64>>> = vec![None; t_len];
        d_out[t_len - 1] = Some(dy.dot(&self.head.weights.slice(s![.., 1..])));
        debug_assert_eq!(d_out[t_len - 1].as_ref().unwrap().ncols(), q_top);

        let mut layer_grads: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let q = layer.units();
            let hs = &tr.states[l];
            let h_rec = layer.h.slice(s![.., 1..]);
            let mut dh = Array2::<f64>::zeros(layer.h.dim());
            let mut da_all = Array2::<f64>::zeros((t_len * m, q));
            let mut carry = Array2::<f64>::zeros((m, q));
            for n in (0..t_len).rev() {
                let mut da = carry;
                if let Some(d) = &d_out[n] {
                    da += d;
                }
                da.zip_mut_with(&hs[n], |g, &h| *g *= 1.0 - h * h);
                let mut bias = dh.column_mut(0);
                bias += &da.sum_axis(Axis(0));
                if n > 0 {
                    let mut rec = dh.slice_mut(s![.., 1..]);
                    rec += &da.t().dot(&hs[n - 1]);
                }
                carry = da.dot(&h_rec);
                da_all.slice_mut(s![n * m..(n + 1) * m, ..]).assign(&da);
            }
            let mut dw = Array2::<f64>::zeros(layer.w.dim());
            dw.column_mut(0).assign(&da_all.sum_axis(Axis(0)));
            dw.slice_mut(s![.., 1..])
                .assign(&da_all.t().dot(&tr.inputs[l]));
            if l > 0 {
                let dx = da_all.dot(&layer.w.slice(s![.., 1..]));
                d_out = (0..t_len)
                    .map(|n| Some(dx.slice(s![n * m..(n + 1) * m, ..]).to_owned()))
                    .collect();
            }
            layer_grads.push((dw.iter().copied().collect(), dh.iter().copied().collect()));
        }
        layer_grads.reverse();
        let mut tensors = Vec::with_capacity(2 * self.layers.len() + 1);
        for (dw, dh) in layer_grads {
            tensors.push(dw);
            tensors.push(dh);
        }
        tensors.push(d_head.iter().copied().collect());
        Ok((loss, Gradients { tensors }))
    }

    /// One clipped optimiser step. Returns `(loss, gradient norm before clipping)`.
    pub fn train_step(
        &mut self,
        steps: &[Array2<f64>],
        targets: &[f64],
        lr: f64,
        optimizer: &mut OptimizerState,
        clip_norm: f64,
    ) -> Result<(f64, f64)> {
        let (loss, mut grads) = self.compute_gradients(steps, targets)?;
        if !grads.is_finite() {
            return Err(Error::Divergence(format!(
                "non-finite gradient at loss {loss}"
            )));
        }
        let norm = grads.clip_norm(clip_norm);
        optimizer.step(self, &grads, lr);
        Ok((loss, norm))
    }
}

impl Parameters for RecurrentEncoder {
    fn params(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.push(layer.w.as_slice().expect("standard layout"));
            out.push(layer.h.as_slice().expect("standard layout"));
        }
        out.push(self.head.weights.as_slice().expect("standard layout"));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            out.push(layer.w.as_slice_mut().expect("standard layout"));
            out.push(layer.h.as_slice_mut().expect("standard layout"));
        }
        out.push(self.head.weights.as_slice_mut().expect("standard layout"));
        out
    }
}

pub fn encoder_forward(net: &RecurrentEncoder, batch: &RnnBatch) -> Result<Vec<f64>> {
    net.forward(&batch.steps)
}

/// One plain-SGD BPTT step with gradient-norm clipping at `cfg.clip_norm`.
pub fn bptt(net: &mut RecurrentEncoder, batch: &RnnBatch, cfg: &TrainConfig) -> Result<f64> {
    cfg.validate()?;
    let mut sgd = OptimizerState::new(OptimizerKind::Sgd);
    Ok(net
        .train_step(
            &batch.steps,
            &batch.targets,
            cfg.learning_rate,
            &mut sgd,
            cfg.clip_norm,
        )?
        .0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_steps(t: usize, m: usize, k: usize, seed: u64) -> Vec<Array2<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..t)
            .map(|_| Array2::from_shape_fn((m, k), |_| rng.random_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn zero_weights_give_zero_state() {
        let layer = RecurrentLayer {
            w: Array2::zeros((3, 5)),
            h: Array2::zeros((3, 4)),
        };
        let x = Array2::from_elem((2, 4), 7.0);
        let out = recurrent_step(&layer, x.view(), Array2::zeros((2, 3)).view()).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn no_recurrence_reduces_to_tanh_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = RecurrentLayer {
            w: super::super::xavier_matrix(3, 4, &mut rng),
            h: Array2::zeros((3, 4)),
        };
        let dense = DenseLayer {
            weights: layer.w.clone(),
            activation: Activation::Tanh,
            batch_norm: None,
        };
        let x = random_steps(1, 5, 4, 2).remove(0);
        let prev = Array2::from_elem((5, 3), 0.3);
        let a = recurrent_step(&layer, x.view(), prev.view()).unwrap();
        assert_eq!(a, dense.forward(x.view()).unwrap());
    }

    #[test]
    fn outputs_are_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut layer = RecurrentLayer::new(4, 3, &mut rng);
        layer.w.mapv_inplace(|v| v * 100.0);
        let x = random_steps(1, 6, 4, 4).remove(0);
        let out = recurrent_step(&layer, x.view(), Array2::zeros((6, 3)).view()).unwrap();
        assert!(out.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn step_count_is_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = RecurrentEncoder::new(4, &[3], 3, &mut rng).unwrap();
        assert!(matches!(
            net.forward(&random_steps(2, 2, 4, 1)),
            Err(Error::Dimension(_))
        ));
        assert!(net.forward(&random_steps(3, 2, 4, 1)).is_ok());
    }

    #[test]
    fn single_step_is_plain_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = RecurrentEncoder::new(4, &[3, 2], 1, &mut rng).unwrap();
        let x = random_steps(1, 5, 4, 7);
        let h1 = recurrent_step(&net.layers[0], x[0].view(), Array2::zeros((5, 3)).view()).unwrap();
        let h2 = recurrent_step(&net.layers[1], h1.view(), Array2::zeros((5, 2)).view()).unwrap();
        let y = net.head.forward(h2.view()).unwrap().column(0).to_vec();
        assert_eq!(net.forward(&x).unwrap(), y);
    }

    #[test]
    fn zero_head_gives_zero_estimates() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut net = RecurrentEncoder::new(4, &[3], 3, &mut rng).unwrap();
        net.head.weights.fill(0.0);
        assert!(net
            .forward(&random_steps(3, 4, 4, 9))
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn recurrent_weights_get_no_gradient_on_one_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let net = RecurrentEncoder::new(4, &[3, 3], 1, &mut rng).unwrap();
        let (_, g) = net
            .compute_gradients(&random_steps(1, 5, 4, 11), &[0.1, -0.2, 0.3, 0.0, 1.0])
            .unwrap();
        for l in 0..2 {
            let dh = Array2::from_shape_vec((3, 4), g.tensors[2 * l + 1].clone()).unwrap();
            assert!(dh.slice(s![.., 1..]).iter().all(|&v| v == 0.0));
            assert!(dh.column(0).iter().any(|&v| v != 0.0));
        }
    }

    #[test]
    fn bptt_reduces_loss_on_fixed_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut net = RecurrentEncoder::new(4, &[6], 3, &mut rng).unwrap();
        let steps = random_steps(3, 16, 4, 13);
        let targets: Vec<f64> = (0..16)
            .map(|j| steps[0][[j, 0]] - 0.5 * steps[2][[j, 1]])
            .collect();
        let batch = RnnBatch {
            steps,
            targets,
            frame_ids: (0..16).collect(),
        };
        let cfg = TrainConfig {
            learning_rate: 0.1,
            ..Default::default()
        };
        let first = bptt(&mut net, &batch, &cfg).unwrap();
        let mut last = first;
        for _ in 0..200 {
            last = bptt(&mut net, &batch, &cfg).unwrap();
        }
        assert!(last < 0.5 * first, "{first} -> {last}");
    }
}
