use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::loss::softmax_rows;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
    Softmax,
}

impl Activation {
    pub(crate) fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Tanh => z.mapv_inplace(f64::tanh),
            Activation::Identity => {}
            Activation::Softmax => softmax_rows(z),
        }
    }

    /// `dL/dz` given `dL/dout` and the activation output. Softmax is only
    /// used as an output layer whose gradient arrives at the logits.
    pub(crate) fn backward(self, out: &Array2<f64>, grad_out: &mut Array2<f64>) {
        match self {
            Activation::Relu => grad_out.zip_mut_with(out, |g, &o| {
                if o <= 0.0 {
                    *g = 0.0
                }
            }),
            Activation::Tanh => grad_out.zip_mut_with(out, |g, &o| *g *= 1.0 - o * o),
            Activation::Identity | Activation::Softmax => {}
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Identity => 2,
            Activation::Softmax => 3,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Activation::Relu,
            1 => Activation::Tanh,
            2 => Activation::Identity,
            3 => Activation::Softmax,
            _ => return None,
        })
    }
}

/// `units x (inputs + 1)` matrix, weights uniform in `+-sqrt(6 / (fan_in + fan_out))`,
/// bias column zero.
pub fn xavier_matrix<R: Rng + ?Sized>(units: usize, inputs: usize, rng: &mut R) -> Array2<f64> {
    let a = (6.0 / (inputs + units) as f64).sqrt();
    Array2::from_shape_fn((units, inputs + 1), |(_, c)| {
        if c == 0 {
            0.0
        } else {
            rng.random_range(-a..a)
        }
    })
}

/// `x W[:, 1:]^T + W[:, 0]`.
pub(crate) fn affine(weights: &Array2<f64>, x: ArrayView2<f64>) -> Array2<f64> {
    let mut z = x.dot(&weights.slice(s![.., 1..]).t());
    z += &weights.column(0);
    z
}

pub(crate) fn check_finite(name: &str, m: &Array2<f64>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Parameter(format!("{name} has non-finite entries")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    /// Weight kept by the running statistics on each update.
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(units: usize) -> Self {
        BatchNorm {
            gamma: vec![1.0; units],
            beta: vec![0.0; units],
            running_mean: vec![0.0; units],
            running_var: vec![1.0; units],
            momentum: 0.9,
            eps: 1e-5,
        }
    }

    pub fn units(&self) -> usize {
        self.gamma.len()
    }

    /// Normalises with running statistics (inference).
    pub(crate) fn forward_inference(&self, z: &mut Array2<f64>) {
        for mut row in z.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                let zhat = (*v - self.running_mean[j]) / (self.running_var[j] + self.eps).sqrt();
                *v = self.gamma[j] * zhat + self.beta[j];
            }
        }
    }

    /// Normalises with batch statistics; returns `(zhat, inv_std, mean, var)`
    /// and overwrites `z` with `gamma * zhat + beta`.
    pub(crate) fn forward_train(
        &self,
        z: &mut Array2<f64>,
    ) -> (Array2<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let m = z.nrows() as f64;
        let mean = z.mean_axis(Axis(0)).expect("non-empty batch").to_vec();
        let mut var = vec![0.0; mean.len()];
        for row in z.rows() {
            for ((v, &x), &mu) in var.iter_mut().zip(row.iter()).zip(&mean) {
                *v += (x - mu) * (x - mu);
            }
        }
        var.iter_mut().for_each(|v| *v /= m);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut zhat = z.clone();
        for (mut zrow, mut hrow) in z.rows_mut().into_iter().zip(zhat.rows_mut()) {
            for j in 0..mean.len() {
                let h = (hrow[j] - mean[j]) * inv_std[j];
                hrow[j] = h;
                zrow[j] = self.gamma[j] * h + self.beta[j];
            }
        }
        (zhat, inv_std, mean, var)
    }

    /// Exponential update of the running statistics.
    pub fn update_running(&mut self, batch_mean: &[f64], batch_var: &[f64], batch_size: usize) {
        let unbias = if batch_size > 1 {
            batch_size as f64 / (batch_size - 1) as f64
        } else {
            1.0
        };
        let k = self.momentum;
        for j in 0..self.units() {
            self.running_mean[j] = k * self.running_mean[j] + (1.0 - k) * batch_mean[j];
            self.running_var[j] = k * self.running_var[j] + (1.0 - k) * batch_var[j] * unbias;
        }
    }
}

/// Fully connected layer. Batch norm, when present, acts on the
/// pre-activation.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub activation: Activation,
    pub batch_norm: Option<BatchNorm>,
}

impl DenseLayer {
    pub fn new<R: Rng + ?Sized>(
        inputs: usize,
        units: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        DenseLayer {
            weights: xavier_matrix(units, inputs, rng),
            activation,
            batch_norm: None,
        }
    }

    pub fn with_batch_norm(mut self) -> Self {
        self.batch_norm = Some(BatchNorm::new(self.units()));
        self
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols() - 1
    }

    pub fn units(&self) -> usize {
        self.weights.nrows()
    }

    pub fn check_input(&self, x: ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.inputs() {
            return Err(Error::Dimension(format!(
                "layer expects {} inputs, got {}",
                self.inputs(),
                x.ncols()
            )));
        }
        Ok(())
    }

    /// Inference-mode forward pass: running batch-norm statistics, no dropout.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let mut z = affine(&self.weights, x);
        if let Some(bn) = &self.batch_norm {
            bn.forward_inference(&mut z);
        }
        self.activation.apply(&mut z);
        Ok(z)
    }
}

pub fn dense_forward(layer: &DenseLayer, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
    layer.forward(inputs)
}

/// Simple recurrent layer: `tanh(W [1; x_t] + H [1; h_{t-1}])`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentLayer {
    pub w: Array2<f64>,
    pub h: Array2<f64>,
}

impl RecurrentLayer {
    pub fn new<R: Rng + ?Sized>(inputs: usize, units: usize, rng: &mut R) -> Self {
        RecurrentLayer {
            w: xavier_matrix(units, inputs, rng),
            h: xavier_matrix(units, units, rng),
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.ncols() - 1
    }

    pub fn units(&self) -> usize {
        self.w.nrows()
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.h.nrows() != self.units() || self.h.ncols() != self.units() + 1 {
            return Err(Error::Dimension(format!(
                "recurrent matrix is {:?}, expected ({}, {})",
                self.h.dim(),
                self.units(),
                self.units() + 1
            )));
        }
        check_finite("recurrent W", &self.w)?;
        check_finite("recurrent H", &self.h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identity_layer_passes_input_through() {
        let mut w = Array2::zeros((3, 4));
        for i in 0..3 {
            w[[i, i + 1]] = 1.0;
        }
        let layer = DenseLayer {
            weights: w,
            activation: Activation::Identity,
            batch_norm: None,
        };
        let x = array![[1.0, -2.0, 3.5], [0.0, 4.0, -1.0]];
        assert_eq!(dense_forward(&layer, x.view()).unwrap(), x);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let layer = DenseLayer {
            weights: Array2::zeros((2, 3)),
            activation: Activation::Softmax,
            batch_norm: None,
        };
        let out = layer.forward(array![[0.3, -1.0]].view()).unwrap();
        assert_eq!(out, array![[0.5, 0.5]]);
    }

    #[test]
    fn relu_values() {
        let layer = DenseLayer {
            weights: array![[0.0, 1.0]],
            activation: Activation::Relu,
            batch_norm: None,
        };
        let out = layer.forward(array![[-3.0], [2.0]].view()).unwrap();
        assert_eq!(out, array![[0.0], [2.0]]);
    }

    #[test]
    fn input_width_is_checked() {
        let layer = DenseLayer {
            weights: Array2::zeros((2, 3)),
            activation: Activation::Relu,
            batch_norm: None,
        };
        assert!(matches!(
            layer.forward(Array2::zeros((4, 3)).view()),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn batch_norm_training_statistics() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut z = Array2::from_shape_fn((64, 5), |(_, j)| {
            rng.random_range(-3.0..3.0) * (j + 1) as f64 + j as f64
        });
        let bn = BatchNorm::new(5);
        let (zhat, _, _, _) = bn.forward_train(&mut z);
        for j in 0..5 {
            let col = zhat.column(j);
            let mean = col.mean().unwrap();
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 64.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn running_stats_use_momentum() {
        let mut bn = BatchNorm::new(1);
        bn.update_running(&[10.0], &[4.0], 1);
        assert!((bn.running_mean[0] - 1.0).abs() < 1e-12);
        assert!((bn.running_var[0] - (0.9 + 0.4)).abs() < 1e-12);
    }
}
