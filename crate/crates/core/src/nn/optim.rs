use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Parameters;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Multiply the rate by `factor` every `every` epochs.
    Step {
        every: usize,
        factor: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Momentum { beta: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Hidden-layer dropout for feed-forward nets (training only).
    pub dropout_rate: f64,
    pub seed: u64,
    pub lr_schedule: LrSchedule,
    pub optimizer: OptimizerKind,
    /// Global gradient-norm ceiling for BPTT.
    pub clip_norm: f64,
    /// Cap on training samples drawn per epoch (`None` = all).
    pub max_samples_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            epochs: 20,
            batch_size: 200,
            dropout_rate: 0.5,
            seed: 0,
            lr_schedule: LrSchedule::Constant,
            optimizer: OptimizerKind::Sgd,
            clip_norm: 5.0,
            max_samples_per_epoch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Parameter(format!(
                "learning rate {} is invalid",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Parameter(format!(
                "dropout rate {} not in [0, 1)",
                self.dropout_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch size must be positive".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Parameter("clip norm must be positive".into()));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Step { every, factor } => {
                self.learning_rate * factor.powi((epoch / every.max(1)) as i32)
            }
        }
    }
}

/// Gradients flattened in [`Parameters`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            t.iter_mut().for_each(|g| *g *= factor);
        }
    }

    /// Rescales to `max_norm` if the global norm exceeds it. Returns the
    /// norm before clipping.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.norm();
        if norm > max_norm {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn is_finite(&self) -> bool {
        self.tensors
            .iter()
            .flat_map(|t| t.iter())
            .all(|g| g.is_finite())
    }
}

/// Per-parameter optimiser memory.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: OptimizerKind,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind) -> Self {
        OptimizerState {
            kind,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        }
    }

    pub fn step<P: Parameters + ?Sized>(&mut self, net: &mut P, grads: &Gradients, lr: f64) {
        let mut params = net.params_mut();
        assert_eq!(
            params.len(),
            grads.tensors.len(),
            "gradient layout mismatch"
        );
        if self.first.is_empty() && !matches!(self.kind, OptimizerKind::Sgd) {
            self.first = grads.tensors.iter().map(|g| vec![0.0; g.len()]).collect();
            self.second = self.first.clone();
        }
        self.steps += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(&grads.tensors) {
                    p.iter_mut().zip(g).for_each(|(w, d)| *w -= lr * d);
                }
            }
            OptimizerKind::Momentum { beta } => {
                for ((p, g), v) in params.iter_mut().zip(&grads.tensors).zip(&mut self.first) {
                    for ((w, d), vel) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                        *vel = beta * *vel + d;
                        *w -= lr * *vel;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(&grads.tensors)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    for (((w, &d), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut())
                    {
                        *m = beta1 * *m + (1.0 - beta1) * d;
                        *v = beta2 * *v + (1.0 - beta2) * d * d;
                        *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipping_scales_to_threshold() {
        let mut g = Gradients {
            tensors: vec![vec![30.0, 0.0], vec![40.0]],
        };
        assert_eq!(g.norm(), 50.0);
        let before = g.clip_norm(5.0);
        assert_eq!(before, 50.0);
        assert!((g.norm() - 5.0).abs() < 1e-12);
        assert!((g.tensors[0][0] - 3.0).abs() < 1e-12);

        let mut small = Gradients {
            tensors: vec![vec![1.0, 1.0]],
        };
        small.clip_norm(5.0);
        assert_eq!(small.tensors[0], vec![1.0, 1.0]);
    }

    #[test]
    fn step_schedule() {
        let cfg = TrainConfig {
            learning_rate: 0.1,
            lr_schedule: LrSchedule::Step {
                every: 2,
                factor: 0.5,
            },
            ..Default::default()
        };
        assert_eq!(cfg.learning_rate_at(0), 0.1);
        assert_eq!(cfg.learning_rate_at(1), 0.1);
        assert_eq!(cfg.learning_rate_at(2), 0.05);
        assert_eq!(cfg.learning_rate_at(5), 0.025);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig {
            dropout_rate: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            learning_rate: -1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
