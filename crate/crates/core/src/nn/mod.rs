//! Minimal neural-network engine: dense and simple-recurrent layers, batch
//! normalisation, inverted dropout, MSE / cross-entropy losses and
//! mini-batch gradient descent with backpropagation (through time for the
//! recurrent encoder).
//!
//! Matrices are sample-major: a mini-batch is `M x features`. Weight
//! matrices are `units x (inputs + 1)` with the bias in column 0.

mod feedforward;
mod layers;
mod loss;
mod optim;
mod recurrent;

pub use feedforward::{backprop_dnn, BatchStats, FeedForwardNet, ForwardMode};
pub use layers::{dense_forward, xavier_matrix, Activation, BatchNorm, DenseLayer, RecurrentLayer};
pub use loss::{cross_entropy_loss, mse_loss, softmax_rows};
pub use optim::{Gradients, LrSchedule, OptimizerKind, OptimizerState, TrainConfig};
pub use recurrent::{bptt, encoder_forward, recurrent_step, RecurrentEncoder};

/// Supervision for one mini-batch.
#[derive(Debug, Clone, Copy)]
pub enum Targets<'a> {
    Values(&'a [f64]),
    Classes(&'a [usize]),
}

impl Targets<'_> {
    pub fn len(&self) -> usize {
        match self {
            Targets::Values(v) => v.len(),
            Targets::Classes(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flattened parameter access in a fixed order, shared by the optimiser,
/// gradient clipping and finite-difference checks.
pub trait Parameters {
    fn params(&self) -> Vec<&[f64]>;
    fn params_mut(&mut self) -> Vec<&mut [f64]>;
}
