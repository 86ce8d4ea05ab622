//! Hand-written forward and backward passes, masked SGD and the training
//! loop.

pub mod layers;
mod mask;
mod metrics;
mod network;
mod optim;
mod train;

pub use mask::{Mask, MaskSet};
pub use metrics::{EpochMetrics, MetricsRecord, METRICS_CSV_COLUMNS};
pub use network::{Cache, Gradients, Mode, Network};
pub use optim::{sgd_step, zero_velocity, TrainConfig};
pub use train::{evaluate, steps_per_epoch, train, train_range, StepRange, TrainOutcome};

use crate::arch::ParamSet;
use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

/// Mean cross-entropy and its parameter gradients on one batch, with batch
/// norm in train mode. Running statistics in `params` are left untouched.
pub fn loss_and_grads<T: Scalar>(
    net: &Network,
    params: &ParamSet<T>,
    x: &Tensor<T>,
    labels: &[usize],
) -> Result<(f64, ParamSet<T>)> {
    let mut scratch = params.clone();
    let (logits, cache) = net.forward(&mut scratch, x, Mode::Train)?;
    let (loss, d, _) = layers::softmax_cross_entropy(logits.data(), labels, net.arch().num_classes);
    let g = net.param_grads(params, &cache, &Tensor::new(logits.shape().to_vec(), d)?)?;
    Ok((loss, g))
}
