use super::layers::softmax_cross_entropy;
use super::{sgd_step, zero_velocity, MaskSet, MetricsRecord, Mode, Network, TrainConfig};
use super::metrics::EpochMetrics;
use crate::arch::ParamSet;
use crate::data::{Augmentation, Dataset};
use crate::error::{Error, Result};
use crate::tensor::{Rng, Substream, Tensor};

const EVAL_BATCH: usize = 1000;

/// Optimizer steps covered by a call to [`train_range`]: `start..stop`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepRange {
    pub start: usize,
    /// Exclusive; `None` runs to the end of the schedule.
    pub stop: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ParamSet,
    pub metrics: MetricsRecord,
}

pub fn steps_per_epoch(samples: usize, batch_size: usize) -> usize {
    samples.div_ceil(batch_size)
}

/// Mean loss and accuracy in eval mode.
pub fn evaluate(net: &Network, params: &ParamSet, data: &Dataset) -> Result<(f64, f64)> {
    check_input(net, data)?;
    if data.is_empty() {
        return Ok((0.0, 0.0));
    }
    let classes = net.arch().num_classes;
    let mut loss = 0.0;
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let (x, y) = data.gather(chunk);
        let logits = net.predict(params, &x)?;
        let (l, _, c) = softmax_cross_entropy(logits.data(), &y, classes);
        loss += l * chunk.len() as f64;
        correct += c;
    }
    Ok((loss / data.len() as f64, correct as f64 / data.len() as f64))
}

fn check_input(net: &Network, data: &Dataset) -> Result<()> {
    if data.sample_shape() != net.arch().input_shape.as_slice() {
        return Err(Error::dim(format!(
            "{} takes samples of shape {:?}, dataset {} has {:?}",
            net.arch().name,
            net.arch().input_shape,
            data.name,
            data.sample_shape()
        )));
    }
    if data.num_classes() > net.arch().num_classes {
        return Err(Error::dim(format!(
            "dataset {} has {} classes, {} outputs {}",
            data.name,
            data.num_classes(),
            net.arch().name,
            net.arch().num_classes
        )));
    }
    Ok(())
}

/// Full masked training run from step 0.
pub fn train(
    net: &Network,
    params: ParamSet,
    mask: &MaskSet,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_range(net, params, mask, train_set, test_set, cfg, StepRange::default())
}

/// Masked training over a slice of the schedule. Step `t` always sees the
/// same batch and learning rate whatever `range.start` is, so a run split
/// at step `r` visits exactly the data of an unsplit run. Optimizer
/// velocity starts at zero.
pub fn train_range(
    net: &Network,
    mut params: ParamSet,
    mask: &MaskSet,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    cfg: &TrainConfig,
    range: StepRange,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_input(net, train_set)?;
    if let Some(t) = test_set {
        check_input(net, t)?;
    }
    params.check_arch(net.arch())?;
    mask.apply(&mut params)?;

    let n = train_set.len();
    let spe = steps_per_epoch(n, cfg.batch_size);
    let total = spe * cfg.epochs;
    let stop = range.stop.unwrap_or(total).min(total);
    if range.start > stop {
        return Err(Error::Usage(format!(
            "training range starts at step {} past its end {stop}",
            range.start
        )));
    }
    let sparsity = if mask.total() == 0 {
        0.0
    } else {
        mask.pruned() as f64 / mask.total() as f64
    };
    let mut metrics = MetricsRecord {
        label: String::new(),
        arch: net.arch().name.clone(),
        dataset: train_set.name.clone(),
        seed: cfg.seed,
        start_step: range.start,
        total_steps: total,
        weight_decay: cfg.weight_decay,
        sparsity,
        relative_flops: if total == 0 {
            0.0
        } else {
            (1.0 - sparsity) * (stop - range.start) as f64 / total as f64
        },
        ..MetricsRecord::default()
    };

    if n == 0 {
        for epoch in 0..cfg.epochs {
            metrics.epochs.push(EpochMetrics {
                epoch,
                steps: 0,
                samples: 0,
                lr: cfg.lr,
                train_loss: 0.0,
                train_acc: 0.0,
                test_loss: None,
                test_acc: None,
            });
        }
        return Ok(TrainOutcome { params, metrics });
    }

    let mut rng = Rng::new(cfg.seed);
    let aug = Augmentation::default();
    let classes = net.arch().num_classes;
    let mut velocity = zero_velocity(&params);
    let mut order: Option<(usize, Vec<usize>)> = None;
    let (mut loss_sum, mut correct, mut seen, mut steps) = (0.0f64, 0usize, 0usize, 0usize);

    for step in range.start..stop {
        let epoch = step / spe;
        let b = step % spe;
        if order.as_ref().is_none_or(|(e, _)| *e != epoch) {
            order = Some((epoch, rng.stream_at(Substream::DataOrder, epoch as u64).permutation(n)));
        }
        let perm = &order.as_ref().unwrap().1;
        let idx = &perm[b * cfg.batch_size..((b + 1) * cfg.batch_size).min(n)];
        let (x, y) = if cfg.augment {
            train_set.gather_augmented(idx, &aug, rng.stream_at(Substream::Augmentation, step as u64))?
        } else {
            train_set.gather(idx)
        };

        let (logits, cache) = net.forward(&mut params, &x, Mode::Train)?;
        let (loss, dlogits, c) = softmax_cross_entropy(logits.data(), &y, classes);
        if !loss.is_finite() {
            return Err(Error::Domain(format!(
                "training diverged at step {step}: loss {loss} (lr {})",
                cfg.lr_at(step, spe)
            )));
        }
        let grads = net.param_grads(&params, &cache, &Tensor::new(logits.shape().to_vec(), dlogits)?)?;
        sgd_step(&mut params, &grads, mask, &mut velocity, cfg, step, spe)?;

        loss_sum += loss * idx.len() as f64;
        correct += c;
        seen += idx.len();
        steps += 1;

        let epoch_end = b + 1 == spe;
        if epoch_end || step + 1 == stop {
            let last = step + 1 == total;
            let (test_loss, test_acc) = match test_set {
                Some(t) if cfg.eval_every_epoch || last => {
                    let (l, a) = evaluate(net, &params, t)?;
                    (Some(l), Some(a))
                }
                _ => (None, None),
            };
            metrics.epochs.push(EpochMetrics {
                epoch,
                steps,
                samples: seen,
                lr: cfg.lr_at(step, spe),
                train_loss: loss_sum / seen as f64,
                train_acc: correct as f64 / seen as f64,
                test_loss,
                test_acc,
            });
            (loss_sum, correct, seen, steps) = (0.0, 0, 0, 0);
        }
    }

    if let Some(last) = metrics.epochs.last() {
        metrics.final_test_loss = last.test_loss;
        metrics.final_test_acc = last.test_acc;
    }
    if stop == total && metrics.final_test_acc.is_none() {
        if let Some(t) = test_set {
            let (l, a) = evaluate(net, &params, t)?;
            metrics.final_test_loss = Some(l);
            metrics.final_test_acc = Some(a);
        }
    }
    Ok(TrainOutcome { params, metrics })
}
