use serde::{Deserialize, Serialize};

use super::MaskSet;
use crate::arch::{ParamKind, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    /// Epochs at which the learning rate is multiplied by 0.1.
    #[serde(default)]
    pub milestones: Vec<usize>,
    #[serde(default)]
    pub warmup_steps: usize,
    #[serde(default)]
    pub seed: u64,
    /// Random pad-crop and flip on training batches (image datasets only).
    #[serde(default)]
    pub augment: bool,
    /// Evaluate on the test split after every epoch, not only at the end.
    #[serde(default = "default_true")]
    pub eval_every_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1,
            batch_size: 128,
            lr: 0.1,
            momentum: 0.0,
            weight_decay: 0.0,
            milestones: Vec::new(),
            warmup_steps: 0,
            seed: 0,
            augment: false,
            eval_every_epoch: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("train.lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("train.momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("train.weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if self.batch_size == 0 {
            return bad("train.batch_size must be at least 1".into());
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("train.milestones must be strictly increasing, got {:?}", self.milestones));
        }
        if let Some(&m) = self.milestones.iter().find(|&&m| m > self.epochs) {
            return bad(format!("train.milestones entry {m} exceeds train.epochs = {}", self.epochs));
        }
        Ok(())
    }

    /// Multiplier on `lr` at `step`: `0.1^(milestones passed) ×
    /// min(1, (step+1)/warmup_steps)`.
    pub fn lr_multiplier(&self, step: usize, steps_per_epoch: usize) -> f64 {
        let passed = self
            .milestones
            .iter()
            .filter(|&&m| step >= m * steps_per_epoch)
            .count();
        let mut mult = 0.1f64.powi(passed as i32);
        if self.warmup_steps > 0 {
            mult *= ((step + 1) as f64 / self.warmup_steps as f64).min(1.0);
        }
        mult
    }

    pub fn lr_at(&self, step: usize, steps_per_epoch: usize) -> f64 {
        self.lr * self.lr_multiplier(step, steps_per_epoch)
    }
}

/// Zero velocity buffers for every trainable parameter.
pub fn zero_velocity<T: Scalar>(params: &ParamSet<T>) -> ParamSet<T> {
    params
        .iter()
        .filter(|(p, _)| ParamKind::of_path(p).trainable())
        .map(|(p, t)| (p.to_string(), Tensor::zeros(t.shape())))
        .collect()
}

/// One momentum SGD step: `v ← μ·v + (g + λ·θ)`, `θ ← θ − lr·v`, then
/// `θ ← θ ⊙ m` on masked paths. Weight decay applies to weights only.
pub fn sgd_step<T: Scalar>(
    params: &mut ParamSet<T>,
    grads: &ParamSet<T>,
    mask: &MaskSet,
    velocity: &mut ParamSet<T>,
    cfg: &TrainConfig,
    step: usize,
    steps_per_epoch: usize,
) -> Result<()> {
    let lr = T::of(cfg.lr_at(step, steps_per_epoch));
    let mu = T::of(cfg.momentum);
    for (path, g) in grads.iter() {
        let kind = ParamKind::of_path(path);
        let wd = T::of(if kind.decayed() { cfg.weight_decay } else { 0.0 });
        let theta = params.get_mut(path)?;
        let v = velocity.get_mut(path)?;
        if theta.shape() != g.shape() || v.shape() != g.shape() {
            return Err(Error::dim(format!(
                "{path}: parameter {:?}, gradient {:?}, velocity {:?}",
                theta.shape(),
                g.shape(),
                v.shape()
            )));
        }
        for ((t, &gi), vi) in theta.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vi = mu * *vi + (gi + wd * *t);
            *t -= lr * *vi;
        }
        if let Some(m) = mask.get(path) {
            if m.shape() != g.shape() {
                return Err(Error::dim(format!(
                    "{path}: mask {:?} vs parameter {:?}",
                    m.shape(),
                    g.shape()
                )));
            }
            for (t, &k) in theta.data_mut().iter_mut().zip(m.bits()) {
                if !k {
                    *t = T::zero();
                }
            }
        }
    }
    Ok(())
}
