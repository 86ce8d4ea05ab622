use serde::{Deserialize, Serialize};

use super::magnitude_prune_count;
use crate::arch::{init_params, ArchDescriptor, ParamSet};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{steps_per_epoch, train_range, MaskSet, MetricsRecord, Network, StepRange, TrainConfig};
use crate::tensor::Rng;
use crate::ticket::{Provenance, PruneMethod, SparseTicket};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpConfig {
    /// Fraction of the remaining weights removed per round.
    pub rate: f64,
    pub rounds: usize,
    /// Optimizer step whose weights every round rewinds to; 0 resets to
    /// initialization.
    #[serde(default)]
    pub rewind_step: usize,
    pub train: TrainConfig,
    /// Also train the last round's ticket so every ticket has a record.
    #[serde(default)]
    pub train_last: bool,
}

impl ImpConfig {
    pub fn validate(&self, train_samples: usize) -> Result<()> {
        self.train.validate()?;
        if !(self.rate > 0.0 && self.rate < 1.0) {
            return Err(Error::Config(format!("imp.rate must lie in (0, 1), got {}", self.rate)));
        }
        if self.rounds == 0 {
            return Err(Error::Config("imp.rounds must be at least 1".into()));
        }
        let total = steps_per_epoch(train_samples, self.train.batch_size) * self.train.epochs;
        if self.rewind_step >= total.max(1) {
            return Err(Error::Config(format!(
                "imp.rewind_step {} must be below the {total} training steps",
                self.rewind_step
            )));
        }
        Ok(())
    }
}

/// Cumulative pruned counts after each round: round `k` prunes
/// `⌊rate × remaining⌋` more weights.
pub fn imp_schedule(total: usize, rate: f64, rounds: usize) -> Result<Vec<usize>> {
    let mut pruned = 0usize;
    let mut out = Vec::with_capacity(rounds);
    for k in 1..=rounds {
        let remaining = total - pruned;
        let step = (rate * remaining as f64).floor() as usize;
        if remaining == 0 || step >= remaining {
            return Err(Error::Domain(format!(
                "IMP round {k} would prune all {remaining} remaining weights"
            )));
        }
        pruned += step;
        out.push(pruned);
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct ImpOutcome {
    /// θ_0.
    pub init: ParamSet,
    /// θ_r, shared by every round.
    pub dense_rewind: ParamSet,
    /// Ticket after each round, round 1 first.
    pub tickets: Vec<SparseTicket>,
    /// `metrics[k]` is the training run of the round-`k` mask (0 = dense).
    pub metrics: Vec<MetricsRecord>,
    /// Metrics of the rewind segment, when `rewind_step > 0`.
    pub rewind_metrics: Option<MetricsRecord>,
    /// Weights at the end of the last training run.
    pub final_params: ParamSet,
}

/// Dense weights after the first `rewind_step` steps from the seeded
/// initialization, as every IMP round of the same seed sees them.
pub fn dense_rewind_weights(
    arch: &ArchDescriptor,
    train: &Dataset,
    cfg: &TrainConfig,
    rewind_step: usize,
) -> Result<ParamSet> {
    let net = Network::new(arch);
    let init = init_params(arch, &mut Rng::new(cfg.seed));
    Ok(rewind(&net, init, train, cfg, rewind_step)?.0)
}

fn rewind(
    net: &Network,
    init: ParamSet,
    train: &Dataset,
    cfg: &TrainConfig,
    rewind_step: usize,
) -> Result<(ParamSet, Option<MetricsRecord>)> {
    if rewind_step == 0 {
        return Ok((init, None));
    }
    let range = StepRange {
        start: 0,
        stop: Some(rewind_step),
    };
    let out = train_range(net, init, &MaskSet::dense(net.arch()), train, None, cfg, range)?;
    Ok((out.params, Some(out.metrics)))
}

pub fn imp_run(
    arch: &ArchDescriptor,
    train: &Dataset,
    test: Option<&Dataset>,
    cfg: &ImpConfig,
) -> Result<ImpOutcome> {
    imp_run_with(arch, train, test, cfg, &mut |_, _| {})
}

/// [`imp_run`], calling `observe(round, record)` after every training run.
pub fn imp_run_with(
    arch: &ArchDescriptor,
    train: &Dataset,
    test: Option<&Dataset>,
    cfg: &ImpConfig,
    observe: &mut dyn FnMut(usize, &MetricsRecord),
) -> Result<ImpOutcome> {
    cfg.validate(train.len())?;
    let net = Network::new(arch);
    let dense = MaskSet::dense(arch);
    let schedule = imp_schedule(dense.total(), cfg.rate, cfg.rounds)?;
    let seed = cfg.train.seed;
    let init = init_params(arch, &mut Rng::new(seed));

    let (dense_rewind, rewind_metrics) = rewind(&net, init.clone(), train, &cfg.train, cfg.rewind_step)?;

    let mut provenance = Provenance::new(&arch.name, PruneMethod::Imp, &train.name, seed);
    provenance.notes.insert("imp-rate".into(), cfg.rate.to_string());
    let start = StepRange {
        start: cfg.rewind_step,
        stop: None,
    };
    let mut mask = dense;
    let mut tickets = Vec::with_capacity(cfg.rounds);
    let mut metrics = Vec::with_capacity(cfg.rounds + 1);
    let mut final_params = dense_rewind.clone();
    let runs = if cfg.train_last { cfg.rounds + 1 } else { cfg.rounds };
    for round in 0..runs {
        let out = train_range(&net, dense_rewind.clone(), &mask, train, test, &cfg.train, start)?;
        let mut record = out.metrics;
        record.label = format!("imp-round{round}");
        observe(round, &record);
        metrics.push(record);
        if round < cfg.rounds {
            mask = magnitude_prune_count(&out.params, &mask, schedule[round])?;
            let mut p = provenance.clone();
            p.imp_round = round + 1;
            tickets.push(SparseTicket::new(arch, dense_rewind.clone(), mask.clone(), cfg.rewind_step, p)?);
        }
        final_params = out.params;
    }
    Ok(ImpOutcome {
        init,
        dense_rewind,
        tickets,
        metrics,
        rewind_metrics,
        final_params,
    })
}
