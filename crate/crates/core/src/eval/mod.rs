//! Ticket retraining, cross-dataset transfer, linear-mode-connectivity
//! probes and method comparisons.

mod compare;
mod connectivity;

pub use compare::{
    compare, CompareInputs, CompareMethod, ComparisonRow, ComparisonTable, COMPARISON_CSV_COLUMNS,
    COMPARISON_ROW_CSV_COLUMNS,
};
pub use connectivity::{
    connectivity_probe, default_alphas, interpolate, recalibrate_bn, InterpolationReport, ProbeOptions,
    INTERPOLATION_CSV_COLUMNS,
};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{train_range, MetricsRecord, Network, StepRange, TrainConfig, TrainOutcome};
use crate::ticket::SparseTicket;

/// Trains `θ_r ⊙ m` over steps `r..T` of the schedule in `cfg`.
pub fn train_ticket(
    ticket: &SparseTicket,
    train: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    ticket.validate()?;
    let net = Network::new(&ticket.arch);
    let range = StepRange {
        start: ticket.rewind_step,
        stop: None,
    };
    let mut out = train_range(&net, ticket.rewind_weights.clone(), &ticket.mask, train, test, cfg, range)?;
    out.metrics.label = format!("{}:{}", ticket.provenance.method, ticket.arch.name);
    Ok(out)
}

pub fn evaluate_ticket(ticket: &SparseTicket, train: &Dataset, test: &Dataset, cfg: &TrainConfig) -> Result<MetricsRecord> {
    Ok(train_ticket(ticket, train, Some(test), cfg)?.metrics)
}

/// Retrains an unchanged ticket on another dataset of the same sample shape
/// and class count.
pub fn transfer_dataset(
    ticket: &SparseTicket,
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
) -> Result<MetricsRecord> {
    for d in [train, test] {
        if d.sample_shape() != ticket.arch.input_shape.as_slice() || d.num_classes() > ticket.arch.num_classes {
            return Err(Error::Incompatible(format!(
                "{} ticket takes {:?} samples and {} classes; {} has {:?} and {}",
                ticket.arch.name,
                ticket.arch.input_shape,
                ticket.arch.num_classes,
                d.name,
                d.sample_shape(),
                d.num_classes()
            )));
        }
    }
    let mut m = evaluate_ticket(ticket, train, test, cfg)?;
    if ticket.provenance.dataset != train.name {
        m.label = format!("{} from {}", m.label, ticket.provenance.dataset);
    }
    Ok(m)
}
