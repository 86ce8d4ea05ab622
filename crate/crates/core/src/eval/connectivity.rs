use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train_ticket;
use crate::arch::{ParamKind, ParamSet};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{evaluate, Mode, Network, TrainConfig};
use crate::ticket::SparseTicket;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeOptions {
    #[serde(default = "default_grid")]
    pub grid_size: usize,
    /// Re-estimate batch-norm statistics at interior points.
    #[serde(default = "default_true")]
    pub recalibrate_bn: bool,
    /// Permit equal seeds; only useful to exercise the degenerate case.
    #[serde(default)]
    pub allow_same_seed: bool,
}

fn default_grid() -> usize {
    11
}

fn default_true() -> bool {
    true
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions {
            grid_size: default_grid(),
            recalibrate_bn: true,
            allow_same_seed: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpolationReport {
    pub arch: String,
    pub seeds: (u64, u64),
    pub alphas: Vec<f64>,
    pub accuracies: Vec<f64>,
    pub losses: Vec<f64>,
    /// `max_α (1−α)·acc(0) + α·acc(1) − acc(α)`.
    pub max_drop: f64,
    pub recalibrated: bool,
}

pub const INTERPOLATION_CSV_COLUMNS: [&str; 5] = ["alpha", "accuracy", "loss", "linear_baseline", "drop"];

impl InterpolationReport {
    fn baseline(&self, alpha: f64) -> f64 {
        let a0 = self.accuracies[0];
        let a1 = *self.accuracies.last().unwrap();
        // Exactly `a0` everywhere when both endpoints agree.
        a0 + alpha * (a1 - a0)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(INTERPOLATION_CSV_COLUMNS)?;
        for ((&a, &acc), &loss) in self.alphas.iter().zip(&self.accuracies).zip(&self.losses) {
            let base = self.baseline(a);
            w.write_record([a, acc, loss, base, base - acc].map(|v| v.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(path, e))
    }
}

/// `grid_size` evenly spaced points from 0 to 1 inclusive.
pub fn default_alphas(grid_size: usize) -> Result<Vec<f64>> {
    if grid_size < 2 {
        return Err(Error::Config(format!("the α grid needs at least 2 points, got {grid_size}")));
    }
    let n = (grid_size - 1) as f64;
    Ok((0..grid_size).map(|i| i as f64 / n).collect())
}

/// `θA + α(θB − θA)` on every tensor; running statistics included.
pub fn interpolate(a: &ParamSet, b: &ParamSet, alpha: f64) -> Result<ParamSet> {
    let mut out = a.clone();
    for (path, t) in out.iter_mut() {
        let tb = b.get(path)?;
        t.same_shape(tb)?;
        for (x, &y) in t.data_mut().iter_mut().zip(tb.data()) {
            let xa = *x as f64;
            *x = (xa + alpha * (y as f64 - xa)) as f32;
        }
    }
    Ok(out)
}

/// Replaces running statistics with the cumulative average of batch
/// statistics over one ordered pass through `data`, without weight updates.
pub fn recalibrate_bn(net: &Network, params: &mut ParamSet, data: &Dataset, batch_size: usize) -> Result<()> {
    let has_bn = params
        .paths()
        .any(|p| ParamKind::of_path(p) == ParamKind::RunningMean);
    if !has_bn || data.is_empty() {
        return Ok(());
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    for (i, chunk) in idx.chunks(batch_size.max(1)).enumerate() {
        let (x, _) = data.gather(chunk);
        net.forward_with_momentum(params, &x, Mode::Train, 1.0 / (i + 1) as f64)?;
    }
    Ok(())
}

/// Trains the ticket twice under different data-order/augmentation seeds
/// and evaluates the linear path between the two solutions.
pub fn connectivity_probe(
    ticket: &SparseTicket,
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
    seeds: (u64, u64),
    opts: &ProbeOptions,
) -> Result<InterpolationReport> {
    if seeds.0 == seeds.1 && !opts.allow_same_seed {
        return Err(Error::Usage(format!(
            "connectivity needs two distinct seeds, got {} twice",
            seeds.0
        )));
    }
    let alphas = default_alphas(opts.grid_size)?;
    let run = |seed| {
        let c = TrainConfig { seed, ..cfg.clone() };
        train_ticket(ticket, train, None, &c).map(|o| o.params)
    };
    let theta_a = run(seeds.0)?;
    let theta_b = if seeds.0 == seeds.1 { theta_a.clone() } else { run(seeds.1)? };
    probe_between(ticket, &theta_a, &theta_b, train, test, cfg.batch_size, &alphas, opts.recalibrate_bn, seeds)
}

fn same_weights(a: &ParamSet, b: &ParamSet) -> bool {
    a.iter()
        .filter(|(p, _)| ParamKind::of_path(p).trainable())
        .all(|(p, t)| b.get(p).is_ok_and(|u| t.data().iter().zip(u.data()).all(|(x, y)| x.to_bits() == y.to_bits())))
}

#[allow(clippy::too_many_arguments)]
fn probe_between(
    ticket: &SparseTicket,
    theta_a: &ParamSet,
    theta_b: &ParamSet,
    train: &Dataset,
    test: &Dataset,
    batch_size: usize,
    alphas: &[f64],
    recalibrate: bool,
    seeds: (u64, u64),
) -> Result<InterpolationReport> {
    let net = Network::new(&ticket.arch);
    let mut accuracies = Vec::with_capacity(alphas.len());
    let mut losses = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let (loss, acc) = if alpha == 0.0 {
            evaluate(&net, theta_a, test)?
        } else if alpha == 1.0 {
            evaluate(&net, theta_b, test)?
        } else {
            let mut p = interpolate(theta_a, theta_b, alpha)?;
            // Stored statistics are still valid when the weights did not move.
            if recalibrate && !same_weights(&p, theta_a) {
                recalibrate_bn(&net, &mut p, train, batch_size)?;
            }
            evaluate(&net, &p, test)?
        };
        accuracies.push(acc);
        losses.push(loss);
    }
    let mut report = InterpolationReport {
        arch: ticket.arch.name.clone(),
        seeds,
        alphas: alphas.to_vec(),
        accuracies,
        losses,
        max_drop: 0.0,
        recalibrated: recalibrate,
    };
    report.max_drop = report
        .alphas
        .iter()
        .zip(&report.accuracies)
        .map(|(&a, &acc)| report.baseline(a) - acc)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(report)
}
