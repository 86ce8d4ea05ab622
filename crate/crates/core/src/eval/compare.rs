use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::evaluate_ticket;
use crate::arch::{ArchDescriptor, ParamSet};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::ett::{default_spec, transform, Ordering, TransformSpec};
use crate::nn::{MaskSet, Network, TrainConfig};
use crate::prune::{dense_rewind_weights, match_sparsity, prune_lowest, random_prune, snip_scores, MatchContext, ScoreBatch};
use crate::tensor::Rng;
use crate::ticket::{reinit_ticket, Provenance, PruneMethod, SparseTicket};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompareMethod {
    /// The source ticket moved to the target depth.
    Ett,
    /// The target's own IMP ticket.
    Imp,
    Snip,
    Grasp,
    OneShotMagnitude,
    RandomPermute,
    /// Transformed mask, freshly initialized weights.
    Reinit,
    /// Transformed dense source weights under a per-layer shuffled mask.
    SourceInitRandomMask,
    /// Shuffled mask and fresh weights.
    RandomMaskRandomInit,
    /// Transformed ticket whose replica masks are chosen by SNIP.
    EttSnipReplicas,
}

impl CompareMethod {
    pub const ALL: [CompareMethod; 10] = [
        CompareMethod::Ett,
        CompareMethod::Imp,
        CompareMethod::Snip,
        CompareMethod::Grasp,
        CompareMethod::OneShotMagnitude,
        CompareMethod::RandomPermute,
        CompareMethod::Reinit,
        CompareMethod::SourceInitRandomMask,
        CompareMethod::RandomMaskRandomInit,
        CompareMethod::EttSnipReplicas,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CompareMethod::Ett => "ett",
            CompareMethod::Imp => "imp",
            CompareMethod::Snip => "snip",
            CompareMethod::Grasp => "grasp",
            CompareMethod::OneShotMagnitude => "one-shot-magnitude",
            CompareMethod::RandomPermute => "random-permute",
            CompareMethod::Reinit => "reinit",
            CompareMethod::SourceInitRandomMask => "source-init-random-mask",
            CompareMethod::RandomMaskRandomInit => "random-mask-random-init",
            CompareMethod::EttSnipReplicas => "ett-snip-replicas",
        }
    }
}

impl fmt::Display for CompareMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CompareMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CompareMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown comparison method {s:?}")))
    }
}

pub struct CompareInputs<'a> {
    pub methods: &'a [CompareMethod],
    /// One source ticket per seed.
    pub source_tickets: &'a [SparseTicket],
    /// The target's IMP tickets per seed; required by [`CompareMethod::Imp`].
    pub imp_references: Option<&'a [SparseTicket]>,
    pub target_arch: &'a ArchDescriptor,
    pub train: &'a Dataset,
    pub test: &'a Dataset,
    pub cfg: &'a TrainConfig,
    pub seeds: &'a [u64],
    pub ordering: Ordering,
    pub jobs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCell {
    pub method: CompareMethod,
    pub seed: u64,
    pub pruned: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: CompareMethod,
    pub source_arch: String,
    pub target_arch: String,
    /// Mean overall sparsity across seeds.
    pub sparsity: f64,
    pub mean_accuracy: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub std_accuracy: f64,
    /// Every seed's ticket lies within one weight of the transformed
    /// reference ticket of that seed.
    pub matched: bool,
    pub accuracies: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub seeds: Vec<u64>,
    /// Pruned counts of the transformed reference ticket, per seed.
    pub reference_pruned: Vec<usize>,
    pub rows: Vec<ComparisonRow>,
    pub cells: Vec<ComparisonCell>,
}

pub const COMPARISON_CSV_COLUMNS: [&str; 8] =
    ["method", "source_arch", "target_arch", "seed", "pruned", "total", "sparsity", "accuracy"];

/// Column order of [`ComparisonTable::write_rows_csv`].
pub const COMPARISON_ROW_CSV_COLUMNS: [&str; 8] = [
    "method",
    "source_arch",
    "target_arch",
    "sparsity",
    "mean_accuracy",
    "std_accuracy",
    "matched",
    "seeds",
];

impl ComparisonTable {
    pub fn row(&self, method: CompareMethod) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// One line per (method, seed) cell.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(COMPARISON_CSV_COLUMNS)?;
        for c in &self.cells {
            let row = self.row(c.method).expect("every cell has a row");
            w.write_record([
                c.method.to_string(),
                row.source_arch.clone(),
                row.target_arch.clone(),
                c.seed.to_string(),
                c.pruned.to_string(),
                c.total.to_string(),
                (c.pruned as f64 / c.total as f64).to_string(),
                c.accuracy.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// One line per method, aggregated over seeds.
    pub fn write_rows_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(COMPARISON_ROW_CSV_COLUMNS)?;
        for r in &self.rows {
            w.write_record([
                r.method.to_string(),
                r.source_arch.clone(),
                r.target_arch.clone(),
                r.sparsity.to_string(),
                r.mean_accuracy.to_string(),
                r.std_accuracy.to_string(),
                r.matched.to_string(),
                r.accuracies.len().to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

struct SeedContext {
    spec: TransformSpec,
    ett: SparseTicket,
    target_dense: ParamSet,
    /// Dense source rewind weights moved to the target depth.
    source_dense_moved: ParamSet,
}

fn seed_context(inputs: &CompareInputs, i: usize) -> Result<SeedContext> {
    let source = &inputs.source_tickets[i];
    let seed_cfg = TrainConfig {
        seed: inputs.seeds[i],
        ..inputs.cfg.clone()
    };
    let spec = default_spec(&source.arch, inputs.target_arch, inputs.ordering)?;
    let ett = transform(source, &spec)?;
    let target_dense = dense_rewind_weights(inputs.target_arch, inputs.train, &seed_cfg, source.rewind_step)?;
    let source_dense = dense_rewind_weights(&source.arch, inputs.train, &seed_cfg, source.rewind_step)?;
    let dense_ticket = SparseTicket::dense(
        &source.arch,
        source_dense,
        source.rewind_step,
        Provenance::new(&source.arch.name, PruneMethod::Imp, &inputs.train.name, inputs.seeds[i]),
    )?;
    let source_dense_moved = transform(&dense_ticket, &spec)?.rewind_weights;
    Ok(SeedContext {
        spec,
        ett,
        target_dense,
        source_dense_moved,
    })
}

fn build_ticket(method: CompareMethod, inputs: &CompareInputs, i: usize, ctx: &SeedContext) -> Result<SparseTicket> {
    let seed = inputs.seeds[i];
    let net = Network::new(inputs.target_arch);
    let batch = ScoreBatch::draw(inputs.train, inputs.cfg.batch_size, seed);
    let matching = MatchContext {
        net: &net,
        dense_rewind: &ctx.target_dense,
        batch: Some(&batch),
        seed,
    };
    let baseline = |m: PruneMethod| match_sparsity(m, &ctx.ett, &matching);
    match method {
        CompareMethod::Ett => Ok(ctx.ett.clone()),
        CompareMethod::Imp => {
            let refs = inputs
                .imp_references
                .ok_or_else(|| Error::Usage("the imp row needs the target's IMP tickets".into()))?;
            let t = refs
                .get(i)
                .ok_or_else(|| Error::Usage(format!("no IMP ticket for seed {seed}")))?;
            if &t.arch != inputs.target_arch {
                return Err(Error::Incompatible(format!(
                    "IMP reference is {}, target is {}",
                    t.arch.name, inputs.target_arch.name
                )));
            }
            Ok(t.clone())
        }
        CompareMethod::Snip => baseline(PruneMethod::Snip),
        CompareMethod::Grasp => baseline(PruneMethod::Grasp),
        CompareMethod::OneShotMagnitude => baseline(PruneMethod::OneShotMagnitude),
        CompareMethod::RandomPermute => baseline(PruneMethod::RandomPermute),
        CompareMethod::Reinit => baseline(PruneMethod::Reinit),
        CompareMethod::SourceInitRandomMask => random_prune(&ctx.ett, &ctx.source_dense_moved, &mut Rng::new(seed)),
        CompareMethod::RandomMaskRandomInit => {
            let shuffled = random_prune(&ctx.ett, &ctx.target_dense, &mut Rng::new(seed))?;
            reinit_ticket(&shuffled, &mut Rng::new(seed ^ 0x5EED))
        }
        CompareMethod::EttSnipReplicas => ett_snip_replicas(&net, ctx, &batch),
    }
}

fn ett_snip_replicas(net: &Network, ctx: &SeedContext, batch: &ScoreBatch) -> Result<SparseTicket> {
    let arch = net.arch();
    let prefixes: Vec<String> = ctx
        .spec
        .replica_units()?
        .iter()
        .map(|u| format!("{}/", arch.unit_prefix(u)))
        .collect();
    let is_replica = |p: &str| prefixes.iter().any(|x| p.starts_with(x.as_str()));
    let mut scores = snip_scores(net, &ctx.source_dense_moved, batch)?;
    let mut base = MaskSet::new();
    for ((path, m), s) in ctx.ett.mask.iter().zip(&mut scores) {
        if is_replica(path) {
            base.insert(path, crate::nn::Mask::ones(m.shape()));
        } else {
            base.insert(path, m.clone());
            s.iter_mut().for_each(|v| *v = f64::INFINITY);
        }
    }
    let mask = prune_lowest(&scores, &base, ctx.ett.mask.pruned())?;
    let mut weights = ctx.ett.rewind_weights.clone();
    for (path, t) in weights.iter_mut() {
        if is_replica(path) {
            *t = ctx.source_dense_moved.get(path)?.clone();
        }
    }
    let mut provenance = ctx.ett.provenance.clone();
    provenance.method = PruneMethod::Snip;
    provenance.notes.insert("replica-masks".into(), "snip".into());
    SparseTicket::new(arch, weights, mask, ctx.ett.rewind_step, provenance)
}

/// Trains every (method, seed) cell, baselines matched to the sparsity of
/// the transformed source ticket, and aggregates over seeds.
pub fn compare(inputs: &CompareInputs) -> Result<ComparisonTable> {
    if inputs.source_tickets.len() != inputs.seeds.len() {
        return Err(Error::Usage(format!(
            "{} source tickets for {} seeds",
            inputs.source_tickets.len(),
            inputs.seeds.len()
        )));
    }
    let contexts: Vec<SeedContext> = (0..inputs.seeds.len())
        .map(|i| seed_context(inputs, i))
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, usize)> = (0..inputs.methods.len())
        .flat_map(|m| (0..inputs.seeds.len()).map(move |i| (m, i)))
        .collect();
    let results: Mutex<Vec<Option<Result<ComparisonCell>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    let next = Mutex::new(0usize);
    let run_cell = |(m, i): (usize, usize)| -> Result<ComparisonCell> {
        let method = inputs.methods[m];
        let ticket = build_ticket(method, inputs, i, &contexts[i])?;
        let cfg = TrainConfig {
            seed: inputs.seeds[i],
            ..inputs.cfg.clone()
        };
        let record = evaluate_ticket(&ticket, inputs.train, inputs.test, &cfg)?;
        Ok(ComparisonCell {
            method,
            seed: inputs.seeds[i],
            pruned: ticket.mask.pruned(),
            total: ticket.mask.total(),
            accuracy: record.final_test_acc.unwrap_or(f64::NAN),
        })
    };
    std::thread::scope(|scope| {
        for _ in 0..inputs.jobs.clamp(1, jobs.len().max(1)) {
            scope.spawn(|| loop {
                let k = {
                    let mut n = next.lock().unwrap();
                    let k = *n;
                    *n += 1;
                    k
                };
                let Some(&job) = jobs.get(k) else { break };
                let r = run_cell(job);
                results.lock().unwrap()[k] = Some(r);
            });
        }
    });
    let cells: Vec<ComparisonCell> = results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect::<Result<_>>()?;

    let reference_pruned: Vec<usize> = contexts.iter().map(|c| c.ett.mask.pruned()).collect();
    let source_arch = inputs.source_tickets.first().map(|t| t.arch.name.clone()).unwrap_or_default();
    let rows = inputs
        .methods
        .iter()
        .map(|&method| {
            let mine: Vec<&ComparisonCell> = cells.iter().filter(|c| c.method == method).collect();
            let accuracies: Vec<f64> = mine.iter().map(|c| c.accuracy).collect();
            let (mean_accuracy, std_accuracy) = mean_std(&accuracies);
            let sparsity = mine.iter().map(|c| c.pruned as f64 / c.total as f64).sum::<f64>() / mine.len().max(1) as f64;
            let matched = mine
                .iter()
                .zip(&reference_pruned)
                .all(|(c, &r)| c.pruned.abs_diff(r) <= 1);
            ComparisonRow {
                method,
                source_arch: source_arch.clone(),
                target_arch: inputs.target_arch.name.clone(),
                sparsity,
                mean_accuracy,
                std_accuracy,
                matched,
                accuracies,
            }
        })
        .collect::<Vec<_>>();
    for r in &rows {
        if !r.matched && r.method != CompareMethod::Imp {
            return Err(Error::Invariant(format!(
                "{} tickets miss the reference sparsity by more than one weight",
                r.method
            )));
        }
    }
    Ok(ComparisonTable {
        seeds: inputs.seeds.to_vec(),
        reference_pruned,
        rows,
        cells,
    })
}
