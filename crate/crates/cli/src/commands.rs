//! One function per subcommand. Each validates its config before any
//! compute, writes artifacts under `<out>/<name>/<seed>/` and returns a
//! one-line summary.

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use elastic_tickets::arch::{estimate_flops, init_params, ArchDescriptor};
use elastic_tickets::data::Dataset;
use elastic_tickets::ett::{default_spec, transform, TransformSpec};
use elastic_tickets::eval::{compare, connectivity_probe, evaluate_ticket, transfer_dataset, CompareInputs, CompareMethod};
use elastic_tickets::nn::{train, MaskSet, MetricsRecord, Network};
use elastic_tickets::prune::{dense_rewind_weights, imp_run, magnitude_prune, match_sparsity, MatchContext, ScoreBatch};
use elastic_tickets::tensor::Rng;
use elastic_tickets::ticket::{load_ticket, save_ticket, Provenance, PruneMethod, SparseTicket};
use elastic_tickets::{Error, Result};
use serde::Serialize;

use crate::config::ExperimentConfig;

/// Command-line overrides applied on top of the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, mut cfg: ExperimentConfig) -> ExperimentConfig {
        if let Some(out) = &self.out {
            cfg.output.dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
        }
        cfg
    }

    fn jobs(&self) -> usize {
        self.jobs.unwrap_or(1).max(1)
    }
}

/// Maps `f` over `items` on up to `jobs` threads, keeping input order.
fn par_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    let slots: Mutex<Vec<Option<Result<R>>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    let next = Mutex::new(0usize);
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, items.len().max(1)) {
            scope.spawn(|| loop {
                let k = {
                    let mut n = next.lock().unwrap();
                    *n += 1;
                    *n - 1
                };
                let Some(item) = items.get(k) else { break };
                let r = f(item);
                slots.lock().unwrap()[k] = Some(r);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|r| r.expect("every item ran")).collect()
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

pub fn experiment_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output.dir.join(&cfg.name)
}

pub fn seed_dir(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    experiment_dir(cfg).join(seed.to_string())
}

/// The config as one seed's run sees it.
fn resolved(cfg: &ExperimentConfig, seed: u64) -> ExperimentConfig {
    let mut r = cfg.clone();
    r.seeds = vec![seed];
    r.train = cfg.train_for(seed);
    r.data.dir = cfg.data_dir();
    r
}

/// Creates `<out>/<name>/<seed>/tickets/` and writes the resolved config.
fn prepare_seed(cfg: &ExperimentConfig, seed: u64) -> Result<PathBuf> {
    let dir = seed_dir(cfg, seed);
    mkdir(&dir.join("tickets"))?;
    write(&dir.join("config.resolved.json"), &resolved(cfg, seed).to_json()?)?;
    Ok(dir)
}

fn write_metrics(dir: &Path, records: &[MetricsRecord]) -> Result<()> {
    MetricsRecord::write_csv(records, &dir.join("metrics.csv"))?;
    write_json(&dir.join("metrics.json"), &records)
}

/// Saves a ticket with the seed's resolved config embedded.
fn save(cfg: &ExperimentConfig, seed: u64, mut ticket: SparseTicket, path: &Path) -> Result<SparseTicket> {
    ticket.provenance.config = Some(serde_json::to_value(resolved(cfg, seed))?);
    save_ticket(&ticket, path)?;
    Ok(ticket)
}

fn accuracy(r: &MetricsRecord) -> f64 {
    r.final_test_acc.unwrap_or(f64::NAN)
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn load_checked(path: &Path) -> Result<SparseTicket> {
    if !path.exists() {
        return Err(Error::Config(format!("--ticket {} does not exist", path.display())));
    }
    load_ticket(path)
}

fn require_ticket<'a>(ticket: Option<&'a Path>, command: &str) -> Result<&'a Path> {
    ticket.ok_or_else(|| Error::Config(format!("{command} needs --ticket")))
}

fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    cfg.load_data()
}

/// Dense training from the seeded initialization; the initialization is
/// saved as a dense ticket.
pub fn cmd_train(cfg: &ExperimentConfig, ov: &Overrides) -> Result<String> {
    let arch = cfg.target_arch()?;
    let (tr, te) = load_data(cfg)?;
    let accs = par_map(&cfg.seeds, ov.jobs(), |&seed| {
        let dir = prepare_seed(cfg, seed)?;
        let init = init_params(&arch, &mut Rng::new(seed));
        let out = train(&Network::new(&arch), init.clone(), &MaskSet::dense(&arch), &tr, Some(&te), &cfg.train_for(seed))?;
        let prov = Provenance::new(&arch.name, PruneMethod::Imp, &tr.name, seed);
        save(cfg, seed, SparseTicket::dense(&arch, init, 0, prov)?, &dir.join("tickets/init.eltk"))?;
        let mut record = out.metrics;
        record.label = "dense".into();
        write_metrics(&dir, std::slice::from_ref(&record))?;
        Ok(accuracy(&record))
    })?;
    Ok(format!("train {}: {} seed(s), mean test accuracy {:.4}", arch.name, accs.len(), mean(accs)))
}

pub fn imp_ticket_path(cfg: &ExperimentConfig, seed: u64, round: usize) -> PathBuf {
    seed_dir(cfg, seed).join(format!("tickets/round{round:02}.eltk"))
}

/// Iterative magnitude pruning; one ticket file per round.
pub fn cmd_imp(cfg: &ExperimentConfig, ov: &Overrides) -> Result<String> {
    let arch = cfg.target_arch()?;
    for &seed in &cfg.seeds {
        cfg.imp_for(seed)?;
    }
    let (tr, te) = load_data(cfg)?;
    let finals = par_map(&cfg.seeds, ov.jobs(), |&seed| {
        let dir = prepare_seed(cfg, seed)?;
        let out = imp_run(&arch, &tr, Some(&te), &cfg.imp_for(seed)?)?;
        for (k, t) in out.tickets.iter().enumerate() {
            save(cfg, seed, t.clone(), &imp_ticket_path(cfg, seed, k + 1))?;
        }
        write_metrics(&dir, &out.metrics)?;
        let last = out.tickets.last().expect("at least one round");
        Ok((last.sparsity().overall, accuracy(out.metrics.last().unwrap())))
    })?;
    Ok(format!(
        "imp {}: {} round(s) x {} seed(s), final sparsity {:.4}, last trained mask test accuracy {:.4}",
        arch.name,
        cfg.imp.as_ref().map_or(0, |i| i.rounds),
        finals.len(),
        finals[0].0,
        mean(finals.iter().map(|f| f.1))
    ))
}

/// The transformation the config asks for between two architectures.
pub fn transform_spec(cfg: &ExperimentConfig, source: &ArchDescriptor, target: &ArchDescriptor) -> Result<TransformSpec> {
    let t = &cfg.transform;
    let mut spec = default_spec(source, target, t.ordering)?;
    spec.replicated_mask_mode = t.replicated_mask_mode;
    spec.seed = t.seed;
    if let Some(sel) = &t.per_stage_selection {
        spec.per_stage_selection = sel.clone();
        spec.validate()?;
    }
    Ok(spec)
}

/// Moves a ticket to `arch`, writing `output` (default:
/// `<out>/<name>/<seed>/tickets/<target>.eltk`).
pub fn cmd_transform(cfg: &ExperimentConfig, input: &Path, output: Option<&Path>) -> Result<String> {
    let target = cfg.target_arch()?;
    let ticket = load_checked(input)?;
    let spec = transform_spec(cfg, &ticket.arch, &target)?;
    let seed = ticket.provenance.seed;
    let out = transform(&ticket, &spec)?;
    let path = match output {
        Some(p) => p.to_path_buf(),
        None => prepare_seed(cfg, seed)?.join(format!("tickets/{}.eltk", target.name)),
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        mkdir(parent)?;
    }
    let out = save(cfg, seed, out, &path)?;
    Ok(format!(
        "transform {} -> {} ({:?}): sparsity {:.4} -> {:.4}, wrote {}",
        ticket.arch.name,
        target.name,
        spec.direction,
        ticket.sparsity().overall,
        out.sparsity().overall,
        path.display()
    ))
}

/// A baseline ticket on `arch` at the sparsity of `reference` (or of
/// `prune.sparsity` by one-shot magnitude pruning), then trained.
pub fn cmd_prune(cfg: &ExperimentConfig, method: PruneMethod, reference: Option<&Path>, ov: &Overrides) -> Result<String> {
    if method == PruneMethod::Imp {
        return Err(Error::Usage("IMP tickets come from the imp command".into()));
    }
    let arch = cfg.target_arch()?;
    let reference = reference.map(load_checked).transpose()?;
    if reference.is_none() && cfg.prune.is_none() {
        return Err(Error::Config("prune needs --ticket or a prune.sparsity entry".into()));
    }
    if let Some(r) = &reference {
        if r.arch != arch {
            return Err(Error::Incompatible(format!(
                "reference ticket is {}, config arch is {}; transform it first",
                r.arch.name, arch.name
            )));
        }
    }
    let (tr, te) = load_data(cfg)?;
    let net = Network::new(&arch);
    let accs = par_map(&cfg.seeds, ov.jobs(), |&seed| {
        let dir = prepare_seed(cfg, seed)?;
        let tcfg = cfg.train_for(seed);
        let dense = dense_rewind_weights(&arch, &tr, &tcfg, cfg.rewind_step())?;
        let reference = match &reference {
            Some(r) => r.clone(),
            None => {
                let target = cfg.prune.as_ref().expect("checked").sparsity;
                let mask = magnitude_prune(&dense, &MaskSet::dense(&arch), target)?;
                let prov = Provenance::new(&arch.name, PruneMethod::OneShotMagnitude, &tr.name, seed);
                SparseTicket::new(&arch, dense.clone(), mask, cfg.rewind_step(), prov)?
            }
        };
        let score = cfg.prune.as_ref().and_then(|p| p.score_batch).unwrap_or(tcfg.batch_size);
        let batch = ScoreBatch::draw(&tr, score, seed);
        let ctx = MatchContext {
            net: &net,
            dense_rewind: &dense,
            batch: Some(&batch),
            seed,
        };
        let ticket = match_sparsity(method, &reference, &ctx)?;
        let ticket = save(cfg, seed, ticket, &dir.join(format!("tickets/{method}.eltk")))?;
        let record = evaluate_ticket(&ticket, &tr, &te, &tcfg)?;
        write_metrics(&dir, std::slice::from_ref(&record))?;
        Ok((ticket.sparsity().overall, accuracy(&record)))
    })?;
    Ok(format!(
        "prune {method} on {}: sparsity {:.4}, mean test accuracy {:.4}",
        arch.name,
        accs[0].0,
        mean(accs.iter().map(|a| a.1))
    ))
}

/// Retrains a ticket on the configured dataset once per seed.
pub fn cmd_eval(cfg: &ExperimentConfig, ticket: Option<&Path>, ov: &Overrides) -> Result<String> {
    let ticket = load_checked(require_ticket(ticket, "eval")?)?;
    let (tr, te) = load_data(cfg)?;
    let accs = par_map(&cfg.seeds, ov.jobs(), |&seed| {
        let dir = prepare_seed(cfg, seed)?;
        let record = transfer_dataset(&ticket, &tr, &te, &cfg.train_for(seed))?;
        write_metrics(&dir, std::slice::from_ref(&record))?;
        Ok(accuracy(&record))
    })?;
    Ok(format!(
        "eval {} ({}) on {}: sparsity {:.4}, mean test accuracy {:.4}",
        ticket.arch.name,
        ticket.provenance.method,
        tr.name,
        ticket.sparsity().overall,
        mean(accs)
    ))
}

/// Linear interpolation between two retrainings of a ticket under the first
/// two seeds; written to the first seed's directory.
pub fn cmd_connectivity(cfg: &ExperimentConfig, ticket: Option<&Path>) -> Result<String> {
    let ticket = load_checked(require_ticket(ticket, "connectivity")?)?;
    let seeds = match cfg.seeds.as_slice() {
        [a, b, ..] => (*a, *b),
        [a] if cfg.connectivity.allow_same_seed => (*a, *a),
        _ => return Err(Error::Config("connectivity needs two seeds".into())),
    };
    let (tr, te) = load_data(cfg)?;
    let dir = prepare_seed(cfg, seeds.0)?;
    let report = connectivity_probe(&ticket, &tr, &te, &cfg.train_for(seeds.0), seeds, &cfg.connectivity)?;
    report.write_csv(&dir.join("metrics.csv"))?;
    report.write_json(&dir.join("metrics.json"))?;
    Ok(format!(
        "connectivity {} seeds {}/{}: endpoints {:.4}/{:.4}, max drop {:.4}",
        ticket.arch.name,
        seeds.0,
        seeds.1,
        report.accuracies[0],
        report.accuracies.last().unwrap(),
        report.max_drop
    ))
}

/// Source tickets (IMP on `source_arch`, or `--ticket` for every seed)
/// transferred to `arch` and compared against the configured baselines.
pub fn cmd_compare(cfg: &ExperimentConfig, ticket: Option<&Path>, ov: &Overrides) -> Result<String> {
    let source = cfg.source_arch()?;
    let target = cfg.target_arch()?;
    if cfg.methods.is_empty() {
        return Err(Error::Config("methods must list at least one comparison method".into()));
    }
    let given = ticket.map(load_checked).transpose()?;
    if given.is_none() {
        cfg.imp_for(0)?;
    }
    let need_imp = cfg.methods.contains(&CompareMethod::Imp);
    if need_imp {
        cfg.imp_for(0)?;
    }
    transform_spec(cfg, &given.as_ref().map_or(source.clone(), |t| t.arch.clone()), &target)?;
    let (tr, te) = load_data(cfg)?;

    let last_round = |arch: &ArchDescriptor, seed: u64, file: &str| -> Result<SparseTicket> {
        let t = imp_run(arch, &tr, None, &cfg.imp_for(seed)?)?.tickets.pop().expect("at least one round");
        save(cfg, seed, t, &seed_dir(cfg, seed).join("tickets").join(file))
    };
    let prepared = par_map(&cfg.seeds, ov.jobs(), |&seed| {
        prepare_seed(cfg, seed)?;
        let src = match &given {
            Some(t) => t.clone(),
            None => last_round(&source, seed, "source.eltk")?,
        };
        let imp = if need_imp { Some(last_round(&target, seed, "imp-reference.eltk")?) } else { None };
        Ok((src, imp))
    })?;
    let (sources, imps): (Vec<SparseTicket>, Vec<Option<SparseTicket>>) = prepared.into_iter().unzip();
    let imps: Option<Vec<SparseTicket>> = imps.into_iter().collect();

    let table = compare(&CompareInputs {
        methods: &cfg.methods,
        source_tickets: &sources,
        imp_references: imps.as_deref(),
        target_arch: &target,
        train: &tr,
        test: &te,
        cfg: &cfg.train_for(cfg.seeds[0]),
        seeds: &cfg.seeds,
        ordering: cfg.transform.ordering,
        jobs: ov.jobs(),
    })?;
    let dir = experiment_dir(cfg);
    let mut all = cfg.clone();
    all.data.dir = cfg.data_dir();
    write(&dir.join("config.resolved.json"), &all.to_json()?)?;
    table.write_rows_csv(&dir.join("compare.csv"))?;
    table.write_csv(&dir.join("compare_cells.csv"))?;
    table.write_json(&dir.join("compare.json"))?;
    let best = table
        .rows
        .iter()
        .max_by(|a, b| a.mean_accuracy.total_cmp(&b.mean_accuracy))
        .expect("at least one method");
    Ok(format!(
        "compare {} -> {}: {} method(s) x {} seed(s) at sparsity {:.4}, best {} ({:.4})",
        source.name,
        target.name,
        table.rows.len(),
        cfg.seeds.len(),
        table.rows[0].sparsity,
        best.method,
        best.mean_accuracy
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlopsReport {
    pub arch: String,
    pub samples: u64,
    pub sparsity: f64,
    pub steps_multiplier: f64,
    /// Sparse training FLOPs over dense training FLOPs of one run.
    pub relative_flops: f64,
}

/// Training-cost estimate of a sparse run relative to a dense one.
pub fn flops_report(cfg: &ExperimentConfig, ticket: Option<&Path>) -> Result<FlopsReport> {
    let section = cfg
        .flops
        .clone()
        .ok_or_else(|| Error::Config("flops section is required by this command".into()))?;
    let ticket = ticket.map(load_checked).transpose()?;
    let arch = match &ticket {
        Some(t) => t.arch.clone(),
        None => cfg.target_arch()?,
    };
    let sparsity = match (section.sparsity, &ticket) {
        (Some(s), _) => s,
        (None, Some(t)) => t.sparsity().overall,
        (None, None) => return Err(Error::Config("flops.sparsity or --ticket is required".into())),
    };
    let samples = section
        .samples
        .unwrap_or(cfg.train.epochs as u64 * cfg.train_samples());
    let relative_flops = estimate_flops(&arch, samples, sparsity, section.steps_multiplier, None)?;
    Ok(FlopsReport {
        arch: arch.name,
        samples,
        sparsity,
        steps_multiplier: section.steps_multiplier,
        relative_flops,
    })
}

pub fn cmd_flops(cfg: &ExperimentConfig, ticket: Option<&Path>) -> Result<String> {
    let report = flops_report(cfg, ticket)?;
    let dir = experiment_dir(cfg);
    mkdir(&dir)?;
    write_json(&dir.join("flops.json"), &report)?;
    Ok(format!(
        "flops {}: sparsity {:.4} at {}x steps -> {:.4}x dense training FLOPs",
        report.arch, report.sparsity, report.steps_multiplier, report.relative_flops
    ))
}
