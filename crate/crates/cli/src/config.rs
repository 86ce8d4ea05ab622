//! Experiment configuration: a strict JSON schema plus shipped presets.

use std::path::{Path, PathBuf};

use elastic_tickets::arch::{ArchConfig, ArchDescriptor};
use elastic_tickets::data::{load_cifar10, load_mnist, resolve_dir, synth, Dataset, SyntheticSpec, DATA_ENV};
use elastic_tickets::eval::{CompareMethod, ProbeOptions};
use elastic_tickets::ett::{MaskMode, Ordering};
use elastic_tickets::nn::TrainConfig;
use elastic_tickets::prune::ImpConfig;
use elastic_tickets::{Error, Result};
use serde::{Deserialize, Serialize};

pub const PRESETS: [(&str, &str); 3] = [
    ("mnist-mlp-paper", include_str!("../presets/mnist-mlp-paper.json")),
    ("cifar-resnet-desk", include_str!("../presets/cifar-resnet-desk.json")),
    ("cifar-resnet-paper", include_str!("../presets/cifar-resnet-paper.json")),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Directory name under the output root.
    pub name: String,
    /// Architecture every command trains, prunes or transforms into.
    pub arch: ArchConfig,
    /// Where transferred tickets come from (`compare`).
    #[serde(default)]
    pub source_arch: Option<ArchConfig>,
    pub data: DataConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub imp: Option<ImpSection>,
    #[serde(default)]
    pub transform: TransformSection,
    #[serde(default)]
    pub prune: Option<PruneSection>,
    #[serde(default)]
    pub connectivity: ProbeOptions,
    #[serde(default)]
    pub flops: Option<FlopsSection>,
    /// Rows of `compare`.
    #[serde(default)]
    pub methods: Vec<CompareMethod>,
    pub seeds: Vec<u64>,
    pub output: OutputConfig,
    /// Free text carried into the resolved config.
    #[serde(default)]
    pub description: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetName {
    Mnist,
    Cifar10,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub name: DatasetName,
    /// Dataset directory; `ELASTIC_TICKETS_DATA` takes precedence.
    #[serde(default)]
    pub dir: Option<PathBuf>,
    /// Random crop and flip on training batches.
    #[serde(default)]
    pub augmentation: bool,
    /// Keep only the first `n` training samples.
    #[serde(default)]
    pub train_subset: Option<usize>,
    #[serde(default)]
    pub test_subset: Option<usize>,
    /// Generator settings when `name` is `synthetic`.
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
}

/// IMP settings; the training recipe comes from the `train` section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpSection {
    pub rate: f64,
    pub rounds: usize,
    #[serde(default)]
    pub rewind_step: usize,
    #[serde(default)]
    pub train_last: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformSection {
    #[serde(default)]
    pub ordering: Ordering,
    #[serde(default)]
    pub replicated_mask_mode: MaskMode,
    #[serde(default)]
    pub seed: u64,
    /// Explicit per-stage selection; the depth-balanced default otherwise.
    #[serde(default)]
    pub per_stage_selection: Option<Vec<Vec<usize>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneSection {
    /// Overall pruned fraction when no reference ticket is given.
    pub sparsity: f64,
    /// Samples in the SNIP/GraSP scoring batch; `train.batch_size` if unset.
    #[serde(default)]
    pub score_batch: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlopsSection {
    /// Pruned fraction of the sparse run; taken from `--ticket` if absent.
    #[serde(default)]
    pub sparsity: Option<f64>,
    /// Training length relative to one `train.epochs` run.
    #[serde(default = "one")]
    pub steps_multiplier: f64,
    /// Training samples seen; `train.epochs ×` the training split size if
    /// absent.
    #[serde(default)]
    pub samples: Option<u64>,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

/// Looks up a shipped preset by name.
pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

impl ExperimentConfig {
    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("{origin}: {e}")))?;
        Ok(cfg)
    }

    /// A file path, or the name of a shipped preset when no such file exists.
    pub fn load(path_or_preset: &str) -> Result<Self> {
        let path = Path::new(path_or_preset);
        if path.exists() {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            return Self::from_json(&text, &path.display().to_string());
        }
        match preset(path_or_preset) {
            Some(text) => Self::from_json(text, &format!("preset {path_or_preset}")),
            None => Err(Error::Config(format!(
                "--config {path_or_preset}: no such file and no such preset (presets: {})",
                PRESETS.map(|(n, _)| n).join(", ")
            ))),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn target_arch(&self) -> Result<ArchDescriptor> {
        self.arch.resolve().map_err(|e| prefix("arch", e))
    }

    pub fn source_arch(&self) -> Result<ArchDescriptor> {
        self.source_arch
            .as_ref()
            .ok_or_else(|| Error::Config("source_arch is required by this command".into()))?
            .resolve()
            .map_err(|e| prefix("source_arch", e))
    }

    /// Training recipe for one seed, augmentation taken from the data section.
    pub fn train_for(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            augment: self.train.augment || self.data.augmentation,
            ..self.train.clone()
        }
    }

    pub fn imp_for(&self, seed: u64) -> Result<ImpConfig> {
        let imp = self
            .imp
            .as_ref()
            .ok_or_else(|| Error::Config("imp section is required by this command".into()))?;
        Ok(ImpConfig {
            rate: imp.rate,
            rounds: imp.rounds,
            rewind_step: imp.rewind_step,
            train: self.train_for(seed),
            train_last: imp.train_last,
        })
    }

    pub fn rewind_step(&self) -> usize {
        self.imp.as_ref().map_or(0, |i| i.rewind_step)
    }

    /// Dataset directory after the environment override, with a nested
    /// per-dataset folder accepted.
    pub fn data_dir(&self) -> Option<PathBuf> {
        let sub = match self.data.name {
            DatasetName::Mnist => "mnist",
            DatasetName::Cifar10 => "cifar10",
            DatasetName::Synthetic => return None,
        };
        let configured = self.data.dir.clone().unwrap_or_else(|| PathBuf::from("data").join(sub));
        let dir = resolve_dir(&configured);
        Some(if dir.join(sub).is_dir() { dir.join(sub) } else { dir })
    }

    /// Every check that needs no compute: section consistency, recipe
    /// ranges, architectures, and that referenced inputs exist.
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Config(format!("name {:?} must be a non-empty plain directory name", self.name)));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must list at least one seed".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Config(format!("seeds {:?} contain duplicates", self.seeds)));
        }
        self.train.validate()?;
        let arch = self.target_arch()?;
        if self.source_arch.is_some() {
            self.source_arch()?;
        }
        if let Some(imp) = &self.imp {
            if !(imp.rate > 0.0 && imp.rate < 1.0) {
                return Err(Error::Config(format!("imp.rate must lie in (0, 1), got {}", imp.rate)));
            }
            if imp.rounds == 0 {
                return Err(Error::Config("imp.rounds must be at least 1".into()));
            }
        }
        if let Some(p) = &self.prune {
            if !(0.0..1.0).contains(&p.sparsity) {
                return Err(Error::Config(format!("prune.sparsity must lie in [0, 1), got {}", p.sparsity)));
            }
        }
        if let Some(f) = &self.flops {
            if !(f.steps_multiplier > 0.0) {
                return Err(Error::Config(format!("flops.steps_multiplier must be positive, got {}", f.steps_multiplier)));
            }
        }
        if self.connectivity.grid_size < 2 {
            return Err(Error::Config(format!(
                "connectivity.grid_size must be at least 2, got {}",
                self.connectivity.grid_size
            )));
        }
        match self.data.name {
            DatasetName::Synthetic => {
                let spec = self
                    .data
                    .synthetic
                    .as_ref()
                    .ok_or_else(|| Error::Config("data.synthetic is required when data.name is synthetic".into()))?;
                if spec.input_shape != arch.input_shape || spec.num_classes != arch.num_classes {
                    return Err(Error::Config(format!(
                        "data.synthetic produces {:?} samples in {} classes but arch {} takes {:?} and {}",
                        spec.input_shape, spec.num_classes, arch.name, arch.input_shape, arch.num_classes
                    )));
                }
            }
            _ => {
                if self.data.synthetic.is_some() {
                    return Err(Error::Config("data.synthetic is only allowed when data.name is synthetic".into()));
                }
                let dir = self.data_dir().expect("file-backed dataset");
                if !dir.is_dir() {
                    return Err(Error::Config(format!(
                        "data.dir {} does not exist (set data.dir or {DATA_ENV})",
                        dir.display()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Train and test splits with the configured subsets applied.
    pub fn load_data(&self) -> Result<(Dataset, Dataset)> {
        let (train, test) = match self.data.name {
            DatasetName::Synthetic => synth(self.data.synthetic.as_ref().expect("validated"))?,
            DatasetName::Mnist => load_mnist(&self.data_dir().expect("file-backed"))?,
            DatasetName::Cifar10 => load_cifar10(&self.data_dir().expect("file-backed"))?,
        };
        let cut = |d: Dataset, n: Option<usize>| match n {
            Some(n) => d.head(n),
            None => d,
        };
        Ok((cut(train, self.data.train_subset), cut(test, self.data.test_subset)))
    }

    /// Training split size without loading it.
    pub fn train_samples(&self) -> u64 {
        let full = match self.data.name {
            DatasetName::Mnist => 60_000,
            DatasetName::Cifar10 => 50_000,
            DatasetName::Synthetic => self
                .data
                .synthetic
                .as_ref()
                .map_or(0, |s| (s.n_per_class * s.num_classes) as u64),
        };
        self.data.train_subset.map_or(full, |n| full.min(n as u64))
    }
}

fn prefix(section: &str, e: Error) -> Error {
    match e {
        Error::Config(m) => Error::Config(format!("{section}: {m}")),
        other => other,
    }
}
