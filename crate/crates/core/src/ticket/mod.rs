//! Sparse tickets: rewind weights, a binary mask over the prunable weights,
//! and where they came from.

mod format;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

pub use format::{decode, encode, load_ticket, save_ticket, FORMAT_VERSION, MAGIC};

use crate::arch::{init_params, ArchDescriptor, ParamSet, UnitRole};
use crate::error::{Error, Result};
use crate::ett::TransformSpec;
use crate::nn::MaskSet;
use crate::tensor::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PruneMethod {
    Imp,
    Snip,
    Grasp,
    OneShotMagnitude,
    RandomPermute,
    Reinit,
}

impl PruneMethod {
    pub const ALL: [PruneMethod; 6] = [
        PruneMethod::Imp,
        PruneMethod::Snip,
        PruneMethod::Grasp,
        PruneMethod::OneShotMagnitude,
        PruneMethod::RandomPermute,
        PruneMethod::Reinit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PruneMethod::Imp => "imp",
            PruneMethod::Snip => "snip",
            PruneMethod::Grasp => "grasp",
            PruneMethod::OneShotMagnitude => "one-shot-magnitude",
            PruneMethod::RandomPermute => "random-permute",
            PruneMethod::Reinit => "reinit",
        }
    }
}

impl fmt::Display for PruneMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PruneMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PruneMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown pruning method {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Architecture the mask was originally found on.
    pub source_arch: String,
    pub method: PruneMethod,
    pub imp_round: usize,
    pub dataset: String,
    pub seed: u64,
    /// Every transformation applied since the ticket was found, oldest first.
    #[serde(default)]
    pub transforms: Vec<TransformSpec>,
    /// Resolved experiment configuration that produced the ticket.
    #[serde(default)]
    pub config: Option<serde_json::Value>,
    /// Free-form flags, e.g. which layers were eligible for pruning.
    #[serde(default)]
    pub notes: BTreeMap<String, String>,
}

impl Provenance {
    pub fn new(source_arch: &str, method: PruneMethod, dataset: &str, seed: u64) -> Self {
        let mut notes = BTreeMap::new();
        notes.insert("prunable-layers".into(), "all conv and dense weights, input and output included".into());
        Provenance {
            source_arch: source_arch.into(),
            method,
            imp_round: 0,
            dataset: dataset.into(),
            seed,
            transforms: Vec::new(),
            config: None,
            notes,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparseTicket {
    pub arch: ArchDescriptor,
    pub rewind_weights: ParamSet,
    pub mask: MaskSet,
    /// Optimizer step the rewind weights were captured at.
    pub rewind_step: usize,
    pub provenance: Provenance,
    pub created_at: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Count {
    pub pruned: usize,
    pub total: usize,
}

impl Count {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.pruned as f64 / self.total as f64
        }
    }

    fn add(&mut self, other: Count) {
        self.pruned += other.pruned;
        self.total += other.total;
    }
}

/// Exact pruned/total counts, overall, per mask path and per stage
/// (`input`, `stage{i}`, `output`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub overall: f64,
    pub counts: Count,
    pub per_path: IndexMap<String, Count>,
    pub per_stage: IndexMap<String, Count>,
}

impl SparsityReport {
    pub fn of_mask(arch: &ArchDescriptor, mask: &MaskSet) -> Self {
        let mut per_path = IndexMap::new();
        let mut counts = Count { pruned: 0, total: 0 };
        for (path, m) in mask.iter() {
            let c = Count {
                pruned: m.pruned(),
                total: m.len(),
            };
            counts.add(c);
            per_path.insert(path.to_string(), c);
        }
        let mut per_stage: IndexMap<String, Count> = IndexMap::new();
        for u in arch.units() {
            let key = match (u.role, u.stage) {
                (UnitRole::Input, _) => "input".to_string(),
                (UnitRole::Output, _) => "output".to_string(),
                (_, Some(s)) => format!("stage{s}"),
                (_, None) => continue,
            };
            let prefix = format!("{}/", arch.unit_prefix(&u));
            let entry = per_stage.entry(key).or_insert(Count { pruned: 0, total: 0 });
            for (path, c) in &per_path {
                if path.starts_with(&prefix) {
                    entry.add(*c);
                }
            }
        }
        SparsityReport {
            overall: counts.fraction(),
            counts,
            per_path,
            per_stage,
        }
    }
}

impl SparseTicket {
    /// Dense ticket: all-ones mask over `weights`.
    pub fn dense(arch: &ArchDescriptor, weights: ParamSet, rewind_step: usize, provenance: Provenance) -> Result<Self> {
        let t = SparseTicket {
            arch: arch.clone(),
            rewind_weights: weights,
            mask: MaskSet::dense(arch),
            rewind_step,
            provenance,
            created_at: None,
        };
        t.validate()?;
        Ok(t)
    }

    /// Builds a ticket, zeroing pruned rewind weights first.
    pub fn new(
        arch: &ArchDescriptor,
        mut weights: ParamSet,
        mask: MaskSet,
        rewind_step: usize,
        provenance: Provenance,
    ) -> Result<Self> {
        mask.apply(&mut weights)?;
        let t = SparseTicket {
            arch: arch.clone(),
            rewind_weights: weights,
            mask,
            rewind_step,
            provenance,
            created_at: None,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn sparsity(&self) -> SparsityReport {
        SparsityReport::of_mask(&self.arch, &self.mask)
    }

    /// Checks paths, shapes and `θ ⊙ m = θ` on every prunable path.
    pub fn validate(&self) -> Result<()> {
        self.rewind_weights.check_arch(&self.arch)?;
        self.mask.check_arch(&self.arch)?;
        if !self.mask.absorbs(&self.rewind_weights) {
            return Err(Error::Invariant(format!(
                "{} ticket has nonzero rewind weights at pruned positions",
                self.arch.name
            )));
        }
        Ok(())
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_ok()
    }
}

/// Same mask over freshly initialized weights drawn from `rng`.
pub fn reinit_ticket(ticket: &SparseTicket, rng: &mut Rng) -> Result<SparseTicket> {
    let fresh = init_params(&ticket.arch, rng);
    let mut provenance = ticket.provenance.clone();
    provenance.method = PruneMethod::Reinit;
    provenance.notes.insert("reinit-seed".into(), rng.seed().to_string());
    SparseTicket::new(&ticket.arch, fresh, ticket.mask.clone(), ticket.rewind_step, provenance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mask;

    #[test]
    fn overall_is_exact_ratio() {
        let mut mask = MaskSet::new();
        let mut a = vec![true; 10];
        a[..3].iter_mut().for_each(|k| *k = false);
        let mut b = vec![true; 10];
        b[..5].iter_mut().for_each(|k| *k = false);
        mask.insert("layer0/weight", Mask::new(vec![10], a).unwrap());
        mask.insert("layer1/weight", Mask::new(vec![10], b).unwrap());
        let arch = ArchDescriptor::mlp(1).unwrap();
        let r = SparsityReport::of_mask(&arch, &mask);
        assert_eq!(r.counts, Count { pruned: 8, total: 20 });
        assert_eq!(r.overall, 0.4);
    }

    #[test]
    fn dense_ticket_has_zero_sparsity() {
        let arch = ArchDescriptor::resnet_cifar(8).unwrap();
        let p = init_params(&arch, &mut Rng::new(0));
        let t = SparseTicket::dense(&arch, p, 0, Provenance::new(&arch.name, PruneMethod::Imp, "synth", 0)).unwrap();
        let r = t.sparsity();
        assert_eq!(r.overall, 0.0);
        assert_eq!(r.per_stage.keys().collect::<Vec<_>>(), ["input", "stage0", "stage1", "stage2", "output"]);
    }

    #[test]
    fn reinit_keeps_mask() {
        let arch = ArchDescriptor::mlp(1).unwrap();
        let p = init_params(&arch, &mut Rng::new(0));
        let mut mask = MaskSet::dense(&arch);
        for (_, m) in mask.iter_mut() {
            for (i, k) in m.bits_mut().iter_mut().enumerate() {
                *k = i % 3 == 0;
            }
        }
        let t = SparseTicket::new(&arch, p, mask, 0, Provenance::new("mlp-1", PruneMethod::Imp, "x", 0)).unwrap();
        let a = reinit_ticket(&t, &mut Rng::new(1)).unwrap();
        let b = reinit_ticket(&t, &mut Rng::new(2)).unwrap();
        assert_eq!(a.mask, t.mask);
        assert_eq!(b.mask, t.mask);
        assert!(a.is_valid() && b.is_valid());
        assert_ne!(a.rewind_weights, b.rewind_weights);
        assert_eq!(a.provenance.method, PruneMethod::Reinit);
    }
}
