//! Elastic ticket transformations: move a ticket to a deeper or shallower
//! member of its family by replicating or dropping whole units, weights,
//! batch-norm state and masks together.

use serde::{Deserialize, Serialize};

use crate::arch::{ArchDescriptor, ParamSet, UnitRef, UnitRole};
use crate::error::{Error, Result};
use crate::nn::MaskSet;
use crate::tensor::{Stream, Substream};
use crate::ticket::SparseTicket;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Stretch,
    Squeeze,
}

/// Where replicas go within a stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ordering {
    /// All replicas after the last original unit, in selection order.
    #[default]
    Appending,
    /// Each replica right after its source unit.
    Interpolation,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskMode {
    #[default]
    Copy,
    /// Replica masks are shuffled per tensor. Weight values travel with their
    /// mask entries so pruned positions stay zero.
    PermuteWithinLayer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformSpec {
    pub direction: Direction,
    /// Stretch: stage-relative indices of units to replicate, repeated for
    /// multiple copies. Squeeze: indices of units to drop.
    pub per_stage_selection: Vec<Vec<usize>>,
    #[serde(default)]
    pub ordering: Ordering,
    #[serde(default)]
    pub replicated_mask_mode: MaskMode,
    /// Seed of the mask-permutation substream for `PermuteWithinLayer`.
    #[serde(default)]
    pub seed: u64,
    pub source_arch: ArchDescriptor,
    pub target_arch: ArchDescriptor,
}

fn normal_units(arch: &ArchDescriptor, stage: usize) -> Vec<usize> {
    (0..arch.stages[stage].units)
        .filter(|&j| arch.unit_role(stage, j) == UnitRole::Normal)
        .collect()
}

/// Depth-balanced default. Stretch replicates every normal unit as evenly
/// as possible, earlier units taking any extra copy; squeeze drops the
/// latest normal units.
pub fn default_spec(source: &ArchDescriptor, target: &ArchDescriptor, ordering: Ordering) -> Result<TransformSpec> {
    source.check_transferable(target)?;
    let src = source.stage_units();
    let tgt = target.stage_units();
    let more = src.iter().zip(&tgt).any(|(s, t)| t > s);
    let fewer = src.iter().zip(&tgt).any(|(s, t)| t < s);
    if more && fewer {
        return Err(Error::Incompatible(format!(
            "{} → {}: some stages gain units and others lose them ({src:?} vs {tgt:?})",
            source.name, target.name
        )));
    }
    let direction = if fewer { Direction::Squeeze } else { Direction::Stretch };
    let mut selection = Vec::with_capacity(src.len());
    for (s, (&n, &t)) in src.iter().zip(&tgt).enumerate() {
        let normals = normal_units(source, s);
        let sel = if t >= n {
            let extra = t - n;
            if extra > 0 && normals.is_empty() {
                return Err(Error::Incompatible(format!(
                    "{} → {}: stage {s} has no replicable unit but needs {extra} more",
                    source.name, target.name
                )));
            }
            normals.iter().copied().cycle().take(extra).collect()
        } else {
            let drop = n - t;
            if drop > normals.len() {
                return Err(Error::Incompatible(format!(
                    "{} → {}: stage {s} would lose {drop} units but has only {} droppable",
                    source.name,
                    target.name,
                    normals.len()
                )));
            }
            normals[normals.len() - drop..].to_vec()
        };
        selection.push(sel);
    }
    Ok(TransformSpec {
        direction,
        per_stage_selection: selection,
        ordering,
        replicated_mask_mode: MaskMode::Copy,
        seed: 0,
        source_arch: source.clone(),
        target_arch: target.clone(),
    })
}

/// One output unit of a stage: the source unit it copies and whether it is
/// a replica (and which one, counting from 0 across the stage).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Slot {
    source: usize,
    replica: Option<usize>,
}

impl TransformSpec {
    /// Checks arithmetic and role invariants against both architectures.
    pub fn validate(&self) -> Result<()> {
        self.source_arch.check_transferable(&self.target_arch)?;
        let stages = self.source_arch.stages.len();
        if self.per_stage_selection.len() != stages {
            return Err(Error::Incompatible(format!(
                "transform selects units for {} stages, {} has {stages}",
                self.per_stage_selection.len(),
                self.source_arch.name
            )));
        }
        for (s, sel) in self.per_stage_selection.iter().enumerate() {
            let n = self.source_arch.stages[s].units;
            let t = self.target_arch.stages[s].units;
            for &u in sel {
                if u >= n {
                    return Err(Error::Invariant(format!(
                        "stage {s} of {} has {n} units, selection names unit {u}",
                        self.source_arch.name
                    )));
                }
                let role = self.source_arch.unit_role(s, u);
                if role != UnitRole::Normal {
                    return Err(Error::Invariant(format!(
                        "unit {u} of stage {s} is a {role:?} unit and cannot be {}",
                        match self.direction {
                            Direction::Stretch => "replicated",
                            Direction::Squeeze => "dropped",
                        }
                    )));
                }
            }
            let expected = match self.direction {
                Direction::Stretch => n + sel.len(),
                Direction::Squeeze => {
                    let mut seen = sel.clone();
                    seen.sort_unstable();
                    seen.dedup();
                    if seen.len() != sel.len() {
                        return Err(Error::Invariant(format!("stage {s} drops a unit twice: {sel:?}")));
                    }
                    n - sel.len()
                }
            };
            if expected != t {
                return Err(Error::Incompatible(format!(
                    "stage {s}: {n} units with selection {sel:?} gives {expected}, {} has {t}",
                    self.target_arch.name
                )));
            }
        }
        Ok(())
    }

    fn slots(&self, stage: usize) -> Vec<Slot> {
        let n = self.source_arch.stages[stage].units;
        let sel = &self.per_stage_selection[stage];
        match self.direction {
            Direction::Squeeze => (0..n)
                .filter(|u| !sel.contains(u))
                .map(|source| Slot { source, replica: None })
                .collect(),
            Direction::Stretch => match self.ordering {
                Ordering::Appending => (0..n)
                    .map(|source| Slot { source, replica: None })
                    .chain(sel.iter().enumerate().map(|(r, &source)| Slot {
                        source,
                        replica: Some(r),
                    }))
                    .collect(),
                Ordering::Interpolation => {
                    let mut out = Vec::with_capacity(n + sel.len());
                    for source in 0..n {
                        out.push(Slot { source, replica: None });
                        for (r, _) in sel.iter().enumerate().filter(|(_, &u)| u == source) {
                            out.push(Slot {
                                source,
                                replica: Some(r),
                            });
                        }
                    }
                    out
                }
            },
        }
    }

    /// The squeeze undoing this stretch: drops exactly the replica positions.
    pub fn inverse(&self) -> Result<TransformSpec> {
        if self.direction != Direction::Stretch {
            return Err(Error::Usage("only stretch transforms have an inverse".into()));
        }
        self.validate()?;
        let per_stage_selection = (0..self.source_arch.stages.len())
            .map(|s| {
                self.slots(s)
                    .iter()
                    .enumerate()
                    .filter(|(_, slot)| slot.replica.is_some())
                    .map(|(pos, _)| pos)
                    .collect()
            })
            .collect();
        Ok(TransformSpec {
            direction: Direction::Squeeze,
            per_stage_selection,
            ordering: self.ordering,
            replicated_mask_mode: MaskMode::Copy,
            seed: self.seed,
            source_arch: self.target_arch.clone(),
            target_arch: self.source_arch.clone(),
        })
    }

    /// Units of the target architecture that are replicas (stretch only).
    pub fn replica_units(&self) -> Result<Vec<UnitRef>> {
        self.validate()?;
        if self.direction != Direction::Stretch {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        for s in 0..self.source_arch.stages.len() {
            for (pos, slot) in self.slots(s).iter().enumerate() {
                if slot.replica.is_some() {
                    out.push(self.target_arch.stage_unit(s, pos)?);
                }
            }
        }
        Ok(out)
    }

    pub fn is_identity(&self) -> bool {
        self.per_stage_selection.iter().all(Vec::is_empty)
    }
}

pub fn inverse(spec: &TransformSpec) -> Result<TransformSpec> {
    spec.inverse()
}

pub fn stretch(ticket: &SparseTicket, spec: &TransformSpec) -> Result<SparseTicket> {
    if spec.direction != Direction::Stretch {
        return Err(Error::Usage("stretch needs a stretch spec".into()));
    }
    apply(ticket, spec)
}

pub fn squeeze(ticket: &SparseTicket, spec: &TransformSpec) -> Result<SparseTicket> {
    if spec.direction != Direction::Squeeze {
        return Err(Error::Usage("squeeze needs a squeeze spec".into()));
    }
    apply(ticket, spec)
}

/// Stretch or squeeze according to the spec's direction.
pub fn transform(ticket: &SparseTicket, spec: &TransformSpec) -> Result<SparseTicket> {
    apply(ticket, spec)
}

fn apply(ticket: &SparseTicket, spec: &TransformSpec) -> Result<SparseTicket> {
    spec.validate()?;
    if ticket.arch != spec.source_arch {
        return Err(Error::Incompatible(format!(
            "transform expects a {} ticket, got {}",
            spec.source_arch.name, ticket.arch.name
        )));
    }
    let src = &spec.source_arch;
    let tgt = &spec.target_arch;
    let mut weights = ParamSet::new();
    let mut mask = MaskSet::new();
    let mut replica_counter = 0u64;
    for u in tgt.units() {
        let (from, replica) = match u.stage {
            None => (u, None),
            Some(s) => {
                let slot = spec.slots(s)[u.unit];
                (src.stage_unit(s, slot.source)?, slot.replica)
            }
        };
        let permute = replica.is_some() && spec.replicated_mask_mode == MaskMode::PermuteWithinLayer;
        copy_unit(ticket, src, &from, tgt, &u, &mut weights, &mut mask, permute.then(|| {
            replica_counter += 1;
            (spec.seed, replica_counter - 1)
        }))?;
    }
    let mut provenance = ticket.provenance.clone();
    provenance.transforms.push(spec.clone());
    let out = SparseTicket {
        arch: tgt.clone(),
        rewind_weights: weights,
        mask,
        rewind_step: ticket.rewind_step,
        provenance,
        created_at: ticket.created_at.clone(),
    };
    out.validate()?;
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn copy_unit(
    ticket: &SparseTicket,
    src: &ArchDescriptor,
    from: &UnitRef,
    tgt: &ArchDescriptor,
    to: &UnitRef,
    weights: &mut ParamSet,
    mask: &mut MaskSet,
    permute: Option<(u64, u64)>,
) -> Result<()> {
    let from_prefix = src.unit_prefix(from);
    let to_prefix = tgt.unit_prefix(to);
    let from_specs = src.unit_params(from);
    let to_specs = tgt.unit_params(to);
    if from_specs.len() != to_specs.len() {
        return Err(Error::Incompatible(format!(
            "{from_prefix} of {} and {to_prefix} of {} hold different parameters",
            src.name, tgt.name
        )));
    }
    for (fs, ts) in from_specs.iter().zip(&to_specs) {
        if fs.name != ts.name || fs.shape != ts.shape {
            return Err(Error::Incompatible(format!(
                "{from_prefix}/{} {:?} cannot fill {to_prefix}/{} {:?}",
                fs.name, fs.shape, ts.name, ts.shape
            )));
        }
        let from_path = format!("{from_prefix}/{}", fs.name);
        let to_path = format!("{to_prefix}/{}", ts.name);
        let mut w = ticket.rewind_weights.get(&from_path)?.clone();
        if let Some(m) = ticket.mask.get(&from_path) {
            let mut m = m.clone();
            if let Some((seed, replica)) = permute {
                let perm = Stream::new(seed, Substream::MaskPermutation, replica).permutation(m.len());
                let (bits, vals) = (m.bits().to_vec(), w.data().to_vec());
                for (dst, &from_idx) in perm.iter().enumerate() {
                    m.bits_mut()[dst] = bits[from_idx];
                    w.data_mut()[dst] = vals[from_idx];
                }
            }
            mask.insert(to_path.clone(), m);
        }
        weights.insert(to_path, w);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resnet20_to_32_replicates_b1_b2_once() {
        let a = ArchDescriptor::resnet_cifar(20).unwrap();
        let b = ArchDescriptor::resnet_cifar(32).unwrap();
        let s = default_spec(&a, &b, Ordering::Appending).unwrap();
        assert_eq!(s.direction, Direction::Stretch);
        assert_eq!(s.per_stage_selection, vec![vec![1, 2]; 3]);
        let slots: Vec<_> = s.slots(0).iter().map(|x| x.source).collect();
        assert_eq!(slots, [0, 1, 2, 1, 2]);
        assert_eq!(s.inverse().unwrap().per_stage_selection, vec![vec![3, 4]; 3]);

        let s = default_spec(&a, &b, Ordering::Interpolation).unwrap();
        let slots: Vec<_> = s.slots(0).iter().map(|x| x.source).collect();
        assert_eq!(slots, [0, 1, 1, 2, 2]);
        assert_eq!(s.inverse().unwrap().per_stage_selection, vec![vec![2, 4]; 3]);
    }

    #[test]
    fn resnet32_to_20_drops_latest() {
        let a = ArchDescriptor::resnet_cifar(32).unwrap();
        let b = ArchDescriptor::resnet_cifar(20).unwrap();
        let s = default_spec(&a, &b, Ordering::Appending).unwrap();
        assert_eq!(s.direction, Direction::Squeeze);
        assert_eq!(s.per_stage_selection, vec![vec![3, 4]; 3]);
    }

    #[test]
    fn uneven_replication_favours_early_units() {
        let a = ArchDescriptor::resnet_custom(&[3], &[16]).unwrap();
        let b = ArchDescriptor::resnet_custom(&[6], &[16]).unwrap();
        let s = default_spec(&a, &b, Ordering::Appending).unwrap();
        assert_eq!(s.per_stage_selection, vec![vec![1, 2, 1]]);
    }

    #[test]
    fn identity_spec_is_empty() {
        let a = ArchDescriptor::resnet_cifar(20).unwrap();
        let s = default_spec(&a, &a, Ordering::Appending).unwrap();
        assert!(s.is_identity());
        assert!(s.inverse().unwrap().is_identity());
    }

    #[test]
    fn mixed_directions_rejected() {
        let a = ArchDescriptor::resnet_custom(&[3, 2], &[16, 32]).unwrap();
        let b = ArchDescriptor::resnet_custom(&[2, 3], &[16, 32]).unwrap();
        assert!(matches!(default_spec(&a, &b, Ordering::Appending), Err(Error::Incompatible(_))));
    }

    #[test]
    fn dropping_downsampling_unit_is_invariant_violation() {
        let a = ArchDescriptor::resnet_cifar(20).unwrap();
        let b = ArchDescriptor::resnet_custom(&[2, 3, 3], &[16, 32, 64]).unwrap();
        let mut s = default_spec(&a, &b, Ordering::Appending).unwrap();
        s.per_stage_selection[0] = vec![0];
        assert!(matches!(s.validate(), Err(Error::Invariant(_))));
    }

    #[test]
    fn mlp2_to_mlp3() {
        let a = ArchDescriptor::mlp(2).unwrap();
        let b = ArchDescriptor::mlp(3).unwrap();
        let s = default_spec(&a, &b, Ordering::Appending).unwrap();
        assert_eq!(s.per_stage_selection, vec![vec![0], vec![]]);
    }
}
