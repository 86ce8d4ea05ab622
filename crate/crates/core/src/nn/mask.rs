use indexmap::IndexMap;

use crate::arch::{ArchDescriptor, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::{numel, Scalar, Tensor};

/// Binary keep/prune mask for one parameter tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    shape: Vec<usize>,
    keep: Vec<bool>,
}

impl Mask {
    pub fn ones(shape: &[usize]) -> Self {
        Mask {
            shape: shape.to_vec(),
            keep: vec![true; numel(shape)],
        }
    }

    pub fn new(shape: Vec<usize>, keep: Vec<bool>) -> Result<Self> {
        if numel(&shape) != keep.len() {
            return Err(Error::dim(format!(
                "mask shape {shape:?} needs {} entries, got {}",
                numel(&shape),
                keep.len()
            )));
        }
        Ok(Mask { shape, keep })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn bits(&self) -> &[bool] {
        &self.keep
    }

    pub fn bits_mut(&mut self) -> &mut [bool] {
        &mut self.keep
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    pub fn kept(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    pub fn pruned(&self) -> usize {
        self.len() - self.kept()
    }

    /// The mask as a 0/1 tensor.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self.keep.iter().map(|&k| if k { T::one() } else { T::zero() }).collect();
        Tensor::new(self.shape.clone(), data).expect("mask shape")
    }
}

/// Masks keyed by prunable parameter path, in canonical order.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct MaskSet {
    masks: IndexMap<String, Mask>,
}

impl MaskSet {
    pub fn new() -> Self {
        MaskSet::default()
    }

    /// All-ones masks over `prunable_paths(arch)`.
    pub fn dense(arch: &ArchDescriptor) -> Self {
        let masks = arch
            .param_specs()
            .into_iter()
            .filter(|(_, s)| s.kind.prunable())
            .map(|(p, s)| (p, Mask::ones(&s.shape)))
            .collect();
        MaskSet { masks }
    }

    pub fn insert(&mut self, path: impl Into<String>, mask: Mask) {
        self.masks.insert(path.into(), mask);
    }

    pub fn get(&self, path: &str) -> Option<&Mask> {
        self.masks.get(path)
    }

    pub fn get_mut(&mut self, path: &str) -> Option<&mut Mask> {
        self.masks.get_mut(path)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mask)> {
        self.masks.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Mask)> {
        self.masks.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.masks.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn total(&self) -> usize {
        self.masks.values().map(Mask::len).sum()
    }

    pub fn kept(&self) -> usize {
        self.masks.values().map(Mask::kept).sum()
    }

    pub fn pruned(&self) -> usize {
        self.total() - self.kept()
    }

    /// Zeroes every pruned entry of `params`.
    pub fn apply<T: Scalar>(&self, params: &mut ParamSet<T>) -> Result<()> {
        for (path, mask) in &self.masks {
            let t = params.get_mut(path)?;
            if t.shape() != mask.shape() {
                return Err(Error::dim(format!(
                    "mask for {path} has shape {:?}, parameter has {:?}",
                    mask.shape(),
                    t.shape()
                )));
            }
            for (v, &k) in t.data_mut().iter_mut().zip(&mask.keep) {
                if !k {
                    *v = T::zero();
                }
            }
        }
        Ok(())
    }

    /// Whether every pruned entry of `params` is exactly zero.
    pub fn absorbs<T: Scalar>(&self, params: &ParamSet<T>) -> bool {
        self.masks.iter().all(|(path, mask)| {
            params.get(path).is_ok_and(|t| {
                t.shape() == mask.shape()
                    && t.data().iter().zip(&mask.keep).all(|(&v, &k)| k || v == T::zero())
            })
        })
    }

    /// Keys equal `prunable_paths(arch)` in order, with matching shapes.
    pub fn check_arch(&self, arch: &ArchDescriptor) -> Result<()> {
        let specs: Vec<_> = arch.param_specs().into_iter().filter(|(_, s)| s.kind.prunable()).collect();
        let paths: Vec<&str> = specs.iter().map(|(p, _)| p.as_str()).collect();
        if !self.paths().eq(paths.iter().copied()) {
            return Err(Error::Invariant(format!(
                "mask paths do not match the prunable paths of {}",
                arch.name
            )));
        }
        for (path, spec) in &specs {
            let m = &self.masks[path.as_str()];
            if m.shape() != spec.shape.as_slice() {
                return Err(Error::dim(format!(
                    "mask for {path} has shape {:?}, {} needs {:?}",
                    m.shape(),
                    arch.name,
                    spec.shape
                )));
            }
        }
        Ok(())
    }

    /// Every kept entry of `self` is also kept in `outer`.
    pub fn is_subset_of(&self, outer: &MaskSet) -> bool {
        self.masks.iter().all(|(p, m)| {
            outer
                .get(p)
                .is_some_and(|o| o.len() == m.len() && m.keep.iter().zip(&o.keep).all(|(&a, &b)| !a || b))
        })
    }
}

impl FromIterator<(String, Mask)> for MaskSet {
    fn from_iter<I: IntoIterator<Item = (String, Mask)>>(iter: I) -> Self {
        MaskSet {
            masks: iter.into_iter().collect(),
        }
    }
}
