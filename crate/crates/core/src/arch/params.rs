use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::ArchDescriptor;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamKind {
    /// Conv or dense weight; the only prunable kind.
    Weight,
    Bias,
    Gamma,
    Beta,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    pub fn trainable(self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }

    pub fn prunable(self) -> bool {
        self == ParamKind::Weight
    }

    /// Weight decay applies to conv and dense weights only.
    pub fn decayed(self) -> bool {
        self == ParamKind::Weight
    }

    pub fn of_path(path: &str) -> ParamKind {
        match path.rsplit('/').next().unwrap_or(path) {
            "weight" => ParamKind::Weight,
            "bias" => ParamKind::Bias,
            "gamma" => ParamKind::Gamma,
            "beta" => ParamKind::Beta,
            "rmean" => ParamKind::RunningMean,
            "rvar" => ParamKind::RunningVar,
            other => panic!("unrecognized parameter path suffix {other:?} in {path:?}"),
        }
    }
}

/// Named parameter tensors (including batch-norm running statistics) in the
/// canonical network order of their architecture.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet<T = f32> {
    tensors: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            tensors: IndexMap::new(),
        }
    }

    /// Zero tensors for every path of `arch`.
    pub fn zeros_like_arch(arch: &ArchDescriptor) -> Self {
        let mut p = ParamSet::new();
        for (path, spec) in arch.param_specs() {
            p.insert(path, Tensor::zeros(&spec.shape));
        }
        p
    }

    pub fn insert(&mut self, path: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(path.into(), t);
    }

    pub fn get(&self, path: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(path)
            .ok_or_else(|| Error::dim(format!("missing parameter {path}")))
    }

    pub fn get_mut(&mut self, path: &str) -> Result<&mut Tensor<T>> {
        self.tensors
            .get_mut(path)
            .ok_or_else(|| Error::dim(format!("missing parameter {path}")))
    }

    pub fn contains(&self, path: &str) -> bool {
        self.tensors.contains_key(path)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Total element count over all tensors.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Checks that paths, order and shapes are exactly those of `arch`.
    pub fn check_arch(&self, arch: &ArchDescriptor) -> Result<()> {
        let specs = arch.param_specs();
        if specs.len() != self.tensors.len() {
            return Err(Error::dim(format!(
                "{} expects {} parameter tensors, found {}",
                arch.name,
                specs.len(),
                self.tensors.len()
            )));
        }
        for ((path, spec), (have, t)) in specs.iter().zip(&self.tensors) {
            if path != have || spec.shape != t.shape() {
                return Err(Error::dim(format!(
                    "{}: expected {path} {:?}, found {have} {:?}",
                    arch.name,
                    spec.shape,
                    t.shape()
                )));
            }
        }
        Ok(())
    }
}

impl<T> FromIterator<(String, Tensor<T>)> for ParamSet<T> {
    fn from_iter<I: IntoIterator<Item = (String, Tensor<T>)>>(iter: I) -> Self {
        ParamSet {
            tensors: iter.into_iter().collect(),
        }
    }
}
