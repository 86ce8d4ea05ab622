//! Datasets: MNIST and CIFAR-10 binary parsers, synthetic generators,
//! normalization and training-time augmentation.
//!
//! Expected directory layouts:
//!
//! ```text
//! <dir>/train-images-idx3-ubyte   <dir>/train-labels-idx1-ubyte
//! <dir>/t10k-images-idx3-ubyte    <dir>/t10k-labels-idx1-ubyte
//!
//! <dir>/data_batch_{1..5}.bin     <dir>/test_batch.bin
//! ```
//!
//! A CIFAR directory may also hold the batches one level down in
//! `cifar-10-batches-bin/`, as unpacked from the official archive.

mod cifar;
mod mnist;
mod synth;

use serde::{Deserialize, Serialize};

pub use cifar::{channel_stats, load_cifar10, CIFAR_MEAN, CIFAR_RECORD, CIFAR_STD};
pub use mnist::{load_mnist, parse_idx_images, parse_idx_labels, MNIST_MEAN, MNIST_STD};
pub use synth::{synth, Generator, SyntheticSpec};

use crate::error::{DatasetError, Error, Result};
use crate::tensor::{numel, Stream, Tensor};

/// Environment variable that overrides every dataset directory.
pub const DATA_ENV: &str = "ELASTIC_TICKETS_DATA";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Test,
}

/// Per-channel affine normalization applied at load time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Random pad-and-crop plus horizontal flip for `[C, H, W]` images.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Augmentation {
    /// Reflection padding before a random crop back to the original size.
    pub pad: usize,
    pub flip: bool,
}

impl Default for Augmentation {
    fn default() -> Self {
        Augmentation { pad: 4, flip: true }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub split: Split,
    images: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
    pub normalization: Option<Normalization>,
}

impl Dataset {
    /// `images` is `[N, ...sample shape]`.
    pub fn new(
        name: impl Into<String>,
        split: Split,
        images: Tensor,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let name = name.into();
        let n = images.shape().first().copied().unwrap_or(0);
        if n != labels.len() {
            return Err(DatasetError::CountMismatch {
                images: n,
                labels: labels.len(),
            }
            .into());
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(DatasetError::LabelRange {
                file: name.clone(),
                label,
                index,
            }
            .into());
        }
        Ok(Dataset {
            name,
            split,
            images,
            labels,
            num_classes,
            normalization: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Shape of one sample.
    pub fn sample_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    fn sample(&self, i: usize) -> &[f32] {
        let s = numel(self.sample_shape());
        &self.images.data()[i * s..(i + 1) * s]
    }

    /// Samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let (images, labels) = self.gather(indices);
        Dataset {
            name: self.name.clone(),
            split: self.split,
            images,
            labels,
            num_classes: self.num_classes,
            normalization: self.normalization.clone(),
        }
    }

    /// The first `n` samples (all of them if fewer).
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// Relabels every sample `y → perm[y]`.
    pub fn permute_labels(&self, perm: &[usize]) -> Result<Dataset> {
        let mut sorted = perm.to_vec();
        sorted.sort_unstable();
        if sorted != (0..self.num_classes).collect::<Vec<_>>() {
            return Err(Error::Config(format!(
                "label permutation {perm:?} is not a permutation of 0..{}",
                self.num_classes
            )));
        }
        let mut out = self.clone();
        out.labels = self.labels.iter().map(|&y| perm[y]).collect();
        Ok(out)
    }

    /// Stacks the samples at `indices` into a `[b, ...sample shape]` batch.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let s = numel(self.sample_shape());
        let mut data = Vec::with_capacity(indices.len() * s);
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.sample_shape());
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (Tensor::new(shape, data).expect("batch shape"), labels)
    }

    /// [`Self::gather`] with per-sample augmentation drawn from `stream`
    /// (crop row offset, crop column offset, flip, in that order).
    pub fn gather_augmented(&self, indices: &[usize], aug: &Augmentation, stream: &mut Stream) -> Result<(Tensor, Vec<usize>)> {
        let (c, h, w) = match self.sample_shape() {
            [c, h, w] => (*c, *h, *w),
            other => {
                return Err(Error::Config(format!(
                    "augmentation needs [channels, height, width] samples, {} has {other:?}",
                    self.name
                )))
            }
        };
        if aug.pad >= h || aug.pad >= w {
            return Err(Error::Config(format!("augmentation pad {} too large for {h}×{w}", aug.pad)));
        }
        let (mut batch, labels) = self.gather(indices);
        let s = c * h * w;
        let mut out = vec![0.0f32; s];
        for chunk in batch.data_mut().chunks_exact_mut(s) {
            let oy = stream.below(2 * aug.pad + 1);
            let ox = stream.below(2 * aug.pad + 1);
            let flip = aug.flip && stream.coin();
            crop_reflect(chunk, c, h, w, aug.pad, oy, ox, &mut out);
            if flip {
                hflip(&mut out, c, h, w);
            }
            chunk.copy_from_slice(&out);
        }
        Ok((batch, labels))
    }
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * n - 2 - i
    } else {
        i
    };
    r as usize
}

/// Crop of the reflection-padded image at offset `(oy, ox)` in padded
/// coordinates.
#[allow(clippy::too_many_arguments)]
fn crop_reflect(src: &[f32], c: usize, h: usize, w: usize, pad: usize, oy: usize, ox: usize, dst: &mut [f32]) {
    for ch in 0..c {
        for y in 0..h {
            let sy = reflect((y + oy) as isize - pad as isize, h);
            for x in 0..w {
                let sx = reflect((x + ox) as isize - pad as isize, w);
                dst[(ch * h + y) * w + x] = src[(ch * h + sy) * w + sx];
            }
        }
    }
}

/// Mirrors a `[C, H, W]` image left to right in place.
pub fn hflip(img: &mut [f32], c: usize, h: usize, w: usize) {
    for row in img[..c * h * w].chunks_exact_mut(w) {
        row.reverse();
    }
}

/// Resolves a dataset directory: `ELASTIC_TICKETS_DATA` wins when set.
pub fn resolve_dir(configured: &std::path::Path) -> std::path::PathBuf {
    match std::env::var_os(DATA_ENV) {
        Some(v) if !v.is_empty() => v.into(),
        _ => configured.to_path_buf(),
    }
}
