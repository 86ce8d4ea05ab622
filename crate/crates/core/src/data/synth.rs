use serde::{Deserialize, Serialize};

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::{numel, Stream, Substream, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    /// Isotropic Gaussian clusters around well-separated class centers.
    GaussianBlobs,
    /// Two interleaved spirals in the first two features.
    TwoSpirals,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub generator: Generator,
    /// Training samples per class; the test split gets `⌈n_per_class / 4⌉`
    /// (at least one) per class unless `n_per_class` is zero.
    pub n_per_class: usize,
    pub input_shape: Vec<usize>,
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_classes() -> usize {
    2
}

impl SyntheticSpec {
    pub fn blobs(n_per_class: usize, input_shape: &[usize], num_classes: usize, noise: f64, seed: u64) -> Self {
        SyntheticSpec {
            generator: Generator::GaussianBlobs,
            n_per_class,
            input_shape: input_shape.to_vec(),
            num_classes,
            noise,
            seed,
        }
    }

    pub fn name(&self) -> String {
        let g = match self.generator {
            Generator::GaussianBlobs => "blobs",
            Generator::TwoSpirals => "spirals",
        };
        format!("synth-{g}-{}", self.seed)
    }
}

/// Class centers: standard normal directions scaled to norm 3, drawn first
/// from the dataset's own stream so train and test share them.
fn centers(spec: &SyntheticSpec, features: usize) -> Vec<Vec<f64>> {
    let mut s = Stream::new(spec.seed, Substream::Init, u64::MAX);
    (0..spec.num_classes)
        .map(|_| {
            let v: Vec<f64> = (0..features).map(|_| s.normal_f64()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|x| 3.0 * x / norm).collect()
        })
        .collect()
}

fn generate(spec: &SyntheticSpec, per_class: usize, split: Split) -> Result<Dataset> {
    let features = numel(&spec.input_shape);
    let index = match split {
        Split::Train => 0,
        Split::Test => 1,
    };
    let mut s = Stream::new(spec.seed, Substream::Init, u64::MAX - 1 - index);
    let n = per_class * spec.num_classes;
    let mut data = Vec::with_capacity(n * features);
    let mut labels = Vec::with_capacity(n);
    let centers = centers(spec, features);
    for i in 0..n {
        let class = i % spec.num_classes;
        match spec.generator {
            Generator::GaussianBlobs => {
                for &c in &centers[class] {
                    data.push((c + spec.noise * s.normal_f64()) as f32);
                }
            }
            Generator::TwoSpirals => {
                let t = s.uniform_f64();
                let r = 0.5 + 2.5 * t;
                let angle = 3.0 * std::f64::consts::PI * t + std::f64::consts::PI * class as f64;
                data.push((r * angle.cos() + spec.noise * s.normal_f64()) as f32);
                data.push((r * angle.sin() + spec.noise * s.normal_f64()) as f32);
                for _ in 2..features {
                    data.push((spec.noise * s.normal_f64()) as f32);
                }
            }
        }
        labels.push(class);
    }
    let mut shape = vec![n];
    shape.extend_from_slice(&spec.input_shape);
    Dataset::new(spec.name(), split, Tensor::new(shape, data)?, labels, spec.num_classes)
}

/// Deterministic synthetic `(train, test)` splits.
pub fn synth(spec: &SyntheticSpec) -> Result<(Dataset, Dataset)> {
    if spec.num_classes == 0 || spec.input_shape.is_empty() || spec.input_shape.contains(&0) {
        return Err(Error::Config(format!(
            "synthetic data needs classes and a nonempty input shape, got {} classes, shape {:?}",
            spec.num_classes, spec.input_shape
        )));
    }
    if spec.generator == Generator::TwoSpirals && (spec.num_classes != 2 || numel(&spec.input_shape) < 2) {
        return Err(Error::Config(
            "two-spirals needs exactly 2 classes and at least 2 input features".into(),
        ));
    }
    if !(spec.noise >= 0.0) {
        return Err(Error::Config(format!("synthetic noise must be non-negative, got {}", spec.noise)));
    }
    let test_per_class = if spec.n_per_class == 0 {
        0
    } else {
        spec.n_per_class.div_ceil(4)
    };
    Ok((
        generate(spec, spec.n_per_class, Split::Train)?,
        generate(spec, test_per_class, Split::Test)?,
    ))
}
