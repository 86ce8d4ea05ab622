//! Depth-parameterized architecture families.
//!
//! Every network is an input unit, a list of stages, and an output unit.
//! A stage is a run of units with equal feature width; its first unit may be
//! a transition (downsampling, channel change or width change) and all other
//! units map `width → width` and can be replicated or dropped.
//!
//! Parameter paths:
//!
//! ```text
//! input/conv/weight, input/bn/{gamma|beta|rmean|rvar}
//! stage{i}/unit{j}/{conv1|conv2|shortcut}/weight          (ResNet)
//! stage{i}/unit{j}/{bn1|bn2|bnshortcut}/{gamma|beta|rmean|rvar}
//! stage{i}/unit{j}/conv/weight, stage{i}/unit{j}/bn/...     (VGG conv stages)
//! stage{i}/unit{j}/fc/{weight|bias}                         (VGG classifier stage)
//! output/fc/{weight|bias}
//! layer{k}/{weight|bias}                                    (MLP, k in network order)
//! ```

mod flops;
mod init;
mod params;
mod plan;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use flops::{dense_training_flops, estimate_flops, forward_macs};
pub use init::init_params;
pub use params::{ParamKind, ParamSet};
pub use plan::Node;

use crate::error::{Error, Result};

pub const RESNET_WIDTHS: [usize; 3] = [16, 32, 64];
pub const VGG_WIDTHS: [usize; 5] = [64, 128, 256, 512, 512];
pub const MLP_HIDDEN: usize = 300;
pub const MLP_BOTTLENECK: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    ResnetCifar,
    VggCifar,
    Mlp,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::ResnetCifar => "resnet-cifar",
            Family::VggCifar => "vgg-cifar",
            Family::Mlp => "mlp",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageKind {
    /// Basic residual blocks (conv3x3-BN-ReLU-conv3x3-BN + shortcut).
    Residual,
    /// Single conv3x3-BN-ReLU layers, followed by 2×2 max pooling.
    Conv,
    /// Single dense+ReLU layers.
    Dense,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub kind: StageKind,
    pub width: usize,
    pub units: usize,
    /// Whether unit 0 is a transition unit that is never replicated or dropped.
    pub leading_transition: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnitRole {
    Input,
    Downsampling,
    Normal,
    Output,
}

/// A unit of the network; `stage` is `None` for the input and output units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct UnitRef {
    pub stage: Option<usize>,
    pub unit: usize,
    pub role: UnitRole,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub family: Family,
    pub name: String,
    /// Per-sample input shape, `[channels, height, width]`.
    pub input_shape: Vec<usize>,
    /// Output width of the input unit.
    pub stem_width: usize,
    pub stages: Vec<StageSpec>,
    pub num_classes: usize,
}

/// Shape and role of one parameter tensor relative to its unit prefix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

impl ParamSpec {
    fn new(name: impl Into<String>, shape: Vec<usize>, kind: ParamKind) -> Self {
        ParamSpec {
            name: name.into(),
            shape,
            kind,
        }
    }
}

/// Serializable request for a family member, as it appears in configs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub family: Family,
    /// ResNet: total depth `6n+2`; VGG: 11/13/16/19; MLP: the `n` of MLP-n.
    #[serde(default)]
    pub depth: Option<usize>,
    /// Explicit per-stage unit counts (ResNet blocks or VGG convs).
    #[serde(default)]
    pub units: Option<Vec<usize>>,
    /// Explicit stage widths (ResNet/VGG) or full layer widths (MLP).
    #[serde(default)]
    pub widths: Option<Vec<usize>>,
    /// VGG: number of fully connected layers including the output layer.
    #[serde(default)]
    pub fc_layers: Option<usize>,
    #[serde(default)]
    pub input_shape: Option<Vec<usize>>,
    #[serde(default)]
    pub num_classes: Option<usize>,
}

impl ArchConfig {
    pub fn resolve(&self) -> Result<ArchDescriptor> {
        let mut arch = match self.family {
            Family::ResnetCifar => {
                let units = match (&self.units, self.depth) {
                    (Some(u), _) => u.clone(),
                    (None, Some(d)) => vec![resnet_units(d)?; 3],
                    (None, None) => return Err(Error::Config("arch.depth or arch.units required".into())),
                };
                let widths = self.widths.clone().unwrap_or_else(|| RESNET_WIDTHS.to_vec());
                ArchDescriptor::resnet_custom(&units, &widths)?
            }
            Family::VggCifar => {
                let convs = match (&self.units, self.depth) {
                    (Some(u), _) => u.clone(),
                    (None, Some(d)) => vgg_convs(d)?,
                    (None, None) => return Err(Error::Config("arch.depth or arch.units required".into())),
                };
                let widths = self.widths.clone().unwrap_or_else(|| VGG_WIDTHS.to_vec());
                ArchDescriptor::vgg_custom(&convs, &widths, self.fc_layers.unwrap_or(3))?
            }
            Family::Mlp => match (&self.widths, self.depth) {
                (Some(w), _) => ArchDescriptor::mlp_widths(w)?,
                (None, Some(n)) => ArchDescriptor::mlp(n)?,
                (None, None) => return Err(Error::Config("arch.depth or arch.widths required".into())),
            },
        };
        if self.input_shape.is_some() || self.num_classes.is_some() {
            let shape = self.input_shape.clone().unwrap_or_else(|| arch.input_shape.clone());
            let classes = self.num_classes.unwrap_or(arch.num_classes);
            arch = arch.with_io(&shape, classes)?;
        }
        Ok(arch)
    }
}

fn resnet_units(depth: usize) -> Result<usize> {
    if depth < 8 || (depth - 2) % 6 != 0 {
        return Err(Error::Config(format!(
            "ResNet-CIFAR depth must satisfy depth = 6n+2 with n >= 1, got {depth}"
        )));
    }
    Ok((depth - 2) / 6)
}

fn vgg_convs(depth: usize) -> Result<Vec<usize>> {
    Ok(match depth {
        11 => vec![1, 1, 2, 2, 2],
        13 => vec![2, 2, 2, 2, 2],
        16 => vec![2, 2, 3, 3, 3],
        19 => vec![2, 2, 4, 4, 4],
        _ => {
            return Err(Error::Config(format!(
                "VGG depth must be one of 11, 13, 16, 19 (or give per-stage conv counts), got {depth}"
            )))
        }
    })
}

/// Builds a family member from a depth (ResNet, VGG) or width multiplier (MLP).
pub fn derive_arch(family: Family, depth: usize) -> Result<ArchDescriptor> {
    match family {
        Family::ResnetCifar => ArchDescriptor::resnet_cifar(depth),
        Family::VggCifar => ArchDescriptor::vgg_cifar(depth),
        Family::Mlp => ArchDescriptor::mlp(depth),
    }
}

impl ArchDescriptor {
    /// ResNet-`depth` for 32×32×3 inputs, three stages of `(depth-2)/6` blocks.
    pub fn resnet_cifar(depth: usize) -> Result<Self> {
        let n = resnet_units(depth)?;
        Self::resnet_custom(&[n; 3], &RESNET_WIDTHS)
    }

    pub fn resnet_custom(units: &[usize], widths: &[usize]) -> Result<Self> {
        if units.len() != widths.len() || units.is_empty() {
            return Err(Error::Config(format!(
                "ResNet needs one width per stage: units {units:?}, widths {widths:?}"
            )));
        }
        if units.contains(&0) || widths.contains(&0) {
            return Err(Error::Config("every ResNet stage needs at least one block and nonzero width".into()));
        }
        let stages = units
            .iter()
            .zip(widths)
            .map(|(&u, &w)| StageSpec {
                kind: StageKind::Residual,
                width: w,
                units: u,
                leading_transition: true,
            })
            .collect();
        let depth: usize = 2 + 2 * units.iter().sum::<usize>();
        Ok(ArchDescriptor {
            family: Family::ResnetCifar,
            name: format!("resnet{depth}"),
            input_shape: vec![3, 32, 32],
            stem_width: widths[0],
            stages,
            num_classes: 10,
        })
    }

    pub fn vgg_cifar(depth: usize) -> Result<Self> {
        Self::vgg_custom(&vgg_convs(depth)?, &VGG_WIDTHS, 3)
    }

    /// VGG with batch norm. `convs[i]` counts the conv layers of stage `i`
    /// (stage 0 includes the input conv); `fc_layers` counts every fully
    /// connected layer including the output layer.
    pub fn vgg_custom(convs: &[usize], widths: &[usize], fc_layers: usize) -> Result<Self> {
        if convs.len() != widths.len() || convs.is_empty() {
            return Err(Error::Config(format!(
                "VGG needs one width per stage: convs {convs:?}, widths {widths:?}"
            )));
        }
        if convs.contains(&0) || widths.contains(&0) || fc_layers == 0 {
            return Err(Error::Config("VGG stages need at least one conv and fc_layers >= 1".into()));
        }
        let mut stages: Vec<StageSpec> = convs
            .iter()
            .zip(widths)
            .enumerate()
            .map(|(i, (&c, &w))| StageSpec {
                kind: StageKind::Conv,
                width: w,
                units: if i == 0 { c - 1 } else { c },
                leading_transition: i > 0,
            })
            .collect();
        let last = *widths.last().unwrap();
        stages.push(StageSpec {
            kind: StageKind::Dense,
            width: last,
            units: fc_layers - 1,
            leading_transition: false,
        });
        let depth = convs.iter().sum::<usize>() + 3;
        let name = if fc_layers == 3 {
            format!("vgg{depth}")
        } else {
            format!("vgg{depth}-{fc_layers}")
        };
        Ok(ArchDescriptor {
            family: Family::VggCifar,
            name,
            input_shape: vec![3, 32, 32],
            stem_width: widths[0],
            stages,
            num_classes: 10,
        })
    }

    /// MLP-n: layer widths `{784, 300 repeated n times, 100, 10}`.
    pub fn mlp(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("MLP-n needs n >= 1".into()));
        }
        let mut widths = vec![784];
        widths.extend(std::iter::repeat_n(MLP_HIDDEN, n));
        widths.extend([MLP_BOTTLENECK, 10]);
        let mut arch = Self::mlp_widths(&widths)?;
        arch.name = format!("mlp-{n}");
        arch.input_shape = vec![1, 28, 28];
        Ok(arch)
    }

    /// MLP from its full list of layer widths, input first and classes last.
    pub fn mlp_widths(widths: &[usize]) -> Result<Self> {
        if widths.len() < 3 || widths.contains(&0) {
            return Err(Error::Config(format!(
                "MLP widths need input, at least one hidden width, and classes: {widths:?}"
            )));
        }
        let hidden = &widths[1..widths.len() - 1];
        // Stage 0 holds the `stem → stem` layers (possibly none); every width
        // change opens a new stage whose first layer is a transition.
        let mut stages = vec![StageSpec {
            kind: StageKind::Dense,
            width: hidden[0],
            units: 0,
            leading_transition: false,
        }];
        for pair in hidden.windows(2) {
            if pair[0] == pair[1] {
                stages.last_mut().unwrap().units += 1;
            } else {
                stages.push(StageSpec {
                    kind: StageKind::Dense,
                    width: pair[1],
                    units: 1,
                    leading_transition: true,
                });
            }
        }
        Ok(ArchDescriptor {
            family: Family::Mlp,
            name: format!("mlp{widths:?}"),
            input_shape: vec![widths[0]],
            stem_width: hidden[0],
            stages,
            num_classes: *widths.last().unwrap(),
        })
    }

    /// Same architecture for a different input shape / class count.
    pub fn with_io(&self, input_shape: &[usize], num_classes: usize) -> Result<Self> {
        let mut arch = self.clone();
        match self.family {
            Family::Mlp => {
                if input_shape.iter().product::<usize>() == 0 {
                    return Err(Error::Config(format!("empty input shape {input_shape:?}")));
                }
            }
            _ => {
                if input_shape.len() != 3 || input_shape.contains(&0) {
                    return Err(Error::Config(format!(
                        "conv families need a [channels, height, width] input, got {input_shape:?}"
                    )));
                }
            }
        }
        if num_classes == 0 {
            return Err(Error::Config("num_classes must be positive".into()));
        }
        arch.input_shape = input_shape.to_vec();
        arch.num_classes = num_classes;
        Ok(arch)
    }

    pub fn input_features(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// MLP layer widths, input first; `None` for conv families.
    pub fn mlp_layer_widths(&self) -> Option<Vec<usize>> {
        (self.family == Family::Mlp).then(|| {
            let mut w = vec![self.input_features(), self.stem_width];
            for s in &self.stages {
                w.extend(std::iter::repeat_n(s.width, s.units));
            }
            w.push(self.num_classes);
            w
        })
    }

    /// Per-stage unit counts.
    pub fn stage_units(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.units).collect()
    }

    /// Width (channels or features) feeding stage `s`.
    fn stage_input_width(&self, s: usize) -> usize {
        if s == 0 {
            self.stem_width
        } else {
            self.stages[s - 1].width
        }
    }

    pub fn unit_role(&self, stage: usize, unit: usize) -> UnitRole {
        if unit == 0 && self.stages[stage].leading_transition {
            UnitRole::Downsampling
        } else {
            UnitRole::Normal
        }
    }

    /// All units in network order.
    pub fn units(&self) -> Vec<UnitRef> {
        let mut out = vec![UnitRef {
            stage: None,
            unit: 0,
            role: UnitRole::Input,
        }];
        for (s, spec) in self.stages.iter().enumerate() {
            for j in 0..spec.units {
                out.push(UnitRef {
                    stage: Some(s),
                    unit: j,
                    role: self.unit_role(s, j),
                });
            }
        }
        out.push(UnitRef {
            stage: None,
            unit: 0,
            role: UnitRole::Output,
        });
        out
    }

    pub fn stage_unit(&self, stage: usize, unit: usize) -> Result<UnitRef> {
        let spec = self
            .stages
            .get(stage)
            .ok_or_else(|| Error::Usage(format!("{} has no stage {stage}", self.name)))?;
        if unit >= spec.units {
            return Err(Error::Usage(format!(
                "{} stage {stage} has {} units, no unit {unit}",
                self.name, spec.units
            )));
        }
        Ok(UnitRef {
            stage: Some(stage),
            unit,
            role: self.unit_role(stage, unit),
        })
    }

    /// Path prefix shared by every parameter of a unit.
    pub fn unit_prefix(&self, u: &UnitRef) -> String {
        if self.family == Family::Mlp {
            let k = match (u.role, u.stage) {
                (UnitRole::Input, _) => 0,
                (UnitRole::Output, _) => 1 + self.stages.iter().map(|s| s.units).sum::<usize>(),
                (_, Some(s)) => 1 + self.stages[..s].iter().map(|s| s.units).sum::<usize>() + u.unit,
                (_, None) => unreachable!("stage units carry a stage index"),
            };
            return format!("layer{k}");
        }
        match (u.role, u.stage) {
            (UnitRole::Input, _) => "input".into(),
            (UnitRole::Output, _) => "output".into(),
            (_, Some(s)) => format!("stage{s}/unit{}", u.unit),
            (_, None) => unreachable!("stage units carry a stage index"),
        }
    }

    /// Parameters of one unit, names relative to [`Self::unit_prefix`].
    pub fn unit_params(&self, u: &UnitRef) -> Vec<ParamSpec> {
        let c_in = self.input_shape.first().copied().unwrap_or(1);
        match (self.family, u.role) {
            (Family::Mlp, UnitRole::Input) => dense_params("", self.input_features(), self.stem_width),
            (Family::Mlp, UnitRole::Output) => {
                dense_params("", self.stages.last().map_or(self.stem_width, |s| s.width), self.num_classes)
            }
            (_, UnitRole::Input) => {
                let mut v = vec![ParamSpec::new("conv/weight", vec![self.stem_width, c_in, 3, 3], ParamKind::Weight)];
                v.extend(bn_params("bn", self.stem_width));
                v
            }
            (_, UnitRole::Output) => {
                let last = self.stages.last().map_or(self.stem_width, |s| s.width);
                dense_params("fc/", last, self.num_classes)
            }
            (_, _) => {
                let s = u.stage.expect("stage unit");
                let spec = &self.stages[s];
                let w = spec.width;
                let in_w = if u.unit == 0 { self.stage_input_width(s) } else { w };
                match spec.kind {
                    StageKind::Residual => {
                        let mut v = vec![ParamSpec::new("conv1/weight", vec![w, in_w, 3, 3], ParamKind::Weight)];
                        v.extend(bn_params("bn1", w));
                        v.push(ParamSpec::new("conv2/weight", vec![w, w, 3, 3], ParamKind::Weight));
                        v.extend(bn_params("bn2", w));
                        if self.has_projection(s, u.unit) {
                            v.push(ParamSpec::new("shortcut/weight", vec![w, in_w, 1, 1], ParamKind::Weight));
                            v.extend(bn_params("bnshortcut", w));
                        }
                        v
                    }
                    StageKind::Conv => {
                        let mut v = vec![ParamSpec::new("conv/weight", vec![w, in_w, 3, 3], ParamKind::Weight)];
                        v.extend(bn_params("bn", w));
                        v
                    }
                    StageKind::Dense => {
                        let prefix = if self.family == Family::Mlp { "" } else { "fc/" };
                        dense_params(prefix, in_w, w)
                    }
                }
            }
        }
    }

    /// Residual block `unit` of stage `s` needs a 1×1 projection shortcut.
    pub(crate) fn has_projection(&self, s: usize, unit: usize) -> bool {
        unit == 0 && (s > 0 || self.stage_input_width(s) != self.stages[s].width)
    }

    /// `(path, spec)` for every parameter, in canonical (network) order.
    pub fn param_specs(&self) -> Vec<(String, ParamSpec)> {
        let mut out = Vec::new();
        for u in self.units() {
            let prefix = self.unit_prefix(&u);
            for p in self.unit_params(&u) {
                out.push((format!("{prefix}/{}", p.name), p));
            }
        }
        out
    }

    /// Every conv and dense weight, input and output layers included; never
    /// biases, batch-norm affine parameters or running statistics.
    pub fn prunable_paths(&self) -> Vec<String> {
        self.param_specs()
            .into_iter()
            .filter(|(_, p)| p.kind == ParamKind::Weight)
            .map(|(path, _)| path)
            .collect()
    }

    /// Checks that two architectures can exchange units: same family, stage
    /// count, stage kinds and widths, input shape and classes.
    pub fn check_transferable(&self, other: &ArchDescriptor) -> Result<()> {
        let fail = |what: String| Err(Error::Incompatible(format!("{} → {}: {what}", self.name, other.name)));
        if self.family != other.family {
            return fail(format!("family differs ({} vs {})", self.family, other.family));
        }
        if self.stages.len() != other.stages.len() {
            return fail(format!(
                "the number of stages differs ({} vs {})",
                self.stages.len(),
                other.stages.len()
            ));
        }
        if self.input_shape != other.input_shape || self.num_classes != other.num_classes {
            return fail("input shape or class count differs".into());
        }
        if self.stem_width != other.stem_width {
            return fail("input layer width differs".into());
        }
        for (i, (a, b)) in self.stages.iter().zip(&other.stages).enumerate() {
            if a.width != b.width || a.kind != b.kind || a.leading_transition != b.leading_transition {
                return fail(format!("stage {i} width or kind differs"));
            }
        }
        Ok(())
    }

    /// Layer graph executed by [`crate::nn::Network`].
    pub fn plan(&self) -> Vec<Node> {
        plan::build(self)
    }
}

fn dense_params(prefix: &str, inp: usize, out: usize) -> Vec<ParamSpec> {
    vec![
        ParamSpec::new(format!("{prefix}weight"), vec![inp, out], ParamKind::Weight),
        ParamSpec::new(format!("{prefix}bias"), vec![out], ParamKind::Bias),
    ]
}

fn bn_params(prefix: &str, ch: usize) -> Vec<ParamSpec> {
    vec![
        ParamSpec::new(format!("{prefix}/gamma"), vec![ch], ParamKind::Gamma),
        ParamSpec::new(format!("{prefix}/beta"), vec![ch], ParamKind::Beta),
        ParamSpec::new(format!("{prefix}/rmean"), vec![ch], ParamKind::RunningMean),
        ParamSpec::new(format!("{prefix}/rvar"), vec![ch], ParamKind::RunningVar),
    ]
}
