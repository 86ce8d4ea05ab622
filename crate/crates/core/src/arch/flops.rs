use super::{ArchDescriptor, Node};
use crate::error::{Error, Result};

/// Dense forward multiply-accumulates for one sample.
pub fn forward_macs(arch: &ArchDescriptor) -> u64 {
    let (c, h, w) = match arch.input_shape.as_slice() {
        [c, h, w] => (*c, *h, *w),
        _ => (arch.input_features(), 1, 1),
    };
    let mut shape = (c, h, w);
    walk(&arch.plan(), &mut shape)
}

fn walk(nodes: &[Node], shape: &mut (usize, usize, usize)) -> u64 {
    let mut macs = 0u64;
    for node in nodes {
        match node {
            Node::Conv2d {
                in_ch,
                out_ch,
                kernel,
                stride,
                pad,
                ..
            } => {
                let ho = (shape.1 + 2 * pad - kernel) / stride + 1;
                let wo = (shape.2 + 2 * pad - kernel) / stride + 1;
                macs += (ho * wo * out_ch * in_ch * kernel * kernel) as u64;
                *shape = (*out_ch, ho, wo);
            }
            Node::Dense { inp, out, .. } => {
                macs += (inp * out) as u64;
                *shape = (*out, 1, 1);
            }
            Node::MaxPool2x2 => *shape = (shape.0, shape.1 / 2, shape.2 / 2),
            Node::GlobalAvgPool => *shape = (shape.0, 1, 1),
            Node::Flatten => *shape = (shape.0 * shape.1 * shape.2, 1, 1),
            Node::Residual { main, shortcut } => {
                let mut side = *shape;
                macs += walk(shortcut, &mut side);
                macs += walk(main, shape);
            }
            Node::BatchNorm { .. } | Node::Relu => {}
        }
    }
    macs
}

/// Forward + backward cost of dense training: `3 × forward MACs × samples`.
pub fn dense_training_flops(arch: &ArchDescriptor, samples: u64) -> f64 {
    3.0 * forward_macs(arch) as f64 * samples as f64
}

/// Training FLOPs of a sparse run of `arch` over `samples` examples,
/// `dense × (1 − sparsity) × steps_multiplier`, divided by `reference`.
/// A `None` reference normalizes against the dense run itself.
pub fn estimate_flops(
    arch: &ArchDescriptor,
    samples: u64,
    sparsity: f64,
    steps_multiplier: f64,
    reference: Option<f64>,
) -> Result<f64> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(Error::Domain(format!("sparsity must lie in [0, 1), got {sparsity}")));
    }
    let dense = dense_training_flops(arch, samples);
    let reference = reference.unwrap_or(dense);
    if !(steps_multiplier > 0.0) || !(reference > 0.0) {
        return Err(Error::Domain(format!(
            "FLOPs multiplier and reference must be positive, got {steps_multiplier} and {reference}"
        )));
    }
    Ok(dense * (1.0 - sparsity) * steps_multiplier / reference)
}
