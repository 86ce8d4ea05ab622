use super::{ArchDescriptor, ParamKind, ParamSet};
use crate::tensor::{Rng, Substream, Tensor};

/// Kaiming-normal weights (`std = sqrt(2 / fan_in)`), zero biases, unit
/// batch-norm scale, zero shift, running mean 0 and running variance 1.
///
/// Weights are drawn from the `init` substream in canonical path order.
pub fn init_params(arch: &ArchDescriptor, rng: &mut Rng) -> ParamSet {
    let stream = rng.stream(Substream::Init);
    let mut params = ParamSet::new();
    for (path, spec) in arch.param_specs() {
        let t = match spec.kind {
            ParamKind::Weight => {
                let fan_in = fan_in(&spec.shape);
                let std = (2.0 / fan_in as f64).sqrt();
                Tensor::from_fn(&spec.shape, |_| (stream.normal_f64() * std) as f32)
            }
            ParamKind::Gamma | ParamKind::RunningVar => Tensor::ones(&spec.shape),
            ParamKind::Bias | ParamKind::Beta | ParamKind::RunningMean => Tensor::zeros(&spec.shape),
        };
        params.insert(path, t);
    }
    params
}

/// Conv weights are `[out, in, k, k]`; dense weights are `[in, out]`.
pub(crate) fn fan_in(shape: &[usize]) -> usize {
    match shape {
        [_, c, kh, kw] => c * kh * kw,
        [inp, _] => *inp,
        _ => shape.iter().product(),
    }
}
