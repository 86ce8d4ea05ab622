//! Global magnitude pruning, iterative magnitude pruning with rewinding, and
//! the pruning-at-rewind baselines (SNIP, GraSP, random permutation,
//! reinitialization), each matched to a reference ticket's sparsity.

mod imp;

pub use imp::{dense_rewind_weights, imp_run, imp_run_with, imp_schedule, ImpConfig, ImpOutcome};
pub use crate::ticket::PruneMethod;

use crate::arch::{ArchDescriptor, ParamSet};
use crate::error::{Error, Result};
use crate::nn::{layers, Mode, Network, MaskSet};
use crate::tensor::{Rng, Substream, Tensor};
use crate::ticket::{reinit_ticket, SparseTicket};

/// Number of pruned entries that sparsity `target` means over `total`
/// entries, rounded to the nearest weight.
pub fn target_count(target: f64, total: usize) -> Result<usize> {
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::Domain(format!("target sparsity {target} is outside [0, 1]")));
    }
    Ok((target * total as f64).round() as usize)
}

/// Prunes surviving entries in ascending `score` order until `count` entries
/// are pruned in total. Ties go to the earlier path, then the lower flat
/// index.
pub fn prune_lowest(scores: &[Vec<f64>], base: &MaskSet, count: usize) -> Result<MaskSet> {
    if scores.len() != base.len() {
        return Err(Error::dim(format!(
            "{} score tensors for {} mask tensors",
            scores.len(),
            base.len()
        )));
    }
    let already = base.pruned();
    if count < already {
        return Err(Error::Domain(format!(
            "cannot prune to {count} entries: {already} are already pruned"
        )));
    }
    if count > base.total() {
        return Err(Error::Domain(format!(
            "cannot prune {count} of {} entries",
            base.total()
        )));
    }
    let mut candidates: Vec<(f64, u32, u32)> = Vec::with_capacity(base.kept());
    for (pi, ((path, m), s)) in base.iter().zip(scores).enumerate() {
        if s.len() != m.len() {
            return Err(Error::dim(format!("{path}: {} scores for {} entries", s.len(), m.len())));
        }
        for (i, (&keep, &v)) in m.bits().iter().zip(s).enumerate() {
            if keep {
                if v.is_nan() {
                    return Err(Error::Domain(format!("{path}[{i}] has a NaN pruning score")));
                }
                // -0.0 and 0.0 must tie.
                candidates.push((v + 0.0, pi as u32, i as u32));
            }
        }
    }
    let newly = count - already;
    let by_key = |a: &(f64, u32, u32), b: &(f64, u32, u32)| {
        a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
    };
    if newly > 0 && newly < candidates.len() {
        candidates.select_nth_unstable_by(newly - 1, by_key);
    }
    let mut out = base.clone();
    let mut masks: Vec<_> = out.iter_mut().map(|(_, m)| m).collect();
    for &(_, pi, i) in &candidates[..newly] {
        masks[pi as usize].bits_mut()[i as usize] = false;
    }
    Ok(out)
}

fn prunable_values(weights: &ParamSet, mask: &MaskSet) -> Result<Vec<Vec<f64>>> {
    mask.paths()
        .map(|p| Ok(weights.get(p)?.data().iter().map(|&v| v as f64).collect()))
        .collect()
}

/// Global magnitude pruning of the surviving weights down to `target`
/// sparsity.
pub fn magnitude_prune(weights: &ParamSet, mask: &MaskSet, target: f64) -> Result<MaskSet> {
    let count = target_count(target, mask.total())?;
    magnitude_prune_count(weights, mask, count)
}

/// [`magnitude_prune`] with the pruned count given directly.
pub fn magnitude_prune_count(weights: &ParamSet, mask: &MaskSet, count: usize) -> Result<MaskSet> {
    let scores: Vec<Vec<f64>> = prunable_values(weights, mask)?
        .into_iter()
        .map(|v| v.into_iter().map(f64::abs).collect())
        .collect();
    prune_lowest(&scores, mask, count)
}

/// One batch for pruning-at-initialization scores.
#[derive(Clone, Debug)]
pub struct ScoreBatch {
    pub x: Tensor,
    pub labels: Vec<usize>,
    /// Multiplies the loss; only the ranking of scores matters, so any
    /// positive value gives the same mask.
    pub loss_scale: f64,
}

impl ScoreBatch {
    pub fn new(x: Tensor, labels: Vec<usize>) -> Self {
        ScoreBatch {
            x,
            labels,
            loss_scale: 1.0,
        }
    }

    /// `batch_size` samples drawn without replacement from the
    /// pruning-batch substream of `seed`.
    pub fn draw(data: &crate::data::Dataset, batch_size: usize, seed: u64) -> Self {
        let mut stream = crate::tensor::Stream::new(seed, Substream::PruningBatch, 0);
        let perm = stream.permutation(data.len());
        let (x, labels) = data.gather(&perm[..batch_size.min(data.len())]);
        ScoreBatch::new(x, labels)
    }
}

/// Gradients of the scaled mean cross-entropy in 64-bit, batch norm in
/// train mode.
pub fn batch_grads(net: &Network, params: &ParamSet<f64>, batch: &ScoreBatch) -> Result<ParamSet<f64>> {
    let mut scratch = params.clone();
    let x = batch.x.cast::<f64>();
    let (logits, cache) = net.forward(&mut scratch, &x, Mode::Train)?;
    let (_, mut d, _) = layers::softmax_cross_entropy(logits.data(), &batch.labels, net.arch().num_classes);
    for g in &mut d {
        *g *= batch.loss_scale;
    }
    net.param_grads(params, &cache, &Tensor::new(logits.shape().to_vec(), d)?)
}

fn flatten(set: &ParamSet<f64>, paths: &[&str]) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for p in paths {
        out.extend_from_slice(set.get(p)?.data());
    }
    Ok(out)
}

fn split_like(flat: &[f64], mask: &MaskSet) -> Vec<Vec<f64>> {
    let mut at = 0;
    mask.iter()
        .map(|(_, m)| {
            let v = flat[at..at + m.len()].to_vec();
            at += m.len();
            v
        })
        .collect()
}

/// SNIP saliency `|θ ⊙ ∂L/∂θ|` per prunable weight.
pub fn snip_scores(net: &Network, weights: &ParamSet, batch: &ScoreBatch) -> Result<Vec<Vec<f64>>> {
    let mask = MaskSet::dense(net.arch());
    let params = weights.cast::<f64>();
    let grads = batch_grads(net, &params, batch)?;
    let paths: Vec<&str> = mask.paths().collect();
    let theta = flatten(&params, &paths)?;
    let g = flatten(&grads, &paths)?;
    let s: Vec<f64> = theta.iter().zip(&g).map(|(t, g)| (t * g).abs()).collect();
    Ok(split_like(&s, &mask))
}

pub fn snip_prune(net: &Network, weights: &ParamSet, batch: &ScoreBatch, target: f64) -> Result<MaskSet> {
    let scores = snip_scores(net, weights, batch)?;
    let mask = MaskSet::dense(net.arch());
    prune_lowest(&scores, &mask, target_count(target, mask.total())?)
}

/// Forward-difference Hessian-vector product `(∇L(θ+εv) − ∇L(θ))/ε`.
pub fn hvp_forward_diff(
    grad: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    theta: &[f64],
    g0: &[f64],
    v: &[f64],
    eps: f64,
) -> Result<Vec<f64>> {
    let shifted: Vec<f64> = theta.iter().zip(v).map(|(t, v)| t + eps * v).collect();
    let g1 = grad(&shifted)?;
    Ok(g1.iter().zip(g0).map(|(a, b)| (a - b) / eps).collect())
}

/// Step used for the GraSP Hessian-vector product: `1e-2·‖θ‖/(‖v‖+1e-12)`.
pub fn grasp_epsilon(theta: &[f64], v: &[f64]) -> f64 {
    let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
    1e-2 * norm(theta) / (norm(v) + 1e-12)
}

/// GraSP scores `−θ ⊙ Hg` over a generic gradient function; the highest
/// scores are pruned first. `eps_scale` multiplies the default step.
pub fn grasp_scores_with(
    grad: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    theta: &[f64],
    eps_scale: f64,
) -> Result<Vec<f64>> {
    let g = grad(theta)?;
    let eps = grasp_epsilon(theta, &g) * eps_scale;
    if eps == 0.0 {
        return Ok(vec![0.0; theta.len()]);
    }
    let hg = hvp_forward_diff(grad, theta, &g, &g, eps)?;
    Ok(theta.iter().zip(&hg).map(|(t, h)| -(t * h)).collect())
}

pub fn grasp_scores(net: &Network, weights: &ParamSet, batch: &ScoreBatch, eps_scale: f64) -> Result<Vec<Vec<f64>>> {
    let mask = MaskSet::dense(net.arch());
    let paths: Vec<String> = mask.paths().map(String::from).collect();
    let base = weights.cast::<f64>();
    let path_refs: Vec<&str> = paths.iter().map(String::as_str).collect();
    let theta = flatten(&base, &path_refs)?;
    let mut grad = |flat: &[f64]| -> Result<Vec<f64>> {
        let mut p = base.clone();
        let mut at = 0;
        for path in &paths {
            let t = p.get_mut(path)?;
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        let g = batch_grads(net, &p, batch)?;
        flatten(&g, &path_refs)
    };
    let s = grasp_scores_with(&mut grad, &theta, eps_scale)?;
    Ok(split_like(&s, &mask))
}

pub fn grasp_prune(net: &Network, weights: &ParamSet, batch: &ScoreBatch, target: f64) -> Result<MaskSet> {
    let scores = grasp_scores(net, weights, batch, 1.0)?;
    let mask = MaskSet::dense(net.arch());
    grasp_mask(&scores, &mask, target_count(target, mask.total())?)
}

fn grasp_mask(scores: &[Vec<f64>], mask: &MaskSet, count: usize) -> Result<MaskSet> {
    let neg: Vec<Vec<f64>> = scores.iter().map(|s| s.iter().map(|v| -v).collect()).collect();
    prune_lowest(&neg, mask, count)
}

/// Shuffles each path's mask with the mask-permutation substream, keeping
/// per-path sparsity; surviving weights are taken from `dense_rewind`.
pub fn random_prune(ticket: &SparseTicket, dense_rewind: &ParamSet, rng: &mut Rng) -> Result<SparseTicket> {
    dense_rewind.check_arch(&ticket.arch)?;
    let mut mask = ticket.mask.clone();
    for (i, (_, m)) in mask.iter_mut().enumerate() {
        let stream = rng.stream_at(Substream::MaskPermutation, i as u64);
        stream.shuffle(m.bits_mut());
    }
    let mut provenance = ticket.provenance.clone();
    provenance.method = PruneMethod::RandomPermute;
    provenance.notes.insert("permutation-seed".into(), rng.seed().to_string());
    SparseTicket::new(&ticket.arch, dense_rewind.clone(), mask, ticket.rewind_step, provenance)
}

/// Inputs the baselines need besides the reference ticket.
pub struct MatchContext<'a> {
    pub net: &'a Network,
    /// Unpruned rewind weights of the reference architecture.
    pub dense_rewind: &'a ParamSet,
    /// Scoring batch for SNIP and GraSP.
    pub batch: Option<&'a ScoreBatch>,
    pub seed: u64,
}

/// A ticket from `method` at the reference ticket's sparsity. Every method
/// prunes the dense rewind weights; RandomPermute and Reinit reuse the
/// reference mask's per-path counts.
pub fn match_sparsity(method: PruneMethod, reference: &SparseTicket, ctx: &MatchContext) -> Result<SparseTicket> {
    let arch: &ArchDescriptor = &reference.arch;
    if ctx.net.arch() != arch {
        return Err(Error::Incompatible(format!(
            "matching context is for {}, reference ticket is {}",
            ctx.net.arch().name,
            arch.name
        )));
    }
    ctx.dense_rewind.check_arch(arch)?;
    let count = reference.mask.pruned();
    let dense = MaskSet::dense(arch);
    let need_batch = || {
        ctx.batch
            .ok_or_else(|| Error::Usage(format!("{method} needs a scoring batch")))
    };
    let mask = match method {
        PruneMethod::Imp => return Ok(reference.clone()),
        PruneMethod::Reinit => return reinit_ticket(reference, &mut Rng::new(ctx.seed)),
        PruneMethod::RandomPermute => return random_prune(reference, ctx.dense_rewind, &mut Rng::new(ctx.seed)),
        PruneMethod::OneShotMagnitude => magnitude_prune_count(ctx.dense_rewind, &dense, count)?,
        PruneMethod::Snip => prune_lowest(&snip_scores(ctx.net, ctx.dense_rewind, need_batch()?)?, &dense, count)?,
        PruneMethod::Grasp => grasp_mask(&grasp_scores(ctx.net, ctx.dense_rewind, need_batch()?, 1.0)?, &dense, count)?,
    };
    let mut provenance = reference.provenance.clone();
    provenance.method = method;
    SparseTicket::new(arch, ctx.dense_rewind.clone(), mask, reference.rewind_step, provenance)
}
