//! Transformation invariants over randomized tickets, shared by the core
//! property tests and the acceptance gate. Each check returns a
//! description of the first violation.

use elastic_tickets::arch::{init_params, ArchDescriptor, UnitRef, UnitRole};
use elastic_tickets::ett::{default_spec, inverse, squeeze, stretch, transform, Ordering, TransformSpec};
use elastic_tickets::nn::MaskSet;
use elastic_tickets::tensor::{Rng, Stream, Substream};
use elastic_tickets::ticket::{PruneMethod, Provenance, SparseTicket};
use elastic_tickets_oracles as oracle;

use super::random_ticket;

pub type Check = Result<(), String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Check {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Source and deeper target of one family with identical stage widths.
/// `extra(s, normals)` picks how many units stage `s` gains.
pub fn pair(s: &mut Stream, mut extra: impl FnMut(&mut Stream, usize) -> usize) -> (ArchDescriptor, ArchDescriptor) {
    let stages = 1 + s.below(3);
    let widths: Vec<usize> = (0..stages).map(|i| 4 + 2 * i + s.below(3)).collect();
    match s.below(3) {
        0 => {
            let src: Vec<usize> = (0..stages).map(|_| 2 + s.below(3)).collect();
            let tgt: Vec<usize> = src.iter().map(|&u| u + extra(s, u - 1)).collect();
            let io = [1 + s.below(3), 8, 8];
            let build = |u: &[usize]| ArchDescriptor::resnet_custom(u, &widths).unwrap().with_io(&io, 10).unwrap();
            (build(&src), build(&tgt))
        }
        1 => {
            let src: Vec<usize> = (0..stages).map(|_| 2 + s.below(3)).collect();
            let tgt: Vec<usize> = src
                .iter()
                .enumerate()
                .map(|(i, &c)| c + extra(s, if i == 0 { c - 1 } else { c - 1 }))
                .collect();
            let fc = 2 + s.below(2);
            let fc_t = fc + extra(s, fc - 1);
            let build = |c: &[usize], f| ArchDescriptor::vgg_custom(c, &widths, f).unwrap().with_io(&[3, 8, 8], 10).unwrap();
            (build(&src, fc), build(&tgt, fc_t))
        }
        _ => {
            let reps: Vec<usize> = (0..stages).map(|_| 2 + s.below(3)).collect();
            let more: Vec<usize> = reps.iter().map(|&r| r + extra(s, r - 1)).collect();
            let build = |r: &[usize]| {
                let mut w = vec![20];
                for (i, &n) in r.iter().enumerate() {
                    w.extend(std::iter::repeat_n(16 + 8 * i, n));
                }
                w.push(10);
                ArchDescriptor::mlp_widths(&w).unwrap()
            };
            (build(&reps), build(&more))
        }
    }
}

pub fn any_pair(s: &mut Stream) -> (ArchDescriptor, ArchDescriptor) {
    pair(s, |s, _| s.below(4))
}

/// Every path pruned to exactly `round(ratio · len)` entries at random
/// positions.
pub fn uniform_ticket(arch: &ArchDescriptor, seed: u64, ratio: f64) -> SparseTicket {
    let mut s = Stream::new(seed, Substream::MaskPermutation, 5);
    let mut mask = MaskSet::dense(arch);
    for (_, m) in mask.iter_mut() {
        let pruned = (ratio * m.len() as f64).round() as usize;
        let perm = s.permutation(m.len());
        for &i in &perm[..pruned] {
            m.bits_mut()[i] = false;
        }
    }
    let w = init_params(arch, &mut Rng::new(seed));
    SparseTicket::new(arch, w, mask, 0, Provenance::new(&arch.name, PruneMethod::Imp, "synthetic", seed)).unwrap()
}

/// Weights (as bits) and masks of one unit, keyed by stage-relative name.
pub fn payload(t: &SparseTicket, u: &UnitRef) -> String {
    let prefix = t.arch.unit_prefix(u);
    let items: Vec<(String, Vec<u32>, Option<Vec<bool>>)> = t
        .arch
        .unit_params(u)
        .iter()
        .map(|p| {
            let path = format!("{prefix}/{}", p.name);
            let w = t.rewind_weights.get(&path).unwrap().data().iter().map(|v| v.to_bits()).collect();
            (p.name.clone(), w, t.mask.get(&path).map(|m| m.bits().to_vec()))
        })
        .collect();
    format!("{items:?}")
}

pub fn stage_payloads(t: &SparseTicket, stage: usize) -> Vec<String> {
    (0..t.arch.stages[stage].units)
        .map(|j| payload(t, &t.arch.stage_unit(stage, j).unwrap()))
        .collect()
}

/// Everything but the appended transform history.
pub fn same_ticket(a: &SparseTicket, b: &SparseTicket) -> bool {
    let bits = |t: &SparseTicket| {
        t.rewind_weights
            .iter()
            .map(|(p, x)| (p.to_string(), x.shape().to_vec(), x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()))
            .collect::<Vec<_>>()
    };
    a.arch == b.arch && bits(a) == bits(b) && a.mask == b.mask && a.rewind_step == b.rewind_step
}

/// Random legal stretch selection: any Normal units, repeats allowed.
pub fn random_stretch(src: &ArchDescriptor, tgt: &ArchDescriptor, s: &mut Stream, ordering: Ordering) -> TransformSpec {
    let mut spec = default_spec(src, tgt, ordering).unwrap();
    for (st, sel) in spec.per_stage_selection.iter_mut().enumerate() {
        let normals: Vec<usize> = (0..src.stages[st].units)
            .filter(|&j| src.unit_role(st, j) == UnitRole::Normal)
            .collect();
        for u in sel.iter_mut() {
            *u = normals[s.below(normals.len())];
        }
    }
    spec
}

fn ordering(interp: bool) -> Ordering {
    if interp {
        Ordering::Interpolation
    } else {
        Ordering::Appending
    }
}

pub const MAX_SPARSITY_SHIFT: f64 = 0.01;

/// Replicating every Normal unit `copies` more times keeps overall
/// sparsity within [`MAX_SPARSITY_SHIFT`] when sparsity is spread evenly
/// over layers.
pub fn equal_replication(seed: u64, ratio: f64, copies: usize) -> Check {
    let mut s = Stream::new(seed, Substream::Init, 0);
    let (src, tgt) = pair(&mut s, |_, normals| copies * normals);
    let t = uniform_ticket(&src, seed, ratio);
    let spec = default_spec(&src, &tgt, Ordering::Appending).map_err(|e| e.to_string())?;
    let out = stretch(&t, &spec).map_err(|e| e.to_string())?;
    let (a, b) = (t.sparsity().overall, out.sparsity().overall);
    ensure((a - b).abs() <= MAX_SPARSITY_SHIFT, || format!("{} -> {}: sparsity {a} -> {b}", src.name, tgt.name))
}

/// `squeeze(stretch(t, s), inverse(s)) == t` apart from the transform history.
pub fn round_trip(seed: u64, interp: bool, keep: f64) -> Check {
    let mut s = Stream::new(seed, Substream::Init, 1);
    let (src, tgt) = any_pair(&mut s);
    let spec = random_stretch(&src, &tgt, &mut s, ordering(interp));
    let t = random_ticket(&src, seed, keep);
    let wide = stretch(&t, &spec).map_err(|e| e.to_string())?;
    ensure(wide.is_valid(), || "stretched ticket is invalid".into())?;
    let inv = inverse(&spec).map_err(|e| e.to_string())?;
    let back = squeeze(&wide, &inv).map_err(|e| e.to_string())?;
    ensure(same_ticket(&back, &t), || format!("{} -> {} -> back differs", src.name, tgt.name))?;
    ensure(back.provenance.transforms.len() == 2, || "history not recorded".into())
}

/// Appending and Interpolation place the same payloads in every stage.
pub fn orderings_agree(seed: u64, keep: f64) -> Check {
    let mut s = Stream::new(seed, Substream::Init, 2);
    let (src, tgt) = any_pair(&mut s);
    let app = random_stretch(&src, &tgt, &mut s, Ordering::Appending);
    let int = TransformSpec {
        ordering: Ordering::Interpolation,
        ..app.clone()
    };
    let t = random_ticket(&src, seed, keep);
    let a = stretch(&t, &app).map_err(|e| e.to_string())?;
    let b = stretch(&t, &int).map_err(|e| e.to_string())?;
    for st in 0..src.stages.len() {
        let same = oracle::multiset(&stage_payloads(&a, st)) == oracle::multiset(&stage_payloads(&b, st));
        ensure(same, || format!("{} -> {}: stage {st} payloads differ", src.name, tgt.name))?;
    }
    Ok(())
}

/// Input, output and downsampling units are carried over bit for bit in
/// both directions.
pub fn invariant_units(seed: u64, keep: f64, interp: bool) -> Check {
    let mut s = Stream::new(seed, Substream::Init, 3);
    let (small, big) = any_pair(&mut s);
    for (src, tgt) in [(&small, &big), (&big, &small)] {
        let t = random_ticket(src, seed, keep);
        let spec = default_spec(src, tgt, ordering(interp)).map_err(|e| e.to_string())?;
        let out = transform(&t, &spec).map_err(|e| e.to_string())?;
        ensure(out.is_valid(), || "transformed ticket is invalid".into())?;
        for u in tgt.units().iter().filter(|u| u.role != UnitRole::Normal) {
            let from = match u.stage {
                None => *src.units().iter().find(|v| v.role == u.role).unwrap(),
                Some(st) => src.stage_unit(st, u.unit).unwrap(),
            };
            ensure(payload(&out, u) == payload(&t, &from), || {
                format!("{} -> {}: {} changed", src.name, tgt.name, tgt.unit_prefix(u))
            })?;
        }
    }
    Ok(())
}
