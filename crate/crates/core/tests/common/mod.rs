#![allow(dead_code)]

pub mod ettcheck;
pub mod gradcheck;

use std::path::PathBuf;

use elastic_tickets::arch::{init_params, ArchDescriptor, ParamKind, ParamSet};
use elastic_tickets::data::{load_mnist, synth, Dataset, SyntheticSpec, DATA_ENV};
use elastic_tickets::nn::{Mask, MaskSet};
use elastic_tickets::tensor::{Rng, Stream, Substream, Tensor};
use elastic_tickets::ticket::{PruneMethod, Provenance, SparseTicket};

/// MNIST from `ELASTIC_TICKETS_DATA` or the default location, if present.
pub fn mnist() -> Option<(Dataset, Dataset)> {
    let dir = std::env::var_os(DATA_ENV)
        .map(PathBuf::from)
        .map(|d| if d.join("mnist").is_dir() { d.join("mnist") } else { d })
        .unwrap_or_else(|| PathBuf::from("/root/data/mnist"));
    match load_mnist(&dir) {
        Ok(d) => Some(d),
        Err(e) => {
            eprintln!("skipping: no MNIST at {} ({e})", dir.display());
            None
        }
    }
}

/// Small separable problem for fast end-to-end runs.
pub fn blobs(n_per_class: usize, features: usize, classes: usize, seed: u64) -> (Dataset, Dataset) {
    synth(&SyntheticSpec::blobs(n_per_class, &[features], classes, 0.5, seed)).unwrap()
}

/// A small ResNet, VGG or MLP with at least one Normal unit per stage where
/// the family allows it.
pub fn random_arch(s: &mut Stream) -> ArchDescriptor {
    let stages = 1 + s.below(3);
    let widths: Vec<usize> = (0..stages).map(|i| 2 + i + s.below(2)).collect();
    match s.below(3) {
        0 => {
            let units: Vec<usize> = (0..stages).map(|_| 1 + s.below(4)).collect();
            ArchDescriptor::resnet_custom(&units, &widths)
                .unwrap()
                .with_io(&[1 + s.below(2), 8, 8], 3)
                .unwrap()
        }
        1 => {
            let convs: Vec<usize> = (0..stages).map(|_| 1 + s.below(3)).collect();
            ArchDescriptor::vgg_custom(&convs, &widths, 1 + s.below(3))
                .unwrap()
                .with_io(&[1, 8, 8], 3)
                .unwrap()
        }
        _ => {
            let mut w = vec![3 + s.below(4)];
            for (i, &width) in widths.iter().enumerate() {
                w.extend(std::iter::repeat_n(width + 2 * i, 1 + s.below(3)));
            }
            w.push(2 + s.below(3));
            ArchDescriptor::mlp_widths(&w).unwrap()
        }
    }
}

/// Ticket with random weights, batch-norm state and mask (`keep` is the
/// per-entry survival probability).
pub fn random_ticket(arch: &ArchDescriptor, seed: u64, keep: f64) -> SparseTicket {
    let mut s = Stream::new(seed, Substream::MaskPermutation, 77);
    let mut w = init_params(arch, &mut Rng::new(seed));
    for (p, t) in w.iter_mut() {
        if ParamKind::of_path(p) != ParamKind::Weight {
            for v in t.data_mut() {
                *v = s.normal_f64() as f32;
            }
        }
        if ParamKind::of_path(p) == ParamKind::RunningVar {
            for v in t.data_mut() {
                *v = v.abs() + 0.5;
            }
        }
    }
    let mut mask = MaskSet::dense(arch);
    for (_, m) in mask.iter_mut() {
        for k in m.bits_mut() {
            *k = s.uniform_f64() < keep;
        }
    }
    let prov = Provenance::new(&arch.name, PruneMethod::Imp, "synthetic", seed);
    SparseTicket::new(arch, w, mask, s.below(50), prov).unwrap()
}

/// Weights (bitwise) and masks agree.
pub fn bits_equal(a: &SparseTicket, b: &SparseTicket) -> bool {
    a.rewind_weights.iter().zip(b.rewind_weights.iter()).all(|((p, x), (q, y))| {
        p == q && x.shape() == y.shape() && x.data().iter().zip(y.data()).all(|(u, v)| u.to_bits() == v.to_bits())
    }) && a.mask == b.mask
}

/// Byte range of an encoded ticket covered by its checksum.
pub fn payload_range(bytes: &[u8]) -> std::ops::Range<usize> {
    let header = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    16 + header..bytes.len() - 4
}

/// Random masked weight tensors as library types and as plain vectors for
/// the oracles.
pub fn prune_instance(s: &mut Stream) -> (ParamSet, MaskSet, Vec<Vec<f64>>, Vec<Vec<bool>>) {
    let (mut p, mut m) = (ParamSet::new(), MaskSet::new());
    let (mut ws, mut ms) = (Vec::new(), Vec::new());
    // Coarse quantization on some instances forces magnitude ties.
    let quantum = [0.0, 0.5, 0.25][s.below(3)];
    for k in 0..1 + s.below(4) {
        let n = 1 + s.below(60);
        let w: Vec<f32> = (0..n)
            .map(|_| {
                let v = s.normal_f64() as f32;
                if quantum > 0.0 {
                    (v / quantum).round() * quantum
                } else {
                    v
                }
            })
            .collect();
        let keep: Vec<bool> = (0..n).map(|_| s.uniform_f64() < 0.8).collect();
        let w: Vec<f32> = w.iter().zip(&keep).map(|(&v, &k)| if k { v } else { 0.0 }).collect();
        p.insert(format!("p{k}/weight"), Tensor::new(vec![n], w.clone()).unwrap());
        m.insert(format!("p{k}/weight"), Mask::new(vec![n], keep.clone()).unwrap());
        ws.push(w.iter().map(|&v| v as f64).collect());
        ms.push(keep);
    }
    (p, m, ws, ms)
}

/// `BBᵀ + n·I` for a random Gaussian `B`.
pub fn random_spd(s: &mut Stream, n: usize) -> Vec<Vec<f64>> {
    let b: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| s.normal_f64()).collect()).collect();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (0..n).map(|k| b[i][k] * b[j][k]).sum::<f64>() + if i == j { n as f64 } else { 0.0 })
                .collect()
        })
        .collect()
}
