//! Brute-force reference implementations for tests. Plain slices in, plain
//! numbers out, no dependency on the main crate. Every routine refuses
//! instances above [`MAX_WORK`] scalar operations.

use std::collections::BTreeMap;

pub const MAX_WORK: usize = 1 << 26;

fn guard(work: usize, what: &str) {
    assert!(
        work <= MAX_WORK,
        "{what}: {work} operations exceeds the oracle size guard of {MAX_WORK}"
    );
}

/// Dense layer: `y[b][o] = bias[o] + Σ_i x[b][i]·w[i][o]`, `w` row-major
/// `[inp, out]`.
pub fn dense(x: &[f64], batch: usize, inp: usize, out: usize, w: &[f64], bias: &[f64]) -> Vec<f64> {
    guard(batch * inp * out, "dense");
    let mut y = vec![0.0; batch * out];
    for b in 0..batch {
        for o in 0..out {
            let mut s = bias[o];
            for i in 0..inp {
                s += x[b * inp + i] * w[i * out + o];
            }
            y[b * out + o] = s;
        }
    }
    y
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

/// MLP with ReLU between layers (not after the last); `layers` are
/// `(w [inp×out], bias)` pairs and `widths` lists every layer width.
pub fn mlp_forward(x: &[f64], batch: usize, widths: &[usize], layers: &[(Vec<f64>, Vec<f64>)]) -> Vec<f64> {
    assert_eq!(widths.len(), layers.len() + 1);
    let mut h = x.to_vec();
    for (k, (w, b)) in layers.iter().enumerate() {
        h = dense(&h, batch, widths[k], widths[k + 1], w, b);
        if k + 1 < layers.len() {
            h = relu(&h);
        }
    }
    h
}

/// Direct 2-D convolution, NCHW input, weight `[out_ch, in_ch, k, k]`,
/// zero padding.
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    x: &[f64],
    batch: usize,
    in_ch: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    out_ch: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    guard(batch * out_ch * oh * ow * in_ch * k * k, "conv2d");
    let mut y = vec![0.0; batch * out_ch * oh * ow];
    for b in 0..batch {
        for o in 0..out_ch {
            for i in 0..oh {
                for j in 0..ow {
                    let mut s = 0.0;
                    for c in 0..in_ch {
                        for ki in 0..k {
                            for kj in 0..k {
                                let yi = (i * stride + ki) as isize - pad as isize;
                                let xj = (j * stride + kj) as isize - pad as isize;
                                if yi < 0 || xj < 0 || yi >= h as isize || xj >= w as isize {
                                    continue;
                                }
                                let xv = x[((b * in_ch + c) * h + yi as usize) * w + xj as usize];
                                s += xv * weight[((o * in_ch + c) * k + ki) * k + kj];
                            }
                        }
                    }
                    y[((b * out_ch + o) * oh + i) * ow + j] = s;
                }
            }
        }
    }
    (y, oh, ow)
}

/// Train-mode batch norm over NCHW (`h·w = 1` for dense inputs), biased
/// batch variance.
pub fn batchnorm_train(x: &[f64], batch: usize, ch: usize, hw: usize, gamma: &[f64], beta: &[f64], eps: f64) -> Vec<f64> {
    guard(x.len() * 3, "batchnorm");
    let n = (batch * hw) as f64;
    let mut y = vec![0.0; x.len()];
    for c in 0..ch {
        let vals: Vec<f64> = (0..batch)
            .flat_map(|b| (0..hw).map(move |p| (b * ch + c) * hw + p))
            .map(|i| x[i])
            .collect();
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        for b in 0..batch {
            for p in 0..hw {
                let i = (b * ch + c) * hw + p;
                y[i] = gamma[c] * (x[i] - mean) / (var + eps).sqrt() + beta[c];
            }
        }
    }
    y
}

/// Mean softmax cross-entropy.
pub fn cross_entropy(logits: &[f64], labels: &[usize], classes: usize) -> f64 {
    let mut total = 0.0;
    for (b, &y) in labels.iter().enumerate() {
        let row = &logits[b * classes..(b + 1) * classes];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    total / labels.len() as f64
}

/// Central-difference gradient of `f` at `x` with step `h`.
pub fn fd_grad(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    guard(x.len() * 2, "fd_grad");
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Global pruning by sorting every surviving entry on `(|w|, tensor index,
/// flat index)` and removing the first `count − already pruned`.
pub fn global_prune(weights: &[Vec<f64>], mask: &[Vec<bool>], count: usize) -> Vec<Vec<bool>> {
    let mut all = Vec::new();
    for (t, (w, m)) in weights.iter().zip(mask).enumerate() {
        for (i, (&v, &k)) in w.iter().zip(m).enumerate() {
            if k {
                all.push((v.abs(), t, i));
            }
        }
    }
    guard(all.len() * 64, "global_prune");
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let already: usize = mask.iter().map(|m| m.iter().filter(|k| !**k).count()).sum();
    let mut out = mask.to_vec();
    for &(_, t, i) in all.iter().take(count - already) {
        out[t][i] = false;
    }
    out
}

/// Closed-form IMP sparsity after `k` rounds at rate `p`.
pub fn imp_sparsity(p: f64, k: u32) -> f64 {
    1.0 - (1.0 - p).powi(k as i32)
}

/// `H·v` for the quadratic loss `½θᵀAθ`, whose Hessian is `A`.
pub fn quadratic_hvp(a: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    guard(a.len() * v.len(), "quadratic_hvp");
    a.iter().map(|row| row.iter().zip(v).map(|(x, y)| x * y).sum()).collect()
}

/// Pruned fraction of a stage made of units whose pruned/total counts are
/// `units[j]`, where unit `j` appears `copies[j]` times.
pub fn weighted_stage_sparsity(units: &[(usize, usize)], copies: &[usize]) -> f64 {
    let (mut pruned, mut total) = (0usize, 0usize);
    for (&(p, t), &c) in units.iter().zip(copies) {
        pruned += p * c;
        total += t * c;
    }
    pruned as f64 / total as f64
}

/// Multiset of payloads, keyed by their debug rendering.
pub fn multiset<T: std::fmt::Debug>(items: &[T]) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for it in items {
        *m.entry(format!("{it:?}")).or_insert(0) += 1;
    }
    m
}
