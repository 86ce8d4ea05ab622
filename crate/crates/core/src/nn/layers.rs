//! Per-layer forward and backward kernels over flat row-major buffers.
//!
//! Activations are `[batch, channels, height, width]`; dense activations use
//! `height = width = 1`.

use crate::tensor::{gemm, transpose_into, Scalar};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub batch: usize,
    pub ch: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn per_sample(&self) -> usize {
        self.ch * self.h * self.w
    }

    pub fn len(&self) -> usize {
        self.batch * self.per_sample()
    }

    pub fn spatial(&self) -> usize {
        self.h * self.w
    }
}

/// `y[b, out] = x[b, in] · w[in, out] + bias[out]`.
pub fn dense_forward<T: Scalar>(x: &[T], batch: usize, inp: usize, out: usize, w: &[T], bias: &[T]) -> Vec<T> {
    let mut y = Vec::with_capacity(batch * out);
    for _ in 0..batch {
        y.extend_from_slice(bias);
    }
    gemm(batch, inp, out, x, w, &mut y, true);
    y
}

/// Returns `(dx, dw, db)`; `dx` is empty unless `want_dx`.
pub fn dense_backward<T: Scalar>(
    x: &[T],
    dy: &[T],
    batch: usize,
    inp: usize,
    out: usize,
    w: &[T],
    want_dx: bool,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut xt = vec![T::zero(); batch * inp];
    transpose_into(x, batch, inp, &mut xt);
    let mut dw = vec![T::zero(); inp * out];
    gemm(inp, batch, out, &xt, dy, &mut dw, false);

    let mut db = vec![T::zero(); out];
    for row in dy.chunks_exact(out) {
        for (d, &g) in db.iter_mut().zip(row) {
            *d += g;
        }
    }

    if !want_dx {
        return (Vec::new(), dw, db);
    }
    let mut wt = vec![T::zero(); inp * out];
    transpose_into(w, inp, out, &mut wt);
    let mut dx = vec![T::zero(); batch * inp];
    gemm(batch, out, inp, dy, &wt, &mut dx, false);
    (dx, dw, db)
}

#[derive(Clone, Copy, Debug)]
pub struct ConvGeom {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub h: usize,
    pub w: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        (
            (self.h + 2 * self.pad - self.kernel) / self.stride + 1,
            (self.w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    fn patch(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }
}

/// Unfolds one sample into `[in_ch·k·k, ho·wo]` columns (`transposed` gives
/// `[ho·wo, in_ch·k·k]`).
fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, col: &mut [T], transposed: bool) {
    let (ho, wo) = g.out_hw();
    let k = g.kernel;
    let npix = ho * wo;
    let patch = g.patch();
    for c in 0..g.in_ch {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        let v = if iy >= 0 && (iy as usize) < g.h && ix >= 0 && (ix as usize) < g.w {
                            plane[iy as usize * g.w + ix as usize]
                        } else {
                            T::zero()
                        };
                        let pix = oy * wo + ox;
                        if transposed {
                            col[pix * patch + row] = v;
                        } else {
                            col[row * npix + pix] = v;
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(col: &[T], g: &ConvGeom, dx: &mut [T]) {
    let (ho, wo) = g.out_hw();
    let k = g.kernel;
    let npix = ho * wo;
    for c in 0..g.in_ch {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy as usize >= g.h {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            plane[iy as usize * g.w + ix as usize] += col[row * npix + oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Convolution without bias; `w` is `[out_ch, in_ch, k, k]`.
pub fn conv_forward<T: Scalar>(x: &[T], batch: usize, g: &ConvGeom, w: &[T]) -> Vec<T> {
    let (ho, wo) = g.out_hw();
    let npix = ho * wo;
    let patch = g.patch();
    let in_len = g.in_ch * g.h * g.w;
    let out_len = g.out_ch * npix;
    let mut y = vec![T::zero(); batch * out_len];
    let mut col = vec![T::zero(); patch * npix];
    for b in 0..batch {
        im2col(&x[b * in_len..(b + 1) * in_len], g, &mut col, false);
        gemm(g.out_ch, patch, npix, w, &col, &mut y[b * out_len..(b + 1) * out_len], false);
    }
    y
}

/// Returns `(dx, dw)`; `dx` is empty unless `want_dx`. Columns are
/// recomputed from `x` rather than cached.
pub fn conv_backward<T: Scalar>(
    x: &[T],
    dy: &[T],
    batch: usize,
    g: &ConvGeom,
    w: &[T],
    want_dx: bool,
) -> (Vec<T>, Vec<T>) {
    let (ho, wo) = g.out_hw();
    let npix = ho * wo;
    let patch = g.patch();
    let in_len = g.in_ch * g.h * g.w;
    let out_len = g.out_ch * npix;
    let mut dw = vec![T::zero(); g.out_ch * patch];
    let mut dx = vec![T::zero(); if want_dx { batch * in_len } else { 0 }];
    let mut wt = vec![T::zero(); g.out_ch * patch];
    transpose_into(w, g.out_ch, patch, &mut wt);
    let mut col_t = vec![T::zero(); npix * patch];
    let mut dcol = vec![T::zero(); patch * npix];
    for b in 0..batch {
        let dy_b = &dy[b * out_len..(b + 1) * out_len];
        im2col(&x[b * in_len..(b + 1) * in_len], g, &mut col_t, true);
        gemm(g.out_ch, npix, patch, dy_b, &col_t, &mut dw, true);
        if !want_dx {
            continue;
        }
        gemm(patch, g.out_ch, npix, &wt, dy_b, &mut dcol, false);
        col2im_add(&dcol, g, &mut dx[b * in_len..(b + 1) * in_len]);
    }
    (dx, dw)
}

/// Per-channel statistics saved by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BnTrainCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    /// Biased batch variance.
    pub var: Vec<T>,
}

pub fn bn_train_forward<T: Scalar>(x: &[T], d: Dims, gamma: &[T], beta: &[T]) -> (Vec<T>, BnTrainCache<T>) {
    let s = d.spatial();
    let n = T::of((d.batch * s) as f64);
    let mut mean = vec![T::zero(); d.ch];
    let mut var = vec![T::zero(); d.ch];
    for b in 0..d.batch {
        for c in 0..d.ch {
            let off = (b * d.ch + c) * s;
            mean[c] += x[off..off + s].iter().copied().sum::<T>();
        }
    }
    mean.iter_mut().for_each(|m| *m = *m / n);
    for b in 0..d.batch {
        for c in 0..d.ch {
            let off = (b * d.ch + c) * s;
            let m = mean[c];
            var[c] += x[off..off + s].iter().map(|&v| (v - m) * (v - m)).sum::<T>();
        }
    }
    var.iter_mut().for_each(|v| *v = *v / n);
    let eps = T::of(BN_EPS);
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();

    let mut xhat = vec![T::zero(); x.len()];
    let mut y = vec![T::zero(); x.len()];
    for b in 0..d.batch {
        for c in 0..d.ch {
            let off = (b * d.ch + c) * s;
            let (m, is, g, bt) = (mean[c], inv_std[c], gamma[c], beta[c]);
            for i in off..off + s {
                let h = (x[i] - m) * is;
                xhat[i] = h;
                y[i] = g * h + bt;
            }
        }
    }
    (
        y,
        BnTrainCache {
            xhat,
            inv_std,
            mean,
            var,
        },
    )
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn bn_train_backward<T: Scalar>(dy: &[T], d: Dims, gamma: &[T], cache: &BnTrainCache<T>) -> (Vec<T>, Vec<T>, Vec<T>) {
    let s = d.spatial();
    let n = T::of((d.batch * s) as f64);
    let mut dgamma = vec![T::zero(); d.ch];
    let mut dbeta = vec![T::zero(); d.ch];
    for b in 0..d.batch {
        for c in 0..d.ch {
            let off = (b * d.ch + c) * s;
            for i in off..off + s {
                dbeta[c] += dy[i];
                dgamma[c] += dy[i] * cache.xhat[i];
            }
        }
    }
    let mut dx = vec![T::zero(); dy.len()];
    for b in 0..d.batch {
        for c in 0..d.ch {
            let off = (b * d.ch + c) * s;
            let k = gamma[c] * cache.inv_std[c] / n;
            for i in off..off + s {
                dx[i] = k * (n * dy[i] - dbeta[c] - cache.xhat[i] * dgamma[c]);
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Frozen-statistics batch norm: a per-channel affine map. Returns the
/// output and the per-channel scale `gamma / sqrt(rvar + eps)`.
pub fn bn_eval_forward<T: Scalar>(
    x: &[T],
    d: Dims,
    gamma: &[T],
    beta: &[T],
    rmean: &[T],
    rvar: &[T],
) -> (Vec<T>, Vec<T>) {
    let s = d.spatial();
    let eps = T::of(BN_EPS);
    let scale: Vec<T> = (0..d.ch).map(|c| gamma[c] / (rvar[c] + eps).sqrt()).collect();
    let mut y = vec![T::zero(); x.len()];
    for b in 0..d.batch {
        for c in 0..d.ch {
            let off = (b * d.ch + c) * s;
            let (sc, m, bt) = (scale[c], rmean[c], beta[c]);
            for i in off..off + s {
                y[i] = sc * (x[i] - m) + bt;
            }
        }
    }
    (y, scale)
}

/// Blends batch statistics into running statistics; the variance update
/// uses the unbiased estimate.
pub fn bn_update_running<T: Scalar>(
    rmean: &mut [T],
    rvar: &mut [T],
    cache: &BnTrainCache<T>,
    count: usize,
    momentum: f64,
) {
    let m = T::of(momentum);
    let keep = T::one() - m;
    let unbias = if count > 1 {
        T::of(count as f64 / (count - 1) as f64)
    } else {
        T::one()
    };
    for c in 0..rmean.len() {
        rmean[c] = keep * rmean[c] + m * cache.mean[c];
        rvar[c] = keep * rvar[c] + m * cache.var[c] * unbias;
    }
}

pub fn relu_inplace<T: Scalar>(x: &mut [T]) {
    for v in x {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Gradient through a ReLU given its output.
pub fn relu_backward_inplace<T: Scalar>(dy: &mut [T], y: &[T]) {
    for (g, &o) in dy.iter_mut().zip(y) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
}

/// 2×2 max pooling with stride 2; odd trailing rows/columns are dropped.
/// Returns the output and, per output element, the flat input index chosen
/// (first maximum in row-major window order).
pub fn maxpool_forward<T: Scalar>(x: &[T], d: Dims) -> (Vec<T>, Vec<u32>) {
    let (ho, wo) = (d.h / 2, d.w / 2);
    let mut y = Vec::with_capacity(d.batch * d.ch * ho * wo);
    let mut arg = Vec::with_capacity(y.capacity());
    for plane in 0..d.batch * d.ch {
        let base = plane * d.h * d.w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + 2 * oy * d.w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * d.w + 2 * ox + dx;
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                y.push(x[best]);
                arg.push(best as u32);
            }
        }
    }
    (y, arg)
}

pub fn maxpool_backward<T: Scalar>(dy: &[T], arg: &[u32], in_len: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); in_len];
    for (&g, &i) in dy.iter().zip(arg) {
        dx[i as usize] += g;
    }
    dx
}

pub fn gap_forward<T: Scalar>(x: &[T], d: Dims) -> Vec<T> {
    let s = d.spatial();
    let inv = T::of(1.0 / s as f64);
    x.chunks_exact(s).map(|p| p.iter().copied().sum::<T>() * inv).collect()
}

pub fn gap_backward<T: Scalar>(dy: &[T], d: Dims) -> Vec<T> {
    let s = d.spatial();
    let inv = T::of(1.0 / s as f64);
    let mut dx = Vec::with_capacity(d.len());
    for &g in dy {
        dx.extend(std::iter::repeat_n(g * inv, s));
    }
    dx
}

/// Mean softmax cross-entropy over the batch. Returns `(loss, dlogits,
/// correct predictions)`; ties in the argmax go to the lowest class.
pub fn softmax_cross_entropy<T: Scalar>(logits: &[T], labels: &[usize], classes: usize) -> (f64, Vec<T>, usize) {
    let batch = labels.len();
    let mut grad = vec![T::zero(); logits.len()];
    if batch == 0 {
        return (0.0, grad, 0);
    }
    let mut loss = 0.0f64;
    let mut correct = 0;
    let inv_b = T::of(1.0 / batch as f64);
    for (b, &label) in labels.iter().enumerate() {
        let row = &logits[b * classes..(b + 1) * classes];
        let (arg, max) = argmax(row);
        if arg == label {
            correct += 1;
        }
        let mut z = T::zero();
        for &v in row {
            z += (v - max).exp();
        }
        let log_z = z.ln() + max;
        loss += (log_z - row[label]).as_f64();
        let g = &mut grad[b * classes..(b + 1) * classes];
        for (c, gv) in g.iter_mut().enumerate() {
            let p = (row[c] - log_z).exp();
            *gv = (p - if c == label { T::one() } else { T::zero() }) * inv_b;
        }
    }
    (loss / batch as f64, grad, correct)
}

pub fn argmax<T: Scalar>(row: &[T]) -> (usize, T) {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    (best, row[best])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maxpool_picks_window_max() {
        let d = Dims {
            batch: 1,
            ch: 1,
            h: 2,
            w: 4,
        };
        let x = [1.0f32, 5.0, 2.0, 2.0, 3.0, 0.0, 2.0, 1.0];
        let (y, arg) = maxpool_forward(&x, d);
        assert_eq!(y, vec![5.0, 2.0]);
        assert_eq!(arg, vec![1, 2]);
    }

    #[test]
    fn identity_kernel_conv_passes_input_through() {
        let g = ConvGeom {
            in_ch: 1,
            out_ch: 1,
            kernel: 3,
            stride: 1,
            pad: 1,
            h: 3,
            w: 3,
        };
        let mut w = [0.0f32; 9];
        w[4] = 1.0;
        let x: Vec<f32> = (0..9).map(|v| v as f32).collect();
        assert_eq!(conv_forward(&x, 1, &g, &w), x);
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let (loss, grad, _) = softmax_cross_entropy(&[0.0f64; 4], &[2], 4);
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        assert!((grad[2] + 0.75).abs() < 1e-12 && (grad[0] - 0.25).abs() < 1e-12);
    }
}
