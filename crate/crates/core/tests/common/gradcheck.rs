//! Central-difference gradient checks for every layer kind, in 64-bit.
//! Shared by the core tests and the acceptance gate.

use elastic_tickets::arch::{init_params, ArchDescriptor, ParamKind, ParamSet};
use elastic_tickets::nn::layers::{self, ConvGeom, Dims};
use elastic_tickets::nn::{Mode, Network};
use elastic_tickets::tensor::{Rng, Stream, Substream, Tensor};
use elastic_tickets_oracles as oracle;

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct KindReport {
    pub kind: &'static str,
    pub shapes: usize,
    pub worst: f64,
    /// Coordinates left out because a ReLU or max-pool kink lies within one
    /// step, and the number compared in total.
    pub skipped: usize,
    pub compared: usize,
}

/// Largest tolerated share of kink-adjacent coordinates.
pub const MAX_SKIPPED: f64 = 0.05;

/// Gradients smaller than this are compared absolutely.
const NETWORK_FLOOR: f64 = 1e-4;

impl KindReport {
    pub fn passed(&self) -> bool {
        self.worst <= TOLERANCE && self.skipped as f64 <= MAX_SKIPPED * self.compared.max(1) as f64
    }
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)` over the whole gradient.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let denom = norm(a).max(norm(b));
    if denom == 0.0 {
        0.0
    } else {
        norm(&diff) / denom
    }
}

fn normals(s: &mut Stream, n: usize) -> Vec<f64> {
    (0..n).map(|_| s.normal_f64()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gradient of `Σ r·f(p)` with respect to `p` by central differences.
fn fd(f: impl Fn(&[f64]) -> Vec<f64>, p: &[f64], r: &[f64]) -> Vec<f64> {
    oracle::fd_grad(&mut |q| dot(r, &f(q)), p, STEP)
}

fn kind(name: &'static str, shapes: usize, seed: u64, mut check: impl FnMut(&mut Stream) -> f64) -> KindReport {
    kind_counted(name, shapes, seed, |s| Outcome {
        worst: check(s),
        ..Outcome::default()
    })
}

#[derive(Default)]
struct Outcome {
    worst: f64,
    skipped: usize,
    compared: usize,
}

impl Outcome {
    fn absorb(&mut self, analytic: &[f64], numeric: Numeric) {
        let (a, b): (Vec<f64>, Vec<f64>) = analytic
            .iter()
            .zip(&numeric.values)
            .zip(&numeric.kinked)
            .filter(|(_, &k)| !k)
            .map(|((&a, &b), _)| (a, b))
            .unzip();
        let diff = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        self.worst = self.worst.max(diff / norm(&a).max(norm(&b)).max(NETWORK_FLOOR));
        self.skipped += numeric.kinked.iter().filter(|&&k| k).count();
        self.compared += analytic.len();
    }
}

fn kind_counted(name: &'static str, shapes: usize, seed: u64, mut check: impl FnMut(&mut Stream) -> Outcome) -> KindReport {
    let mut r = KindReport {
        kind: name,
        shapes,
        worst: 0.0,
        skipped: 0,
        compared: 0,
    };
    for i in 0..shapes {
        let mut s = Stream::new(seed, Substream::Init, i as u64);
        let o = check(&mut s);
        r.worst = r.worst.max(o.worst);
        r.skipped += o.skipped;
        r.compared += o.compared;
    }
    r
}

struct Numeric {
    values: Vec<f64>,
    kinked: Vec<bool>,
}

/// Central differences at `STEP` and `STEP / 8`, extrapolated. On a smooth neighbourhood
/// the two agree to O(STEP²); a disagreement means a kink sits inside the
/// stencil and the coordinate is flagged.
fn fd_kinked(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64]) -> Numeric {
    let coarse = oracle::fd_grad(f, x, STEP);
    let fine = oracle::fd_grad(f, x, STEP / 8.0);
    let kinked = coarse
        .iter()
        .zip(&fine)
        .map(|(a, b)| (a - b).abs() > 1e-6 * a.abs().max(b.abs()).max(1e-2))
        .collect();
    // Richardson extrapolation cancels the O(h²) term.
    let values = coarse.iter().zip(&fine).map(|(c, f)| (64.0 * f - c) / 63.0).collect();
    Numeric { values, kinked }
}

fn dense(s: &mut Stream) -> f64 {
    let (b, i, o) = (1 + s.below(4), 1 + s.below(6), 1 + s.below(6));
    let x = normals(s, b * i);
    let w = normals(s, i * o);
    let bias = normals(s, o);
    let r = normals(s, b * o);
    let (dx, dw, db) = layers::dense_backward(&x, &r, b, i, o, &w, true);
    let y = layers::dense_forward(&x, b, i, o, &w, &bias);
    let fwd = rel_err(&y, &oracle::dense(&x, b, i, o, &w, &bias));
    fwd.max(rel_err(&dx, &fd(|p| layers::dense_forward(p, b, i, o, &w, &bias), &x, &r)))
        .max(rel_err(&dw, &fd(|p| layers::dense_forward(&x, b, i, o, p, &bias), &w, &r)))
        .max(rel_err(&db, &fd(|p| layers::dense_forward(&x, b, i, o, &w, p), &bias, &r)))
}

fn conv(s: &mut Stream) -> f64 {
    let kernel = [1, 3][s.below(2)];
    let g = ConvGeom {
        in_ch: 1 + s.below(3),
        out_ch: 1 + s.below(3),
        kernel,
        stride: 1 + s.below(2),
        pad: if kernel == 3 { s.below(2) } else { 0 },
        h: 3 + s.below(4),
        w: 3 + s.below(4),
    };
    let b = 1 + s.below(2);
    let (ho, wo) = g.out_hw();
    let x = normals(s, b * g.in_ch * g.h * g.w);
    let w = normals(s, g.out_ch * g.in_ch * kernel * kernel);
    let r = normals(s, b * g.out_ch * ho * wo);
    let (dx, dw) = layers::conv_backward(&x, &r, b, &g, &w, true);
    let y = layers::conv_forward(&x, b, &g, &w);
    let (yo, _, _) = oracle::conv2d(&x, b, g.in_ch, g.h, g.w, &w, g.out_ch, kernel, g.stride, g.pad);
    rel_err(&y, &yo)
        .max(rel_err(&dx, &fd(|p| layers::conv_forward(p, b, &g, &w), &x, &r)))
        .max(rel_err(&dw, &fd(|p| layers::conv_forward(&x, b, &g, p), &w, &r)))
}

fn batchnorm(s: &mut Stream) -> f64 {
    let d = Dims {
        batch: 2 + s.below(3),
        ch: 1 + s.below(3),
        h: 1 + s.below(3),
        w: 1 + s.below(3),
    };
    let x = normals(s, d.len());
    let gamma = normals(s, d.ch);
    let beta = normals(s, d.ch);
    let r = normals(s, d.len());
    let (y, cache) = layers::bn_train_forward(&x, d, &gamma, &beta);
    let (dx, dg, db) = layers::bn_train_backward(&r, d, &gamma, &cache);
    let yo = oracle::batchnorm_train(&x, d.batch, d.ch, d.spatial(), &gamma, &beta, layers::BN_EPS);
    let f = |x: &[f64], g: &[f64], b: &[f64]| layers::bn_train_forward(x, d, g, b).0;
    rel_err(&y, &yo)
        .max(rel_err(&dx, &fd(|p| f(p, &gamma, &beta), &x, &r)))
        .max(rel_err(&dg, &fd(|p| f(&x, p, &beta), &gamma, &r)))
        .max(rel_err(&db, &fd(|p| f(&x, &gamma, p), &beta, &r)))
}

fn relu(s: &mut Stream) -> f64 {
    let n = 1 + s.below(40);
    // Keep inputs clear of the kink so the difference quotient is exact.
    let x: Vec<f64> = (0..n)
        .map(|_| {
            let v = s.normal_f64();
            v.signum() * (v.abs() + 0.05)
        })
        .collect();
    let r = normals(s, n);
    let fwd = |p: &[f64]| {
        let mut y = p.to_vec();
        layers::relu_inplace(&mut y);
        y
    };
    let y = fwd(&x);
    let mut dy = r.clone();
    layers::relu_backward_inplace(&mut dy, &y);
    rel_err(&y, &oracle::relu(&x)).max(rel_err(&dy, &fd(fwd, &x, &r)))
}

fn maxpool(s: &mut Stream) -> f64 {
    let d = Dims {
        batch: 1 + s.below(2),
        ch: 1 + s.below(3),
        h: 2 * (1 + s.below(3)),
        w: 2 * (1 + s.below(3)),
    };
    // Distinct values at least 0.1 apart so no window has a near tie.
    let x: Vec<f64> = s.permutation(d.len()).into_iter().map(|v| v as f64 * 0.1).collect();
    let r = normals(s, d.batch * d.ch * (d.h / 2) * (d.w / 2));
    let (_, arg) = layers::maxpool_forward(&x, d);
    let dx = layers::maxpool_backward(&r, &arg, d.len());
    rel_err(&dx, &fd(|p| layers::maxpool_forward(p, d).0, &x, &r))
}

fn gap(s: &mut Stream) -> f64 {
    let d = Dims {
        batch: 1 + s.below(3),
        ch: 1 + s.below(4),
        h: 1 + s.below(4),
        w: 1 + s.below(4),
    };
    let x = normals(s, d.len());
    let r = normals(s, d.batch * d.ch);
    let dx = layers::gap_backward(&r, d);
    rel_err(&dx, &fd(|p| layers::gap_forward(p, d), &x, &r))
}

fn cross_entropy(s: &mut Stream) -> f64 {
    let (b, c) = (1 + s.below(5), 2 + s.below(6));
    let logits = normals(s, b * c);
    let labels: Vec<usize> = (0..b).map(|_| s.below(c)).collect();
    let (loss, grad, _) = layers::softmax_cross_entropy(&logits, &labels, c);
    let fd_g = oracle::fd_grad(&mut |p| layers::softmax_cross_entropy(p, &labels, c).0, &logits, STEP);
    oracle::rel_err(loss, oracle::cross_entropy(&logits, &labels, c), 1e-12).max(rel_err(&grad, &fd_g))
}

/// Whole-network check: every trainable parameter and the input.
fn network(arch: &ArchDescriptor, s: &mut Stream, seed: u64) -> Outcome {
    let net = Network::new(arch);
    let mut params: ParamSet<f64> = init_params(arch, &mut Rng::new(seed)).cast();
    // Random affine batch-norm parameters exercise more than the identity.
    for (p, t) in params.iter_mut() {
        if matches!(ParamKind::of_path(p), ParamKind::Gamma | ParamKind::Beta | ParamKind::Bias) {
            for v in t.data_mut() {
                *v = s.normal_f64() * 0.5 + if p.ends_with("gamma") { 1.0 } else { 0.0 };
            }
        }
    }
    let batch = 2 + s.below(2);
    let mut shape = vec![batch];
    shape.extend(&arch.input_shape);
    let n: usize = shape.iter().product();
    let x = Tensor::new(shape.clone(), normals(s, n)).unwrap();
    let labels: Vec<usize> = (0..batch).map(|_| s.below(arch.num_classes)).collect();
    let loss = |params: &ParamSet<f64>, x: &Tensor<f64>| {
        let mut p = params.clone();
        let (logits, _) = net.forward(&mut p, x, Mode::Train).unwrap();
        layers::softmax_cross_entropy(logits.data(), &labels, arch.num_classes).0
    };
    let mut p = params.clone();
    let (logits, cache) = net.forward(&mut p, &x, Mode::Train).unwrap();
    let (_, d, _) = layers::softmax_cross_entropy(logits.data(), &labels, arch.num_classes);
    let grads = net
        .backward(&params, &cache, &Tensor::new(logits.shape().to_vec(), d).unwrap())
        .unwrap();

    let mut out = Outcome::default();
    out.absorb(
        grads.input.data(),
        fd_kinked(
            &mut |q| loss(&params, &Tensor::new(shape.clone(), q.to_vec()).unwrap()),
            x.data(),
        ),
    );
    for (path, g) in grads.params.iter() {
        let base = params.get(path).unwrap().data().to_vec();
        let numeric = fd_kinked(
            &mut |q| {
                let mut p = params.clone();
                p.get_mut(path).unwrap().data_mut().copy_from_slice(q);
                loss(&p, &x)
            },
            &base,
        );
        out.absorb(g.data(), numeric);
    }
    out
}

fn residual(s: &mut Stream, seed: u64) -> Outcome {
    let w0 = 1 + s.below(3);
    let w1 = w0 + 1 + s.below(2);
    let arch = ArchDescriptor::resnet_custom(&[1 + s.below(2), 1], &[w0, w1])
        .unwrap()
        .with_io(&[1 + s.below(2), 4, 4], 3)
        .unwrap();
    network(&arch, s, seed)
}

fn vgg(s: &mut Stream, seed: u64) -> Outcome {
    let arch = ArchDescriptor::vgg_custom(&[1 + s.below(2), 1], &[2, 3], 1 + s.below(2))
        .unwrap()
        .with_io(&[1, 4, 4], 3)
        .unwrap();
    network(&arch, s, seed)
}

fn mlp(s: &mut Stream, seed: u64) -> Outcome {
    let mut widths = vec![2 + s.below(4)];
    for _ in 0..1 + s.below(3) {
        widths.push(1 + s.below(5));
    }
    widths.push(2 + s.below(3));
    let arch = ArchDescriptor::mlp_widths(&widths).unwrap();
    network(&arch, s, seed)
}

/// Runs `shapes` random instances of every layer kind.
pub fn check_all(shapes: usize, seed: u64) -> Vec<KindReport> {
    vec![
        kind("dense", shapes, seed, dense),
        kind("conv2d", shapes, seed, conv),
        kind("batchnorm", shapes, seed, batchnorm),
        kind("relu", shapes, seed, relu),
        kind("maxpool", shapes, seed, maxpool),
        kind("global-avg-pool", shapes, seed, gap),
        kind("softmax-cross-entropy", shapes, seed, cross_entropy),
        kind_counted("residual-network", shapes, seed, |s| residual(s, seed)),
        kind_counted("vgg-network", shapes, seed, |s| vgg(s, seed)),
        kind_counted("mlp-network", shapes, seed, |s| mlp(s, seed)),
    ]
}
