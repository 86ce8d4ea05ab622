mod common;

use elastic_tickets::arch::{init_params, ArchDescriptor, ParamSet};
use elastic_tickets::nn::{Mask, MaskSet, Network, TrainConfig};
use elastic_tickets::prune::{
    grasp_prune, grasp_scores, grasp_scores_with, hvp_forward_diff, imp_run, imp_schedule, magnitude_prune,
    magnitude_prune_count, match_sparsity, prune_lowest, random_prune, snip_prune, snip_scores, ImpConfig,
    MatchContext, PruneMethod, ScoreBatch,
};
use elastic_tickets::tensor::{Rng, Stream, Substream, Tensor};
use elastic_tickets::Error;
use elastic_tickets_oracles as oracle;

fn bits(m: &MaskSet) -> Vec<Vec<bool>> {
    m.iter().map(|(_, k)| k.bits().to_vec()).collect()
}

#[test]
fn magnitude_prune_equals_full_sort_oracle() {
    for case in 0..1000 {
        let mut s = Stream::new(21, Substream::Init, case);
        let (p, m, ws, ms) = common::prune_instance(&mut s);
        let count = m.pruned() + s.below(m.kept() + 1);
        let got = magnitude_prune_count(&p, &m, count).unwrap();
        assert_eq!(bits(&got), oracle::global_prune(&ws, &ms, count), "case {case}");
        assert_eq!(got.pruned(), count);
    }
}

#[test]
fn equal_magnitudes_follow_path_then_index_order() {
    let mut p = ParamSet::new();
    let mut m = MaskSet::new();
    for k in 0..2 {
        p.insert(format!("p{k}/weight"), Tensor::new(vec![3], vec![1.0, -1.0, 1.0]).unwrap());
        m.insert(format!("p{k}/weight"), Mask::ones(&[3]));
    }
    let out = magnitude_prune_count(&p, &m, 4).unwrap();
    assert_eq!(bits(&out), [vec![false; 3], vec![false, true, true]]);
    assert_eq!(magnitude_prune(&p, &m, 0.0).unwrap(), m);
}

#[test]
fn infeasible_target_is_a_domain_error() {
    let mut s = Stream::new(1, Substream::Init, 0);
    let (p, m, _, _) = common::prune_instance(&mut s);
    assert!(matches!(magnitude_prune_count(&p, &m, m.total() + 1), Err(Error::Domain(_))));
    assert!(matches!(magnitude_prune(&p, &m, 1.5), Err(Error::Domain(_))));
}

/// Every (p, K) on the grid: round-k pruned count within k weights of
/// `(1 − (1−p)^k)·total`.
#[test]
fn imp_schedule_tracks_closed_form() {
    for total in [1_000usize, 266_200, 272_474] {
        for p in [0.1, 0.2, 0.5] {
            let sched = imp_schedule(total, p, 13).unwrap();
            for (i, &pruned) in sched.iter().enumerate() {
                let k = i + 1;
                let exact = oracle::imp_sparsity(p, k as u32) * total as f64;
                assert!((pruned as f64 - exact).abs() <= k as f64, "total {total} p {p} k {k}: {pruned} vs {exact}");
            }
        }
    }
    let sched = imp_schedule(272_474, 0.2, 13).unwrap();
    assert_eq!(format!("{:.4}", sched[12] as f64 / 272_474.0), "0.9450");
}

fn blob_setup() -> (ArchDescriptor, elastic_tickets::data::Dataset, elastic_tickets::data::Dataset) {
    let (tr, te) = common::blobs(40, 6, 3, 3);
    (ArchDescriptor::mlp_widths(&[6, 12, 12, 3]).unwrap(), tr, te)
}

fn train_cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 16,
        lr: 0.05,
        momentum: 0.9,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn imp_rounds_are_nested_and_follow_the_schedule() {
    let (arch, tr, te) = blob_setup();
    let cfg = ImpConfig {
        rate: 0.2,
        rounds: 4,
        rewind_step: 3,
        train: train_cfg(5),
        train_last: true,
    };
    let out = imp_run(&arch, &tr, Some(&te), &cfg).unwrap();
    let total = MaskSet::dense(&arch).total();
    let sched = imp_schedule(total, 0.2, 4).unwrap();
    assert_eq!(out.tickets.len(), 4);
    assert_eq!(out.metrics.len(), 5);
    assert_eq!(out.tickets[0].mask.pruned(), total / 5);
    let mut prev = MaskSet::dense(&arch);
    for (k, t) in out.tickets.iter().enumerate() {
        assert!(t.is_valid());
        assert!(t.mask.is_subset_of(&prev), "round {}", k + 1);
        assert_eq!(t.mask.pruned(), sched[k]);
        assert_eq!(t.rewind_step, 3);
        assert_eq!(t.provenance.imp_round, k + 1);
        let mut expect = out.dense_rewind.clone();
        t.mask.apply(&mut expect).unwrap();
        assert_eq!(t.rewind_weights, expect);
        prev = t.mask.clone();
    }
}

#[test]
fn imp_config_is_validated_before_training() {
    let (arch, tr, _) = blob_setup();
    let good = ImpConfig {
        rate: 0.2,
        rounds: 2,
        rewind_step: 0,
        train: train_cfg(0),
        train_last: false,
    };
    for bad in [
        ImpConfig { rate: 1.0, ..good.clone() },
        ImpConfig { rate: 0.0, ..good.clone() },
        ImpConfig { rounds: 0, ..good.clone() },
        ImpConfig { rewind_step: 16, ..good.clone() },
    ] {
        assert!(matches!(imp_run(&arch, &tr, None, &bad), Err(Error::Config(_))), "{bad:?}");
    }
}

#[test]
fn random_permute_keeps_per_path_counts() {
    for case in 0..30 {
        let mut s = Stream::new(4, Substream::Init, case);
        let arch = common::random_arch(&mut s);
        let mut t = common::random_ticket(&arch, case, 0.6);
        // One all-ones path is a fixed point.
        let first = t.mask.paths().next().unwrap().to_string();
        t.mask.get_mut(&first).unwrap().bits_mut().fill(true);
        let dense = init_params(&arch, &mut Rng::new(case + 100));
        let r = random_prune(&t, &dense, &mut Rng::new(case)).unwrap();
        assert!(r.is_valid());
        for ((p, a), (_, b)) in t.mask.iter().zip(r.mask.iter()) {
            assert_eq!(a.pruned(), b.pruned(), "case {case} {p}");
        }
        assert_eq!(r.mask.get(&first), t.mask.get(&first));
        assert_eq!(r.sparsity().overall, t.sparsity().overall);
        assert_eq!(r.provenance.method, PruneMethod::RandomPermute);
    }
}

fn scoring(seed: u64) -> (Network, ParamSet, ScoreBatch) {
    let (arch, tr, _) = blob_setup();
    let w = init_params(&arch, &mut Rng::new(seed));
    (Network::new(&arch), w, ScoreBatch::draw(&tr, 32, seed))
}

#[test]
fn snip_and_grasp_masks_ignore_positive_loss_scale() {
    for seed in 0..4 {
        let (net, w, batch) = scoring(seed);
        let snip = snip_prune(&net, &w, &batch, 0.8).unwrap();
        let grasp = grasp_prune(&net, &w, &batch, 0.8).unwrap();
        for c in [0.25, 2.0, 3.0, 10.0, 1024.0] {
            let scaled = ScoreBatch { loss_scale: c, ..batch.clone() };
            assert_eq!(snip_prune(&net, &w, &scaled, 0.8).unwrap(), snip, "SNIP seed {seed} c {c}");
            assert_eq!(grasp_prune(&net, &w, &scaled, 0.8).unwrap(), grasp, "GraSP seed {seed} c {c}");
        }
    }
}

/// Saliencies against `|θ·∂L/∂θ|` with the gradient from central
/// differences of the scalar oracle loss.
#[test]
fn snip_ranking_matches_finite_differences() {
    let arch = ArchDescriptor::mlp_widths(&[4, 5, 2]).unwrap();
    let w = init_params(&arch, &mut Rng::new(8));
    let mut s = Stream::new(8, Substream::Init, 1);
    let x: Vec<f32> = (0..6 * 4).map(|_| s.normal_f64() as f32).collect();
    let labels: Vec<usize> = (0..6).map(|_| s.below(2)).collect();
    let batch = ScoreBatch::new(Tensor::new(vec![6, 4], x.clone()).unwrap(), labels.clone());
    let got: Vec<f64> = snip_scores(&Network::new(&arch), &w, &batch).unwrap().concat();
    assert_eq!(got.len(), 30);

    let x64: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    let p = w.cast::<f64>();
    let get = |k: &str| p.get(k).unwrap().data().to_vec();
    let (b0, b1) = (get("layer0/bias"), get("layer1/bias"));
    let theta = [get("layer0/weight"), get("layer1/weight")].concat();
    let loss = |t: &[f64]| {
        let layers = [(t[..20].to_vec(), b0.clone()), (t[20..].to_vec(), b1.clone())];
        oracle::cross_entropy(&oracle::mlp_forward(&x64, 6, &[4, 5, 2], &layers), &labels, 2)
    };
    let g = oracle::fd_grad(&mut |t| loss(t), &theta, 1e-5);
    let want: Vec<f64> = theta.iter().zip(&g).map(|(t, g)| (t * g).abs()).collect();
    let order = |v: &[f64]| {
        let mut i: Vec<usize> = (0..v.len()).collect();
        i.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
        i
    };
    assert_eq!(order(&got), order(&want));
}

#[test]
fn snip_prunes_zero_saliency_first() {
    let (net, mut w, batch) = scoring(1);
    w.get_mut("layer2/weight").unwrap().data_mut()[7] = 0.0;
    let scores = snip_scores(&net, &w, &batch).unwrap();
    assert_eq!(scores[2][7], 0.0);
    let zeros = scores.iter().flatten().filter(|&&v| v == 0.0).count();
    let total = MaskSet::dense(net.arch()).total();
    let mask = snip_prune(&net, &w, &batch, zeros as f64 / total as f64).unwrap();
    for ((_, m), s) in mask.iter().zip(&scores) {
        for (&keep, &v) in m.bits().iter().zip(s) {
            assert_eq!(keep, v > 0.0);
        }
    }
}

#[test]
fn hvp_matches_analytic_hessian_on_quadratics() {
    for case in 0..20 {
        let mut s = Stream::new(30, Substream::Init, case);
        let n = 2 + s.below(12);
        let a = common::random_spd(&mut s, n);
        let theta: Vec<f64> = (0..n).map(|_| s.normal_f64()).collect();
        let v: Vec<f64> = (0..n).map(|_| s.normal_f64()).collect();
        let mut grad = |t: &[f64]| Ok(oracle::quadratic_hvp(&a, t));
        let g0 = grad(&theta).unwrap();
        let hv = hvp_forward_diff(&mut grad, &theta, &g0, &v, 1e-2).unwrap();
        let want = oracle::quadratic_hvp(&a, &v);
        for (x, y) in hv.iter().zip(&want) {
            assert!(oracle::rel_err(*x, *y, 1e-12) <= 1e-3, "case {case}: {x} vs {y}");
        }
    }
}

/// Quartic toy loss `½θᵀAθ + ¼β·Σθ⁴` whose exact Hessian is
/// `A + 3β·diag(θ²)`: GraSP masks at ε and 2ε both equal the exact mask.
#[test]
fn grasp_mask_is_stable_under_doubled_epsilon() {
    let beta = 0.1;
    for case in 0..10 {
        let mut s = Stream::new(31, Substream::Init, case);
        let n = 40;
        let a = common::random_spd(&mut s, n);
        let theta: Vec<f64> = (0..n).map(|_| s.normal_f64()).collect();
        let mut grad = |t: &[f64]| {
            let mut g = oracle::quadratic_hvp(&a, t);
            for (gi, ti) in g.iter_mut().zip(t) {
                *gi += beta * ti.powi(3);
            }
            Ok(g)
        };
        let g = grad(&theta).unwrap();
        let mut h = a.clone();
        for (i, row) in h.iter_mut().enumerate() {
            row[i] += 3.0 * beta * theta[i] * theta[i];
        }
        let hg = oracle::quadratic_hvp(&h, &g);
        let exact: Vec<f64> = theta.iter().zip(&hg).map(|(t, h)| -(t * h)).collect();
        let mut base = MaskSet::new();
        base.insert("toy/weight", Mask::ones(&[n]));
        let mask_of = |scores: Vec<f64>| {
            let neg: Vec<f64> = scores.iter().map(|v| -v).collect();
            prune_lowest(&[neg], &base, n / 2).unwrap()
        };
        let want = mask_of(exact);
        assert_eq!(mask_of(grasp_scores_with(&mut grad, &theta, 1.0).unwrap()), want, "case {case}");
        assert_eq!(mask_of(grasp_scores_with(&mut grad, &theta, 2.0).unwrap()), want, "case {case}");
    }
}

#[test]
fn grasp_on_zero_weights_ties_like_magnitude() {
    let (net, w, batch) = scoring(2);
    let zeros = ParamSet::zeros_like_arch(net.arch());
    let mut zw = w.clone();
    for (p, t) in zw.iter_mut() {
        if p.ends_with("weight") {
            t.data_mut().fill(0.0);
        }
    }
    let scores = grasp_scores(&net, &zw, &batch, 1.0).unwrap();
    assert!(scores.iter().flatten().all(|&v| v == 0.0));
    let dense = MaskSet::dense(net.arch());
    assert_eq!(grasp_prune(&net, &zw, &batch, 0.6).unwrap(), magnitude_prune(&zeros, &dense, 0.6).unwrap());
}

#[test]
fn matched_baselines_hit_the_reference_count() {
    let (arch, tr, te) = blob_setup();
    let cfg = ImpConfig {
        rate: 0.5,
        rounds: 3,
        rewind_step: 0,
        train: train_cfg(1),
        train_last: false,
    };
    let out = imp_run(&arch, &tr, Some(&te), &cfg).unwrap();
    let reference = out.tickets.last().unwrap();
    let net = Network::new(&arch);
    let batch = ScoreBatch::draw(&tr, 32, 1);
    let ctx = MatchContext {
        net: &net,
        dense_rewind: &out.dense_rewind,
        batch: Some(&batch),
        seed: 9,
    };
    for method in PruneMethod::ALL {
        let t = match_sparsity(method, reference, &ctx).unwrap();
        assert!(t.is_valid(), "{method}");
        assert_eq!(t.mask.pruned(), reference.mask.pruned(), "{method}");
        assert_eq!(t.provenance.method, method);
        match method {
            PruneMethod::Reinit | PruneMethod::Imp => assert_eq!(t.mask, reference.mask),
            PruneMethod::RandomPermute => {
                for ((_, a), (_, b)) in t.mask.iter().zip(reference.mask.iter()) {
                    assert_eq!(a.pruned(), b.pruned());
                }
            }
            PruneMethod::OneShotMagnitude => {
                let direct =
                    magnitude_prune(&out.dense_rewind, &MaskSet::dense(&arch), reference.sparsity().overall)
                        .unwrap();
                assert_eq!(t.mask, direct);
            }
            _ => {}
        }
    }
    let no_batch = MatchContext { batch: None, ..ctx };
    assert!(matches!(match_sparsity(PruneMethod::Snip, reference, &no_batch), Err(Error::Usage(_))));
}
