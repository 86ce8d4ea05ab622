mod common;

use elastic_tickets::arch::{init_params, ArchDescriptor};
use elastic_tickets::data::Dataset;
use elastic_tickets::eval::{
    compare, connectivity_probe, evaluate_ticket, interpolate, train_ticket, transfer_dataset, CompareInputs,
    CompareMethod, ProbeOptions,
};
use elastic_tickets::ett::Ordering;
use elastic_tickets::nn::{train, MaskSet, Network, TrainConfig};
use elastic_tickets::prune::{imp_run, ImpConfig};
use elastic_tickets::tensor::Rng;
use elastic_tickets::ticket::{PruneMethod, Provenance, SparseTicket};
use elastic_tickets::Error;

fn cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 16,
        lr: 0.05,
        momentum: 0.9,
        seed,
        eval_every_epoch: false,
        ..TrainConfig::default()
    }
}

fn setup() -> (SparseTicket, Dataset, Dataset) {
    let (tr, te) = common::blobs(40, 6, 3, 11);
    let arch = ArchDescriptor::mlp_widths(&[6, 12, 12, 3]).unwrap();
    let imp = ImpConfig {
        rate: 0.2,
        rounds: 2,
        rewind_step: 2,
        train: cfg(1),
        train_last: false,
    };
    let t = imp_run(&arch, &tr, None, &imp).unwrap().tickets.pop().unwrap();
    (t, tr, te)
}

#[test]
fn endpoints_are_the_two_trained_solutions() {
    let (t, tr, te) = setup();
    let r = connectivity_probe(&t, &tr, &te, &cfg(0), (3, 4), &ProbeOptions::default()).unwrap();
    assert_eq!(r.alphas.len(), 11);
    assert_eq!((r.alphas[0], r.alphas[10]), (0.0, 1.0));
    let a = evaluate_ticket(&t, &tr, &te, &cfg(3)).unwrap().final_test_acc.unwrap();
    let b = evaluate_ticket(&t, &tr, &te, &cfg(4)).unwrap().final_test_acc.unwrap();
    assert_eq!((r.accuracies[0], r.accuracies[10]), (a, b));
    assert!(r.max_drop >= 0.0);
}

#[test]
fn equal_seeds_have_no_barrier() {
    let (t, tr, te) = setup();
    let err = connectivity_probe(&t, &tr, &te, &cfg(0), (5, 5), &ProbeOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Usage(_)));
    let opts = ProbeOptions {
        allow_same_seed: true,
        ..ProbeOptions::default()
    };
    let r = connectivity_probe(&t, &tr, &te, &cfg(0), (5, 5), &opts).unwrap();
    assert_eq!(r.max_drop, 0.0);
    assert!(r.accuracies.iter().all(|&a| a == r.accuracies[0]));
}

#[test]
fn swapping_seeds_mirrors_the_curve() {
    let (t, tr, te) = setup();
    let opts = ProbeOptions::default();
    let ab = connectivity_probe(&t, &tr, &te, &cfg(0), (6, 7), &opts).unwrap();
    let ba = connectivity_probe(&t, &tr, &te, &cfg(0), (7, 6), &opts).unwrap();
    let one_sample = 1.0 / te.len() as f64 + 1e-12;
    for (x, y) in ab.accuracies.iter().zip(ba.accuracies.iter().rev()) {
        assert!((x - y).abs() <= one_sample, "{x} vs {y}");
    }
    assert!((ab.max_drop - ba.max_drop).abs() <= 2.0 * one_sample);
}

#[test]
fn interpolation_endpoints_are_exact() {
    let arch = ArchDescriptor::resnet_cifar(8).unwrap();
    let a = init_params(&arch, &mut Rng::new(1));
    let b = init_params(&arch, &mut Rng::new(2));
    assert_eq!(interpolate(&a, &b, 0.0).unwrap(), a);
    assert_eq!(interpolate(&a, &b, 1.0).unwrap(), b);
}

#[test]
fn transfer_runs_on_relabeled_data_and_checks_shapes() {
    let (t, tr, te) = setup();
    let perm = [2, 0, 1];
    let (tr2, te2) = (tr.permute_labels(&perm).unwrap(), te.permute_labels(&perm).unwrap());
    let m = transfer_dataset(&t, &tr2, &te2, &cfg(2)).unwrap();
    assert!(m.final_test_acc.unwrap() >= 1.0 / 3.0);

    let same = transfer_dataset(&t, &tr, &te, &cfg(2)).unwrap();
    assert_eq!(same, evaluate_ticket(&t, &tr, &te, &cfg(2)).unwrap());

    let (wide, wide_te) = common::blobs(10, 7, 3, 1);
    assert!(matches!(transfer_dataset(&t, &wide, &wide_te, &cfg(2)), Err(Error::Incompatible(_))));
}

#[test]
fn dense_ticket_matches_plain_training() {
    let (tr, te) = common::blobs(30, 6, 3, 4);
    let arch = ArchDescriptor::mlp_widths(&[6, 10, 3]).unwrap();
    let init = init_params(&arch, &mut Rng::new(9));
    let t = SparseTicket::dense(&arch, init.clone(), 0, Provenance::new(&arch.name, PruneMethod::Imp, &tr.name, 9)).unwrap();
    let via_ticket = train_ticket(&t, &tr, Some(&te), &cfg(9)).unwrap();
    let plain = train(&Network::new(&arch), init, &MaskSet::dense(&arch), &tr, Some(&te), &cfg(9)).unwrap();
    assert_eq!(via_ticket.params, plain.params);
    assert_eq!(via_ticket.metrics.final_test_acc, plain.metrics.final_test_acc);
}

#[test]
fn compare_matches_every_baseline_to_the_transformed_ticket() {
    let (t, tr, te) = setup();
    let target = ArchDescriptor::mlp_widths(&[6, 12, 12, 12, 3]).unwrap();
    let imp = ImpConfig {
        rate: 0.2,
        rounds: 2,
        rewind_step: 2,
        train: cfg(1),
        train_last: false,
    };
    let reference = imp_run(&target, &tr, None, &imp).unwrap().tickets.pop().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let table = compare(&CompareInputs {
        methods: &CompareMethod::ALL,
        source_tickets: std::slice::from_ref(&t),
        imp_references: Some(std::slice::from_ref(&reference)),
        target_arch: &target,
        train: &tr,
        test: &te,
        cfg: &cfg(1),
        seeds: &[1],
        ordering: Ordering::Appending,
        jobs: 4,
    })
    .unwrap();
    assert_eq!(table.rows.len(), CompareMethod::ALL.len());
    let ett = table.row(CompareMethod::Ett).unwrap();
    assert_eq!(table.row(CompareMethod::Reinit).unwrap().sparsity, ett.sparsity);
    for r in &table.rows {
        assert!(r.matched || r.method == CompareMethod::Imp, "{}", r.method);
        assert_eq!(r.std_accuracy, 0.0);
    }
    let csv = dir.path().join("compare.csv");
    table.write_csv(&csv).unwrap();
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 1 + CompareMethod::ALL.len());

    let missing = compare(&CompareInputs {
        methods: &[CompareMethod::Imp],
        source_tickets: std::slice::from_ref(&t),
        imp_references: None,
        target_arch: &target,
        train: &tr,
        test: &te,
        cfg: &cfg(1),
        seeds: &[1],
        ordering: Ordering::Appending,
        jobs: 1,
    });
    assert!(matches!(missing, Err(Error::Usage(_))));
}
