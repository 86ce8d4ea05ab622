//! Dense MLP training on MNIST.
//!
//! `cargo run --release -p elastic-tickets --example mnist_dense -- <mnist dir> [depth] [epochs]`

use std::path::PathBuf;
use std::time::Instant;

use elastic_tickets::arch::{init_params, ArchDescriptor};
use elastic_tickets::data::load_mnist;
use elastic_tickets::nn::{train, MaskSet, Network, TrainConfig};
use elastic_tickets::tensor::Rng;

fn main() -> elastic_tickets::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "data/mnist".into()));
    let depth: usize = args.next().map_or(3, |s| s.parse().expect("depth"));
    let epochs: usize = args.next().map_or(1, |s| s.parse().expect("epochs"));

    let t = Instant::now();
    let (train_set, test_set) = load_mnist(&dir)?;
    println!("loaded {} + {} samples in {:.2?}", train_set.len(), test_set.len(), t.elapsed());

    let arch = ArchDescriptor::mlp(depth)?;
    let net = Network::new(&arch);
    let params = init_params(&arch, &mut Rng::new(0));
    let cfg = TrainConfig {
        epochs,
        batch_size: 128,
        lr: 0.1,
        ..TrainConfig::default()
    };
    let t = Instant::now();
    let out = train(&net, params, &MaskSet::dense(&arch), &train_set, Some(&test_set), &cfg)?;
    for e in &out.metrics.epochs {
        println!(
            "epoch {} loss {:.4} acc {:.4} test {:.4}",
            e.epoch,
            e.train_loss,
            e.train_acc,
            e.test_acc.unwrap_or(f64::NAN)
        );
    }
    println!("{} epochs in {:.2?}", epochs, t.elapsed());
    Ok(())
}
