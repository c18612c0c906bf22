//! Semi-supervised Sinkhorn training on Gaussian blobs with 1% labels,
//! against the same encoder trained on the labels alone.
//!
//! `cargo run --release --example suave_blobs`

use suave_lab::data::{make_synthetic_with_test, split_labels, LabelAmount, MixSpec, SplitSpec, SyntheticKind};
use suave_lab::eval::evaluate;
use suave_lab::trainer::{pretrain, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let (train, test) = make_synthetic_with_test(SyntheticKind::GaussianBlobs, 8000, 2000, 16, 8, 4.0, 0)?;
    let split = split_labels(&train, &SplitSpec { amount: LabelAmount::Fraction(0.01), seed: 0 })?;
    println!("{} samples, {} labeled", train.len(), split.labeled.len());

    let mut cfg = TrainConfig { epochs: 20, ..TrainConfig::default() };
    cfg.aug.local_views = 0;
    let (semi, history) = pretrain(&train, &split, &cfg)?;
    let last = history.last().unwrap();
    println!("final loss {:.4}, assignment entropy {:.3}", last.loss_total, last.assign_entropy_mean);

    // labels only, same number of optimizer steps; mixing 80 labels only hurts
    let per_epoch = split.labeled.len().div_ceil(cfg.labeled_batch);
    let scale = history.len() / cfg.epochs / per_epoch;
    let sup_cfg = TrainConfig {
        unlabeled_batch: 0,
        epochs: cfg.epochs * scale,
        warmup_epochs: cfg.warmup_epochs * scale,
        mix: MixSpec::disabled(),
        ..cfg.clone()
    };
    let (sup, _) = pretrain(&train, &split, &sup_cfg)?;

    let (a, b) = (evaluate(&semi, &test)?, evaluate(&sup, &test)?);
    println!("semi-supervised  top1 {:.3}  purity {:.3}", a.proto_top1, a.cluster_purity);
    println!("labels only      top1 {:.3}  purity {:.3}", b.proto_top1, b.cluster_purity);
    Ok(())
}
