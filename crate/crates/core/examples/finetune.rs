//! Pre-train, checkpoint, then fine-tune from the checkpoint with fresh
//! prototypes and a lower learning rate.
//!
//! `cargo run --release --example finetune`

use suave_lab::data::{make_synthetic_with_test, split_labels, LabelAmount, SplitSpec, SyntheticKind};
use suave_lab::eval::evaluate;
use suave_lab::trainer::{finetune, finetune_config, load_checkpoint, FinetuneOverrides, RunHooks, TrainConfig, Trainer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (train, test) = make_synthetic_with_test(SyntheticKind::GaussianBlobs, 4000, 1000, 16, 8, 4.0, 2)?;
    let split = split_labels(&train, &SplitSpec { amount: LabelAmount::Fraction(0.01), seed: 2 })?;
    let mut cfg = TrainConfig { epochs: 15, ..TrainConfig::default() };
    cfg.aug.local_views = 0;

    let dir = std::env::temp_dir().join("suave_lab_finetune");
    let mut trainer = Trainer::new(&train, &split, &cfg)?;
    trainer.run(&mut RunHooks { checkpoint_dir: Some(dir.clone()), ..RunHooks::default() })?;
    let ckpt = load_checkpoint(&dir.join("final.ckpt"))?;
    let pretrained = ckpt.student()?;
    let before = evaluate(&pretrained, &test)?;

    let ft_cfg = finetune_config(&cfg, &FinetuneOverrides::default());
    let (tuned, _) = finetune(&train, &split, &pretrained, &ft_cfg)?;
    let after = evaluate(&tuned, &test)?;
    println!("pre-trained top1 {:.4}", before.proto_top1);
    println!("fine-tuned  top1 {:.4} ({:+.4})", after.proto_top1, after.proto_top1 - before.proto_top1);
    Ok(())
}
