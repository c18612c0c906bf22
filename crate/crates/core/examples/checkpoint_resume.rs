//! Interrupt a run, resume it from the checkpoint, and confirm the result
//! matches an uninterrupted run bit for bit.

use suave_lab::data::{make_synthetic, split_labels, LabelAmount, SplitSpec, SyntheticKind};
use suave_lab::trainer::{load_checkpoint, RunHooks, TrainConfig, Trainer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = make_synthetic(SyntheticKind::TwoMoons, 600, 4, 2, 1.0, 0)?;
    let split = split_labels(&data, &SplitSpec { amount: LabelAmount::PerClass(8), seed: 0 })?;
    let mut cfg = TrainConfig { epochs: 4, unlabeled_batch: 100, labeled_batch: 16, ..TrainConfig::default() };
    cfg.sinkhorn.queue_capacity = 200;
    cfg.arch.hidden_dims = vec![32];

    let mut straight = Trainer::new(&data, &split, &cfg)?;
    straight.run(&mut RunHooks::default())?;

    let path = std::env::temp_dir().join("suave_lab_resume.ckpt");
    let mut first = Trainer::new(&data, &split, &cfg)?;
    first.run(&mut RunHooks { stop_at_step: Some(10), ..RunHooks::default() })?;
    first.save(&path)?;
    println!("stopped at step {}, queue rows {}", first.state().global_step, first.state().queues[0].len());

    let mut resumed = Trainer::resume(&data, &split, &cfg, &load_checkpoint(&path)?)?;
    resumed.run(&mut RunHooks::default())?;
    println!("identical weights after resume: {}", resumed.state().student == straight.state().student);
    Ok(())
}
