//! Teacher-student training with centering and sharpening on blobs. The
//! teacher is an EMA of the student and supplies the targets.
//!
//! `cargo run --release --example daino_blobs`

use suave_lab::data::{make_synthetic_with_test, split_labels, LabelAmount, SplitSpec, SyntheticKind};
use suave_lab::eval::evaluate;
use suave_lab::trainer::{Method, RunHooks, TrainConfig, Trainer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (train, test) = make_synthetic_with_test(SyntheticKind::GaussianBlobs, 4000, 1000, 16, 8, 4.0, 1)?;
    let split = split_labels(&train, &SplitSpec { amount: LabelAmount::Fraction(0.01), seed: 1 })?;

    let mut cfg = TrainConfig { method: Method::Daino, epochs: 15, log_every: 10, ..TrainConfig::default() };
    cfg.aug.local_views = 0;
    let mut trainer = Trainer::new(&train, &split, &cfg)?;
    trainer.run(&mut RunHooks::default())?;

    for r in trainer.history().iter().step_by(16) {
        println!(
            "step {:>4}  loss {:.4}  entropy {:.3}  |center| {:.4}",
            r.step, r.loss_total, r.assign_entropy_mean, r.center_norm
        );
    }
    let state = trainer.state();
    println!("teacher-student distance {:.4}", state.teacher.params.params.distance(&state.student.params)?);
    let s = evaluate(&state.student, &test)?;
    let t = evaluate(&state.teacher.params, &test)?;
    println!("student top1 {:.3}, teacher top1 {:.3}", s.proto_top1, t.proto_top1);
    Ok(())
}
