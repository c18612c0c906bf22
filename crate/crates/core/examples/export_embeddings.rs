//! Trains briefly on concentric rings and writes the projector embeddings
//! as CSV, one row per sample with its label first.

use suave_lab::data::{make_synthetic, split_labels, LabelAmount, SplitSpec, SyntheticKind};
use suave_lab::eval::export_embeddings;
use suave_lab::model::Depth;
use suave_lab::trainer::{pretrain, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = make_synthetic(SyntheticKind::ConcentricRings, 1200, 4, 3, 1.0, 0)?;
    let split = split_labels(&data, &SplitSpec { amount: LabelAmount::PerClass(10), seed: 0 })?;
    let mut cfg = TrainConfig { epochs: 5, ..TrainConfig::default() };
    cfg.arch.hidden_dims = vec![64];
    let (params, _) = pretrain(&data, &split, &cfg)?;

    let out = std::env::args().nth(1).unwrap_or_else(|| "embeddings.csv".into());
    export_embeddings(&params, &data, Depth::Proj2, out.as_ref())?;
    let text = std::fs::read_to_string(&out)?;
    println!("wrote {} rows to {out}", text.lines().count() - 1);
    for line in text.lines().take(4) {
        let cells: Vec<&str> = line.split(',').take(4).collect();
        println!("{} ...", cells.join(","));
    }
    Ok(())
}
