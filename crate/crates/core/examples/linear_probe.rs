//! Linear probes on frozen features at three depths of an untrained
//! encoder. The encoder weights stay untouched.

use suave_lab::data::{make_synthetic_with_test, SyntheticKind};
use suave_lab::eval::{evaluate, probe_fit_online};
use suave_lab::model::{init_encoder, Architecture};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (train, test) = make_synthetic_with_test(SyntheticKind::GaussianBlobs, 2000, 500, 16, 8, 4.0, 0)?;
    let arch = Architecture { input_dim: 16, hidden_dims: vec![128, 128], proj_hidden: 128, proj_out: 32, num_classes: 8 };
    let mut params = init_encoder(&arch, 0)?;
    let all: Vec<usize> = (0..train.len()).collect();
    for round in 1..=3 {
        probe_fit_online(&mut params, &train, &all, 128, 200, 0.1, round)?;
        let r = evaluate(&params, &test)?;
        let probes: Vec<String> = r.probe_top1.iter().map(|(d, a)| format!("{} {a:.3}", d.as_str())).collect();
        println!("after {} steps: {}  (prototype head {:.3})", round * 200, probes.join(", "), r.proto_top1);
    }
    Ok(())
}
