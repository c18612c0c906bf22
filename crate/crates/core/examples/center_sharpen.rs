//! Center-then-sharpen pseudo-labels with an EMA center, as used by the
//! teacher-student method. A biased teacher is de-biased as the center
//! tracks its mean logit.

use suave_lab::assign::{center_sharpen_assign, entropy, update_center, CenterState, LogitBatch};
use suave_lab::gradcore::Tensor;

fn main() {
    let (b, c) = (32, 4);
    // every sample leans towards prototype 2
    let data = (0..b * c).map(|i| if i % c == 2 { 0.9 } else { 0.1 * ((i * 7 % 5) as f64 - 2.0) }).collect();
    let teacher = LogitBatch::new(Tensor::matrix(b, c, data)).unwrap();

    let mut center = CenterState::zeros(c, 0.9);
    for step in 0..30 {
        let a = center_sharpen_assign(&teacher, &center, 0.07).unwrap();
        if step % 5 == 0 {
            let mean: Vec<String> = a.mean_distribution().iter().map(|m| format!("{m:.2}")).collect();
            println!(
                "step {step:>2}: |center| {:.3}  mean assignment [{}]  entropy {:.3}",
                center.norm(),
                mean.join(" "),
                entropy(&a.mean_distribution())
            );
        }
        center = update_center(&center, &teacher).unwrap();
    }
    println!("ln C = {:.3}", (c as f64).ln());
}
