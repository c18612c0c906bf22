//! Interpolation and block-swap mixing of samples with their soft targets.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use suave_lab::data::{MixPlan, MixSpec};
use suave_lab::gradcore::Tensor;
use suave_lab::objective::smooth_class_labels;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let views = Tensor::from_rows(&[vec![1.0; 6], vec![2.0; 6], vec![3.0; 6], vec![4.0; 6]])?;
    let targets = smooth_class_labels(&[0, 1, 2, 0], 3, 0.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    for (name, cutmix_prob) in [("mixup", 0.0), ("cutmix", 1.0)] {
        let spec = MixSpec { cutmix_prob, ..MixSpec::default() };
        let plan = MixPlan::draw(4, 6, &spec, &mut rng)?.expect("mixing is on");
        let (x, y) = plan.apply(&views, &targets)?;
        println!("{name}: {:?}  lambda {:.3}  partners {:?}", plan.kind, plan.lambda, plan.partner);
        for i in 0..4 {
            let fmt = |r: &[f64]| r.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join(" ");
            println!("  [{}] -> [{}]", fmt(x.row(i)), fmt(y.values().row(i)));
        }
    }
    Ok(())
}
