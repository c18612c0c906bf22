//! Sinkhorn-Knopp pseudo-labels for a batch of prototype logits, with and
//! without a queue of earlier batches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use suave_lab::assign::{sinkhorn_assign, sinkhorn_assign_with, LogitBatch, LogitQueue, SinkhornConfig, SinkhornStop};
use suave_lab::gradcore::Tensor;

fn batch(rng: &mut ChaCha8Rng, b: usize, c: usize) -> LogitBatch {
    // a skewed batch: most samples prefer prototype 0
    let data = (0..b * c).map(|i| if i % c == 0 { 0.8 } else { rng.random_range(-1.0..0.6) }).collect();
    LogitBatch::new(Tensor::matrix(b, c, data)).unwrap()
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (b, c) = (64, 4);
    let logits = batch(&mut rng, b, c);

    let greedy: Vec<usize> = logits.values().argmax_rows();
    let mut counts = vec![0; c];
    greedy.iter().for_each(|&k| counts[k] += 1);
    println!("argmax cluster sizes:    {counts:?}");

    let cfg = SinkhornConfig::default();
    let mut queue = LogitQueue::disabled(c);
    let a = sinkhorn_assign(&logits, &mut queue, &cfg).unwrap();
    let mass: Vec<String> = a.mean_distribution().iter().map(|m| format!("{:.3}", m * b as f64)).collect();
    println!("sinkhorn cluster mass:   [{}]  ({} rounds)", mass.join(", "), cfg.iterations);

    let (_, plan) = sinkhorn_assign_with(&logits, &mut queue, cfg.epsilon, SinkhornStop::converge()).unwrap();
    println!("converged in {} rounds, column residual {:.1e}", plan.iterations, plan.residual);

    // earlier batches widen the transport problem
    let mut queue = LogitQueue::new(2 * b, c);
    for _ in 0..3 {
        let next = batch(&mut rng, b, c);
        let a = sinkhorn_assign(&next, &mut queue, &cfg).unwrap();
        println!("queue holds {:>3} rows, assignment entropy {:.3}", queue.len(), a.mean_entropy());
    }
}
