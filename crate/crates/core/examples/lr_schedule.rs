//! Linear warmup followed by cosine decay.

use suave_lab::gradcore::cosine_lr;

fn main() {
    let (warmup, total, base, last) = (10, 100, 0.4, 0.004);
    for step in (0..=total).step_by(5) {
        let lr = cosine_lr(step, warmup, total, base, last);
        println!("{step:>3} {lr:.4} {}", "#".repeat((lr / base * 50.0).round() as usize));
    }
}
