use std::f64::consts::PI;

/// Linear warmup from 0 to `base_lr`, then cosine decay to `final_lr`.
///
/// Steps past `total_steps` are clamped to `final_lr`.
pub fn cosine_lr(step: usize, warmup_steps: usize, total_steps: usize, base_lr: f64, final_lr: f64) -> f64 {
    if step >= total_steps && total_steps > warmup_steps {
        return final_lr;
    }
    if step < warmup_steps {
        return base_lr * step as f64 / warmup_steps as f64;
    }
    let span = total_steps.saturating_sub(warmup_steps);
    if span == 0 {
        return base_lr;
    }
    let progress = (step - warmup_steps) as f64 / span as f64;
    final_lr + 0.5 * (base_lr - final_lr) * (1.0 + (PI * progress).cos())
}
