//! Global and local corrupted views of one sample. The same seed gives
//! the same views.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use suave_lab::data::{augment_views, AugPolicy};

fn show(name: &str, v: &[f64]) {
    let s: Vec<String> = v.iter().map(|x| format!("{x:+.2}")).collect();
    println!("{name:>8}: {}", s.join(" "));
}

fn main() {
    let sample = [1.0, -0.5, 0.25, 2.0, 0.0, -1.5];
    let policy = AugPolicy::default();
    let views = augment_views(&sample, &policy, &mut ChaCha8Rng::seed_from_u64(7));
    show("original", &sample);
    views.globals.iter().for_each(|v| show("global", v));
    views.locals.iter().for_each(|v| show("local", v));
    show("labeled", &views.labeled_view);
    let again = augment_views(&sample, &policy, &mut ChaCha8Rng::seed_from_u64(7));
    println!("reproducible: {}", again == views);
}
