//! Writes a tiny IDX image/label pair (the MNIST container format) and
//! loads it back as a dataset with pixels scaled to [0, 1].
//!
//! Pass two paths to load real files instead:
//! `cargo run --example idx_ingest -- train-images-idx3-ubyte train-labels-idx1-ubyte`

use std::fs;
use std::path::PathBuf;

use suave_lab::data::load_idx;

fn write_pair(dir: &std::path::Path) -> std::io::Result<(PathBuf, PathBuf)> {
    let (n, rows, cols) = (6u32, 3u32, 3u32);
    let mut images = vec![0, 0, 8, 3];
    for v in [n, rows, cols] {
        images.extend(v.to_be_bytes());
    }
    // class k lights up row k
    let mut labels = vec![0, 0, 8, 1];
    labels.extend(n.to_be_bytes());
    for i in 0..n {
        let k = i % 3;
        images.extend((0..rows * cols).map(|p| if p / cols == k { 255 } else { 0 }));
        labels.push(k as u8);
    }
    let (ip, lp) = (dir.join("toy-images-idx3-ubyte"), dir.join("toy-labels-idx1-ubyte"));
    fs::write(&ip, images)?;
    fs::write(&lp, labels)?;
    Ok((ip, lp))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (images, labels) = match args.as_slice() {
        [i, l] => (PathBuf::from(i), PathBuf::from(l)),
        _ => write_pair(&std::env::temp_dir())?,
    };
    let ds = load_idx(&images, &labels)?;
    println!("{}: {} samples of dimension {}, class counts {:?}", ds.name, ds.len(), ds.dim(), ds.class_counts());
    for i in 0..ds.len().min(3) {
        println!("label {}: {:?}", ds.labels[i], ds.sample(i));
    }
    Ok(())
}
