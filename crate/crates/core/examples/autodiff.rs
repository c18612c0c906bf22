//! Reverse-mode differentiation on the tape: a two-layer network, its
//! gradients, and a central-difference check.

use suave_lab::gradcore::{Tape, Tensor};

fn loss(w1: &Tensor, w2: &Tensor, x: &Tensor, y: &Tensor) -> (f64, Tensor, Tensor) {
    let mut t = Tape::new();
    let (xv, yv) = (t.constant(x.clone()), t.constant(y.clone()));
    let (a, b) = (t.named_leaf("w1", w1.clone()), t.named_leaf("w2", w2.clone()));
    let h = t.matmul(xv, a).unwrap();
    let h = t.relu(h).unwrap();
    let o = t.matmul(h, b).unwrap();
    let ls = t.log_softmax_rows(o).unwrap();
    let p = t.mul(ls, yv).unwrap();
    let m = t.mean(p).unwrap();
    let l = t.scale(m, -1.0).unwrap();
    let value = t.value(l).item();
    let g = t.backward(l).unwrap();
    (value, g.named("w1").unwrap().clone(), g.named("w2").unwrap().clone())
}

fn main() {
    let x = Tensor::from_rows(&[vec![0.5, -1.0, 2.0], vec![1.5, 0.3, -0.7]]).unwrap();
    let y = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let w1 = Tensor::from_rows(&[vec![0.2, -0.4, 0.1, 0.7], vec![0.5, 0.3, -0.2, 0.1], vec![-0.3, 0.8, 0.4, -0.5]]).unwrap();
    let w2 = Tensor::from_rows(&[vec![0.3, -0.1], vec![-0.6, 0.2], vec![0.9, 0.4], vec![0.1, -0.8]]).unwrap();

    let (value, g1, _) = loss(&w1, &w2, &x, &y);
    println!("loss {value:.6}");
    let h = 1e-6;
    for j in 0..4 {
        let (mut plus, mut minus) = (w1.clone(), w1.clone());
        plus.data_mut()[j] += h;
        minus.data_mut()[j] -= h;
        let fd = (loss(&plus, &w2, &x, &y).0 - loss(&minus, &w2, &x, &y).0) / (2.0 * h);
        println!("dL/dw1[{j}]  tape {:+.8}  finite difference {fd:+.8}", g1.data()[j]);
    }
}
