//! Analytic gradients against central finite differences for every op kind.

mod common;

use common::{composite_worst_error, random, relative_error, worst_error, STEP, TOL};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use suave_lab::gradcore::{Mode, OpKind, Tape, Tensor};

fn check(kind: OpKind, mode: Mode, shapes: &[Vec<usize>], grad_mask: &[bool], prep: impl Fn(&mut Vec<Tensor>)) {
    let worst = worst_error(&kind, mode, shapes, grad_mask, prep);
    assert!(worst < TOL, "{kind:?} ({mode:?}): worst relative error {worst:e}");
}

#[test]
fn matmul_gradients() {
    check(OpKind::Matmul, Mode::Train, &[vec![4, 3], vec![3, 5]], &[true, true], |_| {});
}

#[test]
fn matmul_bt_gradients() {
    check(OpKind::MatmulBt, Mode::Train, &[vec![4, 3], vec![5, 3]], &[true, true], |_| {});
}

#[test]
fn add_gradients_plain_and_broadcast() {
    check(OpKind::Add, Mode::Train, &[vec![4, 3], vec![4, 3]], &[true, true], |_| {});
    check(OpKind::Add, Mode::Train, &[vec![4, 3], vec![3]], &[true, true], |_| {});
}

#[test]
fn mul_gradients() {
    check(OpKind::Mul, Mode::Train, &[vec![3, 4], vec![3, 4]], &[true, true], |_| {});
}

#[test]
fn relu_gradients() {
    check(OpKind::Relu, Mode::Train, &[vec![5, 4]], &[true], |_| {});
}

#[test]
fn batchnorm_train_gradients() {
    check(OpKind::BatchNorm, Mode::Train, &[vec![6, 4], vec![4], vec![4]], &[true, true, true], |_| {});
}

#[test]
fn batchnorm_eval_gradients() {
    check(
        OpKind::BatchNorm,
        Mode::Eval,
        &[vec![6, 4], vec![4], vec![4], vec![4], vec![4]],
        &[true, true, true, false, false],
        |inputs| inputs[4] = inputs[4].map(|v| v.abs() + 0.5),
    );
}

#[test]
fn l2_normalize_gradients() {
    check(OpKind::L2NormalizeRows, Mode::Train, &[vec![5, 4]], &[true], |_| {});
}

#[test]
fn log_softmax_gradients() {
    check(OpKind::LogSoftmaxRows, Mode::Train, &[vec![5, 6]], &[true], |_| {});
}

#[test]
fn scale_gradients() {
    check(OpKind::Scale(-2.5), Mode::Train, &[vec![3, 3]], &[true], |_| {});
}

#[test]
fn concat_rows_routes_slices_to_parents() {
    check(OpKind::ConcatRows, Mode::Train, &[vec![2, 3], vec![4, 3], vec![1, 3]], &[true, true, true], |_| {});
}

#[test]
fn slice_rows_gradients() {
    check(OpKind::SliceRows { start: 1, end: 4 }, Mode::Train, &[vec![6, 3]], &[true], |_| {});
}

#[test]
fn sum_and_mean_gradients() {
    check(OpKind::Sum, Mode::Train, &[vec![3, 4]], &[true], |_| {});
    check(OpKind::Mean, Mode::Train, &[vec![3, 4]], &[true], |_| {});
}

/// Two-layer MLP with a softmax cross-entropy head, differentiated end to end.
#[test]
fn random_two_layer_mlp_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random(&mut rng, &[6, 5]);
    let w1 = random(&mut rng, &[5, 8]);
    let b1 = random(&mut rng, &[8]);
    let w2 = random(&mut rng, &[8, 3]);
    let target = Tensor::matrix(6, 3, (0..18).map(|i| if i % 3 == (i / 3) % 3 { 1.0 } else { 0.0 }).collect());

    let loss_of = |params: &[Tensor]| -> (f64, Vec<Tensor>) {
        let mut t = Tape::new();
        let xv = t.constant(x.clone());
        let vs: Vec<_> = params.iter().map(|p| t.leaf(p.clone())).collect();
        let h = t.matmul(xv, vs[0]).unwrap();
        let h = t.add(h, vs[1]).unwrap();
        let h = t.relu(h).unwrap();
        let o = t.matmul(h, vs[2]).unwrap();
        let ls = t.log_softmax_rows(o).unwrap();
        let tv = t.constant(target.clone());
        let p = t.mul(ls, tv).unwrap();
        let m = t.mean(p).unwrap();
        let l = t.scale(m, -1.0).unwrap();
        let value = t.value(l).item();
        let g = t.backward(l).unwrap();
        (value, vs.iter().map(|v| g.get(*v).unwrap().clone()).collect())
    };
    let params = vec![w1, b1, w2];
    let (_, analytic) = loss_of(&params);
    for (i, a) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; a.len()];
        for j in 0..a.len() {
            let mut p = params.clone();
            p[i].data_mut()[j] += STEP;
            let fp = loss_of(&p).0;
            p[i].data_mut()[j] -= 2.0 * STEP;
            let fm = loss_of(&p).0;
            numeric[j] = (fp - fm) / (2.0 * STEP);
        }
        let err = relative_error(a.data(), &numeric);
        assert!(err < TOL, "param {i}: {err:e}");
    }
}

#[test]
fn batchnorm_train_output_is_standardized() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let rows = rng.random_range(8..40);
        let cols = rng.random_range(1..8);
        let shift: f64 = rng.random_range(-5.0..5.0);
        let x = random(&mut rng, &[rows, cols]).map(|v| 3.0 * v + shift);
        let mut t = Tape::new();
        let xv = t.constant(x);
        let g = t.constant(Tensor::filled(&[cols], 1.0));
        let b = t.constant(Tensor::zeros(&[cols]));
        let y = t.batchnorm_train(xv, g, b).unwrap();
        let out = t.value(y);
        let means = out.column_means();
        for j in 0..cols {
            let var: f64 = (0..rows).map(|i| (out.get(i, j) - means[j]).powi(2)).sum::<f64>() / rows as f64;
            assert!(means[j].abs() < 1e-9, "mean {}", means[j]);
            assert!((var - 1.0).abs() < 1e-6, "var {var}");
        }
    }
}

#[test]
fn l2_normalize_rows_unit_norm_and_orthogonal_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let x = random(&mut rng, &[4, 6]).map(|v| v * 7.0);
        let w = random(&mut rng, &[4, 6]);
        let mut t = Tape::new();
        let xv = t.leaf(x);
        let y = t.l2_normalize_rows(xv).unwrap();
        let normalized = t.value(y).clone();
        for i in 0..4 {
            let n: f64 = normalized.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
        let wv = t.constant(w);
        let p = t.mul(y, wv).unwrap();
        let s = t.sum(p).unwrap();
        let g = t.backward(s).unwrap();
        let gx = g.get(xv).unwrap();
        for i in 0..4 {
            let dot: f64 = gx.row(i).iter().zip(normalized.row(i)).map(|(a, b)| a * b).sum();
            assert!(dot.abs() < 1e-9, "dot {dot}");
        }
    }
}

#[test]
fn encoder_and_multiview_loss_match_finite_differences() {
    for seed in 0..5 {
        let err = composite_worst_error(seed);
        assert!(err < TOL, "seed {seed}: {err:e}");
    }
}
