//! Helpers shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use suave_lab::gradcore::{Mode, OpKind, ParamSet, Tape, Tensor};
use suave_lab::model::{encoder_forward, init_encoder, Architecture, EncoderParams};
use suave_lab::objective::{multiview_loss, smooth_class_labels, LossConfig, TargetBatch, TargetOrigin, ViewInput, ViewKind};

pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const TRIALS: u64 = 20;

pub fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    // keep entries away from the relu kink so the difference quotient is smooth
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.05..1.5);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Scalar objective `Σ op(inputs) ⊙ weights`, evaluated on a fresh tape.
pub fn objective(
    kind: &OpKind,
    mode: Mode,
    inputs: &[Tensor],
    weights: &Tensor,
    grad_mask: &[bool],
) -> (f64, Vec<Option<Tensor>>) {
    let mut tape = Tape::new();
    let vars: Vec<_> =
        inputs.iter().zip(grad_mask).map(|(t, &g)| if g { tape.leaf(t.clone()) } else { tape.constant(t.clone()) }).collect();
    let out = tape.forward_op(kind, &vars, mode).unwrap();
    let w = tape.constant(weights.clone());
    let prod = tape.mul(out, w).unwrap();
    let loss = tape.sum(prod).unwrap();
    let value = tape.value(loss).item();
    let grads = tape.backward(loss).unwrap();
    let gs = vars.iter().zip(grad_mask).map(|(v, &g)| if g { grads.get(*v).cloned() } else { None }).collect();
    (value, gs)
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    // a bias feeding batchnorm has an identically zero gradient; compare
    // such vectors absolutely
    if scale < 1e-8 {
        diff
    } else {
        diff / scale
    }
}

/// Worst relative error between analytic and central-difference gradients
/// of `op` over [`TRIALS`] random instances.
pub fn worst_error(kind: &OpKind, mode: Mode, shapes: &[Vec<usize>], grad_mask: &[bool], prep: impl Fn(&mut Vec<Tensor>)) -> f64 {
    let mut worst: f64 = 0.0;
    for trial in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let mut inputs: Vec<Tensor> = shapes.iter().map(|s| random(&mut rng, s)).collect();
        prep(&mut inputs);
        let out_shape = {
            let mut tape = Tape::new();
            let vars: Vec<_> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
            let out = tape.forward_op(kind, &vars, mode).unwrap();
            tape.value(out).shape().to_vec()
        };
        let weights = random(&mut rng, &out_shape);
        let (_, analytic) = objective(kind, mode, &inputs, &weights, grad_mask);
        for (idx, &differentiable) in grad_mask.iter().enumerate() {
            if !differentiable {
                continue;
            }
            let mut numeric = vec![0.0; inputs[idx].len()];
            for j in 0..inputs[idx].len() {
                let mut plus = inputs.clone();
                plus[idx].data_mut()[j] += STEP;
                let mut minus = inputs.clone();
                minus[idx].data_mut()[j] -= STEP;
                let fp = objective(kind, mode, &plus, &weights, grad_mask).0;
                let fm = objective(kind, mode, &minus, &weights, grad_mask).0;
                numeric[j] = (fp - fm) / (2.0 * STEP);
            }
            let a = analytic[idx].as_ref().expect("gradient present");
            let err = relative_error(a.data(), &numeric);
            worst = worst.max(err);
        }
    }
    worst
}

/// Every differentiable op with the shapes and masks it is checked at.
pub fn op_cases() -> Vec<(OpKind, Mode, Vec<Vec<usize>>, Vec<bool>)> {
    vec![
        (OpKind::Matmul, Mode::Train, vec![vec![4, 3], vec![3, 5]], vec![true, true]),
        (OpKind::MatmulBt, Mode::Train, vec![vec![4, 3], vec![5, 3]], vec![true, true]),
        (OpKind::Add, Mode::Train, vec![vec![4, 3], vec![4, 3]], vec![true, true]),
        (OpKind::Add, Mode::Train, vec![vec![4, 3], vec![3]], vec![true, true]),
        (OpKind::Mul, Mode::Train, vec![vec![3, 4], vec![3, 4]], vec![true, true]),
        (OpKind::Relu, Mode::Train, vec![vec![5, 4]], vec![true]),
        (OpKind::BatchNorm, Mode::Train, vec![vec![6, 4], vec![4], vec![4]], vec![true, true, true]),
        (
            OpKind::BatchNorm,
            Mode::Eval,
            vec![vec![6, 4], vec![4], vec![4], vec![4], vec![4]],
            vec![true, true, true, false, false],
        ),
        (OpKind::L2NormalizeRows, Mode::Train, vec![vec![5, 4]], vec![true]),
        (OpKind::LogSoftmaxRows, Mode::Train, vec![vec![5, 6]], vec![true]),
        (OpKind::Scale(-2.5), Mode::Train, vec![vec![3, 3]], vec![true]),
        (OpKind::ConcatRows, Mode::Train, vec![vec![2, 3], vec![4, 3], vec![1, 3]], vec![true, true, true]),
        (OpKind::SliceRows { start: 1, end: 4 }, Mode::Train, vec![vec![6, 3]], vec![true]),
        (OpKind::Sum, Mode::Train, vec![vec![3, 4]], vec![true]),
        (OpKind::Mean, Mode::Train, vec![vec![3, 4]], vec![true]),
    ]
}

/// Running variances must stay positive in eval-mode batchnorm.
pub fn prep_inputs(kind: &OpKind, mode: Mode) -> impl Fn(&mut Vec<Tensor>) {
    let fix = matches!((kind, mode), (OpKind::BatchNorm, Mode::Eval));
    move |inputs: &mut Vec<Tensor>| {
        if fix {
            inputs[4] = inputs[4].map(|v| v.abs() + 0.5);
        }
    }
}

/// A small encoder and one batch of two global views (each with two extra
/// mixed rows), a shorter local view and a labeled block.
pub struct CompositeCase {
    pub params: EncoderParams,
    pub input: Tensor,
    /// Rows, view kind and target of each block; `None` marks labeled rows.
    pub pieces: Vec<(usize, Option<ViewKind>, Option<TargetBatch>)>,
}

fn soft_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> TargetBatch {
    let mut data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(0.01..1.0)).collect();
    for row in data.chunks_mut(cols) {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    TargetBatch::new(Tensor::matrix(rows, cols, data), vec![TargetOrigin::Pseudo; rows]).unwrap()
}

pub fn composite_case(seed: u64) -> CompositeCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arch = Architecture { input_dim: 4, hidden_dims: vec![5], proj_hidden: 6, proj_out: 3, num_classes: 3 };
    let params = init_encoder(&arch, seed).unwrap();
    let pieces = vec![
        (6, Some(ViewKind::Global), Some(soft_rows(&mut rng, 6, 3))),
        (6, Some(ViewKind::Global), Some(soft_rows(&mut rng, 6, 3))),
        (4, Some(ViewKind::Local), None),
        (3, None, Some(smooth_class_labels(&[0, 2, 1], 3, 0.01).unwrap())),
    ];
    let rows = pieces.iter().map(|p| p.0).sum();
    let input = random(&mut rng, &[rows, 4]);
    CompositeCase { params, input, pieces }
}

/// Loss value and the gradient of every named parameter.
pub fn composite_loss(case: &CompositeCase, values: &ParamSet) -> (f64, Vec<(String, Tensor)>) {
    let mut p = case.params.clone();
    p.params = values.clone();
    let mut tape = Tape::new();
    let x = tape.constant(case.input.clone());
    let out = encoder_forward(&p, &mut tape, x, Mode::Train, true).unwrap();
    let mut views = Vec::new();
    let mut labeled = None;
    let mut at = 0;
    for (rows, kind, target) in &case.pieces {
        let logits = tape.slice_rows(out.logits, at, at + rows).unwrap();
        at += rows;
        match kind {
            Some(k) => views.push(ViewInput { logits, kind: *k, target: target.clone() }),
            None => labeled = Some((logits, target.as_ref().unwrap())),
        }
    }
    let loss = multiview_loss(&mut tape, &views, labeled, &LossConfig::default()).unwrap();
    let value = tape.value(loss.total).item();
    let grads = tape.backward(loss.total).unwrap();
    let named =
        values.names().map(|n| (n.to_string(), grads.named(n).expect("every parameter receives a gradient").clone())).collect();
    (value, named)
}

/// Worst relative error of the composite-loss gradient over all parameters.
pub fn composite_worst_error(seed: u64) -> f64 {
    let case = composite_case(seed);
    let base = case.params.params.clone();
    let (_, analytic) = composite_loss(&case, &base);
    let mut worst: f64 = 0.0;
    for (name, a) in &analytic {
        let mut numeric = vec![0.0; a.len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let mut plus = base.clone();
            plus.value_mut(name).unwrap().data_mut()[j] += STEP;
            let mut minus = base.clone();
            minus.value_mut(name).unwrap().data_mut()[j] -= STEP;
            *slot = (composite_loss(&case, &plus).0 - composite_loss(&case, &minus).0) / (2.0 * STEP);
        }
        worst = worst.max(relative_error(a.data(), &numeric));
    }
    worst
}
