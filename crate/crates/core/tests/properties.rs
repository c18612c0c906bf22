use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use suave_lab::assign::{
    center_sharpen_assign, entropy, sinkhorn_assign, sinkhorn_assign_with, update_center, CenterState, LogitBatch, LogitQueue,
    SinkhornConfig, SinkhornStop,
};
use suave_lab::data::{make_synthetic, split_labels, LabelAmount, MixKind, MixPlan, MixSpec, SplitSpec, SyntheticKind};
use suave_lab::eval::evaluate_with;
use suave_lab::gradcore::{Mode, Tape, Tensor};
use suave_lab::model::{ema_update, encode, init_encoder, Architecture, TeacherState};
use suave_lab::objective::{multiview_loss, soft_cross_entropy, LossConfig, TargetBatch, TargetOrigin, ViewInput, ViewKind};

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(lo..hi, rows * cols).prop_map(move |d| Tensor::matrix(rows, cols, d))
}

fn sized_matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Tensor> {
    (1..=max_rows, 2..=max_cols).prop_flat_map(|(r, c)| matrix(r, c, -1.0, 1.0))
}

fn stochastic(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    matrix(rows, cols, 0.01, 1.0).prop_map(|mut t| {
        for i in 0..t.rows() {
            let s: f64 = t.row(i).iter().sum();
            t.row_mut(i).iter_mut().for_each(|v| *v /= s);
        }
        t
    })
}

fn assert_row_stochastic(t: &Tensor) -> Result<(), TestCaseError> {
    for i in 0..t.rows() {
        let s: f64 = t.row(i).iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-9, "row {i} sums to {s}");
        prop_assert!(t.row(i).iter().all(|v| (0.0..=1.0 + 1e-12).contains(v)));
    }
    Ok(())
}

fn arch(d: usize, c: usize) -> Architecture {
    Architecture { input_dim: d, hidden_dims: vec![10], proj_hidden: 8, proj_out: 5, num_classes: c }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sinkhorn_rows_are_distributions(logits in sized_matrix(12, 6), eps in 0.05f64..2.0, iters in 1usize..6) {
        let cfg = SinkhornConfig { epsilon: eps, iterations: iters, queue_capacity: 0 };
        let a = sinkhorn_assign(&LogitBatch::new(logits.clone()).unwrap(), &mut LogitQueue::disabled(logits.cols()), &cfg).unwrap();
        assert_row_stochastic(a.values())?;
    }

    #[test]
    fn sinkhorn_ignores_per_sample_shift(logits in sized_matrix(10, 5), shifts in prop::collection::vec(-5.0f64..5.0, 10)) {
        let c = logits.cols();
        let mut shifted = logits.clone();
        for i in 0..shifted.rows() {
            shifted.row_mut(i).iter_mut().for_each(|v| *v += shifts[i]);
        }
        let cfg = SinkhornConfig { epsilon: 0.3, ..SinkhornConfig::default() };
        let a = sinkhorn_assign(&LogitBatch::new(logits).unwrap(), &mut LogitQueue::disabled(c), &cfg).unwrap();
        let b = sinkhorn_assign(&LogitBatch::new(shifted).unwrap(), &mut LogitQueue::disabled(c), &cfg).unwrap();
        prop_assert!(a.values().max_abs_diff(b.values()) < 1e-9);
    }

    #[test]
    fn converged_plan_has_uniform_marginals(logits in sized_matrix(16, 6), eps in 0.2f64..2.0) {
        let (b, c) = (logits.rows(), logits.cols());
        let (_, plan) = sinkhorn_assign_with(&LogitBatch::new(logits).unwrap(), &mut LogitQueue::disabled(c), eps, SinkhornStop::converge()).unwrap();
        for r in plan.row_sums() {
            prop_assert!((r - 1.0 / c as f64).abs() < 1e-6);
        }
        for s in plan.col_sums() {
            prop_assert!((s - 1.0 / b as f64).abs() < 1e-6);
        }
    }

    // Column balancing can move a row's mass off its argmax, so for
    // Sinkhorn only the whole plan sharpens.
    #[test]
    fn lower_epsilon_lowers_plan_entropy(logits in matrix(6, 4, -1.0, 1.0)) {
        let plan_entropy = |eps: f64| {
            let batch = LogitBatch::new(logits.clone()).unwrap();
            let (_, plan) = sinkhorn_assign_with(&batch, &mut LogitQueue::disabled(4), eps, SinkhornStop::converge()).unwrap();
            entropy(plan.values.data())
        };
        prop_assert!(plan_entropy(0.3) < plan_entropy(0.6) + 1e-9);
    }

    #[test]
    fn lower_epsilon_sharpens_centered_rows(logits in matrix(6, 4, -1.0, 1.0)) {
        let batch = LogitBatch::new(logits).unwrap();
        let center = CenterState::zeros(4, 0.9);
        let sharp = center_sharpen_assign(&batch, &center, 0.1).unwrap();
        let soft = center_sharpen_assign(&batch, &center, 0.5).unwrap();
        for i in 0..6 {
            let m = |t: &Tensor| t.row(i).iter().cloned().fold(0.0, f64::max);
            prop_assert!(m(sharp.values()) > m(soft.values()));
        }
    }

    #[test]
    fn queue_is_fifo(batches in prop::collection::vec(matrix(3, 4, -1.0, 1.0), 1..8)) {
        let mut q = LogitQueue::new(6, 4);
        for b in &batches {
            q.push(&LogitBatch::new(b.clone()).unwrap()).unwrap();
        }
        let refs: Vec<&Tensor> = batches.iter().collect();
        let all = Tensor::concat_rows(&refs).unwrap();
        let keep = all.rows().min(6);
        prop_assert_eq!(q.to_tensor(), all.slice_rows(all.rows() - keep, all.rows()));
    }

    #[test]
    fn centering_flattens_a_biased_teacher(logits in matrix(8, 4, -1.0, 1.0), bias in 0usize..4) {
        let mut biased = logits;
        for i in 0..8 {
            biased.row_mut(i)[bias] += 3.0;
        }
        let batch = LogitBatch::new(biased).unwrap();
        let mut center = CenterState::zeros(4, 0.5);
        let before = entropy(&center_sharpen_assign(&batch, &center, 1.0).unwrap().mean_distribution());
        for _ in 0..60 {
            center = update_center(&center, &batch).unwrap();
        }
        let a = center_sharpen_assign(&batch, &center, 1.0).unwrap();
        assert_row_stochastic(a.values())?;
        prop_assert!(entropy(&a.mean_distribution()) > before);
        prop_assert_eq!(center.mu, 0.5);
    }

    #[test]
    fn cross_entropy_bounded_by_target_entropy(logits in matrix(5, 4, -3.0, 3.0), targets in stochastic(5, 4), tau in 0.1f64..2.0) {
        let mut tape = Tape::new();
        let z = tape.leaf(logits);
        let t = TargetBatch::new(targets.clone(), vec![TargetOrigin::Pseudo; 5]).unwrap();
        let ce = soft_cross_entropy(&mut tape, z, &t, tau).unwrap();
        let h: f64 = (0..5).map(|i| entropy(targets.row(i))).sum::<f64>() / 5.0;
        prop_assert!(tape.value(ce).item() >= h - 1e-9);
    }

    #[test]
    fn cross_entropy_equals_entropy_at_the_target(targets in stochastic(4, 5), tau in 0.1f64..2.0) {
        let logits = targets.map(|p| tau * p.ln());
        let mut tape = Tape::new();
        let z = tape.leaf(logits);
        let t = TargetBatch::new(targets.clone(), vec![TargetOrigin::Pseudo; 4]).unwrap();
        let ce = soft_cross_entropy(&mut tape, z, &t, tau).unwrap();
        let h: f64 = (0..4).map(|i| entropy(targets.row(i))).sum::<f64>() / 4.0;
        prop_assert!((tape.value(ce).item() - h).abs() < 1e-9);
    }

    #[test]
    fn loss_ignores_local_view_order(
        g in prop::collection::vec(matrix(4, 3, -1.0, 1.0), 2),
        l in prop::collection::vec(matrix(4, 3, -1.0, 1.0), 3),
        t in prop::collection::vec(stochastic(4, 3), 2),
        perm in Just(vec![0usize, 1, 2]).prop_shuffle(),
    ) {
        let total = |order: &[usize]| {
            let mut tape = Tape::new();
            let mut views = Vec::new();
            for (x, y) in g.iter().zip(&t) {
                let target = TargetBatch::new(y.clone(), vec![TargetOrigin::Pseudo; 4]).unwrap();
                views.push(ViewInput { logits: tape.leaf(x.clone()), kind: ViewKind::Global, target: Some(target) });
            }
            for &i in order {
                views.push(ViewInput { logits: tape.leaf(l[i].clone()), kind: ViewKind::Local, target: None });
            }
            let out = multiview_loss(&mut tape, &views, None, &LossConfig::default()).unwrap();
            tape.value(out.total).item()
        };
        prop_assert!((total(&[0, 1, 2]) - total(&perm)).abs() < 1e-12);
    }

    #[test]
    fn mixed_targets_stay_row_stochastic(
        views in matrix(6, 5, -2.0, 2.0),
        targets in stochastic(6, 3),
        seed in any::<u64>(),
        cutmix_prob in 0.0f64..=1.0,
    ) {
        let spec = MixSpec { cutmix_prob, ..MixSpec::default() };
        let plan = MixPlan::draw(6, 5, &spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap().unwrap();
        let t = TargetBatch::new(targets, vec![TargetOrigin::Pseudo; 6]).unwrap();
        let (_, mixed) = plan.apply(&views, &t).unwrap();
        assert_row_stochastic(mixed.values())?;
        if let MixKind::CutMix { len, .. } = plan.kind {
            prop_assert_eq!(plan.lambda, 1.0 - len as f64 / 5.0);
        }
    }

    #[test]
    fn ema_contracts_every_tensor(eta in 0.0f64..=1.0, s1 in any::<u64>(), s2 in any::<u64>()) {
        let student = init_encoder(&arch(4, 3), s1).unwrap();
        let mut teacher = TeacherState::from_student(&init_encoder(&arch(4, 3), s2).unwrap(), eta);
        let before = teacher.params.clone();
        ema_update(&mut teacher, &student).unwrap();
        for (name, p) in teacher.params.params.iter() {
            let theta = student.params.get(name).unwrap();
            let d_new = Tensor::matrix(1, theta.len(), p.value.data().iter().zip(theta.data()).map(|(a, b)| a - b).collect()).norm();
            let old = before.params.get(name).unwrap();
            let d_old = Tensor::matrix(1, theta.len(), old.data().iter().zip(theta.data()).map(|(a, b)| a - b).collect()).norm();
            prop_assert!((d_new - eta * d_old).abs() <= 1e-12 * (1.0 + d_old));
        }
    }

    #[test]
    fn eval_forward_is_per_sample(x in matrix(7, 4, -2.0, 2.0), seed in any::<u64>()) {
        let p = init_encoder(&arch(4, 3), seed).unwrap();
        let full = encode(&p, &x, Mode::Eval).unwrap();
        let part = encode(&p, &x.slice_rows(2, 5), Mode::Eval).unwrap();
        prop_assert_eq!(&full.logits.slice_rows(2, 5), &part.logits);
        for i in 0..7 {
            let n: f64 = full.embedding.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() < 1e-9);
            prop_assert!(full.logits.row(i).iter().all(|v| v.abs() <= 1.0 + 1e-12));
        }
    }

    #[test]
    fn split_is_balanced_and_seeded(per_class in 1usize..10, seed in any::<u64>()) {
        let ds = make_synthetic(SyntheticKind::GaussianBlobs, 60, 3, 4, 2.0, 1).unwrap();
        let spec = SplitSpec { amount: LabelAmount::PerClass(per_class), seed };
        let a = split_labels(&ds, &spec).unwrap();
        prop_assert_eq!(&a, &split_labels(&ds, &spec).unwrap());
        let mut counts = [0usize; 4];
        a.labeled.iter().for_each(|&i| counts[ds.labels[i]] += 1);
        prop_assert_eq!(counts, [per_class; 4]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn top1_does_not_depend_on_report_temperature(seed in any::<u64>(), tau in 0.01f64..10.0) {
        let ds = make_synthetic(SyntheticKind::GaussianBlobs, 80, 4, 3, 3.0, seed).unwrap();
        let p = init_encoder(&arch(4, 3), seed).unwrap();
        let a = evaluate_with(&p, &ds, tau).unwrap();
        let b = evaluate_with(&p, &ds, 0.1).unwrap();
        prop_assert_eq!(a.proto_top1, b.proto_top1);
        prop_assert_eq!(a.cluster_purity, b.cluster_purity);
    }
}
