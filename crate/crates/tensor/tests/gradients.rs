use kbie_tensor::{
    gradient_check, op_case, Graph, OpKind, ParamSet, Tensor, DIFFERENTIABLE_KINDS,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn every_op_kind_matches_finite_differences() {
    for &kind in DIFFERENTIABLE_KINDS {
        for seed in 0..20 {
            let mut case = op_case(kind, seed);
            let report = gradient_check(&mut case.params, 1e-4, &mut case.build).unwrap();
            assert!(
                report.passed(),
                "{kind:?} seed {seed}: max rel error {}",
                report.max_error()
            );
        }
    }
}

#[test]
fn affine_tanh_sum_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut ps = ParamSet::new();
    let rand3 = |rng: &mut ChaCha8Rng| {
        Tensor::matrix(3, 3, (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    };
    let w = ps.add("w", rand3(&mut rng).with_grad()).unwrap();
    let b = ps.add("b", Tensor::row(vec![0.1, -0.2, 0.3]).unwrap().with_grad()).unwrap();
    let x = rand3(&mut rng);
    let report = gradient_check(&mut ps, 1e-4, |g, p| {
        let xv = g.constant(x.clone());
        let (wv, bv) = (g.param(p, w), g.param(p, b));
        let h = g.matmul(xv, wv)?;
        let h = g.add(h, bv)?;
        let h = g.tanh(h)?;
        g.sum(h, None)
    })
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn softmax_bce_composite_passes() {
    let mut ps = ParamSet::new();
    let z = ps
        .add("z", Tensor::matrix(2, 3, vec![0.3, -1.0, 2.0, 0.5, 0.5, -0.1]).unwrap().with_grad())
        .unwrap();
    let report = gradient_check(&mut ps, 1e-4, |g, p| {
        let zv = g.param(p, z);
        let s = g.softmax(zv, 1)?;
        g.bce_with_logits(s, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0])
    })
    .unwrap();
    assert!(report.passed());
}

#[test]
fn corrupted_backward_rule_is_caught() {
    for kind in [OpKind::MatMul, OpKind::Tanh, OpKind::SegmentLogSumExp] {
        let mut case = op_case(kind, 3);
        let mut build = case.build;
        let report = gradient_check(&mut case.params, 1e-4, move |g, p| {
            g.inject_backward_fault(Some(kind));
            build(g, p)
        })
        .unwrap();
        assert!(!report.passed(), "{kind:?} fault went unnoticed");
        assert!(report.max_error() > 1e-4);
    }
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(
        rows in 1usize..5,
        vals in proptest::collection::vec(-30.0f64..30.0, 20),
    ) {
        let cols = 4;
        let data = vals[..rows * cols].to_vec();
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(rows, cols, data).unwrap());
        let s = g.softmax(x, 1).unwrap();
        for r in 0..rows {
            let row = g.value(s).row_slice(r);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn concat_then_slice_reconstructs(
        r in 1usize..4, c1 in 1usize..4, c2 in 1usize..4, axis in 0usize..2, seed in 0u64..1000,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (s1, s2) = if axis == 0 { ((c1, r), (c2, r)) } else { ((r, c1), (r, c2)) };
        let mk = |rng: &mut ChaCha8Rng, (a, b): (usize, usize)| {
            Tensor::matrix(a, b, (0..a * b).map(|_| rng.gen::<f64>()).collect()).unwrap()
        };
        let (t1, t2) = (mk(&mut rng, s1), mk(&mut rng, s2));
        let mut g = Graph::new();
        let (a, b) = (g.constant(t1.clone()), g.constant(t2.clone()));
        let cat = g.concat(&[a, b], axis).unwrap();
        let split = if axis == 0 { s1.0 } else { s1.1 };
        let total = split + if axis == 0 { s2.0 } else { s2.1 };
        let back1 = g.slice(cat, axis, 0, split).unwrap();
        let back2 = g.slice(cat, axis, split, total).unwrap();
        prop_assert_eq!(g.value(back1).data(), t1.data());
        prop_assert_eq!(g.value(back2).data(), t2.data());
    }

    #[test]
    fn dropout_is_identity_without_training(rate in 0.0f64..0.95, seed in 0u64..100) {
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(vec![1.0, -2.0, 3.0]).unwrap());
        prop_assert_eq!(g.dropout(x, rate).unwrap(), x);
        let mut t = Graph::training(ChaCha8Rng::seed_from_u64(seed));
        let x = t.constant(Tensor::row(vec![1.0, -2.0, 3.0]).unwrap());
        prop_assert_eq!(t.dropout(x, 0.0).unwrap(), x);
    }
}
