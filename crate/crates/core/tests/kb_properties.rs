use kbie::kbmodule::{kb_repr, KbConfig, KbModule, ResolvedCandidate, WeightingScheme};
use kbie_tensor::{Graph, ParamSet, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SPAN_DIM: usize = 5;
const DIM: usize = 3;

fn candidate_list() -> impl Strategy<Value = Vec<ResolvedCandidate>> {
    proptest::collection::vec((0.01f64..1.0, proptest::collection::vec(-2.0f64..2.0, DIM)), 0..6).prop_map(|rows| {
        let z: f64 = rows.iter().map(|r| r.0).sum();
        rows.into_iter()
            .enumerate()
            .map(|(i, (p, v))| ResolvedCandidate {
                entity: format!("e{i:02}"),
                prior: p / z,
                vector: v,
            })
            .collect()
    })
}

fn module(scheme: WeightingScheme, seed: u64) -> (KbModule, ParamSet) {
    let mut params = ParamSet::new();
    let cfg = KbConfig {
        scheme,
        attention_hidden: 4,
        ..KbConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = KbModule::new(&mut params, &cfg, SPAN_DIM, DIM, &mut rng).unwrap();
    (m, params)
}

fn spans_tensor(n: usize, seed: u64) -> Tensor {
    let data = (0..n * SPAN_DIM).map(|i| ((i as u64 * 7 + seed) % 11) as f64 / 5.0 - 1.0).collect();
    Tensor::matrix(n, SPAN_DIM, data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn e_is_the_weighted_candidate_sum(lists in proptest::collection::vec(candidate_list(), 1..5), seed in 0u64..50) {
        for scheme in WeightingScheme::ALL {
            let (m, params) = module(scheme, seed);
            let mut g = Graph::new();
            let s = g.constant(spans_tensor(lists.len(), seed));
            let out = m.forward(&mut g, &params, s, &lists).unwrap();
            let weights = KbModule::weights_of(&g, &out, &lists);
            let e = g.value(out.e);
            for (i, list) in lists.iter().enumerate() {
                prop_assert_eq!(weights[i].len(), list.len());
                let ids: Vec<&str> = list.iter().map(|c| c.entity.as_str()).collect();
                let vecs: Vec<&[f64]> = list.iter().map(|c| c.vector.as_slice()).collect();
                let expect = kb_repr(&ids, &weights[i], &vecs, DIM);
                for (a, b) in e.row_slice(i).iter().zip(&expect) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
                if list.is_empty() {
                    prop_assert!(e.row_slice(i).iter().all(|&v| v == 0.0));
                } else {
                    let total: f64 = weights[i].iter().sum();
                    prop_assert!((total - 1.0).abs() < 1e-9);
                    prop_assert!(weights[i].iter().all(|&w| w >= 0.0));
                }
            }
        }
    }

    #[test]
    fn kb_repr_ignores_candidate_order(list in candidate_list(), weights in proptest::collection::vec(0.0f64..1.0, 6), rot in 0usize..6) {
        let n = list.len();
        let ids: Vec<&str> = list.iter().map(|c| c.entity.as_str()).collect();
        let vecs: Vec<&[f64]> = list.iter().map(|c| c.vector.as_slice()).collect();
        let w = &weights[..n];
        let base = kb_repr(&ids, w, &vecs, DIM);
        let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n.max(1)).collect();
        let pids: Vec<&str> = perm.iter().map(|&i| ids[i]).collect();
        let pvecs: Vec<&[f64]> = perm.iter().map(|&i| vecs[i]).collect();
        let pw: Vec<f64> = perm.iter().map(|&i| w[i]).collect();
        prop_assert_eq!(kb_repr(&pids, &pw, &pvecs, DIM), base);
    }
}

#[test]
fn gradients_reach_the_scorer_but_not_the_inputs() {
    for scheme in [WeightingScheme::Attention, WeightingScheme::AttPrior] {
        let (m, mut params) = module(scheme, 3);
        let lists = vec![vec![
            ResolvedCandidate { entity: "a".into(), prior: 0.7, vector: vec![1.0, 0.0, -1.0] },
            ResolvedCandidate { entity: "b".into(), prior: 0.3, vector: vec![0.0, 2.0, 0.5] },
        ]];
        let mut g = Graph::new();
        let s = g.constant(spans_tensor(1, 0));
        let out = m.forward(&mut g, &params, s, &lists).unwrap();
        let target = g.constant(Tensor::matrix(1, DIM, vec![0.3, -0.2, 0.9]).unwrap());
        let prod = g.mul(out.e, target).unwrap();
        let loss = g.sum(prod, None).unwrap();
        g.backward(loss, &mut params).unwrap();
        let moved = params
            .iter()
            .any(|(_, t)| t.grad.as_ref().is_some_and(|gr| gr.iter().any(|&v| v != 0.0)));
        assert!(moved, "{scheme}: no gradient reached the scorer");
        assert_eq!(lists[0][0].vector, vec![1.0, 0.0, -1.0]);
    }
    let (m, params) = module(WeightingScheme::Prior, 3);
    assert!(m.attention.is_none());
    assert!(params.is_empty());
}
