//! Randomized single-op graphs for gradient checking every op kind.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, OpKind, Var};
use crate::params::{ParamId, ParamSet};
use crate::tensor::Tensor;

pub type Builder = Box<dyn FnMut(&mut Graph, &ParamSet) -> Result<Var>>;

pub struct OpCase {
    pub kind: OpKind,
    pub params: ParamSet,
    pub build: Builder,
}

/// Every op kind that has a backward rule worth checking.
pub const DIFFERENTIABLE_KINDS: &[OpKind] = &[
    OpKind::MatMul,
    OpKind::Add,
    OpKind::Mul,
    OpKind::Concat,
    OpKind::Slice,
    OpKind::Sigmoid,
    OpKind::Tanh,
    OpKind::Relu,
    OpKind::Softmax,
    OpKind::Sum,
    OpKind::Mean,
    OpKind::Gather,
    OpKind::Scale,
    OpKind::BceWithLogits,
    OpKind::MaxPool,
    OpKind::Dropout,
    OpKind::SegmentSoftmax,
    OpKind::SegmentLogSumExp,
    OpKind::SegmentSum,
    OpKind::Reshape,
];

fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-1.5..1.5)).collect())
        .expect("finite")
}

/// Values bounded away from zero and pairwise distinct, so relu kinks and
/// max ties sit far outside the finite-difference step.
fn separated_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    let mut vals: Vec<f64> = (0..r * c).map(|i| 0.2 + 0.15 * i as f64).collect();
    vals.shuffle(rng);
    for v in vals.iter_mut() {
        if rng.gen_bool(0.5) {
            *v = -*v;
        }
    }
    Tensor::matrix(r, c, vals).expect("finite")
}

fn add_param(ps: &mut ParamSet, name: &str, t: Tensor) -> ParamId {
    ps.add(name, t.with_grad()).expect("unique names")
}

/// Random groups partitioning `0..n`.
fn random_partition(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut groups = Vec::new();
    let mut rest = &idx[..];
    while !rest.is_empty() {
        let take = rng.gen_range(1..=rest.len());
        groups.push(rest[..take].to_vec());
        rest = &rest[take..];
    }
    groups
}

/// A random instance of `kind` whose output is contracted with a fixed
/// random weight matrix into a scalar.
pub fn op_case(kind: OpKind, seed: u64) -> OpCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let r = rng.gen_range(1..=4);
    let c = rng.gen_range(1..=4);
    let axis = rng.gen_range(0..2usize);
    let mut ps = ParamSet::new();
    let a = add_param(&mut ps, "a", rand_matrix(&mut rng, r, c));

    // Builds the op under test and returns its output.
    let op: Builder = match kind {
        OpKind::MatMul => {
            let n = rng.gen_range(1..=4);
            let b = add_param(&mut ps, "b", rand_matrix(&mut rng, c, n));
            Box::new(move |g, p| {
                let (x, y) = (g.param(p, a), g.param(p, b));
                g.matmul(x, y)
            })
        }
        OpKind::Add | OpKind::Mul => {
            let shape = [(r, c), (1, c), (r, 1), (1, 1)][rng.gen_range(0..4)];
            let b = add_param(&mut ps, "b", rand_matrix(&mut rng, shape.0, shape.1));
            let swap = rng.gen_bool(0.5);
            Box::new(move |g, p| {
                let (mut x, mut y) = (g.param(p, a), g.param(p, b));
                if swap {
                    std::mem::swap(&mut x, &mut y);
                }
                if kind == OpKind::Add {
                    g.add(x, y)
                } else {
                    g.mul(x, y)
                }
            })
        }
        OpKind::Concat => {
            let extra = rng.gen_range(1..=3);
            let shape = if axis == 0 { (extra, c) } else { (r, extra) };
            let b = add_param(&mut ps, "b", rand_matrix(&mut rng, shape.0, shape.1));
            Box::new(move |g, p| {
                let (x, y) = (g.param(p, a), g.param(p, b));
                g.concat(&[x, y, x], axis)
            })
        }
        OpKind::Slice => {
            let dim = if axis == 0 { r } else { c };
            let start = rng.gen_range(0..dim);
            let end = rng.gen_range(start + 1..=dim);
            Box::new(move |g, p| {
                let x = g.param(p, a);
                g.slice(x, axis, start, end)
            })
        }
        OpKind::Sigmoid => Box::new(move |g, p| {
            let x = g.param(p, a);
            g.sigmoid(x)
        }),
        OpKind::Tanh => Box::new(move |g, p| {
            let x = g.param(p, a);
            g.tanh(x)
        }),
        OpKind::Relu | OpKind::MaxPool => {
            *ps.get_mut(a) = separated_matrix(&mut rng, r, c).with_grad();
            Box::new(move |g, p| {
                let x = g.param(p, a);
                if kind == OpKind::Relu {
                    g.relu(x)
                } else {
                    g.max_pool(x, axis)
                }
            })
        }
        OpKind::Softmax => Box::new(move |g, p| {
            let x = g.param(p, a);
            g.softmax(x, axis)
        }),
        OpKind::Sum | OpKind::Mean => {
            let ax = [None, Some(0), Some(1)][rng.gen_range(0..3)];
            Box::new(move |g, p| {
                let x = g.param(p, a);
                if kind == OpKind::Sum {
                    g.sum(x, ax)
                } else {
                    g.mean(x, ax)
                }
            })
        }
        OpKind::Gather => {
            let idx: Vec<usize> = (0..rng.gen_range(1..=6)).map(|_| rng.gen_range(0..r)).collect();
            Box::new(move |g, p| {
                let x = g.param(p, a);
                g.gather(x, &idx)
            })
        }
        OpKind::Scale => {
            let f = rng.gen_range(-2.0..2.0);
            Box::new(move |g, p| {
                let x = g.param(p, a);
                g.scale(x, f)
            })
        }
        OpKind::BceWithLogits => {
            let targets: Vec<f64> = (0..r * c).map(|_| rng.gen_range(0.0..=1.0)).collect();
            Box::new(move |g, p| {
                let x = g.param(p, a);
                g.bce_with_logits(x, &targets)
            })
        }
        OpKind::Dropout => {
            let mask_seed = rng.gen::<u64>();
            Box::new(move |g, p| {
                g.set_training(Some(ChaCha8Rng::seed_from_u64(mask_seed)));
                let x = g.param(p, a);
                let y = g.dropout(x, 0.3);
                g.set_training(None);
                y
            })
        }
        OpKind::SegmentSoftmax | OpKind::SegmentLogSumExp => {
            let n = r * c;
            let col = add_param(&mut ps, "col", rand_matrix(&mut rng, n, 1));
            let groups = random_partition(&mut rng, n);
            Box::new(move |g, p| {
                let x = g.param(p, col);
                if kind == OpKind::SegmentSoftmax {
                    g.segment_softmax(x, &groups)
                } else {
                    g.segment_logsumexp(x, &groups)
                }
            })
        }
        OpKind::SegmentSum => {
            let count = rng.gen_range(1..=3);
            let segs: Vec<usize> = (0..r).map(|_| rng.gen_range(0..count)).collect();
            Box::new(move |g, p| {
                let x = g.param(p, a);
                g.segment_sum(x, &segs, count)
            })
        }
        OpKind::Reshape => {
            let (rr, rc) = if axis == 0 { (r * c, 1) } else { (1, r * c) };
            Box::new(move |g, p| {
                let x = g.param(p, a);
                g.reshape(x, rr, rc)
            })
        }
        OpKind::Leaf | OpKind::Param => panic!("{kind:?} has no backward rule to check"),
    };

    // Contract with a fixed weight so every output coordinate matters.
    let mut probe = Graph::new();
    let mut op = op;
    let out = op(&mut probe, &ps).expect("case builds");
    let (or, oc) = (probe.value(out).rows(), probe.value(out).cols());
    let weights = rand_matrix(&mut rng, or, oc);
    let build: Builder = Box::new(move |g, p| {
        let y = op(g, p)?;
        let w = g.constant(weights.clone());
        let prod = g.mul(y, w)?;
        g.sum(prod, None)
    });
    OpCase {
        kind,
        params: ps,
        build,
    }
}
