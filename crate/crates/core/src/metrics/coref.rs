//! MUC, B-cubed and entity-based CEAF over mention partitions.

use std::collections::{HashMap, HashSet};
use std::hash::Hash;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};

use super::assignment::max_weight_assignment;
use super::{PrCounts, ScoreTriple};

/// Cluster index of every mention.
fn owner<M: Eq + Hash>(clusters: &[Vec<M>]) -> HashMap<&M, usize> {
    let mut map = HashMap::new();
    for (i, c) in clusters.iter().enumerate() {
        for m in c {
            map.insert(m, i);
        }
    }
    map
}

fn muc_side<M: Eq + Hash>(key: &[Vec<M>], response: &[Vec<M>]) -> (f64, f64) {
    let resp = owner(response);
    let (mut num, mut den) = (0usize, 0usize);
    for s in key {
        if s.is_empty() {
            continue;
        }
        let mut parts = HashSet::new();
        let mut loose = 0;
        for m in s {
            match resp.get(m) {
                Some(&c) => {
                    parts.insert(c);
                }
                None => loose += 1,
            }
        }
        num += s.len() - (parts.len() + loose);
        den += s.len() - 1;
    }
    (num as f64, den as f64)
}

/// Link-based counts: recall over gold links, precision over predicted links.
pub fn muc_counts<M: Eq + Hash>(gold: &[Vec<M>], pred: &[Vec<M>]) -> PrCounts {
    let (r_num, r_den) = muc_side(gold, pred);
    let (p_num, p_den) = muc_side(pred, gold);
    PrCounts {
        r_num,
        r_den,
        p_num,
        p_den,
    }
}

pub fn muc<M: Eq + Hash>(gold: &[Vec<M>], pred: &[Vec<M>]) -> ScoreTriple {
    muc_counts(gold, pred).score()
}

fn b3_side<M: Eq + Hash>(key: &[Vec<M>], response: &[Vec<M>]) -> (f64, f64) {
    let resp = owner(response);
    let mut num = 0.0;
    let mut den = 0usize;
    for s in key {
        let members: HashSet<&M> = s.iter().collect();
        for m in s {
            // A mention the other side lacks counts as a singleton there.
            let overlap = match resp.get(m) {
                Some(&c) => response[c].iter().filter(|x| members.contains(x)).count(),
                None => 1,
            };
            num += overlap as f64 / s.len() as f64;
            den += 1;
        }
    }
    (num, den as f64)
}

/// Mention-averaged counts.
pub fn b3_counts<M: Eq + Hash>(gold: &[Vec<M>], pred: &[Vec<M>]) -> PrCounts {
    let (r_num, r_den) = b3_side(gold, pred);
    let (p_num, p_den) = b3_side(pred, gold);
    PrCounts {
        r_num,
        r_den,
        p_num,
        p_den,
    }
}

pub fn b3<M: Eq + Hash>(gold: &[Vec<M>], pred: &[Vec<M>]) -> ScoreTriple {
    b3_counts(gold, pred).score()
}

fn overlap<M: Eq + Hash>(a: &[M], b: &[M]) -> usize {
    let set: HashSet<&M> = a.iter().collect();
    b.iter().filter(|m| set.contains(m)).count()
}

/// `phi4(K, R) = 2 |K n R| / (|K| + |R|)` as an exact fraction.
pub fn phi4_exact<M: Eq + Hash>(k: &[M], r: &[M]) -> BigRational {
    let size = k.len() + r.len();
    if size == 0 {
        return BigRational::zero();
    }
    BigRational::new(BigInt::from(2 * overlap(k, r)), BigInt::from(size))
}

/// Best total `phi4` over one-to-one cluster alignments, as an exact
/// fraction. The alignment is found on floats; its value is then summed
/// exactly, so equal optima always report the same number.
pub fn ceafe_similarity_exact<M: Eq + Hash>(gold: &[Vec<M>], pred: &[Vec<M>]) -> BigRational {
    if gold.is_empty() || pred.is_empty() {
        return BigRational::zero();
    }
    let exact: Vec<Vec<BigRational>> = gold
        .iter()
        .map(|k| pred.iter().map(|r| phi4_exact(k, r)).collect())
        .collect();
    let approx: Vec<Vec<f64>> = exact
        .iter()
        .map(|row| row.iter().map(|x| x.to_f64().expect("small fraction")).collect())
        .collect();
    max_weight_assignment(&approx)
        .iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| exact[i][j].clone()))
        .fold(BigRational::zero(), |acc, x| acc + x)
}

pub fn ceafe_counts<M: Eq + Hash>(gold: &[Vec<M>], pred: &[Vec<M>]) -> PrCounts {
    let sim = ceafe_similarity_exact(gold, pred)
        .to_f64()
        .expect("bounded by cluster count");
    PrCounts {
        r_num: sim,
        r_den: gold.len() as f64,
        p_num: sim,
        p_den: pred.len() as f64,
    }
}

pub fn ceafe<M: Eq + Hash>(gold: &[Vec<M>], pred: &[Vec<M>]) -> ScoreTriple {
    ceafe_counts(gold, pred).score()
}

/// Mean of the MUC, B-cubed and CEAFe F1 scores.
pub fn coref_avg<M: Eq + Hash>(gold: &[Vec<M>], pred: &[Vec<M>]) -> f64 {
    (muc(gold, pred).f1 + b3(gold, pred).f1 + ceafe(gold, pred).f1) / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(c: &[&[char]]) -> Vec<Vec<char>> {
        c.iter().map(|x| x.to_vec()).collect()
    }

    fn assert_close(s: ScoreTriple, p: f64, r: f64) {
        assert!((s.precision - p).abs() < 1e-12, "P {} vs {p}", s.precision);
        assert!((s.recall - r).abs() < 1e-12, "R {} vs {r}", s.recall);
    }

    #[test]
    fn identical_partitions_score_one() {
        let g = p(&[&['a', 'b', 'c'], &['d', 'e']]);
        for s in [muc(&g, &g), b3(&g, &g), ceafe(&g, &g)] {
            assert_close(s, 1.0, 1.0);
            assert_eq!(s.f1, 1.0);
        }
        assert_eq!(coref_avg(&g, &g), 1.0);
    }

    #[test]
    fn muc_worked_example() {
        let g = p(&[&['a', 'b', 'c'], &['d']]);
        let s = p(&[&['a', 'b'], &['c', 'd']]);
        let m = muc(&g, &s);
        assert_close(m, 0.5, 0.5);
        assert!((m.f1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn b3_worked_example() {
        let g = p(&[&['a', 'b', 'c'], &['d']]);
        let s = p(&[&['a', 'b'], &['c', 'd']]);
        // Recall: a,b -> 2/3, c -> 1/3, d -> 1/1. Precision: a,b -> 1, c,d -> 1/2.
        assert_close(b3(&g, &s), 3.0 / 4.0, (2.0 / 3.0 + 2.0 / 3.0 + 1.0 / 3.0 + 1.0) / 4.0);
    }

    #[test]
    fn ceafe_worked_example() {
        let g = p(&[&['a', 'b'], &['c']]);
        let s = p(&[&['a'], &['b', 'c']]);
        // Alignments: ({a,b}-{a}, {c}-{b,c}) = 2/3 + 2/3; the other = 1/2 + 0.
        assert_close(ceafe(&g, &s), 2.0 / 3.0, 2.0 / 3.0);
    }

    #[test]
    fn degenerate_cases_are_zero() {
        let singles = p(&[&['a'], &['b']]);
        assert_eq!(muc(&singles, &singles).f1, 0.0);
        let empty: Vec<Vec<char>> = vec![];
        assert_eq!(b3(&empty, &empty).f1, 0.0);
        let g = p(&[&['a', 'b']]);
        let c = ceafe(&g, &empty);
        assert_eq!((c.precision, c.recall, c.f1), (0.0, 0.0, 0.0));
        assert_eq!(coref_avg(&empty, &empty), 0.0);
    }

    #[test]
    fn mentions_missing_on_one_side_act_as_singletons() {
        let g = p(&[&['a', 'b']]);
        let s = p(&[&['a']]);
        let b = b3(&g, &s);
        // Recall: a -> 1/2, b is a singleton on the predicted side -> 1/2.
        assert_close(b, 1.0, 0.5);
    }

    fn partition_strategy() -> impl Strategy<Value = (Vec<Vec<u8>>, Vec<Vec<u8>>)> {
        (1usize..=10).prop_flat_map(|n| {
            (
                proptest::collection::vec(0usize..5, n),
                proptest::collection::vec(0usize..5, n),
            )
                .prop_map(move |(a, b)| (group(&a), group(&b)))
        })
    }

    fn group(labels: &[usize]) -> Vec<Vec<u8>> {
        let mut out: Vec<Vec<u8>> = vec![Vec::new(); 5];
        for (m, &l) in labels.iter().enumerate() {
            out[l].push(m as u8);
        }
        out.into_iter().filter(|c| !c.is_empty()).collect()
    }

    proptest! {
        #[test]
        fn swapping_roles_swaps_precision_and_recall((g, s) in partition_strategy()) {
            for (ab, ba) in [
                (muc(&g, &s), muc(&s, &g)),
                (b3(&g, &s), b3(&s, &g)),
                (ceafe(&g, &s), ceafe(&s, &g)),
            ] {
                prop_assert_eq!(ab.precision, ba.recall);
                prop_assert_eq!(ab.recall, ba.precision);
                for v in [ab.precision, ab.recall, ab.f1] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
            let same = [muc(&g, &g), b3(&g, &g), ceafe(&g, &g)];
            prop_assert_eq!(same[1].f1, 1.0);
            prop_assert_eq!(same[2].f1, 1.0);
            if g.iter().any(|c| c.len() > 1) {
                prop_assert_eq!(same[0].f1, 1.0);
            }
        }
    }
}
