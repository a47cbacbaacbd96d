//! Span enumeration, span vectors `[h_l; h_r; psi_width]` and pruning.

use kbie_tensor::{Graph, ParamId, ParamSet, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::glorot;
use crate::error::{config_err, Result};

/// Inclusive token range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Span { start, end }
    }

    pub fn width(&self) -> usize {
        self.end - self.start + 1
    }
}

/// Every span of width `1..=max_width`, ordered by `(start, end)`.
pub fn enumerate_spans(n_tokens: usize, max_width: usize) -> Vec<Span> {
    let mut out = Vec::new();
    for start in 0..n_tokens {
        for end in start..n_tokens.min(start + max_width) {
            out.push(Span::new(start, end));
        }
    }
    out
}

/// `ceil(ratio * n_tokens)`, at least one when there are tokens. Products
/// within 1e-9 of an integer are not rounded up (0.2 * 15 is 3, not 4).
pub fn keep_count(n_tokens: usize, ratio: f64) -> usize {
    ((ratio * n_tokens as f64 - 1e-9).ceil() as usize).max(usize::from(n_tokens > 0))
}

/// Indices of the `keep` best-scoring spans, returned in input order. Equal
/// scores prefer the earlier span.
pub fn prune(scores: &[f64], keep: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(keep);
    order.sort_unstable();
    order
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpanConfig {
    pub max_width: usize,
    pub width_dim: usize,
    /// Spans kept per token.
    pub keep_ratio: f64,
}

impl Default for SpanConfig {
    fn default() -> Self {
        SpanConfig {
            max_width: 8,
            width_dim: 8,
            keep_ratio: 0.4,
        }
    }
}

impl SpanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_width == 0 || self.width_dim == 0 {
            return Err(config_err("span width and width embedding size must be positive"));
        }
        if !(self.keep_ratio > 0.0 && self.keep_ratio <= 1.0) {
            return Err(config_err("keep ratio must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Width embedding table `psi`, one row per width `1..=max_width`.
#[derive(Clone, Debug, PartialEq)]
pub struct WidthEmbedding {
    pub table: ParamId,
    pub max_width: usize,
    pub dim: usize,
}

impl WidthEmbedding {
    pub fn new(params: &mut ParamSet, cfg: &SpanConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let table = params.add("spans/width", glorot(rng, cfg.max_width, cfg.width_dim)?)?;
        Ok(WidthEmbedding {
            table,
            max_width: cfg.max_width,
            dim: cfg.width_dim,
        })
    }

    /// Widths beyond the table share its last row.
    pub fn bucket(&self, span: Span) -> usize {
        span.width().min(self.max_width) - 1
    }
}

/// One row `[H_l; H_r; psi]` per span.
pub fn span_repr(g: &mut Graph, params: &ParamSet, h: Var, spans: &[Span], widths: &WidthEmbedding) -> Result<Var> {
    let left: Vec<usize> = spans.iter().map(|s| s.start).collect();
    let right: Vec<usize> = spans.iter().map(|s| s.end).collect();
    let buckets: Vec<usize> = spans.iter().map(|&s| widths.bucket(s)).collect();
    let hl = g.gather(h, &left)?;
    let hr = g.gather(h, &right)?;
    let table = g.param(params, widths.table);
    let psi = g.gather(table, &buckets)?;
    Ok(g.concat(&[hl, hr, psi], 1)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn enumeration_examples() {
        let s = enumerate_spans(3, 2);
        let pairs: Vec<(usize, usize)> = s.iter().map(|s| (s.start, s.end)).collect();
        assert_eq!(pairs, vec![(0, 0), (0, 1), (1, 1), (1, 2), (2, 2)]);
        assert_eq!(enumerate_spans(1, 5).len(), 1);
        assert_eq!(enumerate_spans(10, 4).len(), 10 + 9 + 8 + 7);
        assert!(enumerate_spans(0, 4).is_empty());
    }

    #[test]
    fn keep_counts() {
        assert_eq!(keep_count(10, 0.2), 2);
        assert_eq!(keep_count(15, 0.2), 3);
        assert_eq!(keep_count(10, 0.4), 4);
        assert_eq!(keep_count(3, 0.4), 2);
        assert_eq!(keep_count(0, 0.4), 0);
    }

    #[test]
    fn ties_keep_document_order() {
        assert_eq!(prune(&[0.0; 6], 2), vec![0, 1]);
        assert_eq!(prune(&[0.1, 0.5, 0.3, 0.5], 2), vec![1, 3]);
        assert_eq!(prune(&[1.0, 2.0], 5), vec![0, 1]);
    }

    proptest! {
        #[test]
        fn enumeration_matches_double_loop(n in 0usize..=20, w in 1usize..=10) {
            let got = enumerate_spans(n, w);
            let mut expected = Vec::new();
            for l in 0..n {
                for r in 0..n {
                    if l <= r && r - l + 1 <= w {
                        expected.push(Span::new(l, r));
                    }
                }
            }
            prop_assert_eq!(got, expected);
        }

        #[test]
        fn prune_is_a_sorted_subset(scores in proptest::collection::vec(-3i32..3, 0..30), keep in 0usize..40) {
            let s: Vec<f64> = scores.iter().map(|&v| f64::from(v)).collect();
            let kept = prune(&s, keep);
            prop_assert_eq!(kept.len(), keep.min(s.len()));
            prop_assert!(kept.windows(2).all(|w| w[0] < w[1]));
            let worst_kept = kept.iter().map(|&i| s[i]).fold(f64::INFINITY, f64::min);
            for i in (0..s.len()).filter(|i| !kept.contains(i)) {
                prop_assert!(s[i] <= worst_kept);
            }
        }
    }
}
