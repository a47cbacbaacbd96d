//! Entity-centric hard F1: a prediction counts only when its cluster matches
//! a gold cluster mention for mention and its label is correct.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::ScoreTriple;
use crate::corpus::Document;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub pred: usize,
    pub gold: usize,
}

impl Counts {
    pub fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.pred += other.pred;
        self.gold += other.gold;
    }

    pub fn score(&self) -> ScoreTriple {
        ScoreTriple::from_ratios(self.tp as f64, self.pred as f64, self.tp as f64, self.gold as f64)
    }
}

type SpanSet = BTreeSet<(usize, usize)>;

/// Mention spans of each cluster, aligned with `doc.clusters`.
fn span_sets(doc: &Document) -> Vec<SpanSet> {
    let pos: HashMap<&str, usize> = doc
        .clusters
        .iter()
        .enumerate()
        .map(|(i, c)| (c.id.as_str(), i))
        .collect();
    let mut out = vec![SpanSet::new(); doc.clusters.len()];
    for m in &doc.mentions {
        if let Some(&c) = pos.get(m.cluster.as_str()) {
            out[c].insert((m.start, m.end));
        }
    }
    out
}

/// For each predicted cluster, the gold cluster with the identical span set.
fn match_clusters(gold: &Document, pred: &Document) -> Vec<Option<usize>> {
    let by_spans: HashMap<SpanSet, usize> = span_sets(gold)
        .into_iter()
        .enumerate()
        .filter(|(_, s)| !s.is_empty())
        .map(|(i, s)| (s, i))
        .collect();
    span_sets(pred).iter().map(|s| by_spans.get(s).copied()).collect()
}

/// (cluster, type) counts restricted to types accepted by `keep`.
pub fn hard_ner_counts(gold: &Document, pred: &Document, keep: impl Fn(&str) -> bool) -> Counts {
    let matched = match_clusters(gold, pred);
    let mut counts = Counts::default();
    for c in &gold.clusters {
        counts.gold += c.types.iter().filter(|t| keep(t)).count();
    }
    for (c, m) in pred.clusters.iter().zip(&matched) {
        for t in c.types.iter().filter(|t| keep(t)) {
            counts.pred += 1;
            if m.is_some_and(|g| gold.clusters[g].types.contains(t)) {
                counts.tp += 1;
            }
        }
    }
    counts
}

pub fn hard_ner_f1(gold: &Document, pred: &Document) -> ScoreTriple {
    hard_ner_counts(gold, pred, |_| true).score()
}

/// Labels of each ordered cluster pair, keyed by cluster index.
fn pair_labels(doc: &Document) -> BTreeMap<(usize, usize), BTreeSet<&str>> {
    let pos: HashMap<&str, usize> = doc
        .clusters
        .iter()
        .enumerate()
        .map(|(i, c)| (c.id.as_str(), i))
        .collect();
    let mut out: BTreeMap<(usize, usize), BTreeSet<&str>> = BTreeMap::new();
    for r in &doc.relations {
        if let (Some(&h), Some(&t)) = (pos.get(r.head.as_str()), pos.get(r.tail.as_str())) {
            out.entry((h, t))
                .or_default()
                .extend(r.types.iter().map(String::as_str));
        }
    }
    out
}

/// (head cluster, tail cluster, type) counts.
pub fn hard_re_counts(gold: &Document, pred: &Document) -> Counts {
    let matched = match_clusters(gold, pred);
    let gold_pairs = pair_labels(gold);
    let mut counts = Counts {
        gold: gold_pairs.values().map(BTreeSet::len).sum(),
        ..Counts::default()
    };
    for ((h, t), types) in pair_labels(pred) {
        let key = matched[h].zip(matched[t]);
        let truth = key.and_then(|k| gold_pairs.get(&k));
        for ty in types {
            counts.pred += 1;
            if truth.is_some_and(|s| s.contains(ty)) {
                counts.tp += 1;
            }
        }
    }
    counts
}

pub fn hard_re_f1(gold: &Document, pred: &Document) -> ScoreTriple {
    hard_re_counts(gold, pred).score()
}

/// Inclusive range of training frequencies; `max: None` is unbounded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyBucket {
    pub min: usize,
    pub max: Option<usize>,
}

impl FrequencyBucket {
    pub fn contains(&self, count: usize) -> bool {
        count >= self.min && self.max.map_or(true, |m| count <= m)
    }

    pub fn label(&self) -> String {
        match self.max {
            Some(m) => format!("{}-{}", self.min, m),
            None => format!("{}+", self.min),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceScore {
    pub bucket: FrequencyBucket,
    pub counts: Counts,
    pub score: ScoreTriple,
}

/// Hard NER restricted, per bucket, to types whose training frequency falls
/// in the bucket. Types never seen in training have frequency 0.
pub fn frequency_sliced_ner(
    pairs: &[(&Document, &Document)],
    train_counts: &BTreeMap<String, usize>,
    buckets: &[FrequencyBucket],
) -> Vec<SliceScore> {
    buckets
        .iter()
        .map(|b| {
            let keep = |t: &str| b.contains(train_counts.get(t).copied().unwrap_or(0));
            let mut counts = Counts::default();
            for (g, p) in pairs {
                counts.add(hard_ner_counts(g, p, keep));
            }
            SliceScore {
                bucket: *b,
                counts,
                score: counts.score(),
            }
        })
        .collect()
}
