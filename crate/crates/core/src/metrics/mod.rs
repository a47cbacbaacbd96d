//! Coreference, entity-centric extraction and entity-linking metrics.
//!
//! Every ratio uses the 0/0 = 0 convention. Corpus scores sum numerators and
//! denominators over documents before dividing.

mod assignment;
mod coref;
mod hard;

pub use assignment::max_weight_assignment;
pub use coref::{
    b3, b3_counts, ceafe, ceafe_counts, ceafe_similarity_exact, coref_avg, muc, muc_counts, phi4_exact,
};
pub use hard::{
    frequency_sliced_ner, hard_ner_counts, hard_ner_f1, hard_re_counts, hard_re_f1, Counts, FrequencyBucket,
    SliceScore,
};

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{KbieError, Result};

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreTriple {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ScoreTriple {
    pub fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        ScoreTriple {
            precision,
            recall,
            f1,
        }
    }

    pub fn from_ratios(p_num: f64, p_den: f64, r_num: f64, r_den: f64) -> Self {
        ScoreTriple::new(ratio(p_num, p_den), ratio(r_num, r_den))
    }
}

/// Precision and recall numerators and denominators.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PrCounts {
    pub r_num: f64,
    pub r_den: f64,
    pub p_num: f64,
    pub p_den: f64,
}

impl PrCounts {
    pub fn add(&mut self, other: PrCounts) {
        self.r_num += other.r_num;
        self.r_den += other.r_den;
        self.p_num += other.p_num;
        self.p_den += other.p_den;
    }

    pub fn score(&self) -> ScoreTriple {
        ScoreTriple::from_ratios(self.p_num, self.p_den, self.r_num, self.r_den)
    }
}

/// Candidate weights of one gold-linked mention.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElItem {
    pub candidates: Vec<String>,
    pub weights: Vec<f64>,
    pub gold: String,
}

impl ElItem {
    /// Highest-weighted candidate, first on ties.
    pub fn top(&self) -> Option<&str> {
        let mut best: Option<usize> = None;
        for (j, &w) in self.weights.iter().enumerate() {
            if best.map_or(true, |b| w > self.weights[b]) {
                best = Some(j);
            }
        }
        best.map(|b| self.candidates[b].as_str())
    }
}

/// Fraction of mentions whose top-weighted candidate is the gold entity.
pub fn el_top1_accuracy(items: &[ElItem]) -> f64 {
    let hits = items.iter().filter(|i| i.top() == Some(i.gold.as_str())).count();
    ratio(hits as f64, items.len() as f64)
}

/// Mention partition of a document, one span list per non-empty cluster.
pub fn partition(doc: &Document) -> Vec<Vec<(usize, usize)>> {
    doc.cluster_mentions()
        .into_iter()
        .filter(|c| !c.is_empty())
        .map(|c| c.iter().map(|&m| (doc.mentions[m].start, doc.mentions[m].end)).collect())
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub muc: ScoreTriple,
    pub b3: ScoreTriple,
    pub ceafe: ScoreTriple,
    pub coref_avg: f64,
    pub ner_hard: ScoreTriple,
    pub re_hard: ScoreTriple,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub el_top1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slices: Option<Vec<SliceScore>>,
}

impl MetricsReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<10} {:>9} {:>9} {:>9}", "metric", "P", "R", "F1");
        for (name, s) in [
            ("muc", self.muc),
            ("b3", self.b3),
            ("ceafe", self.ceafe),
            ("ner_hard", self.ner_hard),
            ("re_hard", self.re_hard),
        ] {
            let _ = writeln!(
                out,
                "{:<10} {:>9.4} {:>9.4} {:>9.4}",
                name, s.precision, s.recall, s.f1
            );
        }
        let _ = writeln!(out, "{:<10} {:>29.4}", "coref_avg", self.coref_avg);
        if let Some(el) = self.el_top1 {
            let _ = writeln!(out, "{:<10} {:>29.4}", "el_top1", el);
        }
        for s in self.slices.iter().flatten() {
            let _ = writeln!(
                out,
                "{:<10} {:>9.4} {:>9.4} {:>9.4}",
                format!("ner[{}]", s.bucket.label()),
                s.score.precision,
                s.score.recall,
                s.score.f1
            );
        }
        out
    }
}

/// Pair predictions with gold documents by id. A gold document without a
/// prediction is scored against an empty one.
pub fn align<'a>(gold: &'a [Document], pred: &'a [Document]) -> Result<Vec<(&'a Document, Document)>> {
    let mut by_id: HashMap<&str, &Document> = HashMap::new();
    for p in pred {
        if by_id.insert(p.id.as_str(), p).is_some() {
            return Err(KbieError::Validation {
                doc: p.id.clone(),
                msg: "duplicate predicted document".into(),
            });
        }
    }
    let mut out = Vec::with_capacity(gold.len());
    for g in gold {
        let p = match by_id.remove(g.id.as_str()) {
            Some(p) => p.clone(),
            None => Document {
                id: g.id.clone(),
                tokens: g.tokens.clone(),
                mentions: vec![],
                clusters: vec![],
                relations: vec![],
            },
        };
        out.push((g, p));
    }
    if let Some(extra) = by_id.keys().min() {
        return Err(KbieError::Validation {
            doc: extra.to_string(),
            msg: "prediction has no gold document".into(),
        });
    }
    Ok(out)
}

/// Corpus-level coreference and hard extraction scores.
pub fn evaluate(gold: &[Document], pred: &[Document]) -> Result<MetricsReport> {
    let pairs = align(gold, pred)?;
    let (mut m, mut b, mut c) = (PrCounts::default(), PrCounts::default(), PrCounts::default());
    let (mut ner, mut re) = (Counts::default(), Counts::default());
    for (g, p) in &pairs {
        let (gp, pp) = (partition(g), partition(p));
        m.add(muc_counts(&gp, &pp));
        b.add(b3_counts(&gp, &pp));
        c.add(ceafe_counts(&gp, &pp));
        ner.add(hard_ner_counts(g, p, |_| true));
        re.add(hard_re_counts(g, p));
    }
    let (muc, b3, ceafe) = (m.score(), b.score(), c.score());
    Ok(MetricsReport {
        muc,
        b3,
        ceafe,
        coref_avg: (muc.f1 + b3.f1 + ceafe.f1) / 3.0,
        ner_hard: ner.score(),
        re_hard: re.score(),
        el_top1: None,
        slices: None,
    })
}

/// Adds frequency-sliced hard NER scores to `report`.
pub fn add_slices(
    report: &mut MetricsReport,
    gold: &[Document],
    pred: &[Document],
    train_counts: &BTreeMap<String, usize>,
    buckets: &[FrequencyBucket],
) -> Result<()> {
    let pairs = align(gold, pred)?;
    let refs: Vec<(&Document, &Document)> = pairs.iter().map(|(g, p)| (*g, p)).collect();
    report.slices = Some(frequency_sliced_ner(&refs, train_counts, buckets));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f1_zero_when_both_zero() {
        assert_eq!(ScoreTriple::new(0.0, 0.0).f1, 0.0);
        let s = ScoreTriple::new(0.5, 1.0);
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn el_top1_counts_first_maximum() {
        let items = vec![
            ElItem {
                candidates: vec!["a".into(), "b".into()],
                weights: vec![0.3, 0.7],
                gold: "b".into(),
            },
            ElItem {
                candidates: vec!["a".into(), "b".into()],
                weights: vec![0.5, 0.5],
                gold: "b".into(),
            },
            ElItem {
                candidates: vec![],
                weights: vec![],
                gold: "b".into(),
            },
        ];
        assert!((el_top1_accuracy(&items[..2]) - 0.5).abs() < 1e-15);
        assert!((el_top1_accuracy(&items) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(el_top1_accuracy(&[]), 0.0);
    }
}
