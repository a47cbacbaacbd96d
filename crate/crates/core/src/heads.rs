//! NER, coreference and relation heads over kept spans: scoring, gold
//! targets, losses and sign/argmax decoding.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use kbie_tensor::{Graph, ParamSet, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, LabelVocab};
use crate::error::{config_err, Result};
use crate::nn::{Activation, Ffnn};
use crate::spans::Span;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub ner: f64,
    pub coref: f64,
    pub re: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            ner: 1.0,
            coref: 1.0,
            re: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.ner, self.coref, self.re].iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(config_err("loss weights must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadConfig {
    pub hidden: usize,
    pub activation: Activation,
    pub loss_weights: LossWeights,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            hidden: 64,
            activation: Activation::Relu,
            loss_weights: LossWeights::default(),
        }
    }
}

fn layer_dims(input: usize, hidden: usize, output: usize) -> Vec<usize> {
    if hidden == 0 {
        vec![input, output]
    } else {
        vec![input, hidden, output]
    }
}

/// Antecedent candidates `(i, j)` with `i < j`, grouped by `j`.
pub fn coref_pairs(k: usize) -> Vec<(usize, usize)> {
    (0..k).flat_map(|j| (0..j).map(move |i| (i, j))).collect()
}

/// Ordered pairs `(i, j)`, `i != j`.
pub fn re_pairs(k: usize) -> Vec<(usize, usize)> {
    (0..k)
        .flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect()
}

/// Labels whose logit is strictly positive.
pub fn decode_labels(logits: &[f64]) -> Vec<usize> {
    (0..logits.len()).filter(|&l| logits[l] > 0.0).collect()
}

/// For each span, the best of SELF (score 0) and its earlier spans. Ties go
/// to SELF, then to the earliest antecedent.
pub fn decode_antecedents(k: usize, pairs: &[(usize, usize)], scores: &[f64]) -> Vec<Option<usize>> {
    let mut best: Vec<(f64, Option<usize>)> = vec![(0.0, None); k];
    for (&(i, j), &s) in pairs.iter().zip(scores) {
        debug_assert!(i < j);
        if s > best[j].0 || (s == best[j].0 && best[j].1.is_some_and(|b| i < b)) {
            best[j] = (s, Some(i));
        }
    }
    best.into_iter().map(|(_, a)| a).collect()
}

/// Gold cluster index of every kept span that exactly matches a mention.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GoldAlignment {
    pub cluster_of: Vec<Option<usize>>,
    /// Gold mentions with no kept span.
    pub unaligned: usize,
}

pub fn align_gold(doc: &Document, spans: &[Span]) -> GoldAlignment {
    let clusters = doc.mention_cluster_index();
    let by_span: HashMap<Span, usize> = doc
        .mentions
        .iter()
        .zip(&clusters)
        .map(|(m, &c)| (Span::new(m.start, m.end), c))
        .collect();
    let cluster_of: Vec<Option<usize>> = spans.iter().map(|s| by_span.get(s).copied()).collect();
    let hit = cluster_of.iter().flatten().count();
    GoldAlignment {
        cluster_of,
        unaligned: doc.mentions.len() - hit,
    }
}

/// `spans x |entity types|` targets, cluster types broadcast to mentions.
pub fn ner_targets(doc: &Document, labels: &LabelVocab, align: &GoldAlignment) -> Vec<f64> {
    let n = labels.entity_types.len();
    let mut out = vec![0.0; align.cluster_of.len() * n];
    for (s, c) in align.cluster_of.iter().enumerate() {
        if let Some(c) = c {
            for t in &doc.clusters[*c].types {
                if let Some(l) = labels.entity_index(t) {
                    out[s * n + l] = 1.0;
                }
            }
        }
    }
    out
}

/// Relation labels of each ordered cluster pair.
fn cluster_relations(doc: &Document, labels: &LabelVocab) -> BTreeMap<(usize, usize), BTreeSet<usize>> {
    let pos: HashMap<&str, usize> = doc.clusters.iter().enumerate().map(|(i, c)| (c.id.as_str(), i)).collect();
    let mut out: BTreeMap<(usize, usize), BTreeSet<usize>> = BTreeMap::new();
    for r in &doc.relations {
        let key = (pos[r.head.as_str()], pos[r.tail.as_str()]);
        out.entry(key)
            .or_default()
            .extend(r.types.iter().filter_map(|t| labels.relation_index(t)));
    }
    out
}

/// `pairs x |relation types|` targets from the relations of the two
/// clusters a span pair is aligned with.
pub fn re_targets(doc: &Document, labels: &LabelVocab, align: &GoldAlignment, pairs: &[(usize, usize)]) -> Vec<f64> {
    let n = labels.relation_types.len();
    let rels = cluster_relations(doc, labels);
    let mut out = vec![0.0; pairs.len() * n];
    for (p, &(i, j)) in pairs.iter().enumerate() {
        if let (Some(a), Some(b)) = (align.cluster_of[i], align.cluster_of[j]) {
            if a != b {
                for &l in rels.get(&(a, b)).into_iter().flatten() {
                    out[p * n + l] = 1.0;
                }
            }
        }
    }
    out
}

/// Candidate rows and gold rows for each span in the column
/// `[SELF_0 .. SELF_{k-1}; pair scores]`.
pub fn coref_groups(align: &GoldAlignment, pairs: &[(usize, usize)]) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let k = align.cluster_of.len();
    let mut all: Vec<Vec<usize>> = (0..k).map(|j| vec![j]).collect();
    let mut gold: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (p, &(i, j)) in pairs.iter().enumerate() {
        all[j].push(k + p);
        if align.cluster_of[j].is_some() && align.cluster_of[i] == align.cluster_of[j] {
            gold[j].push(k + p);
        }
    }
    for (j, g) in gold.iter_mut().enumerate() {
        if g.is_empty() {
            g.push(j);
        }
    }
    (all, gold)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Heads {
    pub ner: Ffnn,
    pub coref: Ffnn,
    pub re: Option<Ffnn>,
}

impl Heads {
    pub fn new(
        params: &mut ParamSet,
        cfg: &HeadConfig,
        input_dim: usize,
        labels: &LabelVocab,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.loss_weights.validate()?;
        if labels.entity_types.is_empty() {
            return Err(config_err("at least one entity type is required"));
        }
        let ner = Ffnn::new(
            params,
            "heads/ner",
            &layer_dims(input_dim, cfg.hidden, labels.entity_types.len()),
            cfg.activation,
            rng,
        )?;
        let coref = Ffnn::new(params, "heads/coref", &layer_dims(3 * input_dim, cfg.hidden, 1), cfg.activation, rng)?;
        let re = if labels.relation_types.is_empty() {
            None
        } else {
            Some(Ffnn::new(
                params,
                "heads/re",
                &layer_dims(3 * input_dim, cfg.hidden, labels.relation_types.len()),
                cfg.activation,
                rng,
            )?)
        };
        Ok(Heads { ner, coref, re })
    }

    /// `[a; b; a * b]` for every pair.
    pub fn pair_features(g: &mut Graph, x: Var, pairs: &[(usize, usize)]) -> Result<Var> {
        let left: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let right: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let a = g.gather(x, &left)?;
        let b = g.gather(x, &right)?;
        let ab = g.mul(a, b)?;
        Ok(g.concat(&[a, b, ab], 1)?)
    }

    /// NER logits with the pruner score added to every label.
    pub fn ner_logits(&self, g: &mut Graph, params: &ParamSet, x: Var, mention_score: Var) -> Result<Var> {
        let y = self.ner.forward(g, params, x)?;
        Ok(g.add(y, mention_score)?)
    }

    pub fn coref_scores(&self, g: &mut Graph, params: &ParamSet, x: Var, pairs: &[(usize, usize)]) -> Result<Option<Var>> {
        if pairs.is_empty() {
            return Ok(None);
        }
        let f = Heads::pair_features(g, x, pairs)?;
        Ok(Some(self.coref.forward(g, params, f)?))
    }

    pub fn re_logits(&self, g: &mut Graph, params: &ParamSet, x: Var, pairs: &[(usize, usize)]) -> Result<Option<Var>> {
        match &self.re {
            Some(re) if !pairs.is_empty() => {
                let f = Heads::pair_features(g, x, pairs)?;
                Ok(Some(re.forward(g, params, f)?))
            }
            _ => Ok(None),
        }
    }
}

/// Mean over spans of `-log` of the softmax mass on gold antecedents.
pub fn coref_loss(g: &mut Graph, scores: Option<Var>, align: &GoldAlignment, pairs: &[(usize, usize)]) -> Result<Var> {
    let k = align.cluster_of.len();
    let selfs = g.constant(Tensor::zeros(vec![k, 1]));
    let column = match scores {
        Some(s) => g.concat(&[selfs, s], 0)?,
        None => selfs,
    };
    let (all, gold) = coref_groups(align, pairs);
    let lse_all = g.segment_logsumexp(column, &all)?;
    let lse_gold = g.segment_logsumexp(column, &gold)?;
    let d = g.sub(lse_all, lse_gold)?;
    Ok(g.mean(d, None)?)
}

/// Span-level decisions of one document.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MentionPredictions {
    pub spans: Vec<Span>,
    pub ner: Vec<Vec<usize>>,
    pub antecedents: Vec<Option<usize>>,
    pub relations: Vec<((usize, usize), Vec<usize>)>,
}

/// Decode raw logits. `ner` is `spans x |types|` row-major, `re` is
/// `pairs x |relations|`.
pub fn decode(
    spans: &[Span],
    ner: &[f64],
    n_types: usize,
    coref_scores: &[f64],
    re: &[f64],
    n_relations: usize,
) -> MentionPredictions {
    let k = spans.len();
    let cpairs = coref_pairs(k);
    let rpairs = re_pairs(k);
    let relations = if n_relations == 0 || re.is_empty() {
        vec![]
    } else {
        rpairs
            .iter()
            .enumerate()
            .map(|(p, &pair)| (pair, decode_labels(&re[p * n_relations..(p + 1) * n_relations])))
            .filter(|(_, l)| !l.is_empty())
            .collect()
    };
    MentionPredictions {
        spans: spans.to_vec(),
        ner: (0..k).map(|s| decode_labels(&ner[s * n_types..(s + 1) * n_types])).collect(),
        antecedents: decode_antecedents(k, &cpairs, coref_scores),
        relations,
    }
}
