//! Lifting span-level decisions to entity clusters with type and relation
//! sets.

use std::collections::{BTreeMap, BTreeSet};

use crate::corpus::{Document, GoldCluster, GoldMention, GoldRelation, LabelVocab};
use crate::heads::MentionPredictions;

/// Chains of antecedent links. A chain survives only when its first span
/// (the one that chose SELF) has at least one entity type; otherwise the
/// whole chain is dropped. Returns the clusters (span indices, ascending,
/// ordered by first span) and the number of dropped spans.
pub fn build_clusters(antecedents: &[Option<usize>], ner: &[Vec<usize>]) -> (Vec<Vec<usize>>, usize) {
    let n = antecedents.len();
    let mut root = vec![0; n];
    for j in 0..n {
        root[j] = match antecedents[j] {
            Some(i) if i < j => root[i],
            _ => j,
        };
    }
    let mut chains: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (j, &r) in root.iter().enumerate() {
        chains.entry(r).or_default().push(j);
    }
    let mut dropped = 0;
    let mut out = Vec::new();
    for (r, members) in chains {
        if ner[r].is_empty() {
            dropped += members.len();
        } else {
            out.push(members);
        }
    }
    (out, dropped)
}

/// Entity-centric prediction in the corpus document format: cluster types
/// are unions over members, relations unions over ordered member pairs.
pub fn unify(doc: &Document, pred: &MentionPredictions, clusters: &[Vec<usize>], labels: &LabelVocab) -> Document {
    let mut owner = vec![None; pred.spans.len()];
    for (c, members) in clusters.iter().enumerate() {
        for &m in members {
            owner[m] = Some(c);
        }
    }
    let id = |c: usize| format!("e{c}");
    let mut mentions = Vec::new();
    let mut out_clusters = Vec::new();
    for (c, members) in clusters.iter().enumerate() {
        let mut types = BTreeSet::new();
        for &m in members {
            let s = pred.spans[m];
            mentions.push(GoldMention {
                start: s.start,
                end: s.end,
                cluster: id(c),
            });
            types.extend(pred.ner[m].iter().map(|&l| labels.entity_types[l].clone()));
        }
        out_clusters.push(GoldCluster {
            id: id(c),
            types,
            link: None,
        });
    }
    mentions.sort_by_key(|m| (m.start, m.end));
    let mut rels: BTreeMap<(usize, usize), BTreeSet<String>> = BTreeMap::new();
    for &((i, j), ref ls) in &pred.relations {
        if let (Some(a), Some(b)) = (owner[i], owner[j]) {
            if a != b && !ls.is_empty() {
                rels.entry((a, b))
                    .or_default()
                    .extend(ls.iter().map(|&l| labels.relation_types[l].clone()));
            }
        }
    }
    Document {
        id: doc.id.clone(),
        tokens: doc.tokens.clone(),
        mentions,
        clusters: out_clusters,
        relations: rels
            .into_iter()
            .map(|((a, b), types)| GoldRelation {
                head: id(a),
                tail: id(b),
                types,
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spans::Span;

    #[test]
    fn chains_are_transitive() {
        let (c, d) = build_clusters(&[None, Some(0), Some(1)], &[vec![0], vec![], vec![]]);
        assert_eq!(c, vec![vec![0, 1, 2]]);
        assert_eq!(d, 0);
    }

    #[test]
    fn untyped_self_span_drops_its_chain() {
        let (c, d) = build_clusters(&[None, Some(0), None], &[vec![], vec![1], vec![]]);
        assert!(c.is_empty());
        assert_eq!(d, 3);
        let (c, _) = build_clusters(&[None, None], &[vec![0], vec![1]]);
        assert_eq!(c, vec![vec![0], vec![1]]);
    }

    fn setup() -> (Document, LabelVocab) {
        let doc = Document {
            id: "d".into(),
            tokens: vec!["w".into(); 6],
            mentions: vec![],
            clusters: vec![],
            relations: vec![],
        };
        let labels = LabelVocab::new(
            vec!["person".into(), "politician".into(), "org".into()],
            vec!["based_in".into(), "works_for".into()],
        )
        .unwrap();
        (doc, labels)
    }

    #[test]
    fn unions_of_types_and_relations() {
        let (doc, labels) = setup();
        let pred = MentionPredictions {
            spans: vec![Span::new(0, 0), Span::new(2, 2), Span::new(4, 5)],
            ner: vec![vec![0], vec![1], vec![2]],
            antecedents: vec![None, Some(0), None],
            relations: vec![((1, 2), vec![1]), ((0, 2), vec![0]), ((2, 0), vec![])],
        };
        let (clusters, _) = build_clusters(&pred.antecedents, &pred.ner);
        let out = unify(&doc, &pred, &clusters, &labels);
        assert_eq!(out.clusters.len(), 2);
        assert_eq!(
            out.clusters[0].types,
            ["person", "politician"].iter().map(|s| s.to_string()).collect()
        );
        assert_eq!(out.relations.len(), 1);
        assert_eq!(out.relations[0].head, "e0");
        assert_eq!(out.relations[0].tail, "e1");
        assert_eq!(out.relations[0].types.len(), 2);
        out.validate(Some(&labels), false).unwrap();
    }

    #[test]
    fn no_positive_pair_no_relation() {
        let (doc, labels) = setup();
        let pred = MentionPredictions {
            spans: vec![Span::new(0, 0), Span::new(2, 2)],
            ner: vec![vec![0], vec![2]],
            antecedents: vec![None, None],
            relations: vec![],
        };
        let (clusters, _) = build_clusters(&pred.antecedents, &pred.ner);
        assert!(unify(&doc, &pred, &clusters, &labels).relations.is_empty());
    }
}
