//! Entity-centric document model and JSON-lines corpus I/O.
//!
//! Gold annotation is cluster-centric: mentions point at clusters, clusters
//! carry entity types (and optionally a KB link), relations connect clusters.
//! Spans are inclusive token ranges.

pub mod synthetic;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{KbieError, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldMention {
    pub start: usize,
    pub end: usize,
    pub cluster: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldCluster {
    pub id: String,
    pub types: BTreeSet<String>,
    /// KB entity the cluster refers to, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldRelation {
    pub head: String,
    pub tail: String,
    pub types: BTreeSet<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub tokens: Vec<String>,
    #[serde(default)]
    pub mentions: Vec<GoldMention>,
    #[serde(default)]
    pub clusters: Vec<GoldCluster>,
    #[serde(default)]
    pub relations: Vec<GoldRelation>,
}

impl Document {
    /// Mention indices per cluster, in cluster order.
    pub fn cluster_mentions(&self) -> Vec<Vec<usize>> {
        let pos: HashMap<&str, usize> = self
            .clusters
            .iter()
            .enumerate()
            .map(|(i, c)| (c.id.as_str(), i))
            .collect();
        let mut out = vec![Vec::new(); self.clusters.len()];
        for (m, mention) in self.mentions.iter().enumerate() {
            if let Some(&c) = pos.get(mention.cluster.as_str()) {
                out[c].push(m);
            }
        }
        out
    }

    /// Cluster index for each mention.
    pub fn mention_cluster_index(&self) -> Vec<usize> {
        let pos: HashMap<&str, usize> = self
            .clusters
            .iter()
            .enumerate()
            .map(|(i, c)| (c.id.as_str(), i))
            .collect();
        self.mentions.iter().map(|m| pos[m.cluster.as_str()]).collect()
    }

    pub fn surface(&self, start: usize, end: usize) -> String {
        self.tokens[start..=end].join(" ")
    }

    /// Check every structural invariant; `allow_self_relations` relaxes the
    /// head != tail rule.
    pub fn validate(&self, vocab: Option<&LabelVocab>, allow_self_relations: bool) -> Result<()> {
        let fail = |msg: String| KbieError::Validation {
            doc: self.id.clone(),
            msg,
        };
        let n = self.tokens.len();
        let mut ids = HashSet::new();
        for c in &self.clusters {
            if !ids.insert(c.id.as_str()) {
                return Err(fail(format!("duplicate cluster id {}", c.id)));
            }
            if let Some(v) = vocab {
                if let Some(t) = c.types.iter().find(|t| v.entity_index(t).is_none()) {
                    return Err(fail(format!("entity type {t} not in vocabulary")));
                }
            }
        }
        let mut spans = HashSet::new();
        for m in &self.mentions {
            if m.start > m.end || m.end >= n {
                return Err(fail(format!(
                    "mention ({}, {}) outside 0..{n} or reversed",
                    m.start, m.end
                )));
            }
            if !ids.contains(m.cluster.as_str()) {
                return Err(fail(format!("mention refers to unknown cluster {}", m.cluster)));
            }
            if !spans.insert((m.start, m.end)) {
                return Err(fail(format!("span ({}, {}) appears twice", m.start, m.end)));
            }
        }
        for (c, members) in self.clusters.iter().zip(self.cluster_mentions()) {
            if members.is_empty() {
                return Err(fail(format!("cluster {} has no mentions", c.id)));
            }
        }
        for r in &self.relations {
            for end in [&r.head, &r.tail] {
                if !ids.contains(end.as_str()) {
                    return Err(fail(format!("relation refers to unknown cluster {end}")));
                }
            }
            if r.head == r.tail && !allow_self_relations {
                return Err(fail(format!("self-relation on cluster {}", r.head)));
            }
            if let Some(v) = vocab {
                if let Some(t) = r.types.iter().find(|t| v.relation_index(t).is_none()) {
                    return Err(fail(format!("relation type {t} not in vocabulary")));
                }
            }
        }
        Ok(())
    }
}

/// Ordered label inventories; a label's position is its logit column.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVocab {
    pub entity_types: Vec<String>,
    pub relation_types: Vec<String>,
}

impl LabelVocab {
    pub fn new(entity_types: Vec<String>, relation_types: Vec<String>) -> Result<Self> {
        for (kind, list) in [("entity", &entity_types), ("relation", &relation_types)] {
            let uniq: HashSet<&String> = list.iter().collect();
            if uniq.len() != list.len() {
                return Err(KbieError::Config(format!("duplicate {kind} label")));
            }
        }
        Ok(LabelVocab {
            entity_types,
            relation_types,
        })
    }

    /// Sorted union of the labels used in `docs`.
    pub fn from_documents(docs: &[Document]) -> Self {
        let mut ents = BTreeSet::new();
        let mut rels = BTreeSet::new();
        for d in docs {
            for c in &d.clusters {
                ents.extend(c.types.iter().cloned());
            }
            for r in &d.relations {
                rels.extend(r.types.iter().cloned());
            }
        }
        LabelVocab {
            entity_types: ents.into_iter().collect(),
            relation_types: rels.into_iter().collect(),
        }
    }

    pub fn entity_index(&self, label: &str) -> Option<usize> {
        self.entity_types.iter().position(|l| l == label)
    }

    pub fn relation_index(&self, label: &str) -> Option<usize> {
        self.relation_types.iter().position(|l| l == label)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let v: LabelVocab = serde_json::from_str(&fs::read_to_string(path)?)?;
        LabelVocab::new(v.entity_types, v.relation_types)
    }
}

/// Parse a JSON-lines corpus. Blank lines are skipped.
pub fn read_corpus(reader: impl BufRead) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line).map_err(|e| KbieError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        docs.push(doc);
    }
    Ok(docs)
}

pub fn write_corpus(docs: &[Document], mut out: impl Write) -> Result<()> {
    for d in docs {
        serde_json::to_writer(&mut out, d)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_corpus(docs: &[Document], path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_corpus(docs, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

/// Load and validate a corpus. Without an explicit vocabulary the label
/// inventory is the union of labels observed in the file.
pub fn load_corpus(
    path: impl AsRef<Path>,
    vocab: Option<&LabelVocab>,
) -> Result<(Vec<Document>, LabelVocab)> {
    let docs = read_corpus(BufReader::new(fs::File::open(path)?))?;
    for d in &docs {
        d.validate(vocab, false)?;
    }
    let vocab = match vocab {
        Some(v) => v.clone(),
        None => LabelVocab::from_documents(&docs),
    };
    Ok((docs, vocab))
}

/// Training frequency of each entity type, counted per gold cluster.
pub fn entity_type_counts(docs: &[Document]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for d in docs {
        for c in &d.clusters {
            for t in &c.types {
                *counts.entry(t.clone()).or_insert(0) += 1;
            }
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn doc_json() -> &'static str {
        r#"{"id":"d1","tokens":["Mars","is","red"],"mentions":[{"start":0,"end":0,"cluster":"c1"}],"clusters":[{"id":"c1","types":["planet"]}],"relations":[]}"#
    }

    #[test]
    fn empty_input_gives_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.jsonl");
        fs::write(&p, "").unwrap();
        let (docs, vocab) = load_corpus(&p, None).unwrap();
        assert!(docs.is_empty());
        assert_eq!(vocab, LabelVocab::default());
    }

    #[test]
    fn single_cluster_document() {
        let docs = read_corpus(Cursor::new(doc_json())).unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(docs[0].clusters.len(), 1);
        assert_eq!(docs[0].cluster_mentions(), vec![vec![0]]);
        docs[0].validate(None, false).unwrap();
        assert_eq!(LabelVocab::from_documents(&docs).entity_types, vec!["planet"]);
    }

    #[test]
    fn mention_past_end_is_validation_error() {
        let bad = doc_json().replace(r#""end":0"#, r#""end":3"#);
        let docs = read_corpus(Cursor::new(bad)).unwrap();
        match docs[0].validate(None, false) {
            Err(KbieError::Validation { doc, .. }) => assert_eq!(doc, "d1"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = format!("{}\n{{not json\n", doc_json());
        match read_corpus(Cursor::new(text)) {
            Err(KbieError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn other_invariants() {
        let base = read_corpus(Cursor::new(doc_json())).unwrap().remove(0);
        let mut d = base.clone();
        d.mentions[0].cluster = "nope".into();
        assert!(d.validate(None, false).is_err());
        let mut d = base.clone();
        d.relations.push(GoldRelation {
            head: "c1".into(),
            tail: "c1".into(),
            types: ["r".to_string()].into(),
        });
        assert!(d.validate(None, false).is_err());
        assert!(d.validate(None, true).is_ok());
        let mut d = base.clone();
        d.clusters.push(GoldCluster {
            id: "c2".into(),
            types: BTreeSet::new(),
            link: None,
        });
        assert!(d.validate(None, false).is_err());
        let vocab = LabelVocab::new(vec!["person".into()], vec![]).unwrap();
        assert!(base.validate(Some(&vocab), false).is_err());
        assert!(LabelVocab::new(vec!["a".into(), "a".into()], vec![]).is_err());
    }
}
