use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{KbieError, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anchor {
    pub start: usize,
    pub end: usize,
    pub entity: String,
}

/// One page of the hyperlinked corpus: the entity it describes and its text
/// with inline links (inclusive token spans).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Page {
    pub page_entity: String,
    pub tokens: Vec<String>,
    #[serde(default)]
    pub anchors: Vec<Anchor>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct HyperCorpus {
    pub pages: Vec<Page>,
}

impl HyperCorpus {
    pub fn new(pages: Vec<Page>) -> Result<Self> {
        let hc = HyperCorpus { pages };
        hc.validate()?;
        Ok(hc)
    }

    pub fn validate(&self) -> Result<()> {
        for p in &self.pages {
            for a in &p.anchors {
                if a.start > a.end || a.end >= p.tokens.len() {
                    return Err(KbieError::Validation {
                        doc: p.page_entity.clone(),
                        msg: format!("anchor ({}, {}) outside page", a.start, a.end),
                    });
                }
            }
        }
        Ok(())
    }

    /// `(anchor surface, target entity)` pairs in page order.
    pub fn anchor_stream(&self) -> Vec<(String, String)> {
        self.pages
            .iter()
            .flat_map(|p| {
                p.anchors
                    .iter()
                    .map(|a| (p.tokens[a.start..=a.end].join(" "), a.entity.clone()))
            })
            .collect()
    }

    /// Sorted page entities and anchor targets.
    pub fn entities(&self) -> Vec<String> {
        let mut set = BTreeSet::new();
        for p in &self.pages {
            set.insert(p.page_entity.clone());
            set.extend(p.anchors.iter().map(|a| a.entity.clone()));
        }
        set.into_iter().collect()
    }

    pub fn write(&self, mut out: impl Write) -> Result<()> {
        for p in &self.pages {
            serde_json::to_writer(&mut out, p)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read(reader: impl BufRead) -> Result<Self> {
        let mut pages = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            pages.push(serde_json::from_str(&line).map_err(|e| KbieError::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?);
        }
        HyperCorpus::new(pages)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(BufReader::new(fs::File::open(path)?))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub subj: String,
    pub rel: String,
    pub obj: String,
}

impl Triple {
    pub fn new(subj: impl Into<String>, rel: impl Into<String>, obj: impl Into<String>) -> Self {
        Triple {
            subj: subj.into(),
            rel: rel.into(),
            obj: obj.into(),
        }
    }
}

/// Duplicate-free triples with sorted entity and relation vocabularies.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TripleSet {
    triples: Vec<Triple>,
    entities: Vec<String>,
    relations: Vec<String>,
}

impl TripleSet {
    pub fn new(triples: Vec<Triple>) -> Result<Self> {
        let mut seen = HashSet::new();
        for t in &triples {
            if !seen.insert(t) {
                return Err(KbieError::Validation {
                    doc: "triples".into(),
                    msg: format!("duplicate triple ({}, {}, {})", t.subj, t.rel, t.obj),
                });
            }
        }
        let mut entities = BTreeSet::new();
        let mut relations = BTreeSet::new();
        for t in &triples {
            entities.insert(t.subj.clone());
            entities.insert(t.obj.clone());
            relations.insert(t.rel.clone());
        }
        Ok(TripleSet {
            triples,
            entities: entities.into_iter().collect(),
            relations: relations.into_iter().collect(),
        })
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn entities(&self) -> &[String] {
        &self.entities
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn push(&mut self, t: Triple) -> Result<()> {
        let mut all = std::mem::take(&mut self.triples);
        all.push(t);
        *self = TripleSet::new(all)?;
        Ok(())
    }

    pub fn write(&self, mut out: impl Write) -> Result<()> {
        for t in &self.triples {
            writeln!(out, "{}\t{}\t{}", t.subj, t.rel, t.obj)?;
        }
        Ok(())
    }

    pub fn read(reader: impl BufRead) -> Result<Self> {
        let mut triples = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 3 || parts.iter().any(|p| p.is_empty()) {
                return Err(KbieError::Parse {
                    line: i + 1,
                    msg: "expected subj<TAB>rel<TAB>obj".into(),
                });
            }
            triples.push(Triple::new(parts[0], parts[1], parts[2]));
        }
        TripleSet::new(triples)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(BufReader::new(fs::File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn duplicate_triple_rejected() {
        let mut ts = TripleSet::new(vec![Triple::new("a", "r", "b")]).unwrap();
        assert!(matches!(
            ts.push(Triple::new("a", "r", "b")),
            Err(KbieError::Validation { .. })
        ));
    }

    #[test]
    fn triples_round_trip() {
        let ts = TripleSet::new(vec![Triple::new("a", "r", "b"), Triple::new("b", "s", "a")]).unwrap();
        let mut buf = Vec::new();
        ts.write(&mut buf).unwrap();
        assert_eq!(TripleSet::read(Cursor::new(buf)).unwrap(), ts);
        assert_eq!(ts.entities(), &["a", "b"]);
        assert!(matches!(
            TripleSet::read(Cursor::new("a\tb\n")),
            Err(KbieError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn hypercorpus_round_trip_and_anchors() {
        let hc = HyperCorpus::new(vec![Page {
            page_entity: "p".into(),
            tokens: vec!["see".into(), "Red".into(), "Planet".into()],
            anchors: vec![Anchor {
                start: 1,
                end: 2,
                entity: "mars".into(),
            }],
        }])
        .unwrap();
        assert_eq!(hc.anchor_stream(), vec![("Red Planet".to_string(), "mars".to_string())]);
        let mut buf = Vec::new();
        hc.write(&mut buf).unwrap();
        assert_eq!(HyperCorpus::read(Cursor::new(buf)).unwrap(), hc);
        let mut bad = hc.clone();
        bad.pages[0].anchors[0].end = 3;
        assert!(bad.validate().is_err());
    }
}
