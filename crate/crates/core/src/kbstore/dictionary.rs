use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, KbieError, Result};

/// Candidate lists are cut to this many entries unless told otherwise.
pub const DEFAULT_CANDIDATE_CAP: usize = 16;

/// Lowercase and collapse whitespace runs to one space.
pub fn normalize_surface(surface: &str) -> String {
    surface
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateEntity {
    pub entity: String,
    pub prior: f64,
}

#[derive(Serialize, Deserialize)]
struct Line {
    surface: String,
    candidates: Vec<CandidateEntity>,
}

/// Normalized surface form to candidate entities, highest prior first.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CandidateDictionary {
    entries: BTreeMap<String, Vec<CandidateEntity>>,
}

impl CandidateDictionary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Anchor-conditional link frequencies: `prior(e | s) = count(s -> e) /
    /// count(s)`. Lists keep the `cap` most frequent targets; the surviving
    /// priors are not renormalized.
    pub fn build<S, E>(anchors: impl IntoIterator<Item = (S, E)>, cap: usize) -> Result<Self>
    where
        S: AsRef<str>,
        E: Into<String>,
    {
        if cap == 0 || cap > DEFAULT_CANDIDATE_CAP {
            return Err(config_err(format!(
                "candidate cap must be in 1..={DEFAULT_CANDIDATE_CAP}, got {cap}"
            )));
        }
        let mut counts: BTreeMap<String, HashMap<String, u64>> = BTreeMap::new();
        for (s, e) in anchors {
            *counts
                .entry(normalize_surface(s.as_ref()))
                .or_default()
                .entry(e.into())
                .or_insert(0) += 1;
        }
        let mut entries = BTreeMap::new();
        for (surface, targets) in counts {
            let total: u64 = targets.values().sum();
            let mut ranked: Vec<(String, u64)> = targets.into_iter().collect();
            ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            ranked.truncate(cap);
            let list = ranked
                .into_iter()
                .map(|(entity, c)| CandidateEntity {
                    entity,
                    prior: c as f64 / total as f64,
                })
                .collect();
            entries.insert(surface, list);
        }
        Ok(CandidateDictionary { entries })
    }

    /// Insert a ready-made list. The list is validated and re-sorted.
    pub fn insert(&mut self, surface: &str, mut list: Vec<CandidateEntity>) -> Result<()> {
        let surface = normalize_surface(surface);
        if list.len() > DEFAULT_CANDIDATE_CAP {
            return Err(config_err(format!(
                "surface {surface:?} has {} candidates (max {DEFAULT_CANDIDATE_CAP})",
                list.len()
            )));
        }
        if let Some(c) = list.iter().find(|c| !(c.prior > 0.0 && c.prior <= 1.0)) {
            return Err(config_err(format!(
                "prior {} of {} for {surface:?} outside (0, 1]",
                c.prior, c.entity
            )));
        }
        if list.iter().map(|c| c.prior).sum::<f64>() > 1.0 + 1e-9 {
            return Err(config_err(format!("priors for {surface:?} sum above 1")));
        }
        sort_candidates(&mut list);
        if list.windows(2).any(|w| w[0].entity == w[1].entity) {
            return Err(config_err(format!("duplicate candidate for {surface:?}")));
        }
        self.entries.insert(surface, list);
        Ok(())
    }

    /// Candidates for `surface` after normalization; empty when unknown.
    pub fn lookup(&self, surface: &str) -> &[CandidateEntity] {
        self.entries
            .get(&normalize_surface(surface))
            .map_or(&[], Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[CandidateEntity])> {
        self.entries.iter().map(|(s, l)| (s.as_str(), l.as_slice()))
    }

    pub fn max_candidates(&self) -> usize {
        self.entries.values().map(Vec::len).max().unwrap_or(0)
    }

    pub fn write(&self, mut out: impl Write) -> Result<()> {
        for (surface, candidates) in &self.entries {
            let line = Line {
                surface: surface.clone(),
                candidates: candidates.clone(),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read(reader: impl BufRead) -> Result<Self> {
        let mut dict = CandidateDictionary::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(&line).map_err(|e| KbieError::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
            dict.insert(&parsed.surface, parsed.candidates)
                .map_err(|e| KbieError::Parse {
                    line: i + 1,
                    msg: e.to_string(),
                })?;
        }
        Ok(dict)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        buf
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(BufReader::new(fs::File::open(path)?))
    }
}

/// Descending prior, ties by entity id ascending.
pub fn sort_candidates(list: &mut [CandidateEntity]) {
    list.sort_by(|a, b| {
        b.prior
            .partial_cmp(&a.prior)
            .expect("finite priors")
            .then_with(|| a.entity.cmp(&b.entity))
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cands(dict: &CandidateDictionary, s: &str) -> Vec<(String, f64)> {
        dict.lookup(s)
            .iter()
            .map(|c| (c.entity.clone(), c.prior))
            .collect()
    }

    #[test]
    fn paris_priors() {
        let mut stream = vec![("paris", "E_city"); 8];
        stream.extend(vec![("Paris", "E_film"); 2]);
        let d = CandidateDictionary::build(stream, 16).unwrap();
        assert_eq!(
            cands(&d, "paris"),
            vec![("E_city".to_string(), 0.8), ("E_film".to_string(), 0.2)]
        );
    }

    #[test]
    fn cap_keeps_most_frequent() {
        let mut stream = Vec::new();
        for t in 0..20 {
            for _ in 0..=t {
                stream.push(("x".to_string(), format!("e{t:02}")));
            }
        }
        let d = CandidateDictionary::build(stream, DEFAULT_CANDIDATE_CAP).unwrap();
        let list = d.lookup("x");
        assert_eq!(list.len(), 16);
        assert_eq!(list[0].entity, "e19");
        assert_eq!(list[15].entity, "e04");
        // 210 anchors in total; the truncated tail is not redistributed.
        assert_eq!(list[0].prior, 20.0 / 210.0);
        assert!(list.iter().map(|c| c.prior).sum::<f64>() < 1.0);
    }

    #[test]
    fn single_target_and_empty_stream() {
        let d = CandidateDictionary::build([("a", "e")], 16).unwrap();
        assert_eq!(cands(&d, "a"), vec![("e".to_string(), 1.0)]);
        let empty = CandidateDictionary::build(Vec::<(String, String)>::new(), 16).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn lookup_normalizes() {
        let d = CandidateDictionary::build([("Red Planet", "mars")], 16).unwrap();
        assert_eq!(d.lookup("Red  Planet"), d.lookup("red planet"));
        assert_eq!(d.lookup("red planet").len(), 1);
        assert!(d.lookup("blue planet").is_empty());
    }

    #[test]
    fn ties_break_by_entity_id() {
        let d = CandidateDictionary::build([("s", "b"), ("s", "a"), ("s", "c"), ("s", "c")], 16)
            .unwrap();
        let ids: Vec<_> = d.lookup("s").iter().map(|c| c.entity.as_str()).collect();
        assert_eq!(ids, vec!["c", "a", "b"]);
    }

    #[test]
    fn insert_rejects_bad_lists() {
        let mut d = CandidateDictionary::new();
        let c = |e: &str, p| CandidateEntity {
            entity: e.into(),
            prior: p,
        };
        assert!(d.insert("s", vec![c("a", 0.0)]).is_err());
        assert!(d.insert("s", vec![c("a", 0.7), c("b", 0.7)]).is_err());
        assert!(d.insert("s", vec![c("a", 0.3), c("a", 0.3)]).is_err());
        d.insert("s", vec![c("a", 0.2), c("b", 0.7)]).unwrap();
        assert_eq!(d.lookup("s")[0].entity, "b");
    }

    proptest! {
        #[test]
        fn priors_are_count_ratios(pairs in proptest::collection::vec((0u8..4, 0u8..6), 0..60)) {
            let stream: Vec<(String, String)> = pairs
                .iter()
                .map(|(s, e)| (format!("s{s}"), format!("e{e}")))
                .collect();
            let d = CandidateDictionary::build(stream.clone(), 16).unwrap();
            for (surface, list) in d.iter() {
                let total = stream.iter().filter(|(s, _)| s == surface).count();
                for c in list {
                    let n = stream.iter().filter(|(s, e)| s == surface && *e == c.entity).count();
                    prop_assert_eq!(c.prior, n as f64 / total as f64);
                }
                let listed: usize = list.len();
                let distinct = stream
                    .iter()
                    .filter(|(s, _)| s == surface)
                    .map(|(_, e)| e)
                    .collect::<std::collections::BTreeSet<_>>()
                    .len();
                prop_assert_eq!(listed, distinct);
                prop_assert!(list.windows(2).all(|w| w[0].prior >= w[1].prior));
            }
            let back = CandidateDictionary::read(std::io::Cursor::new(d.to_bytes())).unwrap();
            prop_assert_eq!(back.to_bytes(), d.to_bytes());
            prop_assert_eq!(back, d);
        }
    }
}
