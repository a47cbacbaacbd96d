use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use kbie_tensor::{ParamSet, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, KbieError, Result};

/// Where entity vectors come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KbSource {
    #[serde(rename = "kb-text")]
    Text,
    #[serde(rename = "kb-graph")]
    Graph,
    #[serde(rename = "both")]
    Both,
}

impl KbSource {
    pub const ALL: [KbSource; 3] = [KbSource::Text, KbSource::Graph, KbSource::Both];

    pub fn as_str(self) -> &'static str {
        match self {
            KbSource::Text => "kb-text",
            KbSource::Graph => "kb-graph",
            KbSource::Both => "both",
        }
    }
}

impl fmt::Display for KbSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KbSource {
    type Err = KbieError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kb-text" | "text" => Ok(KbSource::Text),
            "kb-graph" | "graph" => Ok(KbSource::Graph),
            "both" => Ok(KbSource::Both),
            _ => Err(config_err(format!(
                "unknown KB source {s:?} (expected kb-text, kb-graph or both)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreHeader {
    pub source: KbSource,
    pub dim: usize,
    pub count: usize,
}

/// Entity id to a fixed-length vector.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStore {
    source: KbSource,
    dim: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
}

impl EmbeddingStore {
    pub fn new(source: KbSource, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(config_err("embedding dim must be positive"));
        }
        Ok(EmbeddingStore {
            source,
            dim,
            ids: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
        })
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: &[f64]) -> Result<()> {
        let id = id.into();
        if vector.len() != self.dim {
            return Err(config_err(format!(
                "vector for {id} has length {}, store dim is {}",
                vector.len(),
                self.dim
            )));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(KbieError::Numerics(format!("non-finite vector for {id}")));
        }
        if self.index.contains_key(&id) {
            return Err(config_err(format!("duplicate entity {id} in store")));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn source(&self) -> KbSource {
        self.source
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index
            .get(id)
            .map(|&i| &self.data[i * self.dim..(i + 1) * self.dim])
    }

    pub fn header(&self) -> StoreHeader {
        StoreHeader {
            source: self.source,
            dim: self.dim,
            count: self.len(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_params().to_bytes()
    }

    fn to_params(&self) -> ParamSet {
        let mut ps = ParamSet::new();
        for id in &self.ids {
            let v = self.get(id).expect("listed id").to_vec();
            ps.add(id.clone(), Tensor::row(v).expect("finite by construction"))
                .expect("unique ids");
        }
        ps
    }

    /// Path of the JSON header written next to the tensor file.
    pub fn header_path(path: &Path) -> PathBuf {
        let mut name = path.as_os_str().to_owned();
        name.push(".json");
        PathBuf::from(name)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes())?;
        fs::write(
            Self::header_path(path),
            serde_json::to_string_pretty(&self.header())? + "\n",
        )?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let header: StoreHeader =
            serde_json::from_str(&fs::read_to_string(Self::header_path(path))?)?;
        let ps = ParamSet::load(path)?;
        let mut store = EmbeddingStore::new(header.source, header.dim)?;
        for (id, t) in ps.iter() {
            store.insert(id, t.data())?;
        }
        if store.len() != header.count {
            return Err(config_err(format!(
                "store header promises {} entities, file holds {}",
                header.count,
                store.len()
            )));
        }
        Ok(store)
    }
}

/// `[text; graph]` vectors over the entities present in both stores.
pub fn combine_stores(text: &EmbeddingStore, graph: &EmbeddingStore) -> Result<EmbeddingStore> {
    let mut both = EmbeddingStore::new(KbSource::Both, text.dim() + graph.dim())?;
    let mut buf = Vec::with_capacity(both.dim());
    for id in text.ids() {
        if let Some(g) = graph.get(id) {
            buf.clear();
            buf.extend_from_slice(text.get(id).expect("listed id"));
            buf.extend_from_slice(g);
            both.insert(id.clone(), &buf)?;
        }
    }
    if both.is_empty() {
        return Err(config_err("text and graph stores share no entities"));
    }
    Ok(both)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(source: KbSource, dim: usize, rows: &[(&str, Vec<f64>)]) -> EmbeddingStore {
        let mut s = EmbeddingStore::new(source, dim).unwrap();
        for (id, v) in rows {
            s.insert(*id, v).unwrap();
        }
        s
    }

    #[test]
    fn combine_concatenates_over_intersection() {
        let t = store(
            KbSource::Text,
            4,
            &[("a", vec![1., 2., 3., 4.]), ("only_text", vec![0.; 4])],
        );
        let g = store(KbSource::Graph, 3, &[("a", vec![5., 6., 7.]), ("z", vec![0.; 3])]);
        let b = combine_stores(&t, &g).unwrap();
        assert_eq!(b.dim(), 7);
        assert_eq!(b.get("a").unwrap(), &[1., 2., 3., 4., 5., 6., 7.]);
        assert!(b.get("only_text").is_none());
        assert_eq!(&b.get("a").unwrap()[..4], t.get("a").unwrap());
    }

    #[test]
    fn zero_vectors_combine_to_zero() {
        let t = store(KbSource::Text, 2, &[("a", vec![0., 0.])]);
        let g = store(KbSource::Graph, 1, &[("a", vec![0.])]);
        assert_eq!(combine_stores(&t, &g).unwrap().get("a").unwrap(), &[0., 0., 0.]);
    }

    #[test]
    fn empty_intersection_is_config_error() {
        let t = store(KbSource::Text, 1, &[("a", vec![1.])]);
        let g = store(KbSource::Graph, 1, &[("b", vec![1.])]);
        assert!(matches!(combine_stores(&t, &g), Err(KbieError::Config(_))));
    }

    #[test]
    fn insert_checks() {
        let mut s = EmbeddingStore::new(KbSource::Text, 2).unwrap();
        assert!(s.insert("a", &[1.0]).is_err());
        assert!(s.insert("a", &[1.0, f64::NAN]).is_err());
        s.insert("a", &[1.0, 2.0]).unwrap();
        assert!(s.insert("a", &[1.0, 2.0]).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("text.store");
        let s = store(
            KbSource::Text,
            3,
            &[("x", vec![0.1, -1e-300, 7.25]), ("y", vec![1.0 / 3.0, 0.0, -0.0])],
        );
        s.save(&p).unwrap();
        let back = EmbeddingStore::load(&p).unwrap();
        assert_eq!(back.to_bytes(), s.to_bytes());
        assert_eq!(back.source(), KbSource::Text);
        let header: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(EmbeddingStore::header_path(&p)).unwrap())
                .unwrap();
        assert_eq!(header["source"], "kb-text");
        assert_eq!(header["count"], 2);
    }
}
