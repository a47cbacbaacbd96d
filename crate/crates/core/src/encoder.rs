//! Word and character token features and a one-layer BiLSTM.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use kbie_tensor::{ChaCha8Rng, Graph, ParamId, ParamSet, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{glorot, zeros_param};
use crate::corpus::Document;
use crate::error::{config_err, KbieError, Result};

pub const UNK_WORD: usize = 0;
pub const PAD_CHAR: usize = 0;
pub const UNK_CHAR: usize = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub word_dim: usize,
    pub char_dim: usize,
    /// Filters per convolution width.
    pub char_filters: usize,
    pub char_widths: Vec<usize>,
    /// Hidden size of each LSTM direction.
    pub hidden: usize,
    /// Dropout on the BiLSTM input.
    pub dropout: f64,
    /// Probability of replacing a training token by the unknown word.
    pub word_dropout: f64,
    pub lowercase: bool,
    pub freeze_words: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            word_dim: 24,
            char_dim: 8,
            char_filters: 8,
            char_widths: vec![2, 3],
            hidden: 24,
            dropout: 0.2,
            word_dropout: 0.1,
            lowercase: true,
            freeze_words: false,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.word_dim == 0 || self.char_dim == 0 || self.hidden == 0 {
            return Err(config_err("encoder dimensions must be positive"));
        }
        if self.char_widths.contains(&0) {
            return Err(config_err("character convolution widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.word_dropout) {
            return Err(config_err("dropout rates must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn char_feature_dim(&self) -> usize {
        self.char_filters * self.char_widths.len()
    }

    pub fn input_dim(&self) -> usize {
        self.word_dim + self.char_feature_dim()
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden
    }
}

/// Word and character inventories. Word 0 is the unknown word; character 0
/// is padding and 1 the unknown character.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenVocab {
    pub words: Vec<String>,
    pub chars: Vec<char>,
    pub lowercase: bool,
    #[serde(skip)]
    word_ix: HashMap<String, usize>,
    #[serde(skip)]
    char_ix: HashMap<char, usize>,
}

impl TokenVocab {
    pub fn build(docs: &[Document], lowercase: bool) -> Self {
        let mut words = BTreeSet::new();
        let mut chars = BTreeSet::new();
        for d in docs {
            for t in &d.tokens {
                chars.extend(t.chars());
                words.insert(if lowercase { t.to_lowercase() } else { t.clone() });
            }
        }
        let mut w = vec!["<unk>".to_string()];
        w.extend(words);
        let mut c = vec!['\u{0}', '\u{fffd}'];
        c.extend(chars);
        TokenVocab::from_parts(w, c, lowercase)
    }

    pub fn from_parts(words: Vec<String>, chars: Vec<char>, lowercase: bool) -> Self {
        let mut v = TokenVocab {
            words,
            chars,
            lowercase,
            word_ix: HashMap::new(),
            char_ix: HashMap::new(),
        };
        v.reindex();
        v
    }

    /// Rebuild lookup tables after deserialization.
    pub fn reindex(&mut self) {
        self.word_ix = self.words.iter().enumerate().skip(1).map(|(i, w)| (w.clone(), i)).collect();
        self.char_ix = self.chars.iter().enumerate().skip(2).map(|(i, &c)| (c, i)).collect();
    }

    pub fn word_id(&self, token: &str) -> usize {
        let key = if self.lowercase {
            token.to_lowercase()
        } else {
            token.to_string()
        };
        self.word_ix.get(&key).copied().unwrap_or(UNK_WORD)
    }

    pub fn char_id(&self, c: char) -> usize {
        self.char_ix.get(&c).copied().unwrap_or(UNK_CHAR)
    }
}

/// Reads `word v1 ... vd` lines.
pub fn read_word_vectors(path: impl AsRef<Path>) -> Result<HashMap<String, Vec<f64>>> {
    let text = fs::read_to_string(path)?;
    let mut out = HashMap::new();
    let mut dim = None;
    for (i, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let vals: std::result::Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
        let vals = vals.map_err(|e| KbieError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if vals.is_empty() || vals.iter().any(|v| !v.is_finite()) || *dim.get_or_insert(vals.len()) != vals.len() {
            return Err(KbieError::Parse {
                line: i + 1,
                msg: "word vectors must be finite and share one dimension".into(),
            });
        }
        out.insert(word.to_string(), vals);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
struct LstmDir {
    wx: ParamId,
    wh: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    words: ParamId,
    chars: ParamId,
    convs: Vec<(usize, ParamId, ParamId)>,
    fwd: LstmDir,
    bwd: LstmDir,
}

impl Encoder {
    pub fn new(
        params: &mut ParamSet,
        cfg: &EncoderConfig,
        vocab: &TokenVocab,
        pretrained: Option<&HashMap<String, Vec<f64>>>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut table = glorot(rng, vocab.words.len(), cfg.word_dim)?;
        if let Some(vecs) = pretrained {
            for (i, w) in vocab.words.iter().enumerate().skip(1) {
                if let Some(v) = vecs.get(w) {
                    if v.len() != cfg.word_dim {
                        return Err(config_err(format!(
                            "pretrained vectors have dimension {}, expected {}",
                            v.len(),
                            cfg.word_dim
                        )));
                    }
                    table.data_mut()[i * cfg.word_dim..(i + 1) * cfg.word_dim].copy_from_slice(v);
                }
            }
        }
        table.requires_grad = !cfg.freeze_words;
        let words = params.add("encoder/words", table)?;
        let chars = params.add("encoder/chars", glorot(rng, vocab.chars.len(), cfg.char_dim)?)?;
        let mut convs = Vec::new();
        for &w in &cfg.char_widths {
            let f = params.add(
                format!("encoder/conv{w}/w"),
                glorot(rng, w * cfg.char_dim, cfg.char_filters)?,
            )?;
            let b = params.add(format!("encoder/conv{w}/b"), zeros_param(1, cfg.char_filters))?;
            convs.push((w, f, b));
        }
        let mut dir = |name: &str| -> Result<LstmDir> {
            let h = cfg.hidden;
            let wx = params.add(format!("encoder/{name}/wx"), glorot(rng, cfg.input_dim(), 4 * h)?)?;
            let wh = params.add(format!("encoder/{name}/wh"), glorot(rng, h, 4 * h)?)?;
            // Gate order i, f, o, g; the forget gate starts open.
            let mut bias = vec![0.0; 4 * h];
            bias[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
            let b = params.add(format!("encoder/{name}/b"), Tensor::matrix(1, 4 * h, bias)?.with_grad())?;
            Ok(LstmDir { wx, wh, b })
        };
        let fwd = dir("fwd")?;
        let bwd = dir("bwd")?;
        Ok(Encoder {
            cfg: cfg.clone(),
            words,
            chars,
            convs,
            fwd,
            bwd,
        })
    }

    /// `tokens x (word_dim + char features)`. With `word_dropout`, training
    /// tokens are replaced by the unknown word at the configured rate.
    pub fn embed_tokens(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        vocab: &TokenVocab,
        tokens: &[String],
        word_dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let mut ids: Vec<usize> = tokens.iter().map(|t| vocab.word_id(t)).collect();
        if let Some(rng) = word_dropout {
            for id in ids.iter_mut() {
                if rng.gen::<f64>() < self.cfg.word_dropout {
                    *id = UNK_WORD;
                }
            }
        }
        let table = g.param(params, self.words);
        let wv = g.gather(table, &ids)?;
        if self.convs.is_empty() {
            return Ok(wv);
        }
        let cv = self.char_features(g, params, vocab, tokens)?;
        Ok(g.concat(&[wv, cv], 1)?)
    }

    /// Max-pooled character convolutions, one row per token.
    fn char_features(&self, g: &mut Graph, params: &ParamSet, vocab: &TokenVocab, tokens: &[String]) -> Result<Var> {
        let widest = self.cfg.char_widths.iter().copied().max().unwrap_or(1);
        // Each token is padded on both sides and up to the widest filter.
        let mut ids = Vec::new();
        let mut bounds = Vec::new();
        for t in tokens {
            let start = ids.len();
            ids.push(PAD_CHAR);
            ids.extend(t.chars().map(|c| vocab.char_id(c)));
            ids.push(PAD_CHAR);
            while ids.len() - start < widest {
                ids.push(PAD_CHAR);
            }
            bounds.push((start, ids.len()));
        }
        let table = g.param(params, self.chars);
        let emb = g.gather(table, &ids)?;
        let mut per_width = Vec::new();
        for &(w, f, b) in &self.convs {
            let mut offsets: Vec<Vec<usize>> = vec![Vec::new(); w];
            let mut windows = Vec::new();
            for &(s, e) in &bounds {
                let first = offsets[0].len();
                for j in s..=e - w {
                    for (k, o) in offsets.iter_mut().enumerate() {
                        o.push(j + k);
                    }
                }
                windows.push((first, offsets[0].len()));
            }
            let cols: Vec<Var> = offsets.iter().map(|o| g.gather(emb, o)).collect::<kbie_tensor::Result<_>>()?;
            let x = g.concat(&cols, 1)?;
            let (fv, bv) = (g.param(params, f), g.param(params, b));
            let conv = g.matmul(x, fv)?;
            let conv = g.add(conv, bv)?;
            let mut pooled = Vec::with_capacity(windows.len());
            for (s, e) in windows {
                let rows = g.slice(conv, 0, s, e)?;
                pooled.push(g.max_pool(rows, 0)?);
            }
            per_width.push(g.concat(&pooled, 0)?);
        }
        Ok(g.concat(&per_width, 1)?)
    }

    fn run_direction(&self, g: &mut Graph, params: &ParamSet, x: Var, dir: &LstmDir, reverse: bool) -> Result<Vec<Var>> {
        let n = g.shape(x)[0];
        let h = self.cfg.hidden;
        let (wx, wh, b) = (g.param(params, dir.wx), g.param(params, dir.wh), g.param(params, dir.b));
        let xw = g.matmul(x, wx)?;
        let xw = g.add(xw, b)?;
        let mut out = vec![None; n];
        let mut state: Option<(Var, Var)> = None;
        let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
        for t in order {
            let mut z = g.slice(xw, 0, t, t + 1)?;
            if let Some((hp, _)) = state {
                let r = g.matmul(hp, wh)?;
                z = g.add(z, r)?;
            }
            let zi = g.slice(z, 1, 0, h)?;
            let i = g.sigmoid(zi)?;
            let zf = g.slice(z, 1, h, 2 * h)?;
            let zo = g.slice(z, 1, 2 * h, 3 * h)?;
            let o = g.sigmoid(zo)?;
            let zg = g.slice(z, 1, 3 * h, 4 * h)?;
            let cand = g.tanh(zg)?;
            let mut c = g.mul(i, cand)?;
            if let Some((_, cp)) = state {
                let f = g.sigmoid(zf)?;
                let keep = g.mul(f, cp)?;
                c = g.add(keep, c)?;
            }
            let tc = g.tanh(c)?;
            let hv = g.mul(o, tc)?;
            out[t] = Some(hv);
            state = Some((hv, c));
        }
        Ok(out.into_iter().map(|v| v.expect("every step visited")).collect())
    }

    /// `tokens x 2 hidden`: forward states then backward states.
    pub fn bilstm(&self, g: &mut Graph, params: &ParamSet, x: Var) -> Result<Var> {
        let (n, d) = (g.shape(x)[0], g.shape(x)[1]);
        if d != self.cfg.input_dim() || n == 0 {
            return Err(kbie_tensor::TensorError::Shape {
                op: "bilstm",
                left: vec![n, d],
                right: vec![n, self.cfg.input_dim()],
            }
            .into());
        }
        let x = g.dropout(x, self.cfg.dropout)?;
        let f = self.run_direction(g, params, x, &self.fwd, false)?;
        let b = self.run_direction(g, params, x, &self.bwd, true)?;
        let f = g.concat(&f, 0)?;
        let b = g.concat(&b, 0)?;
        Ok(g.concat(&[f, b], 1)?)
    }

    pub fn encode(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        vocab: &TokenVocab,
        tokens: &[String],
        word_dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let x = self.embed_tokens(g, params, vocab, tokens, word_dropout)?;
        self.bilstm(g, params, x)
    }

    /// Parameter ids of the two LSTM directions, forward first.
    pub fn lstm_params(&self) -> [[ParamId; 3]; 2] {
        [
            [self.fwd.wx, self.fwd.wh, self.fwd.b],
            [self.bwd.wx, self.bwd.wh, self.bwd.b],
        ]
    }

    pub fn word_table(&self) -> ParamId {
        self.words
    }

    pub fn conv_params(&self) -> Vec<(usize, ParamId, ParamId)> {
        self.convs.clone()
    }
}
