//! Vocabulary construction, TF-IDF vectors for the forest path and padded id
//! sequences plus embedding matrices for the LSTM path.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::preprocess::TokenizedDoc;
use crate::rng::Rng;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
const FIRST_TERM: u32 = 2;

/// Term index. Ids 0 and 1 are reserved for padding and unknown tokens; real
/// terms are numbered from 2 in order of descending document frequency, ties
/// broken lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    terms: Vec<String>,
    doc_freq: Vec<usize>,
    n_docs: usize,
    index: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    n_docs: usize,
    terms: Vec<String>,
    doc_freq: Vec<usize>,
}

impl From<VocabularyRepr> for Vocabulary {
    fn from(r: VocabularyRepr) -> Self {
        Vocabulary::from_parts(r.terms, r.doc_freq, r.n_docs)
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr {
            n_docs: v.n_docs,
            terms: v.terms,
            doc_freq: v.doc_freq,
        }
    }
}

impl Vocabulary {
    fn from_parts(terms: Vec<String>, doc_freq: Vec<usize>, n_docs: usize) -> Self {
        let index = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32 + FIRST_TERM))
            .collect();
        Vocabulary {
            terms,
            doc_freq,
            n_docs,
            index,
        }
    }

    /// Total id space including the two reserved ids.
    pub fn size(&self) -> usize {
        self.terms.len() + FIRST_TERM as usize
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn id(&self, term: &str) -> Option<u32> {
        self.index.get(term).copied()
    }

    pub fn term(&self, id: u32) -> Option<&str> {
        match id {
            PAD => Some("<pad>"),
            UNK => Some("<unk>"),
            _ => self.terms.get((id - FIRST_TERM) as usize).map(String::as_str),
        }
    }

    pub fn doc_freq(&self, id: u32) -> Option<usize> {
        id.checked_sub(FIRST_TERM)
            .and_then(|i| self.doc_freq.get(i as usize))
            .copied()
    }

    /// Real terms in id order.
    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    /// Smoothed inverse document frequency `ln((1 + N) / (1 + df)) + 1`.
    pub fn idf(&self, id: u32) -> Option<f64> {
        let df = self.doc_freq(id)? as f64;
        Some(((1.0 + self.n_docs as f64) / (1.0 + df)).ln() + 1.0)
    }

    /// SHA-256 over document count, terms and frequencies, as lowercase hex.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("n_docs={}\n", self.n_docs));
        for (t, df) in self.terms.iter().zip(&self.doc_freq) {
            h.update(t.as_bytes());
            h.update(format!("\t{df}\n"));
        }
        hex::encode(h.finalize())
    }
}

pub fn build_vocabulary(docs: &[TokenizedDoc], min_df: usize, max_size: usize) -> Result<Vocabulary> {
    if docs.is_empty() {
        return Err(Error::Data("cannot build a vocabulary from an empty corpus".into()));
    }
    if min_df == 0 || max_size == 0 {
        return Err(Error::Config("min_df and max_size must be at least 1".into()));
    }
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for doc in docs {
        let unique: HashSet<&str> = doc.tokens.iter().map(String::as_str).collect();
        for t in unique {
            *df.entry(t).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = df.into_iter().filter(|&(_, c)| c >= min_df).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(max_size);
    let (terms, freqs) = ranked.into_iter().map(|(t, c)| (t.to_string(), c)).unzip();
    Ok(Vocabulary::from_parts(terms, freqs, docs.len()))
}

/// Sparse real vector; entries sorted by id, no explicit zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    entries: Vec<(u32, f64)>,
    dim: usize,
}

impl FeatureVector {
    pub fn zeros(dim: usize) -> Self {
        FeatureVector {
            entries: Vec::new(),
            dim,
        }
    }

    /// Builds from `(id, weight)` pairs; duplicate ids are summed and zeros dropped.
    pub fn from_entries(dim: usize, entries: impl IntoIterator<Item = (u32, f64)>) -> Result<Self> {
        let mut map: BTreeMap<u32, f64> = BTreeMap::new();
        for (id, w) in entries {
            if id as usize >= dim {
                return Err(Error::Shape(format!("feature id {id} outside dimension {dim}")));
            }
            if !w.is_finite() {
                return Err(Error::Data(format!("non-finite weight for feature {id}")));
            }
            *map.entry(id).or_default() += w;
        }
        Ok(FeatureVector {
            entries: map.into_iter().filter(|&(_, w)| w != 0.0).collect(),
            dim,
        })
    }

    pub fn from_dense(values: &[f64]) -> Self {
        FeatureVector {
            entries: values
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, v)| (i as u32, *v))
                .collect(),
            dim: values.len(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn get(&self, id: u32) -> f64 {
        self.entries
            .binary_search_by_key(&id, |e| e.0)
            .map_or(0.0, |i| self.entries[i].1)
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for &(i, w) in &self.entries {
            v[i as usize] = w;
        }
        v
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt()
    }

    pub fn squared_distance(&self, other: &FeatureVector) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        let (a, b) = (&self.entries, &other.entries);
        while i < a.len() || j < b.len() {
            let d = match (a.get(i), b.get(j)) {
                (Some(x), Some(y)) if x.0 == y.0 => {
                    i += 1;
                    j += 1;
                    x.1 - y.1
                }
                (Some(x), Some(y)) if x.0 < y.0 => {
                    i += 1;
                    x.1
                }
                (Some(x), None) => {
                    i += 1;
                    x.1
                }
                (_, Some(y)) => {
                    j += 1;
                    y.1
                }
                (None, None) => unreachable!(),
            };
            acc += d * d;
        }
        acc
    }

    /// `self + t * (other - self)`.
    pub fn lerp(&self, other: &FeatureVector, t: f64) -> FeatureVector {
        let mut merged: BTreeMap<u32, (f64, f64)> = BTreeMap::new();
        for &(i, w) in &self.entries {
            merged.entry(i).or_default().0 = w;
        }
        for &(i, w) in &other.entries {
            merged.entry(i).or_default().1 = w;
        }
        FeatureVector {
            entries: merged
                .into_iter()
                .map(|(i, (a, b))| (i, a + t * (b - a)))
                .filter(|&(_, w)| w != 0.0)
                .collect(),
            dim: self.dim,
        }
    }
}

/// L2-normalized TF-IDF weights of the in-vocabulary tokens of `doc`.
pub fn vectorize_tfidf(doc: &TokenizedDoc, vocab: &Vocabulary) -> FeatureVector {
    let mut tf: BTreeMap<u32, f64> = BTreeMap::new();
    for t in &doc.tokens {
        if let Some(id) = vocab.id(t) {
            *tf.entry(id).or_default() += 1.0;
        }
    }
    let mut entries: Vec<(u32, f64)> = tf
        .into_iter()
        .map(|(id, c)| (id, c * vocab.idf(id).expect("in-vocabulary id")))
        .collect();
    let norm = entries.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt();
    if norm > 0.0 {
        for e in &mut entries {
            e.1 /= norm;
        }
    }
    FeatureVector {
        entries,
        dim: vocab.size(),
    }
}

/// Hex SHA-256 of `bytes`; used for configuration digests.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Fixed-length id sequence, right-padded with [`PAD`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub true_len: usize,
}

impl TokenSequence {
    /// The ids before padding.
    pub fn tokens(&self) -> &[u32] {
        &self.ids[..self.true_len]
    }
}

pub fn encode_sequence(doc: &TokenizedDoc, vocab: &Vocabulary, len: usize) -> TokenSequence {
    let mut ids: Vec<u32> = doc
        .tokens
        .iter()
        .take(len)
        .map(|t| vocab.id(t).unwrap_or(UNK))
        .collect();
    let true_len = ids.len();
    ids.resize(len, PAD);
    TokenSequence { ids, true_len }
}

/// Row-major `|vocab| x d` matrix of word vectors; row [`PAD`] is zero.
/// Serialized as an array of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct EmbeddingMatrix {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl TryFrom<Vec<Vec<f64>>> for EmbeddingMatrix {
    type Error = String;

    fn try_from(rows: Vec<Vec<f64>>) -> std::result::Result<Self, String> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err("ragged embedding rows".into());
        }
        Ok(EmbeddingMatrix {
            rows: rows.len(),
            dim,
            data: rows.into_iter().flatten().collect(),
        })
    }
}

impl From<EmbeddingMatrix> for Vec<Vec<f64>> {
    fn from(m: EmbeddingMatrix) -> Self {
        if m.dim == 0 {
            return vec![Vec::new(); m.rows];
        }
        m.data.chunks(m.dim).map(<[f64]>::to_vec).collect()
    }
}

impl EmbeddingMatrix {
    /// Rows drawn from U(-0.05, 0.05), PAD row zeroed.
    pub fn random(rows: usize, dim: usize, rng: &mut Rng) -> Self {
        let mut data: Vec<f64> = (0..rows * dim).map(|_| rng.random_range(-0.05..0.05)).collect();
        data[..dim.min(rows * dim)].fill(0.0);
        EmbeddingMatrix { rows, dim, data }
    }

    pub fn row(&self, id: u32) -> &[f64] {
        let start = id as usize * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn row_mut(&mut self, id: u32) -> &mut [f64] {
        let start = id as usize * self.dim;
        &mut self.data[start..start + self.dim]
    }
}

/// Loads word vectors for the terms of `vocab`; terms missing from the file
/// keep a random initialization.
pub fn load_embeddings(path: &Path, vocab: &Vocabulary, dim: usize, rng: &mut Rng) -> Result<EmbeddingMatrix> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text, vocab, dim, rng, &path.display().to_string()).map(|(m, _)| m)
}

/// Parses the word-vector text format; returns the matrix and the number of
/// vocabulary rows copied from the file.
pub fn parse_embeddings(
    text: &str,
    vocab: &Vocabulary,
    dim: usize,
    rng: &mut Rng,
    source: &str,
) -> Result<(EmbeddingMatrix, usize)> {
    let mut matrix = EmbeddingMatrix::random(vocab.size(), dim, rng);
    let mut copied = 0;
    for (i, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values: Vec<&str> = parts.collect();
        if values.len() != dim {
            return Err(Error::format(
                source,
                i + 1,
                "vector",
                format!("expected {dim} values for `{token}`, found {}", values.len()),
            ));
        }
        let Some(id) = vocab.id(token) else { continue };
        let row = matrix.row_mut(id);
        for (slot, v) in row.iter_mut().zip(values) {
            *slot = v
                .parse()
                .map_err(|_| Error::format(source, i + 1, "vector", format!("`{v}` is not a number")))?;
        }
        copied += 1;
    }
    Ok((matrix, copied))
}

/// Vocabulary plus the sequence length; turns token lists into both model inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Featurizer {
    pub vocab: Vocabulary,
    pub seq_len: usize,
}

/// A document in both representations, tagged with the vocabulary it was
/// encoded against.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDoc {
    pub tfidf: FeatureVector,
    pub seq: TokenSequence,
    pub vocab_fingerprint: String,
}

impl Featurizer {
    pub fn new(vocab: Vocabulary, seq_len: usize) -> Result<Self> {
        if seq_len == 0 {
            return Err(Error::Config("sequence length must be at least 1".into()));
        }
        Ok(Featurizer { vocab, seq_len })
    }

    pub fn fingerprint(&self) -> String {
        self.vocab.fingerprint()
    }

    pub fn encode(&self, doc: &TokenizedDoc) -> EncodedDoc {
        self.encode_with(doc, &self.fingerprint())
    }

    /// Same as [`Featurizer::encode`] with a precomputed fingerprint.
    pub fn encode_with(&self, doc: &TokenizedDoc, fingerprint: &str) -> EncodedDoc {
        EncodedDoc {
            tfidf: vectorize_tfidf(doc, &self.vocab),
            seq: encode_sequence(doc, &self.vocab, self.seq_len),
            vocab_fingerprint: fingerprint.to_string(),
        }
    }
}
