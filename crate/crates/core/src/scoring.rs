//! Similarity signals and their weighted combination.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::binio::{fnv1a64, Writer};
use crate::embeddings::tokenize;
use crate::error::{Error, Result};

const NORM_EPS: f64 = 1e-12;

/// Cosine similarity computed in `f64`. Returns 0 when either vector has
/// (near-)zero norm.
pub fn cosine<A, B>(a: &[A], b: &[B]) -> Result<f64>
where
    A: Copy + Into<f64>,
    B: Copy + Into<f64>,
{
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            context: "cosine operands",
            expected: a.len(),
            actual: b.len(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x.into(), y.into());
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let (na, nb) = (na.sqrt(), nb.sqrt());
    if na < NORM_EPS || nb < NORM_EPS {
        return Ok(0.0);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Sparse vector with strictly increasing indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVector {
    entries: Vec<(u32, f64)>,
}

impl SparseVector {
    /// Builds from entries that are already sorted by strictly increasing
    /// index.
    pub fn from_sorted(entries: Vec<(u32, f64)>) -> Result<Self> {
        if entries.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::InvalidConfig("sparse indices must be strictly increasing".into()));
        }
        if entries.iter().any(|(_, w)| !w.is_finite()) {
            return Err(Error::InvalidConfig("sparse weights must be finite".into()));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        let (a, b) = (&self.entries, &other.entries);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += a[i].1 * b[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    /// Cosine against another sparse vector; 0 if either is empty.
    pub fn cosine(&self, other: &SparseVector) -> f64 {
        let (na, nb) = (self.norm(), other.norm());
        if na < NORM_EPS || nb < NORM_EPS {
            return 0.0;
        }
        (self.dot(other) / (na * nb)).clamp(-1.0, 1.0)
    }

    /// Weights rounded to `f32`, the on-disk precision.
    pub fn rounded_to_f32(&self) -> SparseVector {
        SparseVector {
            entries: self.entries.iter().map(|&(i, w)| (i, f64::from(w as f32))).collect(),
        }
    }
}

/// Unigram TF-IDF with smooth idf: `ln((1 + N) / (1 + df)) + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TfidfModel {
    vocabulary: BTreeMap<String, u32>,
    idf: Vec<f64>,
    doc_count: usize,
}

impl TfidfModel {
    pub fn fit<S: AsRef<str>>(corpus: &[S]) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for doc in corpus {
            let mut terms = tokenize(doc.as_ref());
            terms.sort_unstable();
            terms.dedup();
            for t in terms {
                *df.entry(t).or_insert(0) += 1;
            }
        }
        let n = corpus.len() as f64;
        let mut vocabulary = BTreeMap::new();
        let mut idf = Vec::with_capacity(df.len());
        for (i, (term, count)) in df.into_iter().enumerate() {
            vocabulary.insert(term, i as u32);
            idf.push(((1.0 + n) / (1.0 + count as f64)).ln() + 1.0);
        }
        Ok(Self {
            vocabulary,
            idf,
            doc_count: corpus.len(),
        })
    }

    pub fn doc_count(&self) -> usize {
        self.doc_count
    }

    pub fn vocab_size(&self) -> usize {
        self.idf.len()
    }

    pub fn term_index(&self, term: &str) -> Option<u32> {
        self.vocabulary.get(term).copied()
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        self.term_index(term).map(|i| self.idf[i as usize])
    }

    /// Raw term counts times idf, L2-normalized. Unknown terms are dropped;
    /// text with no known terms gives an empty vector.
    pub fn transform(&self, text: &str) -> SparseVector {
        let mut tf: BTreeMap<u32, f64> = BTreeMap::new();
        for term in tokenize(text) {
            if let Some(i) = self.term_index(&term) {
                *tf.entry(i).or_insert(0.0) += 1.0;
            }
        }
        let mut entries: Vec<(u32, f64)> = tf.into_iter().map(|(i, c)| (i, c * self.idf[i as usize])).collect();
        let norm = entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (_, w) in &mut entries {
                *w /= norm;
            }
        }
        SparseVector { entries }
    }

    /// FNV-1a over a canonical encoding: doc count, then each term with its
    /// idf bits in vocabulary order.
    pub fn fingerprint(&self) -> u64 {
        let mut w = Writer::new();
        w.u64(self.doc_count as u64);
        w.u64(self.vocabulary.len() as u64);
        for (term, &i) in &self.vocabulary {
            w.u32(term.len() as u32);
            w.bytes(term.as_bytes());
            w.u64(self.idf[i as usize].to_bits());
        }
        fnv1a64(&w.into_inner())
    }
}

/// Non-negative weights over (fusion, genre, tf-idf) summing to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct Weights([f64; 3]);

const WEIGHT_SUM_TOL: f64 = 1e-6;

impl Weights {
    pub const EQUAL: Weights = Weights([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
    pub const FUSION_ONLY: Weights = Weights([1.0, 0.0, 0.0]);
    pub const GENRE_ONLY: Weights = Weights([0.0, 1.0, 0.0]);
    pub const TFIDF_ONLY: Weights = Weights([0.0, 0.0, 1.0]);

    pub fn new(fusion: f64, genre: f64, tfidf: f64) -> Result<Self> {
        let w = [fusion, genre, tfidf];
        let valid = w.iter().all(|v| v.is_finite() && *v >= 0.0) && (w.iter().sum::<f64>() - 1.0).abs() <= WEIGHT_SUM_TOL;
        if !valid {
            return Err(Error::InvalidWeights(w.to_vec()));
        }
        Ok(Self(w))
    }

    pub fn as_array(&self) -> [f64; 3] {
        self.0
    }
}

impl Default for Weights {
    fn default() -> Self {
        Weights::EQUAL
    }
}

impl TryFrom<[f64; 3]> for Weights {
    type Error = Error;

    fn try_from(w: [f64; 3]) -> Result<Self> {
        Weights::new(w[0], w[1], w[2])
    }
}

impl From<Weights> for [f64; 3] {
    fn from(w: Weights) -> Self {
        w.0
    }
}

impl FromStr for Weights {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::InvalidConfig(format!("weights must be three numbers, got {s:?}")))?;
        match parts[..] {
            [a, b, c] => Weights::new(a, b, c),
            _ => Err(Error::InvalidWeights(parts)),
        }
    }
}

impl fmt::Display for Weights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.0[0], self.0[1], self.0[2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoreBreakdown {
    pub fusion_sim: f64,
    pub genre_sim: f64,
    pub tfidf_sim: f64,
    pub combined: f64,
}

pub fn combined_score(fusion_sim: f64, genre_sim: f64, tfidf_sim: f64, weights: Weights) -> ScoreBreakdown {
    let [w1, w2, w3] = weights.0;
    ScoreBreakdown {
        fusion_sim,
        genre_sim,
        tfidf_sim,
        combined: w1 * fusion_sim + w2 * genre_sim + w3 * tfidf_sim,
    }
}
