use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binio::{self, fnv1a64, Reader, Writer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"LFRGEN1\0";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GenreConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f32,
    pub min_n: usize,
    pub max_n: usize,
    pub buckets: usize,
    pub seed: u64,
}

impl Default for GenreConfig {
    fn default() -> Self {
        Self {
            dim: crate::GENRE_DIM,
            window: 2,
            negatives: 5,
            epochs: 15,
            lr: 0.05,
            min_n: 3,
            max_n: 6,
            buckets: 1 << 17,
            seed: 42,
        }
    }
}

impl GenreConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.dim == 0 {
            return bad("genre dim must be positive");
        }
        if self.buckets == 0 {
            return bad("bucket count must be positive");
        }
        if self.min_n == 0 || self.min_n > self.max_n {
            return bad("need 1 <= min_n <= max_n");
        }
        if self.epochs == 0 || self.window == 0 {
            return bad("epochs and window must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        Ok(())
    }
}

/// Character n-grams of `<token>` for every `n` in `min_n..=max_n`, in
/// order of first appearance, without repeats.
pub fn char_ngrams(token: &str, min_n: usize, max_n: usize) -> Vec<String> {
    let wrapped: Vec<char> = std::iter::once('<').chain(token.chars()).chain(std::iter::once('>')).collect();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for n in min_n..=max_n {
        if n > wrapped.len() {
            break;
        }
        for window in wrapped.windows(n) {
            let gram: String = window.iter().collect();
            if seen.insert(gram.clone()) {
                out.push(gram);
            }
        }
    }
    out
}

/// Subword skip-gram genre embeddings.
///
/// Each genre token has its own row, and every character n-gram hashes into
/// one of `buckets` shared rows. A token's embedding is the mean of its own
/// row (when in vocabulary) and its n-gram rows, so unseen tokens still get
/// a vector from the n-grams they share with known ones.
#[derive(Debug, Clone, PartialEq)]
pub struct GenreEmbeddingModel {
    dim: usize,
    min_n: usize,
    max_n: usize,
    buckets: usize,
    vocab: BTreeMap<String, usize>,
    token_vectors: Vec<f32>,
    bucket_vectors: Vec<f32>,
    seed: u64,
}

impl GenreEmbeddingModel {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn buckets(&self) -> usize {
        self.buckets
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vocab.contains_key(token)
    }

    pub fn vocabulary(&self) -> impl Iterator<Item = &str> {
        self.vocab.keys().map(String::as_str)
    }

    fn bucket_of(&self, gram: &str) -> usize {
        (fnv1a64(gram.as_bytes()) % self.buckets as u64) as usize
    }

    fn ngram_buckets(&self, token: &str) -> Vec<usize> {
        char_ngrams(token, self.min_n, self.max_n)
            .iter()
            .map(|g| self.bucket_of(g))
            .collect()
    }

    fn token_row(&self, idx: usize) -> &[f32] {
        &self.token_vectors[idx * self.dim..(idx + 1) * self.dim]
    }

    fn bucket_row(&self, b: usize) -> &[f32] {
        &self.bucket_vectors[b * self.dim..(b + 1) * self.dim]
    }

    /// Embedding of a single genre token. An empty token has no n-grams
    /// and maps to the zero vector.
    pub fn embed_genre(&self, token: &str) -> Vec<f32> {
        let mut acc = vec![0.0f64; self.dim];
        let mut count = 0usize;
        if let Some(&idx) = self.vocab.get(token) {
            for (a, &v) in acc.iter_mut().zip(self.token_row(idx)) {
                *a += f64::from(v);
            }
            count += 1;
        }
        for b in self.ngram_buckets(token) {
            for (a, &v) in acc.iter_mut().zip(self.bucket_row(b)) {
                *a += f64::from(v);
            }
            count += 1;
        }
        if count == 0 {
            return vec![0.0; self.dim];
        }
        acc.iter().map(|&a| (a / count as f64) as f32).collect()
    }

    /// Mean of the per-token embeddings. Tokens are summed in sorted order
    /// so the result does not depend on list order.
    pub fn embed_genre_set<S: AsRef<str>>(&self, genres: &[S]) -> Result<Vec<f32>> {
        if genres.is_empty() {
            return Err(Error::EmptyGenreList);
        }
        let mut sorted: Vec<&str> = genres.iter().map(AsRef::as_ref).collect();
        sorted.sort_unstable();
        let mut acc = vec![0.0f64; self.dim];
        for token in sorted {
            for (a, v) in acc.iter_mut().zip(self.embed_genre(token)) {
                *a += f64::from(v);
            }
        }
        let n = genres.len() as f64;
        Ok(acc.iter().map(|&a| (a / n) as f32).collect())
    }

    /// Trains on each genre list as one sentence with skip-gram and
    /// negative sampling. Single-threaded and fully determined by
    /// `config.seed`.
    pub fn train<S: AsRef<str>>(sequences: &[Vec<S>], config: &GenreConfig) -> Result<Self> {
        config.validate()?;
        if sequences.iter().all(|s| s.is_empty()) {
            return Err(Error::EmptyCorpus);
        }
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for seq in sequences {
            for t in seq {
                *counts.entry(t.as_ref().to_string()).or_insert(0) += 1;
            }
        }
        if counts.len() < 2 {
            return Err(Error::DegenerateCorpus(counts.len()));
        }
        if sequences.iter().all(|s| s.len() < 2) {
            return Err(Error::EmptyCorpus);
        }

        let dim = config.dim;
        let vocab: BTreeMap<String, usize> = counts.keys().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let vocab_size = vocab.len();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let bound = 1.0 / dim as f32;
        let mut token_vectors: Vec<f32> = (0..vocab_size * dim).map(|_| rng.gen_range(-bound..bound)).collect();
        let mut bucket_vectors: Vec<f32> = (0..config.buckets * dim).map(|_| rng.gen_range(-bound..bound)).collect();
        let mut output = vec![0.0f32; vocab_size * dim];

        let mut model = GenreEmbeddingModel {
            dim,
            min_n: config.min_n,
            max_n: config.max_n,
            buckets: config.buckets,
            vocab,
            token_vectors: Vec::new(),
            bucket_vectors: Vec::new(),
            seed: config.seed,
        };

        // Input rows per token: its own row, then its bucket rows offset by
        // the vocabulary size.
        let input_rows: Vec<Vec<usize>> = model
            .vocab
            .keys()
            .enumerate()
            .map(|(i, t)| {
                std::iter::once(i)
                    .chain(model.ngram_buckets(t).into_iter().map(|b| vocab_size + b))
                    .collect()
            })
            .collect();

        // Unigram^0.75 noise distribution.
        let mut cumulative = Vec::with_capacity(vocab_size);
        let mut total = 0.0f64;
        for &c in counts.values() {
            total += (c as f64).powf(0.75);
            cumulative.push(total);
        }
        let sample_negative = |rng: &mut ChaCha8Rng| -> usize {
            let r = rng.gen::<f64>() * total;
            cumulative.partition_point(|&c| c <= r).min(vocab_size - 1)
        };

        let encoded: Vec<Vec<usize>> = sequences
            .iter()
            .map(|s| s.iter().map(|t| model.vocab[t.as_ref()]).collect())
            .collect();
        let tokens_per_epoch: usize = encoded.iter().map(Vec::len).sum();
        let total_steps = (tokens_per_epoch * config.epochs).max(1) as f32;

        let mut hidden = vec![0.0f32; dim];
        let mut grad = vec![0.0f32; dim];
        let mut step = 0usize;
        for _ in 0..config.epochs {
            for seq in &encoded {
                for (pos, &center) in seq.iter().enumerate() {
                    let lr = config.lr * (1.0 - step as f32 / total_steps).max(1e-4);
                    step += 1;
                    let rows = &input_rows[center];
                    let lo = pos.saturating_sub(config.window);
                    let hi = (pos + config.window).min(seq.len() - 1);
                    for (ctx_pos, &context) in seq.iter().enumerate().take(hi + 1).skip(lo) {
                        if ctx_pos == pos {
                            continue;
                        }

                        hidden.iter_mut().for_each(|h| *h = 0.0);
                        for &r in rows {
                            let row = input_row(&token_vectors, &bucket_vectors, vocab_size, dim, r);
                            for (h, &v) in hidden.iter_mut().zip(row) {
                                *h += v;
                            }
                        }
                        let inv = 1.0 / rows.len() as f32;
                        hidden.iter_mut().for_each(|h| *h *= inv);
                        grad.iter_mut().for_each(|g| *g = 0.0);

                        let mut update = |target: usize, label: f32| {
                            let out = &mut output[target * dim..(target + 1) * dim];
                            let score: f32 = hidden.iter().zip(out.iter()).map(|(h, o)| h * o).sum();
                            let g = lr * (label - sigmoid(score));
                            for ((gr, o), &h) in grad.iter_mut().zip(out.iter_mut()).zip(hidden.iter()) {
                                *gr += g * *o;
                                *o += g * h;
                            }
                        };
                        update(context, 1.0);
                        for _ in 0..config.negatives {
                            let neg = sample_negative(&mut rng);
                            if neg != context {
                                update(neg, 0.0);
                            }
                        }

                        for &r in rows {
                            let row = input_row_mut(&mut token_vectors, &mut bucket_vectors, vocab_size, dim, r);
                            for (v, &g) in row.iter_mut().zip(grad.iter()) {
                                *v += g;
                            }
                        }
                    }
                }
            }
        }

        model.token_vectors = token_vectors;
        model.bucket_vectors = bucket_vectors;
        Ok(model)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::with_capacity(48 + (self.token_vectors.len() + self.bucket_vectors.len()) * 4);
        w.bytes(MAGIC);
        w.u32(self.dim as u32);
        w.u32(self.min_n as u32);
        w.u32(self.max_n as u32);
        w.u64(self.buckets as u64);
        w.u64(self.vocab.len() as u64);
        for (token, &idx) in &self.vocab {
            w.short_str(token)?;
            w.f32s(self.token_row(idx));
        }
        w.f32s(&self.bucket_vectors);
        w.u64(self.seed);
        Ok(w.into_inner())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "genre model");
        r.expect_magic(MAGIC)?;
        let dim = r.u32()? as usize;
        let min_n = r.u32()? as usize;
        let max_n = r.u32()? as usize;
        let buckets = usize::try_from(r.u64()?).map_err(|_| r.corrupt("bucket count overflow"))?;
        if dim == 0 || buckets == 0 || min_n == 0 || min_n > max_n {
            return Err(r.corrupt(format!("invalid header dim={dim} buckets={buckets} n={min_n}..{max_n}")));
        }
        let vocab_size = r.count(2 + dim * 4)?;
        let mut vocab = BTreeMap::new();
        let mut token_vectors = Vec::with_capacity(vocab_size * dim);
        for i in 0..vocab_size {
            let token = r.short_str()?;
            token_vectors.extend(r.f32s(dim)?);
            if vocab.insert(token.clone(), i).is_some() {
                return Err(r.corrupt(format!("duplicate token {token:?}")));
            }
        }
        if vocab.values().copied().ne(0..vocab_size) {
            return Err(r.corrupt("vocabulary not in sorted order"));
        }
        let bucket_len = buckets.checked_mul(dim).ok_or_else(|| r.corrupt("bucket table overflow"))?;
        let bucket_vectors = r.f32s(bucket_len)?;
        let seed = r.u64()?;
        r.finish()?;
        if token_vectors.iter().chain(&bucket_vectors).any(|v| !v.is_finite()) {
            return Err(r.corrupt("non-finite vector entry"));
        }
        Ok(Self {
            dim,
            min_n,
            max_n,
            buckets,
            vocab,
            token_vectors,
            bucket_vectors,
            seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binio::write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&binio::read_file(path)?)
    }
}

fn sigmoid(x: f32) -> f32 {
    if x > 8.0 {
        1.0
    } else if x < -8.0 {
        0.0
    } else {
        1.0 / (1.0 + (-x).exp())
    }
}

fn input_row<'a>(tokens: &'a [f32], buckets: &'a [f32], vocab: usize, dim: usize, r: usize) -> &'a [f32] {
    if r < vocab {
        &tokens[r * dim..(r + 1) * dim]
    } else {
        let b = r - vocab;
        &buckets[b * dim..(b + 1) * dim]
    }
}

fn input_row_mut<'a>(tokens: &'a mut [f32], buckets: &'a mut [f32], vocab: usize, dim: usize, r: usize) -> &'a mut [f32] {
    if r < vocab {
        &mut tokens[r * dim..(r + 1) * dim]
    } else {
        let b = r - vocab;
        &mut buckets[b * dim..(b + 1) * dim]
    }
}
