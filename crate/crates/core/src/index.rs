//! Precomputed target-domain features and their on-disk format.

use std::collections::HashSet;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::{self, Reader, Writer};
use crate::catalog::Item;
use crate::embeddings::{EncoderProvider, GenreEmbeddingModel};
use crate::error::{Error, Result};
use crate::fusion::FusionParameters;
use crate::scoring::{SparseVector, TfidfModel};

const MAGIC: &[u8; 8] = b"LFRIDX1\0";
const VERSION: u8 = 1;

/// Fused, genre and TF-IDF rows for every target item, aligned with
/// `item_ids`. Stored values are at `f32` precision.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureIndex {
    pub item_ids: Vec<String>,
    pub text_dim: usize,
    pub genre_dim: usize,
    /// n × text_dim, row-major
    pub fused: Vec<f32>,
    /// n × genre_dim, row-major
    pub genre: Vec<f32>,
    pub tfidf_rows: Vec<SparseVector>,
    pub provider_id: String,
    pub model_fingerprint: u64,
    pub tfidf_fingerprint: u64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexBuildConfig {
    pub batch_size: usize,
    pub parallelism: usize,
}

impl Default for IndexBuildConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            parallelism: 1,
        }
    }
}

struct Chunk {
    fused: Vec<f32>,
    genre: Vec<f32>,
    tfidf: Vec<SparseVector>,
    missing: Vec<String>,
}

fn build_chunk(
    items: &[Item],
    encoder: &dyn EncoderProvider,
    genre_model: &GenreEmbeddingModel,
    params: &FusionParameters,
    tfidf: &TfidfModel,
) -> Result<Chunk> {
    let t = params.text_dim();
    let g = params.genre_dim();
    let mut text = Array2::<f64>::zeros((items.len(), t));
    let mut genre_rows = Array2::<f64>::zeros((items.len(), g));
    let mut genre_out = Vec::with_capacity(items.len() * g);
    let mut missing = Vec::new();
    for (i, item) in items.iter().enumerate() {
        match encoder.encode(item) {
            Ok(e) => {
                if e.vector.len() != t {
                    return Err(Error::ShapeMismatch {
                        context: "text embedding",
                        expected: t,
                        actual: e.vector.len(),
                    });
                }
                for (dst, &v) in text.row_mut(i).iter_mut().zip(&e.vector) {
                    *dst = f64::from(v);
                }
            }
            Err(Error::MissingEmbedding(id)) => missing.push(id),
            Err(e) => return Err(e),
        }
        let gv = genre_model.embed_genre_set(&item.genres)?;
        if gv.len() != g {
            return Err(Error::ShapeMismatch {
                context: "genre vector",
                expected: g,
                actual: gv.len(),
            });
        }
        for (dst, &v) in genre_rows.row_mut(i).iter_mut().zip(&gv) {
            *dst = f64::from(v);
        }
        genre_out.extend(gv);
    }
    let fused = if missing.is_empty() {
        params
            .forward_batch(text.view(), genre_rows.view())?
            .output
            .iter()
            .map(|&v| v as f32)
            .collect()
    } else {
        Vec::new()
    };
    let tfidf_rows = items
        .iter()
        .map(|i| tfidf.transform(&i.description).rounded_to_f32())
        .collect();
    Ok(Chunk {
        fused,
        genre: genre_out,
        tfidf: tfidf_rows,
        missing,
    })
}

/// Computes features for every target item in catalog order. Items are
/// processed in fixed batches that may run on separate threads; each batch
/// writes to its own rows, so the result does not depend on `parallelism`.
pub fn build_index(
    target: &[Item],
    encoder: &dyn EncoderProvider,
    genre_model: &GenreEmbeddingModel,
    params: &FusionParameters,
    tfidf: &TfidfModel,
    config: &IndexBuildConfig,
) -> Result<FeatureIndex> {
    if config.batch_size == 0 || config.parallelism == 0 {
        return Err(Error::InvalidConfig("batch size and parallelism must be >= 1".into()));
    }
    if encoder.dim() != params.text_dim() || genre_model.dim() != params.genre_dim() {
        return Err(Error::ShapeMismatch {
            context: "model dims",
            expected: params.text_dim(),
            actual: encoder.dim(),
        });
    }
    let mut seen = HashSet::with_capacity(target.len());
    for item in target {
        if !seen.insert(item.id.as_str()) {
            return Err(Error::InvalidConfig(format!("duplicate target id {:?}", item.id)));
        }
    }

    let batches: Vec<&[Item]> = target.chunks(config.batch_size).collect();
    let run = || -> Vec<Result<Chunk>> {
        batches
            .par_iter()
            .map(|b| build_chunk(b, encoder, genre_model, params, tfidf))
            .collect()
    };
    let chunks = if config.parallelism == 1 {
        batches
            .iter()
            .map(|b| build_chunk(b, encoder, genre_model, params, tfidf))
            .collect()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.parallelism)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?
            .install(run)
    };

    let n = target.len();
    let mut fused = Vec::with_capacity(n * params.text_dim());
    let mut genre = Vec::with_capacity(n * params.genre_dim());
    let mut tfidf_rows = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for chunk in chunks {
        let chunk = chunk?;
        missing.extend(chunk.missing);
        fused.extend(chunk.fused);
        genre.extend(chunk.genre);
        tfidf_rows.extend(chunk.tfidf);
    }
    if !missing.is_empty() {
        return Err(Error::MissingEmbeddings(missing));
    }
    Ok(FeatureIndex {
        item_ids: target.iter().map(|i| i.id.clone()).collect(),
        text_dim: params.text_dim(),
        genre_dim: params.genre_dim(),
        fused,
        genre,
        tfidf_rows,
        provider_id: encoder.provider_id().to_string(),
        model_fingerprint: params.fingerprint(),
        tfidf_fingerprint: tfidf.fingerprint(),
    })
}

impl FeatureIndex {
    pub fn len(&self) -> usize {
        self.item_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.item_ids.is_empty()
    }

    pub fn fused_row(&self, i: usize) -> &[f32] {
        &self.fused[i * self.text_dim..(i + 1) * self.text_dim]
    }

    pub fn genre_row(&self, i: usize) -> &[f32] {
        &self.genre[i * self.genre_dim..(i + 1) * self.genre_dim]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.item_ids.iter().position(|x| x == id)
    }

    pub fn verify_compatibility(&self, params: &FusionParameters, tfidf: &TfidfModel) -> bool {
        self.model_fingerprint == params.fingerprint() && self.tfidf_fingerprint == tfidf.fingerprint()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let nnz: usize = self.tfidf_rows.iter().map(SparseVector::nnz).sum();
        let mut w = Writer::with_capacity(
            64 + self.item_ids.iter().map(|s| s.len() + 2).sum::<usize>()
                + (self.fused.len() + self.genre.len()) * 4
                + self.len() * 4
                + nnz * 8,
        );
        w.bytes(MAGIC);
        w.u8(VERSION);
        w.u32(self.text_dim as u32);
        w.u32(self.genre_dim as u32);
        w.u64(self.len() as u64);
        w.u64(self.model_fingerprint);
        w.u64(self.tfidf_fingerprint);
        w.short_str(&self.provider_id)?;
        for id in &self.item_ids {
            w.short_str(id)?;
        }
        w.f32s(&self.fused);
        w.f32s(&self.genre);
        for row in &self.tfidf_rows {
            w.u32(row.nnz() as u32);
            for &(i, v) in row.entries() {
                w.u32(i);
                w.f32(v as f32);
            }
        }
        Ok(w.into_inner())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "index");
        r.expect_magic(MAGIC)?;
        let version = r.u8()?;
        if version != VERSION {
            return Err(r.corrupt(format!("unsupported version {version}, expected {VERSION}")));
        }
        let text_dim = r.u32()? as usize;
        let genre_dim = r.u32()? as usize;
        let n = r.count(2)?;
        let model_fingerprint = r.u64()?;
        let tfidf_fingerprint = r.u64()?;
        let provider_id = r.short_str()?;
        let mut item_ids = Vec::with_capacity(n);
        for _ in 0..n {
            item_ids.push(r.short_str()?);
        }
        let fused = r.f32s(n * text_dim)?;
        let genre = r.f32s(n * genre_dim)?;
        let mut tfidf_rows = Vec::with_capacity(n);
        for row in 0..n {
            let nnz = r.u32()? as usize;
            if nnz.saturating_mul(8) > r.remaining() {
                return Err(r.corrupt(format!("tf-idf row {row} truncated")));
            }
            let mut entries = Vec::with_capacity(nnz);
            for _ in 0..nnz {
                let i = r.u32()?;
                let v = r.f32()?;
                entries.push((i, f64::from(v)));
            }
            tfidf_rows.push(
                SparseVector::from_sorted(entries).map_err(|e| r.corrupt(format!("tf-idf row {row}: {e}")))?,
            );
        }
        r.finish()?;
        if fused.iter().chain(&genre).any(|v| !v.is_finite()) {
            return Err(Error::corrupt("index", "non-finite feature value"));
        }
        let unique: HashSet<&str> = item_ids.iter().map(String::as_str).collect();
        if unique.len() != item_ids.len() {
            return Err(Error::corrupt("index", "duplicate item id"));
        }
        Ok(Self {
            item_ids,
            text_dim,
            genre_dim,
            fused,
            genre,
            tfidf_rows,
            provider_id,
            model_fingerprint,
            tfidf_fingerprint,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binio::write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&binio::read_file(path)?)
    }
}
