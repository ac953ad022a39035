//! Cold-start ranking of target items from a few source-domain seeds.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::Serialize;

use crate::catalog::{Catalog, Domain, Item};
use crate::embeddings::{EncoderProvider, GenreEmbeddingModel};
use crate::error::{Error, Result};
use crate::fusion::FusionParameters;
use crate::index::FeatureIndex;
use crate::scoring::{combined_score, cosine, ScoreBreakdown, SparseVector, TfidfModel, Weights};

/// Seed counts above this still work but are logged.
pub const SOFT_MAX_SEEDS: usize = 3;

/// The trained artifacts a query needs besides the index.
#[derive(Clone, Copy)]
pub struct Models<'a> {
    pub encoder: &'a dyn EncoderProvider,
    pub genre: &'a GenreEmbeddingModel,
    pub params: &'a FusionParameters,
    pub tfidf: &'a TfidfModel,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedQuery {
    pub seed_ids: Vec<String>,
    pub k: usize,
}

impl SeedQuery {
    pub fn new<S: Into<String>>(seeds: impl IntoIterator<Item = S>, k: usize) -> Self {
        Self {
            seed_ids: seeds.into_iter().map(Into::into).collect(),
            k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Recommendation {
    pub target_id: String,
    pub rank: usize,
    pub breakdown: ScoreBreakdown,
}

/// Which vector fills the first similarity slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrimarySignal {
    /// Trained fused features.
    Fused,
    /// Raw encoder embeddings, bypassing the fusion network.
    RawText,
}

/// Aggregated representation of a seed set.
#[derive(Debug, Clone)]
pub struct SeedProfile {
    pub fused: Vec<f64>,
    pub raw_text: Vec<f64>,
    pub genre: Vec<f64>,
    pub tfidf: SparseVector,
}

/// Componentwise mean of equally sized vectors.
pub fn combine_seed_features(features: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = features.first().ok_or(Error::EmptyInput)?;
    let mut acc = vec![0.0; first.len()];
    for f in features {
        if f.len() != acc.len() {
            return Err(Error::ShapeMismatch {
                context: "seed feature",
                expected: acc.len(),
                actual: f.len(),
            });
        }
        for (a, v) in acc.iter_mut().zip(f) {
            *a += v;
        }
    }
    let n = features.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// Descending score, then ascending id.
fn rank_order(a: (&str, f64), b: (&str, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0))
}

pub struct Recommender<'a> {
    models: Models<'a>,
    index: &'a FeatureIndex,
    sources: HashMap<&'a str, &'a Item>,
    raw_text: Option<Vec<f32>>,
}

impl<'a> Recommender<'a> {
    /// Fails with [`Error::IncompatibleIndex`] unless the index was built
    /// from exactly these fusion parameters and TF-IDF model.
    pub fn new(source: &'a Catalog, index: &'a FeatureIndex, models: Models<'a>) -> Result<Self> {
        if !index.verify_compatibility(models.params, models.tfidf) {
            return Err(Error::IncompatibleIndex);
        }
        if index.text_dim != models.params.text_dim() || index.genre_dim != models.genre.dim() {
            return Err(Error::IncompatibleIndex);
        }
        Ok(Self {
            models,
            index,
            sources: source.by_id(Domain::Source),
            raw_text: None,
        })
    }

    /// Encodes every index row's raw text so [`PrimarySignal::RawText`]
    /// can be scored.
    pub fn with_raw_text(mut self, target: &Catalog) -> Result<Self> {
        let by_id = target.by_id(Domain::Target);
        let dim = self.models.encoder.dim();
        let mut raw = Vec::with_capacity(self.index.len() * dim);
        for id in &self.index.item_ids {
            let item = by_id
                .get(id.as_str())
                .ok_or_else(|| Error::InvalidConfig(format!("index item {id:?} missing from target catalog")))?;
            raw.extend(self.models.encoder.encode(item)?.vector);
        }
        self.raw_text = Some(raw);
        Ok(self)
    }

    pub fn index(&self) -> &FeatureIndex {
        self.index
    }

    pub fn source_item(&self, id: &str) -> Option<&'a Item> {
        self.sources.get(id).copied()
    }

    /// Mean fused feature, mean raw text embedding, mean genre vector and
    /// TF-IDF of the concatenated descriptions. Seeds are processed in
    /// sorted order so the profile does not depend on the order given.
    pub fn seed_profile<S: AsRef<str>>(&self, seed_ids: &[S]) -> Result<SeedProfile> {
        if seed_ids.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut ids: Vec<&str> = seed_ids.iter().map(AsRef::as_ref).collect();
        ids.sort_unstable();
        let mut fused = Vec::with_capacity(ids.len());
        let mut raw = Vec::with_capacity(ids.len());
        let mut genres = Vec::with_capacity(ids.len());
        let mut text = String::new();
        for id in ids {
            let item = self.source_item(id).ok_or_else(|| Error::UnknownSeedId(id.to_string()))?;
            let e: Vec<f64> = self
                .models
                .encoder
                .encode(item)?
                .vector
                .iter()
                .map(|&v| f64::from(v))
                .collect();
            let gv: Vec<f64> = self
                .models
                .genre
                .embed_genre_set(&item.genres)?
                .iter()
                .map(|&v| f64::from(v))
                .collect();
            fused.push(self.models.params.forward(&e, &gv)?);
            raw.push(e);
            genres.push(gv);
            if !text.is_empty() {
                text.push('\n');
            }
            text.push_str(&item.description);
        }
        Ok(SeedProfile {
            fused: combine_seed_features(&fused)?,
            raw_text: combine_seed_features(&raw)?,
            genre: combine_seed_features(&genres)?,
            tfidf: self.models.tfidf.transform(&text),
        })
    }

    /// Breakdown for every index row, in index order.
    pub fn score_all(&self, profile: &SeedProfile, signal: PrimarySignal, weights: Weights) -> Result<Vec<ScoreBreakdown>> {
        let idx = self.index;
        let raw = match signal {
            PrimarySignal::RawText => Some(self.raw_text.as_deref().ok_or_else(|| {
                Error::InvalidConfig("raw text signal requested but target embeddings were not prepared".into())
            })?),
            PrimarySignal::Fused => None,
        };
        (0..idx.len())
            .map(|i| {
                let first = match raw {
                    Some(raw) => {
                        let d = self.models.encoder.dim();
                        cosine(&profile.raw_text, &raw[i * d..(i + 1) * d])?
                    }
                    None => cosine(&profile.fused, idx.fused_row(i))?,
                };
                let genre = cosine(&profile.genre, idx.genre_row(i))?;
                let tfidf = profile.tfidf.cosine(&idx.tfidf_rows[i]);
                Ok(combined_score(first, genre, tfidf, weights))
            })
            .collect()
    }

    /// Top `k` rows by combined score, ties broken by ascending id.
    pub fn top_k(&self, scores: &[ScoreBreakdown], k: usize) -> Vec<Recommendation> {
        let ids = &self.index.item_ids;
        let mut order: Vec<usize> = (0..scores.len()).collect();
        let cmp = |&a: &usize, &b: &usize| {
            rank_order((ids[a].as_str(), scores[a].combined), (ids[b].as_str(), scores[b].combined))
        };
        let k = k.min(order.len());
        if k == 0 {
            return Vec::new();
        }
        if k < order.len() {
            order.select_nth_unstable_by(k - 1, cmp);
            order.truncate(k);
        }
        order.sort_unstable_by(cmp);
        order
            .into_iter()
            .enumerate()
            .map(|(r, i)| Recommendation {
                target_id: ids[i].clone(),
                rank: r + 1,
                breakdown: scores[i],
            })
            .collect()
    }

    pub fn recommend(&self, query: &SeedQuery, weights: Weights) -> Result<Vec<Recommendation>> {
        self.recommend_with(query, PrimarySignal::Fused, weights)
    }

    pub fn recommend_with(&self, query: &SeedQuery, signal: PrimarySignal, weights: Weights) -> Result<Vec<Recommendation>> {
        if query.k == 0 {
            return Err(Error::InvalidConfig("k must be >= 1".into()));
        }
        if query.seed_ids.len() > SOFT_MAX_SEEDS {
            log::warn!(
                "{} seeds given; recommendations are designed around 1-{SOFT_MAX_SEEDS}",
                query.seed_ids.len()
            );
        }
        if query.k > self.index.len() {
            log::warn!("k = {} exceeds index size {}; returning all items", query.k, self.index.len());
        }
        let profile = self.seed_profile(&query.seed_ids)?;
        let scores = self.score_all(&profile, signal, weights)?;
        Ok(self.top_k(&scores, query.k))
    }
}

/// One-shot convenience over [`Recommender`].
pub fn recommend(
    query: &SeedQuery,
    source: &Catalog,
    index: &FeatureIndex,
    models: Models<'_>,
    weights: Weights,
) -> Result<Vec<Recommendation>> {
    Recommender::new(source, index, models)?.recommend(query, weights)
}

pub fn explain(rec: &Recommendation) -> ScoreBreakdown {
    rec.breakdown
}
