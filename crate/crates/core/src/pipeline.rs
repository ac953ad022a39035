//! End-to-end wiring of the stages, shared by the CLI and the FFI layer.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::catalog::{self, Catalog, CatalogFormat, Domain, Rating};
use crate::embeddings::{EncoderProvider, FallbackEncoder, FileEncoder, GenreConfig, GenreEmbeddingModel};
use crate::error::{Error, Result};
use crate::fusion::FusionParameters;
use crate::index::{build_index, FeatureIndex, IndexBuildConfig};
use crate::recommender::{Models, Recommender};
use crate::scoring::{TfidfModel, Weights};
use crate::trainer::{sample_pairs, train, PairConfig, TrainConfig, TrainingReport};

/// Every tunable stage setting. Missing fields in a config file take their
/// defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub genre: GenreConfig,
    pub pairs: PairConfig,
    pub train: TrainConfig,
    pub index: IndexBuildConfig,
    pub weights: Weights,
}

impl PipelineConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    /// Seeds every randomized stage from one value.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.genre.seed = seed;
        self.pairs.seed = seed;
        self.train.seed = seed;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    File,
    #[default]
    Fallback,
}

impl fmt::Display for ProviderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProviderKind::File => "file",
            ProviderKind::Fallback => "fallback",
        })
    }
}

impl FromStr for ProviderKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "file" => Ok(ProviderKind::File),
            "fallback" => Ok(ProviderKind::Fallback),
            other => Err(format!("unknown provider {other:?} (file, fallback)")),
        }
    }
}

pub fn make_encoder(kind: ProviderKind, embeddings: Option<&Path>) -> Result<Box<dyn EncoderProvider>> {
    match kind {
        ProviderKind::Fallback => Ok(Box::new(FallbackEncoder)),
        ProviderKind::File => {
            let path = embeddings
                .ok_or_else(|| Error::InvalidConfig("the file provider needs an embeddings path".into()))?;
            Ok(Box::new(FileEncoder::load(path)?))
        }
    }
}

/// Genre lists of every item, one training sentence each.
pub fn genre_corpus(catalog: &Catalog) -> Vec<Vec<String>> {
    catalog.items.iter().map(|i| i.genres.clone()).collect()
}

/// TF-IDF over every description in the catalog, both domains. Refitting
/// from the same cleaned catalog always yields the same model.
pub fn fit_tfidf(catalog: &Catalog) -> Result<TfidfModel> {
    TfidfModel::fit(&catalog.descriptions())
}

pub fn train_genres(catalog: &Catalog, config: &GenreConfig) -> Result<GenreEmbeddingModel> {
    GenreEmbeddingModel::train(&genre_corpus(catalog), config)
}

pub fn train_fusion(
    catalog: &Catalog,
    ratings: Option<&[Rating]>,
    encoder: &dyn EncoderProvider,
    genre: &GenreEmbeddingModel,
    config: &PipelineConfig,
) -> Result<(FusionParameters, TrainingReport)> {
    let source: Vec<_> = catalog.domain(Domain::Source).cloned().collect();
    let target: Vec<_> = catalog.domain(Domain::Target).cloned().collect();
    let pairs = sample_pairs(&source, &target, ratings, &config.pairs)?;
    train(&source, &target, encoder, genre, &pairs, &config.train)
}

pub fn index_catalog(
    catalog: &Catalog,
    encoder: &dyn EncoderProvider,
    genre: &GenreEmbeddingModel,
    params: &FusionParameters,
    tfidf: &TfidfModel,
    config: &IndexBuildConfig,
) -> Result<FeatureIndex> {
    let target: Vec<_> = catalog.domain(Domain::Target).cloned().collect();
    build_index(&target, encoder, genre, params, tfidf, config)
}

/// Everything a trained system consists of.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub genre: GenreEmbeddingModel,
    pub params: FusionParameters,
    pub training: TrainingReport,
    pub tfidf: TfidfModel,
    pub index: FeatureIndex,
}

/// Genre training, fusion training and indexing on an already cleaned
/// catalog.
pub fn run(
    catalog: &Catalog,
    ratings: Option<&[Rating]>,
    encoder: &dyn EncoderProvider,
    config: &PipelineConfig,
) -> Result<Artifacts> {
    let genre = train_genres(catalog, &config.genre)?;
    let (params, training) = train_fusion(catalog, ratings, encoder, &genre, config)?;
    let tfidf = fit_tfidf(catalog)?;
    let index = index_catalog(catalog, encoder, &genre, &params, &tfidf, &config.index)?;
    Ok(Artifacts {
        genre,
        params,
        training,
        tfidf,
        index,
    })
}

/// Loads a catalog in either format and cleans it. Cleaning is
/// idempotent, so an already cleaned file passes through unchanged.
pub fn load_clean_catalog(path: &Path) -> Result<Catalog> {
    let loaded = catalog::load_catalog(path, CatalogFormat::from_path(path))?;
    Ok(catalog::clean(&loaded.value))
}

/// Files a query-ready [`Engine`] is opened from.
#[derive(Debug, Clone, Copy)]
pub struct ArtifactPaths<'a> {
    pub catalog: &'a Path,
    pub genre_model: &'a Path,
    pub model: &'a Path,
    pub index: &'a Path,
}

/// Loaded artifacts ready to answer queries. TF-IDF is refit from the
/// catalog and checked against the fingerprint stored in the index.
pub struct Engine {
    pub catalog: Catalog,
    pub genre: GenreEmbeddingModel,
    pub params: FusionParameters,
    pub tfidf: TfidfModel,
    pub index: FeatureIndex,
    pub encoder: Box<dyn EncoderProvider>,
}

impl Engine {
    pub fn open(paths: &ArtifactPaths<'_>, encoder: Box<dyn EncoderProvider>) -> Result<Self> {
        let catalog = load_clean_catalog(paths.catalog)?;
        let index = FeatureIndex::load(paths.index)?;
        if index.provider_id != encoder.provider_id() {
            return Err(Error::ProviderMismatch {
                index: index.provider_id.clone(),
                active: encoder.provider_id().to_string(),
            });
        }
        let engine = Self {
            tfidf: fit_tfidf(&catalog)?,
            genre: GenreEmbeddingModel::load(paths.genre_model)?,
            params: FusionParameters::load(paths.model)?,
            catalog,
            index,
            encoder,
        };
        engine.recommender()?;
        Ok(engine)
    }

    pub fn models(&self) -> Models<'_> {
        Models {
            encoder: self.encoder.as_ref(),
            genre: &self.genre,
            params: &self.params,
            tfidf: &self.tfidf,
        }
    }

    pub fn recommender(&self) -> Result<Recommender<'_>> {
        Recommender::new(&self.catalog, &self.index, self.models())
    }
}
