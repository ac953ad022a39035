//! Command-line front end for the fusionrec pipeline.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 training
//! failure, 4 inference failure, 5 evaluation failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use fusionrec::binio::fnv1a64;
use fusionrec::catalog::{self, Catalog, CatalogFormat, Domain, Rating};
use fusionrec::embeddings::{EncoderProvider, GenreEmbeddingModel};
use fusionrec::evaluation::{self, EvalMode, EvalReport, THRESHOLDS};
use fusionrec::fusion::FusionParameters;
use fusionrec::pipeline::{self, ArtifactPaths, Engine, PipelineConfig, ProviderKind};
use fusionrec::recommender::{Recommendation, SeedQuery};
use fusionrec::scoring::Weights;
use fusionrec::synthetic::{self, SyntheticConfig};
use fusionrec::Error;

const EXIT_USAGE: u8 = 2;
const EXIT_TRAIN: u8 = 3;
const EXIT_INFERENCE: u8 = 4;
const EXIT_EVAL: u8 = 5;
const DEFAULT_SEED: u64 = 42;

#[derive(Parser)]
#[command(name = "fusionrec", version, about = "Cross-domain recommendation from fused text and genre embeddings")]
struct Cli {
    /// JSON file with stage settings; explicit flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every randomized stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Text embedding provider. Defaults to `file` when --embeddings is given.
    #[arg(long, global = true)]
    provider: Option<ProviderKind>,
    /// Embedding file for the `file` provider.
    #[arg(long, global = true)]
    embeddings: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Json)]
    format: OutputFormat,
    /// Repeat for more log output on stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Json,
    Table,
}

#[derive(Subcommand)]
enum Command {
    /// Load, validate and clean a catalog and optional ratings.
    Ingest {
        /// Catalog as JSONL or CSV (by extension).
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        ratings: Option<PathBuf>,
        /// Receives catalog.jsonl and, with --ratings, ratings.jsonl.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train subword genre embeddings on the catalog's genre lists.
    TrainGenres {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train the fusion network.
    Train {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        genre_model: PathBuf,
        /// Co-liked items become extra positive pairs.
        #[arg(long)]
        ratings: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the training report here.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        margin: Option<f64>,
    },
    /// Precompute target-domain features.
    Index {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        genre_model: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        parallelism: Option<usize>,
    },
    /// Rank target items for one to three source-domain seeds.
    Recommend {
        #[command(flatten)]
        artifacts: ArtifactArgs,
        /// Comma-separated source item ids.
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<String>,
        #[arg(short, long, default_value_t = 10)]
        k: usize,
        /// fusion,genre,tfidf weights summing to 1.
        #[arg(long)]
        weights: Option<Weights>,
    },
    /// MAE and RMSE at the top 20/50/80% thresholds.
    Evaluate {
        #[command(flatten)]
        artifacts: ArtifactArgs,
        #[arg(long)]
        ratings: PathBuf,
        #[arg(long, default_value = "fused")]
        mode: EvalMode,
        #[arg(long)]
        weights: Option<Weights>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the fused, text-only, genre-only and TF-IDF-only modes.
    Ablate {
        #[command(flatten)]
        artifacts: ArtifactArgs,
        #[arg(long)]
        ratings: PathBuf,
        #[arg(long)]
        weights: Option<Weights>,
        /// Receives one report_<mode>.json per mode.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Write a planted-cluster catalog and ratings for experiments.
    GenerateSynthetic {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 520)]
        source_items: usize,
        #[arg(long, default_value_t = 520)]
        target_items: usize,
        #[arg(long, default_value_t = 300)]
        users: usize,
    },
}

#[derive(Args)]
struct ArtifactArgs {
    #[arg(long)]
    catalog: PathBuf,
    #[arg(long)]
    genre_model: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    index: PathBuf,
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

/// Configuration mistakes are usage errors whatever the stage.
fn fail(code: u8) -> impl FnOnce(anyhow::Error) -> Failure {
    move |error| {
        let usage = matches!(
            error.downcast_ref::<Error>(),
            Some(Error::InvalidConfig(_) | Error::InvalidWeights(_))
        );
        Failure {
            code: if usage { EXIT_USAGE } else { code },
            error,
        }
    }
}

struct Session {
    config: PipelineConfig,
    seed: u64,
    provider: ProviderKind,
    embeddings: Option<PathBuf>,
    format: OutputFormat,
}

impl Session {
    fn from_cli(cli: &Cli) -> anyhow::Result<Self> {
        let mut config = match &cli.config {
            Some(p) => PipelineConfig::from_json_file(p)?,
            None => PipelineConfig::default().with_seed(DEFAULT_SEED),
        };
        let seed = match cli.seed {
            Some(s) => {
                config = config.with_seed(s);
                s
            }
            None => config.train.seed,
        };
        let provider = cli.provider.unwrap_or(if cli.embeddings.is_some() {
            ProviderKind::File
        } else {
            ProviderKind::Fallback
        });
        Ok(Self {
            config,
            seed,
            provider,
            embeddings: cli.embeddings.clone(),
            format: cli.format,
        })
    }

    fn encoder(&self) -> anyhow::Result<Box<dyn EncoderProvider>> {
        Ok(pipeline::make_encoder(self.provider, self.embeddings.as_deref())?)
    }

    fn emit<T: Serialize>(&self, value: &T, table: impl FnOnce() -> String) -> anyhow::Result<()> {
        match self.format {
            OutputFormat::Json => println!("{}", serde_json::to_string_pretty(value)?),
            OutputFormat::Table => print!("{}", table()),
        }
        Ok(())
    }
}

fn load_clean_catalog(path: &Path) -> anyhow::Result<Catalog> {
    Ok(pipeline::load_clean_catalog(path)?)
}

fn load_ratings(path: &Path) -> anyhow::Result<Vec<Rating>> {
    Ok(catalog::load_ratings(path)?.value)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

fn write_bytes(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn kv_table(rows: &[(&str, String)]) -> String {
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    rows.iter().fold(String::new(), |mut s, (k, v)| {
        let _ = writeln!(s, "{k:<width$}  {v}");
        s
    })
}

fn hex(v: u64) -> String {
    format!("{v:016x}")
}

fn ingest(ctx: &Session, catalog_path: &Path, ratings_path: Option<&Path>, out_dir: &Path) -> anyhow::Result<()> {
    let loaded = catalog::load_catalog(catalog_path, CatalogFormat::from_path(catalog_path))?;
    let (cleaned, stats) = catalog::clean_with_stats(&loaded.value);
    let catalog_out = out_dir.join("catalog.jsonl");
    write_bytes(&catalog_out, cleaned.to_jsonl().as_bytes())?;
    let mut summary = json!({
        "catalog": {
            "rejected_rows": loaded.rejected.len(),
            "clean": stats,
            "domain_counts": cleaned.domain_counts,
            "out": catalog_out,
        },
    });
    if let Some(rp) = ratings_path {
        let loaded = catalog::load_ratings(rp)?;
        let out = out_dir.join("ratings.jsonl");
        write_bytes(&out, catalog::ratings_to_jsonl(&loaded.value).as_bytes())?;
        summary["ratings"] = json!({
            "accepted": loaded.value.len(),
            "rejected_rows": loaded.rejected.len(),
            "out": out,
        });
    }
    ctx.emit(&summary, || {
        let mut rows = vec![
            ("items in", stats.items_in.to_string()),
            ("items out", stats.items_out.to_string()),
            ("dropped missing", stats.dropped_missing.to_string()),
            ("dropped duplicate", stats.dropped_duplicate.to_string()),
            ("rejected rows", loaded.rejected.len().to_string()),
        ];
        if let Some(r) = summary.get("ratings") {
            rows.push(("ratings accepted", r["accepted"].to_string()));
            rows.push(("ratings rejected", r["rejected_rows"].to_string()));
        }
        kv_table(&rows)
    })
}

fn train_genres(ctx: &Session, catalog_path: &Path, out: &Path, epochs: Option<usize>) -> anyhow::Result<()> {
    let mut config = ctx.config.genre.clone();
    if let Some(e) = epochs {
        config.epochs = e;
    }
    let catalog = load_clean_catalog(catalog_path)?;
    let model = pipeline::train_genres(&catalog, &config)?;
    let bytes = model.to_bytes()?;
    write_bytes(out, &bytes)?;
    let summary = json!({
        "vocab_size": model.vocab_size(),
        "dim": model.dim(),
        "buckets": model.buckets(),
        "seed": model.seed(),
        "fingerprint": hex(fnv1a64(&bytes)),
        "out": out,
    });
    ctx.emit(&summary, || {
        kv_table(&[
            ("vocab size", model.vocab_size().to_string()),
            ("dim", model.dim().to_string()),
            ("seed", model.seed().to_string()),
            ("fingerprint", hex(fnv1a64(&bytes))),
        ])
    })
}

#[allow(clippy::too_many_arguments)]
fn train(
    ctx: &Session,
    catalog_path: &Path,
    genre_path: &Path,
    ratings_path: Option<&Path>,
    out: &Path,
    report_path: Option<&Path>,
    overrides: (Option<usize>, Option<usize>, Option<f64>, Option<f64>),
) -> anyhow::Result<()> {
    let mut config = ctx.config.clone();
    let (epochs, batch_size, lr, margin) = overrides;
    if let Some(v) = epochs {
        config.train.epochs = v;
    }
    if let Some(v) = batch_size {
        config.train.batch_size = v;
    }
    if let Some(v) = lr {
        config.train.base_lr = v;
    }
    if let Some(v) = margin {
        config.train.margin = v;
    }
    config.train.validate()?;
    let catalog = load_clean_catalog(catalog_path)?;
    let ratings = ratings_path.map(load_ratings).transpose()?;
    let genre = GenreEmbeddingModel::load(genre_path)?;
    let encoder = ctx.encoder()?;
    let (params, report) = pipeline::train_fusion(&catalog, ratings.as_deref(), encoder.as_ref(), &genre, &config)?;
    params.save(out)?;
    if let Some(p) = report_path {
        write_json(p, &report)?;
    }
    ctx.emit(&json!({ "report": report, "provider": encoder.provider_id(), "out": out }), || {
        let mut rows = vec![
            ("seed", report.seed.to_string()),
            ("provider", encoder.provider_id().to_string()),
            ("positive pairs", report.positive_pairs.to_string()),
            ("negative pairs", report.negative_pairs.to_string()),
            ("checkpoint", report.checkpoint_fingerprint.clone()),
        ];
        let epochs: Vec<String> = report
            .epochs
            .iter()
            .map(|e| format!("epoch {} lr {:.3e} loss {:.6}", e.epoch, e.lr, e.mean_loss))
            .collect();
        for e in &epochs {
            rows.push(("", e.clone()));
        }
        kv_table(&rows)
    })
}

fn index(
    ctx: &Session,
    catalog_path: &Path,
    genre_path: &Path,
    model_path: &Path,
    out: &Path,
    parallelism: Option<usize>,
) -> anyhow::Result<()> {
    let mut config = ctx.config.index;
    if let Some(p) = parallelism {
        config.parallelism = p;
    }
    let catalog = load_clean_catalog(catalog_path)?;
    let genre = GenreEmbeddingModel::load(genre_path)?;
    let params = FusionParameters::load(model_path)?;
    let encoder = ctx.encoder()?;
    let tfidf = pipeline::fit_tfidf(&catalog)?;
    let index = pipeline::index_catalog(&catalog, encoder.as_ref(), &genre, &params, &tfidf, &config)?;
    let bytes = index.to_bytes()?;
    write_bytes(out, &bytes)?;
    let summary = json!({
        "items": index.len(),
        "provider": index.provider_id,
        "model_fingerprint": hex(index.model_fingerprint),
        "tfidf_fingerprint": hex(index.tfidf_fingerprint),
        "fingerprint": hex(fnv1a64(&bytes)),
        "out": out,
    });
    ctx.emit(&summary, || {
        kv_table(&[
            ("items", index.len().to_string()),
            ("provider", index.provider_id.clone()),
            ("model", hex(index.model_fingerprint)),
            ("tfidf", hex(index.tfidf_fingerprint)),
            ("fingerprint", hex(fnv1a64(&bytes))),
        ])
    })
}

fn open_engine(ctx: &Session, a: &ArtifactArgs) -> anyhow::Result<Engine> {
    let paths = ArtifactPaths {
        catalog: &a.catalog,
        genre_model: &a.genre_model,
        model: &a.model,
        index: &a.index,
    };
    Ok(Engine::open(&paths, ctx.encoder()?)?)
}

fn recommend(ctx: &Session, a: &ArtifactArgs, seeds: &[String], k: usize, weights: Option<Weights>) -> anyhow::Result<()> {
    let weights = weights.unwrap_or(ctx.config.weights);
    let loaded = open_engine(ctx, a)?;
    let recs = loaded.recommender()?.recommend(&SeedQuery::new(seeds.iter().cloned(), k), weights)?;
    let targets = loaded.catalog.by_id(Domain::Target);
    let title = |r: &Recommendation| targets.get(r.target_id.as_str()).map(|i| i.title.clone()).unwrap_or_default();
    let rows: Vec<_> = recs
        .iter()
        .map(|r| {
            json!({
                "rank": r.rank,
                "target_id": r.target_id,
                "title": title(r),
                "score": r.breakdown,
            })
        })
        .collect();
    let summary = json!({
        "seeds": seeds,
        "k": k,
        "weights": weights.as_array(),
        "model_fingerprint": hex(loaded.index.model_fingerprint),
        "recommendations": rows,
    });
    ctx.emit(&summary, || {
        let mut s = format!(
            "{:>4}  {:<16} {:>8} {:>8} {:>8} {:>8}  title\n",
            "rank", "id", "score", "fusion", "genre", "tfidf"
        );
        for r in &recs {
            let b = r.breakdown;
            let _ = writeln!(
                s,
                "{:>4}  {:<16} {:>8.4} {:>8.4} {:>8.4} {:>8.4}  {}",
                r.rank,
                r.target_id,
                b.combined,
                b.fusion_sim,
                b.genre_sim,
                b.tfidf_sim,
                title(r)
            );
        }
        s
    })
}

fn reports_table(reports: &[EvalReport]) -> String {
    let mut s = format!("{:<12} {:>4} {:>8} {:>8} {:>6}\n", "mode", "top%", "mae", "rmse", "pairs");
    for r in reports {
        for p in THRESHOLDS {
            let _ = writeln!(
                s,
                "{:<12} {:>4} {:>8.4} {:>8.4} {:>6}",
                r.mode.as_str(),
                p,
                r.mae_at(p),
                r.rmse_at(p),
                r.pairs[&p.to_string()]
            );
        }
    }
    s
}

fn run_modes(
    ctx: &Session,
    a: &ArtifactArgs,
    ratings_path: &Path,
    modes: &[EvalMode],
    weights: Option<Weights>,
) -> anyhow::Result<Vec<EvalReport>> {
    let weights = weights.unwrap_or(ctx.config.weights);
    let loaded = open_engine(ctx, a)?;
    let users = evaluation::build_eval_users(&load_ratings(ratings_path)?)?;
    let mut rec = loaded.recommender()?;
    if modes.contains(&EvalMode::TextOnly) {
        rec = rec.with_raw_text(&loaded.catalog)?;
    }
    modes
        .iter()
        .map(|&m| Ok(evaluation::run_ablation(m, &users, &rec, weights)?))
        .collect()
}

fn evaluate(
    ctx: &Session,
    a: &ArtifactArgs,
    ratings: &Path,
    mode: EvalMode,
    weights: Option<Weights>,
    out: Option<&Path>,
) -> anyhow::Result<()> {
    let reports = run_modes(ctx, a, ratings, &[mode], weights)?;
    if let Some(p) = out {
        write_json(p, &reports[0])?;
    }
    ctx.emit(&reports[0], || reports_table(&reports))
}

fn ablate(ctx: &Session, a: &ArtifactArgs, ratings: &Path, weights: Option<Weights>, out_dir: &Path) -> anyhow::Result<()> {
    let reports = run_modes(ctx, a, ratings, &EvalMode::ALL, weights)?;
    for r in &reports {
        write_json(&out_dir.join(format!("report_{}.json", r.mode)), r)?;
    }
    ctx.emit(&reports, || reports_table(&reports))
}

fn generate_synthetic(ctx: &Session, out_dir: &Path, source: usize, target: usize, users: usize) -> anyhow::Result<()> {
    let cfg = SyntheticConfig {
        source_items: source,
        target_items: target,
        users,
        seed: ctx.seed,
        ..Default::default()
    };
    let data = synthetic::generate(&cfg)?;
    let catalog_out = out_dir.join("catalog.jsonl");
    let ratings_out = out_dir.join("ratings.jsonl");
    write_bytes(&catalog_out, data.catalog.to_jsonl().as_bytes())?;
    write_bytes(&ratings_out, catalog::ratings_to_jsonl(&data.ratings).as_bytes())?;
    let summary = json!({
        "seed": ctx.seed,
        "items": data.catalog.len(),
        "ratings": data.ratings.len(),
        "catalog": catalog_out,
        "ratings_out": ratings_out,
    });
    ctx.emit(&summary, || {
        kv_table(&[
            ("seed", ctx.seed.to_string()),
            ("items", data.catalog.len().to_string()),
            ("ratings", data.ratings.len().to_string()),
        ])
    })
}

fn run(cli: Cli) -> Result<(), Failure> {
    let ctx = Session::from_cli(&cli).map_err(|error| Failure {
        code: EXIT_USAGE,
        error,
    })?;
    log::info!("seed {} provider {}", ctx.seed, ctx.provider);
    match cli.command {
        Command::Ingest {
            catalog,
            ratings,
            out_dir,
        } => ingest(&ctx, &catalog, ratings.as_deref(), &out_dir).map_err(fail(EXIT_TRAIN)),
        Command::TrainGenres { catalog, out, epochs } => {
            train_genres(&ctx, &catalog, &out, epochs).map_err(fail(EXIT_TRAIN))
        }
        Command::Train {
            catalog,
            genre_model,
            ratings,
            out,
            report,
            epochs,
            batch_size,
            lr,
            margin,
        } => train(
            &ctx,
            &catalog,
            &genre_model,
            ratings.as_deref(),
            &out,
            report.as_deref(),
            (epochs, batch_size, lr, margin),
        )
        .map_err(fail(EXIT_TRAIN)),
        Command::Index {
            catalog,
            genre_model,
            model,
            out,
            parallelism,
        } => index(&ctx, &catalog, &genre_model, &model, &out, parallelism).map_err(fail(EXIT_INFERENCE)),
        Command::Recommend {
            artifacts,
            seeds,
            k,
            weights,
        } => recommend(&ctx, &artifacts, &seeds, k, weights).map_err(fail(EXIT_INFERENCE)),
        Command::Evaluate {
            artifacts,
            ratings,
            mode,
            weights,
            out,
        } => evaluate(&ctx, &artifacts, &ratings, mode, weights, out.as_deref()).map_err(fail(EXIT_EVAL)),
        Command::Ablate {
            artifacts,
            ratings,
            weights,
            out_dir,
        } => ablate(&ctx, &artifacts, &ratings, weights, &out_dir).map_err(fail(EXIT_EVAL)),
        Command::GenerateSynthetic {
            out_dir,
            source_items,
            target_items,
            users,
        } => generate_synthetic(&ctx, &out_dir, source_items, target_items, users).map_err(fail(EXIT_TRAIN)),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
