//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use fusionrec::catalog::{clean, Domain, Item};
use fusionrec::embeddings::{EncoderProvider, FallbackEncoder, GenreConfig, GenreEmbeddingModel};
use fusionrec::evaluation::{build_eval_users, evaluate_detailed, EvalMode, THRESHOLDS};
use fusionrec::fusion::{FusionGradients, FusionParameters};
use fusionrec::index::{build_index, FeatureIndex, IndexBuildConfig};
use fusionrec::pipeline::{self, PipelineConfig};
use fusionrec::recommender::{Models, Recommender, SeedQuery};
use fusionrec::scoring::{combined_score, cosine, TfidfModel, Weights};
use fusionrec::synthetic::{generate, SyntheticConfig};
use fusionrec::trainer::{batch_loss_and_grad, clip_gradients, cosine_embedding_loss, TrainConfig};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn within(start: Instant, limit: Duration, what: &str) -> Result<(), String> {
    let took = start.elapsed();
    if took > limit {
        return Err(format!("{what} took {took:.1?}, limit {limit:?}"));
    }
    Ok(())
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || normal(rng))
}

// ---------------------------------------------------------------- gradients

struct GradInstance {
    params: FusionParameters,
    src_text: Array2<f64>,
    src_genre: Array2<f64>,
    tgt_text: Array2<f64>,
    tgt_genre: Array2<f64>,
    labels: Vec<i8>,
}

const MARGIN: f64 = 0.5;
const KINK_CLEARANCE: f64 = 1e-3;

impl GradInstance {
    fn loss(&self, p: &FusionParameters) -> f64 {
        batch_loss_and_grad(
            p,
            self.src_text.view(),
            self.src_genre.view(),
            self.tgt_text.view(),
            self.tgt_genre.view(),
            &self.labels,
            MARGIN,
        )
        .unwrap()
        .0
    }

    /// True when no ReLU pre-activation and no negative-pair similarity is
    /// close enough to its kink for a finite difference to straddle it.
    fn is_smooth(&self) -> bool {
        let src = self.params.forward_batch(self.src_text.view(), self.src_genre.view()).unwrap();
        let tgt = self.params.forward_batch(self.tgt_text.view(), self.tgt_genre.view()).unwrap();
        if src.pre.iter().chain(tgt.pre.iter()).any(|z| z.abs() < KINK_CLEARANCE) {
            return false;
        }
        self.labels.iter().enumerate().all(|(i, &y)| {
            let a = src.output.row(i).to_vec();
            let b = tgt.output.row(i).to_vec();
            let norms_ok = a.iter().any(|&v| v > 0.0) && b.iter().any(|&v| v > 0.0);
            norms_ok && (y > 0 || (cosine(&a, &b).unwrap() - MARGIN).abs() > KINK_CLEARANCE)
        })
    }
}

fn grad_instance(seed: u64) -> GradInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let mut params = FusionParameters::init_with_dims(16, 4, rng.gen());
        params.b_g.mapv_inplace(|_| 0.1 * normal(&mut rng));
        params.b_f.mapv_inplace(|_| 0.1 * normal(&mut rng));
        let n = 6;
        let inst = GradInstance {
            params,
            src_text: random_matrix(&mut rng, n, 16),
            src_genre: random_matrix(&mut rng, n, 4),
            tgt_text: random_matrix(&mut rng, n, 16),
            tgt_genre: random_matrix(&mut rng, n, 4),
            labels: (0..n).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect(),
        };
        if inst.is_smooth() {
            return inst;
        }
    }
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let h = 1e-4;
    let seeds = 12;
    let mut worst: f64 = 0.0;
    for seed in 0..seeds {
        let inst = grad_instance(seed);
        let (_, analytic) = batch_loss_and_grad(
            &inst.params,
            inst.src_text.view(),
            inst.src_genre.view(),
            inst.tgt_text.view(),
            inst.tgt_genre.view(),
            &inst.labels,
            MARGIN,
        )
        .map_err(|e| e.to_string())?;
        let mut numeric = FusionGradients::zeros_like(&inst.params);
        for b in 0..4 {
            let len = inst.params.blocks()[b].len();
            for j in 0..len {
                let mut plus = inst.params.clone();
                plus.blocks_mut()[b][j] += h;
                let mut minus = inst.params.clone();
                minus.blocks_mut()[b][j] -= h;
                numeric.blocks_mut()[b][j] = (inst.loss(&plus) - inst.loss(&minus)) / (2.0 * h);
            }
        }
        let a: Vec<f64> = analytic.blocks().iter().flat_map(|b| b.iter().copied()).collect();
        let n: Vec<f64> = numeric.blocks().iter().flat_map(|b| b.iter().copied()).collect();
        let diff = a.iter().zip(&n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale = analytic.global_norm() + numeric.global_norm();
        ensure!(scale > 1e-8, "seed {seed}: vanishing gradient");
        let rel = diff / scale;
        worst = worst.max(rel);
        ensure!(rel <= 1e-3, "seed {seed}: relative error {rel:e}");
    }
    within(start, Duration::from_secs(10), "gradient check")?;
    Ok(format!(
        "{seeds} instances, {} params each, worst relative error {worst:.2e}, {:.1?}",
        grad_instance(0).params.param_count(),
        start.elapsed()
    ))
}

// ------------------------------------------------------------------- loss

fn loss_identities() -> Outcome {
    let a = [0.3, -1.2, 2.0, 0.5];
    let l = cosine_embedding_loss(&a, &a, 1, 0.5).map_err(|e| e.to_string())?;
    ensure!(l.abs() <= 1e-9, "identical positive pair gave {l}");

    let x = [1.0, 0.0];
    for sim in [-1.0, -0.3, 0.0, 0.25, 0.5] {
        let y = [sim, (1.0f64 - sim * sim).sqrt()];
        let l = cosine_embedding_loss(&x, &y, -1, 0.5).map_err(|e| e.to_string())?;
        ensure!(l.abs() <= 1e-9, "negative pair with sim {sim} gave {l}");
    }
    let l = cosine_embedding_loss(&x, &[0.8, 0.6], -1, 0.5).map_err(|e| e.to_string())?;
    ensure!((l - 0.3).abs() <= 1e-9, "sim 0.8 margin 0.5 gave {l}");
    Ok("positive identity, sub-margin negatives, hinge at sim 0.8".into())
}

// -------------------------------------------------------------- scheduler

fn scheduler() -> Outcome {
    let s = TrainConfig::default().schedule();
    ensure!(s.t_0 == 10 && s.t_mult == 2 && s.eta_min == 0.0, "unexpected defaults {s:?}");
    for t_i in [10.0, 20.0, 40.0] {
        ensure!(s.lr(0.0, t_i) == s.base_lr, "lr(0) != base_lr for T_i {t_i}");
        ensure!(s.lr(t_i, t_i).abs() <= 1e-12, "lr(T_i) = {} for T_i {t_i}", s.lr(t_i, t_i));
    }
    let restarts = s.restart_epochs(3);
    ensure!(restarts == vec![10, 30, 70], "restarts at {restarts:?}");
    for (&r, next) in restarts.iter().zip([20.0, 40.0, 80.0]) {
        let (t_cur, t_i) = s.period_at(r as f64);
        ensure!(t_cur == 0.0 && t_i == next, "period at {r} is ({t_cur}, {t_i})");
        ensure!(s.lr_at(r as f64) == s.base_lr, "no restart at epoch {r}");
        ensure!(s.lr_at(r as f64 - 1e-7) < 1e-12 * s.base_lr.max(1.0) + 1e-15, "lr before {r} not near 0");
    }
    ensure!(s.lr_at(5.0) < s.base_lr && s.lr_at(5.0) > 0.0, "mid-period lr out of range");
    Ok("lr(0)=base, lr(T_i)=0, restarts at 10/30/70".into())
}

// --------------------------------------------------------------- clipping

fn clipping() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let template = FusionParameters::init_with_dims(16, 4, 0);
    let mut clipped_count = 0;
    for set in 0..100 {
        let mut g = FusionGradients::zeros_like(&template);
        let scale = 10f64.powf(rng.gen_range(-3.0..3.0));
        for b in g.blocks_mut() {
            for v in b.iter_mut() {
                *v = scale * normal(&mut rng);
            }
        }
        let original = g.clone();
        let pre = clip_gradients(&mut g, 1.0).map_err(|e| e.to_string())?;
        ensure!((pre - original.global_norm()).abs() <= 1e-9 * pre.max(1.0), "set {set}: wrong pre-clip norm");
        let post = g.global_norm();
        ensure!(post <= 1.0 + 1e-9, "set {set}: post-clip norm {post}");
        let a: Vec<f64> = original.blocks().iter().flat_map(|b| b.iter().copied()).collect();
        let c: Vec<f64> = g.blocks().iter().flat_map(|b| b.iter().copied()).collect();
        let cos = cosine(&a, &c).map_err(|e| e.to_string())?;
        ensure!(cos >= 1.0 - 1e-12, "set {set}: direction changed, cosine {cos}");
        if pre <= 1.0 {
            ensure!(g == original, "set {set}: gradient under the limit was modified");
        } else {
            clipped_count += 1;
            ensure!((post - 1.0).abs() <= 1e-9, "set {set}: clipped norm {post}");
        }
    }
    Ok(format!("100 sets, {clipped_count} clipped, norms <= 1 and directions kept"))
}

// -------------------------------------------------------------- retrieval

fn retrieval_oracle() -> Outcome {
    let start = Instant::now();
    let data = generate(&SyntheticConfig {
        source_items: 64,
        target_items: 1000,
        users: 0,
        seed: 11,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let catalog = data.catalog;
    let encoder = FallbackEncoder;
    let genre = GenreEmbeddingModel::train(
        &pipeline::genre_corpus(&catalog),
        &GenreConfig {
            epochs: 2,
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let params = FusionParameters::init(5);
    let tfidf = pipeline::fit_tfidf(&catalog).map_err(|e| e.to_string())?;
    let targets: Vec<Item> = catalog.domain(Domain::Target).cloned().collect();
    let index = build_index(&targets, &encoder, &genre, &params, &tfidf, &IndexBuildConfig::default())
        .map_err(|e| e.to_string())?;
    ensure!(index.len() == 1000, "index has {} rows", index.len());
    let models = Models {
        encoder: &encoder,
        genre: &genre,
        params: &params,
        tfidf: &tfidf,
    };
    let rec = Recommender::new(&catalog, &index, models).map_err(|e| e.to_string())?;
    let sources: Vec<&Item> = catalog.domain(Domain::Source).collect();

    let mut by_id: Vec<usize> = (0..index.len()).collect();
    by_id.sort_by(|&a, &b| index.item_ids[a].cmp(&index.item_ids[b]));

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut ties_seen = 0;
    for q in 0..50 {
        let n_seeds = rng.gen_range(1..=3);
        let seeds: Vec<&Item> = sources.choose_multiple(&mut rng, n_seeds).copied().collect();
        let k = if q % 10 == 0 { 1000 } else { rng.gen_range(1..=50) };
        let weights = match q % 5 {
            0 => Weights::EQUAL,
            1 => Weights::GENRE_ONLY,
            _ => {
                let w: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
                let s: f64 = w.iter().sum();
                Weights::new(w[0] / s, w[1] / s, w[2] / s).map_err(|e| e.to_string())?
            }
        };

        // Seed profile from the primitives, seeds in sorted order.
        let mut sorted = seeds.clone();
        sorted.sort_by(|a, b| a.id.cmp(&b.id));
        let n = sorted.len() as f64;
        let mut fused = vec![0.0; params.text_dim()];
        let mut gmean = vec![0.0; genre.dim()];
        let mut text = Vec::new();
        for item in &sorted {
            let e: Vec<f64> = encoder.encode(item).unwrap().vector.iter().map(|&v| v as f64).collect();
            let g: Vec<f64> = genre.embed_genre_set(&item.genres).unwrap().iter().map(|&v| v as f64).collect();
            for (a, v) in fused.iter_mut().zip(params.forward(&e, &g).unwrap()) {
                *a += v;
            }
            for (a, v) in gmean.iter_mut().zip(g) {
                *a += v;
            }
            text.push(item.description.as_str());
        }
        fused.iter_mut().for_each(|v| *v /= n);
        gmean.iter_mut().for_each(|v| *v /= n);
        let tf = tfidf.transform(&text.join("\n"));

        let scores: Vec<_> = (0..index.len())
            .map(|i| {
                combined_score(
                    cosine(&fused, index.fused_row(i)).unwrap(),
                    cosine(&gmean, index.genre_row(i)).unwrap(),
                    tf.cosine(&index.tfidf_rows[i]),
                    weights,
                )
            })
            .collect();
        let mut order = by_id.clone();
        order.sort_by(|&a, &b| scores[b].combined.total_cmp(&scores[a].combined));
        let distinct: BTreeSet<u64> = scores.iter().map(|s| s.combined.to_bits()).collect();
        ties_seen += index.len() - distinct.len();

        let ids: Vec<String> = seeds.iter().map(|i| i.id.clone()).collect();
        let got = rec.recommend(&SeedQuery::new(ids, k), weights).map_err(|e| e.to_string())?;
        ensure!(got.len() == k.min(index.len()), "query {q}: {} results for k {k}", got.len());
        for (r, (g, &i)) in got.iter().zip(&order).enumerate() {
            ensure!(
                g.target_id == index.item_ids[i] && g.breakdown == scores[i] && g.rank == r + 1,
                "query {q}: rank {} is {} ({}) but oracle has {} ({})",
                r + 1,
                g.target_id,
                g.breakdown.combined,
                index.item_ids[i],
                scores[i].combined
            );
        }
    }
    within(start, Duration::from_secs(30), "retrieval oracle")?;
    Ok(format!(
        "50 queries over 1000 items exact, {ties_seen} tied scores resolved by id, {:.1?}",
        start.elapsed()
    ))
}

// ----------------------------------------------------------------- tf-idf

fn dense_tfidf(corpus: &[String]) -> (Vec<String>, Vec<f64>, Vec<Vec<f64>>) {
    let tok = |d: &str| -> Vec<String> {
        d.split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(|t| t.to_lowercase())
            .collect()
    };
    let docs: Vec<Vec<String>> = corpus.iter().map(|d| tok(d)).collect();
    let vocab: Vec<String> = docs.iter().flatten().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let n = docs.len() as f64;
    let idf: Vec<f64> = vocab
        .iter()
        .map(|t| {
            let df = docs.iter().filter(|d| d.contains(t)).count() as f64;
            ((1.0 + n) / (1.0 + df)).ln() + 1.0
        })
        .collect();
    let rows = docs
        .iter()
        .map(|d| {
            let mut row: Vec<f64> = vocab
                .iter()
                .zip(&idf)
                .map(|(t, w)| d.iter().filter(|x| *x == t).count() as f64 * w)
                .collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
            row
        })
        .collect();
    (vocab, idf, rows)
}

fn tfidf_oracle() -> Outcome {
    let words: Vec<String> = (0..60).map(|i| format!("w{i}")).collect();
    let seps = [" ", ", ", ". ", " - ", "\n"];
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let corpus: Vec<String> = (0..100)
            .map(|_| {
                let len = rng.gen_range(1..30);
                let mut s = String::new();
                for j in 0..len {
                    if j > 0 {
                        s.push_str(seps.choose(&mut rng).unwrap());
                    }
                    let w = &words[(rng.gen_range(0.0f64..1.0).powi(2) * words.len() as f64) as usize];
                    if rng.gen_bool(0.2) {
                        s.push_str(&w.to_uppercase());
                    } else {
                        s.push_str(w);
                    }
                }
                s
            })
            .collect();
        let model = TfidfModel::fit(&corpus).map_err(|e| e.to_string())?;
        let (vocab, idf, rows) = dense_tfidf(&corpus);
        ensure!(model.vocab_size() == vocab.len(), "seed {seed}: vocabulary size differs");
        for (t, w) in vocab.iter().zip(&idf) {
            let got = model.idf(t).ok_or_else(|| format!("seed {seed}: term {t} missing"))?;
            worst = worst.max((got - w).abs());
        }
        for (d, row) in corpus.iter().zip(&rows) {
            let mut dense = vec![0.0; vocab.len()];
            for &(i, v) in model.transform(d).entries() {
                dense[i as usize] = v;
            }
            for (a, b) in dense.iter().zip(row) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    ensure!(worst <= 1e-9, "max elementwise difference {worst:e}");

    let model = TfidfModel::fit(&["a b", "a c"]).map_err(|e| e.to_string())?;
    let idf_a = model.idf("a").unwrap();
    let idf_b = model.idf("b").unwrap();
    ensure!((idf_a - 1.0).abs() <= 1e-12, "idf(a) = {idf_a}");
    ensure!((idf_b - 1.40546).abs() <= 1e-5, "idf(b) = {idf_b}");
    let v = model.transform("a b");
    let e = v.entries();
    ensure!(e.len() == 2, "doc vector has {} entries", e.len());
    ensure!(
        (e[0].1 - 0.57974).abs() <= 1e-5 && (e[1].1 - 0.81480).abs() <= 1e-5,
        "normalized doc = ({}, {})",
        e[0].1,
        e[1].1
    );
    Ok(format!(
        "5 corpora x 100 docs, max deviation {worst:.1e}; idf(b) = {idf_b:.5}, doc = ({:.5}, {:.5})",
        e[0].1, e[1].1
    ))
}

// ------------------------------------------------------------ determinism

fn cli(dir: &Path, args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_fusionrec"))
        .current_dir(dir)
        .args(["--seed", "7"])
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

/// Runs every stage in `dir` with relative paths and returns the produced
/// artifacts by name.
fn pipeline_run(dir: &Path) -> Result<BTreeMap<&'static str, Vec<u8>>, String> {
    cli(dir, &["generate-synthetic", "--out-dir", "raw"])?;
    cli(dir, &["ingest", "--catalog", "raw/catalog.jsonl", "--ratings", "raw/ratings.jsonl", "--out-dir", "data"])?;
    cli(dir, &["train-genres", "--catalog", "data/catalog.jsonl", "--out", "genre.bin"])?;
    cli(
        dir,
        &[
            "train", "--catalog", "data/catalog.jsonl", "--genre-model", "genre.bin", "--ratings", "data/ratings.jsonl",
            "--out", "model.bin", "--report", "train_report.json",
        ],
    )?;
    cli(
        dir,
        &["index", "--catalog", "data/catalog.jsonl", "--genre-model", "genre.bin", "--model", "model.bin", "--out", "index.bin"],
    )?;
    let artifacts = ["--catalog", "data/catalog.jsonl", "--genre-model", "genre.bin", "--model", "model.bin", "--index", "index.bin"];
    let mut rec_args = vec!["recommend", "--seeds", "s00000,s00009,s00018", "-k", "20"];
    rec_args.extend(artifacts);
    let recommend = cli(dir, &rec_args)?;
    let mut eval_args = vec!["evaluate", "--ratings", "data/ratings.jsonl", "--out", "eval.json"];
    eval_args.extend(artifacts);
    cli(dir, &eval_args)?;

    let mut out = BTreeMap::new();
    for name in ["data/catalog.jsonl", "genre.bin", "model.bin", "train_report.json", "index.bin", "eval.json"] {
        out.insert(name, std::fs::read(dir.join(name)).map_err(|e| format!("{name}: {e}"))?);
    }
    out.insert("recommend stdout", recommend);
    Ok(out)
}

fn determinism() -> Outcome {
    let start = Instant::now();
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = pipeline_run(a.path())?;
    let second = pipeline_run(b.path())?;
    for (name, bytes) in &first {
        ensure!(second[name] == *bytes, "{name} differs between runs");
    }
    within(start, Duration::from_secs(300), "two pipeline runs")?;
    let model_fp = fusionrec::binio::fnv1a64(&first["model.bin"]);
    let index_fp = fusionrec::binio::fnv1a64(&first["index.bin"]);
    Ok(format!(
        "{} artifacts identical (model {model_fp:016x}, index {index_fp:016x}), {:.1?}",
        first.len(),
        start.elapsed()
    ))
}

// --------------------------------------------------------------- ablation

fn planted_ablation() -> Outcome {
    let start = Instant::now();
    let cfg = SyntheticConfig::default();
    let data = generate(&cfg).map_err(|e| e.to_string())?;
    let catalog = clean(&data.catalog);
    let src = catalog.domain(Domain::Source).count();
    let tgt = catalog.domain(Domain::Target).count();
    ensure!(src >= 500 && tgt >= 500, "catalog has {src} source and {tgt} target items");
    let encoder = FallbackEncoder;
    let config = PipelineConfig::default().with_seed(7);
    let art = pipeline::run(&catalog, Some(&data.ratings), &encoder, &config).map_err(|e| e.to_string())?;
    let models = Models {
        encoder: &encoder,
        genre: &art.genre,
        params: &art.params,
        tfidf: &art.tfidf,
    };
    let rec = Recommender::new(&catalog, &art.index, models)
        .and_then(|r| r.with_raw_text(&catalog))
        .map_err(|e| e.to_string())?;
    let users = build_eval_users(&data.ratings).map_err(|e| e.to_string())?;
    let mut at50 = BTreeMap::new();
    for mode in EvalMode::ALL {
        let (r, _) = evaluate_detailed(&users, &rec, mode, config.weights).map_err(|e| e.to_string())?;
        at50.insert(mode, (r.mae_at(50), r.rmse_at(50)));
    }
    let (fm, fr) = at50[&EvalMode::Fused];
    for mode in [EvalMode::TextOnly, EvalMode::GenreOnly, EvalMode::TfidfOnly] {
        let (m, r) = at50[&mode];
        ensure!(fm < m, "fused MAE@50 {fm:.4} not below {mode} {m:.4}");
        ensure!(fr < r, "fused RMSE@50 {fr:.4} not below {mode} {r:.4}");
    }
    within(start, Duration::from_secs(300), "planted ablation")?;
    let summary: Vec<String> = at50.iter().map(|(m, (a, r))| format!("{m} {a:.3}/{r:.3}")).collect();
    Ok(format!("MAE/RMSE@50: {}, {:.1?}", summary.join(", "), start.elapsed()))
}

// ---------------------------------------------------------------- formats

fn check_format<T: PartialEq>(
    kind: &str,
    value: &T,
    to_bytes: impl Fn(&T) -> fusionrec::Result<Vec<u8>>,
    from_bytes: impl Fn(&[u8]) -> fusionrec::Result<T>,
) -> Result<usize, String> {
    let bytes = to_bytes(value).map_err(|e| e.to_string())?;
    let back = from_bytes(&bytes).map_err(|e| format!("{kind}: {e}"))?;
    ensure!(back == *value, "{kind}: loaded value differs");
    ensure!(to_bytes(&back).map_err(|e| e.to_string())? == bytes, "{kind}: re-encoding differs");
    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    ensure!(from_bytes(&bad).is_err(), "{kind}: corrupted magic accepted");
    for cut in [0, 4, 8, 12, bytes.len() / 2, bytes.len() - 1] {
        ensure!(from_bytes(&bytes[..cut]).is_err(), "{kind}: truncation to {cut} bytes accepted");
    }
    let mut long = bytes.clone();
    long.push(0);
    ensure!(from_bytes(&long).is_err(), "{kind}: trailing byte accepted");
    Ok(bytes.len())
}

fn formats() -> Outcome {
    let data = generate(&SyntheticConfig {
        source_items: 40,
        target_items: 40,
        users: 0,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let genre = GenreEmbeddingModel::train(
        &pipeline::genre_corpus(&data.catalog),
        &GenreConfig {
            epochs: 2,
            buckets: 1 << 10,
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let mut params = FusionParameters::init(3);
    params.b_f.mapv_inplace(|v| v + 0.125);
    params.epochs_trained = 2;
    let tfidf = pipeline::fit_tfidf(&data.catalog).map_err(|e| e.to_string())?;
    let targets: Vec<Item> = data.catalog.domain(Domain::Target).cloned().collect();
    let index = build_index(&targets, &FallbackEncoder, &genre, &params, &tfidf, &IndexBuildConfig::default())
        .map_err(|e| e.to_string())?;

    let g = check_format("genre model", &genre, |m| m.to_bytes(), GenreEmbeddingModel::from_bytes)?;
    let m = check_format("fusion checkpoint", &params, |p| Ok(p.to_bytes()), FusionParameters::from_bytes)?;
    let i = check_format("index", &index, |x| x.to_bytes(), FeatureIndex::from_bytes)?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = dir.path().join("f.bin");
    params.save(&p).map_err(|e| e.to_string())?;
    ensure!(FusionParameters::load(&p).map_err(|e| e.to_string())? == params, "checkpoint file round trip");
    index.save(&p).map_err(|e| e.to_string())?;
    ensure!(FeatureIndex::load(&p).map_err(|e| e.to_string())? == index, "index file round trip");
    genre.save(&p).map_err(|e| e.to_string())?;
    ensure!(GenreEmbeddingModel::load(&p).map_err(|e| e.to_string())? == genre, "genre file round trip");
    Ok(format!("genre {g} B, checkpoint {m} B, index {i} B bit-exact; magic and truncation rejected"))
}

// ------------------------------------------------------------- evaluation

fn evaluation_invariants() -> Outcome {
    let data = generate(&SyntheticConfig {
        source_items: 160,
        target_items: 200,
        users: 120,
        seed: 21,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let encoder = FallbackEncoder;
    let mut config = PipelineConfig::default().with_seed(5);
    config.pairs.max_positives = Some(256);
    let art = pipeline::run(&data.catalog, Some(&data.ratings), &encoder, &config).map_err(|e| e.to_string())?;
    let models = Models {
        encoder: &encoder,
        genre: &art.genre,
        params: &art.params,
        tfidf: &art.tfidf,
    };
    let rec = Recommender::new(&data.catalog, &art.index, models)
        .and_then(|r| r.with_raw_text(&data.catalog))
        .map_err(|e| e.to_string())?;
    let users = build_eval_users(&data.ratings).map_err(|e| e.to_string())?;
    let mut reports = 0;
    let mut selections_checked = 0;
    let weight_sets = [Weights::EQUAL, Weights::new(0.6, 0.2, 0.2).unwrap(), Weights::new(0.1, 0.3, 0.6).unwrap()];
    for weights in weight_sets {
        for mode in EvalMode::ALL {
            let (report, selections) = evaluate_detailed(&users, &rec, mode, weights).map_err(|e| e.to_string())?;
            reports += 1;
            for p in THRESHOLDS {
                let (m, r) = (report.mae_at(p), report.rmse_at(p));
                ensure!(m <= r + 1e-12, "{mode} @{p}: MAE {m} > RMSE {r}");
            }
            let pairs: Vec<usize> = THRESHOLDS.iter().map(|p| report.pairs[&p.to_string()]).collect();
            ensure!(pairs[0] <= pairs[1] && pairs[1] <= pairs[2], "{mode}: pair counts {pairs:?}");
            for s in &selections {
                let sets: Vec<BTreeSet<&str>> =
                    (0..3).map(|t| s.at(t).iter().map(|(id, _, _)| id.as_str()).collect()).collect();
                ensure!(
                    sets[0].is_subset(&sets[1]) && sets[1].is_subset(&sets[2]),
                    "{mode}: user {} selections not nested",
                    s.user_id
                );
                ensure!(!sets[0].is_empty(), "{mode}: user {} has an empty 20% set", s.user_id);
                selections_checked += 1;
            }
        }
    }
    Ok(format!("{reports} reports MAE <= RMSE; {selections_checked} user selections nested"))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("gradient check", gradient_check),
        ("loss identities", loss_identities),
        ("scheduler closed form", scheduler),
        ("clip contract", clipping),
        ("retrieval oracle", retrieval_oracle),
        ("tf-idf oracle", tfidf_oracle),
        ("determinism", determinism),
        ("planted ablation ordering", planted_ablation),
        ("format round trips", formats),
        ("evaluation invariants", evaluation_invariants),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    std::panic::set_hook(Box::new(|_| {}));
    let results: Vec<(usize, &str, Option<Outcome>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = criteria
            .iter()
            .enumerate()
            .map(|(i, &(name, f))| {
                let selected = filter.is_empty() || filter.iter().any(|p| name.contains(p.as_str()));
                let handle = selected.then(|| {
                    scope.spawn(move || {
                        catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|panic| {
                            let msg = panic
                                .downcast_ref::<String>()
                                .cloned()
                                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                                .unwrap_or_default();
                            Err(format!("panicked: {msg}"))
                        })
                    })
                });
                (i, name, handle)
            })
            .collect();
        handles
            .into_iter()
            .map(|(i, name, h)| (i, name, h.map(|h| h.join().expect("criterion thread"))))
            .collect()
    });
    let mut failed = 0;
    for (i, name, outcome) in results {
        match outcome {
            None => println!("SKIP [{:>2}] {name}", i + 1),
            Some(Ok(detail)) => println!("PASS [{:>2}] {name}: {detail}", i + 1),
            Some(Err(why)) => {
                failed += 1;
                println!("FAIL [{:>2}] {name}: {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
