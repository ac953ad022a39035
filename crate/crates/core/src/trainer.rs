//! Training of the fusion parameters with cosine embedding loss.
//!
//! Both sides of every pair go through the same [`FusionParameters`]. Each
//! epoch shuffles the pairs, and for every batch computes the mean loss,
//! backpropagates, clips the global gradient norm and takes an AdamW step.
//! The learning rate follows cosine annealing with warm restarts, stepped
//! once per epoch.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{Domain, Item, Rating};
use crate::embeddings::{EncoderProvider, GenreEmbeddingModel};
use crate::error::{Error, Result};
use crate::fusion::{FusionGradients, FusionParameters};

pub const LIKED_THRESHOLD: f64 = 4.0;

/// Cosine embedding loss for one pair with label `y = ±1`. A zero vector
/// has undefined cosine and is scored as similarity 0.
pub fn cosine_embedding_loss(f_m: &[f64], f_b: &[f64], y: i8, margin: f64) -> Result<f64> {
    let sim = crate::scoring::cosine(f_m, f_b)?;
    Ok(loss_from_sim(sim, y, margin))
}

fn loss_from_sim(sim: f64, y: i8, margin: f64) -> f64 {
    if y > 0 {
        1.0 - sim
    } else {
        (sim - margin).max(0.0)
    }
}

/// Loss and its gradient with respect to both vectors.
fn pair_loss_grad(a: &[f64], b: &[f64], y: i8, margin: f64) -> (f64, Vec<f64>, Vec<f64>, bool) {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na < 1e-12 || nb < 1e-12 {
        return (loss_from_sim(0.0, y, margin), vec![0.0; a.len()], vec![0.0; b.len()], true);
    }
    let sim = dot / (na * nb);
    let loss = loss_from_sim(sim, y, margin);
    let d_sim = if y > 0 {
        -1.0
    } else if sim > margin {
        1.0
    } else {
        0.0
    };
    if d_sim == 0.0 {
        return (loss, vec![0.0; a.len()], vec![0.0; b.len()], false);
    }
    let inv = 1.0 / (na * nb);
    let da = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| d_sim * (y * inv - sim * x / (na * na)))
        .collect();
    let db = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| d_sim * (x * inv - sim * y / (nb * nb)))
        .collect();
    (loss, da, db, false)
}

/// Mean cosine embedding loss over a batch and its exact gradient with
/// respect to every parameter block. Row `i` of the source and target
/// matrices forms pair `i`.
#[allow(clippy::too_many_arguments)]
pub fn batch_loss_and_grad(
    params: &FusionParameters,
    source_text: ArrayView2<f64>,
    source_genre: ArrayView2<f64>,
    target_text: ArrayView2<f64>,
    target_genre: ArrayView2<f64>,
    labels: &[i8],
    margin: f64,
) -> Result<(f64, FusionGradients)> {
    let n = labels.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if source_text.nrows() != n || target_text.nrows() != n {
        return Err(Error::ShapeMismatch {
            context: "batch rows",
            expected: n,
            actual: source_text.nrows().min(target_text.nrows()),
        });
    }
    let src = params.forward_batch(source_text, source_genre)?;
    let tgt = params.forward_batch(target_text, target_genre)?;
    let dim = params.text_dim();
    let mut up_src = Array2::<f64>::zeros((n, dim));
    let mut up_tgt = Array2::<f64>::zeros((n, dim));
    let mut total = 0.0;
    let mut zero_vectors = 0usize;
    let scale = 1.0 / n as f64;
    for (i, &y) in labels.iter().enumerate() {
        let a = src.output.row(i);
        let b = tgt.output.row(i);
        let (loss, da, db, degenerate) = pair_loss_grad(a.as_slice().unwrap(), b.as_slice().unwrap(), y, margin);
        zero_vectors += degenerate as usize;
        total += loss;
        for (u, g) in up_src.row_mut(i).iter_mut().zip(da) {
            *u = g * scale;
        }
        for (u, g) in up_tgt.row_mut(i).iter_mut().zip(db) {
            *u = g * scale;
        }
    }
    if zero_vectors > 0 {
        log::warn!("{zero_vectors} pair(s) in batch had a zero fused vector; cosine taken as 0");
    }
    let (mut grads, _) = params.backward_batch(&src, source_genre, up_src.view())?;
    let (tgt_grads, _) = params.backward_batch(&tgt, target_genre, up_tgt.view())?;
    grads.add_assign(&tgt_grads);
    Ok((total * scale, grads))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct TrainingPair {
    pub source_id: String,
    pub target_id: String,
    pub label: i8,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PairConfig {
    pub jaccard_threshold: f64,
    pub negatives_per_positive: usize,
    /// Uniformly subsample positives above this count.
    pub max_positives: Option<usize>,
    pub seed: u64,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self {
            jaccard_threshold: 0.25,
            negatives_per_positive: 1,
            max_positives: Some(2048),
            seed: 42,
        }
    }
}

pub fn genre_jaccard<S: AsRef<str>>(a: &[S], b: &[S]) -> f64 {
    let a: BTreeSet<&str> = a.iter().map(AsRef::as_ref).collect();
    let b: BTreeSet<&str> = b.iter().map(AsRef::as_ref).collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// Builds labelled pairs. A pair is positive when the genre Jaccard index
/// reaches the threshold or when some user rated both items at least 4.
/// Negatives are drawn uniformly from the remaining pairs whose Jaccard
/// index is below the threshold.
pub fn sample_pairs(
    source: &[Item],
    target: &[Item],
    ratings: Option<&[Rating]>,
    config: &PairConfig,
) -> Result<Vec<TrainingPair>> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyInput);
    }
    let tau = config.jaccard_threshold;
    let mut positives: BTreeSet<(usize, usize)> = BTreeSet::new();

    if tau <= 0.0 {
        for s in 0..source.len() {
            for t in 0..target.len() {
                positives.insert((s, t));
            }
        }
    } else {
        let mut by_genre: HashMap<&str, Vec<usize>> = HashMap::new();
        for (t, item) in target.iter().enumerate() {
            for g in &item.genres {
                by_genre.entry(g.as_str()).or_default().push(t);
            }
        }
        for (s, item) in source.iter().enumerate() {
            let candidates: BTreeSet<usize> = item
                .genres
                .iter()
                .filter_map(|g| by_genre.get(g.as_str()))
                .flatten()
                .copied()
                .collect();
            for t in candidates {
                if genre_jaccard(&item.genres, &target[t].genres) >= tau {
                    positives.insert((s, t));
                }
            }
        }
    }

    if let Some(ratings) = ratings {
        let src_idx: HashMap<&str, usize> = source.iter().enumerate().map(|(i, it)| (it.id.as_str(), i)).collect();
        let tgt_idx: HashMap<&str, usize> = target.iter().enumerate().map(|(i, it)| (it.id.as_str(), i)).collect();
        let mut liked: BTreeMap<&str, (BTreeSet<usize>, BTreeSet<usize>)> = BTreeMap::new();
        for r in ratings.iter().filter(|r| r.rating >= LIKED_THRESHOLD) {
            let entry = liked.entry(r.user_id.as_str()).or_default();
            match r.domain {
                Domain::Source => entry.0.extend(src_idx.get(r.item_id.as_str())),
                Domain::Target => entry.1.extend(tgt_idx.get(r.item_id.as_str())),
            }
        }
        for (srcs, tgts) in liked.values() {
            for &s in srcs {
                for &t in tgts {
                    positives.insert((s, t));
                }
            }
        }
    }

    if positives.is_empty() {
        return Err(Error::NoPositivePairs);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut chosen: Vec<(usize, usize)> = positives.iter().copied().collect();
    if let Some(max) = config.max_positives {
        if chosen.len() > max {
            let mut picks = rand::seq::index::sample(&mut rng, chosen.len(), max).into_vec();
            picks.sort_unstable();
            chosen = picks.into_iter().map(|i| chosen[i]).collect();
        }
    }

    let wanted = chosen.len() * config.negatives_per_positive;
    let mut negatives: BTreeSet<(usize, usize)> = BTreeSet::new();
    let max_attempts = wanted.saturating_mul(50).max(1000);
    let mut attempts = 0;
    while negatives.len() < wanted && attempts < max_attempts {
        attempts += 1;
        let s = rng.gen_range(0..source.len());
        let t = rng.gen_range(0..target.len());
        if positives.contains(&(s, t)) || genre_jaccard(&source[s].genres, &target[t].genres) >= tau {
            continue;
        }
        negatives.insert((s, t));
    }
    if negatives.len() < wanted {
        log::warn!("only {} of {wanted} negative pairs found", negatives.len());
    }

    let make = |(s, t): (usize, usize), label| TrainingPair {
        source_id: source[s].id.clone(),
        target_id: target[t].id.clone(),
        label,
    };
    let mut pairs: Vec<TrainingPair> = chosen.into_iter().map(|p| make(p, 1)).collect();
    pairs.extend(negatives.into_iter().map(|p| make(p, -1)));
    Ok(pairs)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// AdamW update on one block with decoupled weight decay. `step` is the
/// 1-based step number used for bias correction.
pub fn adamw_update(theta: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], step: u64, lr: f64, hp: &AdamWConfig) {
    let bc1 = 1.0 - hp.beta1.powi(step as i32);
    let bc2 = 1.0 - hp.beta2.powi(step as i32);
    for i in 0..theta.len() {
        let g = grad[i];
        m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g;
        v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        theta[i] -= lr * (m_hat / (v_hat.sqrt() + hp.eps) + hp.weight_decay * theta[i]);
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub m: FusionGradients,
    pub v: FusionGradients,
    pub step_count: u64,
    pub config: AdamWConfig,
}

impl OptimizerState {
    pub fn new(params: &FusionParameters, config: AdamWConfig) -> Self {
        Self {
            m: FusionGradients::zeros_like(params),
            v: FusionGradients::zeros_like(params),
            step_count: 0,
            config,
        }
    }
}

pub fn adamw_step(state: &mut OptimizerState, params: &mut FusionParameters, grads: &FusionGradients, lr: f64) -> Result<()> {
    if !grads.shape_matches(params) || !state.m.shape_matches(params) {
        return Err(Error::ShapeMismatch {
            context: "optimizer blocks",
            expected: params.param_count(),
            actual: grads.blocks().iter().map(|b| b.len()).sum(),
        });
    }
    state.step_count += 1;
    let step = state.step_count;
    let hp = state.config;
    let [m0, m1, m2, m3] = state.m.blocks_mut();
    let [v0, v1, v2, v3] = state.v.blocks_mut();
    let [t0, t1, t2, t3] = params.blocks_mut();
    let [g0, g1, g2, g3] = grads.blocks();
    adamw_update(t0, g0, m0, v0, step, lr, &hp);
    adamw_update(t1, g1, m1, v1, step, lr, &hp);
    adamw_update(t2, g2, m2, v2, step, lr, &hp);
    adamw_update(t3, g3, m3, v3, step, lr, &hp);
    Ok(())
}

/// Cosine annealing with warm restarts. Period `i` lasts
/// `t_0 · t_mult^i` epochs.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct WarmRestartSchedule {
    pub base_lr: f64,
    pub eta_min: f64,
    pub t_0: u64,
    pub t_mult: u64,
}

impl WarmRestartSchedule {
    /// Position within the current period at `epoch`: `(t_cur, t_i)`.
    pub fn period_at(&self, epoch: f64) -> (f64, f64) {
        let mut t_i = self.t_0 as f64;
        let mut t_cur = epoch.max(0.0);
        while t_cur >= t_i {
            t_cur -= t_i;
            t_i *= self.t_mult as f64;
        }
        (t_cur, t_i)
    }

    pub fn lr(&self, t_cur: f64, t_i: f64) -> f64 {
        scheduled_lr(t_cur, t_i, self.base_lr, self.eta_min)
    }

    pub fn lr_at(&self, epoch: f64) -> f64 {
        let (t_cur, t_i) = self.period_at(epoch);
        self.lr(t_cur, t_i)
    }

    /// Cumulative epochs at which the first `count` restarts happen.
    pub fn restart_epochs(&self, count: usize) -> Vec<u64> {
        let mut out = Vec::with_capacity(count);
        let (mut at, mut period) = (0u64, self.t_0);
        for _ in 0..count {
            at += period;
            out.push(at);
            period *= self.t_mult;
        }
        out
    }
}

pub fn scheduled_lr(t_cur: f64, t_i: f64, base_lr: f64, eta_min: f64) -> f64 {
    eta_min + (base_lr - eta_min) * (1.0 + (std::f64::consts::PI * t_cur / t_i).cos()) / 2.0
}

/// Scales all blocks by `max_norm / N` when the global norm `N` exceeds
/// `max_norm`. Returns the norm before clipping.
pub fn clip_gradients(grads: &mut FusionGradients, max_norm: f64) -> Result<f64> {
    if !grads.is_finite() {
        return Err(Error::NonFiniteGradient);
    }
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    Ok(norm)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub margin: f64,
    pub max_grad_norm: f64,
    pub t_0: u64,
    pub t_mult: u64,
    pub eta_min: f64,
    pub adamw: AdamWConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2,
            batch_size: 32,
            base_lr: 2e-5,
            margin: 0.5,
            max_grad_norm: 1.0,
            t_0: 10,
            t_mult: 2,
            eta_min: 0.0,
            adamw: AdamWConfig::default(),
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.epochs < 1 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size < 1 {
            return bad("batch size must be >= 1");
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad("learning rate must be > 0");
        }
        if !(0.0..1.0).contains(&self.margin) {
            return bad("margin must be in [0, 1)");
        }
        if self.max_grad_norm.is_nan() || self.max_grad_norm <= 0.0 {
            return bad("max grad norm must be > 0");
        }
        if self.t_0 < 1 || self.t_mult < 1 {
            return bad("T_0 and T_mult must be >= 1");
        }
        if !(0.0..=self.base_lr).contains(&self.eta_min) {
            return bad("eta_min must be in [0, base_lr]");
        }
        Ok(())
    }

    pub fn schedule(&self) -> WarmRestartSchedule {
        WarmRestartSchedule {
            base_lr: self.base_lr,
            eta_min: self.eta_min,
            t_0: self.t_0,
            t_mult: self.t_mult,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub batches: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainingReport {
    pub epochs: Vec<EpochStats>,
    pub positive_pairs: usize,
    pub negative_pairs: usize,
    pub seed: u64,
    pub config: TrainConfig,
    pub checkpoint_fingerprint: String,
}

/// Text and genre inputs for a set of items, one row per item.
#[derive(Debug, Clone)]
pub struct FeatureTable {
    rows: HashMap<String, usize>,
    pub text: Array2<f64>,
    pub genre: Array2<f64>,
}

impl FeatureTable {
    pub fn build<'a>(
        items: impl IntoIterator<Item = &'a Item>,
        encoder: &dyn EncoderProvider,
        genre_model: &GenreEmbeddingModel,
    ) -> Result<Self> {
        let items: Vec<&Item> = items.into_iter().collect();
        let mut text = Array2::zeros((items.len(), encoder.dim()));
        let mut genre = Array2::zeros((items.len(), genre_model.dim()));
        let mut rows = HashMap::with_capacity(items.len());
        let mut missing = Vec::new();
        for (i, item) in items.iter().enumerate() {
            match encoder.encode(item) {
                Ok(e) => {
                    if e.vector.len() != encoder.dim() {
                        return Err(Error::ShapeMismatch {
                            context: "text embedding",
                            expected: encoder.dim(),
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
            for (dst, v) in genre.row_mut(i).iter_mut().zip(genre_model.embed_genre_set(&item.genres)?) {
                *dst = f64::from(v);
            }
            rows.insert(item.id.clone(), i);
        }
        if !missing.is_empty() {
            return Err(Error::MissingEmbeddings(missing));
        }
        Ok(Self { rows, text, genre })
    }

    pub fn row(&self, id: &str) -> Option<usize> {
        self.rows.get(id).copied()
    }

    fn gather(&self, ids: &[&str]) -> (Array2<f64>, Array2<f64>) {
        let idx: Vec<usize> = ids.iter().map(|id| self.rows[*id]).collect();
        (self.text.select(ndarray::Axis(0), &idx), self.genre.select(ndarray::Axis(0), &idx))
    }
}

/// Trains fresh parameters (seeded from `config.seed`) on `pairs`.
pub fn train(
    source: &[Item],
    target: &[Item],
    encoder: &dyn EncoderProvider,
    genre_model: &GenreEmbeddingModel,
    pairs: &[TrainingPair],
    config: &TrainConfig,
) -> Result<(FusionParameters, TrainingReport)> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::NoPositivePairs);
    }
    let used_src: HashSet<&str> = pairs.iter().map(|p| p.source_id.as_str()).collect();
    let used_tgt: HashSet<&str> = pairs.iter().map(|p| p.target_id.as_str()).collect();
    let src_table = FeatureTable::build(
        source.iter().filter(|i| used_src.contains(i.id.as_str())),
        encoder,
        genre_model,
    )?;
    let tgt_table = FeatureTable::build(
        target.iter().filter(|i| used_tgt.contains(i.id.as_str())),
        encoder,
        genre_model,
    )?;
    for p in pairs {
        if src_table.row(&p.source_id).is_none() {
            return Err(Error::UnknownSeedId(p.source_id.clone()));
        }
        if tgt_table.row(&p.target_id).is_none() {
            return Err(Error::UnknownSeedId(p.target_id.clone()));
        }
    }

    let mut params = FusionParameters::init_with_dims(encoder.dim(), genre_model.dim(), config.seed);
    let mut state = OptimizerState::new(&params, config.adamw);
    let schedule = config.schedule();
    // Separate stream from the one used for initialization.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let lr = schedule.lr_at(epoch as f64);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let src_ids: Vec<&str> = chunk.iter().map(|&i| pairs[i].source_id.as_str()).collect();
            let tgt_ids: Vec<&str> = chunk.iter().map(|&i| pairs[i].target_id.as_str()).collect();
            let labels: Vec<i8> = chunk.iter().map(|&i| pairs[i].label).collect();
            let (st, sg) = src_table.gather(&src_ids);
            let (tt, tg) = tgt_table.gather(&tgt_ids);
            let (loss, mut grads) =
                batch_loss_and_grad(&params, st.view(), sg.view(), tt.view(), tg.view(), &labels, config.margin)?;
            clip_gradients(&mut grads, config.max_grad_norm)?;
            adamw_step(&mut state, &mut params, &grads, lr)?;
            loss_sum += loss * chunk.len() as f64;
            batches += 1;
        }
        let mean_loss = loss_sum / pairs.len() as f64;
        if !mean_loss.is_finite() {
            return Err(Error::DivergedLoss {
                epoch: epoch + 1,
                loss: mean_loss,
            });
        }
        log::info!("epoch {} lr {lr:.3e} mean loss {mean_loss:.6}", epoch + 1);
        epochs.push(EpochStats {
            epoch: epoch + 1,
            lr,
            mean_loss,
            batches,
        });
    }

    params.round_to_f32();
    params.epochs_trained = config.epochs as u32;
    let report = TrainingReport {
        epochs,
        positive_pairs: pairs.iter().filter(|p| p.label > 0).count(),
        negative_pairs: pairs.iter().filter(|p| p.label < 0).count(),
        seed: config.seed,
        config: config.clone(),
        checkpoint_fingerprint: format!("{:016x}", params.fingerprint()),
    };
    Ok((params, report))
}
