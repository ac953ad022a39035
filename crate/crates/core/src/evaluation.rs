//! MAE/RMSE evaluation at top-20/50/80% thresholds and signal ablations.
//!
//! For each user who liked items in both domains, the liked source items are
//! used as seeds and every index row is scored. Scores are min-max mapped to
//! predicted ratings in `[1, 5]`. The user's liked targets are ranked by that
//! prediction and the top `ceil(p% · m)` of them are compared with the true
//! ratings.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::catalog::{Domain, Rating};
use crate::error::{Error, Result};
use crate::recommender::{PrimarySignal, Recommender};
use crate::scoring::Weights;
use crate::trainer::LIKED_THRESHOLD;

pub const THRESHOLDS: [usize; 3] = [20, 50, 80];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Fused,
    TextOnly,
    GenreOnly,
    TfidfOnly,
}

impl EvalMode {
    pub const ALL: [EvalMode; 4] = [EvalMode::Fused, EvalMode::TextOnly, EvalMode::GenreOnly, EvalMode::TfidfOnly];

    pub fn as_str(&self) -> &'static str {
        match self {
            EvalMode::Fused => "fused",
            EvalMode::TextOnly => "text_only",
            EvalMode::GenreOnly => "genre_only",
            EvalMode::TfidfOnly => "tfidf_only",
        }
    }

    /// Signal in the first slot and the weights the mode scores with.
    /// Single-signal modes ignore the configured weights.
    pub fn scoring(&self, configured: Weights) -> (PrimarySignal, Weights) {
        match self {
            EvalMode::Fused => (PrimarySignal::Fused, configured),
            EvalMode::TextOnly => (PrimarySignal::RawText, Weights::FUSION_ONLY),
            EvalMode::GenreOnly => (PrimarySignal::Fused, Weights::GENRE_ONLY),
            EvalMode::TfidfOnly => (PrimarySignal::Fused, Weights::TFIDF_ONLY),
        }
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EvalMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        EvalMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode {s:?} (fused, text_only, genre_only, tfidf_only)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalUser {
    pub user_id: String,
    pub liked_sources: BTreeSet<String>,
    pub liked_targets: BTreeMap<String, f64>,
}

/// Groups ratings by user, keeps ratings of at least 4, and returns users
/// with at least one liked item in each domain, sorted by user id.
pub fn build_eval_users(ratings: &[Rating]) -> Result<Vec<EvalUser>> {
    let mut by_user: BTreeMap<&str, (BTreeSet<String>, BTreeMap<String, f64>)> = BTreeMap::new();
    for r in ratings.iter().filter(|r| r.rating >= LIKED_THRESHOLD) {
        let entry = by_user.entry(r.user_id.as_str()).or_default();
        match r.domain {
            Domain::Source => {
                entry.0.insert(r.item_id.clone());
            }
            Domain::Target => {
                entry.1.insert(r.item_id.clone(), r.rating);
            }
        }
    }
    let users: Vec<EvalUser> = by_user
        .into_iter()
        .filter(|(_, (s, t))| !s.is_empty() && !t.is_empty())
        .map(|(u, (s, t))| EvalUser {
            user_id: u.to_string(),
            liked_sources: s,
            liked_targets: t,
        })
        .collect();
    if users.is_empty() {
        return Err(Error::NoEvalUsers);
    }
    Ok(users)
}

pub fn mae_rmse(preds: &[f64], truths: &[f64]) -> Result<(f64, f64)> {
    if preds.len() != truths.len() {
        return Err(Error::LengthMismatch(preds.len(), truths.len()));
    }
    if preds.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = preds.len() as f64;
    let (abs, sq) = preds
        .iter()
        .zip(truths)
        .fold((0.0, 0.0), |(a, s), (p, t)| (a + (p - t).abs(), s + (p - t) * (p - t)));
    Ok((abs / n, (sq / n).sqrt()))
}

/// Maps scores linearly so the minimum becomes 1 and the maximum 5. All
/// scores equal maps everything to 3.
pub fn scores_to_ratings(scores: &[f64]) -> Vec<f64> {
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if span.is_nan() || span <= 0.0 {
        return vec![3.0; scores.len()];
    }
    scores.iter().map(|s| 1.0 + 4.0 * (s - lo) / span).collect()
}

/// Predicted rating for every index row given the user's liked sources.
pub fn predict_ratings(
    user: &EvalUser,
    recommender: &Recommender<'_>,
    mode: EvalMode,
    weights: Weights,
) -> Result<BTreeMap<String, f64>> {
    let seeds: Vec<&str> = user.liked_sources.iter().map(String::as_str).collect();
    let profile = recommender.seed_profile(&seeds)?;
    let (signal, weights) = mode.scoring(weights);
    let scores: Vec<f64> = recommender
        .score_all(&profile, signal, weights)?
        .iter()
        .map(|b| b.combined)
        .collect();
    let ids = &recommender.index().item_ids;
    Ok(ids.iter().cloned().zip(scores_to_ratings(&scores)).collect())
}

/// Pairs evaluated for one user, ranked by prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct UserSelection {
    pub user_id: String,
    /// `(target_id, predicted, truth)` in descending predicted order.
    pub ranked: Vec<(String, f64, f64)>,
    /// Number of leading pairs used at each threshold in [`THRESHOLDS`].
    pub cutoffs: [usize; 3],
}

impl UserSelection {
    pub fn at(&self, threshold_idx: usize) -> &[(String, f64, f64)] {
        &self.ranked[..self.cutoffs[threshold_idx]]
    }
}

pub fn threshold_count(percent: usize, m: usize) -> usize {
    (percent * m).div_ceil(100)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub mae: BTreeMap<String, f64>,
    pub rmse: BTreeMap<String, f64>,
    pub user_count: usize,
    /// Liked-target pairs ranked across all users.
    pub pair_count: usize,
    /// Pairs aggregated at each threshold.
    pub pairs: BTreeMap<String, usize>,
    pub config_echo: serde_json::Value,
}

impl EvalReport {
    pub fn mae_at(&self, p: usize) -> f64 {
        self.mae[&p.to_string()]
    }

    pub fn rmse_at(&self, p: usize) -> f64 {
        self.rmse[&p.to_string()]
    }
}

/// Users restricted to seeds and targets the artifacts know about; users
/// left without either are dropped.
fn resolvable_users(users: &[EvalUser], recommender: &Recommender<'_>) -> Vec<EvalUser> {
    let in_index: BTreeSet<&str> = recommender.index().item_ids.iter().map(String::as_str).collect();
    users
        .iter()
        .filter_map(|u| {
            let liked_sources: BTreeSet<String> = u
                .liked_sources
                .iter()
                .filter(|s| recommender.source_item(s).is_some())
                .cloned()
                .collect();
            let liked_targets: BTreeMap<String, f64> = u
                .liked_targets
                .iter()
                .filter(|(t, _)| in_index.contains(t.as_str()))
                .map(|(t, r)| (t.clone(), *r))
                .collect();
            if liked_sources.is_empty() || liked_targets.is_empty() {
                log::debug!("user {} has no resolvable liked items; skipped", u.user_id);
                return None;
            }
            Some(EvalUser {
                user_id: u.user_id.clone(),
                liked_sources,
                liked_targets,
            })
        })
        .collect()
}

/// Report plus the per-user selections it aggregates.
pub fn evaluate_detailed(
    users: &[EvalUser],
    recommender: &Recommender<'_>,
    mode: EvalMode,
    weights: Weights,
) -> Result<(EvalReport, Vec<UserSelection>)> {
    let users = resolvable_users(users, recommender);
    if users.is_empty() {
        return Err(Error::NoEvalUsers);
    }
    let mut selections = Vec::with_capacity(users.len());
    for user in &users {
        let predicted = predict_ratings(user, recommender, mode, weights)?;
        let mut ranked: Vec<(String, f64, f64)> = user
            .liked_targets
            .iter()
            .map(|(t, &truth)| (t.clone(), predicted[t], truth))
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let m = ranked.len();
        let cutoffs = THRESHOLDS.map(|p| threshold_count(p, m));
        selections.push(UserSelection {
            user_id: user.user_id.clone(),
            ranked,
            cutoffs,
        });
    }

    let mut mae = BTreeMap::new();
    let mut rmse = BTreeMap::new();
    let mut pairs = BTreeMap::new();
    for (ti, p) in THRESHOLDS.iter().enumerate() {
        let (preds, truths): (Vec<f64>, Vec<f64>) = selections
            .iter()
            .flat_map(|s| s.at(ti).iter().map(|(_, p, t)| (*p, *t)))
            .unzip();
        let (a, r) = mae_rmse(&preds, &truths)?;
        mae.insert(p.to_string(), a);
        rmse.insert(p.to_string(), r);
        pairs.insert(p.to_string(), preds.len());
    }
    let report = EvalReport {
        mode,
        mae,
        rmse,
        user_count: selections.len(),
        pair_count: selections.iter().map(|s| s.ranked.len()).sum(),
        pairs,
        config_echo: serde_json::json!({
            "weights": mode.scoring(weights).1.as_array(),
            "thresholds": THRESHOLDS,
            "model_fingerprint": format!("{:016x}", recommender.index().model_fingerprint),
            "tfidf_fingerprint": format!("{:016x}", recommender.index().tfidf_fingerprint),
            "provider": recommender.index().provider_id,
        }),
    };
    Ok((report, selections))
}

pub fn evaluate_at_thresholds(
    users: &[EvalUser],
    recommender: &Recommender<'_>,
    mode: EvalMode,
    weights: Weights,
) -> Result<EvalReport> {
    evaluate_detailed(users, recommender, mode, weights).map(|(r, _)| r)
}

/// Evaluates one ablation mode. `text_only` needs a recommender prepared
/// with [`Recommender::with_raw_text`].
pub fn run_ablation(
    mode: EvalMode,
    users: &[EvalUser],
    recommender: &Recommender<'_>,
    weights: Weights,
) -> Result<EvalReport> {
    evaluate_at_thresholds(users, recommender, mode, weights)
}
