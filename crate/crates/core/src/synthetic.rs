//! Planted-structure datasets.
//!
//! Items belong to one of eight clusters, each with its own genre tokens and
//! description vocabulary. Every item independently gets its genres or its
//! description swapped for another cluster's with a fixed probability, so
//! no single signal identifies the cluster reliably while their blend does.
//! Users like a few clean source items of one cluster and rate that
//! cluster's target items 5 when both signals are clean, 4 when one is
//! swapped and 2 when both are.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::catalog::{Catalog, Domain, Item, Rating};
use crate::error::{Error, Result};

const GENRES: [[&str; 3]; 8] = [
    ["sci-fi", "space-opera", "cyberpunk"],
    ["horror", "supernatural", "slasher"],
    ["romance", "romantic-drama", "love-story"],
    ["western", "frontier", "outlaw"],
    ["mystery", "detective", "noir"],
    ["fantasy", "epic-fantasy", "sword-and-sorcery"],
    ["comedy", "satire", "parody"],
    ["war", "military", "historical"],
];

const KEYWORDS: [[&str; 12]; 8] = [
    ["starship", "galaxy", "android", "planet", "orbit", "laser", "alien", "colony", "hacker", "reactor", "warp", "robot"],
    ["ghost", "haunted", "demon", "blood", "scream", "curse", "corpse", "crypt", "possessed", "nightmare", "undead", "terror"],
    ["lovers", "wedding", "heart", "kiss", "passion", "courtship", "affair", "longing", "sweetheart", "romance", "devotion", "embrace"],
    ["cowboy", "ranch", "sheriff", "saloon", "prairie", "gunslinger", "cattle", "desert", "stagecoach", "bounty", "canyon", "horseback"],
    ["murder", "clue", "suspect", "inspector", "alibi", "witness", "motive", "evidence", "detective", "poison", "interrogation", "culprit"],
    ["dragon", "wizard", "kingdom", "sorcery", "quest", "elf", "prophecy", "enchanted", "throne", "sword", "magic", "realm"],
    ["joke", "prank", "hilarious", "farce", "misadventure", "absurd", "mishap", "goofy", "banter", "slapstick", "spoof", "caper"],
    ["soldier", "battle", "trench", "regiment", "invasion", "general", "siege", "platoon", "artillery", "frontline", "veteran", "empire"],
];

const FILLER: [&str; 24] = [
    "story", "life", "world", "journey", "family", "young", "old", "city", "town", "night", "day", "secret",
    "friend", "stranger", "finds", "discovers", "must", "between", "against", "after", "before", "during", "home", "change",
];

pub const CLUSTERS: usize = 8;
const GENRES_PER_ITEM: usize = 3;
const KEYWORDS_PER_ITEM: usize = 10;
const FILLER_PER_ITEM: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub source_items: usize,
    pub target_items: usize,
    pub users: usize,
    /// Probability an item's genres come from another cluster.
    pub genre_noise: f64,
    /// Probability an item's description comes from another cluster.
    pub description_noise: f64,
    /// Liked-cluster target items each user rates.
    pub targets_per_user: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            source_items: 520,
            target_items: 520,
            users: 300,
            genre_noise: 0.3,
            description_noise: 0.3,
            targets_per_user: 12,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Planted {
    pub cluster: usize,
    pub genre_swapped: bool,
    pub description_swapped: bool,
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub catalog: Catalog,
    pub ratings: Vec<Rating>,
    pub planted: BTreeMap<String, Planted>,
}

fn other_cluster(rng: &mut ChaCha8Rng, c: usize) -> usize {
    (c + rng.gen_range(1..CLUSTERS)) % CLUSTERS
}

fn make_item(rng: &mut ChaCha8Rng, id: String, domain: Domain, cluster: usize, cfg: &SyntheticConfig) -> (Item, Planted) {
    let genre_swapped = rng.gen_bool(cfg.genre_noise);
    let description_swapped = rng.gen_bool(cfg.description_noise);
    let gc = if genre_swapped { other_cluster(rng, cluster) } else { cluster };
    let dc = if description_swapped { other_cluster(rng, cluster) } else { cluster };

    let mut genres: Vec<String> = GENRES[gc].choose_multiple(rng, GENRES_PER_ITEM).map(|g| g.to_string()).collect();
    genres.sort();

    let mut words: Vec<&str> = KEYWORDS[dc].choose_multiple(rng, KEYWORDS_PER_ITEM).copied().collect();
    words.extend((0..FILLER_PER_ITEM).map(|_| *FILLER.choose(rng).expect("non-empty")));
    words.shuffle(rng);

    let item = Item {
        title: format!("{} {}", domain, id),
        description: words.join(" "),
        genres,
        domain,
        id,
    };
    (
        item,
        Planted {
            cluster,
            genre_swapped,
            description_swapped,
        },
    )
}

fn rating(user: &str, item: &Item, r: f64) -> Rating {
    Rating {
        user_id: user.to_string(),
        item_id: item.id.clone(),
        domain: item.domain,
        rating: r,
    }
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticDataset> {
    if cfg.source_items < CLUSTERS || cfg.target_items < CLUSTERS {
        return Err(Error::InvalidConfig(format!("need at least {CLUSTERS} items per domain")));
    }
    if !(0.0..=1.0).contains(&cfg.genre_noise) || !(0.0..=1.0).contains(&cfg.description_noise) {
        return Err(Error::InvalidConfig("noise probabilities must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut items = Vec::with_capacity(cfg.source_items + cfg.target_items);
    let mut planted = BTreeMap::new();
    // by_cluster[domain][cluster] -> item positions
    let mut by_cluster = [vec![Vec::new(); CLUSTERS], vec![Vec::new(); CLUSTERS]];
    for (d, (domain, n, prefix)) in [(Domain::Source, cfg.source_items, "s"), (Domain::Target, cfg.target_items, "t")]
        .into_iter()
        .enumerate()
    {
        for i in 0..n {
            let cluster = i % CLUSTERS;
            let (item, p) = make_item(&mut rng, format!("{prefix}{i:05}"), domain, cluster, cfg);
            by_cluster[d][cluster].push(items.len());
            planted.insert(item.id.clone(), p);
            items.push(item);
        }
    }

    let mut ratings = Vec::new();
    for u in 0..cfg.users {
        let user = format!("u{u:05}");
        let c = rng.gen_range(0..CLUSTERS);
        let clean_sources: Vec<usize> = by_cluster[0][c]
            .iter()
            .copied()
            .filter(|&i| {
                let p = planted[&items[i].id];
                !p.genre_swapped && !p.description_swapped
            })
            .collect();
        let pool = if clean_sources.is_empty() { &by_cluster[0][c] } else { &clean_sources };
        let n_seeds = rng.gen_range(1..=3).min(pool.len());
        for &i in pool.choose_multiple(&mut rng, n_seeds) {
            ratings.push(rating(&user, &items[i], 5.0));
        }
        let other = other_cluster(&mut rng, c);
        if let Some(&i) = by_cluster[0][other].choose(&mut rng) {
            ratings.push(rating(&user, &items[i], 1.0));
        }

        let n_targets = cfg.targets_per_user.min(by_cluster[1][c].len());
        for &i in by_cluster[1][c].choose_multiple(&mut rng, n_targets) {
            let p = planted[&items[i].id];
            let r = match (p.genre_swapped, p.description_swapped) {
                (false, false) => 5.0,
                (true, true) => 2.0,
                _ => 4.0,
            };
            ratings.push(rating(&user, &items[i], r));
        }
        for _ in 0..3 {
            let o = other_cluster(&mut rng, c);
            if let Some(&i) = by_cluster[1][o].choose(&mut rng) {
                ratings.push(rating(&user, &items[i], f64::from(rng.gen_range(1..=2u8))));
            }
        }
    }
    Ok(SyntheticDataset {
        catalog: Catalog::new(items),
        ratings,
        planted,
    })
}
