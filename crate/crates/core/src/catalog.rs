//! Item and rating ingest, validation and cleaning.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Source => "source",
            Domain::Target => "target",
        })
    }
}

impl std::str::FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "source" => Ok(Domain::Source),
            "target" => Ok(Domain::Target),
            other => Err(format!("unknown domain {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub id: String,
    pub title: String,
    pub description: String,
    pub genres: Vec<String>,
    pub domain: Domain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rating {
    pub user_id: String,
    pub item_id: String,
    pub domain: Domain,
    pub rating: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Catalog {
    pub items: Vec<Item>,
    pub domain_counts: BTreeMap<Domain, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CatalogFormat {
    Jsonl,
    Csv,
}

impl CatalogFormat {
    /// CSV for a `.csv` extension, JSONL otherwise.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => CatalogFormat::Csv,
            _ => CatalogFormat::Jsonl,
        }
    }
}

/// A row that could not be turned into a record.
#[derive(Debug, Clone, PartialEq)]
pub enum RowError {
    MalformedRecord { line: usize, reason: String },
    RatingOutOfRange { line: usize, value: f64 },
}

impl RowError {
    pub fn line(&self) -> usize {
        match self {
            RowError::MalformedRecord { line, .. } | RowError::RatingOutOfRange { line, .. } => *line,
        }
    }
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowError::MalformedRecord { line, reason } => write!(f, "line {line}: malformed record: {reason}"),
            RowError::RatingOutOfRange { line, value } => write!(f, "line {line}: rating {value} outside [1, 5]"),
        }
    }
}

/// Parsed records plus the rows that were rejected.
#[derive(Debug, Clone)]
pub struct Loaded<T> {
    pub value: T,
    pub rejected: Vec<RowError>,
}

/// Counts reported by [`clean_with_stats`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CleanStats {
    pub items_in: usize,
    pub items_out: usize,
    pub dropped_missing: usize,
    pub dropped_duplicate: usize,
}

impl Catalog {
    pub fn new(items: Vec<Item>) -> Self {
        let mut domain_counts = BTreeMap::new();
        for item in &items {
            *domain_counts.entry(item.domain).or_insert(0) += 1;
        }
        Self { items, domain_counts }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn domain(&self, domain: Domain) -> impl Iterator<Item = &Item> {
        self.items.iter().filter(move |i| i.domain == domain)
    }

    /// Items of one domain as a new catalog, order preserved.
    pub fn split(&self, domain: Domain) -> Catalog {
        Catalog::new(self.domain(domain).cloned().collect())
    }

    /// Lookup table from id to item within one domain.
    pub fn by_id(&self, domain: Domain) -> HashMap<&str, &Item> {
        self.domain(domain).map(|i| (i.id.as_str(), i)).collect()
    }

    /// All descriptions in catalog order.
    pub fn descriptions(&self) -> Vec<&str> {
        self.items.iter().map(|i| i.description.as_str()).collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for item in &self.items {
            out.push_str(&serde_json::to_string(item).expect("item serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Lowercase, trim, and join internal whitespace with `-`.
pub fn normalize_genre(raw: &str) -> String {
    raw.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join("-")
}

fn title_key(title: &str) -> String {
    title.trim().to_lowercase()
}

// Fatal only when the sample is large enough for a rate to mean something,
// or when nothing at all parsed.
const MALFORMED_FRACTION: f64 = 0.10;
const MALFORMED_MIN_ROWS: usize = 10;

fn check_malformed(path: &Path, rejected: &[RowError], total: usize) -> Result<()> {
    let failed = rejected.len();
    if failed == 0 {
        return Ok(());
    }
    let over_rate = total >= MALFORMED_MIN_ROWS && failed as f64 > MALFORMED_FRACTION * total as f64;
    if over_rate || failed == total {
        return Err(Error::TooManyMalformed {
            path: path.to_path_buf(),
            failed,
            total,
            first_line: rejected[0].line(),
        });
    }
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn validate_item(item: &Item) -> std::result::Result<(), String> {
    if item.id.trim().is_empty() {
        return Err("empty id".into());
    }
    Ok(())
}

pub fn parse_catalog_jsonl(text: &str) -> (Vec<Item>, Vec<RowError>, usize) {
    let mut items = Vec::new();
    let mut rejected = Vec::new();
    let mut total = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        let parsed = serde_json::from_str::<Item>(line)
            .map_err(|e| e.to_string())
            .and_then(|item| validate_item(&item).map(|_| item));
        match parsed {
            Ok(item) => items.push(item),
            Err(reason) => rejected.push(RowError::MalformedRecord { line: i + 1, reason }),
        }
    }
    (items, rejected, total)
}

pub fn parse_catalog_csv(text: &str) -> Result<(Vec<Item>, Vec<RowError>, usize)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::InvalidConfig(format!("csv header: {e}")))?
        .clone();
    let expected = ["id", "title", "description", "genres", "domain"];
    if headers.iter().map(str::trim).collect::<Vec<_>>() != expected {
        return Err(Error::InvalidConfig(format!(
            "csv header must be {}, got {}",
            expected.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut items = Vec::new();
    let mut rejected = Vec::new();
    let mut total = 0;
    for record in reader.records() {
        total += 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line() as usize);
                rejected.push(RowError::MalformedRecord { line, reason: e.to_string() });
                continue;
            }
        };
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != expected.len() {
            rejected.push(RowError::MalformedRecord {
                line,
                reason: format!("expected {} fields, got {}", expected.len(), record.len()),
            });
            continue;
        }
        let domain = match record[4].parse::<Domain>() {
            Ok(d) => d,
            Err(reason) => {
                rejected.push(RowError::MalformedRecord { line, reason });
                continue;
            }
        };
        let item = Item {
            id: record[0].to_string(),
            title: record[1].to_string(),
            description: record[2].to_string(),
            genres: record[3]
                .split('|')
                .filter(|g| !g.trim().is_empty())
                .map(str::to_string)
                .collect(),
            domain,
        };
        match validate_item(&item) {
            Ok(()) => items.push(item),
            Err(reason) => rejected.push(RowError::MalformedRecord { line, reason }),
        }
    }
    Ok((items, rejected, total))
}

/// Reads a catalog file. Malformed rows are skipped and reported; the load
/// fails if more than 10% of at least 10 rows are malformed, or if no row
/// parses at all.
pub fn load_catalog(path: &Path, format: CatalogFormat) -> Result<Loaded<Catalog>> {
    let text = read_text(path)?;
    let (items, rejected, total) = match format {
        CatalogFormat::Jsonl => parse_catalog_jsonl(&text),
        CatalogFormat::Csv => parse_catalog_csv(&text)?,
    };
    check_malformed(path, &rejected, total)?;
    for r in &rejected {
        log::warn!("{}: {r}", path.display());
    }
    Ok(Loaded {
        value: Catalog::new(items),
        rejected,
    })
}

pub fn clean(catalog: &Catalog) -> Catalog {
    clean_with_stats(catalog).0
}

/// Normalizes genres, drops items with an empty description or no genres,
/// then drops duplicates by `(domain, id)` and by `(domain, title)` keeping
/// the first occurrence. Scripts other than Latin are kept as-is.
pub fn clean_with_stats(catalog: &Catalog) -> (Catalog, CleanStats) {
    let mut stats = CleanStats {
        items_in: catalog.items.len(),
        ..CleanStats::default()
    };
    let mut seen_ids: HashSet<(Domain, String)> = HashSet::new();
    let mut seen_titles: HashSet<(Domain, String)> = HashSet::new();
    let mut out = Vec::with_capacity(catalog.items.len());

    for item in &catalog.items {
        let mut genres: Vec<String> = Vec::with_capacity(item.genres.len());
        for g in item.genres.iter().map(|g| normalize_genre(g)) {
            if !g.is_empty() && !genres.contains(&g) {
                genres.push(g);
            }
        }
        if item.description.trim().is_empty() || genres.is_empty() {
            stats.dropped_missing += 1;
            continue;
        }
        let id_key = (item.domain, item.id.clone());
        let title_key = (item.domain, title_key(&item.title));
        if seen_ids.contains(&id_key) || seen_titles.contains(&title_key) {
            stats.dropped_duplicate += 1;
            continue;
        }
        seen_ids.insert(id_key);
        seen_titles.insert(title_key);
        out.push(Item {
            genres,
            ..item.clone()
        });
    }
    stats.items_out = out.len();
    (Catalog::new(out), stats)
}

/// Reads a ratings JSONL file. Rows that fail to parse or carry a rating
/// outside `[1, 5]` are rejected individually.
pub fn load_ratings(path: &Path) -> Result<Loaded<Vec<Rating>>> {
    let text = read_text(path)?;
    let mut ratings = Vec::new();
    let mut rejected = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i + 1;
        match serde_json::from_str::<Rating>(line) {
            Ok(r) if !(1.0..=5.0).contains(&r.rating) => {
                rejected.push(RowError::RatingOutOfRange {
                    line: line_no,
                    value: r.rating,
                });
            }
            Ok(r) => ratings.push(r),
            Err(e) => rejected.push(RowError::MalformedRecord {
                line: line_no,
                reason: e.to_string(),
            }),
        }
    }
    for r in &rejected {
        log::warn!("{}: {r}", path.display());
    }
    Ok(Loaded {
        value: ratings,
        rejected,
    })
}

pub fn ratings_to_jsonl(ratings: &[Rating]) -> String {
    let mut out = String::new();
    for r in ratings {
        out.push_str(&serde_json::to_string(r).expect("rating serializes"));
        out.push('\n');
    }
    out
}
