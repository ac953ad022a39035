use std::collections::HashMap;
use std::path::Path;

use crate::binio::{self, fnv1a64, fnv1a64_extend, Reader, Writer};
use crate::catalog::Item;
use crate::error::{Error, Result};
use crate::TEXT_DIM;

const MAGIC: &[u8; 8] = b"LFREMB1\0";

/// Token budget per description, matching the transformer tokenizer limit.
pub const MAX_TOKENS: usize = 128;

const SIGN_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding {
    pub vector: Vec<f32>,
    pub provider_id: String,
}

/// Source of description embeddings. Implementations must be deterministic.
pub trait EncoderProvider: Send + Sync {
    fn provider_id(&self) -> &str;

    fn dim(&self) -> usize {
        TEXT_DIM
    }

    fn encode(&self, item: &Item) -> Result<TextEmbedding>;
}

/// Lowercased alphanumeric runs; every other character separates tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Signed feature hashing of unigrams and bigrams over the first
/// [`MAX_TOKENS`] tokens, L2-normalized. Text with no tokens maps to `e_0`.
pub fn fallback_encode(description: &str) -> Vec<f32> {
    let tokens = tokenize(description);
    let tokens = &tokens[..tokens.len().min(MAX_TOKENS)];
    let mut raw = vec![0.0f64; TEXT_DIM];
    let mut add = |feature: &[u8]| {
        let h = fnv1a64(feature);
        let bucket = (h % TEXT_DIM as u64) as usize;
        let sign = if fnv1a64_extend(SIGN_SALT, feature) >> 63 == 0 { 1.0 } else { -1.0 };
        raw[bucket] += sign;
    };
    for t in tokens {
        add(t.as_bytes());
    }
    for pair in tokens.windows(2) {
        // tokens never contain a space, so bigram keys cannot collide with
        // unigram keys
        add(format!("{} {}", pair[0], pair[1]).as_bytes());
    }
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        let mut e0 = vec![0.0f32; TEXT_DIM];
        e0[0] = 1.0;
        return e0;
    }
    raw.iter().map(|v| (v / norm) as f32).collect()
}

/// Hashing encoder that needs no pretrained model.
#[derive(Debug, Clone, Default)]
pub struct FallbackEncoder;

impl FallbackEncoder {
    pub const ID: &'static str = "fallback-hash-v1";
}

impl EncoderProvider for FallbackEncoder {
    fn provider_id(&self) -> &str {
        Self::ID
    }

    fn encode(&self, item: &Item) -> Result<TextEmbedding> {
        Ok(TextEmbedding {
            vector: fallback_encode(&item.description),
            provider_id: Self::ID.to_string(),
        })
    }
}

/// In-memory form of an `LFREMB1` embedding file.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub dim: usize,
    pub records: Vec<(String, Vec<f32>)>,
}

impl EmbeddingFile {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u32(self.dim as u32);
        w.u64(self.records.len() as u64);
        for (id, v) in &self.records {
            if v.len() != self.dim {
                return Err(Error::ShapeMismatch {
                    context: "embedding record",
                    expected: self.dim,
                    actual: v.len(),
                });
            }
            w.short_str(id)?;
            w.f32s(v);
        }
        Ok(w.into_inner())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "embedding");
        r.expect_magic(MAGIC)?;
        let dim = r.u32()? as usize;
        if dim != TEXT_DIM {
            return Err(r.corrupt(format!("dim {dim}, expected {TEXT_DIM}")));
        }
        // Loose per-record minimum so truncation is reported against a record.
        let count = r.count(2)?;
        let mut records = Vec::with_capacity(count);
        for i in 0..count {
            let id = r
                .short_str()
                .map_err(|e| r.corrupt(format!("record {i}: {e}")))?;
            let v = r.f32s(dim).map_err(|e| r.corrupt(format!("record {i} ({id}): {e}")))?;
            if v.iter().any(|x| !x.is_finite()) {
                return Err(r.corrupt(format!("record {i} ({id}) has non-finite entries")));
            }
            records.push((id, v));
        }
        r.finish()?;
        Ok(Self { dim, records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binio::write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&binio::read_file(path)?)
    }
}

/// Looks embeddings up by item id from an exported embedding file.
#[derive(Debug, Clone)]
pub struct FileEncoder {
    provider_id: String,
    vectors: HashMap<String, Vec<f32>>,
}

impl FileEncoder {
    pub fn new(file: EmbeddingFile) -> Result<Self> {
        let fingerprint = fnv1a64(&file.to_bytes()?);
        let mut vectors = HashMap::with_capacity(file.records.len());
        for (id, v) in file.records {
            if vectors.insert(id.clone(), v).is_some() {
                return Err(Error::corrupt("embedding", format!("duplicate id {id:?}")));
            }
        }
        Ok(Self {
            provider_id: format!("file:{fingerprint:016x}"),
            vectors,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::new(EmbeddingFile::load(path)?)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

impl EncoderProvider for FileEncoder {
    fn provider_id(&self) -> &str {
        &self.provider_id
    }

    fn encode(&self, item: &Item) -> Result<TextEmbedding> {
        self.vectors
            .get(&item.id)
            .map(|v| TextEmbedding {
                vector: v.clone(),
                provider_id: self.provider_id.clone(),
            })
            .ok_or_else(|| Error::MissingEmbedding(item.id.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Domain;

    fn item(id: &str, desc: &str) -> Item {
        Item {
            id: id.into(),
            title: id.into(),
            description: desc.into(),
            genres: vec!["drama".into()],
            domain: Domain::Target,
        }
    }

    fn norm(v: &[f32]) -> f64 {
        v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
    }

    #[test]
    fn tokenizer_splits_and_lowercases() {
        assert_eq!(tokenize("Crew vs. Xenomorph!"), vec!["crew", "vs", "xenomorph"]);
        assert_eq!(tokenize("Война и мир"), vec!["война", "и", "мир"]);
        assert!(tokenize("  ,,, ").is_empty());
    }

    #[test]
    fn empty_description_is_e0() {
        let v = fallback_encode("");
        assert_eq!(v[0], 1.0);
        assert!(v[1..].iter().all(|&x| x == 0.0));
        assert_eq!(v.len(), TEXT_DIM);
    }

    #[test]
    fn unit_norm() {
        for s in ["alien crew", "a", "Война и мир", "one two three four five six"] {
            assert!((norm(&fallback_encode(s)) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn word_order_changes_bigrams_only() {
        let a = fallback_encode("alien crew");
        let b = fallback_encode("crew alien");
        assert_ne!(a, b);
        // Same unigram buckets, different bigram buckets.
        let bigram_a = fnv1a64(b"alien crew") % TEXT_DIM as u64;
        let bigram_b = fnv1a64(b"crew alien") % TEXT_DIM as u64;
        assert_ne!(bigram_a, bigram_b);
    }

    #[test]
    fn truncates_at_128_tokens() {
        let long: Vec<String> = (0..200).map(|i| format!("w{i}")).collect();
        let prefix = long[..MAX_TOKENS].join(" ");
        assert_eq!(fallback_encode(&long.join(" ")), fallback_encode(&prefix));
        assert_ne!(fallback_encode(&long[..127].join(" ")), fallback_encode(&prefix));
    }

    #[test]
    fn fallback_depends_only_on_description() {
        let enc = FallbackEncoder;
        let a = enc.encode(&item("x", "same words")).unwrap();
        let b = enc.encode(&item("y", "same words")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn file_encoder_lookup() {
        let mut v = vec![0.0f32; TEXT_DIM];
        v[3] = 0.25;
        let file = EmbeddingFile {
            dim: TEXT_DIM,
            records: vec![("b1".into(), v.clone())],
        };
        let enc = FileEncoder::new(EmbeddingFile::from_bytes(&file.to_bytes().unwrap()).unwrap()).unwrap();
        assert_eq!(enc.encode(&item("b1", "whatever")).unwrap().vector, v);
        assert!(matches!(enc.encode(&item("b2", "whatever")), Err(Error::MissingEmbedding(id)) if id == "b2"));
        assert!(enc.provider_id().starts_with("file:"));
    }

    #[test]
    fn embedding_file_corruption() {
        let file = EmbeddingFile {
            dim: TEXT_DIM,
            records: vec![("a".into(), vec![0.5; TEXT_DIM]), ("b".into(), vec![0.1; TEXT_DIM])],
        };
        let bytes = file.to_bytes().unwrap();
        assert_eq!(bytes.len(), 8 + 4 + 8 + 2 * (2 + 1 + TEXT_DIM * 4));
        let mut bad = bytes.clone();
        bad[3] = b'X';
        assert!(EmbeddingFile::from_bytes(&bad).is_err());
        let err = EmbeddingFile::from_bytes(&bytes[..bytes.len() - 10]).unwrap_err();
        assert!(err.to_string().contains("record 1"), "{err}");

        let dup = EmbeddingFile {
            dim: TEXT_DIM,
            records: vec![("a".into(), vec![0.5; TEXT_DIM]), ("a".into(), vec![0.1; TEXT_DIM])],
        };
        assert!(FileEncoder::new(dup).is_err());
    }
}
