//! Frozen text embedders.
//!
//! [`HashingEmbedder`] is a signed feature-hashing embedding. The text is
//! split into segments at `|`; tokens are lowercase alphanumeric runs. Each
//! token becomes the feature `"{seg}:{tok}"`, where `seg` is the zero-based
//! segment index, so `P | H | S` and `P | S | H` embed differently. Each
//! feature is hashed with 64-bit FNV-1a, seeded by prefixing the 8
//! little-endian bytes of a per-hash seed. Hash `j` uses seed `cfg.seed + 2j`
//! for the bucket and `cfg.seed + 2j + 1` for the sign (low bit set means
//! negative). The sum is L2-normalized. The scheme is fully specified here so
//! that other implementations can reproduce vectors bit for bit.
//!
//! [`EmbeddingTable`] loads precomputed vectors from a text file:
//!
//! ```text
//! d=4
//! some text<TAB>0.1 0.2 0.3 0.4
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{InferenceGraph, NodeRole};
use crate::query::DefeasibleQuery;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for b in seed.to_le_bytes().iter().chain(bytes) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("no embedding for {0:?}")]
    MissingKey(String),
    #[error("invalid embedder config: {0}")]
    InvalidConfig(String),
    #[error("malformed embedding file at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderConfig {
    pub d: usize,
    pub n_hash: usize,
    pub seed: u64,
    /// Per-hit magnitude before normalization; `None` means `1/sqrt(d)`.
    /// Non-empty outputs are unit-norm whatever the value.
    pub scale: Option<f64>,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            d: 64,
            n_hash: 2,
            seed: 0,
            scale: None,
        }
    }
}

impl EmbedderConfig {
    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.d < 2 {
            return Err(EmbedError::InvalidConfig(format!("d must be >= 2, got {}", self.d)));
        }
        if self.n_hash < 1 {
            return Err(EmbedError::InvalidConfig("n_hash must be >= 1".into()));
        }
        Ok(())
    }

    fn scale(&self) -> f64 {
        self.scale.unwrap_or(1.0 / (self.d as f64).sqrt())
    }
}

/// Any frozen text-to-vector map.
pub trait TextEmbedder {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError>;
}

fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn features(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for (seg, part) in text.split('|').enumerate() {
        let toks = tokens(part);
        out.extend(toks.iter().map(|t| format!("{seg}:{t}")));
    }
    out
}

/// Feature-hashing embedding of `text`. Empty text maps to the zero vector.
pub fn embed_text(text: &str, cfg: &EmbedderConfig) -> Vec<f64> {
    let mut v = vec![0.0; cfg.d];
    let scale = cfg.scale();
    for tok in features(text) {
        for j in 0..cfg.n_hash as u64 {
            let bucket = fnv1a64(cfg.seed.wrapping_add(2 * j), tok.as_bytes());
            let sign = fnv1a64(cfg.seed.wrapping_add(2 * j + 1), tok.as_bytes());
            let idx = (bucket % cfg.d as u64) as usize;
            v[idx] += if sign & 1 == 1 { -scale } else { scale };
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    }
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct HashingEmbedder {
    cfg: EmbedderConfig,
}

impl HashingEmbedder {
    pub fn new(cfg: EmbedderConfig) -> Result<Self, EmbedError> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &EmbedderConfig {
        &self.cfg
    }
}

impl TextEmbedder for HashingEmbedder {
    fn dim(&self) -> usize {
        self.cfg.d
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        Ok(embed_text(text, &self.cfg))
    }
}

pub fn embed_query<E: TextEmbedder + ?Sized>(q: &DefeasibleQuery, e: &E) -> Result<Vec<f64>, EmbedError> {
    e.embed(&q.joined_text())
}

/// One row per role, in the order given.
pub fn embed_nodes<E: TextEmbedder + ?Sized>(
    g: &InferenceGraph,
    roles: &[NodeRole],
    e: &E,
) -> Result<Vec<Vec<f64>>, EmbedError> {
    roles.iter().map(|r| e.embed(g.label(*r))).collect()
}

/// Exact-match lookup of externally computed embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    rows: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn parse(text: &str) -> Result<Self, EmbedError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(EmbedError::Malformed {
            line: 1,
            reason: "missing header".into(),
        })?;
        let dim: usize = header
            .trim()
            .strip_prefix("d=")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| EmbedError::Malformed {
                line: 1,
                reason: format!("expected d=<int>, found {header:?}"),
            })?;
        let mut rows = HashMap::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let (key, vals) = line.split_once('\t').ok_or_else(|| EmbedError::Malformed {
                line: i + 1,
                reason: "missing tab separator".into(),
            })?;
            let v: Vec<f64> = vals
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| EmbedError::Malformed {
                    line: i + 1,
                    reason: e.to_string(),
                })?;
            if v.len() != dim {
                return Err(EmbedError::DimensionMismatch {
                    expected: dim,
                    found: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(EmbedError::Malformed {
                    line: i + 1,
                    reason: "non-finite value".into(),
                });
            }
            rows.insert(key.to_string(), v);
        }
        Ok(Self { dim, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, text: &str) -> Result<&[f64], EmbedError> {
        self.rows
            .get(text)
            .map(Vec::as_slice)
            .ok_or_else(|| EmbedError::MissingKey(text.to_string()))
    }
}

pub fn load_external_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable, EmbedError> {
    EmbeddingTable::parse(&fs::read_to_string(path)?)
}

impl TextEmbedder for EmbeddingTable {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        self.get(text).map(<[f64]>::to_vec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn fnv_reference_value() {
        // FNV-1a 64 of the empty string is the offset basis; seed bytes come first
        assert_eq!(fnv1a64(0, b""), {
            let mut h = FNV_OFFSET;
            for _ in 0..8 {
                h = h.wrapping_mul(FNV_PRIME);
            }
            h
        });
    }

    #[test]
    fn basic_contracts() {
        let cfg = EmbedderConfig::default();
        assert_eq!(embed_text("", &cfg), vec![0.0; 64]);
        assert_eq!(embed_text("  ,, ", &cfg), vec![0.0; 64]);
        // bag of words within a segment, ordered across segments
        assert_eq!(embed_text("rocks crash", &cfg), embed_text("crash rocks", &cfg));
        assert_ne!(embed_text("rocks | crash", &cfg), embed_text("crash | rocks", &cfg));
        let a = embed_text("Waves crash on rocks", &cfg);
        assert_eq!(a, embed_text("Waves crash on rocks", &cfg));
        assert_eq!(a, embed_text("waves CRASH on rocks", &cfg));
        assert!((norm(&a) - 1.0).abs() < 1e-12);
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn config_validation() {
        assert!(HashingEmbedder::new(EmbedderConfig { d: 1, ..Default::default() }).is_err());
        assert!(HashingEmbedder::new(EmbedderConfig { n_hash: 0, ..Default::default() }).is_err());
    }

    #[test]
    fn node_rows_follow_role_order() {
        let g = InferenceGraph::from_labels(["a", "b", "c", "d e", "f", "g", "h", "i"]).unwrap();
        let e = HashingEmbedder::new(EmbedderConfig::default()).unwrap();
        let m = embed_nodes(&g, &[NodeRole::SituationMinus], &e).unwrap();
        assert_eq!(m, vec![embed_text("d e", e.config())]);
        let fwd = embed_nodes(&g, &[NodeRole::ContextPlus, NodeRole::MediatorMinus], &e).unwrap();
        let rev = embed_nodes(&g, &[NodeRole::MediatorMinus, NodeRole::ContextPlus], &e).unwrap();
        assert_eq!(fwd[0], rev[1]);
        assert_eq!(fwd[1], rev[0]);
    }

    #[test]
    fn swapped_hypothesis_and_update_differ() {
        let words = ["storm", "beach", "kids", "rain", "sand", "boat", "wind", "tide", "sun", "dog"];
        let e = HashingEmbedder::new(EmbedderConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let phrase = |rng: &mut ChaCha8Rng| {
            (0..rng.gen_range(1..4))
                .map(|_| words[rng.gen_range(0..words.len())])
                .collect::<Vec<_>>()
                .join(" ")
        };
        let mut checked = 0;
        for _ in 0..1000 {
            let (p, h, s) = (phrase(&mut rng), phrase(&mut rng), phrase(&mut rng));
            if tokens(&h) == tokens(&s) {
                continue;
            }
            let a = DefeasibleQuery::new(&p, &h, &s, None).unwrap();
            let b = DefeasibleQuery::new(&p, &s, &h, None).unwrap();
            checked += 1;
            assert_ne!(embed_query(&a, &e).unwrap(), embed_query(&b, &e).unwrap());
        }
        assert!(checked > 900);
    }

    #[test]
    fn external_table() {
        let t = EmbeddingTable::parse("d=4\nhello\t1 0 0 0\nworld there\t0 1 0 0.5\n").unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.get("world there").unwrap(), &[0.0, 1.0, 0.0, 0.5]);
        assert!(matches!(t.get("absent"), Err(EmbedError::MissingKey(k)) if k == "absent"));
        assert!(matches!(
            EmbeddingTable::parse("d=4\nx\t1 2 3\n"),
            Err(EmbedError::DimensionMismatch { expected: 4, found: 3 })
        ));
        assert!(matches!(EmbeddingTable::parse("dim 4\n"), Err(EmbedError::Malformed { line: 1, .. })));
    }
}
