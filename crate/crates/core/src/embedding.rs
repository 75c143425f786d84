//! Fixed-width node embeddings.
//!
//! Two embedders are available. The hashing embedder is a self-contained
//! stand-in for a sentence encoder: tokens are hashed into signed buckets,
//! mean pooled and L2 normalized. The external embedder reads precomputed
//! vectors keyed by node id (user id or tweet id).

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::datamodel::{SocialGraph, Tweet, User};
use crate::error::{Error, Result};
use crate::ingestion::{read_jsonl, write_jsonl};

pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const DEFAULT_HASHING_DIM: usize = 256;
pub const DEFAULT_EXTERNAL_DIM: usize = 768;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EmbedderSpec {
    Hashing { dim: usize, seed: u64 },
    External { dim: usize, path: PathBuf },
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        EmbedderSpec::Hashing {
            dim: DEFAULT_HASHING_DIM,
            seed: 0,
        }
    }
}

impl EmbedderSpec {
    pub fn dim(&self) -> usize {
        match self {
            EmbedderSpec::Hashing { dim, .. } | EmbedderSpec::External { dim, .. } => *dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub vector: Vec<f64>,
    /// No content to embed; `vector` is all zeros.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Token<'a> {
    Special(&'a str),
    Word(String),
}

/// Lowercases and splits on anything that is not alphanumeric. The literal
/// separators `[CLS]` and `[SEP]` survive as special tokens.
pub fn tokenize(text: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut rest = text;
    while !rest.is_empty() {
        let next_special = [CLS, SEP]
            .iter()
            .filter_map(|s| rest.find(s).map(|p| (p, *s)))
            .min_by_key(|&(p, _)| p);
        let (plain, special) = match next_special {
            Some((p, s)) => (&rest[..p], Some(s)),
            None => (rest, None),
        };
        out.extend(
            plain
                .split(|c: char| !c.is_alphanumeric())
                .filter(|w| !w.is_empty())
                .map(|w| Token::Word(w.to_lowercase())),
        );
        match special {
            Some(s) => {
                out.push(Token::Special(s));
                rest = &rest[plain.len() + s.len()..];
            }
            None => break,
        }
    }
    out
}

/// Renders `[CLS] d [SEP] t1 [SEP] ... tn [SEP]`.
pub fn user_sequence(description: &str, tweets: &[&Tweet]) -> String {
    let mut s = format!("{CLS} {description} {SEP}");
    for t in tweets {
        s.push(' ');
        s.push_str(&t.text);
        s.push(' ');
        s.push_str(SEP);
    }
    s
}

fn seeded_hash(seed: u64, token: &str) -> u64 {
    // FNV-1a over the seed and token bytes, then a splitmix64 finalizer.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in seed.to_le_bytes().iter().chain(token.as_bytes()) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

fn hash_embed(text: &str, dim: usize, seed: u64) -> Embedding {
    let mut v = vec![0.0; dim];
    let mut count = 0usize;
    for tok in tokenize(text) {
        // Separators only delimit segments; they carry no content.
        let Token::Word(w) = tok else { continue };
        let h = seeded_hash(seed, &w);
        let bucket = (h % dim as u64) as usize;
        let sign = if (h >> 40) & 1 == 1 { 1.0 } else { -1.0 };
        v[bucket] += sign;
        count += 1;
    }
    if count == 0 {
        return Embedding {
            vector: v,
            degenerate: true,
        };
    }
    for x in &mut v {
        *x /= count as f64;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        // every token cancelled out
        return Embedding {
            vector: v,
            degenerate: true,
        };
    }
    for x in &mut v {
        *x /= norm;
    }
    Embedding {
        vector: v,
        degenerate: false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalRecord {
    pub node_id: String,
    pub vector: Vec<f64>,
}

pub fn read_external_table(path: &Path, dim: usize) -> Result<HashMap<String, Vec<f64>>> {
    let mut table = HashMap::new();
    for (line, rec) in read_jsonl::<ExternalRecord>(path)? {
        if rec.vector.len() != dim {
            return Err(Error::Malformed {
                file: path.display().to_string(),
                line,
                message: format!("vector has {} entries, expected {dim}", rec.vector.len()),
            });
        }
        if rec.vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::Malformed {
                file: path.display().to_string(),
                line,
                message: "non-finite vector entry".into(),
            });
        }
        if table.insert(rec.node_id.clone(), rec.vector).is_some() {
            return Err(Error::DuplicateId {
                kind: "embedding",
                id: rec.node_id,
            });
        }
    }
    Ok(table)
}

pub fn write_external_table(path: &Path, records: &[ExternalRecord]) -> Result<()> {
    write_jsonl(path, records)
}

/// An embedder ready to use, with any external table already loaded.
#[derive(Debug, Clone)]
pub enum Embedder {
    Hashing { dim: usize, seed: u64 },
    External { dim: usize, table: HashMap<String, Vec<f64>> },
}

impl Embedder {
    pub fn from_spec(spec: &EmbedderSpec) -> Result<Self> {
        let dim = spec.dim();
        if dim < 8 {
            return Err(Error::EmbedderSpec(format!("dim must be at least 8, got {dim}")));
        }
        Ok(match spec {
            EmbedderSpec::Hashing { seed, .. } => Embedder::Hashing { dim, seed: *seed },
            EmbedderSpec::External { path, .. } => Embedder::External {
                dim,
                table: read_external_table(path, dim)?,
            },
        })
    }

    pub fn from_table(dim: usize, table: HashMap<String, Vec<f64>>) -> Self {
        Embedder::External { dim, table }
    }

    pub fn dim(&self) -> usize {
        match self {
            Embedder::Hashing { dim, .. } | Embedder::External { dim, .. } => *dim,
        }
    }

    fn lookup(&self, table: &HashMap<String, Vec<f64>>, id: &str) -> Result<Embedding> {
        let v = table
            .get(id)
            .ok_or_else(|| Error::MissingEmbedding(id.to_string()))?;
        Ok(Embedding {
            degenerate: v.iter().all(|&x| x == 0.0),
            vector: v.clone(),
        })
    }

    /// `tweets` must be the user's own tweets in stored order.
    pub fn embed_user(&self, user: &User, tweets: &[&Tweet]) -> Result<Embedding> {
        match self {
            Embedder::Hashing { dim, seed } => {
                Ok(hash_embed(&user_sequence(&user.description, tweets), *dim, *seed))
            }
            Embedder::External { table, .. } => self.lookup(table, &user.id),
        }
    }

    pub fn embed_tweet(&self, tweet: &Tweet) -> Result<Embedding> {
        match self {
            Embedder::Hashing { dim, seed } => Ok(hash_embed(&tweet.text, *dim, *seed)),
            Embedder::External { table, .. } => self.lookup(table, &tweet.id),
        }
    }
}

/// Node features, one row per graph node in graph order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: Array2<f64>,
    pub degenerate: Vec<bool>,
}

impl FeatureMatrix {
    pub fn new(values: Array2<f64>) -> Self {
        let degenerate = values
            .rows()
            .into_iter()
            .map(|r| r.iter().all(|&x| x == 0.0))
            .collect();
        FeatureMatrix { values, degenerate }
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }
}

pub fn assemble_feature_matrix(graph: &SocialGraph, embedder: &Embedder) -> Result<FeatureMatrix> {
    let n = graph.num_nodes();
    let dim = embedder.dim();
    let mut values = Array2::zeros((n, dim));
    let mut degenerate = vec![false; n];
    let mut tweet_cache: HashMap<&str, Embedding> = HashMap::new();

    #[allow(clippy::needless_range_loop)]
    for node in 0..n {
        let emb = match graph.user(node) {
            Some(user) => embedder.embed_user(user, &graph.own_tweets(node))?,
            None => {
                let tweet = &graph.tweet_node(node).expect("node is a tweet").tweet;
                if let Some(e) = tweet_cache.get(tweet.id.as_str()) {
                    e.clone()
                } else {
                    let e = embedder.embed_tweet(tweet)?;
                    tweet_cache.insert(tweet.id.as_str(), e.clone());
                    e
                }
            }
        };
        if emb.vector.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: emb.vector.len(),
            });
        }
        values.row_mut(node).assign(&ndarray::ArrayView1::from(&emb.vector));
        degenerate[node] = emb.degenerate;
    }
    Ok(FeatureMatrix { values, degenerate })
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}
