use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RelevanceScore;
use crate::error::{Error, Result};
use crate::ingestion::{read_jsonl, write_jsonl};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheRecord {
    user_id: String,
    tweet_id: String,
    model: String,
    score: u8,
}

/// Relevance verdicts keyed by `(user_id, tweet_id, model)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerdictCache {
    entries: BTreeMap<(String, String, String), RelevanceScore>,
}

impl VerdictCache {
    /// Loads the cache; a missing file yields an empty cache.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Ok(Self::default());
        }
        let mut cache = Self::default();
        for (line, r) in read_jsonl::<CacheRecord>(path)? {
            let score = RelevanceScore::new(i64::from(r.score)).map_err(|_| Error::Malformed {
                file: path.display().to_string(),
                line,
                message: format!("cached score {} outside 1..=3", r.score),
            })?;
            cache.entries.insert((r.user_id, r.tweet_id, r.model), score);
        }
        Ok(cache)
    }

    /// Writes all entries sorted by key.
    pub fn save(&self, path: &Path) -> Result<()> {
        let records: Vec<CacheRecord> = self
            .entries
            .iter()
            .map(|((u, t, m), s)| CacheRecord {
                user_id: u.clone(),
                tweet_id: t.clone(),
                model: m.clone(),
                score: s.value(),
            })
            .collect();
        write_jsonl(path, &records)
    }

    pub fn get(&self, user_id: &str, tweet_id: &str, model: &str) -> Option<RelevanceScore> {
        self.entries
            .get(&(user_id.to_string(), tweet_id.to_string(), model.to_string()))
            .copied()
    }

    pub fn insert(&mut self, user_id: &str, tweet_id: &str, model: &str, score: RelevanceScore) {
        self.entries
            .insert((user_id.to_string(), tweet_id.to_string(), model.to_string()), score);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
