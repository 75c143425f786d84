//! Relevance filtering of followee tweets.
//!
//! Every followee tweet gets a score in {1, 2, 3} (none, weak, strong
//! relevance to the user). Tweets scoring at least 2 are retained and later
//! attached to the user in the graph; the rest are discarded. Scores come
//! from an LLM (HTTP or mock) or from embedding cosine similarity.

pub mod cache;
pub mod client;
pub mod prompt;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

pub use cache::VerdictCache;
pub use client::{ChatBackend, HttpBackend, LlmEndpointConfig, MockBackend, ScoringRequest};
pub use prompt::{build_prompts, parse_scores, render_pairs, ParsedScores, Prompt};

use crate::datamodel::{Tweet, User};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct RelevanceScore(u8);

impl RelevanceScore {
    pub const NONE: RelevanceScore = RelevanceScore(1);
    pub const WEAK: RelevanceScore = RelevanceScore(2);
    pub const STRONG: RelevanceScore = RelevanceScore(3);

    pub fn new(value: i64) -> std::result::Result<Self, i64> {
        match value {
            1..=3 => Ok(RelevanceScore(value as u8)),
            other => Err(other),
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn is_retained(self) -> bool {
        self.0 >= 2
    }
}

impl TryFrom<u8> for RelevanceScore {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Self, String> {
        RelevanceScore::new(i64::from(v)).map_err(|v| format!("relevance score {v} outside 1..=3"))
    }
}

impl From<RelevanceScore> for u8 {
    fn from(s: RelevanceScore) -> u8 {
        s.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Llm,
    Cosine,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub user_id: String,
    pub scores: BTreeMap<String, RelevanceScore>,
    pub retained: BTreeSet<String>,
    pub discarded: BTreeSet<String>,
    pub provenance: Provenance,
}

impl FilterReport {
    pub fn from_scores(
        user_id: impl Into<String>,
        scores: BTreeMap<String, RelevanceScore>,
        provenance: Provenance,
    ) -> Self {
        let (retained, discarded): (Vec<_>, Vec<_>) =
            scores.iter().partition(|(_, s)| s.is_retained());
        FilterReport {
            user_id: user_id.into(),
            retained: retained.into_iter().map(|(t, _)| t.clone()).collect(),
            discarded: discarded.into_iter().map(|(t, _)| t.clone()).collect(),
            scores,
            provenance,
        }
    }
}

/// Writes one report per line.
pub fn write_filter_reports(path: &std::path::Path, reports: &[FilterReport]) -> Result<()> {
    crate::ingestion::write_jsonl(path, reports)
}

pub fn read_filter_reports(path: &std::path::Path) -> Result<Vec<FilterReport>> {
    Ok(crate::ingestion::read_jsonl(path)?.into_iter().map(|(_, r)| r).collect())
}

pub const COSINE_WEAK: f64 = 0.7;
pub const COSINE_STRONG: f64 = 0.85;

/// `[0.85, 1]` is strong, `[0.7, 0.85)` weak, anything lower none.
pub fn score_from_cosine(cos: f64) -> RelevanceScore {
    if cos >= COSINE_STRONG {
        RelevanceScore::STRONG
    } else if cos >= COSINE_WEAK {
        RelevanceScore::WEAK
    } else {
        RelevanceScore::NONE
    }
}

/// Cosine-similarity baseline. Zero vectors always score 1.
pub fn filter_cosine(
    user_id: &str,
    user_vec: &[f64],
    tweet_vecs: &[(String, Vec<f64>)],
) -> Result<FilterReport> {
    let mut scores = BTreeMap::new();
    for (tid, v) in tweet_vecs {
        if v.len() != user_vec.len() {
            return Err(Error::DimensionMismatch {
                expected: user_vec.len(),
                actual: v.len(),
            });
        }
        scores.insert(tid.clone(), score_from_cosine(crate::embedding::cosine(user_vec, v)));
    }
    Ok(FilterReport::from_scores(user_id, scores, Provenance::Cosine))
}

/// Everything needed to score one user's followee tweets.
#[derive(Debug, Clone)]
pub struct FilterJob<'a> {
    pub user: &'a User,
    pub own_tweets: Vec<&'a Tweet>,
    pub followee_tweets: Vec<&'a Tweet>,
}

/// Scores one user's followee tweets through `backend`.
pub fn filter_llm(
    job: &FilterJob<'_>,
    backend: &dyn ChatBackend,
    config: &LlmEndpointConfig,
    cache: &mut VerdictCache,
) -> Result<FilterReport> {
    let mut reports = filter_users_llm(std::slice::from_ref(job), backend, config, cache)?;
    Ok(reports.remove(0))
}

/// Scores many users, keeping up to `config.max_in_flight` requests running.
///
/// Results are merged by tweet id, so the order in which requests finish
/// never changes a report. Cached verdicts are reused and new ones are added
/// to `cache` after all requests complete.
pub fn filter_users_llm(
    jobs: &[FilterJob<'_>],
    backend: &dyn ChatBackend,
    config: &LlmEndpointConfig,
    cache: &mut VerdictCache,
) -> Result<Vec<FilterReport>> {
    config.validate()?;
    let model = backend.model().to_string();

    let mut known: Vec<BTreeMap<String, RelevanceScore>> = Vec::with_capacity(jobs.len());
    let mut tasks: Vec<(usize, Prompt)> = Vec::new();
    for (j, job) in jobs.iter().enumerate() {
        let mut hits = BTreeMap::new();
        let mut pending: Vec<Tweet> = Vec::new();
        for t in &job.followee_tweets {
            match cache.get(&job.user.id, &t.id, &model) {
                Some(s) => {
                    hits.insert(t.id.clone(), s);
                }
                None => pending.push((*t).clone()),
            }
        }
        known.push(hits);
        if !pending.is_empty() {
            for p in build_prompts(job.user, &job.own_tweets, &pending, config.max_tweets_per_prompt) {
                tasks.push((j, p));
            }
        }
    }

    let results: Vec<Mutex<Option<Result<ParsedScores>>>> =
        tasks.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = config.max_in_flight.min(tasks.len()).max(1);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((j, prompt)) = tasks.get(i) else { break };
                let request = ScoringRequest {
                    user_id: &jobs[*j].user.id,
                    prompt: &prompt.text,
                    keys: &prompt.keys,
                };
                let keys: Vec<String> = prompt.keys.iter().map(|k| k.key.clone()).collect();
                let out = backend
                    .complete(&request)
                    .and_then(|text| parse_scores(&text, &keys));
                *results[i].lock().expect("result slot") = Some(out);
            });
        }
    });

    for ((j, prompt), slot) in tasks.iter().zip(results) {
        let parsed = slot.into_inner().expect("result slot").expect("task ran")?;
        for k in &prompt.keys {
            let score = parsed.scores.get(&k.key).copied().unwrap_or(RelevanceScore::NONE);
            known[*j].insert(k.tweet_id.clone(), score);
            cache.insert(&jobs[*j].user.id, &k.tweet_id, &model, score);
        }
    }

    Ok(jobs
        .iter()
        .zip(known)
        .map(|(job, scores)| FilterReport::from_scores(job.user.id.clone(), scores, backend.provenance()))
        .collect())
}
