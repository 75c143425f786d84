//! Prompt rendering and score parsing for LLM relevance scoring.
//!
//! A prompt has four blocks: the scoring instruction, the user's own tweets
//! numbered from 1, the followee tweets keyed `<followee_id>_<k>`, and the
//! output format directive. The model answers with `(key:score)` pairs.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use regex::Regex;

use super::RelevanceScore;
use crate::datamodel::{Tweet, User};
use crate::error::{Error, Result};

pub const DEFAULT_MAX_TWEETS_PER_PROMPT: usize = 25;

pub const INSTRUCTION: &str = "Your task is to analyze the degree to which tweets posted by the \
original user are related to other posts. The degree of correlation between a post and a post is \
represented by a score, the score 1 means no association, the score 2 means weak association, and \
the score 3 means strong association.";

pub const OUTPUT_FORMAT: &str = "Use score to indicate the degree to which these tweets are related \
to the tweets posted by users, and are given in the order of tweets, only output the tweet number \
and corresponding score, the format example is \"(tweet number:corresponding score).\"";

/// A followee tweet together with the key it is shown under.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyedTweet {
    pub key: String,
    pub tweet_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub text: String,
    pub keys: Vec<KeyedTweet>,
}

/// Assigns `<author_id>_<k>` keys, `k` counting from 1 per author in input order.
pub fn followee_keys(followee_tweets: &[Tweet]) -> Vec<KeyedTweet> {
    let mut counters: BTreeMap<&str, usize> = BTreeMap::new();
    followee_tweets
        .iter()
        .map(|t| {
            let k = counters.entry(t.author_id.as_str()).or_insert(0);
            *k += 1;
            KeyedTweet {
                key: format!("{}_{}", t.author_id, k),
                tweet_id: t.id.clone(),
            }
        })
        .collect()
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Renders the prompts for one user, chunking followee tweets at
/// `max_per_prompt`. Keys stay stable across chunks.
pub fn build_prompts(
    _user: &User,
    own_tweets: &[&Tweet],
    followee_tweets: &[Tweet],
    max_per_prompt: usize,
) -> Vec<Prompt> {
    let keys = followee_keys(followee_tweets);
    let mut own_block = String::new();
    for (i, t) in own_tweets.iter().enumerate() {
        own_block.push_str(&format!("{}:\"{}\"\n", i + 1, one_line(&t.text)));
    }

    keys.chunks(max_per_prompt.max(1))
        .zip(followee_tweets.chunks(max_per_prompt.max(1)))
        .map(|(kc, tc)| {
            let mut text = String::new();
            text.push_str("Instruction:\n");
            text.push_str(INSTRUCTION);
            text.push_str("\n\nUser's Tweets:\n");
            text.push_str(&own_block);
            text.push_str("\nFollowees's Tweets:\n");
            for (k, t) in kc.iter().zip(tc) {
                text.push_str(&format!("{}:{}\n", k.key, one_line(&t.text)));
            }
            text.push_str("\nOutput format:\n");
            text.push_str(OUTPUT_FORMAT);
            text.push('\n');
            Prompt {
                text,
                keys: kc.to_vec(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedScores {
    pub scores: BTreeMap<String, RelevanceScore>,
    pub warnings: Vec<String>,
}

fn pair_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r#"\(\s*["']?([^()"'\s:,]+)["']?\s*:\s*["']?(-?\d+)["']?\s*\)"#).expect("valid regex")
    })
}

/// Extracts `(key:score)` pairs from a raw model response.
///
/// Unknown keys are dropped, expected keys the model skipped and scores
/// outside 1..=3 become 1. Each of those cases adds a warning.
pub fn parse_scores(response: &str, expected_keys: &[String]) -> Result<ParsedScores> {
    let expected: BTreeSet<&str> = expected_keys.iter().map(String::as_str).collect();
    let mut scores = BTreeMap::new();
    let mut warnings = Vec::new();
    let mut pairs = 0usize;

    for cap in pair_regex().captures_iter(response) {
        pairs += 1;
        let key = &cap[1];
        let raw = &cap[2];
        if !expected.contains(key) {
            warnings.push(format!("ignoring unknown key {key}"));
            continue;
        }
        let score = match raw.parse::<i64>().ok().and_then(|v| RelevanceScore::new(v).ok()) {
            Some(s) => s,
            None => {
                warnings.push(format!("score {raw} for {key} is out of range; treating as 1"));
                RelevanceScore::NONE
            }
        };
        if scores.insert(key.to_string(), score).is_some() {
            warnings.push(format!("key {key} scored more than once; keeping the last score"));
        }
    }
    if pairs == 0 {
        return Err(Error::UnparseableResponse);
    }
    for key in &expected {
        if !scores.contains_key(*key) {
            warnings.push(format!("no score for {key}; treating as 1"));
            scores.insert((*key).to_string(), RelevanceScore::NONE);
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(ParsedScores { scores, warnings })
}

/// Renders scores in the response format the model is asked for.
pub fn render_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, RelevanceScore)>) -> String {
    pairs
        .into_iter()
        .map(|(k, s)| format!("({}:{})", k, s.value()))
        .collect::<Vec<_>>()
        .join(", ")
}
