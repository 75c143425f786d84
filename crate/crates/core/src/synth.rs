//! Synthetic labeled social graphs with planted feature structure.
//!
//! Every node vector is a shared topic direction plus label signal plus
//! Gaussian noise. Feature dimensions are split into two planted groups:
//!
//! * graph dims: a user carries the majority label of its followees, a tweet
//!   carries its author's label. Averaging over a user's neighbourhood
//!   sharpens these dims.
//! * content dims: a user carries its own label with a small amplitude,
//!   tweets carry tweet-specific random content. Averaging dilutes them.
//!
//! A `relevance_noise` fraction of tweets is off-topic: a pure noise vector
//! without the topic direction, and word-salad text. The mock LLM table
//! scores on-topic tweets 3 and off-topic tweets 1.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datamodel::{StanceLabel, TargetId, Tweet, User, UserRole};
use crate::embedding::{write_external_table, Embedder, ExternalRecord};
use crate::error::{Error, Result};
use crate::evaluation::pipeline::{prepare_graph, prepare_seed, Retained};
use crate::ingestion::{assign_roles, save_corpus, Corpus};
use crate::relevance::{MockBackend, RelevanceScore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_users: usize,
    /// Inclusive `[min, max]`.
    pub tweets_per_user: [usize; 2],
    /// Inclusive `[min, max]`.
    pub followees_per_user: [usize; 2],
    /// Probability that a follow edge links two users with the same label.
    pub homophily: f64,
    /// Favor, against, none.
    pub label_distribution: [f64; 3],
    pub dim: usize,
    pub graph_fraction: f64,
    /// Standard deviation of the per-dimension Gaussian noise.
    pub noise: f64,
    /// Fraction of tweets that are off-topic.
    pub relevance_noise: f64,
    pub seed: u64,
    pub targets: Vec<String>,
    /// Label amplitude on graph dims.
    pub graph_signal: f64,
    /// Label amplitude on content dims of user vectors.
    pub content_signal: f64,
    /// Scale of the shared topic direction; also the scale of off-topic vectors.
    pub topic_scale: f64,
    /// Scale of tweet-specific content on content dims.
    pub tweet_content_scale: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_users: 1000,
            tweets_per_user: [2, 5],
            followees_per_user: [3, 8],
            homophily: 0.9,
            label_distribution: [0.3, 0.4, 0.3],
            dim: 128,
            graph_fraction: 0.3,
            noise: 0.5,
            relevance_noise: 0.3,
            seed: 0,
            targets: vec!["synth".into()],
            graph_signal: 0.05,
            content_signal: 0.08,
            topic_scale: 1.5,
            tweet_content_scale: 1.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, p) in [
            ("homophily", self.homophily),
            ("graph_fraction", self.graph_fraction),
            ("relevance_noise", self.relevance_noise),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must be in [0, 1], got {p}"));
            }
        }
        if self.label_distribution.iter().any(|&p| !(0.0..=1.0).contains(&p))
            || (self.label_distribution.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return bad(format!("label distribution {:?} must sum to 1", self.label_distribution));
        }
        if self.n_users < 2 || self.dim < 2 || self.targets.is_empty() {
            return bad("need at least 2 users, 2 dims and one target".into());
        }
        for (name, [lo, hi]) in [
            ("tweets_per_user", self.tweets_per_user),
            ("followees_per_user", self.followees_per_user),
        ] {
            if lo > hi {
                return bad(format!("{name} range [{lo}, {hi}] is empty"));
            }
        }
        if self.followees_per_user[1] > self.n_users - 1 {
            return Err(Error::InfeasibleSynth(format!(
                "followee range max {} exceeds n_users - 1 = {}",
                self.followees_per_user[1],
                self.n_users - 1
            )));
        }
        for (name, v) in [
            ("noise", self.noise),
            ("graph_signal", self.graph_signal),
            ("content_signal", self.content_signal),
            ("topic_scale", self.topic_scale),
            ("tweet_content_scale", self.tweet_content_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedMetadata {
    pub graph_dims: Vec<usize>,
    pub content_dims: Vec<usize>,
    pub spec: SynthSpec,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub corpus: Corpus,
    /// One vector per user id and tweet id.
    pub embeddings: Vec<ExternalRecord>,
    pub mock: MockBackend,
    pub planted: PlantedMetadata,
    pub off_topic: BTreeSet<String>,
}

/// Where [`SynthCorpus::write`] put each file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthPaths {
    pub users: PathBuf,
    pub tweets: PathBuf,
    pub edges: PathBuf,
    pub embeddings: PathBuf,
    pub mock: PathBuf,
    pub planted: PathBuf,
}

impl SynthPaths {
    pub fn in_dir(dir: &Path) -> Self {
        SynthPaths {
            users: dir.join("users.jsonl"),
            tweets: dir.join("tweets.jsonl"),
            edges: dir.join("edges.jsonl"),
            embeddings: dir.join("embeddings.jsonl"),
            mock: dir.join("mock_llm.jsonl"),
            planted: dir.join("planted.json"),
        }
    }
}

impl SynthCorpus {
    pub fn write(&self, dir: &Path) -> Result<SynthPaths> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = SynthPaths::in_dir(dir);
        save_corpus(&self.corpus, &p.users, &p.tweets, &p.edges)?;
        write_external_table(&p.embeddings, &self.embeddings)?;
        self.mock.save(&p.mock)?;
        let mut s = serde_json::to_string_pretty(&self.planted)?;
        s.push('\n');
        std::fs::write(&p.planted, s).map_err(|e| Error::io(&p.planted, e))?;
        Ok(p)
    }

    pub fn embedder(&self) -> Embedder {
        let table: HashMap<String, Vec<f64>> = self
            .embeddings
            .iter()
            .map(|r| (r.node_id.clone(), r.vector.clone()))
            .collect();
        Embedder::from_table(self.planted.spec.dim, table)
    }

    /// Followee tweets a perfect relevance judge keeps: the on-topic ones.
    pub fn retained_on_topic(&self) -> Retained {
        let idx = crate::evaluation::pipeline::CorpusIndex::new(&self.corpus);
        self.corpus
            .users
            .iter()
            .filter_map(|u| {
                let kept: Vec<Tweet> = idx
                    .followee_tweets(u)
                    .into_iter()
                    .filter(|t| !self.off_topic.contains(&t.id))
                    .cloned()
                    .collect();
                (!kept.is_empty()).then(|| (u.id.clone(), kept))
            })
            .collect()
    }
}

const SALAD: &[&str] = &[
    "weather", "recipe", "football", "guitar", "coffee", "garden", "movie", "travel", "puppy", "sunset",
    "bicycle", "painting", "concert", "beach", "novel", "pizza", "mountain", "podcast", "marathon", "camera",
];

fn stance_phrase(label: StanceLabel) -> &'static str {
    match label {
        StanceLabel::Favor => "supports",
        StanceLabel::Against => "opposes",
        StanceLabel::None => "is unsure about",
    }
}

fn sample_label(rng: &mut ChaCha8Rng, dist: &[f64; 3]) -> StanceLabel {
    let x: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in dist.iter().enumerate() {
        acc += p;
        if x < acc {
            return StanceLabel::from_index(i).expect("three classes");
        }
    }
    // Rounding left a sliver above the last cumulative bound.
    StanceLabel::ALL
        .into_iter()
        .rev()
        .find(|l| dist[l.index()] > 0.0)
        .unwrap_or(StanceLabel::None)
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Picks a user not in `taken` from `pool`, or `None` if every one is taken.
fn pick(rng: &mut ChaCha8Rng, pool: &[usize], taken: &BTreeSet<usize>) -> Option<usize> {
    let free = pool.len() - pool.iter().filter(|p| taken.contains(p)).count();
    if free == 0 {
        return None;
    }
    loop {
        let c = pool[rng.random_range(0..pool.len())];
        if !taken.contains(&c) {
            return Some(c);
        }
    }
}

pub fn generate(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_users;
    let d = spec.dim;
    let targets: Vec<TargetId> = spec.targets.iter().map(|t| TargetId::new(t)).collect::<Result<_>>()?;

    let labels: Vec<StanceLabel> = (0..n).map(|_| sample_label(&mut rng, &spec.label_distribution)).collect();

    let mut dims: Vec<usize> = (0..d).collect();
    dims.shuffle(&mut rng);
    let k_graph = (spec.graph_fraction * d as f64).round() as usize;
    let mut graph_dims = dims[..k_graph].to_vec();
    let mut content_dims = dims[k_graph..].to_vec();
    graph_dims.sort_unstable();
    content_dims.sort_unstable();
    let is_graph: Vec<bool> = (0..d).map(|m| graph_dims.binary_search(&m).is_ok()).collect();

    // prototypes[class][dim]: each dim gives the three classes -1, 0, 1 in random order
    let mut prototypes = [vec![0.0; d], vec![0.0; d], vec![0.0; d]];
    for m in 0..d {
        let mut vals = [-1.0, 0.0, 1.0];
        vals.shuffle(&mut rng);
        for (proto, v) in prototypes.iter_mut().zip(vals) {
            proto[m] = v;
        }
    }
    let topic: Vec<f64> = (0..d).map(|_| spec.topic_scale * gaussian(&mut rng)).collect();

    // follow edges with homophily bias
    let mut by_label: [Vec<usize>; 3] = Default::default();
    for (i, l) in labels.iter().enumerate() {
        by_label[l.index()].push(i);
    }
    let mut followees: Vec<Vec<usize>> = Vec::with_capacity(n);
    for i in 0..n {
        let count = rng.random_range(spec.followees_per_user[0]..=spec.followees_per_user[1]);
        let same: Vec<usize> = by_label[labels[i].index()].iter().copied().filter(|&j| j != i).collect();
        let other: Vec<usize> = (0..3)
            .filter(|&c| c != labels[i].index())
            .flat_map(|c| by_label[c].iter().copied())
            .collect();
        let mut taken = BTreeSet::new();
        let mut order = Vec::with_capacity(count);
        for _ in 0..count {
            let want_same = rng.random::<f64>() < spec.homophily;
            let (first, second) = if want_same { (&same, &other) } else { (&other, &same) };
            let j = pick(&mut rng, first, &taken)
                .or_else(|| pick(&mut rng, second, &taken))
                .expect("followee range was validated against n_users");
            taken.insert(j);
            order.push(j);
        }
        followees.push(order);
    }

    let user_id = |i: usize| format!("u{i:05}");
    let mut users = Vec::with_capacity(n);
    let mut tweets = Vec::new();
    let mut author_of: Vec<usize> = Vec::new();
    let mut off_topic = BTreeSet::new();
    for i in 0..n {
        let target = &targets[i % targets.len()];
        let count = rng.random_range(spec.tweets_per_user[0]..=spec.tweets_per_user[1]);
        let mut ids = Vec::with_capacity(count);
        for k in 0..count {
            let id = format!("t{i:05}_{k}");
            let off = rng.random::<f64>() < spec.relevance_noise;
            let text = if off {
                off_topic.insert(id.clone());
                (0..6).map(|_| SALAD[rng.random_range(0..SALAD.len())]).collect::<Vec<_>>().join(" ")
            } else {
                format!("someone who {} {} posted this #{}", stance_phrase(labels[i]), target, target)
            };
            tweets.push(Tweet::new(id.clone(), user_id(i), text));
            author_of.push(i);
            ids.push(id);
        }
        users.push(User {
            id: user_id(i),
            description: format!("user {i} {} {target}", stance_phrase(labels[i])),
            tweet_ids: ids,
            followee_ids: followees[i].iter().map(|&j| user_id(j)).collect(),
            role: UserRole::Isolated,
            label: Some(labels[i]),
            target: target.clone(),
        });
    }
    assign_roles(&mut users);

    let mut embeddings = Vec::with_capacity(n + tweets.len());
    for i in 0..n {
        let mut counts = [0usize; 3];
        for &j in &followees[i] {
            counts[labels[j].index()] += 1;
        }
        let majority = if followees[i].is_empty() {
            labels[i]
        } else {
            // ties go to the lowest class index
            let best = (0..3).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).expect("three classes");
            StanceLabel::from_index(best).expect("three classes")
        };
        let v: Vec<f64> = (0..d)
            .map(|m| {
                let signal = if is_graph[m] {
                    spec.graph_signal * prototypes[majority.index()][m]
                } else {
                    spec.content_signal * prototypes[labels[i].index()][m]
                };
                topic[m] + signal + spec.noise * gaussian(&mut rng)
            })
            .collect();
        embeddings.push(ExternalRecord {
            node_id: user_id(i),
            vector: v,
        });
    }
    for (t, &a) in tweets.iter().zip(&author_of) {
        let v: Vec<f64> = if off_topic.contains(&t.id) {
            (0..d).map(|_| spec.topic_scale * gaussian(&mut rng)).collect()
        } else {
            (0..d)
                .map(|m| {
                    let signal = if is_graph[m] {
                        spec.graph_signal * prototypes[labels[a].index()][m]
                    } else {
                        spec.tweet_content_scale * gaussian(&mut rng)
                    };
                    topic[m] + signal + spec.noise * gaussian(&mut rng)
                })
                .collect()
        };
        embeddings.push(ExternalRecord {
            node_id: t.id.clone(),
            vector: v,
        });
    }

    let verdicts: BTreeMap<String, RelevanceScore> = tweets
        .iter()
        .map(|t| {
            let s = if off_topic.contains(&t.id) {
                RelevanceScore::NONE
            } else {
                RelevanceScore::STRONG
            };
            (t.id.clone(), s)
        })
        .collect();

    Ok(SynthCorpus {
        corpus: Corpus { users, tweets },
        embeddings,
        mock: MockBackend {
            verdicts,
            scripted: BTreeMap::new(),
        },
        planted: PlantedMetadata {
            graph_dims,
            content_dims,
            spec: spec.clone(),
        },
        off_topic,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTfiReport {
    pub seed: u64,
    /// Size of the top block compared against the planted graph dims.
    pub k: usize,
    pub recovered: usize,
    pub recovered_fraction: f64,
    /// TFI score per dimension.
    pub scores: Vec<f64>,
}

/// Ranks features on the first target's training split (with on-topic
/// followee tweets retained) and counts planted graph dims in the top
/// `|graph_dims|` block.
pub fn planted_tfi_check(synth: &SynthCorpus, seed: u64, bins: usize) -> Result<PlantedTfiReport> {
    let target = synth.corpus.users[0].target.clone();
    let pg = prepare_graph(&synth.corpus, std::slice::from_ref(&target), &synth.retained_on_topic(), &synth.embedder())?;
    let ss = prepare_seed(&pg, &target, None, seed, bins)?;
    let k = synth.planted.graph_dims.len();
    let top: BTreeSet<usize> = ss.ranking.order[..k].iter().copied().collect();
    let recovered = synth.planted.graph_dims.iter().filter(|m| top.contains(m)).count();
    Ok(PlantedTfiReport {
        seed,
        k,
        recovered,
        recovered_fraction: if k == 0 { 1.0 } else { recovered as f64 / k as f64 },
        scores: ss.ranking.scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::cosine;
    use crate::evaluation::pipeline::filter_with_cosine;
    use crate::ingestion::load_corpus;

    fn small() -> SynthSpec {
        SynthSpec {
            n_users: 200,
            dim: 32,
            ..Default::default()
        }
    }

    fn same_label_fraction(s: &SynthCorpus) -> f64 {
        let label: HashMap<&str, StanceLabel> =
            s.corpus.users.iter().map(|u| (u.id.as_str(), u.label.unwrap())).collect();
        let (mut same, mut total) = (0usize, 0usize);
        for u in &s.corpus.users {
            for f in &u.followee_ids {
                total += 1;
                same += usize::from(label[f.as_str()] == u.label.unwrap());
            }
        }
        same as f64 / total as f64
    }

    #[test]
    fn deterministic_given_seed() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(a.embeddings, b.embeddings);
        let c = generate(&SynthSpec { seed: 1, ..small() }).unwrap();
        assert_ne!(a.embeddings, c.embeddings);
    }

    #[test]
    fn infeasible_followee_range() {
        let spec = SynthSpec {
            n_users: 5,
            followees_per_user: [1, 5],
            ..Default::default()
        };
        assert!(matches!(generate(&spec), Err(Error::InfeasibleSynth(_))));
    }

    #[test]
    fn full_homophily() {
        let s = generate(&SynthSpec { homophily: 1.0, ..small() }).unwrap();
        assert_eq!(same_label_fraction(&s), 1.0);
    }

    #[test]
    fn half_homophily() {
        let s = generate(&SynthSpec {
            n_users: 2000,
            homophily: 0.5,
            dim: 8,
            ..Default::default()
        })
        .unwrap();
        let f = same_label_fraction(&s);
        assert!((f - 0.5).abs() <= 0.03, "{f}");
    }

    #[test]
    fn files_round_trip_through_ingestion() {
        let s = generate(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = s.write(dir.path()).unwrap();
        let back = load_corpus(&p.users, &p.tweets, &p.edges).unwrap();
        assert_eq!(back, s.corpus);
        let mock = MockBackend::load(&p.mock).unwrap();
        assert_eq!(mock, s.mock);
        let emb = Embedder::from_spec(&crate::embedding::EmbedderSpec::External {
            dim: 32,
            path: p.embeddings.clone(),
        })
        .unwrap();
        assert_eq!(emb.dim(), 32);
    }

    #[test]
    fn content_dims_are_linearly_separable_without_noise() {
        let s = generate(&SynthSpec {
            noise: 0.0,
            relevance_noise: 0.0,
            ..small()
        })
        .unwrap();
        let content = &s.planted.content_dims;
        let users = &s.corpus.users;
        let vecs: Vec<Vec<f64>> = s.embeddings[..users.len()]
            .iter()
            .map(|r| content.iter().map(|&m| r.vector[m]).collect())
            .collect();
        // nearest centroid is a linear probe
        let mut centroids = [vec![0.0; content.len()], vec![0.0; content.len()], vec![0.0; content.len()]];
        let mut counts = [0usize; 3];
        for (u, v) in users.iter().zip(&vecs) {
            let c = u.label.unwrap().index();
            counts[c] += 1;
            for (a, b) in centroids[c].iter_mut().zip(v) {
                *a += b;
            }
        }
        for c in 0..3 {
            centroids[c].iter_mut().for_each(|a| *a /= counts[c] as f64);
        }
        for (u, v) in users.iter().zip(&vecs) {
            let dist = |c: usize| centroids[c].iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let best = (0..3).min_by(|&a, &b| dist(a).total_cmp(&dist(b))).unwrap();
            assert_eq!(best, u.label.unwrap().index());
        }
    }

    #[test]
    fn noiseless_planted_dims_are_recovered() {
        let s = generate(&SynthSpec {
            noise: 0.0,
            homophily: 0.9,
            n_users: 400,
            dim: 40,
            ..Default::default()
        })
        .unwrap();
        let r = planted_tfi_check(&s, 0, 16).unwrap();
        assert_eq!(r.recovered_fraction, 1.0, "{r:?}");
    }

    #[test]
    fn cosine_filter_drops_about_the_off_topic_fraction() {
        let s = generate(&SynthSpec {
            n_users: 150,
            dim: 512,
            relevance_noise: 0.3,
            ..Default::default()
        })
        .unwrap();
        let users: Vec<&User> = s.corpus.users.iter().collect();
        let reports = filter_with_cosine(&s.corpus, &users, &s.embedder()).unwrap();
        let (mut ones, mut total) = (0usize, 0usize);
        for r in &reports {
            total += r.scores.len();
            ones += r.scores.values().filter(|v| v.value() == 1).count();
        }
        let frac = ones as f64 / total as f64;
        assert!((frac - 0.3).abs() <= 0.1, "{frac}");
        // sanity: an on-topic tweet is close to its reader
        let u = &s.embeddings[0].vector;
        let t = s
            .embeddings
            .iter()
            .find(|r| r.node_id.starts_with('t') && !s.off_topic.contains(&r.node_id))
            .unwrap();
        assert!(cosine(u, &t.vector) > 0.7);
    }
}
