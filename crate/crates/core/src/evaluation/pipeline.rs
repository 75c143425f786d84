//! Stage glue shared by the experiment harness, the synthetic checks and the CLI.

use std::collections::{BTreeMap, HashMap};

use crate::datamodel::{build_graph, SocialGraph, StanceLabel, TargetId, Tweet, User};
use crate::embedding::{assemble_feature_matrix, Embedder, FeatureMatrix};
use crate::error::{Error, Result};
use crate::gsi::{train, GsiConfig, GsiInputs, GsiModel, TrainingLog};
use crate::ingestion::{split_dataset, Corpus, DatasetSplit};
use crate::relevance::{
    filter_cosine, filter_users_llm, ChatBackend, FilterJob, FilterReport, LlmEndpointConfig, VerdictCache,
};
use crate::tfi::{rank_tfi, FeatureRouting, FmiRanking};

use super::{compute_metrics, MetricReport};

/// Followee tweets kept for each user, keyed by user id.
pub type Retained = BTreeMap<String, Vec<Tweet>>;

/// Id lookups over a corpus.
#[derive(Debug)]
pub struct CorpusIndex<'a> {
    users: HashMap<&'a str, &'a User>,
    tweets: HashMap<&'a str, &'a Tweet>,
}

impl<'a> CorpusIndex<'a> {
    pub fn new(corpus: &'a Corpus) -> Self {
        CorpusIndex {
            users: corpus.users.iter().map(|u| (u.id.as_str(), u)).collect(),
            tweets: corpus.tweets.iter().map(|t| (t.id.as_str(), t)).collect(),
        }
    }

    pub fn user(&self, id: &str) -> Option<&'a User> {
        self.users.get(id).copied()
    }

    pub fn own_tweets(&self, user: &User) -> Vec<&'a Tweet> {
        user.tweet_ids.iter().filter_map(|t| self.tweets.get(t.as_str()).copied()).collect()
    }

    /// Tweets of every followee, followees in stored order.
    pub fn followee_tweets(&self, user: &User) -> Vec<&'a Tweet> {
        user.followee_ids
            .iter()
            .filter_map(|f| self.user(f))
            .flat_map(|f| self.own_tweets(f))
            .collect()
    }
}

/// Users whose target is one of `targets`, in corpus order.
pub fn users_of<'a>(corpus: &'a Corpus, targets: &[TargetId]) -> Vec<&'a User> {
    corpus.users.iter().filter(|u| targets.contains(&u.target)).collect()
}

/// Keeps every followee tweet; the pipeline without relevance filtering.
pub fn retain_all(corpus: &Corpus, users: &[&User]) -> Retained {
    let idx = CorpusIndex::new(corpus);
    users
        .iter()
        .filter_map(|u| {
            let t: Vec<Tweet> = idx.followee_tweets(u).into_iter().cloned().collect();
            (!t.is_empty()).then(|| (u.id.clone(), t))
        })
        .collect()
}

/// Retained followee tweets from filter reports, in followee order.
pub fn retained_from_reports(corpus: &Corpus, reports: &[FilterReport]) -> Result<Retained> {
    let idx = CorpusIndex::new(corpus);
    let mut out = Retained::new();
    for r in reports {
        let user = idx.user(&r.user_id).ok_or_else(|| Error::UnknownUser(r.user_id.clone()))?;
        let kept: Vec<Tweet> = idx
            .followee_tweets(user)
            .into_iter()
            .filter(|t| r.retained.contains(&t.id))
            .cloned()
            .collect();
        if !kept.is_empty() {
            out.insert(r.user_id.clone(), kept);
        }
    }
    Ok(out)
}

pub fn filter_with_backend(
    corpus: &Corpus,
    users: &[&User],
    backend: &dyn ChatBackend,
    config: &LlmEndpointConfig,
    cache: &mut VerdictCache,
) -> Result<Vec<FilterReport>> {
    let idx = CorpusIndex::new(corpus);
    let jobs: Vec<FilterJob<'_>> = users
        .iter()
        .map(|u| FilterJob {
            user: u,
            own_tweets: idx.own_tweets(u),
            followee_tweets: idx.followee_tweets(u),
        })
        .collect();
    filter_users_llm(&jobs, backend, config, cache)
}

pub fn filter_with_cosine(corpus: &Corpus, users: &[&User], embedder: &Embedder) -> Result<Vec<FilterReport>> {
    let idx = CorpusIndex::new(corpus);
    let mut tweet_vecs: HashMap<&str, Vec<f64>> = HashMap::new();
    users
        .iter()
        .map(|u| {
            let uv = embedder.embed_user(u, &idx.own_tweets(u))?.vector;
            let mut tv = Vec::new();
            for t in idx.followee_tweets(u) {
                if !tweet_vecs.contains_key(t.id.as_str()) {
                    tweet_vecs.insert(&t.id, embedder.embed_tweet(t)?.vector);
                }
                tv.push((t.id.clone(), tweet_vecs[t.id.as_str()].clone()));
            }
            filter_cosine(&u.id, &uv, &tv)
        })
        .collect()
}

/// Graph, node features and user labels for one set of targets.
#[derive(Debug, Clone)]
pub struct PreparedGraph {
    pub graph: SocialGraph,
    pub features: FeatureMatrix,
    /// Indexed by user node.
    pub labels: Vec<Option<StanceLabel>>,
}

pub fn prepare_graph(
    corpus: &Corpus,
    targets: &[TargetId],
    retained: &Retained,
    embedder: &Embedder,
) -> Result<PreparedGraph> {
    let users: Vec<User> = users_of(corpus, targets).into_iter().cloned().collect();
    let ids: std::collections::HashSet<&str> = users.iter().map(|u| u.id.as_str()).collect();
    let kept: Retained = retained
        .iter()
        .filter(|(u, _)| ids.contains(u.as_str()))
        .map(|(u, t)| (u.clone(), t.clone()))
        .collect();
    let graph = build_graph(&users, &corpus.tweets, &kept)?;
    let features = assemble_feature_matrix(&graph, embedder)?;
    let labels = graph.users().iter().map(|u| u.label).collect();
    Ok(PreparedGraph {
        graph,
        features,
        labels,
    })
}

/// Split and ranking for one seed.
#[derive(Debug, Clone)]
pub struct SeedSplit {
    pub seed: u64,
    pub split: DatasetSplit,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    /// Scored users: the test split in-target, every labeled user of the
    /// evaluation target across targets.
    pub eval: Vec<usize>,
    pub ranking: FmiRanking,
}

fn nodes(graph: &SocialGraph, ids: &[String]) -> Result<Vec<usize>> {
    ids.iter()
        .map(|id| graph.user_node(id).ok_or_else(|| Error::UnknownUser(id.clone())))
        .collect()
}

pub fn prepare_seed(
    pg: &PreparedGraph,
    train_target: &TargetId,
    eval_target: Option<&TargetId>,
    seed: u64,
    bins: usize,
) -> Result<SeedSplit> {
    let split = split_dataset(pg.graph.users(), train_target, seed)?;
    let train = nodes(&pg.graph, &split.train)?;
    let val = nodes(&pg.graph, &split.val)?;
    let eval = match eval_target {
        Some(t) if t != train_target => (0..pg.graph.num_users())
            .filter(|&i| {
                let u = &pg.graph.users()[i];
                &u.target == t && u.label.is_some()
            })
            .collect(),
        _ => nodes(&pg.graph, &split.test)?,
    };
    let ranking = rank_tfi(&pg.graph, &pg.features, &pg.labels, &train, bins)?;
    Ok(SeedSplit {
        seed,
        split,
        train,
        val,
        eval,
        ranking,
    })
}

#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub report: MetricReport,
    pub log: TrainingLog,
    pub model: GsiModel,
}

/// Trains on the seed's split with `routing` and scores the evaluation users.
/// The seed also drives weight initialization.
pub fn fit_and_score(pg: &PreparedGraph, ss: &SeedSplit, routing: &FeatureRouting, gsi: &GsiConfig) -> Result<SeedOutcome> {
    let config = GsiConfig {
        seed: ss.seed,
        ..gsi.clone()
    };
    let inputs = GsiInputs::new(&pg.graph, &pg.features, routing)?;
    let (model, log) = train(&config, &inputs, routing, &pg.labels, &ss.train, &ss.val)?;
    let pred = model.predict_nodes(&inputs, &ss.eval);
    let gold: Vec<StanceLabel> = ss
        .eval
        .iter()
        .map(|&u| pg.labels[u].ok_or_else(|| Error::Config(format!("evaluation user node {u} has no label"))))
        .collect::<Result<_>>()?;
    let report = compute_metrics(&gold, &pred)?;
    Ok(SeedOutcome { report, log, model })
}
