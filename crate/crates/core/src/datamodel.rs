//! Domain types and the heterogeneous user/tweet graph.
//!
//! The graph has two node kinds. User nodes come first, sorted by user id,
//! followed by tweet nodes sorted by `(attached user id, tweet id)`. Edges
//! always point from a tweet node to the user it is attached to, plus one
//! self-loop per user. Follow relations are never edges themselves; they only
//! shape the graph through the followee tweets that survive relevance
//! filtering.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StanceLabel {
    Favor,
    Against,
    None,
}

impl StanceLabel {
    /// Class order used for logits and confusion matrices.
    pub const ALL: [StanceLabel; 3] = [StanceLabel::Favor, StanceLabel::Against, StanceLabel::None];

    pub const fn index(self) -> usize {
        match self {
            StanceLabel::Favor => 0,
            StanceLabel::Against => 1,
            StanceLabel::None => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub const fn as_str(self) -> &'static str {
        match self {
            StanceLabel::Favor => "favor",
            StanceLabel::Against => "against",
            StanceLabel::None => "none",
        }
    }
}

impl fmt::Display for StanceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StanceLabel {
    type Err = ();

    /// Case-sensitive: only `favor`, `against` and `none` are accepted.
    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "favor" => Ok(StanceLabel::Favor),
            "against" => Ok(StanceLabel::Against),
            "none" => Ok(StanceLabel::None),
            _ => Err(()),
        }
    }
}

/// Name of a stance target, trimmed and lowercased.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TargetId(String);

impl TargetId {
    pub fn new(name: &str) -> Result<Self> {
        let norm = name.trim().to_lowercase();
        if norm.is_empty() {
            return Err(Error::InvalidTarget(name.to_string()));
        }
        Ok(TargetId(norm))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for TargetId {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        TargetId::new(&s)
    }
}

impl From<TargetId> for String {
    fn from(t: TargetId) -> String {
        t.0
    }
}

impl fmt::Display for TargetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tweet {
    pub id: String,
    pub author_id: String,
    pub text: String,
    /// Set when the tweet is knowingly empty.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

impl Tweet {
    pub fn new(id: impl Into<String>, author_id: impl Into<String>, text: impl Into<String>) -> Self {
        Tweet {
            id: id.into(),
            author_id: author_id.into(),
            text: text.into(),
            degenerate: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UserRole {
    Followee,
    Follower,
    Isolated,
}

impl UserRole {
    pub const ALL: [UserRole; 3] = [UserRole::Followee, UserRole::Follower, UserRole::Isolated];

    pub const fn as_str(self) -> &'static str {
        match self {
            UserRole::Followee => "followee",
            UserRole::Follower => "follower",
            UserRole::Isolated => "isolated",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct User {
    pub id: String,
    pub description: String,
    pub tweet_ids: Vec<String>,
    pub followee_ids: Vec<String>,
    pub role: UserRole,
    pub label: Option<StanceLabel>,
    pub target: TargetId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelationKind {
    OwnTweetToUser,
    FolloweeTweetToUser,
    SelfLoop,
}

impl RelationKind {
    pub const ALL: [RelationKind; 3] = [
        RelationKind::OwnTweetToUser,
        RelationKind::FolloweeTweetToUser,
        RelationKind::SelfLoop,
    ];

    pub const fn index(self) -> usize {
        match self {
            RelationKind::OwnTweetToUser => 0,
            RelationKind::FolloweeTweetToUser => 1,
            RelationKind::SelfLoop => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub relation: RelationKind,
}

/// A tweet attached to one user. The same tweet shared by several followers
/// appears once per follower.
#[derive(Debug, Clone, PartialEq)]
pub struct TweetNode {
    pub tweet: Tweet,
    pub user_id: String,
    pub relation: RelationKind,
}

#[derive(Debug, Clone)]
pub struct SocialGraph {
    users: Vec<User>,
    tweet_nodes: Vec<TweetNode>,
    edges: Vec<Edge>,
    user_index: HashMap<String, usize>,
    tweet_node_index: HashMap<(String, String), usize>,
    // CSR over incoming edges, sources ascending within each node.
    in_offsets: Vec<usize>,
    in_edges: Vec<(usize, RelationKind)>,
}

impl SocialGraph {
    pub fn num_nodes(&self) -> usize {
        self.users.len() + self.tweet_nodes.len()
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_tweet_nodes(&self) -> usize {
        self.tweet_nodes.len()
    }

    pub fn users(&self) -> &[User] {
        &self.users
    }

    pub fn tweet_nodes(&self) -> &[TweetNode] {
        &self.tweet_nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn is_user_node(&self, node: usize) -> bool {
        node < self.users.len()
    }

    pub fn user(&self, node: usize) -> Option<&User> {
        self.users.get(node)
    }

    /// Tweet node at global node index `node`.
    pub fn tweet_node(&self, node: usize) -> Option<&TweetNode> {
        node.checked_sub(self.users.len())
            .and_then(|i| self.tweet_nodes.get(i))
    }

    pub fn user_node(&self, user_id: &str) -> Option<usize> {
        self.user_index.get(user_id).copied()
    }

    pub fn tweet_node_for(&self, user_id: &str, tweet_id: &str) -> Option<usize> {
        self.tweet_node_index
            .get(&(user_id.to_string(), tweet_id.to_string()))
            .copied()
    }

    /// Identifier used to look up external embeddings for a node.
    pub fn node_key(&self, node: usize) -> &str {
        match self.user(node) {
            Some(u) => &u.id,
            None => &self.tweet_nodes[node - self.users.len()].tweet.id,
        }
    }

    /// Incoming edges of `node` as `(source, relation)`, sources ascending.
    pub fn incoming(&self, node: usize) -> &[(usize, RelationKind)] {
        &self.in_edges[self.in_offsets[node]..self.in_offsets[node + 1]]
    }

    pub fn in_degree(&self, node: usize) -> usize {
        self.in_offsets[node + 1] - self.in_offsets[node]
    }

    /// Own tweets of the user at `node`, in the user's stored order.
    pub fn own_tweets(&self, node: usize) -> Vec<&Tweet> {
        let Some(user) = self.user(node) else {
            return Vec::new();
        };
        user.tweet_ids
            .iter()
            .filter_map(|tid| self.tweet_node_for(&user.id, tid))
            .map(|n| &self.tweet_nodes[n - self.users.len()].tweet)
            .collect()
    }

    /// Checks every structural invariant; used by tests and debug paths.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let n_users = self.users.len();
        let mut self_loops = vec![0usize; n_users];
        let mut tweet_out = vec![0usize; self.tweet_nodes.len()];
        for e in &self.edges {
            match e.relation {
                RelationKind::SelfLoop => {
                    if e.src != e.dst || e.src >= n_users {
                        return Err(format!("bad self-loop {e:?}"));
                    }
                    self_loops[e.src] += 1;
                }
                _ => {
                    if e.src < n_users || e.dst >= n_users {
                        return Err(format!("edge is not tweet->user: {e:?}"));
                    }
                    tweet_out[e.src - n_users] += 1;
                }
            }
        }
        if let Some(u) = self_loops.iter().position(|&c| c != 1) {
            return Err(format!("user node {u} has {} self-loops", self_loops[u]));
        }
        if let Some(t) = tweet_out.iter().position(|&c| c != 1) {
            return Err(format!("tweet node {} has out-degree {}", t + n_users, tweet_out[t]));
        }
        Ok(())
    }
}

/// Builds the heterogeneous graph from users, their own tweets and the
/// followee tweets retained for each user.
pub fn build_graph(
    users: &[User],
    own_tweets: &[Tweet],
    retained_followee_tweets: &BTreeMap<String, Vec<Tweet>>,
) -> Result<SocialGraph> {
    let mut tweets_by_id: HashMap<&str, &Tweet> = HashMap::with_capacity(own_tweets.len());
    for t in own_tweets {
        if tweets_by_id.insert(t.id.as_str(), t).is_some() {
            return Err(Error::DuplicateId {
                kind: "tweet",
                id: t.id.clone(),
            });
        }
    }

    let mut sorted_users: Vec<User> = users.to_vec();
    sorted_users.sort_by(|a, b| a.id.cmp(&b.id));
    for pair in sorted_users.windows(2) {
        if pair[0].id == pair[1].id {
            return Err(Error::DuplicateId {
                kind: "user",
                id: pair[0].id.clone(),
            });
        }
    }
    let user_index: HashMap<String, usize> = sorted_users
        .iter()
        .enumerate()
        .map(|(i, u)| (u.id.clone(), i))
        .collect();

    let mut tweet_nodes: Vec<TweetNode> = Vec::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    for user in &sorted_users {
        for tid in &user.tweet_ids {
            let tweet = tweets_by_id
                .get(tid.as_str())
                .ok_or_else(|| Error::DanglingTweet(tid.clone()))?;
            if !seen.insert((user.id.clone(), tid.clone())) {
                return Err(Error::DuplicateTweetNode {
                    tweet_id: tid.clone(),
                    user_id: user.id.clone(),
                });
            }
            tweet_nodes.push(TweetNode {
                tweet: (*tweet).clone(),
                user_id: user.id.clone(),
                relation: RelationKind::OwnTweetToUser,
            });
        }
    }
    for (user_id, tweets) in retained_followee_tweets {
        if !user_index.contains_key(user_id) {
            return Err(Error::DanglingUser(user_id.clone()));
        }
        for t in tweets {
            if !seen.insert((user_id.clone(), t.id.clone())) {
                return Err(Error::DuplicateTweetNode {
                    tweet_id: t.id.clone(),
                    user_id: user_id.clone(),
                });
            }
            tweet_nodes.push(TweetNode {
                tweet: t.clone(),
                user_id: user_id.clone(),
                relation: RelationKind::FolloweeTweetToUser,
            });
        }
    }
    tweet_nodes.sort_by(|a, b| (&a.user_id, &a.tweet.id).cmp(&(&b.user_id, &b.tweet.id)));

    let n_users = sorted_users.len();
    let tweet_node_index: HashMap<(String, String), usize> = tweet_nodes
        .iter()
        .enumerate()
        .map(|(i, n)| ((n.user_id.clone(), n.tweet.id.clone()), n_users + i))
        .collect();

    let mut edges = Vec::with_capacity(tweet_nodes.len() + n_users);
    for (i, node) in tweet_nodes.iter().enumerate() {
        edges.push(Edge {
            src: n_users + i,
            dst: user_index[&node.user_id],
            relation: node.relation,
        });
    }
    for u in 0..n_users {
        edges.push(Edge {
            src: u,
            dst: u,
            relation: RelationKind::SelfLoop,
        });
    }

    let n = n_users + tweet_nodes.len();
    let mut incoming: Vec<Vec<(usize, RelationKind)>> = vec![Vec::new(); n];
    for e in &edges {
        incoming[e.dst].push((e.src, e.relation));
    }
    let mut in_offsets = Vec::with_capacity(n + 1);
    let mut in_edges = Vec::with_capacity(edges.len());
    in_offsets.push(0);
    for mut list in incoming {
        list.sort_by_key(|&(src, _)| src);
        in_edges.extend(list);
        in_offsets.push(in_edges.len());
    }

    Ok(SocialGraph {
        users: sorted_users,
        tweet_nodes,
        edges,
        user_index,
        tweet_node_index,
        in_offsets,
        in_edges,
    })
}
