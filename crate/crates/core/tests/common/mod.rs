//! Random instances and independent oracles shared by the integration tests
//! and the acceptance suite. Nothing here calls the code paths it checks.

#![allow(dead_code)]

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mrfg_core::datamodel::{build_graph, SocialGraph, StanceLabel, TargetId, Tweet, User, UserRole};
use mrfg_core::embedding::FeatureMatrix;
use mrfg_core::gsi::{GsiInputs, GsiModel};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn user(id: &str, tweets: &[&str], followees: &[&str], label: Option<StanceLabel>) -> User {
    User {
        id: id.into(),
        description: format!("about {id}"),
        tweet_ids: tweets.iter().map(|s| s.to_string()).collect(),
        followee_ids: followees.iter().map(|s| s.to_string()).collect(),
        role: if followees.is_empty() { UserRole::Isolated } else { UserRole::Follower },
        label,
        target: TargetId::new("t").unwrap(),
    }
}

#[derive(Debug, Clone)]
pub struct RandomCorpus {
    pub users: Vec<User>,
    pub tweets: Vec<Tweet>,
    pub retained: BTreeMap<String, Vec<Tweet>>,
}

impl RandomCorpus {
    pub fn graph(&self) -> SocialGraph {
        build_graph(&self.users, &self.tweets, &self.retained).unwrap()
    }

    pub fn own_count(&self) -> usize {
        self.users.iter().map(|u| u.tweet_ids.len()).sum()
    }

    pub fn retained_count(&self) -> usize {
        self.retained.values().map(Vec::len).sum()
    }
}

/// Users with up to `max_own` tweets each and up to `max_retained` retained
/// tweets taken from other users. Labels cycle through the three classes.
pub fn random_corpus(rng: &mut impl Rng, n_users: usize, max_own: usize, max_retained: usize) -> RandomCorpus {
    let mut users = Vec::new();
    let mut tweets = Vec::new();
    // ids are shuffled so that node order differs from generation order
    let mut ids: Vec<usize> = (0..n_users).collect();
    ids.shuffle(rng);
    for (i, &uid) in ids.iter().enumerate() {
        let own: Vec<String> = (0..rng.random_range(0..=max_own)).map(|k| format!("t{uid}_{k}")).collect();
        for t in &own {
            tweets.push(Tweet::new(t.clone(), format!("u{uid:03}"), format!("text of {t}")));
        }
        let refs: Vec<&str> = own.iter().map(String::as_str).collect();
        users.push(user(&format!("u{uid:03}"), &refs, &[], StanceLabel::from_index(i % 3)));
    }
    let mut retained = BTreeMap::new();
    for u in &users {
        let mut pool: Vec<&Tweet> = tweets.iter().filter(|t| t.author_id != u.id).collect();
        pool.shuffle(rng);
        let k = rng.random_range(0..=max_retained).min(pool.len());
        if k > 0 {
            retained.insert(u.id.clone(), pool[..k].iter().map(|t| (*t).clone()).collect());
        }
    }
    RandomCorpus { users, tweets, retained }
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

pub fn user_labels(graph: &SocialGraph) -> Vec<Option<StanceLabel>> {
    graph.users().iter().map(|u| u.label).collect()
}

/// The user node a node belongs to: itself for users, the attachment target for tweets.
pub fn owner(graph: &SocialGraph, node: usize) -> usize {
    if graph.is_user_node(node) {
        node
    } else {
        graph.user_node(&graph.tweet_node(node).unwrap().user_id).unwrap()
    }
}

/// Dense row-normalized adjacency built straight from the edge list.
pub fn dense_adjacency(graph: &SocialGraph) -> Array2<f64> {
    let n = graph.num_nodes();
    let mut counts = Array2::<f64>::zeros((n, n));
    let mut deg = vec![0usize; n];
    for e in graph.edges() {
        counts[[e.dst, e.src]] += 1.0;
        deg[e.dst] += 1;
    }
    for i in 0..n {
        if deg[i] > 0 {
            for j in 0..n {
                if counts[[i, j]] != 0.0 {
                    counts[[i, j]] /= deg[i] as f64;
                }
            }
        }
    }
    counts
}

/// Dense matrix product, summing over the inner index in ascending order.
pub fn dense_matmul(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let (n, m) = (a.nrows(), b.ncols());
    let mut out = Array2::zeros((n, m));
    for i in 0..n {
        for k in 0..m {
            let mut s = 0.0;
            for j in 0..a.ncols() {
                if a[[i, j]] != 0.0 {
                    s += a[[i, j]] * b[[j, k]];
                }
            }
            out[[i, k]] = s;
        }
    }
    out
}

/// Bucket of each value: `floor(#{strictly smaller} * bins / n)`, by counting.
pub fn oracle_buckets(column: &[f64], bins: usize) -> Vec<usize> {
    let n = column.len();
    column
        .iter()
        .map(|&v| column.iter().filter(|&&w| w < v).count() * bins / n)
        .collect()
}

/// Plug-in mutual information from an explicit joint histogram.
pub fn oracle_mi(labels: &[usize], column: &[f64], bins: usize) -> f64 {
    let n = labels.len();
    if n == 0 {
        return 0.0;
    }
    let classes = labels.iter().max().unwrap() + 1;
    let buckets = oracle_buckets(column, bins);
    let mut joint = vec![vec![0usize; bins]; classes];
    for (&y, &b) in labels.iter().zip(&buckets) {
        joint[y][b] += 1;
    }
    let py: Vec<usize> = joint.iter().map(|r| r.iter().sum()).collect();
    let pb: Vec<usize> = (0..bins).map(|b| joint.iter().map(|r| r[b]).sum()).collect();
    let nf = n as f64;
    let mut mi = 0.0;
    for y in 0..classes {
        for b in 0..bins {
            let c = joint[y][b];
            if c > 0 {
                let c = c as f64;
                mi += (c / nf) * ((c * nf) / (py[y] as f64 * pb[b] as f64)).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Dense recomputation of the TFI scores and ranking: full `ÂX`, training
/// rows, per-column MI, stable sort by descending score.
pub fn oracle_rank(graph: &SocialGraph, x: &Array2<f64>, train: &[usize], bins: usize) -> (Vec<usize>, Vec<f64>) {
    let ax = dense_matmul(&dense_adjacency(graph), x);
    let y: Vec<usize> = train.iter().map(|&u| graph.user(u).unwrap().label.unwrap().index()).collect();
    let scores: Vec<f64> = (0..x.ncols())
        .map(|k| {
            let col: Vec<f64> = train.iter().map(|&u| ax[[u, k]]).collect();
            oracle_mi(&y, &col, bins)
        })
        .collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // insertion sort keeps equal scores in ascending index order
    for i in 1..order.len() {
        let mut j = i;
        while j > 0 && scores[order[j]] > scores[order[j - 1]] {
            order.swap(j, j - 1);
            j -= 1;
        }
    }
    (order, scores)
}

/// Confusion counts by direct enumeration over the 3x3 cells.
pub fn oracle_confusion(gold: &[StanceLabel], pred: &[StanceLabel]) -> [[usize; 3]; 3] {
    let mut c = [[0; 3]; 3];
    for (g, row) in StanceLabel::ALL.iter().zip(c.iter_mut()) {
        for (p, cell) in StanceLabel::ALL.iter().zip(row.iter_mut()) {
            *cell = gold.iter().zip(pred).filter(|(a, b)| *a == g && *b == p).count();
        }
    }
    c
}

/// F1 of one class from raw counts, 0 when undefined.
pub fn oracle_f1(gold: &[StanceLabel], pred: &[StanceLabel], class: StanceLabel) -> f64 {
    let tp = gold.iter().zip(pred).filter(|(g, p)| **g == class && **p == class).count() as f64;
    let fp = gold.iter().zip(pred).filter(|(g, p)| **g != class && **p == class).count() as f64;
    let fneg = gold.iter().zip(pred).filter(|(g, p)| **g == class && **p != class).count() as f64;
    if tp == 0.0 {
        0.0
    } else {
        2.0 * tp / (2.0 * tp + fp + fneg)
    }
}

pub fn randomize_params(model: &mut GsiModel, rng: &mut impl Rng) {
    for (_, t) in model.params.tensors_mut() {
        t.mapv_inplace(|_| rng.random_range(-0.8..0.8));
    }
}

/// Largest relative error between analytic gradients and central finite
/// differences over every parameter entry.
pub fn max_gradient_error(
    model: &mut GsiModel,
    inputs: &GsiInputs,
    labeled: &[(usize, StanceLabel)],
    eps: f64,
) -> (f64, String) {
    let (_, grads) = model.loss_and_gradients(inputs, labeled);
    let analytic: Vec<(String, Array2<f64>)> = grads.tensors().into_iter().map(|(n, t)| (n, t.clone())).collect();
    let mut worst = (0.0, String::new());
    for (ti, (name, g)) in analytic.iter().enumerate() {
        for idx in ndarray::indices(g.dim()) {
            let orig = model.params.tensors()[ti].1[idx];
            model.params.tensors_mut().swap_remove(ti).1[idx] = orig + eps;
            let up = model.loss(inputs, labeled);
            model.params.tensors_mut().swap_remove(ti).1[idx] = orig - eps;
            let down = model.loss(inputs, labeled);
            model.params.tensors_mut().swap_remove(ti).1[idx] = orig;
            let fd = (up - down) / (2.0 * eps);
            let a = g[idx];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            if rel > worst.0 {
                worst = (rel, format!("{name}{idx:?}"));
            }
        }
    }
    worst
}

pub fn feature_matrix(x: Array2<f64>) -> FeatureMatrix {
    FeatureMatrix::new(x)
}
