//! Topological feature informativeness.
//!
//! Features are smoothed one hop over the row-normalized graph
//! (`X̃ = Â X`), then every feature dimension is scored by the plug-in mutual
//! information between the training labels and the smoothed values. The
//! resulting descending ranking decides which dimensions go through the
//! graph path and which through the MLP path.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::datamodel::{SocialGraph, StanceLabel, TargetId};
use crate::embedding::FeatureMatrix;
use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 16;

/// Sparse row-stochastic adjacency over incoming edges.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    n: usize,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Nonzero `(column, weight)` pairs of row `i`, columns ascending.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[i]..self.offsets[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).map(|(_, v)| v).sum()
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.n, self.n));
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                a[[i, j]] = v;
            }
        }
        a
    }
}

/// `Â[i, j] = 1 / indeg(i)` for every edge `j -> i`, self-loops included.
pub fn normalize_adjacency(graph: &SocialGraph) -> NormalizedAdjacency {
    let n = graph.num_nodes();
    let mut offsets = Vec::with_capacity(n + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    offsets.push(0);
    for i in 0..n {
        let incoming = graph.incoming(i);
        let w = if incoming.is_empty() {
            0.0
        } else {
            1.0 / incoming.len() as f64
        };
        for &(src, _) in incoming {
            cols.push(src);
            vals.push(w);
        }
        offsets.push(cols.len());
    }
    NormalizedAdjacency {
        n,
        offsets,
        cols,
        vals,
    }
}

/// One propagation hop, `Â X`.
pub fn propagate(adj: &NormalizedAdjacency, x: &FeatureMatrix) -> Result<FeatureMatrix> {
    let all: Vec<usize> = (0..adj.n).collect();
    Ok(FeatureMatrix::new(propagate_rows(adj, &x.values, &all)?))
}

/// Rows `rows` of `Â X`. Each entry is accumulated over ascending source index.
pub fn propagate_rows(adj: &NormalizedAdjacency, x: &Array2<f64>, rows: &[usize]) -> Result<Array2<f64>> {
    if x.nrows() != adj.n {
        return Err(Error::DimensionMismatch {
            expected: adj.n,
            actual: x.nrows(),
        });
    }
    let d = x.ncols();
    let mut out = Array2::zeros((rows.len(), d));
    for (r, &i) in rows.iter().enumerate() {
        let mut acc = out.row_mut(r);
        for (j, w) in adj.row(i) {
            let src = x.row(j);
            for m in 0..d {
                acc[m] += w * src[m];
            }
        }
    }
    Ok(out)
}

/// Equal-frequency bucket ids in `0..bins`.
///
/// A value's bucket is `floor(rank * bins / n)` where `rank` is the number
/// of strictly smaller values, so tied values always share a bucket.
pub fn equal_frequency_bins(column: &[f64], bins: usize) -> Vec<usize> {
    let n = column.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| column[a].total_cmp(&column[b]));
    let mut out = vec![0; n];
    let mut first_rank = 0;
    for (rank, &i) in idx.iter().enumerate() {
        if rank > 0 && column[i] != column[idx[rank - 1]] {
            first_rank = rank;
        }
        out[i] = first_rank * bins / n;
    }
    out
}

/// Plug-in mutual information (nats) between discrete codes and a binned column.
pub fn mutual_information_codes(labels: &[usize], column: &[f64], bins: usize) -> f64 {
    assert_eq!(labels.len(), column.len(), "labels and column differ in length");
    let n = labels.len();
    if n == 0 {
        return 0.0;
    }
    let buckets = equal_frequency_bins(column, bins.max(1));
    let mut joint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut py: BTreeMap<usize, usize> = BTreeMap::new();
    let mut pb: BTreeMap<usize, usize> = BTreeMap::new();
    for (&y, &b) in labels.iter().zip(&buckets) {
        *joint.entry((y, b)).or_default() += 1;
        *py.entry(y).or_default() += 1;
        *pb.entry(b).or_default() += 1;
    }
    let nf = n as f64;
    let mi: f64 = joint
        .iter()
        .map(|(&(y, b), &c)| {
            let c = c as f64;
            (c / nf) * ((c * nf) / (py[&y] as f64 * pb[&b] as f64)).ln()
        })
        .sum();
    mi.max(0.0)
}

pub fn mutual_information(labels: &[StanceLabel], column: &[f64], bins: usize) -> f64 {
    let codes: Vec<usize> = labels.iter().map(|l| l.index()).collect();
    mutual_information_codes(&codes, column, bins)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FmiRanking {
    /// Feature dimensions, most informative first.
    pub order: Vec<usize>,
    /// Score per dimension (indexed by dimension, not by rank).
    pub scores: Vec<f64>,
    pub bins: usize,
    pub computed_on: String,
}

impl FmiRanking {
    /// Sorts by descending score, ties by ascending dimension.
    pub fn from_scores(scores: Vec<f64>, bins: usize, computed_on: impl Into<String>) -> Self {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        FmiRanking {
            order,
            scores,
            bins,
            computed_on: computed_on.into(),
        }
    }

    pub fn dim(&self) -> usize {
        self.scores.len()
    }
}

/// Ranks feature dimensions by TFI over the training users only.
///
/// Only the rows of training users are propagated. Those rows read from the
/// user itself and the tweet nodes attached to it, which is exactly the
/// training subgraph, so nothing from validation or test users can leak in.
pub fn rank_tfi(
    graph: &SocialGraph,
    x: &FeatureMatrix,
    labels: &[Option<StanceLabel>],
    train_users: &[usize],
    bins: usize,
) -> Result<FmiRanking> {
    if train_users.len() < 2 {
        return Err(Error::TooFewTrainingUsers(train_users.len()));
    }
    if bins < 2 {
        return Err(Error::Config(format!("bins must be at least 2, got {bins}")));
    }
    let mut y = Vec::with_capacity(train_users.len());
    for &u in train_users {
        if !graph.is_user_node(u) {
            return Err(Error::Config(format!("training index {u} is not a user node")));
        }
        let label = labels
            .get(u)
            .copied()
            .flatten()
            .ok_or_else(|| Error::Config(format!("training user {} has no label", graph.node_key(u))))?;
        y.push(label);
    }
    let adj = normalize_adjacency(graph);
    let smoothed = propagate_rows(&adj, &x.values, train_users)?;
    let scores: Vec<f64> = smoothed
        .axis_iter(Axis(1))
        .map(|col| mutual_information(&y, &col.to_vec(), bins))
        .collect();
    Ok(FmiRanking::from_scores(scores, bins, "train"))
}

/// Which feature dimensions feed which encoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureRouting {
    pub graph_dims: Vec<usize>,
    pub mlp_dims: Vec<usize>,
}

impl FeatureRouting {
    /// Top `max(1, round(r·d))` ranked dimensions go to the graph path.
    pub fn from_ranking(ranking: &FmiRanking, r: f64) -> Result<Self> {
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::InvalidRatio(r));
        }
        let d = ranking.dim();
        let k = ((r * d as f64).round() as usize).clamp(1, d.max(1));
        Ok(FeatureRouting {
            graph_dims: ranking.order[..k.min(d)].to_vec(),
            mlp_dims: ranking.order[k.min(d)..].to_vec(),
        })
    }

    pub fn all_graph(dim: usize) -> Self {
        FeatureRouting {
            graph_dims: (0..dim).collect(),
            mlp_dims: Vec::new(),
        }
    }

    pub fn all_mlp(dim: usize) -> Self {
        FeatureRouting {
            graph_dims: Vec::new(),
            mlp_dims: (0..dim).collect(),
        }
    }
}

/// Splits columns into graph-favored and graph-disfavored blocks, each in
/// ranking order.
pub fn split_features(x: &Array2<f64>, ranking: &FmiRanking, r: f64) -> Result<(Array2<f64>, Array2<f64>)> {
    let routing = FeatureRouting::from_ranking(ranking, r)?;
    Ok((
        x.select(Axis(1), &routing.graph_dims),
        x.select(Axis(1), &routing.mlp_dims),
    ))
}

/// On-disk form of a ranking, tagged with the target and split seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingArtifact {
    pub target: TargetId,
    pub seed: u64,
    pub bins: usize,
    pub order: Vec<usize>,
    pub scores: Vec<f64>,
}

impl RankingArtifact {
    pub fn new(target: TargetId, seed: u64, ranking: &FmiRanking) -> Self {
        RankingArtifact {
            target,
            seed,
            bins: ranking.bins,
            order: ranking.order.clone(),
            scores: ranking.scores.clone(),
        }
    }

    pub fn ranking(&self) -> FmiRanking {
        FmiRanking {
            order: self.order.clone(),
            scores: self.scores.clone(),
            bins: self.bins,
            computed_on: format!("{}/seed={}/train", self.target, self.seed),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{build_graph, tests::user, Tweet};
    use ndarray::array;
    use std::collections::BTreeMap;

    #[test]
    fn single_user_is_identity() {
        let g = build_graph(&[user("u", &[], &[])], &[], &BTreeMap::new()).unwrap();
        assert_eq!(normalize_adjacency(&g).to_dense(), array![[1.0]]);
    }

    #[test]
    fn self_loop_plus_tweet_halves() {
        let g = build_graph(&[user("u", &["t"], &[])], &[Tweet::new("t", "u", "x")], &BTreeMap::new()).unwrap();
        let a = normalize_adjacency(&g);
        assert_eq!(a.to_dense(), array![[0.5, 0.5], [0.0, 0.0]]);
        let x = FeatureMatrix::new(array![[2.0], [4.0]]);
        let p = propagate(&a, &x).unwrap();
        assert_eq!(p.values, array![[3.0], [0.0]]);
    }

    #[test]
    fn propagate_checks_shape() {
        let g = build_graph(&[user("u", &[], &[])], &[], &BTreeMap::new()).unwrap();
        let a = normalize_adjacency(&g);
        assert!(propagate(&a, &FeatureMatrix::new(Array2::zeros((3, 2)))).is_err());
    }

    #[test]
    fn constant_column_has_zero_mi() {
        let y = [StanceLabel::Favor, StanceLabel::Against, StanceLabel::None, StanceLabel::Favor];
        assert_eq!(mutual_information(&y, &[0.3; 4], 16), 0.0);
    }

    #[test]
    fn label_copy_recovers_entropy() {
        let y: Vec<StanceLabel> = (0..100)
            .map(|i| if i % 2 == 0 { StanceLabel::Favor } else { StanceLabel::Against })
            .collect();
        let col: Vec<f64> = y.iter().map(|l| l.index() as f64).collect();
        let mi = mutual_information(&y, &col, 16);
        assert!((mi - 2f64.ln()).abs() < 1e-12, "{mi}");
    }

    #[test]
    fn ties_share_a_bucket() {
        let b = equal_frequency_bins(&[1.0, 1.0, 1.0, 2.0, 3.0, 3.0], 3);
        assert_eq!(b, vec![0, 0, 0, 1, 2, 2]);
    }

    #[test]
    fn ranking_breaks_ties_by_index() {
        let r = FmiRanking::from_scores(vec![0.1, 0.5, 0.0, 0.5], 16, "t");
        assert_eq!(r.order, vec![1, 3, 0, 2]);
    }

    #[test]
    fn label_copy_dimension_ranks_first() {
        let users: Vec<_> = (0..6).map(|i| user(&format!("u{i}"), &[], &[])).collect();
        let g = build_graph(&users, &[], &BTreeMap::new()).unwrap();
        let labels: Vec<Option<StanceLabel>> = (0..6)
            .map(|i| Some(if i < 3 { StanceLabel::Favor } else { StanceLabel::None }))
            .collect();
        let mut x = Array2::zeros((6, 2));
        for i in 0..6 {
            x[[i, 1]] = labels[i].unwrap().index() as f64;
            x[[i, 0]] = 7.0;
        }
        let r = rank_tfi(&g, &FeatureMatrix::new(x), &labels, &[0, 1, 2, 3, 4, 5], 16).unwrap();
        assert_eq!(r.order, vec![1, 0]);
        assert!(rank_tfi(&g, &FeatureMatrix::new(Array2::zeros((6, 2))), &labels, &[0], 16).is_err());
    }

    #[test]
    fn split_sizes() {
        let r = FmiRanking::from_scores((0..10).map(|i| i as f64).collect(), 16, "t");
        let x = Array2::from_shape_fn((2, 10), |(_, j)| j as f64);
        let (g, m) = split_features(&x, &r, 0.3).unwrap();
        assert_eq!((g.ncols(), m.ncols()), (3, 7));
        // ranking order is 9, 8, 7, ...
        assert_eq!(g.row(0).to_vec(), vec![9.0, 8.0, 7.0]);
        let (g, m) = split_features(&x, &r, 0.05).unwrap();
        assert_eq!((g.ncols(), m.ncols()), (1, 9));
        assert!(split_features(&x, &r, 1.0).is_err());
        assert!(split_features(&x, &r, 0.0).is_err());

        let routing = FeatureRouting::from_ranking(&r, 0.42).unwrap();
        let mut all: Vec<usize> = routing.graph_dims.iter().chain(&routing.mlp_dims).copied().collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }
}
