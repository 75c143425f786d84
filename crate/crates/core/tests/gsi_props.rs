mod common;

use ndarray::Array2;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng as _;

use mrfg_core::datamodel::{RelationKind, StanceLabel};
use mrfg_core::gsi::{rgcn_layer, Activation, GsiConfig, GsiInputs, GsiModel, RelationalAdjacency, RgcnWeights};
use mrfg_core::tfi::FeatureRouting;

use common::{max_gradient_error, random_corpus, random_matrix, randomize_params, rng};

type EdgeList = Vec<Vec<(usize, RelationKind)>>;

/// Arbitrary directed multi-relational graph (not restricted to tweet to user edges).
fn random_edges(r: &mut impl rand::Rng, n: usize, p: f64) -> EdgeList {
    (0..n)
        .map(|_| {
            let mut inc = Vec::new();
            for j in 0..n {
                for rel in RelationKind::ALL {
                    if r.random_bool(p) {
                        inc.push((j, rel));
                    }
                }
            }
            inc
        })
        .collect()
}

fn weights(r: &mut impl rand::Rng, fan_in: usize, fan_out: usize) -> RgcnWeights {
    RgcnWeights {
        relation: std::array::from_fn(|_| random_matrix(r, fan_in, fan_out)),
        self_weight: random_matrix(r, fan_in, fan_out),
    }
}

fn adjacency(edges: &EdgeList) -> RelationalAdjacency {
    RelationalAdjacency::from_in_edges(edges.len(), |i| edges[i].clone())
}

fn two_layers(edges: &EdgeList, h: &Array2<f64>, w: &[RgcnWeights; 2]) -> Array2<f64> {
    let adj = adjacency(edges);
    let h1 = rgcn_layer(&adj, h, &w[0], Activation::Relu).unwrap();
    rgcn_layer(&adj, &h1, &w[1], Activation::Identity).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn layer_is_permutation_equivariant(seed in any::<u64>(), n in 1usize..12, d in 1usize..5, out in 1usize..5) {
        let mut r = rng(seed);
        let edges = random_edges(&mut r, n, 0.2);
        let h = random_matrix(&mut r, n, d);
        let w = weights(&mut r, d, out);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut r);

        let mut p_edges: EdgeList = vec![Vec::new(); n];
        let mut p_h = Array2::zeros((n, d));
        for i in 0..n {
            p_edges[perm[i]] = edges[i].iter().map(|&(j, rel)| (perm[j], rel)).collect();
            p_h.row_mut(perm[i]).assign(&h.row(i));
        }
        let a = rgcn_layer(&adjacency(&edges), &h, &w, Activation::Relu).unwrap();
        let b = rgcn_layer(&adjacency(&p_edges), &p_h, &w, Activation::Relu).unwrap();
        for i in 0..n {
            for k in 0..out {
                prop_assert!((a[[i, k]] - b[[perm[i], k]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn removing_an_edge_is_local(seed in any::<u64>(), n in 2usize..12) {
        let mut r = rng(seed);
        let edges = random_edges(&mut r, n, 0.15);
        let Some(dst) = (0..n).filter(|&i| !edges[i].is_empty()).max_by_key(|&i| (edges[i].len(), i)) else {
            return Ok(());
        };
        let k = r.random_range(0..edges[dst].len());
        let src = edges[dst][k].0;
        let mut cut = edges.clone();
        cut[dst].remove(k);

        let h = random_matrix(&mut r, n, 3);
        let w = [weights(&mut r, 3, 4), weights(&mut r, 4, 2)];
        let before = two_layers(&edges, &h, &w);
        let after = two_layers(&cut, &h, &w);

        // nodes reachable from either endpoint along edge direction
        let mut reach = vec![false; n];
        let mut stack = vec![src, dst];
        while let Some(v) = stack.pop() {
            if std::mem::replace(&mut reach[v], true) {
                continue;
            }
            for (i, inc) in edges.iter().enumerate() {
                if inc.iter().any(|&(j, _)| j == v) {
                    stack.push(i);
                }
            }
        }
        for i in (0..n).filter(|&i| !reach[i]) {
            prop_assert_eq!(before.row(i), after.row(i));
        }
    }

    #[test]
    fn removing_a_tweet_edge_only_moves_its_user(seed in any::<u64>(), n in 2usize..10) {
        let mut r = rng(seed);
        let g = random_corpus(&mut r, n, 2, 3).graph();
        prop_assume!(g.num_tweet_nodes() > 0);
        let t = r.random_range(g.num_users()..g.num_nodes());
        let u = g.edges().iter().find(|e| e.src == t).unwrap().dst;
        let x = random_matrix(&mut r, g.num_nodes(), 4);
        let routing = FeatureRouting { graph_dims: vec![0, 1], mlp_dims: vec![2, 3] };
        let full = GsiInputs::new(&g, &mrfg_core::embedding::FeatureMatrix::new(x.clone()), &routing).unwrap();
        let cut_adj = RelationalAdjacency::from_in_edges(g.num_nodes(), |i| {
            g.incoming(i).iter().copied().filter(|&(j, _)| j != t).collect()
        });
        let cut = GsiInputs::from_parts(cut_adj, g.num_users(), &x, &routing).unwrap();
        let mut model = GsiModel::init(GsiConfig { hidden_dim: 3, ..Default::default() }, routing).unwrap();
        randomize_params(&mut model, &mut r);
        let (a, b) = (model.logits(&full), model.logits(&cut));
        for i in (0..g.num_users()).filter(|&i| i != u) {
            prop_assert_eq!(a.row(i), b.row(i));
        }
    }
}

#[test]
fn gradients_match_finite_differences_on_random_instances() {
    let mut checked = 0;
    let mut seed = 0;
    while checked < 10 {
        seed += 1;
        let mut r = rng(seed);
        let users = r.random_range(2..=5);
        let c = random_corpus(&mut r, users, 2, 2);
        let g = c.graph();
        if !(6..=12).contains(&g.num_nodes()) {
            continue;
        }
        let d = 5;
        let x = random_matrix(&mut r, g.num_nodes(), d);
        let routing = match checked % 3 {
            0 => FeatureRouting { graph_dims: vec![0, 3], mlp_dims: vec![1, 2, 4] },
            1 => FeatureRouting::all_graph(d),
            _ => FeatureRouting::all_mlp(d),
        };
        let last = if checked % 2 == 0 { Activation::Identity } else { Activation::Relu };
        let inputs = GsiInputs::new(&g, &mrfg_core::embedding::FeatureMatrix::new(x), &routing).unwrap();
        let config = GsiConfig { hidden_dim: 4, final_activation: last, ..Default::default() };
        let mut model = GsiModel::init(config, routing).unwrap();
        randomize_params(&mut model, &mut r);
        let labeled: Vec<(usize, StanceLabel)> = g.users().iter().enumerate().map(|(i, u)| (i, u.label.unwrap())).collect();
        let (err, at) = max_gradient_error(&mut model, &inputs, &labeled, 1e-5);
        assert!(err < 1e-4, "seed {seed}: relative error {err} at {at}");
        checked += 1;
    }
}

#[test]
fn ablation_routings_drop_a_path() {
    let g = random_corpus(&mut rng(4), 6, 2, 2).graph();
    let graph_only = GsiModel::init(GsiConfig::default(), FeatureRouting::all_graph(8)).unwrap();
    assert!(graph_only.params.mlp.is_none() && graph_only.params.graph.is_some());
    let mlp_only = GsiModel::init(GsiConfig::default(), FeatureRouting::all_mlp(8)).unwrap();
    assert!(mlp_only.params.graph.is_none() && mlp_only.params.mlp.is_some());
    assert_eq!(mlp_only.params.cls_w.nrows(), GsiConfig::default().hidden_dim);

    // with no graph features, the graph structure cannot influence the output
    let x = random_matrix(&mut rng(5), g.num_nodes(), 8);
    let routing = FeatureRouting::all_mlp(8);
    let full = GsiInputs::new(&g, &mrfg_core::embedding::FeatureMatrix::new(x.clone()), &routing).unwrap();
    let bare = GsiInputs::from_parts(RelationalAdjacency::from_in_edges(g.num_nodes(), |_| Vec::new()), g.num_users(), &x, &routing).unwrap();
    let mut m = mlp_only;
    randomize_params(&mut m, &mut rng(6));
    assert_eq!(m.logits(&full), m.logits(&bare));
}
