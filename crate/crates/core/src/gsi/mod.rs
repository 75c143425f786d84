//! Dual-path stance classifier.
//!
//! Graph-favored feature dimensions go through two relation-typed graph
//! convolutions, the remaining dimensions through a two-layer MLP on the user
//! rows. The two user representations are concatenated and fed to a linear
//! classifier over the three stance classes. Gradients are derived by hand.

mod adam;
mod checkpoint;
mod train;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{RelationKind, SocialGraph, StanceLabel};
use crate::embedding::FeatureMatrix;
use crate::error::{Error, Result};
use crate::tfi::FeatureRouting;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, TensorRecord, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use train::{train, EpochLog, TrainingLog};

pub const NUM_CLASSES: usize = 3;
pub const NUM_RELATIONS: usize = RelationKind::ALL.len();

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    #[default]
    Identity,
}

impl Activation {
    fn apply(self, x: &mut Array2<f64>) {
        if self == Activation::Relu {
            x.mapv_inplace(|v| v.max(0.0));
        }
    }

    /// Multiplies `grad` by the derivative evaluated at pre-activation `pre`.
    fn backprop(self, grad: &mut Array2<f64>, pre: &Array2<f64>) {
        if self == Activation::Relu {
            relu_backprop(grad, pre);
        }
    }
}

fn relu_backprop(grad: &mut Array2<f64>, pre: &Array2<f64>) {
    ndarray::Zip::from(grad).and(pre).for_each(|g, &p| {
        if p <= 0.0 {
            *g = 0.0;
        }
    });
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GsiConfig {
    /// Fraction of ranked dimensions routed to the graph path.
    pub r: f64,
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Activation on the last layer of both paths.
    pub final_activation: Activation,
    /// Weight the loss by inverse class frequency.
    pub class_weighting: bool,
}

impl Default for GsiConfig {
    fn default() -> Self {
        GsiConfig {
            r: 0.3,
            hidden_dim: 64,
            learning_rate: 1e-3,
            epochs: 200,
            patience: 20,
            seed: 0,
            final_activation: Activation::Identity,
            class_weighting: false,
        }
    }
}

impl GsiConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0 && self.r < 1.0) {
            return Err(Error::InvalidRatio(self.r));
        }
        if self.hidden_dim < 2 {
            return Err(Error::Config(format!("hidden_dim must be at least 2, got {}", self.hidden_dim)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        Ok(())
    }
}

/// Per-relation in-edge lists with `1 / c_{i,ζ}` weights, sources ascending.
#[derive(Debug, Clone)]
pub struct RelationalAdjacency {
    n: usize,
    offsets: [Vec<usize>; NUM_RELATIONS],
    entries: [Vec<(usize, f64)>; NUM_RELATIONS],
}

impl RelationalAdjacency {
    pub fn new(graph: &SocialGraph) -> Self {
        Self::from_in_edges(graph.num_nodes(), |i| graph.incoming(i).to_vec())
    }

    /// Builds from an arbitrary incoming-edge function; used by tests on
    /// graphs the builder would not produce.
    pub fn from_in_edges(n: usize, incoming: impl Fn(usize) -> Vec<(usize, RelationKind)>) -> Self {
        let mut offsets: [Vec<usize>; NUM_RELATIONS] = Default::default();
        let mut entries: [Vec<(usize, f64)>; NUM_RELATIONS] = Default::default();
        for o in offsets.iter_mut() {
            o.push(0);
        }
        for i in 0..n {
            let mut inc = incoming(i);
            inc.sort_by_key(|&(j, _)| j);
            for rel in RelationKind::ALL {
                let z = rel.index();
                let srcs: Vec<usize> = inc.iter().filter(|(_, r)| *r == rel).map(|(j, _)| *j).collect();
                let w = 1.0 / srcs.len().max(1) as f64;
                entries[z].extend(srcs.into_iter().map(|j| (j, w)));
                offsets[z].push(entries[z].len());
            }
        }
        RelationalAdjacency { n, offsets, entries }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, rel: usize, i: usize) -> &[(usize, f64)] {
        &self.entries[rel][self.offsets[rel][i]..self.offsets[rel][i + 1]]
    }

    pub fn has_edges(&self, rel: usize) -> bool {
        !self.entries[rel].is_empty()
    }

    /// `Σ_j (1/c) h_j` for each row in `rows`.
    fn aggregate(&self, rel: usize, h: &Array2<f64>, rows: std::ops::Range<usize>) -> Array2<f64> {
        let mut out = Array2::zeros((rows.len(), h.ncols()));
        for (r, i) in rows.enumerate() {
            let mut acc = out.row_mut(r);
            for &(j, w) in self.row(rel, i) {
                acc.scaled_add(w, &h.row(j));
            }
        }
        out
    }
}

/// Weights of one graph convolution: one matrix per relation plus the self weight.
#[derive(Debug, Clone, PartialEq)]
pub struct RgcnWeights {
    pub relation: [Array2<f64>; NUM_RELATIONS],
    pub self_weight: Array2<f64>,
}

impl RgcnWeights {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        RgcnWeights {
            relation: std::array::from_fn(|_| Array2::zeros((fan_in, fan_out))),
            self_weight: Array2::zeros((fan_in, fan_out)),
        }
    }
}

/// Pre-activation of a graph convolution over `rows`, with the per-relation
/// aggregates needed for backprop.
fn rgcn_pre(
    adj: &RelationalAdjacency,
    h: &Array2<f64>,
    w: &RgcnWeights,
    rows: std::ops::Range<usize>,
) -> (Array2<f64>, [Array2<f64>; NUM_RELATIONS]) {
    let hr = h.slice(s![rows.clone(), ..]);
    let mut pre = hr.dot(&w.self_weight);
    let aggs: [Array2<f64>; NUM_RELATIONS] = std::array::from_fn(|z| adj.aggregate(z, h, rows.clone()));
    for (z, agg) in aggs.iter().enumerate() {
        if adj.has_edges(z) {
            pre += &agg.dot(&w.relation[z]);
        }
    }
    (pre, aggs)
}

/// One relation-typed graph convolution over all nodes.
pub fn rgcn_layer(
    adj: &RelationalAdjacency,
    h: &Array2<f64>,
    w: &RgcnWeights,
    activation: Activation,
) -> Result<Array2<f64>> {
    if h.nrows() != adj.n() {
        return Err(Error::DimensionMismatch {
            expected: adj.n(),
            actual: h.nrows(),
        });
    }
    let (mut out, _) = rgcn_pre(adj, h, w, 0..adj.n());
    activation.apply(&mut out);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphParams {
    pub layers: [RgcnWeights; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub w1: Array2<f64>,
    pub b1: Array2<f64>,
    pub w2: Array2<f64>,
    pub b2: Array2<f64>,
}

/// All trainable tensors. Gradients use the same layout. Biases are `1 x k`.
#[derive(Debug, Clone, PartialEq)]
pub struct GsiParams {
    pub graph: Option<GraphParams>,
    pub mlp: Option<MlpParams>,
    pub cls_w: Array2<f64>,
    pub cls_b: Array2<f64>,
}

impl GsiParams {
    fn zeros(graph_in: usize, mlp_in: usize, hidden: usize) -> Self {
        let graph = (graph_in > 0).then(|| GraphParams {
            layers: [RgcnWeights::zeros(graph_in, hidden), RgcnWeights::zeros(hidden, hidden)],
        });
        let mlp = (mlp_in > 0).then(|| MlpParams {
            w1: Array2::zeros((mlp_in, hidden)),
            b1: Array2::zeros((1, hidden)),
            w2: Array2::zeros((hidden, hidden)),
            b2: Array2::zeros((1, hidden)),
        });
        let width = hidden * (usize::from(graph.is_some()) + usize::from(mlp.is_some()));
        GsiParams {
            graph,
            mlp,
            cls_w: Array2::zeros((width, NUM_CLASSES)),
            cls_b: Array2::zeros((1, NUM_CLASSES)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// Named tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = Vec::new();
        if let Some(g) = &self.graph {
            for (l, layer) in g.layers.iter().enumerate() {
                for rel in RelationKind::ALL {
                    out.push((format!("graph.l{l}.{rel:?}"), &layer.relation[rel.index()]));
                }
                out.push((format!("graph.l{l}.self"), &layer.self_weight));
            }
        }
        if let Some(m) = &self.mlp {
            out.push(("mlp.w1".into(), &m.w1));
            out.push(("mlp.b1".into(), &m.b1));
            out.push(("mlp.w2".into(), &m.w2));
            out.push(("mlp.b2".into(), &m.b2));
        }
        out.push(("cls.w".into(), &self.cls_w));
        out.push(("cls.b".into(), &self.cls_b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Array2<f64>)> {
        let mut out = Vec::new();
        if let Some(g) = &mut self.graph {
            for (l, layer) in g.layers.iter_mut().enumerate() {
                for (rel, w) in RelationKind::ALL.iter().zip(layer.relation.iter_mut()) {
                    out.push((format!("graph.l{l}.{rel:?}"), w));
                }
                out.push((format!("graph.l{l}.self"), &mut layer.self_weight));
            }
        }
        if let Some(m) = &mut self.mlp {
            out.push(("mlp.w1".into(), &mut m.w1));
            out.push(("mlp.b1".into(), &mut m.b1));
            out.push(("mlp.w2".into(), &mut m.w2));
            out.push(("mlp.b2".into(), &mut m.b2));
        }
        out.push(("cls.w".into(), &mut self.cls_w));
        out.push(("cls.b".into(), &mut self.cls_b));
        out
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

/// Model inputs prepared once per graph and routing.
#[derive(Debug, Clone)]
pub struct GsiInputs {
    pub adj: RelationalAdjacency,
    pub num_users: usize,
    /// Graph-path features for every node.
    pub x_graph: Array2<f64>,
    /// MLP-path features for user rows.
    pub x_mlp: Array2<f64>,
    agg0: [Array2<f64>; NUM_RELATIONS],
}

impl GsiInputs {
    pub fn new(graph: &SocialGraph, x: &FeatureMatrix, routing: &FeatureRouting) -> Result<Self> {
        Self::from_parts(RelationalAdjacency::new(graph), graph.num_users(), &x.values, routing)
    }

    /// `adj` must only have incoming edges on the first `num_users` rows.
    pub fn from_parts(
        adj: RelationalAdjacency,
        num_users: usize,
        x: &Array2<f64>,
        routing: &FeatureRouting,
    ) -> Result<Self> {
        if x.nrows() != adj.n() {
            return Err(Error::DimensionMismatch {
                expected: adj.n(),
                actual: x.nrows(),
            });
        }
        if let Some(&bad) = routing.graph_dims.iter().chain(&routing.mlp_dims).find(|&&d| d >= x.ncols()) {
            return Err(Error::DimensionMismatch {
                expected: x.ncols(),
                actual: bad + 1,
            });
        }
        for z in 0..NUM_RELATIONS {
            if (num_users..adj.n()).any(|i| !adj.row(z, i).is_empty()) {
                return Err(Error::Config("incoming edges on a non-user node".into()));
            }
        }
        let x_graph = x.select(Axis(1), &routing.graph_dims);
        let x_mlp = x.slice(s![..num_users, ..]).select(Axis(1), &routing.mlp_dims);
        let agg0 = std::array::from_fn(|z| adj.aggregate(z, &x_graph, 0..num_users));
        Ok(GsiInputs {
            adj,
            num_users,
            x_graph,
            x_mlp,
            agg0,
        })
    }
}

/// Intermediate values of a forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pre0: Array2<f64>,
    h1: Array2<f64>,
    agg1: [Array2<f64>; NUM_RELATIONS],
    pre1: Array2<f64>,
    pre_a: Array2<f64>,
    h_a: Array2<f64>,
    pre_b: Array2<f64>,
    /// Concatenated user representation `[Z_G ‖ Z_notG]`.
    pub z: Array2<f64>,
    /// One row per user node, columns in [`StanceLabel::index`] order.
    pub logits: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GsiModel {
    pub config: GsiConfig,
    pub routing: FeatureRouting,
    pub params: GsiParams,
}

fn glorot(rng: &mut ChaCha8Rng, t: &mut Array2<f64>) {
    let (fan_in, fan_out) = t.dim();
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    t.mapv_inplace(|_| rng.random_range(-limit..limit));
}

impl GsiModel {
    /// Glorot-uniform weights, zero biases and a zero classifier, so the
    /// untrained model predicts the uniform distribution.
    pub fn init(config: GsiConfig, routing: FeatureRouting) -> Result<Self> {
        config.validate()?;
        if routing.graph_dims.is_empty() && routing.mlp_dims.is_empty() {
            return Err(Error::EmptyInput("feature routing"));
        }
        let mut params = GsiParams::zeros(routing.graph_dims.len(), routing.mlp_dims.len(), config.hidden_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for (name, t) in params.tensors_mut() {
            if !name.starts_with("cls") && !name.contains(".b") {
                glorot(&mut rng, t);
            }
        }
        Ok(GsiModel { config, routing, params })
    }

    pub fn forward(&self, inputs: &GsiInputs) -> Forward {
        forward(&self.params, self.config.final_activation, inputs)
    }

    pub fn logits(&self, inputs: &GsiInputs) -> Array2<f64> {
        self.forward(inputs).logits
    }

    /// Loss over `labeled` `(user node, label)` pairs and its gradient.
    pub fn loss_and_gradients(&self, inputs: &GsiInputs, labeled: &[(usize, StanceLabel)]) -> (f64, GsiParams) {
        let fwd = self.forward(inputs);
        let weights = self.sample_weights(labeled);
        let (loss, dlogits) = cross_entropy(&fwd.logits, labeled, &weights);
        let grads = backward(&self.params, self.config.final_activation, inputs, &fwd, &dlogits);
        (loss, grads)
    }

    pub fn loss(&self, inputs: &GsiInputs, labeled: &[(usize, StanceLabel)]) -> f64 {
        let fwd = self.forward(inputs);
        cross_entropy(&fwd.logits, labeled, &self.sample_weights(labeled)).0
    }

    fn sample_weights(&self, labeled: &[(usize, StanceLabel)]) -> Vec<f64> {
        if !self.config.class_weighting {
            return vec![1.0; labeled.len()];
        }
        let mut counts = [0usize; NUM_CLASSES];
        for (_, l) in labeled {
            counts[l.index()] += 1;
        }
        let present = counts.iter().filter(|&&c| c > 0).count() as f64;
        labeled
            .iter()
            .map(|(_, l)| labeled.len() as f64 / (present * counts[l.index()] as f64))
            .collect()
    }

    /// Predicted label for each user node in `users`.
    pub fn predict_nodes(&self, inputs: &GsiInputs, users: &[usize]) -> Vec<StanceLabel> {
        let logits = self.logits(inputs);
        users.iter().map(|&u| argmax_label(logits.row(u).as_slice().unwrap())).collect()
    }

    pub fn predict(&self, graph: &SocialGraph, inputs: &GsiInputs, user_ids: &[String]) -> Result<Vec<StanceLabel>> {
        let nodes = user_ids
            .iter()
            .map(|id| graph.user_node(id).ok_or_else(|| Error::UnknownUser(id.clone())))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.predict_nodes(inputs, &nodes))
    }
}

/// Argmax over `[favor, against, none]`; exact ties prefer Against, then Favor.
pub fn argmax_label(logits: &[f64]) -> StanceLabel {
    let mut best = StanceLabel::Against;
    for cand in [StanceLabel::Favor, StanceLabel::None] {
        if logits[cand.index()] > logits[best.index()] {
            best = cand;
        }
    }
    best
}

/// Weighted mean cross-entropy over `labeled` rows and its gradient w.r.t. the logits.
pub fn cross_entropy(logits: &Array2<f64>, labeled: &[(usize, StanceLabel)], weights: &[f64]) -> (f64, Array2<f64>) {
    let mut grad = Array2::zeros(logits.dim());
    let total: f64 = weights.iter().sum();
    if labeled.is_empty() || total == 0.0 {
        return (0.0, grad);
    }
    let mut loss = 0.0;
    for (&(u, label), &w) in labeled.iter().zip(weights) {
        let row = logits.row(u);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let y = label.index();
        loss += w * (sum.ln() + max - row[y]);
        for c in 0..NUM_CLASSES {
            let p = exps[c] / sum;
            grad[[u, c]] += w * (p - f64::from(u8::from(c == y))) / total;
        }
    }
    (loss / total, grad)
}

pub fn forward(params: &GsiParams, last: Activation, inputs: &GsiInputs) -> Forward {
    let u = inputs.num_users;
    let empty = || Array2::zeros((0, 0));
    let mut parts: Vec<ArrayView2<f64>> = Vec::new();

    let (pre0, h1, agg1, pre1, zg) = match &params.graph {
        Some(g) => {
            let [l0, l1] = &g.layers;
            let mut pre0 = inputs.x_graph.dot(&l0.self_weight);
            {
                let mut top = pre0.slice_mut(s![..u, ..]);
                for z in 0..NUM_RELATIONS {
                    if inputs.adj.has_edges(z) {
                        top += &inputs.agg0[z].dot(&l0.relation[z]);
                    }
                }
            }
            let mut h1 = pre0.clone();
            Activation::Relu.apply(&mut h1);
            let (pre1, agg1) = rgcn_pre(&inputs.adj, &h1, l1, 0..u);
            let mut zg = pre1.clone();
            last.apply(&mut zg);
            (pre0, h1, agg1, pre1, zg)
        }
        None => (empty(), empty(), std::array::from_fn(|_| empty()), empty(), empty()),
    };
    let (pre_a, h_a, pre_b, zm) = match &params.mlp {
        Some(m) => {
            let pre_a = inputs.x_mlp.dot(&m.w1) + &m.b1;
            let mut h_a = pre_a.clone();
            Activation::Relu.apply(&mut h_a);
            let pre_b = h_a.dot(&m.w2) + &m.b2;
            let mut zm = pre_b.clone();
            last.apply(&mut zm);
            (pre_a, h_a, pre_b, zm)
        }
        None => (empty(), empty(), empty(), empty()),
    };
    if params.graph.is_some() {
        parts.push(zg.view());
    }
    if params.mlp.is_some() {
        parts.push(zm.view());
    }
    let z = ndarray::concatenate(Axis(1), &parts).expect("user rows agree");
    let logits = z.dot(&params.cls_w) + &params.cls_b;
    Forward {
        pre0,
        h1,
        agg1,
        pre1,
        pre_a,
        h_a,
        pre_b,
        z,
        logits,
    }
}

pub fn backward(
    params: &GsiParams,
    last: Activation,
    inputs: &GsiInputs,
    fwd: &Forward,
    dlogits: &Array2<f64>,
) -> GsiParams {
    let u = inputs.num_users;
    let mut g = params.zeros_like();
    g.cls_w = fwd.z.t().dot(dlogits);
    g.cls_b = dlogits.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dz = dlogits.dot(&params.cls_w.t());
    let mut col = 0;

    if let (Some(p), Some(gg)) = (&params.graph, &mut g.graph) {
        let h = p.layers[1].self_weight.ncols();
        let mut dpre1 = dz.slice(s![.., col..col + h]).to_owned();
        col += h;
        last.backprop(&mut dpre1, &fwd.pre1);

        let l1 = &p.layers[1];
        let g1 = &mut gg.layers[1];
        g1.self_weight = fwd.h1.slice(s![..u, ..]).t().dot(&dpre1);
        let mut dh1 = Array2::zeros(fwd.h1.dim());
        dh1.slice_mut(s![..u, ..]).assign(&dpre1.dot(&l1.self_weight.t()));
        for z in 0..NUM_RELATIONS {
            if !inputs.adj.has_edges(z) {
                continue;
            }
            g1.relation[z] = fwd.agg1[z].t().dot(&dpre1);
            let back = dpre1.dot(&l1.relation[z].t());
            for i in 0..u {
                for &(j, w) in inputs.adj.row(z, i) {
                    let mut row = dh1.row_mut(j);
                    row.scaled_add(w, &back.row(i));
                }
            }
        }
        relu_backprop(&mut dh1, &fwd.pre0);
        let g0 = &mut gg.layers[0];
        g0.self_weight = inputs.x_graph.t().dot(&dh1);
        let top = dh1.slice(s![..u, ..]);
        for z in 0..NUM_RELATIONS {
            if inputs.adj.has_edges(z) {
                g0.relation[z] = inputs.agg0[z].t().dot(&top);
            }
        }
    }

    if let (Some(p), Some(gm)) = (&params.mlp, &mut g.mlp) {
        let h = p.w2.ncols();
        let mut dpre_b = dz.slice(s![.., col..col + h]).to_owned();
        last.backprop(&mut dpre_b, &fwd.pre_b);
        gm.w2 = fwd.h_a.t().dot(&dpre_b);
        gm.b2 = dpre_b.sum_axis(Axis(0)).insert_axis(Axis(0));
        let mut dpre_a = dpre_b.dot(&p.w2.t());
        relu_backprop(&mut dpre_a, &fwd.pre_a);
        gm.w1 = inputs.x_mlp.t().dot(&dpre_a);
        gm.b1 = dpre_a.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    g
}
