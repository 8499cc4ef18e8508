//! Cosine-similarity sample graphs and the two-layer graph convolutional
//! network trained transductively with node masks.
//!
//! Propagation uses `D̂^-1/2 (A + I) D̂^-1/2` with a binary adjacency `A`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::classifiers::{argmax_labels, check_labels, classification_loss, logits_loss, output_units, absent_class_warnings};
use crate::error::{Error, Result};
use crate::fingerprint::Fingerprinter;
use crate::metrics::accuracy;
use crate::nn::{adam_step, AdamState, DropoutLayer, ForwardCtx, GradientTape, Init, LinearLayer, ParamSet, Var};
use crate::sparse::CsrMatrix;
use crate::tensor::{Matrix, Scalar};
use crate::train::{History, TrainConfig};

/// `u·v / (‖u‖‖v‖)` in double precision; 0 when either vector is zero.
pub fn cosine_similarity(u: &[f32], v: &[f32]) -> f64 {
    let (mut dot, mut nu, mut nv) = (0f64, 0f64, 0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (a as f64, b as f64);
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    (dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub threshold: f64,
    /// Global edge budget.
    pub max_edges: usize,
    /// Optional cap on edges per node, applied while filling the budget.
    pub per_node_cap: Option<usize>,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            threshold: 0.4,
            max_edges: 1000,
            per_node_cap: None,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > -1.0 && self.threshold <= 1.0) {
            return Err(Error::Config(format!(
                "similarity threshold must lie in (-1, 1], got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub similarity: f64,
}

#[derive(Clone, Debug)]
pub struct SampleGraph {
    pub features: Matrix<f32>,
    /// Undirected, `i < j`, no self-pairs; sorted by decreasing similarity.
    pub edges: Vec<Edge>,
    pub norm_adj: Arc<CsrMatrix<f32>>,
    pub config: GraphConfig,
}

impl SampleGraph {
    pub fn node_count(&self) -> usize {
        self.features.rows()
    }

    pub fn edge_pairs(&self) -> Vec<(usize, usize)> {
        self.edges.iter().map(|e| (e.i, e.j)).collect()
    }

    pub fn fingerprint(&self) -> String {
        let mut f = Fingerprinter::new("sample-graph");
        f.matrix(&self.features)
            .u64(self.config.threshold.to_bits())
            .u64(self.config.max_edges as u64)
            .u64(self.config.per_node_cap.map_or(u64::MAX, |c| c as u64));
        for e in &self.edges {
            f.u64(e.i as u64).u64(e.j as u64).u64(e.similarity.to_bits());
        }
        f.finish()
    }

    /// Text export: a header line then one `i,j,similarity` line per edge.
    pub fn export(&self) -> String {
        let mut out = format!(
            "# nodes={} edges={} threshold={} max_edges={} fingerprint={}\ni,j,similarity\n",
            self.node_count(),
            self.edges.len(),
            self.config.threshold,
            self.config.max_edges,
            self.fingerprint()
        );
        for e in &self.edges {
            out.push_str(&format!("{},{},{:.17}\n", e.i, e.j, e.similarity));
        }
        out
    }
}

/// Orders candidate edges by similarity (descending), then by index pair.
fn edge_order(a: &Edge, b: &Edge) -> std::cmp::Ordering {
    b.similarity
        .total_cmp(&a.similarity)
        .then((a.i, a.j).cmp(&(b.i, b.j)))
}

/// Keeps all pairs with similarity at or above the threshold, then the
/// `max_edges` most similar of them.
pub fn build_graph(z: &Matrix<f32>, config: &GraphConfig) -> Result<SampleGraph> {
    config.validate()?;
    let n = z.rows();
    if n == 0 {
        return Err(Error::Input("cannot build a graph on zero samples".into()));
    }
    z.check_finite()?;
    let norms: Vec<f64> = z
        .iter_rows()
        .map(|r| r.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt())
        .collect();
    let mut candidates = Vec::new();
    for i in 0..n {
        let ri = z.row(i);
        for j in i + 1..n {
            let s = if norms[i] == 0.0 || norms[j] == 0.0 {
                0.0
            } else {
                let dot: f64 = ri.iter().zip(z.row(j)).map(|(&a, &b)| a as f64 * b as f64).sum();
                (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0)
            };
            if s >= config.threshold {
                candidates.push(Edge { i, j, similarity: s });
            }
        }
    }
    candidates.sort_by(edge_order);
    let edges = match config.per_node_cap {
        None => {
            candidates.truncate(config.max_edges);
            candidates
        }
        Some(cap) => {
            let mut degree = vec![0usize; n];
            let mut kept = Vec::new();
            for e in candidates {
                if kept.len() == config.max_edges {
                    break;
                }
                if degree[e.i] < cap && degree[e.j] < cap {
                    degree[e.i] += 1;
                    degree[e.j] += 1;
                    kept.push(e);
                }
            }
            kept
        }
    };
    let pairs: Vec<(usize, usize)> = edges.iter().map(|e| (e.i, e.j)).collect();
    Ok(SampleGraph {
        features: z.clone(),
        edges,
        norm_adj: Arc::new(normalize_adjacency(&pairs, n)?),
        config: config.clone(),
    })
}

/// `D̂^-1/2 (A + I) D̂^-1/2` for an undirected edge list; degrees count the
/// self-loop. Duplicate and self pairs are ignored.
pub fn normalize_adjacency<T: Scalar>(edges: &[(usize, usize)], n: usize) -> Result<CsrMatrix<T>> {
    let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
    for &(a, b) in edges {
        if a >= n || b >= n {
            return Err(Error::Input(format!("edge ({a}, {b}) outside {n} nodes")));
        }
        if a != b {
            pairs.push((a.min(b), a.max(b)));
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    let mut degree = vec![1usize; n];
    for &(a, b) in &pairs {
        degree[a] += 1;
        degree[b] += 1;
    }
    let weight = |a: usize, b: usize| T::from_f64(1.0 / ((degree[a] * degree[b]) as f64).sqrt());
    let mut triplets = Vec::with_capacity(n + 2 * pairs.len());
    for (i, _) in degree.iter().enumerate() {
        triplets.push((i, i, weight(i, i)));
    }
    for &(a, b) in &pairs {
        triplets.push((a, b, weight(a, b)));
        triplets.push((b, a, weight(a, b)));
    }
    CsrMatrix::from_triplets(n, n, triplets)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GcnSpec {
    pub input_width: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub num_classes: usize,
}

impl Default for GcnSpec {
    fn default() -> Self {
        Self {
            input_width: 256,
            hidden: 128,
            dropout: 0.3,
            num_classes: 7,
        }
    }
}

impl GcnSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_width == 0 || self.hidden == 0 {
            return Err(Error::Config("gcn widths must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!("num_classes must be at least 2, got {}", self.num_classes)));
        }
        DropoutLayer::new(self.dropout)?;
        Ok(())
    }
}

/// `Â·ReLU(Â X W₀ᵀ)·W₁ᵀ` with dropout on the hidden node features.
#[derive(Clone, Debug, PartialEq)]
pub struct Gcn {
    pub spec: GcnSpec,
    pub params: ParamSet<f32>,
    w0: LinearLayer,
    w1: LinearLayer,
    dropout: DropoutLayer,
}

impl Gcn {
    pub fn new(spec: GcnSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamSet::new();
        let w0 = LinearLayer::new(&mut params, "gcn.0", spec.input_width, spec.hidden, Init::He, false, seed)?;
        let w1 = LinearLayer::new(
            &mut params,
            "gcn.1",
            spec.hidden,
            output_units(spec.num_classes),
            Init::Xavier,
            false,
            seed,
        )?;
        Ok(Self {
            dropout: DropoutLayer::new(spec.dropout)?,
            spec,
            params,
            w0,
            w1,
        })
    }

    pub fn from_parts(spec: GcnSpec, params: ParamSet<f32>) -> Result<Self> {
        let reference = Self::new(spec, 0)?;
        reference.params.check_layout(&params)?;
        Ok(Self { params, ..reference })
    }

    /// Records logits for every node of the graph.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut GradientTape<T>,
        params: &ParamSet<T>,
        adj: &Arc<CsrMatrix<T>>,
        x: Var,
        ctx: &mut ForwardCtx,
    ) -> Result<Var> {
        let (n, d) = tape.value(x).shape();
        if d != self.spec.input_width {
            return Err(Error::width("gcn node features", self.spec.input_width, d));
        }
        if adj.rows() != n || adj.cols() != n {
            return Err(Error::shape("gcn adjacency", (n, n), (adj.rows(), adj.cols())));
        }
        let h = self.w0.forward(tape, params, x)?;
        let h = tape.spmm(Arc::clone(adj), h)?;
        let h = tape.relu(h);
        let h = self.dropout.forward(tape, h, ctx)?;
        let h = self.w1.forward(tape, params, h)?;
        tape.spmm(Arc::clone(adj), h)
    }

    /// Eval-mode logits for all nodes.
    pub fn logits(&self, graph: &SampleGraph) -> Result<Matrix<f32>> {
        let mut tape = GradientTape::new();
        let x = tape.constant(graph.features.clone());
        let out = self.forward(&mut tape, &self.params, &graph.norm_adj, x, &mut ForwardCtx::eval())?;
        Ok(tape.take_value(out))
    }

    pub fn fingerprint(&self) -> String {
        let mut f = Fingerprinter::new("gcn");
        f.str(&serde_json::to_string(&self.spec).expect("spec serializes"));
        self.params.fingerprint_into(&mut f);
        f.finish()
    }
}

#[derive(Clone, Debug)]
pub struct TrainedGcn {
    pub model: Gcn,
    pub history: History,
    pub warnings: Vec<String>,
}

/// Full-graph training: every epoch is one Adam step on the loss over
/// `train_nodes`. Labels outside the training nodes are never read by the
/// loss; test metrics are recorded per epoch.
pub fn train_gcn(
    graph: &SampleGraph,
    labels: &[usize],
    train_nodes: &[usize],
    test_nodes: &[usize],
    spec: GcnSpec,
    config: &TrainConfig,
) -> Result<TrainedGcn> {
    config.validate()?;
    let n = graph.node_count();
    if labels.len() != n {
        return Err(Error::Input(format!("{n} nodes but {} labels", labels.len())));
    }
    if train_nodes.is_empty() {
        return Err(Error::Config("gcn training mask is empty".into()));
    }
    let mut in_train = vec![false; n];
    for &i in train_nodes {
        if i >= n {
            return Err(Error::Input(format!("training node {i} outside {n} nodes")));
        }
        in_train[i] = true;
    }
    if let Some(&i) = test_nodes.iter().find(|&&i| i >= n || in_train[i]) {
        return Err(Error::Config(format!("test node {i} is out of range or also in the training mask")));
    }
    let c = spec.num_classes;
    check_labels(labels, c)?;
    let train_labels: Vec<usize> = train_nodes.iter().map(|&i| labels[i]).collect();
    let test_labels: Vec<usize> = test_nodes.iter().map(|&i| labels[i]).collect();
    let warnings = absent_class_warnings(&train_labels, c);

    let mut model = Gcn::new(spec, config.seed)?;
    let mut adam = AdamState::new(&model.params);
    let mut history = History::default();
    for epoch in 1..=config.epochs {
        let mut tape = GradientTape::new();
        let x = tape.constant(graph.features.clone());
        let mut ctx = ForwardCtx::train(config.seed, &format!("gcn/dropout/{epoch}"));
        let logits = model.forward(&mut tape, &model.params, &graph.norm_adj, x, &mut ctx)?;
        let picked = tape.select_rows(logits, train_nodes.to_vec())?;
        let loss = classification_loss(&mut tape, picked, &train_labels, c)?;
        let l = tape.value(loss)[(0, 0)] as f64;
        if !l.is_finite() {
            return Err(Error::Numerical(format!("non-finite gcn loss at epoch {epoch}")));
        }
        let train_acc = accuracy(&argmax_labels(tape.value(picked)), &train_labels)?;
        let grads = tape.backward(loss, &model.params)?;
        adam_step(&mut model.params, &grads, &mut adam, config.lr)?;
        history.push(epoch, "train", l, Some(train_acc));
        if !test_nodes.is_empty() {
            let all = model.logits(graph)?;
            let test_logits = all.select_rows(test_nodes);
            let loss = logits_loss(&test_logits, &test_labels, c)?;
            history.push(epoch, "test", loss, Some(accuracy(&argmax_labels(&test_logits), &test_labels)?));
        }
    }
    Ok(TrainedGcn {
        model,
        history,
        warnings,
    })
}
