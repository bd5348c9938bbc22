//! Synthetic benchmarks from ground-truth structural causal models.
//!
//! A benchmark starts from a random weighted DAG over `d` nodes where node 0
//! is the sensitive attribute (a root) and one leaf reachable from it is the
//! decision variable. Data follows the nonlinear structural equations
//!
//! ```text
//! X_i = 3 * sum_j A[j][i] * cos(X_j + 1) + U_i,    U_i ~ N(0, 1)
//! ```
//!
//! with the sensitive node entering as `cos(s + 1)` for `s` uniform on
//! `{-1, +1}`. Anomaly labels come from quantile bands of the decision
//! variable, which is then removed from the feature vector so no learner sees
//! the label source. Because the exogenous noise is stored, exact
//! ground-truth counterfactuals are available: flip `s`, keep `u`, recompute.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::matrix::Matrix;
use crate::numerics::quantile::quantile;
use crate::numerics::rng::{SeededRng, Stream};

/// Errors from benchmark generation.
#[derive(Debug, Error)]
pub enum ScmError {
    #[error("invalid generation parameter: {0}")]
    InvalidParams(String),
    #[error("no decision leaf reachable from the sensitive node after {attempts} resamples")]
    NoDecisionLeaf { attempts: usize },
    #[error("graph contains a cycle through node {node}")]
    Cycle { node: usize },
    #[error("decision value quantiles are degenerate, cannot form label bands")]
    DegenerateQuantiles,
    #[error("labeling produced an empty normal pool")]
    NormalPoolEmpty,
    #[error("sample does not carry exogenous noise")]
    MissingNoise,
    #[error("benchmark quotas unreachable after {draws} draws: {missing}")]
    QuotaUnreachable { draws: usize, missing: String },
}

/// Ground-truth weighted DAG with designated roles.
///
/// `adjacency[j][i]` is the weight of edge `X_j -> X_i`. Node
/// `sensitive_index` (always 0 here) has no parents; `decision_index` is a
/// leaf used only to derive labels.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DagSpec {
    pub adjacency: Matrix,
    pub sensitive_index: usize,
    pub decision_index: usize,
    pub seed: u64,
}

/// One observation: sensitive value, profile vector, optional stored noise,
/// optional label.
///
/// For synthetic data `u` holds the exogenous noise of every non-sensitive
/// node in ascending node order, including the hidden decision node, so the
/// full state is always reproducible from `(s, u)` and the spec.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub s: f64,
    pub x: Vec<f64>,
    pub u: Option<Vec<f64>>,
    pub y: Option<u8>,
}

/// A homogeneous collection of samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    m: usize,
    has_labels: bool,
    has_noise: bool,
}

impl Dataset {
    /// Wraps samples, deriving the label/noise flags.
    ///
    /// # Panics
    /// Panics if samples disagree on dimension or on the presence of labels
    /// or noise.
    pub fn new(samples: Vec<Sample>, m: usize) -> Self {
        let has_labels = samples.first().map_or(false, |s| s.y.is_some());
        let has_noise = samples.first().map_or(false, |s| s.u.is_some());
        for (i, s) in samples.iter().enumerate() {
            assert_eq!(s.x.len(), m, "sample {i} has dimension {} != {m}", s.x.len());
            assert_eq!(s.y.is_some(), has_labels, "sample {i} label presence differs");
            assert_eq!(s.u.is_some(), has_noise, "sample {i} noise presence differs");
        }
        Dataset { samples, m, has_labels, has_noise }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn has_labels(&self) -> bool {
        self.has_labels
    }

    pub fn has_noise(&self) -> bool {
        self.has_noise
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    /// Profile vectors as an `N x m` matrix.
    pub fn x_matrix(&self) -> Matrix {
        Matrix::from_fn(self.len(), self.m, |i, j| self.samples[i].x[j])
    }

    /// Full data vectors `d = (s, x)` as an `N x (m+1)` matrix.
    pub fn d_matrix(&self) -> Matrix {
        Matrix::from_fn(self.len(), self.m + 1, |i, j| {
            if j == 0 {
                self.samples[i].s
            } else {
                self.samples[i].x[j - 1]
            }
        })
    }

    pub fn s_values(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.s).collect()
    }

    /// Labels, if this dataset carries them.
    pub fn labels(&self) -> Option<Vec<u8>> {
        self.has_labels.then(|| self.samples.iter().map(|s| s.y.unwrap()).collect())
    }
}

impl DagSpec {
    pub fn nodes(&self) -> usize {
        self.adjacency.rows()
    }

    /// All node indices except the sensitive root, ascending. This is the
    /// index space of stored noise vectors.
    pub fn non_sensitive_nodes(&self) -> Vec<usize> {
        (0..self.nodes()).filter(|&i| i != self.sensitive_index).collect()
    }

    /// Nodes that survive into the released feature vector: everything except
    /// the sensitive root and the decision leaf, ascending.
    pub fn feature_nodes(&self) -> Vec<usize> {
        (0..self.nodes())
            .filter(|&i| i != self.sensitive_index && i != self.decision_index)
            .collect()
    }

    /// True adjacency restricted to the variables a learner sees, ordered as
    /// the pipeline's data vectors: sensitive first, then feature nodes.
    pub fn feature_adjacency(&self) -> Matrix {
        let mut order = vec![self.sensitive_index];
        order.extend(self.feature_nodes());
        Matrix::from_fn(order.len(), order.len(), |i, j| {
            self.adjacency.get(order[i], order[j])
        })
    }

    /// Structural part of node `i` given a full vector of node values:
    /// `3 * sum_j A[j][i] * cos(values[j] + 1)`.
    ///
    /// Zero-weight terms are skipped so the floating-point operation sequence
    /// depends only on the graph's support; this is what makes regeneration
    /// bit-exact.
    pub fn structural(&self, values: &[f64], i: usize) -> f64 {
        let mut acc = 0.0;
        for j in 0..self.nodes() {
            let w = self.adjacency.get(j, i);
            if w != 0.0 {
                acc += w * (values[j] + 1.0).cos();
            }
        }
        3.0 * acc
    }

    /// Evaluates all structural equations in topological order. `u_by_node`
    /// is indexed by node (the sensitive entry is ignored).
    pub fn evaluate(&self, order: &[usize], s: f64, u_by_node: &[f64]) -> Vec<f64> {
        let mut values = vec![0.0; self.nodes()];
        values[self.sensitive_index] = s;
        for &i in order {
            if i == self.sensitive_index {
                continue;
            }
            values[i] = self.structural(&values, i) + u_by_node[i];
        }
        values
    }

    /// Expands a sample's stored noise (ascending non-sensitive nodes) into a
    /// node-indexed vector.
    fn u_by_node(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.nodes()];
        for (slot, &node) in self.non_sensitive_nodes().iter().enumerate() {
            out[node] = u[slot];
        }
        out
    }
}

/// Kahn topological order with ties broken by ascending node index.
///
/// Returns an error naming an offending node if the nonzero pattern contains
/// a cycle.
pub fn topological_order(adjacency: &Matrix) -> Result<Vec<usize>, ScmError> {
    let d = adjacency.rows();
    assert_eq!(d, adjacency.cols(), "adjacency must be square");
    let mut indegree = vec![0usize; d];
    for i in 0..d {
        for j in 0..d {
            if adjacency.get(j, i) != 0.0 {
                indegree[i] += 1;
            }
        }
    }
    let mut order = Vec::with_capacity(d);
    let mut placed = vec![false; d];
    for _ in 0..d {
        let Some(next) = (0..d).find(|&i| !placed[i] && indegree[i] == 0) else {
            let node = (0..d).find(|&i| !placed[i]).unwrap();
            return Err(ScmError::Cycle { node });
        };
        placed[next] = true;
        order.push(next);
        for i in 0..d {
            if adjacency.get(next, i) != 0.0 {
                indegree[i] -= 1;
            }
        }
    }
    Ok(order)
}

/// Samples an Erdos-Renyi DAG with node 0 as the sensitive root and a
/// reachable leaf as the decision node.
///
/// Each unordered pair becomes an edge with probability `edge_prob`,
/// oriented along a random permutation that keeps node 0 first. Weights are
/// uniform on `[weight_low, weight_high]` with a random sign, keeping
/// magnitudes bounded away from zero so edges stay identifiable. If no leaf
/// is reachable from the root the graph is resampled, up to 100 times.
pub fn sample_er_dag(
    nodes: usize,
    edge_prob: f64,
    weight_low: f64,
    weight_high: f64,
    rng: &mut SeededRng,
    seed: u64,
) -> Result<DagSpec, ScmError> {
    if nodes < 2 {
        return Err(ScmError::InvalidParams(format!("need at least 2 nodes, got {nodes}")));
    }
    if !(0.0..=1.0).contains(&edge_prob) {
        return Err(ScmError::InvalidParams(format!("edge_prob {edge_prob} outside [0, 1]")));
    }
    if !(0.0 < weight_low && weight_low < weight_high) {
        return Err(ScmError::InvalidParams(format!(
            "weight range [{weight_low}, {weight_high}] must be positive and increasing"
        )));
    }

    const MAX_ATTEMPTS: usize = 100;
    for _ in 0..MAX_ATTEMPTS {
        // Random topological position for every node, sensitive root first.
        let mut rest: Vec<usize> = (1..nodes).collect();
        rng.shuffle(&mut rest);
        let mut position = vec![0usize; nodes];
        for (pos, &node) in rest.iter().enumerate() {
            position[node] = pos + 1;
        }

        let mut adjacency = Matrix::zeros(nodes, nodes);
        for a in 0..nodes {
            for b in (a + 1)..nodes {
                if rng.uniform() < edge_prob {
                    let (from, to) = if position[a] < position[b] { (a, b) } else { (b, a) };
                    let weight = rng.sign() * rng.range(weight_low, weight_high);
                    adjacency.set(from, to, weight);
                }
            }
        }

        // Decision candidates: leaves with a directed path from the root.
        let reachable = reachable_from(&adjacency, 0);
        let candidates: Vec<usize> = (1..nodes)
            .filter(|&i| reachable[i] && (0..nodes).all(|k| adjacency.get(i, k) == 0.0))
            .collect();
        if candidates.is_empty() {
            continue;
        }
        let decision_index = candidates[rng.below(candidates.len())];
        return Ok(DagSpec { adjacency, sensitive_index: 0, decision_index, seed });
    }
    Err(ScmError::NoDecisionLeaf { attempts: MAX_ATTEMPTS })
}

fn reachable_from(adjacency: &Matrix, start: usize) -> Vec<bool> {
    let d = adjacency.rows();
    let mut seen = vec![false; d];
    seen[start] = true;
    let mut stack = vec![start];
    while let Some(j) = stack.pop() {
        for i in 0..d {
            if !seen[i] && adjacency.get(j, i) != 0.0 {
                seen[i] = true;
                stack.push(i);
            }
        }
    }
    seen
}

/// Generates `n` unlabeled samples from the structural equations. The
/// returned profile vectors cover every non-sensitive node, decision
/// included; labeling later removes the decision column.
pub fn generate_data(spec: &DagSpec, n: usize, rng: &mut SeededRng) -> Dataset {
    let order = topological_order(&spec.adjacency).expect("spec adjacency is acyclic");
    let non_sensitive = spec.non_sensitive_nodes();
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let (s, u) = draw_exogenous(spec, rng);
        let values = spec.evaluate(&order, s, &spec.u_by_node(&u));
        let x = non_sensitive.iter().map(|&i| values[i]).collect();
        samples.push(Sample { s, x, u: Some(u), y: None });
    }
    Dataset::new(samples, non_sensitive.len())
}

/// Draws `(s, u)` for one sample: the sensitive sign, then one standard
/// normal per non-sensitive node in ascending order.
fn draw_exogenous(spec: &DagSpec, rng: &mut SeededRng) -> (f64, Vec<f64>) {
    let s = rng.sign();
    let u = (1..spec.nodes()).map(|_| rng.standard_normal()).collect();
    (s, u)
}

/// Exact counterfactual of a synthetic sample: flip `s`, keep `u`, replay
/// the structural equations. The label is dropped because the counterfactual
/// label is a separate question answered by the label rule.
///
/// Works on both raw samples (decision still in `x`) and released ones.
pub fn ground_truth_counterfactual(spec: &DagSpec, sample: &Sample) -> Result<Sample, ScmError> {
    let u = sample.u.as_ref().ok_or(ScmError::MissingNoise)?;
    let order = topological_order(&spec.adjacency).expect("spec adjacency is acyclic");
    let values = spec.evaluate(&order, -sample.s, &spec.u_by_node(u));
    let nodes = if sample.x.len() == spec.nodes() - 1 {
        spec.non_sensitive_nodes()
    } else {
        spec.feature_nodes()
    };
    assert_eq!(sample.x.len(), nodes.len(), "sample dimension matches neither view of the spec");
    Ok(Sample {
        s: -sample.s,
        x: nodes.iter().map(|&i| values[i]).collect(),
        u: Some(u.clone()),
        y: None,
    })
}

/// Quantile thresholds that turn decision values into anomaly labels.
///
/// Anomalous above `anomaly_high` or below `anomaly_low`; normal inside
/// `[normal_low, normal_high]`; unlabeled (discarded) in the gaps.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LabelRule {
    pub anomaly_low: f64,
    pub normal_low: f64,
    pub normal_high: f64,
    pub anomaly_high: f64,
}

impl LabelRule {
    /// Fits the bands at the 0.01 / 0.3 / 0.7 / 0.85 quantiles of a pool of
    /// decision values.
    pub fn from_decision_pool(decisions: &[f64]) -> Result<Self, ScmError> {
        let rule = LabelRule {
            anomaly_low: quantile(decisions, 0.01).map_err(|_| ScmError::DegenerateQuantiles)?,
            normal_low: quantile(decisions, 0.3).unwrap(),
            normal_high: quantile(decisions, 0.7).unwrap(),
            anomaly_high: quantile(decisions, 0.85).unwrap(),
        };
        // All equal (or otherwise collapsed) pools cannot separate bands.
        if rule.anomaly_high <= rule.normal_high || rule.normal_low <= rule.anomaly_low {
            return Err(ScmError::DegenerateQuantiles);
        }
        Ok(rule)
    }

    /// Factual label: 1 in the anomaly tails, 0 in the normal band, `None`
    /// in the gaps.
    pub fn label(&self, decision: f64) -> Option<u8> {
        if self.anomalous(decision) {
            Some(1)
        } else if decision >= self.normal_low && decision <= self.normal_high {
            Some(0)
        } else {
            None
        }
    }

    /// Binary tail test used for counterfactual labels, where no sample is
    /// discarded: anything outside the anomaly tails counts as normal.
    pub fn anomalous(&self, decision: f64) -> bool {
        decision > self.anomaly_high || decision < self.anomaly_low
    }
}

/// Labels a raw dataset by quantile bands of its own decision values and
/// removes the decision variable from the feature vectors.
///
/// Returns the surviving samples plus the fitted rule. Samples in the
/// unlabeled gaps are discarded.
pub fn label_anomalies(dataset: &Dataset, spec: &DagSpec) -> Result<(Dataset, LabelRule), ScmError> {
    assert_eq!(dataset.m(), spec.nodes() - 1, "dataset must still contain the decision node");
    let decision_slot = spec
        .non_sensitive_nodes()
        .iter()
        .position(|&i| i == spec.decision_index)
        .expect("decision node is non-sensitive");
    let decisions: Vec<f64> = dataset.samples().iter().map(|s| s.x[decision_slot]).collect();
    let rule = LabelRule::from_decision_pool(&decisions)?;

    let mut kept = Vec::new();
    for sample in dataset.samples() {
        let Some(y) = rule.label(sample.x[decision_slot]) else { continue };
        let mut x = sample.x.clone();
        x.remove(decision_slot);
        kept.push(Sample { s: sample.s, x, u: sample.u.clone(), y: Some(y) });
    }
    if !kept.iter().any(|s| s.y == Some(0)) {
        return Err(ScmError::NormalPoolEmpty);
    }
    Ok((Dataset::new(kept, dataset.m() - 1), rule))
}

/// Size and shape parameters for [`build_benchmark`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchmarkParams {
    pub nodes: usize,
    pub edge_prob: f64,
    pub weight_low: f64,
    pub weight_high: f64,
    pub train_n: usize,
    pub test_normal_n: usize,
    pub test_anomaly_n: usize,
    /// Pool size used to freeze the label quantiles before assembly.
    pub calibration_n: usize,
    /// Generation stops with an error after `max_draw_factor` times the
    /// total requested count of candidate draws.
    pub max_draw_factor: usize,
}

impl Default for BenchmarkParams {
    fn default() -> Self {
        BenchmarkParams {
            nodes: 21,
            edge_prob: 0.25,
            weight_low: 0.5,
            weight_high: 2.0,
            train_n: 12_000,
            test_normal_n: 4_000,
            test_anomaly_n: 400,
            calibration_n: 20_000,
            max_draw_factor: 200,
        }
    }
}

/// A fully assembled synthetic benchmark.
///
/// `train_cf` and `test_cf` hold the exact ground-truth counterfactual of
/// each train/test row (same index), labeled by the tail test of `rule`.
#[derive(Clone, Debug)]
pub struct Benchmark {
    pub spec: DagSpec,
    pub rule: LabelRule,
    pub train: Dataset,
    pub test: Dataset,
    pub train_cf: Dataset,
    pub test_cf: Dataset,
}

/// Builds the synthetic benchmark for one seed.
///
/// The label quantiles are frozen on a calibration pool first, then
/// candidates are drawn and routed by rejection into per-split buckets so
/// that the train split is all-normal, the test split has the requested
/// class counts, and within every split half the samples have a ground-truth
/// counterfactual label different from their factual label.
pub fn build_benchmark(params: &BenchmarkParams, seed: u64) -> Result<Benchmark, ScmError> {
    validate_params(params)?;
    let mut graph_rng = SeededRng::new(seed, Stream::Graph);
    let spec = sample_er_dag(
        params.nodes,
        params.edge_prob,
        params.weight_low,
        params.weight_high,
        &mut graph_rng,
        seed,
    )?;
    let order = topological_order(&spec.adjacency).expect("sampled adjacency is acyclic");
    let mut rng = SeededRng::new(seed, Stream::Noise);

    // Freeze label bands on an independent pool so later rejection cannot
    // shift the quantiles.
    let mut calibration = Vec::with_capacity(params.calibration_n);
    for _ in 0..params.calibration_n {
        let (s, u) = draw_exogenous(&spec, &mut rng);
        let values = spec.evaluate(&order, s, &spec.u_by_node(&u));
        calibration.push(values[spec.decision_index]);
    }
    let rule = LabelRule::from_decision_pool(&calibration)?;

    // Buckets: (split, flip) quotas. Flip means the counterfactual label
    // differs from the factual one.
    let mut train = BucketPair::new(params.train_n);
    let mut test_normal = BucketPair::new(params.test_normal_n);
    let mut test_anomaly = BucketPair::new(params.test_anomaly_n);

    let total_requested = params.train_n + params.test_normal_n + params.test_anomaly_n;
    let max_draws = params.max_draw_factor * total_requested;
    let feature_nodes = spec.feature_nodes();

    let mut draws = 0usize;
    while !(train.full() && test_normal.full() && test_anomaly.full()) {
        if draws >= max_draws {
            return Err(ScmError::QuotaUnreachable {
                draws,
                missing: format!(
                    "train {}/{}, test normal {}/{}, test anomaly {}/{}",
                    train.count(),
                    params.train_n,
                    test_normal.count(),
                    params.test_normal_n,
                    test_anomaly.count(),
                    params.test_anomaly_n
                ),
            });
        }
        draws += 1;

        let (s, u) = draw_exogenous(&spec, &mut rng);
        let u_by_node = spec.u_by_node(&u);
        let values = spec.evaluate(&order, s, &u_by_node);
        let Some(y) = rule.label(values[spec.decision_index]) else { continue };

        let cf_values = spec.evaluate(&order, -s, &u_by_node);
        let y_cf = u8::from(rule.anomalous(cf_values[spec.decision_index]));
        let flip = y_cf != y;

        let bucket = if y == 0 {
            if train.has_room(flip) {
                &mut train
            } else {
                &mut test_normal
            }
        } else {
            &mut test_anomaly
        };
        if !bucket.has_room(flip) {
            continue;
        }
        let factual = Sample {
            s,
            x: feature_nodes.iter().map(|&i| values[i]).collect(),
            u: Some(u.clone()),
            y: Some(y),
        };
        let counterfactual = Sample {
            s: -s,
            x: feature_nodes.iter().map(|&i| cf_values[i]).collect(),
            u: Some(u),
            y: Some(y_cf),
        };
        bucket.push(flip, factual, counterfactual);
    }

    let m = feature_nodes.len();
    let (test_f, test_c) = {
        let (mut f, mut c) = test_normal.into_samples();
        let (fa, ca) = test_anomaly.into_samples();
        f.extend(fa);
        c.extend(ca);
        (f, c)
    };
    let (train_f, train_c) = train.into_samples();
    Ok(Benchmark {
        spec,
        rule,
        train: Dataset::new(train_f, m),
        train_cf: Dataset::new(train_c, m),
        test: Dataset::new(test_f, m),
        test_cf: Dataset::new(test_c, m),
    })
}

fn validate_params(params: &BenchmarkParams) -> Result<(), ScmError> {
    if params.nodes < 3 {
        return Err(ScmError::InvalidParams(format!(
            "benchmark needs at least 3 nodes, got {}",
            params.nodes
        )));
    }
    if !(params.edge_prob > 0.0 && params.edge_prob < 1.0) {
        return Err(ScmError::InvalidParams(format!(
            "edge_prob must be strictly inside (0, 1), got {}",
            params.edge_prob
        )));
    }
    if params.train_n == 0 || params.test_normal_n == 0 || params.test_anomaly_n == 0 {
        return Err(ScmError::InvalidParams("split sizes must be positive".into()));
    }
    if params.calibration_n < 100 {
        return Err(ScmError::InvalidParams(format!(
            "calibration pool too small: {}",
            params.calibration_n
        )));
    }
    Ok(())
}

/// Quota bookkeeping for one split: half flipped, half not (the extra sample
/// of an odd target goes to the non-flipped side).
struct BucketPair {
    flip_target: usize,
    noflip_target: usize,
    flip: Vec<(Sample, Sample)>,
    noflip: Vec<(Sample, Sample)>,
}

impl BucketPair {
    fn new(total: usize) -> Self {
        let flip_target = total / 2;
        BucketPair {
            flip_target,
            noflip_target: total - flip_target,
            flip: Vec::new(),
            noflip: Vec::new(),
        }
    }

    fn has_room(&self, flip: bool) -> bool {
        if flip {
            self.flip.len() < self.flip_target
        } else {
            self.noflip.len() < self.noflip_target
        }
    }

    fn full(&self) -> bool {
        self.flip.len() == self.flip_target && self.noflip.len() == self.noflip_target
    }

    fn count(&self) -> usize {
        self.flip.len() + self.noflip.len()
    }

    fn push(&mut self, flip: bool, factual: Sample, counterfactual: Sample) {
        if flip {
            self.flip.push((factual, counterfactual));
        } else {
            self.noflip.push((factual, counterfactual));
        }
    }

    /// Flattens into (factual, counterfactual) sample lists, flipped first.
    fn into_samples(self) -> (Vec<Sample>, Vec<Sample>) {
        let mut f = Vec::with_capacity(self.count());
        let mut c = Vec::with_capacity(self.count());
        for (fact, cf) in self.flip.into_iter().chain(self.noflip) {
            f.push(fact);
            c.push(cf);
        }
        (f, c)
    }
}
