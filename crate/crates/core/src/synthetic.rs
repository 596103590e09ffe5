//! Synthetic causal benchmarks: DAGs, d-separation, structural equation
//! sampling, linear mixing and recovery scoring.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bandpower::{band_bins, filtered_logbp, Band, LogBandpower, TimeseriesDataset};
use crate::error::{invalid_input, Error, Result};
use crate::merlin::Dataset;
use crate::stats::pearson;

/// Largest condition number accepted for a random mixing matrix.
pub const MAX_CONDITION: f64 = 100.0;

/// Directed graph over named nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalGraph {
    nodes: Vec<String>,
    parents: Vec<Vec<usize>>,
}

impl CausalGraph {
    pub fn new<S: AsRef<str>>(nodes: &[S]) -> Result<Self> {
        let nodes: Vec<String> = nodes.iter().map(|s| s.as_ref().to_string()).collect();
        for (i, n) in nodes.iter().enumerate() {
            if nodes[..i].contains(n) {
                return Err(Error::SpecRejected(format!("duplicate node {n}")));
            }
        }
        let parents = vec![Vec::new(); nodes.len()];
        Ok(Self { nodes, parents })
    }

    /// Builds a graph and checks that it is acyclic.
    pub fn from_edges<S: AsRef<str>>(nodes: &[S], edges: &[(&str, &str)]) -> Result<Self> {
        let mut g = Self::new(nodes)?;
        for (a, b) in edges {
            g.add_edge(a, b)?;
        }
        g.topological_order()?;
        Ok(g)
    }

    pub fn add_edge(&mut self, parent: &str, child: &str) -> Result<()> {
        let p = self.require(parent)?;
        let c = self.require(child)?;
        if p == c {
            return Err(Error::SpecRejected(format!("self-loop on {parent}")));
        }
        if !self.parents[c].contains(&p) {
            self.parents[c].push(p);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n == name)
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.index(name)
            .ok_or_else(|| invalid_input(format!("unknown node {name}")))
    }

    pub fn parents(&self, node: usize) -> &[usize] {
        &self.parents[node]
    }

    pub fn children(&self, node: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&c| self.parents[c].contains(&node))
            .collect()
    }

    pub fn has_edge(&self, parent: usize, child: usize) -> bool {
        self.parents[child].contains(&parent)
    }

    /// Kahn's algorithm; lowest index first among ready nodes.
    pub fn topological_order(&self) -> Result<Vec<usize>> {
        let n = self.len();
        let mut indegree: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut order = Vec::with_capacity(n);
        let mut done = vec![false; n];
        while order.len() < n {
            let Some(next) = (0..n).find(|&i| !done[i] && indegree[i] == 0) else {
                return Err(Error::SpecRejected("graph has a cycle".into()));
            };
            done[next] = true;
            order.push(next);
            for c in self.children(next) {
                indegree[c] -= 1;
            }
        }
        Ok(order)
    }

    /// Nodes with a directed path into any of `set`, including `set` itself.
    pub fn ancestors(&self, set: &[usize]) -> Vec<bool> {
        let mut mark = vec![false; self.len()];
        let mut stack: Vec<usize> = set.to_vec();
        while let Some(x) = stack.pop() {
            if !mark[x] {
                mark[x] = true;
                stack.extend(self.parents[x].iter().copied());
            }
        }
        mark
    }
}

/// Whether every node of `a` is d-separated from every node of `b` given `c`.
pub fn d_separated(g: &CausalGraph, a: &[&str], b: &[&str], c: &[&str]) -> Result<bool> {
    let resolve = |set: &[&str]| -> Result<Vec<usize>> { set.iter().map(|n| g.require(n)).collect() };
    let (a, b, c) = (resolve(a)?, resolve(b)?, resolve(c)?);
    for (x, y) in [(&a, &b), (&a, &c), (&b, &c)] {
        if let Some(n) = x.iter().find(|n| y.contains(n)) {
            return Err(invalid_input(format!(
                "node {} appears in more than one set",
                g.nodes[*n]
            )));
        }
    }
    Ok(!reachable(g, &a, &c).iter().zip(0..).any(|(&r, i)| r && b.contains(&i)))
}

/// Nodes with an active trail from `sources` given `observed`.
fn reachable(g: &CausalGraph, sources: &[usize], observed: &[usize]) -> Vec<bool> {
    let n = g.len();
    let in_obs: Vec<bool> = (0..n).map(|i| observed.contains(&i)).collect();
    let anc = g.ancestors(observed);
    // visited[node][0]: arrived from a child, [1]: arrived from a parent
    let mut visited = vec![[false; 2]; n];
    let mut hit = vec![false; n];
    let mut queue: Vec<(usize, usize)> = sources.iter().map(|&s| (s, 0)).collect();
    while let Some((y, dir)) = queue.pop() {
        if visited[y][dir] {
            continue;
        }
        visited[y][dir] = true;
        if !in_obs[y] {
            hit[y] = true;
        }
        if dir == 0 {
            if !in_obs[y] {
                queue.extend(g.parents[y].iter().map(|&p| (p, 0)));
                queue.extend(g.children(y).into_iter().map(|c| (c, 1)));
            }
        } else {
            if !in_obs[y] {
                queue.extend(g.children(y).into_iter().map(|c| (c, 1)));
            }
            if anc[y] {
                queue.extend(g.parents[y].iter().map(|&p| (p, 0)));
            }
        }
    }
    hit
}

/// Structural assignment of a node from its parents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    /// `Σ coeffs[i]·parent_i`, in the graph's parent order.
    Linear(Vec<f64>),
    /// `tanh(scale·Σ parents)`.
    Tanh { scale: f64 },
    /// `(Σ parents)²`.
    Square,
    /// Ignores the parents.
    Constant(f64),
}

impl Mechanism {
    fn apply(&self, parents: &[f64]) -> f64 {
        let sum: f64 = parents.iter().sum();
        match self {
            Mechanism::Linear(c) => c.iter().zip(parents).map(|(c, p)| c * p).sum(),
            Mechanism::Tanh { scale } => (scale * sum).tanh(),
            Mechanism::Square => sum * sum,
            Mechanism::Constant(c) => *c,
        }
    }
}

/// Mechanism plus additive Gaussian noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeModel {
    pub mechanism: Mechanism,
    pub noise_std: f64,
}

impl NodeModel {
    pub fn linear(coeffs: &[f64], noise_std: f64) -> Self {
        Self {
            mechanism: Mechanism::Linear(coeffs.to_vec()),
            noise_std,
        }
    }

    pub fn noise(noise_std: f64) -> Self {
        Self {
            mechanism: Mechanism::Constant(0.0),
            noise_std,
        }
    }
}

/// How observed channels are produced from sources.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixingKind {
    Identity,
    /// I.i.d. standard normal entries, redrawn until the condition number is
    /// at most [`MAX_CONDITION`].
    Gaussian,
    /// Haar-random orthogonal matrix. Only here does `w ⟂ v` exclude the
    /// cause source from `wᵀF`.
    #[default]
    Orthogonal,
}

/// Structural equation model over a stimulus, `d` sources and hidden nodes,
/// observed through an invertible mixing of the sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemSpec {
    pub graph: CausalGraph,
    pub stimulus: String,
    /// Source nodes in channel order.
    pub sources: Vec<String>,
    /// One model per graph node; the stimulus entry is ignored.
    pub models: Vec<NodeModel>,
    pub cause: String,
    pub target: String,
    pub mixing: MixingKind,
    pub seed: u64,
}

/// Default noise levels of the benchmark graph.
const CAUSE_NOISE: f64 = 0.5;
const TARGET_NOISE: f64 = 0.5;

impl SemSpec {
    /// `S→C1, S→C3, C1→C2, h1→C1, h1→C4`; `C5..Cd` are independent noise.
    pub fn benchmark_graph(d: usize) -> Result<CausalGraph> {
        if d < 4 {
            return Err(Error::SpecRejected(format!("benchmark needs d ≥ 4, got {d}")));
        }
        let mut nodes = vec!["S".to_string()];
        nodes.extend((1..=d).map(|i| format!("C{i}")));
        nodes.push("h1".into());
        CausalGraph::from_edges(
            &nodes,
            &[
                ("S", "C1"),
                ("S", "C3"),
                ("C1", "C2"),
                ("h1", "C1"),
                ("h1", "C4"),
            ],
        )
    }

    /// Linear benchmark with `C2 = C1 + noise`.
    pub fn linear(d: usize, mixing: MixingKind, seed: u64) -> Result<Self> {
        Self::with_target(d, NodeModel::linear(&[1.0], TARGET_NOISE), mixing, seed)
    }

    /// `C2 = C1² + noise`, uncorrelated with `C1` although dependent on it.
    pub fn square(d: usize, mixing: MixingKind, seed: u64) -> Result<Self> {
        Self::with_target(
            d,
            NodeModel {
                mechanism: Mechanism::Square,
                noise_std: TARGET_NOISE,
            },
            mixing,
            seed,
        )
    }

    /// `C2` is constant, so it carries no information about `C1`.
    pub fn independent(d: usize, mixing: MixingKind, seed: u64) -> Result<Self> {
        Self::with_target(d, NodeModel::noise(0.0), mixing, seed)
    }

    /// Benchmark graph with a custom model for `C2`.
    pub fn with_target(d: usize, target: NodeModel, mixing: MixingKind, seed: u64) -> Result<Self> {
        let graph = Self::benchmark_graph(d)?;
        let models = graph
            .nodes()
            .iter()
            .map(|n| match n.as_str() {
                "C1" => NodeModel::linear(&[1.0, 1.0], CAUSE_NOISE),
                "C2" => target.clone(),
                "C3" => NodeModel::linear(&[1.0], 1.0),
                "C4" => NodeModel::linear(&[1.0], 1.0),
                _ => NodeModel::noise(1.0),
            })
            .collect();
        let spec = Self {
            graph,
            stimulus: "S".into(),
            sources: (1..=d).map(|i| format!("C{i}")).collect(),
            models,
            cause: "C1".into(),
            target: "C2".into(),
            mixing,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn dim(&self) -> usize {
        self.sources.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.graph.topological_order()?;
        let s = self
            .graph
            .index(&self.stimulus)
            .ok_or_else(|| Error::SpecRejected(format!("unknown stimulus {}", self.stimulus)))?;
        if !self.graph.parents(s).is_empty() {
            return Err(Error::SpecRejected("the stimulus must have no parents".into()));
        }
        if self.models.len() != self.graph.len() {
            return Err(Error::SpecRejected(format!(
                "{} node models for {} nodes",
                self.models.len(),
                self.graph.len()
            )));
        }
        for (i, model) in self.models.iter().enumerate() {
            if let Mechanism::Linear(c) = &model.mechanism {
                if c.len() != self.graph.parents(i).len() && i != s {
                    return Err(Error::SpecRejected(format!(
                        "node {} has {} parents but {} coefficients",
                        self.graph.nodes()[i],
                        self.graph.parents(i).len(),
                        c.len()
                    )));
                }
            }
            if !(model.noise_std >= 0.0) {
                return Err(Error::SpecRejected("noise std must be non-negative".into()));
            }
        }
        for name in self.sources.iter().chain([&self.cause, &self.target]) {
            if self.graph.index(name).is_none() {
                return Err(Error::SpecRejected(format!("unknown node {name}")));
            }
        }
        for name in [&self.cause, &self.target] {
            if !self.sources.contains(name) {
                return Err(Error::SpecRejected(format!("{name} is not an observed source")));
            }
        }
        if self.dim() < 3 {
            return Err(Error::SpecRejected("need at least 3 sources".into()));
        }
        Ok(())
    }

    fn cause_index(&self) -> usize {
        self.sources.iter().position(|s| *s == self.cause).expect("validated")
    }

    fn target_index(&self) -> usize {
        self.sources.iter().position(|s| *s == self.target).expect("validated")
    }

    /// Draws the mixing matrix for this spec's seed.
    pub fn mixing_matrix(&self) -> Result<DMatrix<f64>> {
        let d = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1);
        match self.mixing {
            MixingKind::Identity => Ok(DMatrix::identity(d, d)),
            MixingKind::Gaussian => {
                for _ in 0..1000 {
                    let a = gaussian_matrix(&mut rng, d);
                    if condition_number(&a) <= MAX_CONDITION {
                        return Ok(a);
                    }
                }
                Err(Error::SpecRejected(
                    "no well-conditioned mixing matrix found".into(),
                ))
            }
            MixingKind::Orthogonal => {
                let qr = gaussian_matrix(&mut rng, d).qr();
                let (q, r) = (qr.q(), qr.r());
                // Sign-fix so that Q is Haar-distributed.
                Ok(DMatrix::from_fn(d, d, |i, j| {
                    q[(i, j)] * if r[(j, j)] < 0.0 { -1.0 } else { 1.0 }
                }))
            }
        }
    }

    /// Samples `m` draws of every node, in graph order (`m × nodes`).
    pub fn sample_nodes(&self, m: usize) -> Result<DMatrix<f64>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let order = self.graph.topological_order()?;
        let s = self.graph.index(&self.stimulus).expect("validated");
        let mut values = DMatrix::zeros(m, self.graph.len());
        for j in 0..m {
            for &i in &order {
                values[(j, i)] = if i == s {
                    if rng.random::<bool>() { 1.0 } else { -1.0 }
                } else {
                    let parents: Vec<f64> =
                        self.graph.parents(i).iter().map(|&p| values[(j, p)]).collect();
                    let model = &self.models[i];
                    let noise: f64 = rng.sample(StandardNormal);
                    model.mechanism.apply(&parents) + model.noise_std * noise
                };
            }
        }
        Ok(values)
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |_, _| rng.sample(StandardNormal))
}

/// Ratio of extreme singular values; infinite for singular matrices.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = a.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// Everything a sampled benchmark knows but the solver does not.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// `m × d` source values.
    pub sources: DMatrix<f64>,
    pub stimulus: Vec<f64>,
    pub cause_index: usize,
    pub target_index: usize,
    /// Observations are `F = C·Aᵀ`.
    pub mixing: DMatrix<f64>,
    pub unmixing: DMatrix<f64>,
    /// `vᵀF = v_scale·C1`.
    pub v_scale: f64,
}

impl GroundTruth {
    pub fn target(&self) -> Vec<f64> {
        self.sources.column(self.target_index).iter().copied().collect()
    }

    pub fn cause(&self) -> Vec<f64> {
        self.sources.column(self.cause_index).iter().copied().collect()
    }

    /// Row of `A⁻¹` that extracts the target source.
    pub fn target_row(&self) -> DVector<f64> {
        self.unmixing.row(self.target_index).transpose()
    }
}

/// Samples `m` observations: `F = C·Aᵀ` and `v ∝` the cause row of `A⁻¹`.
pub fn sample_sem(spec: &SemSpec, m: usize) -> Result<(Dataset, GroundTruth)> {
    let values = spec.sample_nodes(m)?;
    let a = spec.mixing_matrix()?;
    let unmixing = a
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::SpecRejected("mixing matrix is singular".into()))?;
    let cols: Vec<usize> = spec
        .sources
        .iter()
        .map(|s| spec.graph.index(s).expect("validated"))
        .collect();
    let sources = values.select_columns(&cols);
    let s_col = spec.graph.index(&spec.stimulus).expect("validated");
    let stimulus: Vec<f64> = values.column(s_col).iter().copied().collect();
    let mixture = &sources * a.transpose();
    let cause_index = spec.cause_index();
    let row = unmixing.row(cause_index).transpose();
    let norm = row.norm();
    let v = row / norm;
    let data = Dataset::new(stimulus.clone(), mixture, v)?;
    Ok((
        data,
        GroundTruth {
            sources,
            stimulus,
            cause_index,
            target_index: spec.target_index(),
            mixing: a,
            unmixing,
            v_scale: 1.0 / norm,
        },
    ))
}

/// `|corr(Y_w, C_target)|` and the best score attainable with `w ⟂ v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryScore {
    pub score: f64,
    /// Score of the target's extraction row projected onto `v⊥`.
    pub ceiling: f64,
    /// The recovered signal is constant; `score` is then 0.
    pub degenerate: bool,
}

/// Unit-norm projection of the target extraction row onto `v⊥`, in input
/// coordinates. `None` when the projection (almost) vanishes.
pub fn ideal_filter(v: &DVector<f64>, truth: &GroundTruth) -> Option<DVector<f64>> {
    let t = truth.target_row();
    let v = v / v.norm();
    let p = &t - &v * v.dot(&t);
    let n = p.norm();
    (n > 1e-8 * t.norm()).then(|| p / n)
}

/// Scores a filter `w` given in input coordinates.
pub fn recovery_score(w: &[f64], data: &Dataset, truth: &GroundTruth) -> Result<RecoveryScore> {
    let w = DVector::from_column_slice(w);
    if w.len() != data.channels() {
        return Err(invalid_input("filter length does not match the data"));
    }
    let target = truth.target();
    let recovered = data.output(&w);
    let ceiling = match ideal_filter(data.v(), truth) {
        Some(t) => abs_corr(&data.output(&t), &target)?.unwrap_or(0.0),
        None => 0.0,
    };
    score_against(&recovered, &target, ceiling)
}

/// Trial time series whose per-source in-band amplitude follows an SEM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OscillatorySpec {
    /// Source node values act as log-power drivers: amplitude `exp(value/2)`.
    pub sem: SemSpec,
    pub length: usize,
    pub sampling_rate: f64,
    pub band: Band,
    /// Standard deviation of the white noise added to every source.
    pub noise_std: f64,
}

impl OscillatorySpec {
    /// `n = 512` samples at 256 Hz, band [40, 65] Hz (about 20% of Nyquist).
    pub fn benchmark(sem: SemSpec) -> Self {
        Self {
            sem,
            length: 512,
            sampling_rate: 256.0,
            band: Band::new(40.0, 65.0),
            noise_std: 0.1,
        }
    }
}

/// Ground truth of an oscillatory benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct OscillatoryTruth {
    pub sem: GroundTruth,
    /// `trials × d` log-bandpower of each unmixed source.
    pub source_logbp: DMatrix<f64>,
}

impl OscillatoryTruth {
    pub fn target_logbp(&self) -> Vec<f64> {
        self.source_logbp
            .column(self.sem.target_index)
            .iter()
            .copied()
            .collect()
    }
}

/// Samples `m` trials; every source is a sum of in-band sinusoids with random
/// phases scaled by `exp(L/2)` plus white noise, mixed per time point.
pub fn sample_oscillatory(spec: &OscillatorySpec, m: usize) -> Result<(TimeseriesDataset, OscillatoryTruth)> {
    let (n, rate, band) = (spec.length, spec.sampling_rate, spec.band);
    let lbp = LogBandpower::new(n, rate, band)?;
    let bins = band_bins(n, rate, band);
    let (_, truth) = sample_sem(&spec.sem, m)?;
    let d = spec.sem.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.sem.seed);
    rng.set_stream(2);
    let norm = (bins.len() as f64).sqrt();
    let mut sources = vec![0.0; d * m * n];
    let mut source_logbp = DMatrix::zeros(m, d);
    let tau = 2.0 * std::f64::consts::PI;
    for j in 0..m {
        for i in 0..d {
            let amp = (truth.sources[(j, i)] / 2.0).exp();
            let phases: Vec<f64> = bins.iter().map(|_| rng.random::<f64>() * tau).collect();
            let series = &mut sources[(i * m + j) * n..(i * m + j + 1) * n];
            for (t, x) in series.iter_mut().enumerate() {
                let osc: f64 = bins
                    .iter()
                    .zip(&phases)
                    .map(|(&k, ph)| (tau * (k * t) as f64 / n as f64 + ph).cos())
                    .sum();
                let noise: f64 = rng.sample(StandardNormal);
                *x = amp * osc / norm + spec.noise_std * noise;
            }
            source_logbp[(j, i)] = lbp.value(series)?;
        }
    }
    let a = &truth.mixing;
    let mut tensor = vec![0.0; d * m * n];
    for r in 0..d {
        for c in 0..d {
            let coef = a[(r, c)];
            if coef == 0.0 {
                continue;
            }
            for j in 0..m {
                let src = &sources[(c * m + j) * n..(c * m + j + 1) * n];
                let dst = &mut tensor[(r * m + j) * n..(r * m + j + 1) * n];
                for (y, x) in dst.iter_mut().zip(src) {
                    *y += coef * x;
                }
            }
        }
    }
    let row = truth.unmixing.row(truth.cause_index).transpose();
    let v = &row / row.norm();
    let ts = TimeseriesDataset::new(tensor, d, m, n, rate, band, truth.stimulus.clone(), v)?;
    Ok((
        ts,
        OscillatoryTruth {
            sem: truth,
            source_logbp,
        },
    ))
}

/// `|corr(logbp(wᵀF̃), logbp(target source))|` and its ceiling.
pub fn oscillatory_recovery_score(
    w: &[f64],
    ts: &TimeseriesDataset,
    truth: &OscillatoryTruth,
) -> Result<RecoveryScore> {
    let target = truth.target_logbp();
    let recovered = filtered_logbp(ts, &DVector::from_column_slice(w))?;
    let ceiling = match ideal_filter(ts.v(), &truth.sem) {
        Some(t) => abs_corr(&filtered_logbp(ts, &t)?, &target)?.unwrap_or(0.0),
        None => 0.0,
    };
    score_against(&recovered, &target, ceiling)
}

/// `|corr(x, y)|`, or `None` when either side is constant.
fn abs_corr(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    match pearson(x, y) {
        Ok(r) => Ok(Some(r.abs())),
        Err(Error::DegenerateConditioning(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn score_against(recovered: &[f64], target: &[f64], ceiling: f64) -> Result<RecoveryScore> {
    let (score, degenerate) = match abs_corr(recovered, target)? {
        Some(r) => (r, false),
        None => (0.0, true),
    };
    Ok(RecoveryScore {
        score,
        ceiling,
        degenerate,
    })
}
