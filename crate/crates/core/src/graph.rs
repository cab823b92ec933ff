//! Communication topologies, Metropolis–Hastings gossip matrices and the
//! spectral quantities that parameterize consensus.
//!
//! All matrices here are dense and symmetric. Eigenvalues come from a full
//! symmetric eigendecomposition; the second eigenvalue is taken in descending
//! order of *signed* eigenvalues, so a strongly negative `λ_J` does not affect
//! the spectral gap.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};

/// Row/column sum and symmetry tolerance for gossip matrices.
pub const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("a topology needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("edge ({0}, {1}) references a node outside [0, {2})")]
    NodeOutOfRange(usize, usize, usize),
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("graph is disconnected: component {component:?} is unreachable from node 0")]
    Disconnected { component: Vec<usize> },
    #[error("custom topology requires an edge list")]
    MissingEdges,
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric: |W[{i}][{j}] - W[{j}][{i}]| = {gap:e}")]
    Asymmetric { i: usize, j: usize, gap: f64 },
    #[error("row {row} sums to {sum}, expected 1")]
    NotStochastic { row: usize, sum: f64 },
    #[error("matrix has a negative entry W[{i}][{j}] = {value}")]
    NegativeEntry { i: usize, j: usize, value: f64 },
    #[error("spectral gap {rho} is not positive; the gossip graph is disconnected")]
    NoSpectralGap { rho: f64 },
    #[error("invalid step-size inputs: {0}")]
    InvalidStepInputs(String),
    #[error("topology file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TopologyKind {
    Complete,
    Ring,
    Path,
    Custom,
}

impl TopologyKind {
    pub fn name(self) -> &'static str {
        match self {
            TopologyKind::Complete => "complete",
            TopologyKind::Ring => "ring",
            TopologyKind::Path => "path",
            TopologyKind::Custom => "custom",
        }
    }
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TopologyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "complete" => Ok(TopologyKind::Complete),
            "ring" => Ok(TopologyKind::Ring),
            "path" => Ok(TopologyKind::Path),
            "custom" => Ok(TopologyKind::Custom),
            other => Err(format!("unknown topology `{other}`")),
        }
    }
}

/// Undirected simple graph on nodes `0..node_count`. Edges are stored as
/// ordered pairs `(i, j)` with `i < j`, sorted and deduplicated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    kind: TopologyKind,
    node_count: usize,
    edges: Vec<(usize, usize)>,
}

impl Topology {
    /// Builds a named topology. Ring on two nodes collapses to a single edge.
    pub fn build(
        kind: TopologyKind,
        node_count: usize,
        custom_edges: Option<&[(usize, usize)]>,
    ) -> Result<Self, GraphError> {
        if node_count < 2 {
            return Err(GraphError::TooFewNodes(node_count));
        }
        let raw: Vec<(usize, usize)> = match kind {
            TopologyKind::Complete => (0..node_count)
                .flat_map(|i| (i + 1..node_count).map(move |j| (i, j)))
                .collect(),
            TopologyKind::Ring => (0..node_count).map(|i| (i, (i + 1) % node_count)).collect(),
            TopologyKind::Path => (0..node_count - 1).map(|i| (i, i + 1)).collect(),
            TopologyKind::Custom => custom_edges.ok_or(GraphError::MissingEdges)?.to_vec(),
        };
        Self::from_edges(kind, node_count, &raw)
    }

    fn from_edges(
        kind: TopologyKind,
        node_count: usize,
        raw: &[(usize, usize)],
    ) -> Result<Self, GraphError> {
        if node_count < 2 {
            return Err(GraphError::TooFewNodes(node_count));
        }
        let mut set = BTreeSet::new();
        for &(a, b) in raw {
            if a >= node_count || b >= node_count {
                return Err(GraphError::NodeOutOfRange(a, b, node_count));
            }
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            set.insert((a.min(b), a.max(b)));
        }
        let topo = Topology {
            kind,
            node_count,
            edges: set.into_iter().collect(),
        };
        topo.check_connected()?;
        Ok(topo)
    }

    pub fn kind(&self) -> TopologyKind {
        self.kind
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.binary_search(&(a.min(b), a.max(b))).is_ok()
    }

    /// Sorted adjacency lists.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.node_count];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.node_count];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    fn check_connected(&self) -> Result<(), GraphError> {
        let adj = self.neighbors();
        let mut seen = vec![false; self.node_count];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        let Some(start) = seen.iter().position(|s| !s) else {
            return Ok(());
        };
        // report the first unreachable component
        let mut component = vec![start];
        let mut in_comp = vec![false; self.node_count];
        in_comp[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !in_comp[v] {
                    in_comp[v] = true;
                    component.push(v);
                    queue.push_back(v);
                }
            }
        }
        component.sort_unstable();
        Err(GraphError::Disconnected { component })
    }

    /// Parses the plain-text topology format: first line `J`, then one
    /// whitespace-separated `i j` edge per line. Blank lines and `#` comments
    /// are skipped.
    pub fn read_from<R: BufRead>(reader: R) -> Result<Self, GraphError> {
        let mut node_count = None;
        let mut edges = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let fields: Vec<&str> = body.split_whitespace().collect();
            let parse = |s: &str| {
                s.parse::<usize>().map_err(|e| GraphError::Parse {
                    line: lineno,
                    msg: format!("`{s}`: {e}"),
                })
            };
            match (node_count, fields.as_slice()) {
                (None, [n]) => node_count = Some(parse(n)?),
                (None, _) => {
                    return Err(GraphError::Parse {
                        line: lineno,
                        msg: "expected the node count on the first line".into(),
                    })
                }
                (Some(_), [a, b]) => edges.push((parse(a)?, parse(b)?)),
                (Some(_), _) => {
                    return Err(GraphError::Parse {
                        line: lineno,
                        msg: format!("expected `i j`, got `{body}`"),
                    })
                }
            }
        }
        let node_count = node_count.ok_or(GraphError::Parse {
            line: 0,
            msg: "empty topology file".into(),
        })?;
        Self::from_edges(TopologyKind::Custom, node_count, &edges)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GraphError> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), GraphError> {
        writeln!(w, "{}", self.node_count)?;
        for &(a, b) in &self.edges {
            writeln!(w, "{a} {b}")?;
        }
        Ok(())
    }
}

/// Spectral gap `ρ = 1 − λ₂(W′)` and `β = ‖I − W′‖₂`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spectrum {
    pub rho: f64,
    pub beta: f64,
}

/// Symmetric doubly stochastic mixing matrix with cached spectral quantities.
#[derive(Debug, Clone)]
pub struct GossipMatrix {
    weights: DMatrix<f64>,
    spectrum: Spectrum,
}

impl GossipMatrix {
    /// Wraps an externally supplied matrix after validating it.
    pub fn from_matrix(weights: DMatrix<f64>) -> Result<Self, GraphError> {
        let spectrum = spectral_quantities(&weights)?;
        Ok(GossipMatrix { weights, spectrum })
    }

    pub fn size(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn rho(&self) -> f64 {
        self.spectrum.rho
    }

    pub fn beta(&self) -> f64 {
        self.spectrum.beta
    }

    pub fn spectrum(&self) -> Spectrum {
        self.spectrum
    }

    /// Largest deviation of any row or column sum from 1.
    pub fn stochastic_deviation(&self) -> f64 {
        let n = self.size();
        (0..n)
            .map(|i| {
                let row: f64 = self.weights.row(i).iter().sum();
                let col: f64 = self.weights.column(i).iter().sum();
                (row - 1.0).abs().max((col - 1.0).abs())
            })
            .fold(0.0, f64::max)
    }
}

/// Metropolis–Hastings weights: `1 / (1 + max(deg_i, deg_j))` on every edge,
/// the remainder of each row on the diagonal.
pub fn metropolis_weights(topology: &Topology) -> Result<GossipMatrix, GraphError> {
    let n = topology.node_count();
    let deg = topology.degrees();
    let mut w = DMatrix::<f64>::zeros(n, n);
    for &(a, b) in topology.edges() {
        let v = 1.0 / (1.0 + deg[a].max(deg[b]) as f64);
        w[(a, b)] = v;
        w[(b, a)] = v;
    }
    for i in 0..n {
        // sum the off-diagonal part in column order so rows and columns agree
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    GossipMatrix::from_matrix(w)
}

fn check_doubly_stochastic(w: &DMatrix<f64>) -> Result<(), GraphError> {
    let (rows, cols) = w.shape();
    if rows != cols {
        return Err(GraphError::NotSquare { rows, cols });
    }
    for i in 0..rows {
        for j in 0..rows {
            let value = w[(i, j)];
            if value < 0.0 || !value.is_finite() {
                return Err(GraphError::NegativeEntry { i, j, value });
            }
            let gap = (value - w[(j, i)]).abs();
            if gap > STOCHASTIC_TOL {
                return Err(GraphError::Asymmetric { i, j, gap });
            }
        }
        let sum: f64 = w.row(i).iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(GraphError::NotStochastic { row: i, sum });
        }
    }
    Ok(())
}

/// Eigenvalues of a symmetric matrix, sorted descending.
pub fn sorted_eigenvalues(w: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(w.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

/// Computes `ρ` and `β` for a symmetric doubly stochastic matrix. A matrix
/// whose spectral gap is zero (up to rounding) is rejected.
pub fn spectral_quantities(w: &DMatrix<f64>) -> Result<Spectrum, GraphError> {
    check_doubly_stochastic(w)?;
    let ev = sorted_eigenvalues(w);
    let lambda2 = ev.get(1).copied().unwrap_or(0.0);
    let rho = (1.0 - lambda2).min(1.0);
    if rho <= 1e-12 {
        return Err(GraphError::NoSpectralGap { rho });
    }
    // I − W′ is symmetric, so its spectral norm is the largest |1 − λ_i|
    let beta = ev.iter().map(|l| (1.0 - l).abs()).fold(0.0, f64::max).min(2.0);
    Ok(Spectrum { rho, beta })
}

/// Consensus step size and the constant `c` of the regret bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSize {
    pub gamma: f64,
    pub c: f64,
}

/// `γ = ρ²δ / (16ρ + ρ² + 4β² + 2ρβ² − 8ρδ)` and `c = ρ²δ / 82`.
pub fn consensus_step_size(rho: f64, beta: f64, delta: f64) -> Result<StepSize, GraphError> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(GraphError::InvalidStepInputs(format!(
            "compression parameter delta = {delta} must lie in (0, 1]"
        )));
    }
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(GraphError::InvalidStepInputs(format!("rho = {rho} must lie in (0, 1]")));
    }
    if !(0.0..=2.0).contains(&beta) {
        return Err(GraphError::InvalidStepInputs(format!("beta = {beta} must lie in [0, 2]")));
    }
    let rho2 = rho * rho;
    let beta2 = beta * beta;
    let denom = 16.0 * rho + rho2 + 4.0 * beta2 + 2.0 * rho * beta2 - 8.0 * rho * delta;
    Ok(StepSize {
        gamma: rho2 * delta / denom,
        c: rho2 * delta / 82.0,
    })
}
