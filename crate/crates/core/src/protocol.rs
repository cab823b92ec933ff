//! Round-synchronous execution of gossiped, quantized online multi-kernel
//! learning.
//!
//! Every node keeps, per kernel `p`, its parameters `θ_p`, its own hidden
//! state `h_p` and a replica of the hidden state of each neighbor. Hidden
//! states only ever change by adding decoded quantized messages that every
//! holder receives, so replicas stay bit-identical to their originals.
//!
//! One round at node `j`:
//!
//! 1. embed the sample with every kernel's feature map;
//! 2. evaluate per-kernel losses at the round-entry `θ_p`;
//! 3. score the combined prediction with the current normalized weights,
//!    then apply the hedge update;
//! 4. gossip: `θ_p += γ Σ_i W′[i][j] (h_p^i − h_p^j)`;
//! 5. compress `q_p = Q(θ_p − h_p)` and publish its wire payload;
//! 6. SGD: `θ_p −= η ∇L(θ_p)` on the same sample.
//!
//! After every node has published (first barrier), each node adds the
//! decoded `q` of itself and of each neighbor to the matching hidden state
//! (second barrier). Steps 1–6 only touch node-local state, so nodes run in
//! parallel without changing any result.

use std::fmt;
use std::io::{Read, Write};
use std::sync::Arc;

use rayon::prelude::*;

use crate::data::Partition;
use crate::graph::{self, GossipMatrix, Topology, TopologyKind};
use crate::learner::{self, combined_loss, predict_single, KernelWeights, Klr, Label, LossModel};
use crate::quantizer::{QuantizerError, QuantizerSpec};
use crate::rf_kernel::{FeatureMap, GaussianKernel, KernelError};
use crate::rng::{stream, Purpose, StreamRng};

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("round {round}: node {node} holds a replica of node {neighbor}'s hidden state (kernel {kernel}) that differs from the original")]
    ReplicaMismatch {
        round: usize,
        node: usize,
        neighbor: usize,
        kernel: usize,
    },
    #[error("round {round}: node {node} produced a non-finite value ({what})")]
    NonFinite {
        round: usize,
        node: usize,
        what: &'static str,
    },
    #[error("expected {expected} samples (one per node), got {actual}")]
    SampleCount { expected: usize, actual: usize },
    #[error(transparent)]
    Graph(#[from] graph::GraphError),
    #[error(transparent)]
    Quantizer(#[from] QuantizerError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("metrics file: {0}")]
    Metrics(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// How nodes inside one round are scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    #[default]
    Sequential,
    Parallel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaChoice {
    Fixed(f64),
    /// Derive `γ` from the spectral gap, `β` and the quantizer's `δ`.
    Lemma,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantizerChoice {
    Identity,
    Levels(u32),
}

impl QuantizerChoice {
    pub fn build(self, dim: usize) -> Result<QuantizerSpec, QuantizerError> {
        match self {
            QuantizerChoice::Identity => Ok(QuantizerSpec::identity(dim)),
            QuantizerChoice::Levels(m) => QuantizerSpec::levels(m, dim),
        }
    }
}

impl fmt::Display for QuantizerChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QuantizerChoice::Identity => f.write_str("identity"),
            QuantizerChoice::Levels(m) => write!(f, "{m}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub nodes: usize,
    /// Rounds to run; `None` uses the full stream length of the partition.
    pub rounds: Option<usize>,
    /// Random features per kernel (`D`; embeddings have length `2D`).
    pub features: usize,
    pub eta: f64,
    pub gamma: GammaChoice,
    pub lambda: f64,
    pub sigmas: Vec<f64>,
    pub quantizer: QuantizerChoice,
    pub topology: TopologyKind,
    /// Edge list for [`TopologyKind::Custom`].
    pub custom_edges: Option<Vec<(usize, usize)>>,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            nodes: 20,
            rounds: None,
            features: 20,
            eta: 0.01,
            gamma: GammaChoice::Fixed(0.009),
            lambda: 0.001,
            sigmas: vec![1.0, 3.0, 5.0],
            quantizer: QuantizerChoice::Levels(7),
            topology: TopologyKind::Path,
            custom_edges: None,
            seed: 0,
            execution: Execution::Sequential,
        }
    }
}

impl SimulationConfig {
    /// Every violated invariant, one message each.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.nodes < 2 {
            out.push(format!("nodes = {} must be at least 2", self.nodes));
        }
        if self.features == 0 {
            out.push("features must be positive".into());
        }
        if !(self.eta >= 0.0 && self.eta < 1.0) {
            out.push(format!("eta = {} must lie in [0, 1)", self.eta));
        }
        if let GammaChoice::Fixed(g) = self.gamma {
            if !(g >= 0.0 && g.is_finite()) {
                out.push(format!("gamma = {g} must be nonnegative"));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            out.push(format!("lambda = {} must be nonnegative", self.lambda));
        }
        if self.sigmas.is_empty() {
            out.push("at least one kernel bandwidth is required".into());
        }
        for s in &self.sigmas {
            if !(*s > 0.0 && s.is_finite()) {
                out.push(format!("kernel bandwidth {s} must be positive"));
            }
        }
        if self.features > 0 {
            if let Err(e) = self.quantizer.build(2 * self.features) {
                out.push(e.to_string());
            }
        }
        if self.topology == TopologyKind::Custom && self.custom_edges.is_none() {
            out.push("custom topology requires an edge list".into());
        }
        out
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ProtocolError::Config(v.join("; ")))
        }
    }

    pub fn build_topology(&self) -> Result<Topology, ProtocolError> {
        Ok(Topology::build(self.topology, self.nodes, self.custom_edges.as_deref())?)
    }

    /// Feature maps shared by all nodes, one per kernel.
    pub fn sample_feature_maps(&self, input_dim: usize) -> Result<Vec<FeatureMap>, ProtocolError> {
        self.sigmas
            .iter()
            .enumerate()
            .map(|(p, &s)| {
                let kernel = GaussianKernel::new(s)?;
                let mut rng = stream(self.seed, Purpose::FeatureMap, &[p as u64]);
                Ok(FeatureMap::sample(&kernel, self.features, input_dim, &mut rng)?)
            })
            .collect()
    }
}

/// Per-kernel state held by one node.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelState {
    pub theta: Vec<f64>,
    pub hidden: Vec<f64>,
    /// Replicas of the neighbors' hidden states, aligned with
    /// [`NodeState::neighbors`].
    pub replicas: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct NodeState {
    id: usize,
    neighbors: Vec<usize>,
    /// `W′[i][j]` for each neighbor `i`.
    mixing: Vec<f64>,
    pub kernels: Vec<KernelState>,
    pub weights: KernelWeights,
    rngs: Vec<StreamRng>,
    bits_sent: u64,
    scratch: Vec<f64>,
}

impl NodeState {
    fn new(
        id: usize,
        neighbors: Vec<usize>,
        gossip: &GossipMatrix,
        kernels: usize,
        dim: usize,
        seed: u64,
    ) -> Result<Self, ProtocolError> {
        let mixing = neighbors.iter().map(|&i| gossip.weight(i, id)).collect();
        let state = KernelState {
            theta: vec![0.0; dim],
            hidden: vec![0.0; dim],
            replicas: vec![vec![0.0; dim]; neighbors.len()],
        };
        Ok(NodeState {
            id,
            mixing,
            kernels: vec![state; kernels],
            weights: KernelWeights::uniform(kernels).map_err(|e| ProtocolError::Config(e.to_string()))?,
            rngs: (0..kernels)
                .map(|p| stream(seed, Purpose::Quantizer, &[id as u64, p as u64]))
                .collect(),
            bits_sent: 0,
            scratch: vec![0.0; dim],
            neighbors,
        })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn neighbors(&self) -> &[usize] {
        &self.neighbors
    }

    pub fn bits_sent(&self) -> u64 {
        self.bits_sent
    }

    pub fn thetas(&self) -> impl Iterator<Item = &[f64]> {
        self.kernels.iter().map(|k| k.theta.as_slice())
    }
}

/// What one node reports for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeRecord {
    pub kernel_losses: Vec<f64>,
    /// Normalized weights used for this round's combined prediction.
    pub weights: Vec<f64>,
    pub combined_loss: f64,
    /// `‖θ_p^j − mean_j θ_p^j‖` after the round.
    pub consensus: Vec<f64>,
    pub bits_cum: u64,
}

struct Outbox {
    payloads: Vec<Vec<u8>>,
    kernel_losses: Vec<f64>,
    weights: Vec<f64>,
    combined_loss: f64,
    max_grad_norm: f64,
}

/// Shared parameters of a run.
#[derive(Debug, Clone)]
pub struct Protocol {
    pub gossip: GossipMatrix,
    pub quantizer: QuantizerSpec,
    pub maps: Arc<Vec<FeatureMap>>,
    pub loss: Klr,
    pub eta: f64,
    pub gamma: f64,
}

/// All node states plus the shared parameters.
#[derive(Debug, Clone)]
pub struct Network {
    protocol: Protocol,
    nodes: Vec<NodeState>,
    round: usize,
    max_grad_norm: f64,
}

impl Network {
    pub fn new(topology: &Topology, protocol: Protocol, seed: u64) -> Result<Self, ProtocolError> {
        let dim = protocol.quantizer.dim();
        if protocol.gossip.size() != topology.node_count() {
            return Err(ProtocolError::Config(format!(
                "gossip matrix is {}x{} but the topology has {} nodes",
                protocol.gossip.size(),
                protocol.gossip.size(),
                topology.node_count()
            )));
        }
        if protocol.maps.is_empty() {
            return Err(ProtocolError::Config("at least one feature map is required".into()));
        }
        if let Some(m) = protocol.maps.iter().find(|m| m.output_dim() != dim) {
            return Err(ProtocolError::Config(format!(
                "feature map output length {} does not match quantizer dimension {dim}",
                m.output_dim()
            )));
        }
        let nodes = topology
            .neighbors()
            .into_iter()
            .enumerate()
            .map(|(j, nb)| NodeState::new(j, nb, &protocol.gossip, protocol.maps.len(), dim, seed))
            .collect::<Result<_, _>>()?;
        Ok(Network {
            protocol,
            nodes,
            round: 0,
            max_grad_norm: 0.0,
        })
    }

    pub fn protocol(&self) -> &Protocol {
        &self.protocol
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    /// Direct state access for instrumentation and fault injection.
    pub fn nodes_mut(&mut self) -> &mut [NodeState] {
        &mut self.nodes
    }

    pub fn rounds_completed(&self) -> usize {
        self.round
    }

    /// Largest SGD gradient norm observed so far.
    pub fn max_grad_norm(&self) -> f64 {
        self.max_grad_norm
    }

    pub fn kernel_count(&self) -> usize {
        self.protocol.maps.len()
    }

    /// Checks that every replica equals the hidden state it mirrors.
    pub fn check_replicas(&self) -> Result<(), ProtocolError> {
        for node in &self.nodes {
            for (p, ks) in node.kernels.iter().enumerate() {
                for (idx, &i) in node.neighbors.iter().enumerate() {
                    let original = &self.nodes[i].kernels[p].hidden;
                    let same = ks.replicas[idx]
                        .iter()
                        .zip(original)
                        .all(|(a, b)| a.to_bits() == b.to_bits());
                    if !same {
                        return Err(ProtocolError::ReplicaMismatch {
                            round: self.round + 1,
                            node: node.id,
                            neighbor: i,
                            kernel: p,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Node average of `θ_p`.
    pub fn mean_theta(&self, kernel: usize) -> Vec<f64> {
        mean_theta(&self.nodes, kernel)
    }

    /// Executes one round given one `(x, y)` sample per node.
    pub fn run_round(
        &mut self,
        samples: &[(&[f64], Label)],
        execution: Execution,
    ) -> Result<Vec<NodeRecord>, ProtocolError> {
        if samples.len() != self.nodes.len() {
            return Err(ProtocolError::SampleCount {
                expected: self.nodes.len(),
                actual: samples.len(),
            });
        }
        self.check_replicas()?;
        let round = self.round + 1;
        let proto = &self.protocol;

        let outboxes: Vec<Outbox> = match execution {
            Execution::Sequential => self
                .nodes
                .iter_mut()
                .zip(samples)
                .map(|(node, s)| local_phase(node, proto, *s, round))
                .collect::<Result<_, _>>()?,
            Execution::Parallel => self
                .nodes
                .par_iter_mut()
                .zip(samples.par_iter())
                .map(|(node, s)| local_phase(node, proto, *s, round))
                .collect::<Result<_, _>>()?,
        };

        // barrier 1: every payload is published
        let decode = |out: &Outbox| -> Result<Vec<Vec<f64>>, ProtocolError> {
            out.payloads
                .iter()
                .map(|bytes| Ok(proto.quantizer.decode_wire(bytes)?.decode()?))
                .collect()
        };
        let updates: Vec<Vec<Vec<f64>>> = match execution {
            Execution::Sequential => outboxes.iter().map(decode).collect::<Result<_, _>>()?,
            Execution::Parallel => outboxes.par_iter().map(decode).collect::<Result<_, _>>()?,
        };
        match execution {
            Execution::Sequential => self.nodes.iter_mut().for_each(|n| absorb(n, &updates)),
            Execution::Parallel => self.nodes.par_iter_mut().for_each(|n| absorb(n, &updates)),
        }
        // barrier 2: every hidden state and replica is updated

        self.round = round;
        let kernels = self.kernel_count();
        let means: Vec<Vec<f64>> = (0..kernels).map(|p| self.mean_theta(p)).collect();
        let mut records = Vec::with_capacity(self.nodes.len());
        for (node, out) in self.nodes.iter().zip(outboxes) {
            self.max_grad_norm = self.max_grad_norm.max(out.max_grad_norm);
            let consensus = node
                .kernels
                .iter()
                .zip(&means)
                .map(|(ks, m)| distance(&ks.theta, m))
                .collect();
            records.push(NodeRecord {
                kernel_losses: out.kernel_losses,
                weights: out.weights,
                combined_loss: out.combined_loss,
                consensus,
                bits_cum: node.bits_sent,
            });
        }
        Ok(records)
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn mean_theta(nodes: &[NodeState], kernel: usize) -> Vec<f64> {
    let dim = nodes[0].kernels[kernel].theta.len();
    let mut mean = vec![0.0; dim];
    for node in nodes {
        for (m, t) in mean.iter_mut().zip(&node.kernels[kernel].theta) {
            *m += t;
        }
    }
    let n = nodes.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

/// `Σ_j ‖θ_p^j − mean_j θ_p^j‖²`.
pub fn consensus_error(nodes: &[NodeState], kernel: usize) -> f64 {
    if nodes.is_empty() {
        return 0.0;
    }
    let mean = mean_theta(nodes, kernel);
    nodes
        .iter()
        .map(|n| {
            n.kernels[kernel]
                .theta
                .iter()
                .zip(&mean)
                .map(|(t, m)| (t - m) * (t - m))
                .sum::<f64>()
        })
        .sum()
}

fn local_phase(
    node: &mut NodeState,
    proto: &Protocol,
    (x, y): (&[f64], Label),
    round: usize,
) -> Result<Outbox, ProtocolError> {
    let kernels = proto.maps.len();
    let non_finite = |what| ProtocolError::NonFinite {
        round,
        node: node.id,
        what,
    };
    let zs: Vec<Vec<f64>> = proto.maps.iter().map(|m| m.features(x)).collect::<Result<_, _>>()?;

    let mut predictions = Vec::with_capacity(kernels);
    let mut kernel_losses = Vec::with_capacity(kernels);
    for (ks, z) in node.kernels.iter().zip(&zs) {
        predictions.push(predict_single(&ks.theta, z));
        kernel_losses.push(proto.loss.value(&ks.theta, z, y));
    }
    let weights = node.weights.normalized().to_vec();
    let thetas: Vec<&[f64]> = node.kernels.iter().map(|k| k.theta.as_slice()).collect();
    let combined = combined_loss(&proto.loss, &weights, &predictions, &thetas, y);
    if !combined.is_finite() {
        return Err(non_finite("combined loss"));
    }
    node.weights
        .hedge_update(&kernel_losses, proto.eta)
        .map_err(|_| non_finite("kernel loss"))?;

    let mut payloads = Vec::with_capacity(kernels);
    let mut max_grad_norm: f64 = 0.0;
    let mut grad = vec![0.0; proto.quantizer.dim()];
    for (p, z) in zs.iter().enumerate() {
        let ks = &mut node.kernels[p];
        // gossip on hidden states
        for (k, t) in ks.theta.iter_mut().enumerate() {
            let h = ks.hidden[k];
            let pull: f64 = ks.replicas.iter().zip(&node.mixing).map(|(r, w)| w * (r[k] - h)).sum();
            *t += proto.gamma * pull;
        }
        for ((d, t), h) in node.scratch.iter_mut().zip(&ks.theta).zip(&ks.hidden) {
            *d = t - h;
        }
        let msg = proto
            .quantizer
            .compress(&node.scratch, &mut node.rngs[p])
            .map_err(|e| match e {
                QuantizerError::NonFinite { .. } => non_finite("parameters"),
                other => other.into(),
            })?;
        payloads.push(msg.encode_wire()?);

        proto.loss.gradient_into(&ks.theta, z, y, &mut grad);
        max_grad_norm = max_grad_norm.max(learner::norm_sq(&grad).sqrt());
        learner::sgd_step(&mut ks.theta, &grad, proto.eta);
        if ks.theta.iter().any(|v| !v.is_finite()) {
            return Err(non_finite("parameters"));
        }
    }
    let sent: usize = payloads.iter().map(Vec::len).sum();
    node.bits_sent += (8 * sent * node.neighbors.len()) as u64;
    Ok(Outbox {
        payloads,
        kernel_losses,
        weights,
        combined_loss: combined,
        max_grad_norm,
    })
}

fn absorb(node: &mut NodeState, updates: &[Vec<Vec<f64>>]) {
    let id = node.id;
    for (p, ks) in node.kernels.iter_mut().enumerate() {
        for (h, q) in ks.hidden.iter_mut().zip(&updates[id][p]) {
            *h += q;
        }
        for (replica, &i) in ks.replicas.iter_mut().zip(&node.neighbors) {
            for (h, q) in replica.iter_mut().zip(&updates[i][p]) {
                *h += q;
            }
        }
    }
}

/// Per-round, per-node metrics of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsLog {
    pub nodes: usize,
    pub kernels: usize,
    /// `rounds[t − 1][j]`.
    pub rounds: Vec<Vec<NodeRecord>>,
    /// Largest SGD gradient norm seen during the run (not serialized).
    pub max_grad_norm: f64,
}

pub const CSV_HEADER: [&str; 8] = [
    "t",
    "j",
    "p",
    "kernel_loss",
    "weight",
    "combined_loss",
    "consensus_err",
    "bits_cum",
];

impl MetricsLog {
    pub fn new(nodes: usize, kernels: usize) -> Self {
        MetricsLog {
            nodes,
            kernels,
            rounds: Vec::new(),
            max_grad_norm: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    /// `Σ_j` combined loss for each round.
    pub fn network_losses(&self) -> Vec<f64> {
        self.rounds.iter().map(|r| r.iter().map(|n| n.combined_loss).sum()).collect()
    }

    /// Running average of the combined loss over nodes and rounds `1..=t`.
    pub fn average_loss_curve(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.network_losses()
            .iter()
            .enumerate()
            .map(|(t, l)| {
                acc += l;
                acc / ((t + 1) * self.nodes) as f64
            })
            .collect()
    }

    pub fn final_average_loss(&self) -> Option<f64> {
        self.average_loss_curve().last().copied()
    }

    /// Cumulative bits sent by each node after the last round.
    pub fn bits_per_node(&self) -> Vec<u64> {
        self.rounds
            .last()
            .map(|r| r.iter().map(|n| n.bits_cum).collect())
            .unwrap_or_else(|| vec![0; self.nodes])
    }

    /// Writes the long-format CSV: one row per `(t, j, p)` plus a `p = −1`
    /// row per `(t, j)` carrying the combined loss and the norm of the
    /// stacked consensus deviation. Empty fields are left blank.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), ProtocolError> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(CSV_HEADER)?;
        for (t, round) in self.rounds.iter().enumerate() {
            let t = (t + 1).to_string();
            for (j, rec) in round.iter().enumerate() {
                let j = j.to_string();
                let bits = rec.bits_cum.to_string();
                for p in 0..self.kernels {
                    wr.write_record([
                        t.as_str(),
                        &j,
                        &p.to_string(),
                        &rec.kernel_losses[p].to_string(),
                        &rec.weights[p].to_string(),
                        "",
                        &rec.consensus[p].to_string(),
                        &bits,
                    ])?;
                }
                let stacked = rec.consensus.iter().map(|c| c * c).sum::<f64>().sqrt();
                wr.write_record([
                    t.as_str(),
                    &j,
                    "-1",
                    "",
                    "",
                    &rec.combined_loss.to_string(),
                    &stacked.to_string(),
                    &bits,
                ])?;
            }
        }
        wr.flush().map_err(|e| ProtocolError::Metrics(e.to_string()))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, ProtocolError> {
        let bad = |line: u64, msg: &str| ProtocolError::Metrics(format!("line {line}: {msg}"));
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        if header.iter().ne(CSV_HEADER) {
            return Err(ProtocolError::Metrics("unexpected header".into()));
        }
        let mut rows: Vec<(usize, usize, i64, Vec<String>)> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let int = |i: usize| rec.get(i).and_then(|s| s.parse::<i64>().ok()).ok_or_else(|| bad(line, "bad index"));
            let (t, j, p) = (int(0)?, int(1)?, int(2)?);
            if t < 1 || j < 0 || p < -1 {
                return Err(bad(line, "index out of range"));
            }
            rows.push((t as usize, j as usize, p, rec.iter().map(str::to_string).collect()));
        }
        let rounds = rows.iter().map(|r| r.0).max().unwrap_or(0);
        let nodes = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
        let kernels = rows.iter().map(|r| (r.2 + 1) as usize).max().unwrap_or(0);
        let blank = NodeRecord {
            kernel_losses: vec![f64::NAN; kernels],
            weights: vec![f64::NAN; kernels],
            combined_loss: f64::NAN,
            consensus: vec![f64::NAN; kernels],
            bits_cum: 0,
        };
        let mut log = MetricsLog::new(nodes, kernels);
        log.rounds = vec![vec![blank; nodes]; rounds];
        let num = |s: &str| s.parse::<f64>().map_err(|_| ProtocolError::Metrics(format!("bad number `{s}`")));
        for (t, j, p, f) in rows {
            let rec = &mut log.rounds[t - 1][j];
            rec.bits_cum = f[7].parse().map_err(|_| ProtocolError::Metrics("bad bit count".into()))?;
            if p < 0 {
                rec.combined_loss = num(&f[5])?;
            } else {
                let p = p as usize;
                rec.kernel_losses[p] = num(&f[3])?;
                rec.weights[p] = num(&f[4])?;
                rec.consensus[p] = num(&f[6])?;
            }
        }
        Ok(log)
    }
}

/// Result of [`run_simulation`]: the metrics and the final network state.
#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub metrics: MetricsLog,
    pub network: Network,
}

/// Assembles the network described by `config` for inputs of width
/// `input_dim`.
pub fn build_network(config: &SimulationConfig, input_dim: usize) -> Result<Network, ProtocolError> {
    config.validate()?;
    let topology = config.build_topology()?;
    let gossip = graph::metropolis_weights(&topology)?;
    let quantizer = config.quantizer.build(2 * config.features)?;
    let gamma = match config.gamma {
        GammaChoice::Fixed(g) => g,
        GammaChoice::Lemma => graph::consensus_step_size(gossip.rho(), gossip.beta(), quantizer.delta())?.gamma,
    };
    let maps = Arc::new(config.sample_feature_maps(input_dim)?);
    let protocol = Protocol {
        gossip,
        quantizer,
        maps,
        loss: Klr::new(config.lambda),
        eta: config.eta,
        gamma,
    };
    Network::new(&topology, protocol, config.seed)
}

/// Runs the protocol for `config.rounds` (or the full stream length).
pub fn run_simulation(config: &SimulationConfig, data: &Partition) -> Result<SimulationOutput, ProtocolError> {
    if data.nodes() != config.nodes {
        return Err(ProtocolError::Config(format!(
            "partition has {} streams but the configuration has {} nodes",
            data.nodes(),
            config.nodes
        )));
    }
    let rounds = config.rounds.unwrap_or(data.rounds());
    if rounds > data.rounds() {
        return Err(ProtocolError::Config(format!(
            "{rounds} rounds requested but each node stream holds only {}",
            data.rounds()
        )));
    }
    let mut network = build_network(config, data.dataset().input_dim())?;
    let mut metrics = MetricsLog::new(config.nodes, config.sigmas.len());
    for t in 0..rounds {
        let samples: Vec<(&[f64], Label)> = (0..config.nodes).map(|j| data.sample(j, t)).collect();
        let records = network.run_round(&samples, config.execution)?;
        metrics.rounds.push(records);
    }
    metrics.max_grad_norm = network.max_grad_norm();
    Ok(SimulationOutput { metrics, network })
}
