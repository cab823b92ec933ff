//! Reference configurations: a single-kernel decentralized learner and the
//! multi-kernel protocol on the complete graph (with or without
//! quantization).

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::data::Partition;
use crate::graph::{self, TopologyKind};
use crate::learner::{self, Klr, Label, LossModel};
use crate::protocol::{
    run_simulation, GammaChoice, ProtocolError, QuantizerChoice, SimulationConfig, SimulationOutput,
};
use crate::rf_kernel::{FeatureMap, GaussianKernel};
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselineSpec {
    /// One Gaussian kernel of the given bandwidth (`P = 1`).
    SingleKernel { sigma: f64 },
    /// All configured kernels on the complete graph, identity quantizer.
    CompleteUnquantized,
    /// All configured kernels on the complete graph, configured quantizer.
    CompleteQuantized,
}

impl BaselineSpec {
    /// Short identifier used in file names and summaries.
    pub fn label(&self) -> String {
        match self {
            BaselineSpec::SingleKernel { sigma } => format!("single_kernel_sigma{sigma}"),
            BaselineSpec::CompleteUnquantized => "complete_unquantized".into(),
            BaselineSpec::CompleteQuantized => "complete_quantized".into(),
        }
    }

    pub fn apply(&self, config: &SimulationConfig) -> SimulationConfig {
        let mut cfg = config.clone();
        match *self {
            BaselineSpec::SingleKernel { sigma } => cfg.sigmas = vec![sigma],
            BaselineSpec::CompleteUnquantized => {
                cfg.topology = TopologyKind::Complete;
                cfg.custom_edges = None;
                cfg.quantizer = QuantizerChoice::Identity;
            }
            BaselineSpec::CompleteQuantized => {
                cfg.topology = TopologyKind::Complete;
                cfg.custom_edges = None;
            }
        }
        cfg
    }
}

impl fmt::Display for BaselineSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Parses `single_kernel:<sigma>`, `complete_unquantized` or
/// `complete_quantized`.
impl FromStr for BaselineSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        match s.split_once(':') {
            Some(("single_kernel", sigma)) => {
                let sigma: f64 = sigma
                    .trim()
                    .parse()
                    .map_err(|_| format!("bad bandwidth in baseline `{s}`"))?;
                if !(sigma > 0.0 && sigma.is_finite()) {
                    return Err(format!("baseline `{s}`: bandwidth must be positive"));
                }
                Ok(BaselineSpec::SingleKernel { sigma })
            }
            None if s == "complete_unquantized" => Ok(BaselineSpec::CompleteUnquantized),
            None if s == "complete_quantized" => Ok(BaselineSpec::CompleteQuantized),
            _ => Err(format!("unknown baseline `{s}`")),
        }
    }
}

pub fn run_baseline(
    spec: BaselineSpec,
    config: &SimulationConfig,
    data: &Partition,
) -> Result<SimulationOutput, ProtocolError> {
    run_simulation(&spec.apply(config), data)
}

/// Per-round output of [`run_single_kernel_reference`].
#[derive(Debug, Clone, PartialEq)]
pub struct SingleKernelTrace {
    /// `thetas[t][j]` after round `t + 1`.
    pub thetas: Vec<Vec<Vec<f64>>>,
    /// `losses[t][j]` evaluated at the round-entry parameters.
    pub losses: Vec<Vec<f64>>,
}

/// Direct single-kernel implementation of the quantized gossip learner,
/// without the hedge layer or per-node replica bookkeeping. Uses the same
/// seed derivation as the protocol so its trajectories are comparable
/// bit-for-bit with a `P = 1` protocol run.
pub fn run_single_kernel_reference(
    config: &SimulationConfig,
    data: &Partition,
) -> Result<SingleKernelTrace, ProtocolError> {
    config.validate()?;
    let &[sigma] = config.sigmas.as_slice() else {
        return Err(ProtocolError::Config("reference path needs exactly one kernel".into()));
    };
    let j_count = config.nodes;
    let topology = config.build_topology()?;
    let gossip = graph::metropolis_weights(&topology)?;
    let adjacency = topology.neighbors();
    let quantizer = config.quantizer.build(2 * config.features)?;
    let gamma = match config.gamma {
        GammaChoice::Fixed(g) => g,
        GammaChoice::Lemma => graph::consensus_step_size(gossip.rho(), gossip.beta(), quantizer.delta())?.gamma,
    };
    let map = Arc::new(FeatureMap::sample(
        &GaussianKernel::new(sigma)?,
        config.features,
        data.dataset().input_dim(),
        &mut stream(config.seed, Purpose::FeatureMap, &[0]),
    )?);
    let loss = Klr::new(config.lambda);
    let dim = 2 * config.features;
    let mut rngs: Vec<_> = (0..j_count)
        .map(|j| stream(config.seed, Purpose::Quantizer, &[j as u64, 0]))
        .collect();
    let mut theta = vec![vec![0.0; dim]; j_count];
    let mut hidden = vec![vec![0.0; dim]; j_count];
    let rounds = config.rounds.unwrap_or(data.rounds());
    let mut trace = SingleKernelTrace {
        thetas: Vec::with_capacity(rounds),
        losses: Vec::with_capacity(rounds),
    };
    for t in 0..rounds {
        let mut q = Vec::with_capacity(j_count);
        let mut round_losses = Vec::with_capacity(j_count);
        let mut next_theta = theta.clone();
        for j in 0..j_count {
            let (x, y): (&[f64], Label) = data.sample(j, t);
            let z = map.features(x)?;
            round_losses.push(loss.value(&theta[j], &z, y));
            let th = &mut next_theta[j];
            for k in 0..dim {
                let pull: f64 = adjacency[j]
                    .iter()
                    .map(|&i| gossip.weight(i, j) * (hidden[i][k] - hidden[j][k]))
                    .sum();
                th[k] += gamma * pull;
            }
            let diff: Vec<f64> = th.iter().zip(&hidden[j]).map(|(a, b)| a - b).collect();
            q.push(quantizer.compress(&diff, &mut rngs[j])?.decode()?);
            let g = loss.gradient(th, &z, y);
            learner::sgd_step(th, &g, config.eta);
        }
        for (h, qj) in hidden.iter_mut().zip(&q) {
            for (a, b) in h.iter_mut().zip(qj) {
                *a += b;
            }
        }
        theta = next_theta;
        trace.thetas.push(theta.clone());
        trace.losses.push(round_losses);
    }
    Ok(trace)
}
