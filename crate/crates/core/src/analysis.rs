//! Regret accounting: a batch comparator in random-feature space, the
//! closed-form regret bound, and a sub-linearity test for regret curves.

use std::fmt::Write as _;
use std::io::Write;

use crate::data::Partition;
use crate::learner::{Klr, Label, LossModel};
use crate::protocol::MetricsLog;
use crate::rf_kernel::{FeatureMap, KernelError};

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("batch optimizer did not converge in {iterations} iterations (gradient norm {grad_norm:e})")]
    NoConvergence { iterations: usize, grad_norm: f64 },
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("series of length {len} is too short for window {window}")]
    TooShort { len: usize, window: usize },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOptimum {
    pub theta: Vec<f64>,
    /// Mean regularized loss over the batch.
    pub objective: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

/// Mean loss and gradient of `θ` over pre-embedded samples.
pub fn batch_objective(loss: &Klr, samples: &[(Vec<f64>, Label)], theta: &[f64]) -> (f64, Vec<f64>) {
    let n = samples.len() as f64;
    let mut grad = vec![0.0; theta.len()];
    let mut g = vec![0.0; theta.len()];
    let mut value = 0.0;
    for (z, y) in samples {
        value += loss.value(theta, z, *y);
        loss.gradient_into(theta, z, *y, &mut g);
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    grad.iter_mut().for_each(|a| *a /= n);
    (value / n, grad)
}

pub fn batch_value(loss: &Klr, samples: &[(Vec<f64>, Label)], theta: &[f64]) -> f64 {
    samples.iter().map(|(z, y)| loss.value(theta, z, *y)).sum::<f64>() / samples.len() as f64
}

/// Embeds the first `rounds` samples of every node stream with `map`.
pub fn embed_partition(
    data: &Partition,
    rounds: usize,
    map: &FeatureMap,
) -> Result<Vec<(Vec<f64>, Label)>, KernelError> {
    let mut out = Vec::with_capacity(rounds * data.nodes());
    for t in 0..rounds {
        for j in 0..data.nodes() {
            let (x, y) = data.sample(j, t);
            out.push((map.features(x)?, y));
        }
    }
    Ok(out)
}

/// Minimizes the mean regularized loss by gradient descent from `θ = 0`.
/// Each step starts from a Barzilai–Borwein step length and backtracks
/// until the Armijo condition holds.
pub fn batch_oracle(
    loss: &Klr,
    samples: &[(Vec<f64>, Label)],
    tolerance: f64,
    max_iterations: usize,
) -> Result<BatchOptimum, AnalysisError> {
    if samples.is_empty() {
        return Err(AnalysisError::Invalid("empty batch".into()));
    }
    if !(tolerance > 0.0) {
        return Err(AnalysisError::Invalid(format!("tolerance {tolerance} must be positive")));
    }
    let dim = samples[0].0.len();
    let mut theta = vec![0.0; dim];
    let (mut value, mut grad) = batch_objective(loss, samples, &theta);
    let mut step = 1.0;
    for it in 0..max_iterations {
        let gnorm2: f64 = grad.iter().map(|g| g * g).sum();
        if gnorm2.sqrt() <= tolerance {
            return Ok(BatchOptimum {
                theta,
                objective: value,
                grad_norm: gnorm2.sqrt(),
                iterations: it,
            });
        }
        // decreases below this are indistinguishable from rounding noise
        let slack = 4.0 * f64::EPSILON * value.abs();
        let candidate = loop {
            let candidate = theta.iter().zip(&grad).map(|(t, g)| t - step * g).collect::<Vec<_>>();
            let v = batch_value(loss, samples, &candidate);
            if v <= value - 0.5 * step * gnorm2 + slack {
                break candidate;
            }
            step *= 0.5;
            if step < 1e-14 {
                return Err(AnalysisError::NoConvergence {
                    iterations: it,
                    grad_norm: gnorm2.sqrt(),
                });
            }
        };
        let (new_value, new_grad) = batch_objective(loss, samples, &candidate);
        // Barzilai–Borwein guess for the next step
        let (mut ss, mut sy) = (0.0, 0.0);
        for k in 0..dim {
            let s = candidate[k] - theta[k];
            let y = new_grad[k] - grad[k];
            ss += s * s;
            sy += s * y;
        }
        step = if sy > 0.0 { (ss / sy).clamp(1e-6, 1e6) } else { step * 2.0 };
        theta = candidate;
        value = new_value;
        grad = new_grad;
    }
    let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if grad_norm <= tolerance {
        return Ok(BatchOptimum {
            theta,
            objective: value,
            grad_norm,
            iterations: max_iterations,
        });
    }
    Err(AnalysisError::NoConvergence {
        iterations: max_iterations,
        grad_norm,
    })
}

/// Inputs of the regret bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs {
    pub nodes: usize,
    pub rounds: usize,
    pub eta: f64,
    pub theta_star_norm: f64,
    /// Gradient bound `L`.
    pub grad_bound: f64,
    pub kernels: usize,
    /// `c = ρ²δ / 82`.
    pub c: f64,
}

/// The five terms of the bound, in order.
pub fn theorem_terms(b: &BoundInputs) -> [f64; 5] {
    let j = b.nodes as f64;
    let t = b.rounds as f64;
    let l = b.grad_bound;
    [
        j * b.theta_star_norm * b.theta_star_norm / (2.0 * b.eta),
        b.eta * j * t * l * l / 2.0,
        b.eta * j * t * l * 12f64.sqrt() / b.c,
        j * (b.kernels as f64).ln() / b.eta,
        b.eta * j * t,
    ]
}

/// `J‖θ*‖²/(2η) + ηJTL²/2 + ηJTL√12/c + J ln P/η + ηJT`.
pub fn theorem_bound(b: &BoundInputs) -> f64 {
    theorem_terms(b).iter().sum()
}

/// `12η²JL²/c²`, the bound on `Σ_j E‖θ_p^j − θ̄_p‖²`.
pub fn consensus_bound(eta: f64, nodes: usize, grad_bound: f64, c: f64) -> f64 {
    12.0 * eta * eta * nodes as f64 * grad_bound * grad_bound / (c * c)
}

/// Comparator loss `Σ_j L(θ*; z(x_t^j), y_t^j)` per round.
pub fn comparator_losses(
    loss: &Klr,
    data: &Partition,
    rounds: usize,
    map: &FeatureMap,
    theta_star: &[f64],
) -> Result<Vec<f64>, KernelError> {
    (0..rounds)
        .map(|t| {
            (0..data.nodes()).try_fold(0.0, |acc, j| {
                let (x, y) = data.sample(j, t);
                Ok(acc + loss.value(theta_star, &map.features(x)?, y))
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretReport {
    pub label: String,
    /// Cumulative `Σ_j` combined loss after each round.
    pub cumulative_loss: Vec<f64>,
    pub comparator_cumulative: Vec<f64>,
    /// Cumulative regret divided by `t`.
    pub average_regret: Vec<f64>,
    pub inputs: BoundInputs,
    pub bound: f64,
}

impl RegretReport {
    pub fn regret(&self) -> f64 {
        match (self.cumulative_loss.last(), self.comparator_cumulative.last()) {
            (Some(a), Some(b)) => a - b,
            _ => 0.0,
        }
    }

    pub fn cumulative_regret(&self) -> Vec<f64> {
        self.cumulative_loss
            .iter()
            .zip(&self.comparator_cumulative)
            .map(|(a, b)| a - b)
            .collect()
    }

    pub fn within_bound(&self) -> bool {
        self.regret() <= self.bound
    }

    pub fn to_text(&self) -> String {
        let b = &self.inputs;
        let terms = theorem_terms(b);
        let mut s = String::new();
        let _ = writeln!(s, "comparator: {}", self.label);
        let _ = writeln!(s, "rounds T = {}, nodes J = {}, kernels P = {}", b.rounds, b.nodes, b.kernels);
        let _ = writeln!(s, "eta = {}, ||theta*|| = {}, L = {}, c = {:e}", b.eta, b.theta_star_norm, b.grad_bound, b.c);
        let _ = writeln!(s, "cumulative loss = {}", self.cumulative_loss.last().copied().unwrap_or(0.0));
        let _ = writeln!(s, "comparator loss = {}", self.comparator_cumulative.last().copied().unwrap_or(0.0));
        let _ = writeln!(s, "regret = {}", self.regret());
        let _ = writeln!(s, "bound terms = {terms:?}");
        let _ = writeln!(s, "bound = {}", self.bound);
        let _ = writeln!(s, "regret <= bound: {}", self.within_bound());
        s
    }

    /// CSV columns `t,cumulative_loss,comparator_cumulative,regret,average_regret`.
    pub fn write_series_csv<W: Write>(&self, mut w: W) -> Result<(), AnalysisError> {
        writeln!(w, "t,cumulative_loss,comparator_cumulative,regret,average_regret")?;
        for (t, ((a, b), avg)) in self
            .cumulative_loss
            .iter()
            .zip(&self.comparator_cumulative)
            .zip(&self.average_regret)
            .enumerate()
        {
            writeln!(w, "{},{a},{b},{},{avg}", t + 1, a - b)?;
        }
        Ok(())
    }
}

/// Builds the regret series of a run against a per-round comparator.
pub fn regret_report(
    label: impl Into<String>,
    metrics: &MetricsLog,
    comparator: &[f64],
    inputs: BoundInputs,
) -> Result<RegretReport, AnalysisError> {
    let losses = metrics.network_losses();
    if losses.len() != comparator.len() {
        return Err(AnalysisError::LengthMismatch(losses.len(), comparator.len()));
    }
    let cumsum = |xs: &[f64]| {
        let mut acc = 0.0;
        xs.iter()
            .map(|x| {
                acc += x;
                acc
            })
            .collect::<Vec<_>>()
    };
    let cumulative_loss = cumsum(&losses);
    let comparator_cumulative = cumsum(comparator);
    let average_regret = cumulative_loss
        .iter()
        .zip(&comparator_cumulative)
        .enumerate()
        .map(|(t, (a, b))| (a - b) / (t + 1) as f64)
        .collect();
    Ok(RegretReport {
        label: label.into(),
        cumulative_loss,
        comparator_cumulative,
        average_regret,
        bound: theorem_bound(&inputs),
        inputs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sublinearity {
    /// Mean of the last window is not above the mean of the first window.
    pub decreasing: bool,
    /// Least-squares slope of `ln R(t)` against `ln t` over the second half.
    pub slope: f64,
    pub sublinear: bool,
}

/// Slope margin below 1 required to call a curve sub-linear.
pub const SLOPE_MARGIN: f64 = 1e-6;

pub fn sublinearity_check(average_regret: &[f64], window: usize) -> Result<Sublinearity, AnalysisError> {
    let n = average_regret.len();
    if window == 0 || n < 2 * window {
        return Err(AnalysisError::TooShort { len: n, window });
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let first = mean(&average_regret[..window]);
    let last = mean(&average_regret[n - window..]);
    let points: Vec<(f64, f64)> = average_regret
        .iter()
        .enumerate()
        .skip(n / 2)
        .filter_map(|(i, avg)| {
            let t = (i + 1) as f64;
            let cumulative = avg * t;
            (cumulative > 0.0).then(|| (t.ln(), cumulative.ln()))
        })
        .collect();
    let slope = if points.len() < 2 {
        0.0
    } else {
        let k = points.len() as f64;
        let mx = points.iter().map(|p| p.0).sum::<f64>() / k;
        let my = points.iter().map(|p| p.1).sum::<f64>() / k;
        let sxy: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = points.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
        sxy / sxx
    };
    let decreasing = last <= first;
    Ok(Sublinearity {
        decreasing,
        slope,
        sublinear: decreasing && slope < 1.0 - SLOPE_MARGIN,
    })
}
