//! Per-node, per-kernel online learning primitives: linear prediction in the
//! random-feature space, the kernel logistic regression loss, SGD steps,
//! hedge (multiplicative-weights) kernel weighting and the combined
//! prediction.

use std::fmt;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LearnerError {
    #[error("label must be -1 or +1, got {0}")]
    InvalidLabel(f64),
    #[error("loss for kernel {kernel} is not finite ({value})")]
    NonFiniteLoss { kernel: usize, value: f64 },
    #[error("expected {expected} per-kernel values, got {actual}")]
    KernelCountMismatch { expected: usize, actual: usize },
    #[error("need at least one kernel")]
    NoKernels,
}

/// Binary class label, `±1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Neg,
    Pos,
}

impl Label {
    pub fn sign(self) -> f64 {
        match self {
            Label::Neg => -1.0,
            Label::Pos => 1.0,
        }
    }
}

impl TryFrom<f64> for Label {
    type Error = LearnerError;

    fn try_from(y: f64) -> Result<Self, Self::Error> {
        if y == 1.0 {
            Ok(Label::Pos)
        } else if y == -1.0 {
            Ok(Label::Neg)
        } else {
            Err(LearnerError::InvalidLabel(y))
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.sign() as i32)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

/// `f̂ = θᵀz`.
pub fn predict_single(theta: &[f64], z: &[f64]) -> f64 {
    dot(theta, z)
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// A loss over linear predictors `θᵀz` with a regularizer on `θ`.
pub trait LossModel: Send + Sync {
    /// Data-fit term as a function of the prediction only.
    fn cost(&self, prediction: f64, y: Label) -> f64;

    /// Regularization term `λ Ω(‖θ‖²)`.
    fn penalty(&self, theta: &[f64]) -> f64;

    fn value(&self, theta: &[f64], z: &[f64], y: Label) -> f64 {
        self.cost(predict_single(theta, z), y) + self.penalty(theta)
    }

    /// Writes `∇_θ L(θ; z, y)` into `out`.
    fn gradient_into(&self, theta: &[f64], z: &[f64], y: Label, out: &mut [f64]);

    fn gradient(&self, theta: &[f64], z: &[f64], y: Label) -> Vec<f64> {
        let mut g = vec![0.0; theta.len()];
        self.gradient_into(theta, z, y, &mut g);
        g
    }
}

/// Kernel logistic regression: `ln(1 + exp(−y θᵀz)) + λ‖θ‖²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Klr {
    pub lambda: f64,
}

impl Klr {
    pub fn new(lambda: f64) -> Self {
        Klr { lambda }
    }
}

impl LossModel for Klr {
    fn cost(&self, prediction: f64, y: Label) -> f64 {
        softplus(-y.sign() * prediction)
    }

    fn penalty(&self, theta: &[f64]) -> f64 {
        self.lambda * norm_sq(theta)
    }

    fn gradient_into(&self, theta: &[f64], z: &[f64], y: Label, out: &mut [f64]) {
        let ys = y.sign();
        let scale = -ys * sigmoid(-ys * predict_single(theta, z));
        for ((o, &zi), &ti) in out.iter_mut().zip(z).zip(theta) {
            *o = scale * zi + 2.0 * self.lambda * ti;
        }
    }
}

/// Raw-label convenience wrapper that validates `y ∈ {−1, +1}`.
pub fn klr_value(theta: &[f64], z: &[f64], y: f64, lambda: f64) -> Result<f64, LearnerError> {
    Ok(Klr::new(lambda).value(theta, z, Label::try_from(y)?))
}

pub fn klr_gradient(theta: &[f64], z: &[f64], y: f64, lambda: f64) -> Result<Vec<f64>, LearnerError> {
    Ok(Klr::new(lambda).gradient(theta, z, Label::try_from(y)?))
}

/// `θ ← θ − η·g`, in place.
pub fn sgd_step(theta: &mut [f64], grad: &[f64], eta: f64) {
    for (t, g) in theta.iter_mut().zip(grad) {
        *t -= eta * g;
    }
}

/// Hedge weights over `P` kernels, kept in the log domain so that long runs
/// cannot underflow. Only the normalized weights are observable.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelWeights {
    log_weights: Vec<f64>,
    normalized: Vec<f64>,
}

impl KernelWeights {
    pub fn uniform(kernels: usize) -> Result<Self, LearnerError> {
        if kernels == 0 {
            return Err(LearnerError::NoKernels);
        }
        let w = 1.0 / kernels as f64;
        Ok(KernelWeights {
            log_weights: vec![w.ln(); kernels],
            normalized: vec![w; kernels],
        })
    }

    pub fn len(&self) -> usize {
        self.normalized.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normalized.is_empty()
    }

    pub fn normalized(&self) -> &[f64] {
        &self.normalized
    }

    /// Log of the raw weights up to a common additive constant.
    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// `w_p ← w_p · exp(−η·loss_p)`, then renormalize.
    pub fn hedge_update(&mut self, losses: &[f64], eta: f64) -> Result<(), LearnerError> {
        if losses.len() != self.len() {
            return Err(LearnerError::KernelCountMismatch {
                expected: self.len(),
                actual: losses.len(),
            });
        }
        if let Some((kernel, &value)) = losses.iter().enumerate().find(|(_, l)| !l.is_finite()) {
            return Err(LearnerError::NonFiniteLoss { kernel, value });
        }
        // shifting by the smallest loss leaves equal losses an exact no-op
        let min = losses.iter().copied().fold(f64::INFINITY, f64::min);
        for (lw, l) in self.log_weights.iter_mut().zip(losses) {
            *lw -= eta * (l - min);
        }
        self.renormalize();
        Ok(())
    }

    fn renormalize(&mut self) {
        let max = self.log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for lw in &mut self.log_weights {
            *lw -= max;
        }
        let total: f64 = self.log_weights.iter().map(|lw| lw.exp()).sum();
        for (n, lw) in self.normalized.iter_mut().zip(&self.log_weights) {
            *n = lw.exp() / total;
        }
    }
}

/// `Σ_p w̄_p · pred_p`.
pub fn combined_prediction(weights: &[f64], predictions: &[f64]) -> f64 {
    dot(weights, predictions)
}

/// Loss of the combined predictor: data-fit at the combined prediction plus
/// the weight-averaged per-kernel penalties.
pub fn combined_loss<L: LossModel + ?Sized>(
    loss: &L,
    weights: &[f64],
    predictions: &[f64],
    thetas: &[&[f64]],
    y: Label,
) -> f64 {
    let penalty: f64 = weights.iter().zip(thetas).map(|(w, t)| w * loss.penalty(t)).sum();
    loss.cost(combined_prediction(weights, predictions), y) + penalty
}
