//! Random Fourier features for Gaussian kernels.
//!
//! For `κ(x, x′) = exp(−‖x − x′‖² / (2σ²))` the spectral density is
//! `N(0, σ⁻² I)`. With frequencies `v_1..v_D` drawn from it, the embedding
//!
//! ```text
//! z(x) = D^{-1/2} [sin(v_1ᵀx), …, sin(v_Dᵀx), cos(v_1ᵀx), …, cos(v_Dᵀx)]
//! ```
//!
//! satisfies `E[z(x)ᵀz(x′)] = κ(x − x′)` and `‖z(x)‖ = 1` for every `x`.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, thiserror::Error)]
pub enum KernelError {
    #[error("kernel bandwidth must be positive and finite, got {0}")]
    InvalidSigma(f64),
    #[error("feature count and input dimension must be positive (D = {features}, d = {input_dim})")]
    EmptyShape { features: usize, input_dim: usize },
    #[error("expected an input of length {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("feature map file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianKernel {
    sigma: f64,
}

impl GaussianKernel {
    pub fn new(sigma: f64) -> Result<Self, KernelError> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(KernelError::InvalidSigma(sigma));
        }
        Ok(GaussianKernel { sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64, KernelError> {
        if x.len() != y.len() {
            return Err(KernelError::DimensionMismatch {
                expected: x.len(),
                actual: y.len(),
            });
        }
        let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok((-sq / (2.0 * self.sigma * self.sigma)).exp())
    }
}

/// Closed-form Gaussian kernel value.
pub fn kernel_exact(kernel: &GaussianKernel, x: &[f64], y: &[f64]) -> Result<f64, KernelError> {
    kernel.eval(x, y)
}

/// `D` frozen frequency vectors in `R^d`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    sigma: f64,
    input_dim: usize,
    features: usize,
    frequencies: Vec<f64>,
}

impl FeatureMap {
    pub fn sample<R: Rng + ?Sized>(
        kernel: &GaussianKernel,
        features: usize,
        input_dim: usize,
        rng: &mut R,
    ) -> Result<Self, KernelError> {
        if features == 0 || input_dim == 0 {
            return Err(KernelError::EmptyShape { features, input_dim });
        }
        let normal = Normal::new(0.0, 1.0 / kernel.sigma()).expect("positive std dev");
        let frequencies = (0..features * input_dim).map(|_| normal.sample(rng)).collect();
        Ok(FeatureMap {
            sigma: kernel.sigma(),
            input_dim,
            features,
            frequencies,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Number of frequencies `D`.
    pub fn feature_count(&self) -> usize {
        self.features
    }

    /// Embedding length `2D`.
    pub fn output_dim(&self) -> usize {
        2 * self.features
    }

    pub fn frequency(&self, k: usize) -> &[f64] {
        &self.frequencies[k * self.input_dim..(k + 1) * self.input_dim]
    }

    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>, KernelError> {
        let mut z = vec![0.0; self.output_dim()];
        self.features_into(x, &mut z)?;
        Ok(z)
    }

    pub fn features_into(&self, x: &[f64], z: &mut [f64]) -> Result<(), KernelError> {
        if x.len() != self.input_dim {
            return Err(KernelError::DimensionMismatch {
                expected: self.input_dim,
                actual: x.len(),
            });
        }
        assert_eq!(z.len(), self.output_dim(), "output buffer must have length 2D");
        let scale = 1.0 / (self.features as f64).sqrt();
        let (sin_half, cos_half) = z.split_at_mut(self.features);
        for k in 0..self.features {
            let phase: f64 = self.frequency(k).iter().zip(x).map(|(v, xi)| v * xi).sum();
            let (s, c) = phase.sin_cos();
            sin_half[k] = scale * s;
            cos_half[k] = scale * c;
        }
        Ok(())
    }

    /// Binary layout: `d: u64 LE`, `D: u64 LE`, `σ: f64 LE`, then `D·d`
    /// frequencies as `f64 LE`, row-major.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), KernelError> {
        w.write_all(&(self.input_dim as u64).to_le_bytes())?;
        w.write_all(&(self.features as u64).to_le_bytes())?;
        w.write_all(&self.sigma.to_le_bytes())?;
        for f in &self.frequencies {
            w.write_all(&f.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, KernelError> {
        let mut buf = [0u8; 8];
        let mut next = |r: &mut R| -> Result<[u8; 8], KernelError> {
            r.read_exact(&mut buf).map_err(|e| match e.kind() {
                std::io::ErrorKind::UnexpectedEof => KernelError::Format("truncated file".into()),
                _ => KernelError::Io(e),
            })?;
            Ok(buf)
        };
        let input_dim = u64::from_le_bytes(next(&mut r)?) as usize;
        let features = u64::from_le_bytes(next(&mut r)?) as usize;
        let sigma = f64::from_le_bytes(next(&mut r)?);
        GaussianKernel::new(sigma)?;
        if features == 0 || input_dim == 0 {
            return Err(KernelError::EmptyShape { features, input_dim });
        }
        let count = features
            .checked_mul(input_dim)
            .ok_or_else(|| KernelError::Format("header dimensions overflow".into()))?;
        let mut frequencies = Vec::with_capacity(count.min(1 << 24));
        for _ in 0..count {
            frequencies.push(f64::from_le_bytes(next(&mut r)?));
        }
        let mut probe = [0u8; 1];
        if r.read(&mut probe)? != 0 {
            return Err(KernelError::Format("trailing bytes after frequencies".into()));
        }
        Ok(FeatureMap {
            sigma,
            input_dim,
            features,
            frequencies,
        })
    }
}
