//! Randomized level quantizer and its wire encoding.
//!
//! A non-zero vector `v` is sent as its Euclidean norm plus, per element, a
//! sign bit and a level `ℓ ∈ [0, M]` with `M = 2^b − 1`. The level is drawn
//! so that `E[ℓ / M] = |v_i| / ‖v‖`, which makes the reconstruction
//! `‖v‖ · sign(v_i) · ℓ / M` an unbiased estimate of `v_i`.
//!
//! Wire layout (little-endian norm, then a bit stream):
//!
//! ```text
//! [ norm: f64 LE (8 bytes) ][ s₀ ℓ₀(b bits) s₁ ℓ₁ ... ][ zero padding ]
//! ```
//!
//! Each element field is `1 + b` bits, most-significant bit first; sign bit
//! `1` means negative. The payload is `8 + ceil(n·(1+b)/8)` bytes.

use rand::Rng;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum QuantizerError {
    #[error("level count {0} is not of the form 2^b - 1 with b >= 1")]
    LevelsNotPowerOfTwoMinusOne(u32),
    #[error("compression parameter delta = {delta} is not positive for n = {dim}, M = {levels}")]
    NonPositiveDelta { delta: f64, dim: usize, levels: u32 },
    #[error("vector dimension must be positive")]
    EmptyDimension,
    #[error("expected a vector of length {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("element {index} is not finite ({value})")]
    NonFinite { index: usize, value: f64 },
    #[error("level {level} at element {index} exceeds M = {max}")]
    LevelOutOfRange { index: usize, level: u32, max: u32 },
    #[error("corrupt payload: {0}")]
    Corrupt(&'static str),
    #[error("wire payload has {actual} bytes, expected {expected}")]
    WrongLength { expected: usize, actual: usize },
}

/// `δ = 1 − min(2D/M², √(2D)/M)` for a `2D`-dimensional vector. Can be
/// non-positive; callers must check before using the quantizer.
pub fn compression_delta(half_dim: usize, levels: u32) -> f64 {
    delta_for_dim(2 * half_dim, levels)
}

fn delta_for_dim(dim: usize, levels: u32) -> f64 {
    let n = dim as f64;
    let m = levels as f64;
    1.0 - (n / (m * m)).min(n.sqrt() / m)
}

/// Stochastic quantizer with `M = 2^b − 1` levels for vectors of length `dim`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelQuantizer {
    levels: u32,
    bits: u32,
    dim: usize,
    delta: f64,
}

impl LevelQuantizer {
    pub fn new(levels: u32, dim: usize) -> Result<Self, QuantizerError> {
        if levels == 0 || levels == u32::MAX || !(levels + 1).is_power_of_two() {
            return Err(QuantizerError::LevelsNotPowerOfTwoMinusOne(levels));
        }
        if dim == 0 {
            return Err(QuantizerError::EmptyDimension);
        }
        let delta = delta_for_dim(dim, levels);
        if !(delta > 0.0) {
            return Err(QuantizerError::NonPositiveDelta { delta, dim, levels });
        }
        Ok(LevelQuantizer {
            levels,
            bits: (levels + 1).trailing_zeros(),
            dim,
            delta,
        })
    }

    pub fn with_bits(bits: u32, dim: usize) -> Result<Self, QuantizerError> {
        if bits == 0 || bits > 31 {
            return Err(QuantizerError::LevelsNotPowerOfTwoMinusOne(0));
        }
        Self::new((1u32 << bits) - 1, dim)
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn payload_bytes(&self) -> usize {
        8 + (self.dim * (1 + self.bits as usize)).div_ceil(8)
    }

    pub fn quantize<R: Rng + ?Sized>(
        &self,
        v: &[f64],
        rng: &mut R,
    ) -> Result<QuantizedVector, QuantizerError> {
        check_vector(v, self.dim)?;
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let m = self.levels;
        if norm == 0.0 {
            return Ok(QuantizedVector::zero(self.dim, m));
        }
        let mf = m as f64;
        let mut negative = Vec::with_capacity(v.len());
        let mut levels = Vec::with_capacity(v.len());
        for &x in v {
            let scaled = (mf * x.abs() / norm).min(mf);
            let low = scaled.floor();
            // stay at `low` with probability 1 − (scaled − low)
            let level = if rng.random::<f64>() < 1.0 - scaled + low {
                low as u32
            } else {
                (low as u32 + 1).min(m)
            };
            negative.push(x < 0.0);
            levels.push(level);
        }
        Ok(QuantizedVector {
            norm,
            negative,
            levels,
            max_level: m,
        })
    }

    pub fn decode_wire(&self, bytes: &[u8]) -> Result<QuantizedVector, QuantizerError> {
        let expected = self.payload_bytes();
        if bytes.len() != expected {
            return Err(QuantizerError::WrongLength {
                expected,
                actual: bytes.len(),
            });
        }
        let norm = f64::from_le_bytes(bytes[..8].try_into().expect("8-byte prefix"));
        if !(norm >= 0.0 && norm.is_finite()) {
            return Err(QuantizerError::Corrupt("norm is negative or not finite"));
        }
        let mut reader = BitReader::new(&bytes[8..]);
        let mut negative = Vec::with_capacity(self.dim);
        let mut levels = Vec::with_capacity(self.dim);
        for _ in 0..self.dim {
            negative.push(reader.read(1) == 1);
            levels.push(reader.read(self.bits) as u32);
        }
        Ok(QuantizedVector {
            norm,
            negative,
            levels,
            max_level: self.levels,
        })
    }
}

fn check_vector(v: &[f64], dim: usize) -> Result<(), QuantizerError> {
    if v.len() != dim {
        return Err(QuantizerError::DimensionMismatch {
            expected: dim,
            actual: v.len(),
        });
    }
    if let Some((index, &value)) = v.iter().enumerate().find(|(_, x)| !x.is_finite()) {
        return Err(QuantizerError::NonFinite { index, value });
    }
    Ok(())
}

/// Output of [`LevelQuantizer::quantize`].
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedVector {
    pub norm: f64,
    /// `true` for negative elements.
    pub negative: Vec<bool>,
    pub levels: Vec<u32>,
    /// `M`, the level that decodes to the full norm.
    pub max_level: u32,
}

impl QuantizedVector {
    pub fn zero(dim: usize, max_level: u32) -> Self {
        QuantizedVector {
            norm: 0.0,
            negative: vec![false; dim],
            levels: vec![0; dim],
            max_level,
        }
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn dequantize(&self) -> Result<Vec<f64>, QuantizerError> {
        if self.negative.len() != self.levels.len() {
            return Err(QuantizerError::Corrupt("sign and level counts differ"));
        }
        let m = self.max_level as f64;
        self.levels
            .iter()
            .zip(&self.negative)
            .enumerate()
            .map(|(index, (&level, &neg))| {
                if level > self.max_level {
                    return Err(QuantizerError::LevelOutOfRange {
                        index,
                        level,
                        max: self.max_level,
                    });
                }
                let mag = self.norm * (level as f64 / m);
                Ok(if neg { -mag } else { mag })
            })
            .collect()
    }

    pub fn encode_wire(&self) -> Result<Vec<u8>, QuantizerError> {
        if self.max_level == 0 || !(self.max_level as u64 + 1).is_power_of_two() {
            return Err(QuantizerError::LevelsNotPowerOfTwoMinusOne(self.max_level));
        }
        if self.negative.len() != self.levels.len() {
            return Err(QuantizerError::Corrupt("sign and level counts differ"));
        }
        let bits = (self.max_level + 1).trailing_zeros();
        let mut out = Vec::with_capacity(8 + (self.len() * (1 + bits as usize)).div_ceil(8));
        out.extend_from_slice(&self.norm.to_le_bytes());
        let mut writer = BitWriter::new(out);
        for (index, (&level, &neg)) in self.levels.iter().zip(&self.negative).enumerate() {
            if level > self.max_level {
                return Err(QuantizerError::LevelOutOfRange {
                    index,
                    level,
                    max: self.max_level,
                });
            }
            writer.write(neg as u64, 1);
            writer.write(level as u64, bits);
        }
        Ok(writer.finish())
    }
}

struct BitWriter {
    out: Vec<u8>,
    acc: u8,
    used: u32,
}

impl BitWriter {
    fn new(out: Vec<u8>) -> Self {
        BitWriter { out, acc: 0, used: 0 }
    }

    fn write(&mut self, value: u64, width: u32) {
        for shift in (0..width).rev() {
            let bit = ((value >> shift) & 1) as u8;
            self.acc |= bit << (7 - self.used);
            self.used += 1;
            if self.used == 8 {
                self.out.push(self.acc);
                self.acc = 0;
                self.used = 0;
            }
        }
    }

    fn finish(mut self) -> Vec<u8> {
        if self.used > 0 {
            self.out.push(self.acc);
        }
        self.out
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        BitReader { bytes, pos: 0 }
    }

    /// Caller guarantees the buffer holds enough bits.
    fn read(&mut self, width: u32) -> u64 {
        let mut value = 0u64;
        for _ in 0..width {
            let byte = self.bytes[self.pos / 8];
            let bit = (byte >> (7 - self.pos % 8)) & 1;
            value = (value << 1) | bit as u64;
            self.pos += 1;
        }
        value
    }
}

/// Compressor used on the gossip links: either the level quantizer or the
/// identity (full-precision) map used by unquantized runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QuantizerSpec {
    Identity { dim: usize },
    Levels(LevelQuantizer),
}

impl QuantizerSpec {
    pub fn identity(dim: usize) -> Self {
        QuantizerSpec::Identity { dim }
    }

    pub fn levels(levels: u32, dim: usize) -> Result<Self, QuantizerError> {
        LevelQuantizer::new(levels, dim).map(QuantizerSpec::Levels)
    }

    pub fn dim(&self) -> usize {
        match self {
            QuantizerSpec::Identity { dim } => *dim,
            QuantizerSpec::Levels(q) => q.dim(),
        }
    }

    /// Compression parameter; exactly 1 for the identity map.
    pub fn delta(&self) -> f64 {
        match self {
            QuantizerSpec::Identity { .. } => 1.0,
            QuantizerSpec::Levels(q) => q.delta(),
        }
    }

    pub fn payload_bytes(&self) -> usize {
        match self {
            QuantizerSpec::Identity { dim } => 8 * dim,
            QuantizerSpec::Levels(q) => q.payload_bytes(),
        }
    }

    pub fn label(&self) -> String {
        match self {
            QuantizerSpec::Identity { .. } => "identity".to_string(),
            QuantizerSpec::Levels(q) => format!("M={}", q.levels()),
        }
    }

    pub fn compress<R: Rng + ?Sized>(
        &self,
        v: &[f64],
        rng: &mut R,
    ) -> Result<Message, QuantizerError> {
        match self {
            QuantizerSpec::Identity { dim } => {
                check_vector(v, *dim)?;
                Ok(Message::Exact(v.to_vec()))
            }
            QuantizerSpec::Levels(q) => q.quantize(v, rng).map(Message::Quantized),
        }
    }

    pub fn decode_wire(&self, bytes: &[u8]) -> Result<Message, QuantizerError> {
        match self {
            QuantizerSpec::Identity { dim } => {
                if bytes.len() != 8 * dim {
                    return Err(QuantizerError::WrongLength {
                        expected: 8 * dim,
                        actual: bytes.len(),
                    });
                }
                Ok(Message::Exact(
                    bytes
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                        .collect(),
                ))
            }
            QuantizerSpec::Levels(q) => q.decode_wire(bytes).map(Message::Quantized),
        }
    }
}

/// One compressed vector as it travels over a link.
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Exact(Vec<f64>),
    Quantized(QuantizedVector),
}

impl Message {
    pub fn decode(&self) -> Result<Vec<f64>, QuantizerError> {
        match self {
            Message::Exact(v) => Ok(v.clone()),
            Message::Quantized(q) => q.dequantize(),
        }
    }

    pub fn encode_wire(&self) -> Result<Vec<u8>, QuantizerError> {
        match self {
            Message::Exact(v) => Ok(v.iter().flat_map(|x| x.to_le_bytes()).collect()),
            Message::Quantized(q) => q.encode_wire(),
        }
    }
}
