//! Randomized compression operators.
//!
//! Every operator `Q` here is unbiased, `E[Q(x)] = x`, and has a relative
//! variance bound `E‖Q(x) − x‖² ≤ ω‖x‖²`. The quantizer sends the norm at full
//! precision plus a sign bit and `r` bits per component; the sparsifier keeps
//! `S` random components scaled by `M/S`.

use nalgebra::DVector;
use rand::Rng;
use thiserror::Error;

use crate::scalar::Real;

/// Largest supported quantizer resolution.
pub const MAX_LEVEL_BITS: u32 = 31;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CompressionError {
    #[error("input has length {found}, operator expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid compression spec: {0}")]
    InvalidSpec(String),
}

/// Operator family together with its resource parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// `r` bits per component magnitude plus `h` bits for the norm.
    RandomizedQuantizer { level_bits: u32, norm_bits: u32 },
    /// Keeps `S` components; each kept value costs `h` bits plus its position.
    RandomizedSparsifier { kept: usize, value_bits: u32 },
    /// Lossless dense transmission at `h` bits per component.
    Identity { value_bits: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CompressionSpec {
    variant: Variant,
    dim: usize,
}

/// Relative variance bound of an operator.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct OmegaValue(f64);

impl OmegaValue {
    pub fn value(self) -> f64 {
        self.0
    }
}

impl CompressionSpec {
    pub fn new(variant: Variant, dim: usize) -> Result<Self, CompressionError> {
        if dim == 0 {
            return Err(CompressionError::InvalidSpec("dimension must be positive".into()));
        }
        match variant {
            Variant::RandomizedQuantizer { level_bits, norm_bits } => {
                if level_bits == 0 || level_bits > MAX_LEVEL_BITS {
                    return Err(CompressionError::InvalidSpec(format!(
                        "quantizer needs 1 <= r <= {MAX_LEVEL_BITS}, got {level_bits}"
                    )));
                }
                if norm_bits == 0 {
                    return Err(CompressionError::InvalidSpec("norm bits must be positive".into()));
                }
            }
            Variant::RandomizedSparsifier { kept, value_bits } => {
                if kept == 0 || kept > dim {
                    return Err(CompressionError::InvalidSpec(format!(
                        "sparsifier needs 1 <= S <= {dim}, got {kept}"
                    )));
                }
                if value_bits == 0 {
                    return Err(CompressionError::InvalidSpec("value bits must be positive".into()));
                }
            }
            Variant::Identity { value_bits } => {
                if value_bits == 0 {
                    return Err(CompressionError::InvalidSpec("value bits must be positive".into()));
                }
            }
        }
        Ok(Self { variant, dim })
    }

    pub fn quantizer(dim: usize, level_bits: u32, norm_bits: u32) -> Result<Self, CompressionError> {
        Self::new(Variant::RandomizedQuantizer { level_bits, norm_bits }, dim)
    }

    pub fn sparsifier(dim: usize, kept: usize, value_bits: u32) -> Result<Self, CompressionError> {
        Self::new(Variant::RandomizedSparsifier { kept, value_bits }, dim)
    }

    pub fn identity(dim: usize, value_bits: u32) -> Self {
        Self::new(Variant::Identity { value_bits }, dim).expect("identity spec with positive bits")
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.variant, Variant::Identity { .. })
    }

    /// Resource value `x_k`: `r` for the quantizer, `S` for the sparsifier.
    pub fn resource(&self) -> Option<usize> {
        match self.variant {
            Variant::RandomizedQuantizer { level_bits, .. } => Some(level_bits as usize),
            Variant::RandomizedSparsifier { kept, .. } => Some(kept),
            Variant::Identity { .. } => None,
        }
    }

    /// Number of quantization intervals `L = 2^r − 1`.
    pub fn levels(&self) -> Option<u64> {
        match self.variant {
            Variant::RandomizedQuantizer { level_bits, .. } => Some((1u64 << level_bits) - 1),
            _ => None,
        }
    }

    pub fn omega(&self) -> OmegaValue {
        let m = self.dim as f64;
        let w = match self.variant {
            Variant::RandomizedQuantizer { .. } => {
                let l = self.levels().unwrap() as f64;
                (m / (l * l)).min(m.sqrt() / l)
            }
            Variant::RandomizedSparsifier { kept, .. } => m / kept as f64 - 1.0,
            Variant::Identity { .. } => 0.0,
        };
        OmegaValue(w)
    }

    /// Bits per transmission of one compressed vector.
    pub fn bit_cost(&self) -> u64 {
        let m = self.dim as u64;
        match self.variant {
            Variant::RandomizedQuantizer { level_bits, norm_bits } => {
                norm_bits as u64 + m * (level_bits as u64 + 1)
            }
            Variant::RandomizedSparsifier { kept, value_bits } => {
                kept as u64 * (value_bits as u64 + position_bits(self.dim))
            }
            Variant::Identity { value_bits } => m * value_bits as u64,
        }
    }

    /// Applies the operator to `x`, writing into `out`.
    pub fn compress_into<T: Real, R: Rng + ?Sized>(
        &self,
        x: &DVector<T>,
        rng: &mut R,
        out: &mut DVector<T>,
    ) -> Result<(), CompressionError> {
        if x.len() != self.dim || out.len() != self.dim {
            return Err(CompressionError::DimensionMismatch {
                expected: self.dim,
                found: if x.len() != self.dim { x.len() } else { out.len() },
            });
        }
        match self.variant {
            Variant::Identity { .. } => out.copy_from(x),
            Variant::RandomizedQuantizer { .. } => {
                quantize(x, self.levels().unwrap(), rng, out);
            }
            Variant::RandomizedSparsifier { kept, .. } => sparsify(x, kept, rng, out),
        }
        Ok(())
    }

    pub fn compress<T: Real, R: Rng + ?Sized>(
        &self,
        x: &DVector<T>,
        rng: &mut R,
    ) -> Result<DVector<T>, CompressionError> {
        let mut out = DVector::zeros(self.dim);
        self.compress_into(x, rng, &mut out)?;
        Ok(out)
    }
}

/// `⌈log₂ M⌉` bits to address one of `M` positions.
pub fn position_bits(dim: usize) -> u64 {
    if dim <= 1 {
        0
    } else {
        (usize::BITS - (dim - 1).leading_zeros()) as u64
    }
}

/// High-resolution bound `ω̂ = M / (2^x − 1)²` used by the allocator.
pub fn high_resolution_omega<T: Real>(dim: usize, x: T) -> T {
    let l = T::of(2.0).powf(x) - T::one();
    T::of_usize(dim) / (l * l)
}

fn quantize<T: Real, R: Rng + ?Sized>(x: &DVector<T>, levels: u64, rng: &mut R, out: &mut DVector<T>) {
    let norm = x.norm();
    if norm == T::zero() {
        out.fill(T::zero());
        return;
    }
    let l = T::of(levels as f64);
    for (o, &xm) in out.iter_mut().zip(x.iter()) {
        let chi = (xm.abs() / norm).min(T::one());
        let scaled = chi * l;
        let lower = scaled.floor();
        let p_up = scaled - lower;
        let u = T::of(rng.random::<f64>());
        let level = if lower >= l {
            l
        } else if u < p_up {
            lower + T::one()
        } else {
            lower
        };
        let sign = if xm < T::zero() { -T::one() } else { T::one() };
        *o = norm * sign * (level / l);
    }
}

fn sparsify<T: Real, R: Rng + ?Sized>(x: &DVector<T>, kept: usize, rng: &mut R, out: &mut DVector<T>) {
    let m = x.len();
    out.fill(T::zero());
    let scale = T::of_usize(m) / T::of_usize(kept);
    // partial Fisher–Yates over the index set
    let mut idx: Vec<usize> = (0..m).collect();
    for i in 0..kept {
        let j = rng.random_range(i..m);
        idx.swap(i, j);
        let pos = idx[i];
        out[pos] = x[pos] * scale;
    }
}
