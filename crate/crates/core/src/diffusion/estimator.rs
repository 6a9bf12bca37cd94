use nalgebra::DVector;

use crate::linalg::norm_sq;
use crate::scalar::Real;

/// Exponentially smoothed estimate of `E‖ψ_{k,i} − w_{k,i−1}‖²`.
///
/// In steady state the smoothed value tracks `4 μ² d_k`, with `μ` the largest
/// step-size in the network (`d_k` already carries `α_k²`). Only its ratios
/// across agents matter to the allocator; [`Self::rescaled`] undoes the
/// `4 μ²` factor when an absolute estimate of `d_k` is wanted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistortionEstimate<T: Real> {
    value: T,
    forgetting: T,
}

impl<T: Real> DistortionEstimate<T> {
    /// Starts from zero. Panics unless `0 < forgetting ≤ 1`.
    pub fn new(forgetting: T) -> Self {
        assert!(
            forgetting > T::zero() && forgetting <= T::one(),
            "forgetting factor must lie in (0, 1]"
        );
        Self {
            value: T::zero(),
            forgetting,
        }
    }

    pub fn value(&self) -> T {
        self.value
    }

    pub fn forgetting(&self) -> T {
        self.forgetting
    }

    /// Feeds one squared innovation sample.
    pub fn update(&mut self, sample_sq: T) {
        self.value = (T::one() - self.forgetting) * self.value + self.forgetting * sample_sq;
    }

    /// Estimate of `d_k` on the absolute scale: `value / (4 μ²)`.
    pub fn rescaled(&self, step_size: T) -> T {
        self.value / (T::of(4.0) * step_size * step_size)
    }
}

/// Returns `est` advanced by the sample `‖ψ − w_prev‖²`.
pub fn update_distortion_estimate<T: Real>(
    est: DistortionEstimate<T>,
    psi: &DVector<T>,
    w_prev: &DVector<T>,
) -> DistortionEstimate<T> {
    let mut next = est;
    next.update(norm_sq(&(psi - w_prev)));
    next
}
