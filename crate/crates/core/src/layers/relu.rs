use super::chebyshev::{cheb_coefficients, cheb_eval_with};
use super::common::span;
use super::ReluConfig;
use crate::error::Result;
use crate::simd::{SlotBackend, SlotVector};

/// Series approximating the ReLU of the unscaled input after the `1/beta`
/// scaling of [`secure_relu`].
pub fn relu_coefficients(beta: f64, degree: usize) -> Vec<f64> {
    let gain = if beta > 1.0 { beta } else { 1.0 };
    cheb_coefficients(move |z| gain * z.max(0.0), degree)
}

/// Polynomial ReLU on slots `[0, n)`; slots past `n` come out zero.
///
/// Inputs are brought into `[-1, 1]` by one `1/beta` multiplication when
/// `beta > 1` and the interpolated target is `beta * relu(z)`, so the output
/// is on the original scale.
pub fn secure_relu(backend: &dyn SlotBackend, x: &SlotVector, cfg: &ReluConfig) -> Result<SlotVector> {
    cfg.validate(backend.slot_count())?;
    let scaled;
    let input = if cfg.beta > 1.0 {
        scaled = backend.mult_plain(x, &span(backend.slot_count(), 0, cfg.active, 1.0 / cfg.beta))?;
        &scaled
    } else {
        x
    };
    let coeffs = relu_coefficients(cfg.beta, cfg.degree);
    cheb_eval_with(backend, input, &coeffs, cfg.active, cfg.strategy)
}
