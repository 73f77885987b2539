//! Polynomial learning-rate decay.

use tinyseg_core::error::{Error, Result};

/// `initial * (1 - iteration / max_iterations) ^ power`, evaluated in f64.
///
/// `iteration` counts completed steps, so iteration 0 returns `initial` and
/// iteration `max_iterations` returns 0 exactly (for power > 0).
pub fn poly_lr(initial: f64, iteration: u64, max_iterations: u64, power: f64) -> Result<f64> {
    if max_iterations == 0 {
        return Err(Error::config("max_iterations must be positive"));
    }
    if iteration > max_iterations {
        return Err(Error::config(format!(
            "iteration {iteration} exceeds max_iterations {max_iterations}"
        )));
    }
    if !(initial > 0.0) || !initial.is_finite() {
        return Err(Error::config(format!(
            "initial learning rate must be positive and finite, got {initial}"
        )));
    }
    if !(power > 0.0) || !power.is_finite() {
        return Err(Error::config(format!(
            "poly power must be positive and finite, got {power}"
        )));
    }
    let t = iteration as f64 / max_iterations as f64;
    Ok(initial * (1.0 - t).powf(power))
}
