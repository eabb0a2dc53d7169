//! Advertising-slot alignment.
//!
//! A device schedules advertisements on a 625 µs grid, so the gap between
//! two of its consecutive packets, reduced modulo the slot, is a constant
//! per-device offset plus a few µs of jitter.

use serde::{Deserialize, Serialize};

pub const SLOT_US: f64 = 625.0;
const HALF_SLOT: f64 = SLOT_US / 2.0;

/// `Δt − round(Δt / 625)·625` for `Δt = |t − t_prev|`, in `[-312.5, 312.5)`.
pub fn time_residual(t: i64, t_prev: i64) -> f64 {
    let dt = t.abs_diff(t_prev) as f64;
    wrap_residual(dt - (dt / SLOT_US).round() * SLOT_US)
}

/// Maps any offset onto `[-312.5, 312.5)`.
pub fn wrap_residual(x: f64) -> f64 {
    x - SLOT_US * ((x + HALF_SLOT) / SLOT_US).floor()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeAlignment {
    pub slot: f64,
    pub residual: f64,
    pub tau_fix: f64,
    pub epsilon_bound: f64,
}

impl TimeAlignment {
    pub fn new(t: i64, t_prev: i64, tau_fix: f64, epsilon_bound: f64) -> Self {
        TimeAlignment { slot: SLOT_US, residual: time_residual(t, t_prev), tau_fix, epsilon_bound }
    }

    /// Residual minus the offset, wrapped onto the slot.
    pub fn deviation(&self) -> f64 {
        wrap_residual(self.residual - self.tau_fix)
    }

    /// Jitter is one-sided: `residual = tau_fix + ε` with `0 <= ε <= bound`.
    pub fn holds(&self) -> bool {
        let d = self.deviation();
        (0.0..=self.epsilon_bound).contains(&d)
    }
}
