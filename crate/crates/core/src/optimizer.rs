//! ADAM recursion with per-coordinate moments and no bias correction,
//! step-size schedules, and the stopping rule used by the reconstruction
//! loop.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("dimension mismatch: state has {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unknown schedule kind `{0}`")]
    UnknownKind(String),
}

/// First/second moment accumulators of the ADAM recursion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub n: u64,
    pub beta1: f64,
    pub beta2: f64,
    /// Guard added to sqrt(v) in the denominator; the recursion itself
    /// divides by sqrt(v) alone, which is zero until a nonzero gradient
    /// arrives.
    pub eps_den: f64,
}

impl AdamState {
    pub fn new(dim: usize, beta1: f64, beta2: f64, eps_den: f64) -> Self {
        assert!(
            0.0 <= beta1 && beta1 < beta2 && beta2 <= 1.0,
            "need 0 <= beta1 < beta2 <= 1"
        );
        assert!(eps_den >= 0.0);
        AdamState {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            n: 0,
            beta1,
            beta2,
            eps_den,
        }
    }

    pub fn with_defaults(dim: usize) -> Self {
        AdamState::new(dim, 0.9, 0.999, 1e-8)
    }
}

/// One ADAM step on z in place:
/// m <- b1 m + (1-b1) g, v <- b2 v + (1-b2) g^2, z <- z - a m/(sqrt(v)+eps).
pub fn adam_step(
    state: &mut AdamState,
    z: &mut [f64],
    g: &[f64],
    alpha: f64,
) -> Result<(), OptimizerError> {
    assert!(alpha > 0.0);
    let dim = state.m.len();
    if z.len() != dim || g.len() != dim {
        return Err(OptimizerError::DimensionMismatch {
            expected: dim,
            got: if z.len() != dim { z.len() } else { g.len() },
        });
    }
    for i in 0..dim {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g[i] * g[i];
        z[i] -= alpha * state.m[i] / (state.v[i].sqrt() + state.eps_den);
    }
    state.n += 1;
    Ok(())
}

/// Step-size schedules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    /// alpha_n = alpha for all n.
    Constant { alpha: f64 },
    /// alpha_n = alpha0 / 2^(n / period): step decay, halving each period.
    Decay { alpha0: f64, period: u64 },
}

impl Schedule {
    pub fn constant(alpha: f64) -> Self {
        Schedule::Constant { alpha }
    }

    /// The decoder-training default: 5e-4 halved every 500 epochs.
    pub fn decay_default() -> Self {
        Schedule::Decay {
            alpha0: 5e-4,
            period: 500,
        }
    }

    pub fn at(&self, n: u64) -> f64 {
        match *self {
            Schedule::Constant { alpha } => alpha,
            Schedule::Decay { alpha0, period } => alpha0 / (2.0f64).powi((n / period) as i32),
        }
    }
}

/// Parse a schedule from a kind string plus parameters (CLI convenience).
pub fn schedule_from_kind(kind: &str, alpha: f64, period: u64) -> Result<Schedule, OptimizerError> {
    match kind {
        "constant" => Ok(Schedule::Constant { alpha }),
        "decay" => Ok(Schedule::Decay {
            alpha0: alpha,
            period,
        }),
        other => Err(OptimizerError::UnknownKind(other.into())),
    }
}

/// Stopping rule: stop at max_iters, or when the running best loss has not
/// improved relatively by `rel_improve` within the last `patience` entries.
pub fn should_stop(losses: &[f64], max_iters: usize, patience: usize, rel_improve: f64) -> bool {
    assert!(!losses.is_empty(), "loss history must be nonempty");
    if losses.len() >= max_iters {
        return true;
    }
    if losses.len() <= patience {
        return false;
    }
    let cut = losses.len() - patience;
    let best_before = losses[..cut].iter().cloned().fold(f64::INFINITY, f64::min);
    let best_recent = losses[cut..].iter().cloned().fold(f64::INFINITY, f64::min);
    best_recent > best_before - rel_improve * best_before.abs()
}
