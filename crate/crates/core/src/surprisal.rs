//! The surprisal transform: `-log_b p`.

use crate::num::Real;

/// Surprisal of probability `p` in log base `base`. Zero at certainty,
/// growing without bound as `p` falls toward zero.
pub fn surprisal<R: Real>(p: R, base: R) -> R {
    -(p.ln() / base.ln())
}

/// Default log base: bits.
pub fn default_base<R: Real>() -> R {
    R::from_f64_lossy(2.0)
}
