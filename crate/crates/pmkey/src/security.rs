//! Analytic security bounds and the Csiszar-Korner key rate.
//!
//! The chain runs: a quantum bound `gamma0` on the Bell functional caps each
//! probability of Bob's first-row outcome at `x = (gamma0 - 2)/4` (plus
//! `4.5 eps` under noise); the minimum Shannon entropy of a four-outcome
//! distribution under that cap is the binary entropy `h(x)`, attained at
//! `(x, 1-x, 0, 0)`; a Markov-inequality argument turns the per-member cap
//! into the eavesdropper bound `H(B|E) >= sup_d (1 - eps/d) h(x + 4.5 d)`;
//! Fano's inequality bounds `H(B|A)` from the row disagreement rate; and the
//! achievable key rate is `K >= H(B|E) - H(B|A)`.
//!
//! All entropies are in bits. The noise threshold is reported both with the
//! supremum over `d` evaluated numerically and with the fixed choice
//! `d = 1.8 eps`.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SecurityError {
    #[error("probability {value} outside [0, 1]")]
    ProbabilityRange { value: f64 },
    #[error("row cap {value} outside [1/2, 1]")]
    RowCapRange { value: f64 },
    #[error("gamma0 {value} outside [4, 6]")]
    GammaRange { value: f64 },
    #[error("error rate {value} outside [0, {max}]")]
    ErrorRateRange { value: f64, max: f64 },
}

/// log2(3), the Fano alphabet factor for four outcomes.
const LOG2_3: f64 = 1.584962500721156;

/// Binary entropy in bits, with `0 log 0 = 0`.
pub fn binary_entropy(p: f64) -> Result<f64, SecurityError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(SecurityError::ProbabilityRange { value: p });
    }
    if p == 0.0 || p == 1.0 {
        return Ok(0.0);
    }
    Ok(-p * p.log2() - (1.0 - p) * (1.0 - p).log2())
}

/// Cap on each first-row outcome probability: `(gamma0 - 2)/4 + 4.5 eps`,
/// clamped at 1.
pub fn row_prob_bound(gamma0: f64, eps: f64) -> Result<f64, SecurityError> {
    if !(4.0..=6.0).contains(&gamma0) {
        return Err(SecurityError::GammaRange { value: gamma0 });
    }
    if eps < 0.0 {
        return Err(SecurityError::ErrorRateRange {
            value: eps,
            max: f64::INFINITY,
        });
    }
    Ok(((gamma0 - 2.0) / 4.0 + 4.5 * eps).min(1.0))
}

/// Minimum Shannon entropy over four-outcome distributions with every
/// probability at most `x`; the minimizer is `(x, 1-x, 0, 0)`.
pub fn min_row_entropy(x: f64) -> Result<f64, SecurityError> {
    if !(0.5..=1.0).contains(&x) {
        return Err(SecurityError::RowCapRange { value: x });
    }
    binary_entropy(x)
}

/// The eavesdropper entropy bound at one fixed Markov split `delta`:
/// `(1 - eps/delta) h(min(x0 + 4.5 delta, 1))`, clamped below at zero.
pub fn hbe_at_delta(eps: f64, x0: f64, delta: f64) -> Result<f64, SecurityError> {
    if !(0.5..=1.0).contains(&x0) {
        return Err(SecurityError::RowCapRange { value: x0 });
    }
    if eps < 0.0 {
        return Err(SecurityError::ErrorRateRange {
            value: eps,
            max: f64::INFINITY,
        });
    }
    if delta <= 0.0 {
        return Ok(0.0);
    }
    let weight = 1.0 - eps / delta;
    let entropy = binary_entropy((x0 + 4.5 * delta).min(1.0))?;
    Ok((weight * entropy).max(0.0))
}

/// Lower bound on `H(B|E)`: the supremum of [`hbe_at_delta`] over `delta`,
/// located on a log-spaced grid and sharpened by golden-section search.
/// Returns the bound and the maximising `delta`.
pub fn hbe_lower(eps: f64, x0: f64) -> Result<(f64, f64), SecurityError> {
    if !(0.5..=1.0).contains(&x0) {
        return Err(SecurityError::RowCapRange { value: x0 });
    }
    if eps < 0.0 {
        return Err(SecurityError::ErrorRateRange {
            value: eps,
            max: f64::INFINITY,
        });
    }
    if eps == 0.0 {
        // The supremum is the delta -> 0+ limit, h(x0), exactly.
        return Ok((binary_entropy(x0)?, 0.0));
    }
    let grid_points = 2000;
    let (lo, hi) = (1e-6_f64, 1.0_f64);
    let log_lo = lo.ln();
    let log_hi = hi.ln();
    let delta_at = |k: usize| (log_lo + (log_hi - log_lo) * k as f64 / (grid_points - 1) as f64).exp();
    let mut best_k = 0;
    let mut best = f64::NEG_INFINITY;
    for k in 0..grid_points {
        let v = hbe_at_delta(eps, x0, delta_at(k))?;
        if v > best {
            best = v;
            best_k = k;
        }
    }
    // Golden-section refinement in log-delta around the best grid point.
    let mut a = delta_at(best_k.saturating_sub(1)).ln();
    let mut b = delta_at((best_k + 1).min(grid_points - 1)).ln();
    let phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let value_at = |t: f64| hbe_at_delta(eps, x0, t.exp()).unwrap_or(0.0);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (value_at(c), value_at(d));
    for _ in 0..80 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = value_at(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = value_at(d);
        }
    }
    let delta_star = ((a + b) / 2.0).exp();
    let value = hbe_at_delta(eps, x0, delta_star)?.max(best);
    Ok((value, delta_star))
}

/// Fano bound on `H(B|A)` from the per-node error rate:
/// `h(1.5 eps) + 1.5 eps log2(3)`.
pub fn hba_upper(eps: f64) -> Result<f64, SecurityError> {
    if !(0.0..=2.0 / 3.0 + 1e-12).contains(&eps) {
        return Err(SecurityError::ErrorRateRange {
            value: eps,
            max: 2.0 / 3.0,
        });
    }
    let row_err = (1.5 * eps).min(1.0);
    Ok(binary_entropy(row_err)? + row_err * LOG2_3)
}

/// Derived quantities of the row-probability analysis at one noise level.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SecurityBounds {
    pub gamma0: f64,
    /// Row-probability cap `(gamma0 - 2)/4 + 4.5 eps`, clamped at 1.
    pub x: f64,
    /// Per-node error rate.
    pub epsilon: f64,
    /// Whole-row disagreement rate, `1.5 epsilon`.
    pub epsilon_tilde: f64,
}

impl SecurityBounds {
    pub fn new(gamma0: f64, epsilon: f64) -> Result<Self, SecurityError> {
        Ok(SecurityBounds {
            gamma0,
            x: row_prob_bound(gamma0, epsilon)?,
            epsilon,
            epsilon_tilde: 1.5 * epsilon,
        })
    }
}

/// Key-rate report at one noise level.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct KeyRateReport {
    pub epsilon: f64,
    pub hbe_lower: f64,
    pub hba_upper: f64,
    pub key_rate: f64,
    /// The `delta` attaining `hbe_lower` (0 encodes the delta -> 0 limit).
    pub delta_star: f64,
}

/// Csiszar-Korner rate with the supremum over `delta` taken numerically.
pub fn key_rate(eps: f64, gamma0: f64) -> Result<KeyRateReport, SecurityError> {
    let x0 = row_prob_bound(gamma0, 0.0)?;
    let (hbe, delta_star) = hbe_lower(eps, x0)?;
    let hba = hba_upper(eps)?;
    Ok(KeyRateReport {
        epsilon: eps,
        hbe_lower: hbe,
        hba_upper: hba,
        key_rate: hbe - hba,
        delta_star,
    })
}

/// Csiszar-Korner rate at the fixed split `delta = 1.8 eps`.
pub fn key_rate_fixed_delta(eps: f64, gamma0: f64) -> Result<KeyRateReport, SecurityError> {
    let x0 = row_prob_bound(gamma0, 0.0)?;
    let delta = 1.8 * eps;
    let hbe = if eps == 0.0 {
        binary_entropy(x0)?
    } else {
        hbe_at_delta(eps, x0, delta)?
    };
    let hba = hba_upper(eps)?;
    Ok(KeyRateReport {
        epsilon: eps,
        hbe_lower: hbe,
        hba_upper: hba,
        key_rate: hbe - hba,
        delta_star: delta,
    })
}

fn threshold_by_bisection(
    gamma0: f64,
    rate: impl Fn(f64, f64) -> Result<KeyRateReport, SecurityError>,
) -> Result<f64, SecurityError> {
    if !(4.0..=6.0).contains(&gamma0) {
        return Err(SecurityError::GammaRange { value: gamma0 });
    }
    if rate(1e-9, gamma0)?.key_rate <= 0.0 {
        return Ok(0.0);
    }
    let mut lo = 0.0_f64;
    let mut hi = 0.05_f64;
    while rate(hi, gamma0)?.key_rate > 0.0 {
        hi *= 2.0;
        if hi > 2.0 / 3.0 {
            return Ok(2.0 / 3.0);
        }
    }
    while hi - lo > 1e-6 {
        let mid = 0.5 * (lo + hi);
        if rate(mid, gamma0)?.key_rate >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Largest per-node error rate with nonnegative key rate (optimized delta),
/// found by bisection to 1e-6.
pub fn threshold(gamma0: f64) -> Result<f64, SecurityError> {
    threshold_by_bisection(gamma0, key_rate)
}

/// Noise threshold with the fixed split `delta = 1.8 eps`.
pub fn threshold_fixed_delta(gamma0: f64) -> Result<f64, SecurityError> {
    threshold_by_bisection(gamma0, key_rate_fixed_delta)
}
