//! Waterfilling power allocation.
//!
//! All three solvers reduce to the same problem: find a level `w` with
//! `sum_i (w - t_i)^+ = budget` for per-component thresholds `t_i`. The
//! left side is piecewise linear and increasing in `w`, so sorting the
//! thresholds and testing each active-set size gives the exact root.

use std::f64::consts::LN_2;

use ndarray::Array2;

use crate::error::{FtnError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct WaterfillSolution {
    /// Lagrange multiplier in the convention of the solver that produced it.
    pub mu: f64,
    pub allocations: Vec<f64>,
    pub budget_used: f64,
    /// Indices with strictly positive allocation, ascending.
    pub active_set: Vec<usize>,
}

/// Per-frequency allocation from [`spectral_waterfill`].
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralWaterfill {
    /// `phi_i(f) = (1/mu - noise/tau_i(f))^+`.
    pub mu: f64,
    /// `M x L`, row per grid point.
    pub allocations: Array2<f64>,
    /// Midpoint quadrature of `sum_i phi_i(f)`.
    pub budget_used: f64,
    pub active_count: usize,
}

/// Solves `sum_i (level - t_i)^+ = budget` exactly. Infinite thresholds
/// never activate. Returns the level.
fn solve_level(thresholds: &[f64], budget: f64) -> f64 {
    let mut sorted: Vec<f64> = thresholds.iter().copied().filter(|t| t.is_finite()).collect();
    sorted.sort_by(f64::total_cmp);
    let mut prefix = 0.0;
    let mut level = f64::NAN;
    for (k, &t) in sorted.iter().enumerate() {
        prefix += t;
        level = (budget + prefix) / (k + 1) as f64;
        match sorted.get(k + 1) {
            Some(&next) if level > next => continue,
            _ => break,
        }
    }
    level
}

/// Allocations `(level - t_i)^+` with the level nudged once so the sum
/// hits the budget despite cancellation in `level - t_i`.
fn fill(thresholds: &[f64], budget: f64) -> (f64, Vec<f64>) {
    let mut level = solve_level(thresholds, budget);
    let alloc = |level: f64| -> Vec<f64> {
        thresholds.iter().map(|&t| if t.is_finite() { (level - t).max(0.0) } else { 0.0 }).collect()
    };
    let mut x = alloc(level);
    let active = x.iter().filter(|&&v| v > 0.0).count();
    if active > 0 {
        let residual = budget - x.iter().sum::<f64>();
        level += residual / active as f64;
        let y = alloc(level);
        if y.iter().filter(|&&v| v > 0.0).count() == active {
            x = y;
        }
    }
    (level, x)
}

fn active_indices(x: &[f64]) -> Vec<usize> {
    x.iter().enumerate().filter(|(_, &v)| v > 0.0).map(|(i, _)| i).collect()
}

fn check_budget(budget: f64) -> Result<()> {
    if budget.is_finite() && budget > 0.0 {
        Ok(())
    } else {
        Err(FtnError::InvalidConfig(format!("power budget must be > 0, got {budget}")))
    }
}

fn check_noise(noise: f64) -> Result<()> {
    if noise.is_finite() && noise > 0.0 {
        Ok(())
    } else {
        Err(FtnError::InvalidConfig(format!("noise variance must be > 0, got {noise}")))
    }
}

/// `alpha_i = noise (1/mu - 1/tau_i)^+` with `sum_i alpha_i = budget`.
pub fn classic_waterfill(gains: &[f64], noise: f64, budget: f64) -> Result<WaterfillSolution> {
    check_noise(noise)?;
    check_budget(budget)?;
    if !gains.iter().any(|&g| g > 0.0) {
        return Err(FtnError::NoPositiveGain);
    }
    let thresholds: Vec<f64> = gains
        .iter()
        .map(|&g| if g > 0.0 { noise / g } else { f64::INFINITY })
        .collect();
    let (level, allocations) = fill(&thresholds, budget);
    Ok(WaterfillSolution {
        mu: noise / level,
        budget_used: allocations.iter().sum(),
        active_set: active_indices(&allocations),
        allocations,
    })
}

/// Maximizes `sum_i log2(1 + lambda_i phi_i / noise)` subject to
/// `sum_i psi_i lambda_i = total_energy`, `lambda_i >= 0`.
///
/// `total_energy` is `N delta T P` for a block of `N` symbols. The optimum
/// is `lambda_i = (delta_t ln2 / (mu psi_i) - noise/phi_i)^+`.
pub fn weighted_waterfill(
    weights: &[f64],
    gains: &[f64],
    noise: f64,
    delta_t: f64,
    total_energy: f64,
) -> Result<WaterfillSolution> {
    check_noise(noise)?;
    check_budget(total_energy)?;
    if weights.len() != gains.len() {
        return Err(FtnError::DimensionMismatch(format!(
            "{} weights for {} gains",
            weights.len(),
            gains.len()
        )));
    }
    if !(delta_t.is_finite() && delta_t > 0.0) {
        return Err(FtnError::InvalidConfig(format!("delta T must be > 0, got {delta_t}")));
    }
    if let Some((index, &value)) = weights.iter().enumerate().find(|(_, &w)| !(w > 0.0 && w.is_finite())) {
        return Err(FtnError::NonPositiveWeight { index, value });
    }
    if !gains.iter().any(|&g| g > 0.0) {
        return Err(FtnError::NoPositiveGain);
    }
    // In weighted coordinates x_i = psi_i lambda_i the problem is a classic fill.
    let thresholds: Vec<f64> = weights
        .iter()
        .zip(gains)
        .map(|(&w, &g)| if g > 0.0 { w * noise / g } else { f64::INFINITY })
        .collect();
    let (level, x) = fill(&thresholds, total_energy);
    let allocations: Vec<f64> = x.iter().zip(weights).map(|(x, w)| x / w).collect();
    Ok(WaterfillSolution {
        mu: delta_t * LN_2 / level,
        budget_used: x.iter().sum(),
        active_set: active_indices(&allocations),
        allocations,
    })
}

/// Joint space-frequency fill over modes `tau_i(f_n)` (`M x L`).
///
/// The constraint `integral sum_i phi_i(f) df = budget` is discretized with
/// the midpoint rule on the same uniform grid the modes were sampled on.
pub fn spectral_waterfill(modes: &Array2<f64>, noise: f64, budget: f64) -> Result<SpectralWaterfill> {
    check_noise(noise)?;
    check_budget(budget)?;
    let m = modes.nrows();
    if m == 0 || modes.ncols() == 0 {
        return Err(FtnError::DimensionMismatch("empty mode table".into()));
    }
    if modes.iter().any(|t| t.is_nan() || *t < 0.0) {
        return Err(FtnError::InvalidConfig("eigenmodes must be >= 0".into()));
    }
    if !modes.iter().any(|&t| t > 0.0) {
        return Err(FtnError::NoPositiveGain);
    }
    let thresholds: Vec<f64> = modes
        .iter()
        .map(|&t| if t > 0.0 { noise / t } else { f64::INFINITY })
        .collect();
    let (level, x) = fill(&thresholds, budget * m as f64);
    let active_count = x.iter().filter(|&&v| v > 0.0).count();
    let allocations = Array2::from_shape_vec(modes.raw_dim(), x).expect("shape matches modes");
    Ok(SpectralWaterfill {
        mu: 1.0 / level,
        budget_used: allocations.sum() / m as f64,
        active_count,
        allocations,
    })
}

/// `sum_i log2(1 + alloc_i gain_i / noise)`.
pub fn rate_bits(allocations: &[f64], gains: &[f64], noise: f64) -> f64 {
    allocations
        .iter()
        .zip(gains)
        .map(|(a, g)| (a * g / noise).ln_1p())
        .sum::<f64>()
        / LN_2
}
