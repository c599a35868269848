use serde::{Deserialize, Serialize};

use crate::error::{FtnError, Result};

/// Uniform midpoint grid over one period of normalized frequency.
///
/// Points are `f_n = -1/2 + (n + 1/2)/M`, so the endpoints `±1/2` are never
/// sampled and every point carries quadrature weight `1/M`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    points: Vec<f64>,
}

impl FrequencyGrid {
    pub fn midpoint(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(FtnError::InvalidConfig("frequency grid needs at least one point".into()));
        }
        let step = 1.0 / m as f64;
        let points = (0..m).map(|n| -0.5 + (n as f64 + 0.5) * step).collect();
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Midpoint-rule weight shared by every point.
    pub fn weight(&self) -> f64 {
        1.0 / self.points.len() as f64
    }

    /// Midpoint-rule integral of `values` sampled on this grid.
    pub fn integrate(&self, values: impl IntoIterator<Item = f64>) -> f64 {
        values.into_iter().sum::<f64>() * self.weight()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midpoint_grid_excludes_endpoints_and_is_symmetric() {
        let g = FrequencyGrid::midpoint(8).unwrap();
        assert_eq!(g.len(), 8);
        assert!((g.points()[0] + 0.4375).abs() < 1e-15);
        for (a, b) in g.points().iter().zip(g.points().iter().rev()) {
            assert!((a + b).abs() < 1e-15);
        }
        assert!(g.points().iter().all(|f| f.abs() < 0.5));
    }

    #[test]
    fn integrates_cosine_to_zero() {
        let g = FrequencyGrid::midpoint(64).unwrap();
        let v = g.integrate(g.points().iter().map(|f| (2.0 * std::f64::consts::PI * f).cos()));
        assert!(v.abs() < 1e-15);
        assert!((g.integrate(g.points().iter().map(|_| 1.0)) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn empty_grid_rejected() {
        assert!(FrequencyGrid::midpoint(0).is_err());
    }
}
