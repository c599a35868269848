//! Raised-cosine pulse family used at the matched-filter output.
//!
//! `g(t)` is the raised cosine (the autocorrelation of a unit-energy root
//! raised cosine), sampled every `delta * T` seconds. Its aliased spectrum
//! at that rate is the folded spectrum `G_d(f_n)`, the symbol of the Gram
//! matrix.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{FtnError, Result};

/// Tolerance on `delta * (1 + beta) >= 1` so that products like 0.8 * 1.25
/// which round just below 1 are still treated as the boundary case.
pub const BOUNDARY_TOL: f64 = 1e-12;

/// Parameters of the raised-cosine pulse and the signaling rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseConfig {
    /// Symbol period `T` in seconds.
    pub t_symbol: f64,
    /// Roll-off factor `beta` in `[0, 1]`.
    pub beta: f64,
    /// Acceleration factor `delta` in `(0, 1]`.
    pub delta: f64,
}

impl PulseConfig {
    pub fn new(t_symbol: f64, beta: f64, delta: f64) -> Result<Self> {
        if !(t_symbol.is_finite() && t_symbol > 0.0) {
            return Err(FtnError::InvalidConfig(format!("symbol period must be > 0, got {t_symbol}")));
        }
        if !(0.0..=1.0).contains(&beta) {
            return Err(FtnError::InvalidConfig(format!("roll-off must lie in [0, 1], got {beta}")));
        }
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(FtnError::InvalidConfig(format!(
                "acceleration factor must lie in (0, 1], got {delta}"
            )));
        }
        Ok(Self { t_symbol, beta, delta })
    }

    /// `delta * (1 + beta)`, the occupied bandwidth in units of the signaling rate.
    pub fn bandwidth_product(&self) -> f64 {
        self.delta * (1.0 + self.beta)
    }

    pub fn well_conditioned(&self) -> bool {
        self.bandwidth_product() >= 1.0 - BOUNDARY_TOL
    }

    /// Fails with `MazoRegion` when `delta * (1 + beta) < 1`.
    pub fn require_well_conditioned(&self) -> Result<()> {
        if self.well_conditioned() {
            Ok(())
        } else {
            Err(FtnError::MazoRegion {
                delta: self.delta,
                beta: self.beta,
                product: self.bandwidth_product(),
            })
        }
    }

    /// Sample spacing `delta * T`.
    pub fn sample_spacing(&self) -> f64 {
        self.delta * self.t_symbol
    }

    /// `G(f)` in seconds.
    pub fn frequency_response(&self, f: f64) -> f64 {
        self.t_symbol * normalized_response(f.abs() * self.t_symbol, self.beta)
    }

    /// `g(t)` with `g(0) = 1`.
    pub fn time_sample(&self, t: f64) -> f64 {
        raised_cosine(t / self.t_symbol, self.beta)
    }

    /// `g[n] = g(n delta T)` for `n = -(n_len-1) ..= n_len-1`.
    pub fn samples(&self, n_len: usize) -> PulseSamples {
        assert!(n_len >= 1, "need at least one sample");
        let positive: Vec<f64> = (0..n_len)
            .map(|n| raised_cosine(n as f64 * self.delta, self.beta))
            .collect();
        PulseSamples { positive }
    }

    /// Folded spectrum `G_d(f_n) = (1/(delta T)) sum_m G((f_n - m)/(delta T))`.
    ///
    /// `G` has compact support so the alias sum is a finite sum.
    pub fn folded_spectrum(&self, f_n: f64) -> f64 {
        let reach = (self.bandwidth_product()).ceil() as i64 + 1;
        let center = f_n.round() as i64;
        let mut acc = 0.0;
        for m in (center - reach)..=(center + reach) {
            let u = ((f_n - m as f64) / self.delta).abs();
            acc += normalized_response(u, self.beta);
        }
        acc / self.delta
    }

    pub fn folded_spectrum_on(&self, grid: &[f64]) -> FoldedSpectrum {
        FoldedSpectrum {
            grid: grid.to_vec(),
            values: grid.iter().map(|&f| self.folded_spectrum(f)).collect(),
            config: *self,
        }
    }
}

/// `G(f)/T` as a function of `u = |f| T`.
fn normalized_response(u: f64, beta: f64) -> f64 {
    let lo = (1.0 - beta) / 2.0;
    let hi = (1.0 + beta) / 2.0;
    if beta == 0.0 && u == lo {
        // brick wall: midpoint value at the jump
        0.5
    } else if u <= lo {
        1.0
    } else if u <= hi {
        0.5 * (1.0 + (PI / beta * (u - lo)).cos())
    } else {
        0.0
    }
}

/// `sin(pi x)` with exact zeros at the integers.
fn sin_pi(x: f64) -> f64 {
    let r = x - 2.0 * (x / 2.0).round();
    if r == 0.0 || r.abs() == 1.0 {
        0.0
    } else {
        (PI * r).sin()
    }
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        sin_pi(x) / (PI * x)
    }
}

/// Raised cosine in units of the symbol period, `x = t / T`.
fn raised_cosine(x: f64, beta: f64) -> f64 {
    if beta == 0.0 {
        return sinc(x);
    }
    let d = 1.0 - (2.0 * beta * x).powi(2);
    if d.abs() < 1e-10 {
        // removable singularity at |x| = 1/(2 beta)
        return PI / 4.0 * sinc(1.0 / (2.0 * beta));
    }
    sinc(x) * (PI * beta * x).cos() / d
}

/// Two-sided pulse samples stored by non-negative lag; `g[-n] = g[n]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PulseSamples {
    positive: Vec<f64>,
}

impl PulseSamples {
    /// Largest lag `N - 1` held.
    pub fn max_lag(&self) -> usize {
        self.positive.len() - 1
    }

    /// `g[n]` for any `|n| <= max_lag`.
    pub fn at(&self, n: i64) -> f64 {
        self.positive[n.unsigned_abs() as usize]
    }

    /// Full two-sided sequence `g[-(N-1)] .. g[N-1]`.
    pub fn two_sided(&self) -> Vec<f64> {
        let n = self.positive.len() as i64;
        (-(n - 1)..n).map(|k| self.at(k)).collect()
    }

    /// Truncated DTFT `sum_n g[n] e^{-j 2 pi f n}` (real, since `g` is even).
    pub fn dtft(&self, f: f64) -> f64 {
        let w = 2.0 * PI * f;
        self.positive[0]
            + 2.0
                * self.positive[1..]
                    .iter()
                    .enumerate()
                    .map(|(k, g)| g * (w * (k + 1) as f64).cos())
                    .sum::<f64>()
    }
}

/// `G_d` sampled on a grid of normalized frequencies.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldedSpectrum {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub config: PulseConfig,
}

impl FoldedSpectrum {
    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const T: f64 = 0.01;

    fn cfg(beta: f64, delta: f64) -> PulseConfig {
        PulseConfig::new(T, beta, delta).unwrap()
    }

    /// g(t) = 2 * int_0^{(1+beta)/2T} G(f) cos(2 pi f t) df by composite Simpson.
    fn inverse_ft(c: &PulseConfig, t: f64) -> f64 {
        let top = (1.0 + c.beta) / (2.0 * c.t_symbol);
        let n = 20_000;
        let h = top / n as f64;
        let f = |x: f64| c.frequency_response(x) * (2.0 * PI * x * t).cos();
        let mut s = f(0.0) + f(top);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
        }
        2.0 * s * h / 3.0
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(PulseConfig::new(0.0, 0.5, 0.8).is_err());
        assert!(PulseConfig::new(T, 1.5, 0.8).is_err());
        assert!(PulseConfig::new(T, 0.5, 0.0).is_err());
        assert!(PulseConfig::new(T, 0.5, 1.2).is_err());
    }

    #[test]
    fn well_conditioned_flag_tracks_product() {
        assert!(cfg(0.25, 0.8).well_conditioned());
        assert!(cfg(0.5, 0.75).well_conditioned());
        assert!(!cfg(0.3, 0.7).well_conditioned());
        assert!(matches!(
            cfg(0.3, 0.7).require_well_conditioned(),
            Err(FtnError::MazoRegion { .. })
        ));
    }

    #[test]
    fn frequency_response_shape() {
        let c = cfg(0.5, 0.8);
        assert_eq!(c.frequency_response(0.0), T);
        assert!(c.frequency_response(1.5 / (2.0 * T)).abs() < 1e-18);
        let brick = cfg(0.0, 1.0);
        assert_eq!(brick.frequency_response(0.4 / T), T);
        assert_eq!(brick.frequency_response(0.6 / T), 0.0);
        // continuity at the inner band edge
        let edge = 0.25 / T;
        assert!((c.frequency_response(edge * (1.0 + 1e-9)) - T).abs() < 1e-9 * T);
    }

    #[test]
    fn time_sample_nyquist_zeros_and_peak() {
        let c = cfg(0.35, 1.0);
        assert_eq!(c.time_sample(0.0), 1.0);
        for k in 1..20 {
            assert!(c.time_sample(k as f64 * T).abs() < 1e-15);
            assert!(c.time_sample(-(k as f64) * T).abs() < 1e-15);
        }
    }

    #[test]
    fn time_sample_matches_numeric_inverse_transform() {
        let c = cfg(0.5, 0.8);
        // removable singularity at t = T/(2 beta)
        let ts = T / (2.0 * c.beta);
        let numeric = inverse_ft(&c, ts);
        assert!((c.time_sample(ts) - numeric).abs() < 1e-9, "{} vs {numeric}", c.time_sample(ts));
        for &t in &[0.3 * T, 0.8 * T, 1.7 * T, 3.2 * T] {
            assert!((c.time_sample(t) - inverse_ft(&c, t)).abs() < 1e-9);
        }
    }

    #[test]
    fn samples_at_nyquist_rate_are_a_delta() {
        let s = cfg(0.7, 1.0).samples(16);
        assert_eq!(s.at(0), 1.0);
        for n in 1..16 {
            assert_eq!(s.at(n), 0.0);
        }
    }

    #[test]
    fn samples_follow_time_sample() {
        let c = cfg(0.5, 0.8);
        let s = c.samples(4);
        assert_eq!(s.at(1), c.time_sample(0.8 * T));
        assert_eq!(s.at(-1), s.at(1));
        assert_eq!(s.two_sided().len(), 7);
    }

    #[test]
    fn folded_spectrum_is_flat_at_nyquist_rate() {
        for &beta in &[0.0, 0.25, 0.5, 1.0] {
            let c = cfg(beta, 1.0);
            for &f in &[-0.5, -0.3, 0.0, 0.17, 0.5] {
                assert!((c.folded_spectrum(f) - 1.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn folded_spectrum_vanishes_at_boundary_band_edge() {
        let c = cfg(0.25, 0.8);
        assert!(c.folded_spectrum(0.5).abs() < 1e-12);
        assert!(c.folded_spectrum(-0.5).abs() < 1e-12);
    }

    #[test]
    fn folded_spectrum_matches_truncated_dtft() {
        let c = cfg(0.25, 0.9);
        let s = c.samples(4096);
        let dc = c.folded_spectrum(0.0);
        assert!(dc > 1.0);
        // alias-sum value at DC is 1/delta
        assert!((dc - 1.0 / 0.9).abs() < 1e-14);
        for &f in &[0.0, 0.1, 0.3, 0.45] {
            assert!((s.dtft(f) - c.folded_spectrum(f)).abs() < 1e-6);
        }
    }

    #[test]
    fn truncated_dtft_error_shrinks_with_length() {
        let c = cfg(0.5, 0.8);
        let err = |n: usize| {
            let s = c.samples(n);
            (0..=64)
                .map(|i| {
                    let f = -0.5 + i as f64 / 64.0;
                    (s.dtft(f) - c.folded_spectrum(f)).abs()
                })
                .fold(0.0, f64::max)
        };
        let (e1, e2, e3) = (err(128), err(512), err(4096));
        assert!(e1 > e2 && e2 > e3, "{e1} {e2} {e3}");
        assert!(e3 < 1e-6);
    }

    #[test]
    fn folded_spectrum_strictly_positive_above_boundary() {
        let c = cfg(0.5, 0.75);
        let min = (0..4096)
            .map(|i| c.folded_spectrum(-0.5 + i as f64 / 4095.0))
            .fold(f64::INFINITY, f64::min);
        assert!(min > 0.0);
    }

    proptest! {
        #[test]
        fn folded_spectrum_even_and_periodic(
            beta in 0.0f64..=1.0,
            delta in 0.3f64..=1.0,
            f in -0.5f64..=0.5,
        ) {
            let c = cfg(beta, delta);
            let v = c.folded_spectrum(f);
            prop_assert!(v >= 0.0);
            prop_assert!((v - c.folded_spectrum(-f)).abs() < 1e-12);
            prop_assert!((v - c.folded_spectrum(f + 1.0)).abs() < 1e-12);
            prop_assert!((v - c.folded_spectrum(f - 3.0)).abs() < 1e-12);
        }

        #[test]
        fn samples_bounded_by_peak(beta in 0.0f64..=1.0, delta in 0.3f64..=1.0) {
            let s = cfg(beta, delta).samples(200);
            prop_assert_eq!(s.at(0), 1.0);
            for n in 0..200 {
                prop_assert!(s.at(n).abs() <= 1.0 + 1e-12);
            }
        }
    }
}
