//! Independent checks on the capacity engines.
//!
//! [`brute_force_capacity`] maximizes the block mutual information directly
//! over input covariances, sharing nothing with the engines beyond the
//! pulse shape and the LAPACK wrappers. [`szego_convergence`] measures how
//! fast the block equal-power rate approaches its spectral limit.

use std::f64::consts::LN_2;

use ndarray::Array2;
use serde::Serialize;

use crate::capacity_freq::equal_power_spectral;
use crate::capacity_time::{equal_power_capacity_with, BlockModel, BlockOptions, SystemParams};
use crate::channel::FsChannel;
use crate::error::{FtnError, Result};
use crate::linalg::{self, C64};

/// Largest `N L` the dense oracle accepts.
pub const ORACLE_DIM_CAP: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleOptions {
    pub max_iterations: usize,
    /// Stop once the relative objective gain of an accepted step falls below this.
    pub rel_tol: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            max_iterations: 5000,
            rel_tol: 1e-10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleResult {
    pub bits_per_channel_use: f64,
    pub iterations: usize,
    /// `||Q - proj(Q + grad)||_F / tr Q` at the returned point.
    pub gradient_residual: f64,
    /// `|power(Sigma) - P| / P`.
    pub feasibility_residual: f64,
    /// Objective after each accepted step, starting from the initial point.
    pub trace: Vec<f64>,
}

/// The pieces of the block problem, built from scratch.
struct Problem {
    n: usize,
    l: usize,
    noise: f64,
    energy: f64,
    delta_t: f64,
    /// `G_H`.
    gh: Array2<C64>,
    /// `I_K ⊗ G^{-1}`.
    noise_inv: Array2<C64>,
    /// `I_L ⊗ G` and its square roots.
    a: Array2<f64>,
    a_half: Array2<f64>,
    a_inv_half: Array2<f64>,
    /// `B = (I_K ⊗ G^{-1/2}) G_H (I_L ⊗ G^{-1/2})`.
    b: Array2<C64>,
}

fn toeplitz(n: usize, shift: i64, params: &SystemParams) -> Array2<f64> {
    let p = &params.pulse;
    Array2::from_shape_fn((n, n), |(r, c)| {
        let lag = r as i64 - c as i64 - shift;
        p.time_sample(lag as f64 * p.sample_spacing())
    })
}

fn block_identity(blocks: usize, m: &Array2<f64>) -> Array2<f64> {
    let n = m.nrows();
    let mut out = Array2::zeros((blocks * n, blocks * n));
    for b in 0..blocks {
        out.slice_mut(ndarray::s![b * n..(b + 1) * n, b * n..(b + 1) * n]).assign(m);
    }
    out
}

fn symmetric_power(m: &Array2<f64>, p: f64) -> Result<Array2<f64>> {
    let e = linalg::eigh_real(m)?;
    let mut v = e.vectors.clone();
    for (mut col, &lam) in v.columns_mut().into_iter().zip(e.values.iter()) {
        if lam <= 0.0 {
            return Err(FtnError::IllConditioned {
                min_eigenvalue: lam,
                max_eigenvalue: e.values[0],
                cond_tol: 0.0,
            });
        }
        let s = lam.powf(p);
        col.mapv_inplace(|x| x * s);
    }
    Ok(v.dot(&e.vectors.t()))
}

fn complex(m: &Array2<f64>) -> Array2<C64> {
    m.mapv(|x| C64::new(x, 0.0))
}

impl Problem {
    fn build(ch: &FsChannel, params: &SystemParams, n: usize) -> Result<Self> {
        params.pulse.require_well_conditioned()?;
        let (k, l) = (ch.k(), ch.l());
        if n == 0 {
            return Err(FtnError::InvalidConfig("block length must be >= 1".into()));
        }
        if n * l > ORACLE_DIM_CAP {
            return Err(FtnError::DimensionCap {
                requested: n * l,
                cap: ORACLE_DIM_CAP,
            });
        }
        let g = toeplitz(n, 0, params);
        let g_inv = linalg::solve_real(&g, &Array2::eye(n))?;
        let mut gh = Array2::<C64>::zeros((k * n, l * n));
        for (j, tap) in ch.taps().iter().enumerate() {
            let gj = toeplitz(n, j as i64, params);
            for a in 0..k {
                for b in 0..l {
                    let h = tap[[a, b]];
                    for r in 0..n {
                        for c in 0..n {
                            gh[[a * n + r, b * n + c]] += h * gj[[r, c]];
                        }
                    }
                }
            }
        }
        let noise_inv = complex(&block_identity(k, &g_inv));
        let a = block_identity(l, &g);
        let a_half = symmetric_power(&a, 0.5)?;
        let a_inv_half = symmetric_power(&a, -0.5)?;
        let left = complex(&block_identity(k, &symmetric_power(&g, -0.5)?));
        let b = left.dot(&gh).dot(&complex(&a_inv_half));
        Ok(Self {
            n,
            l,
            noise: params.noise,
            energy: n as f64 * params.symbol_energy(),
            delta_t: params.pulse.sample_spacing(),
            gh,
            noise_inv,
            a,
            a_half,
            a_inv_half,
            b,
        })
    }

    fn sigma_of(&self, q: &Array2<C64>) -> Array2<C64> {
        let s = complex(&self.a_inv_half);
        s.dot(q).dot(&s)
    }

    /// `(1/N) log2 |det(I + sigma^-2 G_H Sigma G_H^H (I_K ⊗ G^{-1}))|`.
    fn objective(&self, q: &Array2<C64>) -> Result<f64> {
        let sigma = self.sigma_of(q);
        let inner = self
            .gh
            .dot(&sigma)
            .dot(&linalg::adjoint(self.gh.view()))
            .dot(&self.noise_inv);
        let dim = inner.nrows();
        let arg = Array2::<C64>::eye(dim) + inner.mapv(|z| z / self.noise);
        Ok(linalg::ln_abs_det(&arg)? / (self.n as f64 * LN_2))
    }

    /// Gradient in `Q`: `sigma^-2 B^H (I + sigma^-2 B Q B^H)^{-1} B / (N ln 2)`.
    fn gradient(&self, q: &Array2<C64>) -> Result<Array2<C64>> {
        let bq = self.b.dot(q).dot(&linalg::adjoint(self.b.view()));
        let dim = bq.nrows();
        let m = Array2::<C64>::eye(dim) + bq.mapv(|z| z / self.noise);
        let e = linalg::eigh(&linalg::hermitian_part(m.view()))?;
        let inv: Vec<f64> = e.values.iter().map(|&v| 1.0 / v).collect();
        let m_inv = linalg::reconstruct(e.vectors.view(), &inv);
        let g = linalg::adjoint(self.b.view()).dot(&m_inv).dot(&self.b);
        let scale = 1.0 / (self.noise * self.n as f64 * LN_2);
        Ok(linalg::hermitian_part(g.view()).mapv(|z| z * scale))
    }

    /// Euclidean projection onto `{Q >= 0, tr Q = energy}`.
    fn project(&self, q: &Array2<C64>) -> Result<Array2<C64>> {
        let e = linalg::eigh(&linalg::hermitian_part(q.view()))?;
        let x = simplex_projection(e.values.as_slice().expect("contiguous"), self.energy);
        Ok(linalg::reconstruct(e.vectors.view(), &x))
    }

    fn power(&self, q: &Array2<C64>) -> f64 {
        let sigma = self.sigma_of(q);
        let a = complex(&self.a);
        let tr: f64 = a.dot(&sigma).diag().iter().map(|z| z.re).sum();
        tr / (self.n as f64 * self.delta_t)
    }

    fn initial_point(&self) -> Array2<C64> {
        // Sigma = c I with c = P delta T / L, i.e. Q = c A
        let c = self.energy / (self.n * self.l) as f64;
        complex(&self.a_half.dot(&self.a_half)).mapv(|z| z * c)
    }
}

/// Projects `v` onto `{x >= 0, sum x = total}`.
fn simplex_projection(v: &[f64], total: f64) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut css = 0.0;
    let mut theta = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        css += uk;
        let t = (css - total) / (k + 1) as f64;
        if uk - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

fn inner(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

/// Projected gradient ascent on the block mutual information over all
/// input covariances meeting the power constraint.
pub fn brute_force_capacity(
    ch: &FsChannel,
    params: &SystemParams,
    n: usize,
    opts: &OracleOptions,
) -> Result<OracleResult> {
    const ARMIJO: f64 = 1e-4;
    let prob = Problem::build(ch, params, n)?;
    let mut q = prob.initial_point();
    let mut f = prob.objective(&q)?;
    let mut trace = vec![f];
    let mut step = prob.energy;
    let mut iterations = 0;
    let mut converged = false;
    let mut stalls = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        let grad = prob.gradient(&q)?;
        let mut accepted = None;
        while step > 1e-16 * prob.energy {
            let cand = prob.project(&(&q + &grad.mapv(|z| z * step)))?;
            let fc = prob.objective(&cand)?;
            let dir = &cand - &q;
            if fc >= f + ARMIJO * inner(&grad, &dir) {
                accepted = Some((cand, fc));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, fc)) = accepted else {
            converged = true;
            break;
        };
        let gain = fc - f;
        q = cand;
        f = fc;
        trace.push(f);
        step *= 2.0;
        if gain <= opts.rel_tol * f.abs().max(f64::MIN_POSITIVE) {
            stalls += 1;
            if stalls >= 3 {
                converged = true;
                break;
            }
        } else {
            stalls = 0;
        }
    }
    if !converged {
        return Err(FtnError::NotConverged { best: f, iterations });
    }
    let grad = prob.gradient(&q)?;
    let moved = prob.project(&(&q + &grad))?;
    let gradient_residual = linalg::frobenius((&q - &moved).view()) / prob.energy;
    let feasibility_residual = (prob.power(&q) - params.power).abs() / params.power;
    Ok(OracleResult {
        bits_per_channel_use: f,
        iterations,
        gradient_residual,
        feasibility_residual,
        trace,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SzegoRow {
    pub n: usize,
    /// Equal-power block rate `(1/N) sum_l log2(1 + c lambda_l(Phi^H Phi) / sigma^2)`.
    pub block: f64,
    /// Its spectral limit `integral sum_j log2(1 + c G_d(f) tau_j(f) / sigma^2) df`.
    pub limit: f64,
    pub error: f64,
}

/// Smallest grid accepted for the spectral side of the Szegő check.
pub const SZEGO_MIN_GRID: usize = 512;

pub fn szego_convergence(
    ch: &FsChannel,
    params: &SystemParams,
    ns: &[usize],
    m: usize,
    opts: &BlockOptions,
) -> Result<Vec<SzegoRow>> {
    if m < SZEGO_MIN_GRID {
        return Err(FtnError::InvalidConfig(format!(
            "Szegő check needs at least {SZEGO_MIN_GRID} grid points, got {m}"
        )));
    }
    if ns.windows(2).any(|w| w[0] >= w[1]) {
        return Err(FtnError::InvalidConfig("block lengths must be strictly ascending".into()));
    }
    let limit = equal_power_spectral(ch, params, m)?;
    ns.iter()
        .map(|&n| {
            let model = BlockModel::build(ch, &params.pulse, n, opts)?;
            let block = equal_power_capacity_with(&model, params)?;
            Ok(SzegoRow {
                n,
                block,
                limit,
                error: (block - limit).abs(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capacity_time::{flat_capacity, fs_capacity_time, FsBasis};
    use crate::channel::{gen_flat_indexed, gen_fs_indexed};
    use crate::pulse::PulseConfig;
    use ndarray::array;

    const T: f64 = 0.01;

    fn params(beta: f64, delta: f64, snr_db: f64) -> SystemParams {
        SystemParams::from_snr_db(PulseConfig::new(T, beta, delta).unwrap(), snr_db).unwrap()
    }

    #[test]
    fn simplex_projection_basics() {
        assert_eq!(simplex_projection(&[1.0, 1.0], 2.0), vec![1.0, 1.0]);
        assert_eq!(simplex_projection(&[5.0, 0.0], 1.0), vec![1.0, 0.0]);
        let x = simplex_projection(&[0.3, -2.0, 0.9], 1.0);
        assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(x.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn scalar_nyquist_case() {
        let p = params(0.0, 1.0, 10.0);
        let ch = FsChannel::new(vec![array![[C64::new(1.0, 0.0)]]]).unwrap();
        let r = brute_force_capacity(&ch, &p, 1, &OracleOptions::default()).unwrap();
        assert!((r.bits_per_channel_use - (1.0 + p.power * T).log2()).abs() < 1e-6);
    }

    #[test]
    fn matches_flat_closed_form() {
        let p = params(0.25, 0.9, 10.0);
        for i in 0..3 {
            let ch = gen_flat_indexed(2, 2, 100, i);
            let closed = flat_capacity(&ch, &p).unwrap().report.bits_per_channel_use;
            let r = brute_force_capacity(&FsChannel::from(&ch), &p, 4, &OracleOptions::default()).unwrap();
            assert!(r.bits_per_channel_use <= closed + 1e-6);
            assert!((r.bits_per_channel_use - closed).abs() < 1e-4, "{} vs {closed}", r.bits_per_channel_use);
            assert!(r.feasibility_residual < 1e-8);
            assert!(r.trace.windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn matches_fs_block_engine() {
        let p = params(0.25, 0.9, 10.0);
        let ch = gen_fs_indexed(2, 2, 2, 200, 0);
        let engine = fs_capacity_time(&ch, &p, 8, FsBasis::Simultaneous, &BlockOptions::default())
            .unwrap()
            .report
            .bits_per_channel_use;
        let r = brute_force_capacity(&ch, &p, 8, &OracleOptions::default()).unwrap();
        assert!((r.bits_per_channel_use - engine).abs() < 1e-4, "{} vs {engine}", r.bits_per_channel_use);
        assert!(r.bits_per_channel_use <= engine + 1e-6);
    }

    #[test]
    fn oracle_respects_caps() {
        let p = params(0.25, 0.9, 10.0);
        let ch = gen_fs_indexed(2, 2, 2, 1, 0);
        assert!(matches!(
            brute_force_capacity(&ch, &p, 17, &OracleOptions::default()),
            Err(FtnError::DimensionCap { .. })
        ));
        let few = OracleOptions {
            max_iterations: 1,
            rel_tol: 0.0,
        };
        assert!(matches!(brute_force_capacity(&ch, &p, 8, &few), Err(FtnError::NotConverged { .. })));
    }

    #[test]
    fn szego_trivial_case_is_exact() {
        let p = params(0.5, 1.0, 10.0);
        let ch = gen_fs_indexed(2, 2, 1, 3, 0);
        let rows = szego_convergence(&ch, &p, &[4, 8, 16], 512, &BlockOptions::default()).unwrap();
        for r in rows {
            assert!(r.error < 1e-12, "{r:?}");
        }
    }

    #[test]
    fn szego_error_shrinks() {
        let p = params(0.25, 0.9, 10.0);
        let ch = gen_fs_indexed(1, 1, 5, 4, 0);
        let rows = szego_convergence(&ch, &p, &[64, 128, 256], 4096, &BlockOptions::default()).unwrap();
        assert!(rows.windows(2).all(|w| w[1].error < w[0].error), "{rows:?}");
        assert!(szego_convergence(&ch, &p, &[64, 32], 4096, &BlockOptions::default()).is_err());
        assert!(szego_convergence(&ch, &p, &[64], 128, &BlockOptions::default()).is_err());
    }
}
