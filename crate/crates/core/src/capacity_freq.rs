//! Frequency-domain capacity.
//!
//! As `N` grows the block problem decouples over frequency: the channel
//! contributes eigenmodes `tau_i(f)` of `Z(f) = H(-f)^H H(-f)` and a single
//! water level is shared by every eigenchannel at every frequency. The
//! pulse only reappears when converting the allocated eigenspectrum back to
//! an input spectrum, which is divided by the folded spectrum `G_d(f)`.

use std::f64::consts::LN_2;
use std::io::Write;

use ndarray::Array2;

use crate::capacity_time::{equal_power_scale, SystemParams};
use crate::channel::{ChannelSpectrum, FlatChannel, FsChannel};
use crate::error::{FtnError, Result};
use crate::grid::FrequencyGrid;
use crate::linalg::{self, C64};
use crate::waterfill;

/// Smallest grid accepted by the spectral engine.
pub const MIN_GRID: usize = 64;
pub const DEFAULT_GRID: usize = 1024;
/// Points where `G_d < DIVERGENCE_RTOL * max G_d` are flagged in the input spectrum.
pub const DIVERGENCE_RTOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SpectralOptions {
    /// When set, recompute on a grid of `2M` points and fail with
    /// `GridTooCoarse` if the capacity moves by more than this many bits.
    pub refine_threshold: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct SpectralSolution {
    pub params: SystemParams,
    pub grid: FrequencyGrid,
    pub spectrum: ChannelSpectrum,
    /// `tau_i(f_n)`, `M x L`, sorted descending per point.
    pub modes: Array2<f64>,
    /// Allocated eigenspectrum `phi_i(f_n)`, `M x L`.
    pub eigenspectrum: Array2<f64>,
    pub folded: Vec<f64>,
    pub mu: f64,
    pub bits_per_channel_use: f64,
    pub bits_per_s_per_hz: f64,
}

impl SpectralSolution {
    pub fn l(&self) -> usize {
        self.modes.ncols()
    }

    /// Midpoint quadrature of `(1/(delta T)) sum_i phi_i(f)`.
    pub fn power(&self) -> f64 {
        self.grid.integrate(self.eigenspectrum.iter().copied()) / self.params.pulse.sample_spacing()
    }
}

fn spectral_rate(modes: &Array2<f64>, alloc: &Array2<f64>, noise: f64, grid: &FrequencyGrid) -> f64 {
    let total: f64 = modes.iter().zip(alloc.iter()).map(|(t, p)| (t * p / noise).ln_1p()).sum();
    total * grid.weight() / LN_2
}

fn solve_on_grid(ch: &FsChannel, params: &SystemParams, m: usize) -> Result<SpectralSolution> {
    let grid = FrequencyGrid::midpoint(m)?;
    let spectrum = ch.spectrum_matrix(&grid)?;
    let l = ch.l();
    let modes = Array2::from_shape_fn((m, l), |(n, i)| spectrum.points[n].modes[i]);
    let folded = grid.points().iter().map(|&f| params.pulse.folded_spectrum(f)).collect();
    let (eigenspectrum, mu) = match waterfill::spectral_waterfill(&modes, params.noise, params.symbol_energy()) {
        Ok(wf) => (wf.allocations, wf.mu),
        Err(FtnError::NoPositiveGain) => (Array2::zeros((m, l)), 0.0),
        Err(e) => return Err(e),
    };
    let bits = spectral_rate(&modes, &eigenspectrum, params.noise, &grid);
    Ok(SpectralSolution {
        params: *params,
        grid,
        spectrum,
        modes,
        eigenspectrum,
        folded,
        mu,
        bits_per_channel_use: bits,
        bits_per_s_per_hz: bits / params.pulse.bandwidth_product(),
    })
}

/// Joint space-frequency waterfilling capacity on an `M`-point midpoint grid.
pub fn fs_capacity_spectral(
    ch: &FsChannel,
    params: &SystemParams,
    m: usize,
    opts: &SpectralOptions,
) -> Result<SpectralSolution> {
    params.pulse.require_well_conditioned()?;
    if m < MIN_GRID {
        return Err(FtnError::InvalidConfig(format!(
            "frequency grid needs at least {MIN_GRID} points, got {m}"
        )));
    }
    let sol = solve_on_grid(ch, params, m)?;
    if let Some(threshold) = opts.refine_threshold {
        let fine = solve_on_grid(ch, params, 2 * m)?;
        let change = (fine.bits_per_channel_use - sol.bits_per_channel_use).abs();
        if change > threshold {
            return Err(FtnError::GridTooCoarse {
                points: m,
                change,
                threshold,
            });
        }
    }
    Ok(sol)
}

pub fn flat_capacity_spectral(ch: &FlatChannel, params: &SystemParams, m: usize) -> Result<SpectralSolution> {
    fs_capacity_spectral(&FsChannel::from(ch), params, m, &SpectralOptions::default())
}

/// Equal-power input `Sigma_A = c I` in the large-`N` limit:
/// `integral sum_i log2(1 + c G_d(f) tau_i(f) / sigma^2) df`.
pub fn equal_power_spectral(ch: &FsChannel, params: &SystemParams, m: usize) -> Result<f64> {
    params.pulse.require_well_conditioned()?;
    let grid = FrequencyGrid::midpoint(m)?;
    let spectrum = ch.spectrum_matrix(&grid)?;
    let c = equal_power_scale(params, ch.l());
    let total: f64 = spectrum
        .points
        .iter()
        .map(|p| {
            let gd = params.pulse.folded_spectrum(p.f);
            p.modes.iter().map(|&t| (c * gd * t / params.noise).ln_1p()).sum::<f64>()
        })
        .sum();
    Ok(total * grid.weight() / LN_2)
}

#[derive(Clone, Debug)]
pub struct InputSpectrum {
    /// `phi_i(f_n) / G_d(f_n)`, `M x L`.
    pub values: Array2<f64>,
    /// Grid points where `G_d` is below `DIVERGENCE_RTOL` times its maximum.
    pub divergent: Vec<bool>,
}

fn check_folded(sol: &SpectralSolution) -> Result<(f64, Vec<bool>)> {
    if let Some((n, _)) = sol.folded.iter().enumerate().find(|(_, &g)| !(g > 0.0)) {
        return Err(FtnError::SpectrumZero {
            frequency: sol.grid.points()[n],
        });
    }
    let max = sol.folded.iter().copied().fold(0.0, f64::max);
    let divergent = sol.folded.iter().map(|&g| g < DIVERGENCE_RTOL * max).collect();
    Ok((max, divergent))
}

/// Input eigenspectrum `phi_i(f) / G_d(f)`.
pub fn input_eigenspectrum(sol: &SpectralSolution) -> Result<InputSpectrum> {
    let (_, divergent) = check_folded(sol)?;
    let mut values = sol.eigenspectrum.clone();
    for (mut row, &g) in values.rows_mut().into_iter().zip(&sol.folded) {
        row.mapv_inplace(|v| v / g);
    }
    Ok(InputSpectrum { values, divergent })
}

/// Power generating matrix `S(f) = V(f) diag(phi(f)) V(f)^H` per grid point.
pub fn power_generating_matrix(sol: &SpectralSolution) -> Vec<Array2<C64>> {
    sol.spectrum
        .points
        .iter()
        .zip(sol.eigenspectrum.rows())
        .map(|(p, phi)| linalg::reconstruct(p.basis.view(), phi.as_slice().expect("row-major")))
        .collect()
}

/// Input generating matrix `S(f) / G_d(f)` per grid point.
pub fn input_generating_matrix(sol: &SpectralSolution) -> Result<Vec<Array2<C64>>> {
    check_folded(sol)?;
    Ok(power_generating_matrix(sol)
        .into_iter()
        .zip(&sol.folded)
        .map(|(s, &g)| s.mapv(|z| z / g))
        .collect())
}

/// `integral log2 det(I + S(f) Z(f) / sigma^2) df`, the objective before
/// diagonalization.
pub fn nondiagonal_capacity(sol: &SpectralSolution) -> Result<f64> {
    let l = sol.l();
    let mut total = 0.0;
    for (s, p) in power_generating_matrix(sol).iter().zip(&sol.spectrum.points) {
        let arg = Array2::<C64>::eye(l) + s.dot(&p.z).mapv(|z| z / sol.params.noise);
        total += linalg::ln_abs_det(&arg)?;
    }
    Ok(sol.grid.integrate([total]) / LN_2)
}

/// Writes `f_n, tau_1..tau_L, phi_1..phi_L, input_phi_1..input_phi_L, G_d`.
///
/// Eigenmodes are sorted per frequency, so curves may swap branches where
/// two modes cross.
pub fn write_spectrum_csv<W: Write>(sol: &SpectralSolution, out: W) -> Result<()> {
    let input = input_eigenspectrum(sol)?;
    let l = sol.l();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["f_n".to_string()];
    header.extend((1..=l).map(|i| format!("tau_{i}")));
    header.extend((1..=l).map(|i| format!("phi_{i}")));
    header.extend((1..=l).map(|i| format!("input_phi_{i}")));
    header.push("G_d".into());
    w.write_record(&header)?;
    for (n, &f) in sol.grid.points().iter().enumerate() {
        let mut rec = vec![f.to_string()];
        rec.extend(sol.modes.row(n).iter().map(f64::to_string));
        rec.extend(sol.eigenspectrum.row(n).iter().map(f64::to_string));
        rec.extend(input.values.row(n).iter().map(f64::to_string));
        rec.push(sol.folded[n].to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capacity_time::{flat_capacity, fs_capacity_time, BlockOptions, FsBasis};
    use crate::channel::{gen_flat, gen_fs, gen_fs_indexed};
    use crate::pulse::PulseConfig;
    use ndarray::array;

    const T: f64 = 0.01;

    fn params(beta: f64, delta: f64, snr_db: f64) -> SystemParams {
        SystemParams::from_snr_db(PulseConfig::new(T, beta, delta).unwrap(), snr_db).unwrap()
    }

    #[test]
    fn flat_channel_matches_closed_form() {
        let p = params(0.25, 0.9, 10.0);
        for seed in 0..5 {
            let ch = gen_flat(2, 2, seed);
            let closed = flat_capacity(&ch, &p).unwrap();
            let spec = flat_capacity_spectral(&ch, &p, 256).unwrap();
            assert!((spec.bits_per_channel_use - closed.report.bits_per_channel_use).abs() < 1e-9);
            for row in spec.eigenspectrum.rows() {
                for (a, b) in row.iter().zip(&closed.report.allocations) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_channel_has_zero_capacity() {
        let ch = FsChannel::new(vec![Array2::zeros((2, 2)); 3]).unwrap();
        let sol = fs_capacity_spectral(&ch, &params(0.5, 0.8, 10.0), 64, &SpectralOptions::default()).unwrap();
        assert_eq!(sol.bits_per_channel_use, 0.0);
    }

    #[test]
    fn budget_and_common_water_level() {
        let p = params(0.5, 0.8, 10.0);
        let ch = gen_fs(2, 2, 5, 12);
        let sol = fs_capacity_spectral(&ch, &p, 512, &SpectralOptions::default()).unwrap();
        assert!((sol.power() - p.power).abs() < 1e-9 * p.power);
        for (&phi, &tau) in sol.eigenspectrum.iter().zip(sol.modes.iter()) {
            assert!(phi >= 0.0);
            if phi > 0.0 {
                assert!((phi + p.noise / tau - 1.0 / sol.mu).abs() < 1e-9 / sol.mu);
            }
        }
    }

    #[test]
    fn diagonal_and_nondiagonal_objectives_agree() {
        let p = params(0.5, 0.8, 15.0);
        let ch = gen_fs(3, 2, 5, 4);
        let sol = fs_capacity_spectral(&ch, &p, 256, &SpectralOptions::default()).unwrap();
        let nd = nondiagonal_capacity(&sol).unwrap();
        assert!((nd - sol.bits_per_channel_use).abs() < 1e-9);
    }

    #[test]
    fn grid_refinement_converges() {
        let p = params(0.5, 0.8, 10.0);
        let ch = gen_fs(2, 2, 5, 8);
        let c = |m| fs_capacity_spectral(&ch, &p, m, &SpectralOptions::default()).unwrap().bits_per_channel_use;
        assert!((c(512) - c(1024)).abs() < 1e-6);
        let strict = SpectralOptions {
            refine_threshold: Some(1e-18),
        };
        let r = fs_capacity_spectral(&gen_fs(2, 2, 20, 8), &p, 64, &strict);
        assert!(matches!(r, Err(FtnError::GridTooCoarse { .. })));
        assert!(fs_capacity_spectral(&ch, &p, 32, &SpectralOptions::default()).is_err());
    }

    #[test]
    fn spectral_tracks_block_engine() {
        let p = params(0.5, 0.8, 10.0);
        let ch = gen_fs_indexed(2, 2, 3, 40, 0);
        let spec = fs_capacity_spectral(&ch, &p, 1024, &SpectralOptions::default()).unwrap();
        let time = fs_capacity_time(&ch, &p, 256, FsBasis::Simultaneous, &BlockOptions::default()).unwrap();
        let rel = (time.report.bits_per_channel_use - spec.bits_per_channel_use).abs() / spec.bits_per_channel_use;
        assert!(rel < 0.02, "{rel}");
    }

    #[test]
    fn equal_power_below_optimal() {
        let p = params(0.5, 0.8, 10.0);
        for seed in 0..5 {
            let ch = gen_fs(2, 2, 5, seed);
            let opt = fs_capacity_spectral(&ch, &p, 256, &SpectralOptions::default()).unwrap();
            let eq = equal_power_spectral(&ch, &p, 256).unwrap();
            assert!(eq < opt.bits_per_channel_use);
        }
    }

    #[test]
    fn nyquist_input_spectrum_equals_eigenspectrum() {
        let p = params(0.5, 1.0, 10.0);
        let sol = fs_capacity_spectral(&gen_fs(2, 2, 4, 1), &p, 128, &SpectralOptions::default()).unwrap();
        let input = input_eigenspectrum(&sol).unwrap();
        for (a, b) in input.values.iter().zip(sol.eigenspectrum.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(input.divergent.iter().all(|&d| !d));
        let s = power_generating_matrix(&sol);
        let sa = input_generating_matrix(&sol).unwrap();
        for (x, y) in s.iter().zip(&sa) {
            assert!(linalg::frobenius((x - y).view()) < 1e-12);
        }
    }

    #[test]
    fn flat_input_spectrum_is_allocation_over_folded() {
        let p = params(0.25, 0.9, 10.0);
        let ch = gen_flat(2, 2, 3);
        let closed = flat_capacity(&ch, &p).unwrap();
        let sol = flat_capacity_spectral(&ch, &p, 128).unwrap();
        let input = input_eigenspectrum(&sol).unwrap();
        for (n, row) in input.values.rows().into_iter().enumerate() {
            for (v, a) in row.iter().zip(&closed.report.allocations) {
                assert!((v - a / sol.folded[n]).abs() < 1e-12 * a.max(1.0) / sol.folded[n]);
            }
        }
        // the input spectrum is largest where the folded spectrum dips
        let (n_min, _) = sol.folded.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        let (n_max, _) = sol.folded.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        assert!(input.values[[n_min, 0]] > input.values[[n_max, 0]]);
        let s = power_generating_matrix(&sol);
        for m in &s {
            assert!(linalg::frobenius((m - &closed.covariance.kron_left).view()) < 1e-12);
        }
    }

    #[test]
    fn generating_matrix_traces() {
        let p = params(0.5, 0.8, 5.0);
        let sol = fs_capacity_spectral(&gen_fs(2, 2, 5, 6), &p, 128, &SpectralOptions::default()).unwrap();
        let s = power_generating_matrix(&sol);
        let mut integral = 0.0;
        for (m, row) in s.iter().zip(sol.eigenspectrum.rows()) {
            let tr: f64 = (0..2).map(|i| m[[i, i]].re).sum();
            assert!((tr - row.sum()).abs() < 1e-12);
            let herm = linalg::frobenius((m - &linalg::adjoint(m.view())).view());
            assert!(herm < 1e-14);
            integral += tr;
        }
        integral *= sol.grid.weight();
        assert!((integral - p.symbol_energy()).abs() < 1e-12);
        let siso = fs_capacity_spectral(&gen_fs(1, 1, 3, 6), &p, 64, &SpectralOptions::default()).unwrap();
        for (m, phi) in power_generating_matrix(&siso).iter().zip(siso.eigenspectrum.iter()) {
            assert!((m[[0, 0]].re - phi).abs() < 1e-15);
        }
    }

    #[test]
    fn boundary_case_runs_and_flags_band_edges() {
        let p = params(0.25, 0.8, 10.0);
        let sol = fs_capacity_spectral(&gen_fs(2, 2, 3, 2), &p, 1024, &SpectralOptions::default()).unwrap();
        let input = input_eigenspectrum(&sol).unwrap();
        assert!(input.values.iter().all(|v| v.is_finite()));
        assert!(!input.divergent[512]);
    }

    #[test]
    fn spectrum_csv_layout() {
        let p = params(0.25, 0.9, 10.0);
        let ch = FsChannel::new(vec![array![[C64::new(1.0, 0.0), C64::new(0.5, 0.0)]]]).unwrap();
        let sol = fs_capacity_spectral(&ch, &p, 64, &SpectralOptions::default()).unwrap();
        let mut buf = Vec::new();
        write_spectrum_csv(&sol, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "f_n,tau_1,tau_2,phi_1,phi_2,input_phi_1,input_phi_2,G_d");
        assert_eq!(lines.count(), 64);
    }
}
