//! Block-matrix (time-domain) capacity engines.
//!
//! Over a block of `N` symbols per antenna the received samples are
//! `y = G_H a + w`, with `G_H = sum_j H^j ⊗ G^j` (rows `k N + n`, columns
//! `l N + m`) and noise covariance `sigma^2 (I_K ⊗ G)`. Whitening gives
//! `Phi = (I_K ⊗ G^{-1/2}) G_H`, and the transmit power of an input
//! covariance `Sigma_A` is `tr((I_L ⊗ G) Sigma_A) / (N delta T)`.

use std::f64::consts::LN_2;

use ndarray::{Array1, Array2};
use serde::Serialize;

use crate::channel::{self, ChannelGramian, FlatChannel, FsChannel};
use crate::error::{FtnError, Result};
use crate::gram::{GramMatrix, GramSpectrum, ShiftedGram, DEFAULT_COND_CAP};
use crate::linalg::{self, C64};
use crate::pulse::PulseConfig;
use crate::waterfill::{self, WaterfillSolution};

/// Default cap on `N` for the explicit flat block-form evaluator.
pub const DEFAULT_BLOCKFORM_CAP: usize = 64;
/// Default cap on `N * max(K, L)` for dense frequency-selective algebra.
pub const DEFAULT_DIM_CAP: usize = 4096;

/// Pulse, transmit power `P` and noise variance `sigma^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SystemParams {
    pub pulse: PulseConfig,
    pub power: f64,
    pub noise: f64,
}

impl SystemParams {
    pub fn new(pulse: PulseConfig, power: f64, noise: f64) -> Result<Self> {
        if !(power.is_finite() && power > 0.0) {
            return Err(FtnError::InvalidConfig(format!("power must be > 0, got {power}")));
        }
        if !(noise.is_finite() && noise > 0.0) {
            return Err(FtnError::InvalidConfig(format!("noise variance must be > 0, got {noise}")));
        }
        Ok(Self { pulse, power, noise })
    }

    /// Unit noise variance and `P = 10^(snr_db/10)`.
    pub fn from_snr_db(pulse: PulseConfig, snr_db: f64) -> Result<Self> {
        Self::new(pulse, 10f64.powf(snr_db / 10.0), 1.0)
    }

    pub fn snr(&self) -> f64 {
        self.power / self.noise
    }

    pub fn snr_db(&self) -> f64 {
        10.0 * self.snr().log10()
    }

    /// Energy per transmitted symbol, `P delta T`.
    pub fn symbol_energy(&self) -> f64 {
        self.power * self.pulse.sample_spacing()
    }
}

/// Caps and conditioning guard for the dense block engines.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockOptions {
    pub cond_cap: f64,
    pub dim_cap: usize,
}

impl Default for BlockOptions {
    fn default() -> Self {
        Self {
            cond_cap: DEFAULT_COND_CAP,
            dim_cap: DEFAULT_DIM_CAP,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportMetadata {
    pub snr_db: f64,
    pub power: f64,
    pub noise: f64,
    pub delta: f64,
    pub beta: f64,
    pub t_symbol: f64,
    /// Per-symbol SNR `P delta T / sigma^2`.
    pub symbol_snr: f64,
    pub n: Option<usize>,
    pub k: usize,
    pub l: usize,
    pub j: usize,
    pub seed: Option<u64>,
}

impl ReportMetadata {
    fn new(params: &SystemParams, n: Option<usize>, k: usize, l: usize, j: usize) -> Self {
        Self {
            snr_db: params.snr_db(),
            power: params.power,
            noise: params.noise,
            delta: params.pulse.delta,
            beta: params.pulse.beta,
            t_symbol: params.pulse.t_symbol,
            symbol_snr: params.symbol_energy() / params.noise,
            n,
            k,
            l,
            j,
            seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CapacityReport {
    pub bits_per_channel_use: f64,
    /// `C / (delta (1 + beta))`.
    pub bits_per_s_per_hz: f64,
    pub allocations: Vec<f64>,
    pub water_level: f64,
    pub metadata: ReportMetadata,
}

impl CapacityReport {
    fn new(bits: f64, allocations: Vec<f64>, water_level: f64, metadata: ReportMetadata) -> Self {
        let bits = bits.max(0.0);
        Self {
            bits_per_channel_use: bits,
            bits_per_s_per_hz: bits / (metadata.delta * (1.0 + metadata.beta)),
            allocations,
            water_level,
            metadata,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.metadata.seed = Some(seed);
        self
    }
}

/// Capacity-achieving input covariance for flat fading,
/// `(V_Z diag(alpha) V_Z^H) ⊗ G^{-1}`.
#[derive(Clone, Debug)]
pub struct OptimalCovariance {
    pub kron_left: Array2<C64>,
    pub pulse: PulseConfig,
}

impl OptimalCovariance {
    /// The `L N x L N` matrix for block length `n`.
    pub fn assemble(&self, n: usize, cond_cap: f64) -> Result<Array2<C64>> {
        let g_inv = GramMatrix::build(&self.pulse, n).decompose()?.inverse(cond_cap)?;
        Ok(linalg::kron(self.kron_left.view(), linalg::complexify(&g_inv).view()))
    }
}

#[derive(Clone, Debug)]
pub struct FlatSolution {
    pub report: CapacityReport,
    pub covariance: OptimalCovariance,
    pub gramian: ChannelGramian,
    pub waterfill: WaterfillSolution,
}

/// Closed-form flat MIMO FTN capacity.
///
/// Waterfills the channel eigenmodes with per-symbol energy `P delta T`;
/// the pulse enters only through that budget and the bandwidth.
pub fn flat_capacity(ch: &FlatChannel, params: &SystemParams) -> Result<FlatSolution> {
    params.pulse.require_well_conditioned()?;
    let gramian = channel::channel_gramian(ch)?;
    let tau = gramian.tau.as_slice().expect("contiguous");
    let wf = match waterfill::classic_waterfill(tau, params.noise, params.symbol_energy()) {
        Ok(wf) => wf,
        Err(FtnError::NoPositiveGain) => {
            let metadata = ReportMetadata::new(params, None, ch.k(), ch.l(), 1);
            let l = ch.l();
            return Ok(FlatSolution {
                report: CapacityReport::new(0.0, vec![0.0; l], 0.0, metadata),
                covariance: OptimalCovariance {
                    kron_left: Array2::zeros((l, l)),
                    pulse: params.pulse,
                },
                waterfill: WaterfillSolution {
                    mu: 0.0,
                    allocations: vec![0.0; l],
                    budget_used: 0.0,
                    active_set: Vec::new(),
                },
                gramian,
            });
        }
        Err(e) => return Err(e),
    };
    let bits = waterfill::rate_bits(&wf.allocations, tau, params.noise);
    let kron_left = linalg::reconstruct(gramian.v.view(), &wf.allocations);
    let metadata = ReportMetadata::new(params, None, ch.k(), ch.l(), 1);
    Ok(FlatSolution {
        report: CapacityReport::new(bits, wf.allocations.clone(), wf.mu, metadata),
        covariance: OptimalCovariance {
            kron_left,
            pulse: params.pulse,
        },
        gramian,
        waterfill: wf,
    })
}

/// `(1/N) log2 det(I + sigma^-2 K W)` with `W = Z ⊗ I_N` and
/// `K = (I_L ⊗ G) Sigma_A` built from the optimal covariance.
pub fn flat_capacity_blockform(
    ch: &FlatChannel,
    params: &SystemParams,
    n: usize,
    n_cap: usize,
    cond_cap: f64,
) -> Result<f64> {
    if n == 0 {
        return Err(FtnError::InvalidConfig("block length must be >= 1".into()));
    }
    if n > n_cap {
        return Err(FtnError::DimensionCap { requested: n, cap: n_cap });
    }
    let sol = flat_capacity(ch, params)?;
    let gram = GramMatrix::build(&params.pulse, n);
    let sigma = sol.covariance.assemble(n, cond_cap)?;
    let k_mat = linalg::block_diag_left(gram.matrix().view(), sigma.view());
    let eye_n: Array2<C64> = Array2::eye(n);
    let w = linalg::kron(sol.gramian.z.view(), eye_n.view());
    let dim = ch.l() * n;
    let arg = Array2::<C64>::eye(dim) + k_mat.dot(&w).mapv(|z| z / params.noise);
    Ok(linalg::ln_abs_det(&arg)? / (n as f64 * LN_2))
}

/// Dense block model of one channel at block length `N`.
#[derive(Clone, Debug)]
pub struct BlockModel {
    n: usize,
    k: usize,
    l: usize,
    j: usize,
    pulse: PulseConfig,
    gram: GramMatrix,
    gram_spectrum: GramSpectrum,
    gram_inv_sqrt: Array2<f64>,
    channel_matrix: Array2<C64>,
    whitened: Array2<C64>,
}

impl BlockModel {
    pub fn build(ch: &FsChannel, pulse: &PulseConfig, n: usize, opts: &BlockOptions) -> Result<Self> {
        pulse.require_well_conditioned()?;
        let (k, l, j) = (ch.k(), ch.l(), ch.j());
        if n < j {
            return Err(FtnError::InvalidConfig(format!(
                "block length N={n} must be at least the tap count J={j}"
            )));
        }
        let requested = n * k.max(l);
        if requested > opts.dim_cap {
            return Err(FtnError::DimensionCap {
                requested,
                cap: opts.dim_cap,
            });
        }
        let gram = GramMatrix::build(pulse, n);
        let gram_spectrum = gram.decompose()?;
        let gram_inv_sqrt = gram_spectrum.inv_sqrt(opts.cond_cap)?;
        let channel_matrix = block_channel_matrix(ch, pulse, n);
        let whitened = linalg::block_diag_left(gram_inv_sqrt.view(), channel_matrix.view());
        Ok(Self {
            n,
            k,
            l,
            j,
            pulse: *pulse,
            gram,
            gram_spectrum,
            gram_inv_sqrt,
            channel_matrix,
            whitened,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn gram(&self) -> &GramMatrix {
        &self.gram
    }

    pub fn gram_spectrum(&self) -> &GramSpectrum {
        &self.gram_spectrum
    }

    /// `G_H`, `K N x L N`.
    pub fn channel_matrix(&self) -> &Array2<C64> {
        &self.channel_matrix
    }

    /// `Phi = (I_K ⊗ G^{-1/2}) G_H`.
    pub fn whitened(&self) -> &Array2<C64> {
        &self.whitened
    }

    /// `Phi^H Phi`.
    pub fn phi_gram(&self) -> Array2<C64> {
        linalg::adjoint(self.whitened.view()).dot(&self.whitened)
    }

    /// `(1/(N delta T)) tr((I_L ⊗ G) Sigma_A)`.
    pub fn power_of(&self, sigma: &Array2<C64>) -> f64 {
        let n = self.n;
        let g = self.gram.matrix();
        let mut acc = 0.0;
        for b in 0..self.l {
            for r in 0..n {
                for c in 0..n {
                    acc += g[[r, c]] * sigma[[b * n + c, b * n + r]].re;
                }
            }
        }
        acc / (n as f64 * self.pulse.sample_spacing())
    }

    fn metadata(&self, params: &SystemParams) -> ReportMetadata {
        ReportMetadata::new(params, Some(self.n), self.k, self.l, self.j)
    }
}

/// `G_H = sum_j H^j ⊗ G^j`.
pub fn block_channel_matrix(ch: &FsChannel, pulse: &PulseConfig, n: usize) -> Array2<C64> {
    let (k, l) = (ch.k(), ch.l());
    let mut out = Array2::<C64>::zeros((k * n, l * n));
    for (j, tap) in ch.taps().iter().enumerate() {
        let gj = ShiftedGram::build(pulse, n, j);
        let gj = gj.matrix();
        for ((a, b), &h) in tap.indexed_iter() {
            if h == C64::new(0.0, 0.0) {
                continue;
            }
            let mut block = out.slice_mut(ndarray::s![a * n..(a + 1) * n, b * n..(b + 1) * n]);
            block.zip_mut_with(gj, |o, &g| *o += h * g);
        }
    }
    out
}

/// How the transmit basis of the frequency-selective block problem is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub enum FsBasis {
    /// Basis that diagonalizes `Phi^H Phi` and `I_L ⊗ G` together, so the
    /// weighted fill solves the block problem exactly at every `N`.
    #[default]
    Simultaneous,
    /// Unitary eigenvectors of `Phi^H Phi`, with only the diagonal of
    /// `U^H (I_L ⊗ G) U` used as weights. Feasible but suboptimal at finite `N`.
    PhiEigen,
}

#[derive(Clone, Debug)]
pub struct FsTimeSolution {
    pub report: CapacityReport,
    pub basis: FsBasis,
    /// Eigen-gains `phi_i = u_i^H Phi^H Phi u_i`.
    pub phi: Vec<f64>,
    /// Weights `psi_i = u_i^H (I_L ⊗ G) u_i`.
    pub psi: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Unit-norm transmit directions `u_i` as columns.
    pub vectors: Array2<C64>,
    /// Two powered directions share an eigenvalue, so the basis inside that
    /// eigenspace is a LAPACK convention rather than a property of the channel.
    pub degenerate: bool,
}

impl FsTimeSolution {
    /// `Sigma_A = U diag(lambda) U^H`.
    pub fn covariance(&self) -> Array2<C64> {
        linalg::reconstruct(self.vectors.view(), &self.lambda)
    }
}

const DEGENERACY_RTOL: f64 = 1e-9;

fn has_degenerate_active(values: &[f64], active: &[usize]) -> bool {
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut act: Vec<f64> = active.iter().map(|&i| values[i]).collect();
    act.sort_by(f64::total_cmp);
    act.windows(2).any(|w| (w[1] - w[0]).abs() <= DEGENERACY_RTOL * scale)
}

/// Optimal frequency-selective capacity over an `N`-symbol block.
pub fn fs_capacity_time(
    ch: &FsChannel,
    params: &SystemParams,
    n: usize,
    basis: FsBasis,
    opts: &BlockOptions,
) -> Result<FsTimeSolution> {
    let model = BlockModel::build(ch, &params.pulse, n, opts)?;
    fs_capacity_time_with(&model, params, basis)
}

pub fn fs_capacity_time_with(model: &BlockModel, params: &SystemParams, basis: FsBasis) -> Result<FsTimeSolution> {
    let n = model.n;
    let (eigen_values, vectors, phi, psi) = match basis {
        FsBasis::Simultaneous => {
            // Xi = Phi (I_L ⊗ G^{-1/2}); eigvecs w_i of Xi^H Xi give u_i ∝ (I_L ⊗ G^{-1/2}) w_i
            let xi = linalg::block_diag_right(model.whitened.view(), model.gram_inv_sqrt.view());
            let m = linalg::adjoint(xi.view()).dot(&xi);
            drop(xi);
            let eig = linalg::eigh(&m)?;
            drop(m);
            let mut u = linalg::block_diag_left(model.gram_inv_sqrt.view(), eig.vectors.view());
            let mut psi = Vec::with_capacity(u.ncols());
            for mut col in u.columns_mut() {
                let norm2: f64 = col.iter().map(|z| z.norm_sqr()).sum();
                col.mapv_inplace(|z| z / norm2.sqrt());
                psi.push(1.0 / norm2);
            }
            let values: Vec<f64> = eig.values.iter().map(|&v| v.max(0.0)).collect();
            let phi: Vec<f64> = values.iter().zip(&psi).map(|(m, p)| m * p).collect();
            (values, u, phi, psi)
        }
        FsBasis::PhiEigen => {
            let eig = linalg::eigh(&model.phi_gram())?;
            let u = eig.vectors;
            let au = linalg::block_diag_left(model.gram.matrix().view(), u.view());
            let psi: Vec<f64> = u
                .columns()
                .into_iter()
                .zip(au.columns())
                .map(|(x, y)| x.iter().zip(y.iter()).map(|(a, b)| (a.conj() * b).re).sum())
                .collect();
            let phi: Vec<f64> = eig.values.iter().map(|&v| v.max(0.0)).collect();
            (phi.clone(), u, phi, psi)
        }
    };
    let metadata = model.metadata(params);
    let energy = n as f64 * params.symbol_energy();
    let wf = match waterfill::weighted_waterfill(&psi, &phi, params.noise, params.pulse.sample_spacing(), energy) {
        Ok(wf) => wf,
        Err(FtnError::NoPositiveGain) => {
            let dim = phi.len();
            return Ok(FsTimeSolution {
                report: CapacityReport::new(0.0, vec![0.0; dim], 0.0, metadata),
                basis,
                phi,
                psi,
                lambda: vec![0.0; dim],
                vectors,
                degenerate: false,
            });
        }
        Err(e) => return Err(e),
    };
    let bits = waterfill::rate_bits(&wf.allocations, &phi, params.noise) / n as f64;
    let degenerate = has_degenerate_active(&eigen_values, &wf.active_set);
    Ok(FsTimeSolution {
        report: CapacityReport::new(bits, wf.allocations.clone(), wf.mu, metadata),
        basis,
        phi,
        psi,
        lambda: wf.allocations,
        vectors,
        degenerate,
    })
}

/// Mutual information of a given input covariance, with its transmit power.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MutualInfo {
    pub bits_per_channel_use: f64,
    pub power: f64,
}

/// `(1/N) log2 det(I + sigma^-2 G_H Sigma_A G_H^H (I_K ⊗ G^{-1}))`.
pub fn mutual_info_given_cov(model: &BlockModel, sigma: &Array2<C64>, noise: f64) -> Result<MutualInfo> {
    let dim = model.l * model.n;
    if sigma.dim() != (dim, dim) {
        return Err(FtnError::DimensionMismatch(format!(
            "covariance is {:?}, expected {dim}x{dim}",
            sigma.dim()
        )));
    }
    let h = linalg::hermitian_part(sigma.view());
    let values = linalg::eigvalsh(&h)?;
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = values[values.len() - 1];
    if min < -1e-8 * scale.max(f64::MIN_POSITIVE) {
        return Err(FtnError::NotPsd { min_eigenvalue: min });
    }
    // det(I_KN + Phi Sigma Phi^H / sigma^2), same determinant as the unwhitened form
    let inner = model.whitened.dot(&h).dot(&linalg::adjoint(model.whitened.view()));
    let arg = Array2::<C64>::eye(model.k * model.n) + inner.mapv(|z| z / noise);
    let bits = linalg::ln_det_hpd(&arg)? / (model.n as f64 * LN_2);
    Ok(MutualInfo {
        bits_per_channel_use: bits.max(0.0),
        power: model.power_of(&h),
    })
}

/// Scale `c` of the equal-power input `Sigma_A = c I` that meets the power
/// constraint: `c = P delta T / L` since `g[0] = 1`.
pub fn equal_power_scale(params: &SystemParams, l: usize) -> f64 {
    params.symbol_energy() / l as f64
}

pub fn equal_power_capacity(ch: &FsChannel, params: &SystemParams, n: usize, opts: &BlockOptions) -> Result<f64> {
    let model = BlockModel::build(ch, &params.pulse, n, opts)?;
    equal_power_capacity_with(&model, params)
}

/// `(1/N) log2 det(I + c sigma^-2 Phi^H Phi)`.
pub fn equal_power_capacity_with(model: &BlockModel, params: &SystemParams) -> Result<f64> {
    let c = equal_power_scale(params, model.l);
    let arg = Array2::<C64>::eye(model.l * model.n) + model.phi_gram().mapv(|z| z * (c / params.noise));
    Ok((linalg::ln_det_hpd(&arg)? / (model.n as f64 * LN_2)).max(0.0))
}

/// Eigenvalues of `Phi^H Phi`, descending.
pub fn phi_gram_eigenvalues(model: &BlockModel) -> Result<Array1<f64>> {
    linalg::eigvalsh(&model.phi_gram())
}
