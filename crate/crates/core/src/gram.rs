//! FTN Gram matrices.
//!
//! `G` is the real symmetric Toeplitz matrix `(G)_{n,m} = g[n-m]`; the
//! shifted `G^j` has entries `g[n-m-j]` and carries the tap delays of a
//! frequency-selective channel. Inverses and inverse square roots go
//! through one eigen-decomposition and refuse ill-conditioned inputs
//! rather than clamping small eigenvalues.

use ndarray::{Array1, Array2};

use crate::error::{FtnError, Result};
use crate::linalg::{self, SymmetricEigen};
use crate::pulse::{PulseConfig, PulseSamples};

/// Default cap on the condition number of `G`.
pub const DEFAULT_COND_CAP: f64 = 1e12;

/// Toeplitz Gram matrix of the sampled raised cosine.
#[derive(Clone, Debug)]
pub struct GramMatrix {
    config: PulseConfig,
    matrix: Array2<f64>,
}

impl GramMatrix {
    pub fn build(config: &PulseConfig, n: usize) -> Self {
        assert!(n >= 1, "Gram matrix dimension must be positive");
        let g = config.samples(n);
        Self {
            config: *config,
            matrix: toeplitz_from(&g, n, 0),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn config(&self) -> &PulseConfig {
        &self.config
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn decompose(&self) -> Result<GramSpectrum> {
        let SymmetricEigen { values, vectors } = linalg::eigh_real(&self.matrix)?;
        Ok(GramSpectrum { values, vectors })
    }
}

/// `G^j` with `(G^j)_{n,m} = g[n-m-j]`.
#[derive(Clone, Debug)]
pub struct ShiftedGram {
    shift: usize,
    matrix: Array2<f64>,
}

impl ShiftedGram {
    pub fn build(config: &PulseConfig, n: usize, shift: usize) -> Self {
        assert!(n >= 1, "Gram matrix dimension must be positive");
        let g = config.samples(n + shift);
        Self {
            shift,
            matrix: toeplitz_from(&g, n, shift),
        }
    }

    pub fn shift(&self) -> usize {
        self.shift
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }
}

fn toeplitz_from(g: &PulseSamples, n: usize, shift: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, n), |(r, c)| g.at(r as i64 - c as i64 - shift as i64))
}

/// `G = V diag(lambda) V^T` with eigenvalues in descending order.
#[derive(Clone, Debug)]
pub struct GramSpectrum {
    pub values: Array1<f64>,
    pub vectors: Array2<f64>,
}

impl GramSpectrum {
    pub fn max_eigenvalue(&self) -> f64 {
        self.values[0]
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Strictly positive definite as computed (smallest eigenvalue > 0).
    pub fn is_positive_definite(&self) -> bool {
        self.min_eigenvalue() > 0.0
    }

    /// Fails with `IllConditioned` when `min < max / cond_cap`.
    pub fn check_conditioning(&self, cond_cap: f64) -> Result<()> {
        let cond_tol = 1.0 / cond_cap;
        let (lo, hi) = (self.min_eigenvalue(), self.max_eigenvalue());
        if !(lo >= cond_tol * hi) {
            return Err(FtnError::IllConditioned {
                min_eigenvalue: lo,
                max_eigenvalue: hi,
                cond_tol,
            });
        }
        Ok(())
    }

    fn spectral_function(&self, f: impl Fn(f64) -> f64) -> Array2<f64> {
        let mut scaled = self.vectors.clone();
        for (mut col, &lam) in scaled.columns_mut().into_iter().zip(self.values.iter()) {
            let s = f(lam);
            col.mapv_inplace(|x| x * s);
        }
        scaled.dot(&self.vectors.t())
    }

    pub fn reconstruct(&self) -> Array2<f64> {
        self.spectral_function(|x| x)
    }

    pub fn inverse(&self, cond_cap: f64) -> Result<Array2<f64>> {
        self.check_conditioning(cond_cap)?;
        Ok(self.spectral_function(|x| 1.0 / x))
    }

    pub fn inv_sqrt(&self, cond_cap: f64) -> Result<Array2<f64>> {
        self.check_conditioning(cond_cap)?;
        Ok(self.spectral_function(|x| 1.0 / x.sqrt()))
    }

    pub fn sqrt(&self) -> Array2<f64> {
        self.spectral_function(|x| x.max(0.0).sqrt())
    }
}
