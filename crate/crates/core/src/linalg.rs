//! Dense linear algebra on top of LAPACK.
//!
//! Everything here works on `ndarray` matrices in logical (row, column)
//! order and copies into column-major buffers at the LAPACK boundary.
//! Eigen-decompositions return eigenvalues in descending order with
//! eigenvectors phase-normalized so that the first non-negligible
//! component is real and positive, which makes results reproducible.

use ndarray::{s, Array1, Array2, ArrayView2, ShapeBuilder, Zip};
use num_complex::Complex64;

use crate::error::{FtnError, Result};

pub type C64 = Complex64;

const PHASE_EPS: f64 = 1e-10;

/// Eigen-decomposition of a Hermitian matrix, eigenvalues descending.
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    pub values: Array1<f64>,
    pub vectors: Array2<C64>,
}

/// Eigen-decomposition of a real symmetric matrix, eigenvalues descending.
#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    pub values: Array1<f64>,
    pub vectors: Array2<f64>,
}

fn col_major<T: Clone>(a: &Array2<T>) -> Vec<T> {
    a.t().iter().cloned().collect()
}

fn from_col_major<T>(n_rows: usize, n_cols: usize, buf: Vec<T>) -> Array2<T> {
    Array2::from_shape_vec((n_rows, n_cols).f(), buf).expect("buffer length matches shape")
}

fn check_square<T>(a: &Array2<T>, what: &str) -> Result<usize> {
    let (r, c) = a.dim();
    if r != c {
        return Err(FtnError::DimensionMismatch(format!(
            "{what} must be square, got {r}x{c}"
        )));
    }
    Ok(r)
}

fn lapack_int(n: usize) -> i32 {
    i32::try_from(n).expect("matrix dimension fits in a LAPACK integer")
}

fn zheevd(a: &Array2<C64>, vectors: bool) -> Result<(Vec<f64>, Vec<C64>)> {
    let n = check_square(a, "Hermitian eigen input")?;
    let mut buf = col_major(a);
    let mut w = vec![0.0; n];
    if n == 0 {
        return Ok((w, buf));
    }
    let jobz = if vectors { b'V' } else { b'N' };
    let ni = lapack_int(n);
    let mut info = 0;
    let mut work = vec![C64::new(0.0, 0.0); 1];
    let mut rwork = vec![0.0; 1];
    let mut iwork = vec![0i32; 1];
    // SAFETY: workspace query, all buffers sized per LAPACK contract.
    unsafe {
        lapack::zheevd(
            jobz, b'L', ni, &mut buf, ni, &mut w, &mut work, -1, &mut rwork, -1, &mut iwork, -1,
            &mut info,
        );
    }
    if info != 0 {
        return Err(FtnError::Lapack { routine: "zheevd", info });
    }
    let lwork = work[0].re.max(1.0) as i32;
    let lrwork = rwork[0].max(1.0) as i32;
    let liwork = iwork[0].max(1);
    let mut work = vec![C64::new(0.0, 0.0); lwork as usize];
    let mut rwork = vec![0.0; lrwork as usize];
    let mut iwork = vec![0i32; liwork as usize];
    // SAFETY: buffers sized from the workspace query above.
    unsafe {
        lapack::zheevd(
            jobz, b'L', ni, &mut buf, ni, &mut w, &mut work, lwork, &mut rwork, lrwork,
            &mut iwork, liwork, &mut info,
        );
    }
    if info != 0 {
        return Err(FtnError::Lapack { routine: "zheevd", info });
    }
    Ok((w, buf))
}

fn normalize_phase(vectors: &mut Array2<C64>) {
    for mut col in vectors.columns_mut() {
        if let Some(pivot) = col.iter().copied().find(|z| z.norm() > PHASE_EPS) {
            let rot = pivot.conj() / pivot.norm();
            col.mapv_inplace(|z| z * rot);
        }
    }
}

fn normalize_sign(vectors: &mut Array2<f64>) {
    for mut col in vectors.columns_mut() {
        if let Some(pivot) = col.iter().copied().find(|x| x.abs() > PHASE_EPS) {
            if pivot < 0.0 {
                col.mapv_inplace(|x| -x);
            }
        }
    }
}

/// Full eigen-decomposition of a Hermitian matrix (lower triangle is read).
pub fn eigh(a: &Array2<C64>) -> Result<HermitianEigen> {
    let n = a.nrows();
    let (w, buf) = zheevd(a, true)?;
    let vectors = from_col_major(n, n, buf);
    let mut vectors = vectors.slice(s![.., ..;-1]).to_owned();
    normalize_phase(&mut vectors);
    let values = Array1::from_iter(w.into_iter().rev());
    Ok(HermitianEigen { values, vectors })
}

/// Eigenvalues of a Hermitian matrix, descending.
pub fn eigvalsh(a: &Array2<C64>) -> Result<Array1<f64>> {
    let (w, _) = zheevd(a, false)?;
    Ok(Array1::from_iter(w.into_iter().rev()))
}

/// Full eigen-decomposition of a real symmetric matrix.
pub fn eigh_real(a: &Array2<f64>) -> Result<SymmetricEigen> {
    let n = check_square(a, "symmetric eigen input")?;
    let mut buf = col_major(a);
    let mut w = vec![0.0; n];
    if n == 0 {
        return Ok(SymmetricEigen {
            values: Array1::zeros(0),
            vectors: Array2::zeros((0, 0)),
        });
    }
    let ni = lapack_int(n);
    let mut info = 0;
    let mut work = vec![0.0; 1];
    let mut iwork = vec![0i32; 1];
    // SAFETY: workspace query.
    unsafe {
        lapack::dsyevd(
            b'V', b'L', ni, &mut buf, ni, &mut w, &mut work, -1, &mut iwork, -1, &mut info,
        );
    }
    if info != 0 {
        return Err(FtnError::Lapack { routine: "dsyevd", info });
    }
    let lwork = work[0].max(1.0) as i32;
    let liwork = iwork[0].max(1);
    let mut work = vec![0.0; lwork as usize];
    let mut iwork = vec![0i32; liwork as usize];
    // SAFETY: buffers sized from the workspace query above.
    unsafe {
        lapack::dsyevd(
            b'V', b'L', ni, &mut buf, ni, &mut w, &mut work, lwork, &mut iwork, liwork, &mut info,
        );
    }
    if info != 0 {
        return Err(FtnError::Lapack { routine: "dsyevd", info });
    }
    let vectors = from_col_major(n, n, buf);
    let mut vectors = vectors.slice(s![.., ..;-1]).to_owned();
    normalize_sign(&mut vectors);
    let values = Array1::from_iter(w.into_iter().rev());
    Ok(SymmetricEigen { values, vectors })
}

/// Natural log of the determinant of a Hermitian positive definite matrix.
///
/// Uses a Cholesky factorization of the Hermitian part; if that fails the
/// eigenvalues are summed in log domain with a 1e-300 underflow clamp.
pub fn ln_det_hpd(a: &Array2<C64>) -> Result<f64> {
    let n = check_square(a, "log-det input")?;
    if n == 0 {
        return Ok(0.0);
    }
    let h = hermitian_part(a.view());
    let mut buf = col_major(&h);
    let ni = lapack_int(n);
    let mut info = 0;
    // SAFETY: buf holds n*n entries in column-major order.
    unsafe {
        lapack::zpotrf(b'L', ni, &mut buf, ni, &mut info);
    }
    if info == 0 {
        let sum: f64 = (0..n).map(|i| buf[i + i * n].re.ln()).sum();
        return Ok(2.0 * sum);
    }
    let values = eigvalsh(&h)?;
    Ok(values.iter().map(|&x| x.max(1e-300).ln()).sum())
}

/// Natural log of |det(a)| for a general complex square matrix (LU).
pub fn ln_abs_det(a: &Array2<C64>) -> Result<f64> {
    let n = check_square(a, "LU input")?;
    if n == 0 {
        return Ok(0.0);
    }
    let mut buf = col_major(a);
    let ni = lapack_int(n);
    let mut ipiv = vec![0i32; n];
    let mut info = 0;
    // SAFETY: buf holds n*n entries, ipiv holds n.
    unsafe {
        lapack::zgetrf(ni, ni, &mut buf, ni, &mut ipiv, &mut info);
    }
    if info < 0 {
        return Err(FtnError::Lapack { routine: "zgetrf", info });
    }
    if info > 0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok((0..n).map(|i| buf[i + i * n].norm().ln()).sum())
}

/// Solves `a x = b` for a general real square `a` (LU with partial pivoting).
pub fn solve_real(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    let n = check_square(a, "solve matrix")?;
    if b.nrows() != n {
        return Err(FtnError::DimensionMismatch(format!(
            "right-hand side has {} rows, expected {n}",
            b.nrows()
        )));
    }
    let nrhs = b.ncols();
    let mut abuf = col_major(a);
    let mut bbuf = col_major(b);
    let ni = lapack_int(n);
    let mut ipiv = vec![0i32; n];
    let mut info = 0;
    // SAFETY: buffers sized n*n and n*nrhs.
    unsafe {
        lapack::dgesv(
            ni,
            lapack_int(nrhs),
            &mut abuf,
            ni,
            &mut ipiv,
            &mut bbuf,
            ni,
            &mut info,
        );
    }
    if info != 0 {
        return Err(FtnError::Lapack { routine: "dgesv", info });
    }
    Ok(from_col_major(n, nrhs, bbuf))
}

pub fn adjoint(a: ArrayView2<C64>) -> Array2<C64> {
    a.t().mapv(|z| z.conj())
}

/// (A + A^H) / 2.
pub fn hermitian_part(a: ArrayView2<C64>) -> Array2<C64> {
    let mut out = a.to_owned();
    Zip::from(&mut out)
        .and(a.t())
        .for_each(|x, &y| *x = (*x + y.conj()) * 0.5);
    out
}

pub fn complexify(a: &Array2<f64>) -> Array2<C64> {
    a.mapv(|x| C64::new(x, 0.0))
}

pub fn frobenius(a: ArrayView2<C64>) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn frobenius_real(a: ArrayView2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Real matrix times complex matrix, done as two real GEMMs.
pub fn real_times_complex(r: ArrayView2<f64>, z: ArrayView2<C64>) -> Array2<C64> {
    let re = z.mapv(|c| c.re);
    let im = z.mapv(|c| c.im);
    let out_re = r.dot(&re);
    let out_im = r.dot(&im);
    let mut out = Array2::zeros(out_re.dim());
    Zip::from(&mut out)
        .and(&out_re)
        .and(&out_im)
        .for_each(|o, &a, &b| *o = C64::new(a, b));
    out
}

/// Complex matrix times real matrix, done as two real GEMMs.
pub fn complex_times_real(z: ArrayView2<C64>, r: ArrayView2<f64>) -> Array2<C64> {
    let re = z.mapv(|c| c.re);
    let im = z.mapv(|c| c.im);
    let out_re = re.dot(&r);
    let out_im = im.dot(&r);
    let mut out = Array2::zeros(out_re.dim());
    Zip::from(&mut out)
        .and(&out_re)
        .and(&out_im)
        .for_each(|o, &a, &b| *o = C64::new(a, b));
    out
}

/// Applies `I_blocks ⊗ r` from the left: each row block of `z` is multiplied by `r`.
pub fn block_diag_left(r: ArrayView2<f64>, z: ArrayView2<C64>) -> Array2<C64> {
    let n = r.nrows();
    assert_eq!(z.nrows() % n, 0, "row count must be a multiple of the block size");
    let mut out = Array2::zeros(z.dim());
    for b in 0..z.nrows() / n {
        let rows = s![b * n..(b + 1) * n, ..];
        out.slice_mut(rows)
            .assign(&real_times_complex(r, z.slice(rows)));
    }
    out
}

/// Applies `I_blocks ⊗ r` from the right: each column block of `z` is multiplied by `r`.
pub fn block_diag_right(z: ArrayView2<C64>, r: ArrayView2<f64>) -> Array2<C64> {
    let n = r.nrows();
    assert_eq!(z.ncols() % n, 0, "column count must be a multiple of the block size");
    let mut out = Array2::zeros(z.dim());
    for b in 0..z.ncols() / n {
        let cols = s![.., b * n..(b + 1) * n];
        out.slice_mut(cols)
            .assign(&complex_times_real(z.slice(cols), r));
    }
    out
}

/// Kronecker product of two complex matrices.
pub fn kron(a: ArrayView2<C64>, b: ArrayView2<C64>) -> Array2<C64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for ((i, j), &x) in a.indexed_iter() {
        out.slice_mut(s![i * br..(i + 1) * br, j * bc..(j + 1) * bc])
            .assign(&b.mapv(|y| x * y));
    }
    out
}

/// `I_k ⊗ b` for a real `b`.
pub fn kron_identity_real(k: usize, b: ArrayView2<f64>) -> Array2<f64> {
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((k * br, k * bc));
    for i in 0..k {
        out.slice_mut(s![i * br..(i + 1) * br, i * bc..(i + 1) * bc])
            .assign(&b);
    }
    out
}

/// `V diag(d) V^H`.
pub fn reconstruct(vectors: ArrayView2<C64>, diag: &[f64]) -> Array2<C64> {
    let mut scaled = vectors.to_owned();
    for (mut col, &d) in scaled.columns_mut().into_iter().zip(diag) {
        col.mapv_inplace(|z| z * d);
    }
    scaled.dot(&adjoint(vectors))
}
