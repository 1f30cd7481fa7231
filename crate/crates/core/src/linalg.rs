//! Dense complex linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

/// Eigenvalues below `-PSD_TOLERANCE` (relative to the spectral radius, with
/// an absolute floor of one) reject a matrix as not positive semidefinite.
pub const PSD_TOLERANCE: f64 = 1e-10;

#[inline]
pub fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn real_trace(x: &CMat) -> f64 {
    x.diagonal().iter().map(|z| z.re).sum()
}

/// `(X + X^H) / 2`.
pub fn hermitian_part(x: &CMat) -> CMat {
    (x + x.adjoint()) * c(0.5)
}

pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

pub fn hermitian_defect(x: &CMat) -> f64 {
    max_abs_diff(x, &x.adjoint())
}

/// `diag(A B)` without forming the product.
pub fn diag_of_product(a: &CMat, b: &CMat) -> CVec {
    assert_eq!(a.ncols(), b.nrows());
    assert_eq!(a.nrows(), b.ncols());
    CVec::from_fn(a.nrows(), |i, _| (0..a.ncols()).map(|k| a[(i, k)] * b[(k, i)]).sum())
}

/// `diag(d) X`, scaling row `i` by `d_i`.
pub fn scale_rows(d: &CVec, x: &CMat) -> CMat {
    assert_eq!(d.len(), x.nrows());
    let mut out = x.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row *= d[i];
    }
    out
}

/// `X diag(d)`, scaling column `j` by `d_j`.
pub fn scale_cols(x: &CMat, d: &CVec) -> CMat {
    assert_eq!(d.len(), x.ncols());
    let mut out = x.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col *= d[j];
    }
    out
}

/// Eigendecomposition of a Hermitian matrix, `X = U diag(values) U^H`.
#[derive(Debug, Clone)]
pub struct HermitianSpectrum {
    pub values: Vec<f64>,
    pub vectors: CMat,
}

impl HermitianSpectrum {
    pub fn new(x: &CMat) -> Result<Self> {
        if !x.is_square() {
            return Err(Error::invalid(format!(
                "eigendecomposition needs a square matrix, got {}x{}",
                x.nrows(),
                x.ncols()
            )));
        }
        if x.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::invalid("matrix has non-finite entries"));
        }
        let eig = hermitian_part(x).symmetric_eigen();
        Ok(Self {
            values: eig.eigenvalues.iter().copied().collect(),
            vectors: eig.eigenvectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    /// `U diag(f(values)) U^H`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> CMat {
        let d = CVec::from_iterator(self.dim(), self.values.iter().map(|&v| c(f(v))));
        scale_cols(&self.vectors, &d) * self.vectors.adjoint()
    }

    pub fn trace_of(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.values.iter().map(|&v| f(v)).sum()
    }

    pub fn is_psd(&self) -> bool {
        self.min() >= -PSD_TOLERANCE * self.max_abs().max(1.0)
    }
}

/// Principal square root of a Hermitian PSD matrix; slightly negative
/// eigenvalues (within [`PSD_TOLERANCE`]) are clipped to zero.
pub fn psd_sqrt(x: &CMat) -> Result<CMat> {
    let spec = HermitianSpectrum::new(x)?;
    if !spec.is_psd() {
        return Err(Error::invalid(format!(
            "matrix is not positive semidefinite (min eigenvalue {:e})",
            spec.min()
        )));
    }
    Ok(spec.map(|v| v.max(0.0).sqrt()))
}

/// `log det X` for Hermitian positive definite `X`, via Cholesky.
pub fn logdet_hpd(x: &CMat) -> Result<f64> {
    let chol = hermitian_part(x)
        .cholesky()
        .ok_or_else(|| Error::Numeric("log-determinant argument is not positive definite".into()))?;
    let l = chol.l_dirty();
    if (0..l.nrows()).any(|i| !(l[(i, i)].re > 0.0) || l[(i, i)].im.abs() > 1e-12 * l[(i, i)].re) {
        return Err(Error::Numeric(
            "log-determinant argument is not positive definite".into(),
        ));
    }
    let sum: f64 = (0..l.nrows()).map(|i| l[(i, i)].re.ln()).sum();
    if sum.is_finite() {
        Ok(2.0 * sum)
    } else {
        Err(Error::Numeric("non-finite log-determinant".into()))
    }
}

/// Inverse of a Hermitian positive definite matrix, via Cholesky.
pub fn inverse_hpd(x: &CMat) -> Result<CMat> {
    hermitian_part(x)
        .cholesky()
        .map(|ch| ch.inverse())
        .ok_or_else(|| Error::Numeric("matrix is not positive definite".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CMat {
        CMat::from_fn(3, 3, |i, j| {
            Complex64::new((i + 2 * j) as f64 * 0.3, (i as f64 - j as f64) * 0.7)
        })
    }

    #[test]
    fn diag_of_product_matches_full_product() {
        let a = sample();
        let b = sample().adjoint() * c(2.0);
        let full = &a * &b;
        let d = diag_of_product(&a, &b);
        for i in 0..3 {
            assert!((d[i] - full[(i, i)]).norm() < 1e-12);
        }
    }

    #[test]
    fn logdet_of_diagonal() {
        let x = CMat::from_diagonal(&CVec::from_vec(vec![c(2.0), c(3.0), c(0.5)]));
        assert!((logdet_hpd(&x).unwrap() - 3.0f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn logdet_rejects_indefinite() {
        let x = CMat::from_diagonal(&CVec::from_vec(vec![c(1.0), c(-1.0)]));
        assert!(logdet_hpd(&x).is_err());
    }

    #[test]
    fn sqrt_squares_back() {
        let a = sample();
        let x = &a * a.adjoint();
        let r = psd_sqrt(&x).unwrap();
        assert!(max_abs_diff(&(&r * &r), &x) < 1e-10);
        assert!(hermitian_defect(&r) < 1e-12);
    }

    #[test]
    fn sqrt_rejects_indefinite() {
        let x = CMat::from_diagonal(&CVec::from_vec(vec![c(1.0), c(-1e-3)]));
        assert!(psd_sqrt(&x).is_err());
        let y = CMat::from_diagonal(&CVec::from_vec(vec![c(1.0), c(-1e-13)]));
        assert!(psd_sqrt(&y).is_ok());
    }
}
