//! Positive semidefinite Hermitian forms stored in factored form.

use nalgebra::DMatrix;

use crate::{CMat, CVec, ConicError, C64};

/// A PSD Hermitian matrix `A = L^H L`, kept as the factor `L`.
///
/// Forms that are low rank by construction can be built straight from
/// their factor. Dense matrices go through an eigendecomposition.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianForm {
    factor: CMat,
}

impl HermitianForm {
    pub fn zero(dim: usize) -> Self {
        Self {
            factor: CMat::zeros(0, dim),
        }
    }

    pub fn from_factor(factor: CMat) -> Result<Self, ConicError> {
        if !factor.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
            return Err(ConicError::NonFinite);
        }
        Ok(Self { factor })
    }

    /// Factors a dense Hermitian PSD matrix. Tiny negative eigenvalues from
    /// round-off are clipped; anything below `-1e-9 * trace` is rejected.
    pub fn from_dense(a: &CMat) -> Result<Self, ConicError> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(ConicError::DimensionMismatch(format!("form is {}x{}", n, a.ncols())));
        }
        if !a.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
            return Err(ConicError::NonFinite);
        }
        let scale = a.iter().map(|v| v.norm()).fold(0.0_f64, f64::max);
        if scale == 0.0 {
            return Ok(Self::zero(n));
        }
        let skew = (a - a.adjoint()).iter().map(|v| v.norm()).fold(0.0_f64, f64::max);
        if skew > 1e-9 * scale {
            return Err(ConicError::NotHermitian(skew / scale));
        }
        let herm = (a + a.adjoint()) * C64::new(0.5, 0.0);
        let trace: f64 = (0..n).map(|k| herm[(k, k)].re).sum();
        let eig = herm.symmetric_eigen();
        let top = eig.eigenvalues.iter().fold(0.0_f64, |m, &v| m.max(v));
        let low = eig.eigenvalues.iter().fold(f64::INFINITY, |m, &v| m.min(v));
        if low < -1e-9 * trace.abs().max(scale) {
            return Err(ConicError::NotPsd(low));
        }
        let keep: Vec<usize> = (0..n).filter(|&k| eig.eigenvalues[k] > 1e-14 * top).collect();
        let mut factor = CMat::zeros(keep.len(), n);
        for (row, &k) in keep.iter().enumerate() {
            let w = eig.eigenvalues[k].sqrt();
            for j in 0..n {
                factor[(row, j)] = eig.eigenvectors[(j, k)].conj() * w;
            }
        }
        Ok(Self { factor })
    }

    pub fn dim(&self) -> usize {
        self.factor.ncols()
    }

    pub fn rank(&self) -> usize {
        self.factor.nrows()
    }

    pub fn factor(&self) -> &CMat {
        &self.factor
    }

    /// `x^H A x`
    pub fn quad(&self, x: &CVec) -> f64 {
        (&self.factor * x).norm_squared()
    }

    pub fn to_dense(&self) -> CMat {
        self.factor.adjoint() * &self.factor
    }

    /// Same form acting on `N z`: factor `L N`.
    pub fn restrict(&self, basis: &CMat) -> Self {
        Self {
            factor: &self.factor * basis,
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        assert!(c >= 0.0, "forms can only be scaled by nonnegative factors");
        Self {
            factor: &self.factor * C64::new(c.sqrt(), 0.0),
        }
    }
}

/// Real embedding of a complex linear map: `[Re y; Im y] = [[Ar, -Ai], [Ai, Ar]] [Re z; Im z]`.
pub fn real_embed_matrix(a: &CMat) -> DMatrix<f64> {
    let (r, c) = a.shape();
    let mut out = DMatrix::zeros(2 * r, 2 * c);
    for i in 0..r {
        for j in 0..c {
            let v = a[(i, j)];
            out[(i, j)] = v.re;
            out[(i, j + c)] = -v.im;
            out[(i + r, j)] = v.im;
            out[(i + r, j + c)] = v.re;
        }
    }
    out
}

pub fn real_embed_vec(x: &CVec) -> nalgebra::DVector<f64> {
    let n = x.len();
    nalgebra::DVector::from_fn(2 * n, |k, _| if k < n { x[k].re } else { x[k - n].im })
}

pub fn complex_from_real(v: &nalgebra::DVector<f64>) -> CVec {
    assert!(v.len() % 2 == 0, "real embedding has odd length");
    let n = v.len() / 2;
    CVec::from_fn(n, |k, _| C64::new(v[k], v[k + n]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sample() -> CMat {
        let b = CMat::from_fn(3, 3, |i, j| C64::new((i + 2 * j) as f64 * 0.3 - 0.5, (i as f64 - j as f64) * 0.2));
        b.adjoint() * &b
    }

    #[test]
    fn dense_round_trip() {
        let a = sample();
        let f = HermitianForm::from_dense(&a).unwrap();
        let back = f.to_dense();
        for (u, v) in a.iter().zip(back.iter()) {
            assert_relative_eq!(u.re, v.re, epsilon = 1e-10);
            assert_relative_eq!(u.im, v.im, epsilon = 1e-10);
        }
    }

    #[test]
    fn rejects_indefinite() {
        let mut a = CMat::identity(2, 2);
        a[(1, 1)] = C64::new(-1.0, 0.0);
        assert!(matches!(HermitianForm::from_dense(&a), Err(ConicError::NotPsd(_))));
    }

    #[test]
    fn rejects_non_hermitian() {
        let mut a = CMat::identity(2, 2);
        a[(0, 1)] = C64::new(0.0, 1.0);
        assert!(matches!(HermitianForm::from_dense(&a), Err(ConicError::NotHermitian(_))));
    }

    #[test]
    fn quad_matches_dense() {
        let a = sample();
        let f = HermitianForm::from_dense(&a).unwrap();
        let x = CVec::from_vec(vec![C64::new(0.2, -1.0), C64::new(1.5, 0.3), C64::new(-0.7, 0.4)]);
        let direct = (x.adjoint() * &a * &x)[(0, 0)].re;
        assert_relative_eq!(f.quad(&x), direct, epsilon = 1e-10);
    }

    #[test]
    fn embedding_matches_complex_product() {
        let a = CMat::from_fn(2, 3, |i, j| C64::new(i as f64 - j as f64, (i * j) as f64 + 0.5));
        let x = CVec::from_vec(vec![C64::new(1.0, 2.0), C64::new(-0.5, 0.1), C64::new(0.3, -0.9)]);
        let y = &a * &x;
        let yr = real_embed_matrix(&a) * real_embed_vec(&x);
        let back = complex_from_real(&yr);
        for k in 0..2 {
            assert_relative_eq!(back[k].re, y[k].re, epsilon = 1e-14);
            assert_relative_eq!(back[k].im, y[k].im, epsilon = 1e-14);
        }
        assert_eq!(complex_from_real(&real_embed_vec(&x)), x);
    }
}
