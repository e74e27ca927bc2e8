//! Small dense linear-algebra helpers shared by the filters and samplers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{DqlmError, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-6;

pub fn symmetrize(m: &mut Mat) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Cholesky factor of a symmetrized copy of `m`, adding `ε I` with
/// `ε = 1e-10, 1e-9, …, 1e-6` when the plain factorization fails.
pub fn cholesky_jittered(m: &Mat) -> Result<Cholesky<f64, Dyn>> {
    let mut s = m.clone();
    symmetrize(&mut s);
    if let Some(c) = Cholesky::new(s.clone()) {
        return Ok(c);
    }
    let n = s.nrows();
    let mut eps = JITTER_START;
    while eps <= JITTER_MAX * 1.000_001 {
        let mut t = s.clone();
        for i in 0..n {
            t[(i, i)] += eps;
        }
        if let Some(c) = Cholesky::new(t) {
            return Ok(c);
        }
        eps *= 10.0;
    }
    Err(DqlmError::Numerical(format!(
        "matrix is not positive definite even after jitter {JITTER_MAX:e}"
    )))
}

pub fn is_spd(m: &Mat) -> bool {
    m.is_square() && m.iter().all(|v| v.is_finite()) && {
        let mut s = m.clone();
        symmetrize(&mut s);
        (s.clone() - s.transpose()).amax() <= 1e-9 * (1.0 + m.amax()) && Cholesky::new(s).is_some()
    }
}

/// Lower factor `L` with `L L' ≈ cov`, tolerating positive semi-definite
/// input (zero or near-zero variance directions get zero columns).
pub fn psd_factor(cov: &Mat) -> Result<Mat> {
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(DqlmError::Numerical("covariance has non-finite entries".into()));
    }
    if cov.amax() == 0.0 {
        return Ok(Mat::zeros(cov.nrows(), cov.ncols()));
    }
    match cholesky_jittered(cov) {
        Ok(c) => Ok(c.l()),
        Err(_) => {
            let mut s = cov.clone();
            symmetrize(&mut s);
            let eig = s.symmetric_eigen();
            let scale = eig.eigenvalues.amax();
            let mut lam = eig.eigenvalues.clone();
            for v in lam.iter_mut() {
                if *v < -1e-8 * scale {
                    return Err(DqlmError::Numerical(format!(
                        "covariance has a negative eigenvalue {v:e}"
                    )));
                }
                *v = v.max(0.0).sqrt();
            }
            Ok(&eig.eigenvectors * Mat::from_diagonal(&lam))
        }
    }
}

pub fn sample_mvn<R: Rng + ?Sized>(mean: &Vector, cov: &Mat, rng: &mut R) -> Result<Vector> {
    let l = psd_factor(cov)?;
    let z = Vector::from_fn(mean.len(), |_, _| StandardNormal.sample(rng));
    Ok(mean + l * z)
}

pub fn block_diag(a: &Mat, b: &Mat) -> Mat {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    let mut out = Mat::zeros(ra + rb, ca + cb);
    out.view_mut((0, 0), (ra, ca)).copy_from(a);
    out.view_mut((ra, ca), (rb, cb)).copy_from(b);
    out
}

/// `x' A^{-1} x` through a Cholesky solve.
pub fn quad_form_inv(a: &Mat, x: &Vector) -> Result<f64> {
    let c = cholesky_jittered(a)?;
    Ok(x.dot(&c.solve(x)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn jitter_rescues_semidefinite() {
        let m = Mat::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(Cholesky::new(m.clone()).is_none());
        assert!(cholesky_jittered(&m).is_ok());
    }

    #[test]
    fn indefinite_is_rejected() {
        let m = Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(cholesky_jittered(&m).is_err());
        assert!(psd_factor(&m).is_err());
    }

    #[test]
    fn zero_covariance_gives_the_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mean = Vector::from_vec(vec![1.0, -2.0]);
        let x = sample_mvn(&mean, &Mat::zeros(2, 2), &mut rng).unwrap();
        assert_eq!(x, mean);
    }

    #[test]
    fn block_diag_layout() {
        let a = Mat::from_element(2, 2, 1.0);
        let b = Mat::from_element(1, 1, 5.0);
        let m = block_diag(&a, &b);
        assert_eq!(m.shape(), (3, 3));
        assert_eq!(m[(2, 2)], 5.0);
        assert_eq!(m[(0, 2)], 0.0);
        assert_eq!(m[(1, 1)], 1.0);
    }
}
