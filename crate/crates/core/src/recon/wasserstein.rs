use nalgebra::Matrix2;

use crate::geometry::Gaussian2;
use crate::num::Real;

use super::ReconError;

/// Principal square root of a 2x2 symmetric positive semi-definite matrix:
/// `(M + sqrt(det M) I) / sqrt(tr M + 2 sqrt(det M))`.
pub fn sqrtm_spd2<T: Real>(m: &Matrix2<T>) -> Matrix2<T> {
    let det = m.determinant().max(T::zero());
    let s = det.sqrt();
    let denom = (m.trace() + T::lit(2.0) * s).sqrt();
    if denom == T::zero() {
        return Matrix2::zeros();
    }
    (m + Matrix2::identity() * s) / denom
}

fn check_spd<T: Real>(m: &Matrix2<T>) -> Result<(), ReconError> {
    let tol = T::lit(1e-12);
    let scale = m.amax().max(T::one());
    let asymmetric = (m[(0, 1)] - m[(1, 0)]).abs() > tol * scale;
    if asymmetric || m[(0, 0)] <= T::zero() || m.determinant() < -tol * scale * scale {
        return Err(ReconError::NotSpd);
    }
    Ok(())
}

/// Squared 2-Wasserstein distance between two 2D Gaussians:
/// `|mu1 - mu2|^2 + tr(S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2)`.
pub fn wasserstein2<T: Real>(g1: &Gaussian2<T>, g2: &Gaussian2<T>) -> Result<T, ReconError> {
    check_spd(&g1.cov)?;
    check_spd(&g2.cov)?;
    Ok(wasserstein2_unchecked(g1, g2))
}

pub(crate) fn wasserstein2_unchecked<T: Real>(g1: &Gaussian2<T>, g2: &Gaussian2<T>) -> T {
    let d = g1.mean - g2.mean;
    (d.norm_squared() + bures_term(&g1.cov, &g2.cov)).max(T::zero())
}

/// Covariance part of the distance, clamped at zero against round-off.
pub(crate) fn bures_term<T: Real>(s1: &Matrix2<T>, s2: &Matrix2<T>) -> T {
    let r1 = sqrtm_spd2(s1);
    let cross = r1 * s2 * r1;
    let cross = (cross + cross.transpose()) / T::lit(2.0);
    // tr(sqrt(M)) for 2x2 SPD is sqrt(tr M + 2 sqrt(det M)).
    let tr_sqrt = (cross.trace() + T::lit(2.0) * cross.determinant().max(T::zero()).sqrt()).max(T::zero()).sqrt();
    (s1.trace() + s2.trace() - T::lit(2.0) * tr_sqrt).max(T::zero())
}
