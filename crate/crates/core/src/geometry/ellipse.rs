use nalgebra::{Matrix2, Matrix3, Vector2};

use super::{BBox, GeometryError};
use crate::num::Real;

/// Image ellipse with semi-axes `major >= minor > 0` and orientation of the
/// major axis in `(-pi/2, pi/2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse<T: Real> {
    pub center: Vector2<T>,
    pub axes: Vector2<T>,
    pub angle: T,
}

/// Wraps an axis orientation into `(-pi/2, pi/2]`.
pub(crate) fn wrap_half_turn<T: Real>(angle: T) -> T {
    let pi = T::pi();
    let half = T::frac_pi_2();
    let wrapped = angle - pi * ((angle - half) / pi).ceil();
    // ceil can land on the open end through rounding
    if wrapped <= -half {
        wrapped + pi
    } else {
        wrapped
    }
}

impl<T: Real> Ellipse<T> {
    /// Builds a canonical ellipse: axes are sorted and the angle follows the major axis.
    pub fn new(center: Vector2<T>, a: T, b: T, angle: T) -> Result<Self, GeometryError> {
        if !(a > T::zero() && b > T::zero()) || !angle.is_finite() {
            return Err(GeometryError::InvalidEllipse);
        }
        let (major, minor, angle) = if b > a { (b, a, angle + T::frac_pi_2()) } else { (a, b, angle) };
        let angle = if major == minor { T::zero() } else { wrap_half_turn(angle) };
        Ok(Self { center, axes: Vector2::new(major, minor), angle })
    }

    pub fn major(&self) -> T {
        self.axes.x
    }

    pub fn minor(&self) -> T {
        self.axes.y
    }

    fn rotation(&self) -> Matrix2<T> {
        let (s, c) = self.angle.sin_cos();
        Matrix2::new(c, -s, s, c)
    }

    /// `R(angle) diag(major^2, minor^2) R(angle)^T`.
    pub fn shape_matrix(&self) -> Matrix2<T> {
        let r = self.rotation();
        let d = Matrix2::new(self.axes.x * self.axes.x, T::zero(), T::zero(), self.axes.y * self.axes.y);
        let m = r * d * r.transpose();
        // exact symmetry
        let off = (m[(0, 1)] + m[(1, 0)]) / T::lit(2.0);
        Matrix2::new(m[(0, 0)], off, off, m[(1, 1)])
    }

    pub fn to_dual_conic(&self) -> DualConic<T> {
        let s = self.shape_matrix();
        let c = self.center;
        let mut m = Matrix3::zeros();
        m.fixed_view_mut::<2, 2>(0, 0).copy_from(&(s - c * c.transpose()));
        m[(0, 2)] = -c.x;
        m[(1, 2)] = -c.y;
        m[(2, 0)] = -c.x;
        m[(2, 1)] = -c.y;
        m[(2, 2)] = -T::one();
        DualConic(m)
    }

    /// Tight axis-aligned box enclosing the ellipse.
    pub fn bbox(&self) -> BBox<T> {
        let (s, c) = self.angle.sin_cos();
        let (a2, b2) = (self.axes.x * self.axes.x, self.axes.y * self.axes.y);
        let hw = (a2 * c * c + b2 * s * s).sqrt();
        let hh = (a2 * s * s + b2 * c * c).sqrt();
        BBox {
            xmin: self.center.x - hw,
            ymin: self.center.y - hh,
            xmax: self.center.x + hw,
            ymax: self.center.y + hh,
        }
    }

    /// Gaussian reading: mean at the center, covariance equal to the shape matrix.
    pub fn to_gaussian(&self) -> Gaussian2<T> {
        Gaussian2 { mean: self.center, cov: self.shape_matrix() }
    }
}

/// Ellipse inscribed in a box, axis-aligned.
pub fn ellipse_from_bbox<T: Real>(b: &BBox<T>) -> Ellipse<T> {
    let two = T::lit(2.0);
    let (hw, hh) = (b.width() / two, b.height() / two);
    let center = b.center();
    if hh > hw {
        Ellipse { center, axes: Vector2::new(hh, hw), angle: T::frac_pi_2() }
    } else {
        Ellipse { center, axes: Vector2::new(hw, hh), angle: T::zero() }
    }
}

pub fn ellipse_bbox<T: Real>(e: &Ellipse<T>) -> BBox<T> {
    e.bbox()
}

pub fn ellipse_to_gaussian<T: Real>(e: &Ellipse<T>) -> Gaussian2<T> {
    e.to_gaussian()
}

/// 2D Gaussian `N(mean, cov)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian2<T: Real> {
    pub mean: Vector2<T>,
    pub cov: Matrix2<T>,
}

/// Dual conic `C*` (3x3 symmetric).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualConic<T: Real>(pub Matrix3<T>);

impl<T: Real> DualConic<T> {
    pub fn matrix(&self) -> &Matrix3<T> {
        &self.0
    }

    /// Scales so that the (2,2) entry is -1; `None` when that entry vanishes.
    pub fn normalized(&self) -> Option<Self> {
        let s = -self.0[(2, 2)];
        if s.abs() <= T::eps() * self.0.amax() || s == T::zero() {
            return None;
        }
        Some(Self(self.0 / s))
    }

    /// Center and centered shape block of the normalized conic.
    fn center_and_shape(&self) -> Result<(Vector2<T>, Matrix2<T>), GeometryError> {
        let n = self.normalized().ok_or(GeometryError::NotAnEllipse)?.0;
        let c = Vector2::new(-n[(0, 2)], -n[(1, 2)]);
        let off = (n[(0, 1)] + n[(1, 0)]) / T::lit(2.0);
        let s = Matrix2::new(n[(0, 0)] + c.x * c.x, off + c.x * c.y, off + c.x * c.y, n[(1, 1)] + c.y * c.y);
        if !(s[(0, 0)] > T::zero() && s.determinant() > T::zero()) {
            return Err(GeometryError::NotAnEllipse);
        }
        Ok((c, s))
    }

    pub fn to_ellipse(&self) -> Result<Ellipse<T>, GeometryError> {
        let (center, s) = self.center_and_shape()?;
        let (p, q, r) = (s[(0, 0)], s[(0, 1)], s[(1, 1)]);
        let two = T::lit(2.0);
        let mean = (p + r) / two;
        let dev = (((p - r) / two).powi(2) + q * q).sqrt();
        let (l1, l2) = (mean + dev, mean - dev);
        if l2 <= T::zero() {
            return Err(GeometryError::NotAnEllipse);
        }
        let angle = if dev == T::zero() { T::zero() } else { (two * q).atan2(p - r) / two };
        Ellipse::new(center, l1.sqrt(), l2.sqrt(), angle).map_err(|_| GeometryError::NotAnEllipse)
    }

    /// Tight box of the ellipse, read directly off the shape block: the
    /// half-extents are the square roots of its diagonal.
    pub fn bbox(&self) -> Result<BBox<T>, GeometryError> {
        let (c, s) = self.center_and_shape()?;
        let (hw, hh) = (s[(0, 0)].sqrt(), s[(1, 1)].sqrt());
        BBox::new(c.x - hw, c.y - hh, c.x + hw, c.y + hh).map_err(|_| GeometryError::NotAnEllipse)
    }

    /// Gaussian reading without going through the eigen decomposition.
    pub fn to_gaussian(&self) -> Result<Gaussian2<T>, GeometryError> {
        let (mean, cov) = self.center_and_shape()?;
        Ok(Gaussian2 { mean, cov })
    }
}

pub fn dual_conic_to_ellipse<T: Real>(c: &DualConic<T>) -> Result<Ellipse<T>, GeometryError> {
    c.to_ellipse()
}
