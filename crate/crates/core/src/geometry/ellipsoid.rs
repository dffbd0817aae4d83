use nalgebra::{Matrix3, Matrix4, Vector3};

use super::{DualConic, GeometryError, ProjectionMatrix};
use crate::num::Real;

/// Ellipsoid given by center, semi-axes and orientation (columns of
/// `rotation` are the principal directions in world coordinates).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipsoid<T: Real> {
    pub center: Vector3<T>,
    pub axes: Vector3<T>,
    pub rotation: Matrix3<T>,
}

impl<T: Real> Ellipsoid<T> {
    pub fn new(center: Vector3<T>, axes: Vector3<T>, rotation: Matrix3<T>) -> Result<Self, GeometryError> {
        if axes.iter().any(|a| !(*a > T::zero())) {
            return Err(GeometryError::InvalidEllipsoid);
        }
        let rtr = rotation.transpose() * rotation;
        let tol = T::lit(1e-6);
        if (rtr - Matrix3::identity()).amax() > tol || (rotation.determinant() - T::one()).abs() > tol {
            return Err(GeometryError::InvalidEllipsoid);
        }
        Ok(Self { center, axes, rotation })
    }

    pub fn sphere(center: Vector3<T>, radius: T) -> Result<Self, GeometryError> {
        Self::new(center, Vector3::repeat(radius), Matrix3::identity())
    }

    /// `R diag(axes^2) R^T`.
    pub fn shape_matrix(&self) -> Matrix3<T> {
        let d = Matrix3::from_diagonal(&self.axes.component_mul(&self.axes));
        let m = self.rotation * d * self.rotation.transpose();
        (m + m.transpose()) / T::lit(2.0)
    }

    pub fn to_dual_quadric(&self) -> DualQuadric<T> {
        let c = self.center;
        let s = self.shape_matrix() - c * c.transpose();
        let mut q = Matrix4::zeros();
        q.fixed_view_mut::<3, 3>(0, 0).copy_from(&s);
        for i in 0..3 {
            q[(i, 3)] = -c[i];
            q[(3, i)] = -c[i];
        }
        q[(3, 3)] = -T::one();
        DualQuadric(q)
    }

    pub fn contains(&self, x: &Vector3<T>) -> bool {
        let local = self.rotation.transpose() * (x - self.center);
        let scaled = local.component_div(&self.axes);
        scaled.norm_squared() <= T::one()
    }

    /// World-axis-aligned bounding box as `(min, max)` corners.
    pub fn aabb(&self) -> (Vector3<T>, Vector3<T>) {
        let mut half = Vector3::zeros();
        for i in 0..3 {
            let mut acc = T::zero();
            for j in 0..3 {
                let v = self.rotation[(i, j)] * self.axes[j];
                acc += v * v;
            }
            half[i] = acc.sqrt();
        }
        (self.center - half, self.center + half)
    }

    pub fn max_axis(&self) -> T {
        self.axes.max()
    }
}

/// Dual quadric `Q*` (4x4 symmetric).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualQuadric<T: Real>(pub Matrix4<T>);

impl<T: Real> DualQuadric<T> {
    pub fn matrix(&self) -> &Matrix4<T> {
        &self.0
    }

    /// Scales so that the (3,3) entry is -1; `None` when that entry vanishes.
    pub fn normalized(&self) -> Option<Self> {
        let s = -self.0[(3, 3)];
        if s.abs() <= T::eps() * self.0.amax() || s == T::zero() {
            return None;
        }
        Some(Self(self.0 / s))
    }

    /// Center of the normalized quadric.
    pub fn center(&self) -> Option<Vector3<T>> {
        let n = self.normalized()?.0;
        Some(Vector3::new(-n[(0, 3)], -n[(1, 3)], -n[(2, 3)]))
    }

    pub fn to_ellipsoid(&self) -> Result<Ellipsoid<T>, GeometryError> {
        let n = self.normalized().ok_or(GeometryError::NotAnEllipsoid)?.0;
        let c = Vector3::new(-n[(0, 3)], -n[(1, 3)], -n[(2, 3)]);
        let block = n.fixed_view::<3, 3>(0, 0).into_owned();
        let s = block + c * c.transpose();
        let s = (s + s.transpose()) / T::lit(2.0);
        let eig = s.symmetric_eigen();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap_or(std::cmp::Ordering::Equal));
        let mut axes = Vector3::zeros();
        let mut rotation = Matrix3::zeros();
        for (k, &i) in order.iter().enumerate() {
            let lambda = eig.eigenvalues[i];
            if !(lambda > T::zero()) {
                return Err(GeometryError::NotAnEllipsoid);
            }
            axes[k] = lambda.sqrt();
            rotation.set_column(k, &eig.eigenvectors.column(i));
        }
        if rotation.determinant() < T::zero() {
            let flipped = -rotation.column(2);
            rotation.set_column(2, &flipped);
        }
        Ok(Ellipsoid { center: c, axes, rotation })
    }

    /// `P Q* P^T`, normalized.
    ///
    /// Fails when the principal plane of the camera cuts the quadric (camera
    /// inside or object straddling the image plane) or when the object lies
    /// behind the camera.
    pub fn project(&self, p: &ProjectionMatrix<T>) -> Result<DualConic<T>, GeometryError> {
        let q = self.normalized().ok_or(GeometryError::DegenerateProjection)?.0;
        let pm = p.matrix();
        let c = pm * q * pm.transpose();
        // (2,2) entry is the quadric evaluated on the principal plane: >= 0 means they meet.
        if !(c[(2, 2)] < T::zero()) {
            return Err(GeometryError::DegenerateProjection);
        }
        let center = Vector3::new(-q[(0, 3)], -q[(1, 3)], -q[(2, 3)]);
        if p.depth(&center) <= T::zero() {
            return Err(GeometryError::DegenerateProjection);
        }
        let c = (c + c.transpose()) / T::lit(2.0);
        DualConic(c).normalized().ok_or(GeometryError::DegenerateProjection)
    }
}

pub fn ellipsoid_to_dual_quadric<T: Real>(e: &Ellipsoid<T>) -> DualQuadric<T> {
    e.to_dual_quadric()
}

pub fn dual_quadric_to_ellipsoid<T: Real>(q: &DualQuadric<T>) -> Result<Ellipsoid<T>, GeometryError> {
    q.to_ellipsoid()
}

pub fn project_ellipsoid<T: Real>(q: &DualQuadric<T>, p: &ProjectionMatrix<T>) -> Result<DualConic<T>, GeometryError> {
    q.project(p)
}

/// Boundary inclusive.
pub fn point_in_ellipsoid<T: Real>(x: &Vector3<T>, e: &Ellipsoid<T>) -> bool {
    e.contains(x)
}

/// IoU of the world-axis-aligned boxes of two ellipsoids.
pub fn aligned_box_iou_3d<T: Real>(a: &Ellipsoid<T>, b: &Ellipsoid<T>) -> T {
    let (amin, amax) = a.aabb();
    let (bmin, bmax) = b.aabb();
    let mut inter = T::one();
    for i in 0..3 {
        let d = amax[i].min(bmax[i]) - amin[i].max(bmin[i]);
        if d <= T::zero() {
            return T::zero();
        }
        inter *= d;
    }
    let vol = |lo: Vector3<T>, hi: Vector3<T>| (hi - lo).iter().fold(T::one(), |acc, v| acc * *v);
    let union = vol(amin, amax) + vol(bmin, bmax) - inter;
    (inter / union).min(T::one())
}
