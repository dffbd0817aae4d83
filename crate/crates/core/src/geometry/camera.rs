use nalgebra::{Matrix3, Matrix3x4, Rotation3, UnitQuaternion, Vector2, Vector3};

use super::GeometryError;
use crate::num::Real;

/// Pinhole intrinsics without distortion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics<T: Real> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: u32,
    pub height: u32,
}

impl<T: Real> CameraIntrinsics<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T, width: u32, height: u32) -> Result<Self, GeometryError> {
        if !(fx > T::zero() && fy > T::zero()) || width == 0 || height == 0 {
            return Err(GeometryError::InvalidIntrinsics);
        }
        Ok(Self { fx, fy, cx, cy, width, height })
    }

    pub fn k(&self) -> Matrix3<T> {
        let (z, o) = (T::zero(), T::one());
        Matrix3::new(self.fx, z, self.cx, z, self.fy, self.cy, z, z, o)
    }

    /// Pixel to normalized image coordinates, as a homogeneous ray `(x, y, 1)`.
    pub fn unproject(&self, pixel: &Vector2<T>) -> Vector3<T> {
        Vector3::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy, T::one())
    }

    /// Camera-frame point to pixel. Points with non-positive depth yield `None`.
    pub fn project(&self, p_cam: &Vector3<T>) -> Option<Vector2<T>> {
        if p_cam.z <= T::zero() {
            return None;
        }
        Some(Vector2::new(
            self.fx * p_cam.x / p_cam.z + self.cx,
            self.fy * p_cam.y / p_cam.z + self.cy,
        ))
    }

    pub fn contains(&self, pixel: &Vector2<T>) -> bool {
        pixel.x >= T::zero()
            && pixel.y >= T::zero()
            && pixel.x <= T::lit(self.width as f64)
            && pixel.y <= T::lit(self.height as f64)
    }
}

/// Rigid world-to-camera transform: `x_cam = R * x_world + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose<T: Real> {
    pub rotation: Matrix3<T>,
    pub translation: Vector3<T>,
}

impl<T: Real> Pose<T> {
    pub fn new(rotation: Matrix3<T>, translation: Vector3<T>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity(), Vector3::zeros())
    }

    /// Builds the world-to-camera pose from a camera orientation and position
    /// expressed in the world frame.
    pub fn from_camera_to_world(rotation_cw: Matrix3<T>, center: Vector3<T>) -> Self {
        let rotation = rotation_cw.transpose();
        let translation = -(rotation * center);
        Self { rotation, translation }
    }

    /// Camera at `eye` looking at `target`; image y axis points away from `up`.
    pub fn look_at(eye: &Vector3<T>, target: &Vector3<T>, up: &Vector3<T>) -> Self {
        let z = (target - eye).normalize();
        let mut x = z.cross(up);
        if x.norm() < T::lit(1e-9) {
            // Looking along `up`; pick any perpendicular direction.
            let alt = if z.x.abs() < T::lit(0.9) { Vector3::x() } else { Vector3::y() };
            x = z.cross(&alt);
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let rotation_cw = Matrix3::from_columns(&[x, y, z]);
        Self::from_camera_to_world(rotation_cw, *eye)
    }

    pub fn transform(&self, x_world: &Vector3<T>) -> Vector3<T> {
        self.rotation * x_world + self.translation
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<T> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn rotation_cw(&self) -> Matrix3<T> {
        self.rotation.transpose()
    }

    pub fn projection(&self, intrinsics: &CameraIntrinsics<T>) -> ProjectionMatrix<T> {
        ProjectionMatrix::from_parts(&intrinsics.k(), self)
    }

    /// Left-multiplied increment: rotation `exp(omega) * R`, translation `exp(omega) * t + dt`.
    pub fn retract(&self, omega: &Vector3<T>, dt: &Vector3<T>) -> Self {
        let dr = Rotation3::new(*omega).into_inner();
        Self::new(dr * self.rotation, dr * self.translation + dt)
    }

    /// Geodesic angle between the two rotations (radians).
    pub fn rotation_angle_to(&self, other: &Self) -> T {
        rotation_angle(&(self.rotation.transpose() * other.rotation))
    }

    pub fn is_valid(&self, tol: T) -> bool {
        let rtr = self.rotation.transpose() * self.rotation;
        (rtr - Matrix3::identity()).amax() <= tol && (self.rotation.determinant() - T::one()).abs() <= tol
    }

    /// Camera-to-world orientation as a unit quaternion.
    pub fn orientation_cw(&self) -> UnitQuaternion<T> {
        UnitQuaternion::from_matrix(&self.rotation_cw())
    }
}

/// Angle of a rotation matrix, robust near 0 and pi.
pub fn rotation_angle<T: Real>(r: &Matrix3<T>) -> T {
    let cos = (r.trace() - T::one()) / T::lit(2.0);
    let skew = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let sin = skew.norm() / T::lit(2.0);
    sin.atan2(cos)
}

/// Projects the closest rotation matrix onto SO(3).
pub fn orthonormalize<T: Real>(m: &Matrix3<T>) -> Matrix3<T> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut r = u * v_t;
    if r.determinant() < T::zero() {
        let mut d = Matrix3::identity();
        d[(2, 2)] = -T::one();
        r = u * d * v_t;
    }
    r
}

/// `P = K [R | t]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionMatrix<T: Real>(pub Matrix3x4<T>);

impl<T: Real> ProjectionMatrix<T> {
    pub fn from_parts(k: &Matrix3<T>, pose: &Pose<T>) -> Self {
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&pose.rotation);
        rt.set_column(3, &pose.translation);
        Self(k * rt)
    }

    pub fn matrix(&self) -> &Matrix3x4<T> {
        &self.0
    }

    /// Depth-like value of a world point: positive in front of the camera when `K[2][2] > 0`.
    pub fn depth(&self, x: &Vector3<T>) -> T {
        let p = &self.0;
        p[(2, 0)] * x.x + p[(2, 1)] * x.y + p[(2, 2)] * x.z + p[(2, 3)]
    }

    pub fn project(&self, x: &Vector3<T>) -> Option<Vector2<T>> {
        let h = self.0 * x.push(T::one());
        if h.z <= T::zero() {
            return None;
        }
        Some(Vector2::new(h.x / h.z, h.y / h.z))
    }
}
