//! Projective geometry of ellipsoids and ellipses in dual space.
//!
//! Ellipsoids map to 4x4 dual quadrics `Q*`, image ellipses to 3x3 dual
//! conics `C*`, and a camera `P = K [R | t]` links them through
//! `C* = P Q* P^T`. Dual forms are normalized so that their last diagonal
//! entry is -1; the center then sits in the last column with a minus sign.

mod bbox;
mod camera;
mod ellipse;
mod ellipsoid;

pub use bbox::{bbox_iou, BBox};
pub use camera::{orthonormalize, rotation_angle, CameraIntrinsics, Pose, ProjectionMatrix};
pub use ellipse::{
    dual_conic_to_ellipse, ellipse_bbox, ellipse_from_bbox, ellipse_to_gaussian, DualConic, Ellipse, Gaussian2,
};
pub use ellipsoid::{
    aligned_box_iou_3d, dual_quadric_to_ellipsoid, ellipsoid_to_dual_quadric, point_in_ellipsoid,
    project_ellipsoid, DualQuadric, Ellipsoid,
};

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum GeometryError {
    #[error("quadric is not a proper ellipsoid")]
    NotAnEllipsoid,
    #[error("conic is not a proper ellipse")]
    NotAnEllipse,
    #[error("projection of the ellipsoid is not an ellipse in front of the camera")]
    DegenerateProjection,
    #[error("box corners are not ordered")]
    InvalidBox,
    #[error("ellipse axes must be positive and finite")]
    InvalidEllipse,
    #[error("ellipsoid axes must be positive and its rotation orthonormal")]
    InvalidEllipsoid,
    #[error("intrinsics must have positive focal lengths and image size")]
    InvalidIntrinsics,
}
