//! Ellipsoidal object mapping and object-aided relocalization.
//!
//! The geometric core (`geometry`, `assoc`, `recon`, `objmap`, `reloc`) is
//! generic over the scalar type; the simulator, file formats and metrics
//! work in `f64`. The aliases below fix the scalar for the common case.

pub mod assoc;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod num;
pub mod objmap;
pub mod recon;
pub mod reloc;
pub mod sim;

pub use num::Real;

pub type Ellipsoid = geometry::Ellipsoid<f64>;
pub type Ellipse = geometry::Ellipse<f64>;
pub type BBox = geometry::BBox<f64>;
pub type Pose = geometry::Pose<f64>;
pub type CameraIntrinsics = geometry::CameraIntrinsics<f64>;
pub type Detection = assoc::Detection<f64>;
pub type Observation = recon::Observation<f64>;
pub type ObjectMap = objmap::ObjectMap<f64>;
pub type FrameData = objmap::FrameData<f64>;
pub type RelocQuery = reloc::RelocQuery<f64>;
pub type RelocResult = reloc::RelocResult<f64>;
