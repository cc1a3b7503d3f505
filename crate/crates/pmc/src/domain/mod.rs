//! Domain geometry: closed boundary curves, planar domains with holes,
//! collar coordinates near the boundary, and triangulation.

mod collar;
mod curve;
#[allow(clippy::module_inception)]
mod domain;
mod mesh;
mod spline;

pub use collar::{CollarCoords, CollarMap};
pub use curve::{BoundaryCurve, CurveFrame, Orientation};
pub use domain::{BoundaryPoint, CurveId, Domain};
pub use mesh::{BoundaryAttach, BoundaryEdge, CollarGrading, Mesh, MeshOptions};
pub use spline::SplineCurve;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("closed curve needs at least 3 distinct nodes, got {0}")]
    TooFewNodes(usize),
    #[error("stored tangent has length {0}, expected a unit vector")]
    NonUnitTangent(f64),
    #[error("turning angle between consecutive nodes reaches {0} rad; curve is under-resolved")]
    TurningTooLarge(f64),
    #[error("curve intersects itself")]
    SelfIntersection,
    #[error("Holder exponent {0} outside (0, 1]")]
    InvalidAlpha(f64),
    #[error("hole {0} is not strictly inside the outer boundary")]
    HoleOutsideOuter(usize),
    #[error("holes {0} and {1} overlap")]
    HolesOverlap(usize, usize),
    #[error("inward offset {eps} exceeds half the estimated reach {reach}")]
    OffsetBeyondReach { eps: f64, reach: f64 },
    #[error("collar width {width} exceeds the bi-Lipschitz limit {limit}")]
    CollarTooWide { width: f64, limit: f64 },
    #[error("point at signed distance {d} lies outside the collar of width {width}")]
    OutsideCollar { d: f64, width: f64 },
    #[error("triangulation failed: {0}")]
    MeshFailure(String),
}
