//! Tubular coordinates (s, d) near one boundary curve: s is arclength along
//! the curve, d is signed distance with d > 0 on the domain side.

use crate::geom::{Mat2, Vec2};

use super::curve::BoundaryCurve;
use super::GeometryError;

/// Margin kept between the collar width and the radius of curvature so the
/// coordinate map stays bi-Lipschitz with metric factor in [1/2, 3/2].
const CURVATURE_MARGIN: f64 = 0.5;
/// Foot-point consistency tolerance, relative to the collar width.
const FOOT_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy)]
pub struct CollarCoords {
    pub s: f64,
    pub d: f64,
}

/// Coordinate map (s, d) -> curve(s) + d * inward_normal(s) on a band of
/// fixed width around one closed curve, together with its Jacobian data.
#[derive(Debug, Clone)]
pub struct CollarMap {
    curve: BoundaryCurve,
    width: f64,
}

impl CollarMap {
    pub fn new(curve: &BoundaryCurve, width: f64) -> Result<CollarMap, GeometryError> {
        let mut kappa_max: f64 = 0.0;
        let n = 4 * curve.nodes().len();
        for k in 0..n {
            let s = curve.len() * (k as f64) / (n as f64);
            kappa_max = kappa_max.max(curve.curvature(s).abs());
        }
        let limit = if kappa_max > 0.0 {
            CURVATURE_MARGIN / kappa_max
        } else {
            f64::INFINITY
        };
        if !(width > 0.0) || width > limit {
            return Err(GeometryError::CollarTooWide { width, limit });
        }
        Ok(CollarMap {
            curve: curve.clone(),
            width,
        })
    }

    pub fn curve(&self) -> &BoundaryCurve {
        &self.curve
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    /// Same curve, narrower band. Used when a construction shrinks its
    /// collar without re-estimating curvature bounds.
    pub fn with_width(&self, width: f64) -> Result<CollarMap, GeometryError> {
        if !(width > 0.0) || width > self.width {
            return Err(GeometryError::CollarTooWide {
                width,
                limit: self.width,
            });
        }
        Ok(CollarMap {
            curve: self.curve.clone(),
            width,
        })
    }

    pub fn from_collar(&self, c: CollarCoords) -> Vec2 {
        self.curve.pos(c.s) + self.curve.inward_normal(c.s) * c.d
    }

    /// Inverse map. Accepts signed distances in (-width, width); the band
    /// extends to both sides so charts can straddle the trace.
    pub fn to_collar(&self, p: Vec2) -> Result<CollarCoords, GeometryError> {
        self.to_collar_frame(p).map(|(c, _)| c)
    }

    /// Inverse map together with the frame at the foot point, for callers
    /// that go on to use the tangent or curvature there.
    pub fn to_collar_frame(
        &self,
        p: Vec2,
    ) -> Result<(CollarCoords, crate::domain::CurveFrame), GeometryError> {
        let (fr, dist) = self.curve.nearest_frame(p);
        let nu = fr.normal();
        let d = (p - fr.pos).dot(nu);
        if d.abs() >= self.width {
            return Err(GeometryError::OutsideCollar {
                d,
                width: self.width,
            });
        }
        // the nearest point must be the orthogonal foot of p
        let residual = (p - (fr.pos + nu * d)).norm();
        if residual > FOOT_TOL * self.width.max(dist) {
            return Err(GeometryError::OutsideCollar {
                d: dist,
                width: self.width,
            });
        }
        Ok((CollarCoords { s: fr.s, d }, fr))
    }

    /// Metric factor m(s, d) = 1 - curvature(s) * d; the length of the
    /// s-coordinate line at offset d relative to the curve itself.
    pub fn metric(&self, c: CollarCoords) -> f64 {
        1.0 - self.curve.curvature(c.s) * c.d
    }

    /// Jacobian of the forward map, columns (d x/d s, d x/d d).
    pub fn jacobian(&self, c: CollarCoords) -> Mat2 {
        let t = self.curve.tangent(c.s);
        let nu = t.perp();
        Mat2 {
            a: t * self.metric(c),
            b: nu,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::v2;

    #[test]
    fn disk_collar_roundtrip() {
        let c = BoundaryCurve::circle(Vec2::ZERO, 1.0, 96, true);
        let m = CollarMap::new(&c, 0.4).unwrap();
        let p = v2(0.7, 0.0);
        let cc = m.to_collar(p).unwrap();
        assert!((cc.d - 0.3).abs() < 1e-6);
        let back = m.from_collar(cc);
        assert!(back.dist(p) < 1e-8);
        // metric shrinks toward the disk center
        assert!((m.metric(cc) - 0.7).abs() < 1e-3);
        assert!((m.jacobian(cc).det() - 0.7).abs() < 1e-3);
    }

    #[test]
    fn hole_collar_metric_grows_inward() {
        let c = BoundaryCurve::circle(Vec2::ZERO, 0.2, 64, false);
        let m = CollarMap::new(&c, 0.09).unwrap();
        let p = v2(0.25, 0.0);
        let cc = m.to_collar(p).unwrap();
        assert!((cc.d - 0.05).abs() < 1e-6);
        // offset away from the hole center has longer circumference
        assert!((m.metric(cc) - 1.25).abs() < 1e-3);
    }

    #[test]
    fn width_limited_by_curvature() {
        let c = BoundaryCurve::circle(Vec2::ZERO, 0.2, 64, false);
        assert!(CollarMap::new(&c, 0.15).is_err());
        let m = CollarMap::new(&c, 0.09).unwrap();
        assert!(m.to_collar(v2(0.5, 0.0)).is_err());
    }
}
