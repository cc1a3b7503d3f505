//! Boundary curves: closed node/tangent data with a C^2 spline
//! reconstruction, traversed with the domain on the left.
//!
//! With that traversal convention the left normal is the inward normal and
//! the signed curve curvature carries the boundary-curvature sign convention:
//! nonnegative on convex outer boundaries, negative on hole boundaries.

use crate::geom::{wrap_periodic, Vec2};

use super::spline::SplineCurve;
use super::GeometryError;

/// Unit-tangent tolerance when validating stored tangent rows.
const TANGENT_UNIT_TOL: f64 = 1e-6;
/// Injectivity check resolution (samples per node interval).
const INJECTIVITY_SAMPLES_PER_SEG: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    /// Counterclockwise traversal: used by outer boundaries (domain on left).
    Ccw,
    /// Clockwise traversal: used by hole boundaries (domain on left).
    Cw,
}

#[derive(Debug, Clone)]
pub struct BoundaryCurve {
    nodes: Vec<Vec2>,
    tangents: Vec<Vec2>,
    /// cumulative arclength per node
    arclength: Vec<f64>,
    orientation: Orientation,
    spline: SplineCurve,
}

/// Curve data at one point, computed with a single parameter inversion.
#[derive(Debug, Clone, Copy)]
pub struct CurveFrame {
    pub s: f64,
    pub pos: Vec2,
    pub tangent: Vec2,
    pub kappa: f64,
}

impl CurveFrame {
    pub fn normal(&self) -> Vec2 {
        self.tangent.perp()
    }
}

impl BoundaryCurve {
    /// Build from distinct nodes of a closed polygon (an equal first/last
    /// pair is deduplicated). Tangents are derived from the spline.
    pub fn from_nodes(mut nodes: Vec<Vec2>) -> Result<BoundaryCurve, GeometryError> {
        if nodes.len() >= 2 {
            let closing = nodes[0].dist(*nodes.last().unwrap());
            let scale: f64 = nodes.iter().map(|p| p.norm()).fold(0.0, f64::max).max(1.0);
            if closing < 1e-9 * scale {
                nodes.pop();
            }
        }
        if nodes.len() < 3 {
            return Err(GeometryError::TooFewNodes(nodes.len()));
        }
        let spline = SplineCurve::new(&nodes);
        let n = nodes.len();
        let tangents: Vec<Vec2> = (0..n)
            .map(|i| spline.tangent_s(spline.arclength_at_node(i)))
            .collect();
        for w in tangents.windows(2) {
            check_turning(w[0], w[1])?;
        }
        check_turning(tangents[n - 1], tangents[0])?;
        let area = spline_signed_area(&spline);
        let orientation = if area >= 0.0 {
            Orientation::Ccw
        } else {
            Orientation::Cw
        };
        let curve = BoundaryCurve {
            arclength: (0..n).map(|i| spline.arclength_at_node(i)).collect(),
            nodes,
            tangents,
            orientation,
            spline,
        };
        curve.check_injective()?;
        Ok(curve)
    }

    /// Build from file data carrying explicit tangent rows. The tangents are
    /// validated (unit length, turning below pi/2) and kept as metadata; the
    /// reconstruction interpolates the nodes with a C^2 periodic spline.
    pub fn from_nodes_and_tangents(
        nodes: Vec<Vec2>,
        tangents: Vec<Vec2>,
    ) -> Result<BoundaryCurve, GeometryError> {
        let mut stored = tangents;
        if stored.len() == nodes.len() && nodes.len() >= 2 {
            let scale: f64 = nodes.iter().map(|p| p.norm()).fold(0.0, f64::max).max(1.0);
            if nodes[0].dist(*nodes.last().unwrap()) < 1e-9 * scale {
                stored.pop();
            }
        }
        for t in &stored {
            if (t.norm() - 1.0).abs() > TANGENT_UNIT_TOL {
                return Err(GeometryError::NonUnitTangent(t.norm()));
            }
        }
        for w in stored.windows(2) {
            check_turning(w[0], w[1])?;
        }
        if let (Some(first), Some(last)) = (stored.first(), stored.last()) {
            if stored.len() > 1 {
                check_turning(*last, *first)?;
            }
        }
        BoundaryCurve::from_nodes(nodes)
    }

    /// Reverse the traversal direction (flips orientation).
    pub fn reversed(&self) -> BoundaryCurve {
        let mut nodes = self.nodes.clone();
        nodes[1..].reverse();
        BoundaryCurve::from_nodes(nodes).expect("reversal preserves validity")
    }

    /// Circle helper; `ccw` chooses traversal direction.
    pub fn circle(center: Vec2, r: f64, n: usize, ccw: bool) -> BoundaryCurve {
        let nodes: Vec<Vec2> = (0..n)
            .map(|i| {
                let sign = if ccw { 1.0 } else { -1.0 };
                let a = sign * 2.0 * std::f64::consts::PI * (i as f64) / (n as f64);
                center + Vec2 { x: r * a.cos(), y: r * a.sin() }
            })
            .collect();
        BoundaryCurve::from_nodes(nodes).expect("circle nodes are valid")
    }

    /// Axis-aligned ellipse helper (counterclockwise).
    pub fn ellipse(center: Vec2, a: f64, b: f64, n: usize) -> BoundaryCurve {
        let nodes: Vec<Vec2> = (0..n)
            .map(|i| {
                let th = 2.0 * std::f64::consts::PI * (i as f64) / (n as f64);
                center + Vec2 { x: a * th.cos(), y: b * th.sin() }
            })
            .collect();
        BoundaryCurve::from_nodes(nodes).expect("ellipse nodes are valid")
    }

    fn check_injective(&self) -> Result<(), GeometryError> {
        let n = self.nodes.len() * INJECTIVITY_SAMPLES_PER_SEG;
        let len = self.len();
        let pts: Vec<Vec2> = (0..n)
            .map(|i| self.pos(len * (i as f64) / (n as f64)))
            .collect();
        let step = len / (n as f64);
        for i in 0..n {
            for j in (i + 1)..n {
                let ds = (j - i).min(n - (j - i)) as f64 * step;
                if ds > 3.0 * step && pts[i].dist(pts[j]) < 0.5 * step {
                    return Err(GeometryError::SelfIntersection);
                }
            }
        }
        Ok(())
    }

    pub fn nodes(&self) -> &[Vec2] {
        &self.nodes
    }

    pub fn tangents(&self) -> &[Vec2] {
        &self.tangents
    }

    pub fn node_arclengths(&self) -> &[f64] {
        &self.arclength
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn len(&self) -> f64 {
        self.spline.total_len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn pos(&self, s: f64) -> Vec2 {
        self.spline.pos_s(s)
    }

    pub fn tangent(&self, s: f64) -> Vec2 {
        self.spline.tangent_s(s)
    }

    /// Inward normal (left of the traversal direction).
    pub fn inward_normal(&self, s: f64) -> Vec2 {
        self.tangent(s).perp()
    }

    /// Signed curvature in the domain convention (left-traversal signed
    /// curve curvature).
    pub fn curvature(&self, s: f64) -> f64 {
        self.spline.curvature_s(s)
    }

    /// Position, tangent and curvature at arclength s.
    pub fn frame(&self, s: f64) -> CurveFrame {
        let t = self.spline.t_of_s(s);
        self.frame_from_t(t, self.wrap_s(s))
    }

    fn frame_from_t(&self, t: f64, s: f64) -> CurveFrame {
        let d1 = self.spline.d1(t);
        let d2 = self.spline.d2(t);
        let n1 = d1.norm();
        CurveFrame {
            s,
            pos: self.spline.eval(t),
            tangent: d1 * (1.0 / n1),
            kappa: d1.cross(d2) / (n1 * n1 * n1),
        }
    }

    /// Nearest point with full frame data: (frame, unsigned distance).
    pub fn nearest_frame(&self, p: Vec2) -> (CurveFrame, f64) {
        let (t, s, d) = self.spline.nearest(p);
        (self.frame_from_t(t, s), d)
    }

    /// Nearest point: (s, distance).
    pub fn nearest(&self, p: Vec2) -> (f64, f64) {
        let (_, s, d) = self.spline.nearest(p);
        (s, d)
    }

    /// Signed area enclosed by the traversal (positive for Ccw).
    pub fn signed_area(&self) -> f64 {
        spline_signed_area(&self.spline)
    }

    pub fn wrap_s(&self, s: f64) -> f64 {
        wrap_periodic(s, self.len())
    }
}

fn check_turning(a: Vec2, b: Vec2) -> Result<(), GeometryError> {
    let cosang = a.dot(b) / (a.norm() * b.norm());
    if cosang <= 0.0 {
        return Err(GeometryError::TurningTooLarge(cosang.acos()));
    }
    Ok(())
}

fn spline_signed_area(spline: &SplineCurve) -> f64 {
    // shoelace over a dense sampling of the spline (Green's theorem)
    let n = spline.node_count() * 8;
    let len = spline.total_len();
    let mut area = 0.0;
    let mut prev = spline.pos_s(0.0);
    for i in 1..=n {
        let q = spline.pos_s(len * (i as f64) / (n as f64));
        area += 0.5 * prev.cross(q);
        prev = q;
    }
    area
}
