//! Divergence-free extension of boundary vector data into the collar of a
//! closed curve, with residual gauges.
//!
//! On the periodic half-strip {(y1, y2): y2 >= 0} the field
//!
//! ```text
//! Xh1(y) = sum_q a_q g1(y1 - y2 xi_q)
//! Xh2(y) = g2(y1) - sum_q b_q g1(y1 - y2 xi_q)
//! ```
//!
//! with a_q = -xi_q b_q has pointwise divergence
//! `sum_q (a_q + xi_q b_q) g1'(...) = 0` identically, for any nodes and
//! weights. Choosing b_q as a symmetric Gauss rule applied to the
//! derivative of a unit-mass bump makes the trace at y2 = 0 reproduce
//! (g1, g2) after normalization: `sum a_q = 1` and `sum b_q = 0`. The
//! collar chart then carries the field into the plane with the
//! Jacobian-weighted push X = Xh1 t + (Xh2 / m) nu (m the collar metric
//! factor), which preserves weak divergence exactly for bi-Lipschitz
//! charts. The extension is therefore solenoidal in any test-function
//! pairing, up to quadrature of the pairing itself.

use std::sync::Arc;

use thiserror::Error;

use crate::domain::{CollarCoords, CollarMap, GeometryError};
use crate::geom::{smootherstep, v2, wrap_periodic, Vec2};
use crate::quad;

/// Default Gauss order for the kernel rule.
pub const KERNEL_ORDER: usize = 64;
/// The refinement gate compares against a rule finer by this factor.
const GATE_REFINE_NUM: usize = 3;
const GATE_REFINE_DEN: usize = 2;
/// Probe disagreement above this relative level fails construction.
const GATE_REL_TOL: f64 = 1e-3;
const GATE_PROBES_S: usize = 24;
const GATE_PROBES_D: usize = 6;

#[derive(Debug, Error)]
pub enum DivFreeError {
    #[error("kernel rule under-resolves the trace data: probe disagreement {diff:.3e} over scale {scale:.3e}")]
    QuadratureUnderResolved { diff: f64, scale: f64 },
    #[error(transparent)]
    Chart(#[from] GeometryError),
}

/// Unit-mass even C-infinity bump supported on [-1, 1].
#[derive(Debug, Clone)]
pub struct Bump {
    norm: f64,
}

fn raw_bump(x: f64) -> f64 {
    if x.abs() < 1.0 {
        (-1.0 / (1.0 - x * x)).exp()
    } else {
        0.0
    }
}

impl Bump {
    pub fn new() -> Bump {
        let raw = quad::integrate(-1.0, 1.0, 256, raw_bump);
        Bump { norm: 1.0 / raw }
    }

    pub fn phi(&self, x: f64) -> f64 {
        self.norm * raw_bump(x)
    }

    pub fn dphi(&self, x: f64) -> f64 {
        if x.abs() < 1.0 {
            let q = 1.0 - x * x;
            self.norm * raw_bump(x) * (-2.0 * x) / (q * q)
        } else {
            0.0
        }
    }
}

impl Default for Bump {
    fn default() -> Self {
        Bump::new()
    }
}

type ScalarFn = dyn Fn(f64) -> f64 + Send + Sync;

/// The discrete mollifier field on a periodic half-strip.
pub struct HalfSpaceField {
    period: f64,
    g1: Arc<ScalarFn>,
    g2: Arc<ScalarFn>,
    /// (xi_q, a_q, b_q) with a_q = -xi_q b_q exactly.
    pairs: Vec<(f64, f64, f64)>,
}

impl HalfSpaceField {
    /// `g1`, `g2` are the period-periodic trace components (callers wrap or
    /// pass periodic closures; arguments outside [0, period) are wrapped
    /// here before evaluation).
    pub fn new(period: f64, g1: Arc<ScalarFn>, g2: Arc<ScalarFn>, order: usize) -> HalfSpaceField {
        let bump = Bump::new();
        let (nodes, weights) = quad::gauss_legendre(order);
        // exact +/- symmetry of the nodes keeps sum b_q = 0 to rounding
        let mut sym: Vec<(f64, f64)> = Vec::with_capacity(order);
        for q in 0..order / 2 {
            let xi = 0.5 * (nodes[order - 1 - q] - nodes[q]);
            let w = 0.5 * (weights[q] + weights[order - 1 - q]);
            sym.push((-xi, w));
            sym.push((xi, w));
        }
        if order % 2 == 1 {
            sym.push((0.0, weights[order / 2]));
        }
        sym.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let c_n: f64 = sym.iter().map(|&(xi, w)| w * (-xi) * bump.dphi(xi)).sum();
        let pairs = sym
            .iter()
            .map(|&(xi, w)| {
                let b = w * bump.dphi(xi) / c_n;
                (xi, -xi * b, b)
            })
            .collect();
        HalfSpaceField {
            period,
            g1,
            g2,
            pairs,
        }
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn kernel_pairs(&self) -> &[(f64, f64, f64)] {
        &self.pairs
    }

    pub fn eval(&self, y1: f64, y2: f64) -> Vec2 {
        let mut x1 = 0.0;
        let mut k2 = 0.0;
        for &(xi, a, b) in &self.pairs {
            let gv = (self.g1)(wrap_periodic(y1 - y2 * xi, self.period));
            x1 += a * gv;
            k2 += b * gv;
        }
        v2(x1, (self.g2)(wrap_periodic(y1, self.period)) - k2)
    }

    /// sup |Xh| from the kernel l1 norms and sampled data bounds.
    pub fn sup_bound(&self) -> f64 {
        let n = 512;
        let mut s1: f64 = 0.0;
        let mut s2: f64 = 0.0;
        for i in 0..n {
            let y = self.period * (i as f64) / (n as f64);
            s1 = s1.max((self.g1)(y).abs());
            s2 = s2.max((self.g2)(y).abs());
        }
        let a1: f64 = self.pairs.iter().map(|p| p.1.abs()).sum();
        let b1: f64 = self.pairs.iter().map(|p| p.2.abs()).sum();
        ((s1 * a1).powi(2) + (s2 + s1 * b1).powi(2)).sqrt()
    }
}

/// Divergence-free field on the collar of one closed curve with prescribed
/// trace on the curve itself.
pub struct DivFreeField {
    collar: CollarMap,
    strip: HalfSpaceField,
}

impl DivFreeField {
    /// `g(s)` gives the trace in the moving frame: (tangential component,
    /// normal component) at arclength s. The field lives on the side the
    /// collar's positive distance points to.
    pub fn from_trace(
        collar: &CollarMap,
        g: impl Fn(f64) -> Vec2 + Send + Sync + 'static,
        order: usize,
    ) -> Result<DivFreeField, DivFreeError> {
        let g = Arc::new(g);
        let g1 = {
            let g = g.clone();
            Arc::new(move |s: f64| g(s).x) as Arc<ScalarFn>
        };
        let g2 = {
            let g = g.clone();
            Arc::new(move |s: f64| g(s).y) as Arc<ScalarFn>
        };
        let period = collar.curve().len();
        let strip = HalfSpaceField::new(period, g1.clone(), g2.clone(), order);
        let fine = HalfSpaceField::new(
            period,
            g1,
            g2,
            order * GATE_REFINE_NUM / GATE_REFINE_DEN,
        );
        // refinement gate: the two rules must agree on a probe grid
        let mut diff: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for i in 0..GATE_PROBES_S {
            let s = period * (i as f64) / (GATE_PROBES_S as f64);
            for j in 0..=GATE_PROBES_D {
                let d = collar.width() * (j as f64) / (GATE_PROBES_D as f64);
                let a = strip.eval(s, d);
                let b = fine.eval(s, d);
                diff = diff.max(a.dist(b));
                scale = scale.max(a.norm()).max(b.norm());
            }
        }
        if diff > GATE_REL_TOL * scale.max(1e-300) {
            return Err(DivFreeError::QuadratureUnderResolved { diff, scale });
        }
        Ok(DivFreeField {
            collar: collar.clone(),
            strip,
        })
    }

    pub fn collar(&self) -> &CollarMap {
        &self.collar
    }

    pub fn strip(&self) -> &HalfSpaceField {
        &self.strip
    }

    /// Field value in strip coordinates before the push.
    pub fn eval_strip(&self, s: f64, d: f64) -> Vec2 {
        self.strip.eval(s, d)
    }

    /// Field value at collar coordinates: Xh1 t + (Xh2 / m) nu.
    pub fn eval_collar(&self, c: CollarCoords) -> Vec2 {
        let xh = self.strip.eval(c.s, c.d);
        let fr = self.collar.curve().frame(c.s);
        let m = 1.0 - fr.kappa * c.d;
        fr.tangent * xh.x + fr.normal() * (xh.y / m)
    }

    /// Field value at a plane point inside the collar (positive side).
    pub fn eval(&self, x: Vec2) -> Result<Vec2, GeometryError> {
        let (c, fr) = self.collar.to_collar_frame(x)?;
        if c.d < 0.0 {
            return Err(GeometryError::OutsideCollar {
                d: c.d,
                width: self.collar.width(),
            });
        }
        let xh = self.strip.eval(c.s, c.d);
        let m = 1.0 - fr.kappa * c.d;
        Ok(fr.tangent * xh.x + fr.normal() * (xh.y / m))
    }

    /// The exact trace at arclength s, as a plane vector.
    pub fn trace(&self, s: f64) -> Vec2 {
        self.eval_collar(CollarCoords { s, d: 0.0 })
    }

    /// Uniform bound: strip bound divided by the worst metric factor.
    pub fn sup_bound(&self) -> f64 {
        2.0 * self.strip.sup_bound()
    }
}

/// Radial C^2 test bump: zeta = B(|x - center| / r) with B the reversed
/// smootherstep, so grad zeta vanishes at the center and the rim.
#[derive(Debug, Clone, Copy)]
pub struct TestBump {
    pub center: Vec2,
    pub r: f64,
}

impl TestBump {
    pub fn zeta(&self, x: Vec2) -> f64 {
        let u = x.dist(self.center) / self.r;
        if u >= 1.0 {
            0.0
        } else {
            1.0 - smootherstep(u)
        }
    }

    pub fn grad_zeta(&self, x: Vec2) -> Vec2 {
        let rel = x - self.center;
        let dist = rel.norm();
        let u = dist / self.r;
        if u >= 1.0 || dist == 0.0 {
            return Vec2::ZERO;
        }
        // d/du smootherstep = 30 u^2 (1-u)^2
        let du = -30.0 * u * u * (1.0 - u) * (1.0 - u);
        rel * (du / (self.r * dist))
    }

    /// Exact integral of zeta over the plane: 2 pi r^2 / 7.
    pub fn mass(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.r * self.r / 7.0
    }
}

#[derive(Debug, Clone)]
pub struct ResidualReport {
    /// Worst |integral X . grad zeta| / (sup|X| * l1 norm of grad zeta).
    pub max_rel: f64,
    /// Same quadrature applied to the position field (divergence 2),
    /// compared with its exact pairing -2 * mass: the quadrature floor.
    pub floor: f64,
}

/// Weak-divergence residual of `field` against a suite of bumps. Each bump
/// is integrated in polar coordinates about its center: Gauss with n
/// points radially (the rim is an interval endpoint, where the bump is
/// one-sidedly smooth) and a 2n-point periodic rule in angle. Returns Err
/// when the field is undefined somewhere a bump needs it.
pub fn weak_divergence_residual(
    field: &dyn Fn(Vec2) -> Option<Vec2>,
    bumps: &[TestBump],
    n: usize,
) -> Result<ResidualReport, GeometryError> {
    let (nodes, weights) = quad::gauss_legendre(n);
    let m = 2 * n;
    let mut max_rel: f64 = 0.0;
    let mut floor: f64 = 0.0;
    for bump in bumps {
        let mut pairing = 0.0;
        let mut pairing_pos = 0.0;
        let mut grad_l1 = 0.0;
        let mut sup: f64 = 0.0;
        for i in 0..n {
            let rho = 0.5 * bump.r * (nodes[i] + 1.0);
            let w_rho = 0.5 * bump.r * weights[i] * rho;
            for j in 0..m {
                let th = 2.0 * std::f64::consts::PI * (j as f64) / (m as f64);
                let x = bump.center + v2(th.cos(), th.sin()) * rho;
                let w = w_rho * 2.0 * std::f64::consts::PI / (m as f64);
                let gz = bump.grad_zeta(x);
                let xv = field(x).ok_or(GeometryError::OutsideCollar {
                    d: f64::NAN,
                    width: bump.r,
                })?;
                pairing += w * xv.dot(gz);
                pairing_pos += w * x.dot(gz);
                grad_l1 += w * gz.norm();
                sup = sup.max(xv.norm());
            }
        }
        let scale = (sup * grad_l1).max(1e-300);
        max_rel = max_rel.max(pairing.abs() / scale);
        let pos_sup = bump.center.norm() + bump.r;
        let pos_scale = (pos_sup * grad_l1).max(1e-300);
        floor = floor.max((pairing_pos + 2.0 * bump.mass()).abs() / pos_scale);
    }
    Ok(ResidualReport { max_rel, floor })
}

/// Sampled Holder seminorm sup |f(x)-f(y)| / |x-y|^alpha over point pairs.
pub fn holder_seminorm(
    field: &dyn Fn(Vec2) -> Option<Vec2>,
    pts: &[Vec2],
    alpha: f64,
) -> f64 {
    let vals: Vec<Option<Vec2>> = pts.iter().map(|&p| field(p)).collect();
    let mut sup: f64 = 0.0;
    for i in 0..pts.len() {
        let Some(a) = vals[i] else { continue };
        for j in (i + 1)..pts.len() {
            let Some(b) = vals[j] else { continue };
            let dist = pts[i].dist(pts[j]);
            if dist > 1e-12 {
                sup = sup.max(a.dist(b) / dist.powf(alpha));
            }
        }
    }
    sup
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::BoundaryCurve;
    use std::f64::consts::PI;

    #[test]
    fn bump_has_unit_mass() {
        let b = Bump::new();
        let coarse = quad::integrate(-1.0, 1.0, 192, |x| b.phi(x));
        let fine = quad::integrate(-1.0, 1.0, 384, |x| b.phi(x));
        assert!((coarse - 1.0).abs() < 1e-10, "mass={coarse}");
        assert!((coarse - fine).abs() < 1e-12);
        // derivative consistency
        let fd = (b.phi(0.3 + 1e-7) - b.phi(0.3 - 1e-7)) / 2e-7;
        assert!((b.dphi(0.3) - fd).abs() < 1e-6);
    }

    #[test]
    fn kernel_identity_and_trace_sums() {
        let g = Arc::new(|_s: f64| 0.0) as Arc<ScalarFn>;
        let f = HalfSpaceField::new(1.0, g.clone(), g, KERNEL_ORDER);
        let mut sum_a = 0.0;
        let mut sum_b = 0.0;
        for &(xi, a, b) in f.kernel_pairs() {
            // the cancellation that makes the divergence vanish pointwise
            assert_eq!(a + xi * b, 0.0);
            sum_a += a;
            sum_b += b;
        }
        assert!((sum_a - 1.0).abs() < 1e-12, "sum_a={sum_a}");
        assert!(sum_b.abs() < 1e-12, "sum_b={sum_b}");
    }

    #[test]
    fn half_space_trace_is_exact() {
        let period = 2.0 * PI;
        let g1 = Arc::new(move |s: f64| 0.4 * (2.0 * s).sin()) as Arc<ScalarFn>;
        let g2 = Arc::new(move |s: f64| 1.0 + 0.3 * s.cos()) as Arc<ScalarFn>;
        let f = HalfSpaceField::new(period, g1.clone(), g2.clone(), KERNEL_ORDER);
        for i in 0..41 {
            let s = period * (i as f64) / 41.0;
            let v = f.eval(s, 0.0);
            assert!((v.x - g1(s)).abs() < 1e-12);
            assert!((v.y - g2(s)).abs() < 1e-12);
        }
    }

    #[test]
    fn disk_normal_trace_matches_closed_form() {
        // trace 2 nu on the unit circle extends to -2 e_r / r
        let c = BoundaryCurve::circle(Vec2::ZERO, 1.0, 96, true);
        let collar = CollarMap::new(&c, 0.45).unwrap();
        let f = DivFreeField::from_trace(&collar, |_s| v2(0.0, 2.0), KERNEL_ORDER).unwrap();
        for (rx, ry) in [(0.8, 0.0), (0.0, 0.7), (-0.6, 0.3), (0.5, -0.5)] {
            let x = v2(rx, ry);
            let r = x.norm();
            let got = f.eval(x).unwrap();
            let want = x * (-2.0 / (r * r));
            assert!(got.dist(want) < 2e-3, "got {got:?} want {want:?}");
        }
        // trace is exact at d = 0
        for i in 0..17 {
            let s = c.len() * (i as f64) / 17.0;
            let tr = f.trace(s);
            let want = c.inward_normal(s) * 2.0;
            assert!(tr.dist(want) < 1e-12);
        }
    }

    #[test]
    fn weak_residual_small_and_tamper_detected() {
        let c = BoundaryCurve::ellipse(Vec2::ZERO, 2.0, 1.0, 256);
        let collar = CollarMap::new(&c, 0.2).unwrap();
        let len = c.len();
        let f = DivFreeField::from_trace(
            &collar,
            move |s| {
                v2(
                    0.3 * (4.0 * PI * s / len).sin(),
                    1.0 + 0.2 * (2.0 * PI * s / len).cos(),
                )
            },
            KERNEL_ORDER,
        )
        .unwrap();
        let bumps: Vec<TestBump> = (0..8)
            .map(|i| {
                let s = c.len() * (i as f64) / 8.0;
                let center = collar.from_collar(CollarCoords {
                    s,
                    d: 0.5 * collar.width(),
                });
                TestBump {
                    center,
                    r: 0.25 * collar.width(),
                }
            })
            .collect();
        let eval = |x: Vec2| f.eval(x).ok();
        let report = weak_divergence_residual(&eval, &bumps, 128).unwrap();
        assert!(report.floor < 1e-9, "floor={}", report.floor);
        assert!(report.max_rel < 1e-6, "rel={}", report.max_rel);

        // perturbing by one percent of the position field must be seen
        let bad = |x: Vec2| f.eval(x).ok().map(|v| v + x * 0.01);
        let bad_report = weak_divergence_residual(&bad, &bumps, 128).unwrap();
        assert!(bad_report.max_rel > 1e-5, "rel={}", bad_report.max_rel);
    }

    #[test]
    fn under_resolved_data_is_rejected() {
        let c = BoundaryCurve::circle(Vec2::ZERO, 1.0, 256, true);
        let collar = CollarMap::new(&c, 0.45).unwrap();
        let len = c.len();
        // wavelength ~ len/300 is far beyond what the rule can see
        let out = DivFreeField::from_trace(
            &collar,
            move |s| v2((600.0 * PI * s / len).sin(), 1.0),
            KERNEL_ORDER,
        );
        assert!(matches!(
            out,
            Err(DivFreeError::QuadratureUnderResolved { .. })
        ));
    }

    #[test]
    fn holder_seminorm_of_linear_field_is_its_slope() {
        let field = |x: Vec2| Some(v2(2.0 * x.x, -x.y));
        let pts: Vec<Vec2> = (0..100)
            .map(|i| {
                let a = (i as f64) * 0.37;
                v2(a.cos(), (3.0 * a).sin())
            })
            .collect();
        let h = holder_seminorm(&field, &pts, 1.0);
        assert!(h <= 2.0 + 1e-12);
        assert!(h > 1.8);
    }
}
