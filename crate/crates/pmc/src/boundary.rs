//! Scalar boundary data on the curves of a domain, with at most one jump
//! per curve, plus the shrinking-window smoothing family and the boundary
//! manifold (graph of the data together with vertical jump segments).

use std::sync::Arc;

use crate::domain::{BoundaryCurve, BoundaryPoint, CurveId, Domain};
use crate::geom::{v3, wrap_centered, wrap_periodic, Vec2, Vec3};
use crate::linalg::solve_cyclic_tridiagonal;

/// Dense samples per curve for sup/gradient/L1 estimates.
const SCAN_SAMPLES: usize = 4096;
/// Extra samples placed inside each jump window during scans.
const WINDOW_SAMPLES: usize = 512;
/// Relative step for finite-difference slopes.
const FD_STEP_REL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Below,
    Above,
}

#[derive(Debug, Clone, Copy)]
pub struct JumpInfo {
    /// Arclength of the jump point.
    pub s: f64,
    /// Limit approaching with increasing s.
    pub below: f64,
    /// Limit leaving with increasing s.
    pub above: f64,
}

impl JumpInfo {
    pub fn height(&self) -> f64 {
        (self.above - self.below).abs()
    }
}

type ProfileFn = dyn Fn(f64) -> f64 + Send + Sync;

/// Scalar function of arclength on one closed curve.
#[derive(Clone)]
pub struct ScalarOnCurve {
    len: f64,
    kind: Kind,
}

#[derive(Clone)]
enum Kind {
    Constant(f64),
    /// c0 + g . position(s); exact through the curve geometry.
    Affine { c0: f64, g: Vec2 },
    /// Smooth periodic closure of arclength.
    Periodic(Arc<ProfileFn>),
    /// Periodic cubic spline through uniform samples.
    Spline(Arc<ScalarSpline>),
    Jump(Arc<JumpData>),
}

struct JumpData {
    s_jump: f64,
    /// Smooth on [0, len] in the local coordinate sigma = s - s_jump; the
    /// two endpoint values are the one-sided limits at the jump.
    profile: Arc<ProfileFn>,
    /// Half-width of the smoothing window; 0 keeps the sharp jump.
    half: f64,
    /// Quintic bridge endpoint data (f, f', f'') at sigma = len - half and
    /// sigma = half, present when half > 0.
    bridge: Option<([f64; 3], [f64; 3])>,
}

impl ScalarOnCurve {
    pub fn constant(len: f64, c: f64) -> ScalarOnCurve {
        ScalarOnCurve {
            len,
            kind: Kind::Constant(c),
        }
    }

    /// c0 + g . x evaluated at boundary points.
    pub fn affine(len: f64, c0: f64, g: Vec2) -> ScalarOnCurve {
        ScalarOnCurve {
            len,
            kind: Kind::Affine { c0, g },
        }
    }

    /// Smooth data from a closure of arclength; the caller guarantees the
    /// closure is smooth and len-periodic.
    pub fn periodic_fn(
        len: f64,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> ScalarOnCurve {
        ScalarOnCurve {
            len,
            kind: Kind::Periodic(Arc::new(f)),
        }
    }

    /// Periodic cubic spline through uniformly spaced samples.
    pub fn from_samples(len: f64, values: &[f64]) -> ScalarOnCurve {
        ScalarOnCurve {
            len,
            kind: Kind::Spline(Arc::new(ScalarSpline::new(len, values))),
        }
    }

    /// Data with a single jump at `s_jump`. The profile is smooth on
    /// [0, len] in sigma = s - s_jump; profile(0) is the limit from above
    /// the jump, profile(len) the limit from below.
    pub fn with_jump(
        len: f64,
        s_jump: f64,
        profile: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> ScalarOnCurve {
        ScalarOnCurve {
            len,
            kind: Kind::Jump(Arc::new(JumpData {
                s_jump: wrap_periodic(s_jump, len),
                profile: Arc::new(profile),
                half: 0.0,
                bridge: None,
            })),
        }
    }

    pub fn len(&self) -> f64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn jump(&self) -> Option<JumpInfo> {
        match &self.kind {
            Kind::Jump(j) if j.half == 0.0 => Some(JumpInfo {
                s: j.s_jump,
                below: (j.profile)(self.len),
                above: (j.profile)(0.0),
            }),
            _ => None,
        }
    }

    pub fn eval(&self, curve: &BoundaryCurve, s: f64) -> f64 {
        let sw = wrap_periodic(s, self.len);
        match &self.kind {
            Kind::Constant(c) => *c,
            Kind::Affine { c0, g } => c0 + g.dot(curve.pos(sw)),
            Kind::Periodic(f) => f(sw),
            Kind::Spline(sp) => sp.eval(sw),
            Kind::Jump(j) => self.eval_jump(j, sw),
        }
    }

    /// One-sided value: at the jump point, `Side` picks the limit.
    pub fn eval_side(&self, curve: &BoundaryCurve, s: f64, side: Side) -> f64 {
        if let Kind::Jump(j) = &self.kind {
            let sw = wrap_periodic(s, self.len);
            if j.half == 0.0 && (sw - j.s_jump).abs() < 1e-12 * self.len.max(1.0) {
                return match side {
                    Side::Above => (j.profile)(0.0),
                    Side::Below => (j.profile)(self.len),
                };
            }
        }
        self.eval(curve, s)
    }

    fn eval_jump(&self, j: &JumpData, sw: f64) -> f64 {
        let sigma = wrap_periodic(sw - j.s_jump, self.len);
        if let Some((lo, hi)) = &j.bridge {
            let xi = wrap_centered(sw - j.s_jump, self.len);
            if xi.abs() < j.half {
                // quintic bridge across [-half, half], matching value, slope
                // and curvature of the profile at both ends
                let h = 2.0 * j.half;
                let tau = (xi + j.half) / h;
                return hermite_quintic(lo, hi, h, tau);
            }
        }
        (j.profile)(sigma)
    }

    /// Replace the jump (if any) by a C^2 quintic bridge over a window of
    /// width `window` centered at the jump.
    pub fn smoothed(&self, window: f64) -> ScalarOnCurve {
        let Kind::Jump(j) = &self.kind else {
            return self.clone();
        };
        let half = (0.5 * window).min(0.25 * self.len);
        assert!(half > 0.0, "smoothing window must be positive");
        let fd = FD_STEP_REL * self.len;
        let probe = |sigma: f64| (j.profile)(sigma.clamp(0.0, self.len));
        let jet = |sigma: f64| -> [f64; 3] {
            let f = probe(sigma);
            let d1 = (probe(sigma + fd) - probe(sigma - fd)) / (2.0 * fd);
            let d2 = (probe(sigma + fd) - 2.0 * f + probe(sigma - fd)) / (fd * fd);
            [f, d1, d2]
        };
        let lo = jet(self.len - half); // window entry, below side
        let hi = jet(half); // window exit, above side
        ScalarOnCurve {
            len: self.len,
            kind: Kind::Jump(Arc::new(JumpData {
                s_jump: j.s_jump,
                profile: j.profile.clone(),
                half,
                bridge: Some((lo, hi)),
            })),
        }
    }

    /// Data multiplied pointwise by a constant factor. Jump windows and
    /// positions are unchanged; only heights scale.
    pub fn scaled(&self, factor: f64) -> ScalarOnCurve {
        let kind = match &self.kind {
            Kind::Constant(c) => Kind::Constant(factor * c),
            Kind::Affine { c0, g } => Kind::Affine {
                c0: factor * c0,
                g: *g * factor,
            },
            Kind::Periodic(f) => {
                let f = f.clone();
                Kind::Periodic(Arc::new(move |s| factor * f(s)))
            }
            Kind::Spline(sp) => Kind::Spline(Arc::new(ScalarSpline {
                len: sp.len,
                v: sp.v.iter().map(|x| factor * x).collect(),
                m: sp.m.iter().map(|x| factor * x).collect(),
            })),
            Kind::Jump(j) => {
                let profile = j.profile.clone();
                let scale_jet = |jet: [f64; 3]| jet.map(|x| factor * x);
                Kind::Jump(Arc::new(JumpData {
                    s_jump: j.s_jump,
                    profile: Arc::new(move |sigma| factor * profile(sigma)),
                    half: j.half,
                    bridge: j.bridge.map(|(lo, hi)| (scale_jet(lo), scale_jet(hi))),
                }))
            }
        };
        ScalarOnCurve {
            len: self.len,
            kind,
        }
    }

    /// Arclength derivative by central differences (one-sided limits are
    /// respected across a sharp jump only in the sense of large values).
    pub fn deriv(&self, curve: &BoundaryCurve, s: f64) -> f64 {
        let fd = FD_STEP_REL * self.len;
        (self.eval(curve, s + fd) - self.eval(curve, s - fd)) / (2.0 * fd)
    }

    /// Scan points covering the curve densely, refined inside any jump
    /// window so narrow bridges are resolved.
    fn scan_points(&self) -> Vec<f64> {
        let mut out: Vec<f64> = (0..SCAN_SAMPLES)
            .map(|i| self.len * (i as f64) / (SCAN_SAMPLES as f64))
            .collect();
        if let Kind::Jump(j) = &self.kind {
            let w = if j.half > 0.0 {
                2.0 * j.half
            } else {
                4.0 * self.len / (SCAN_SAMPLES as f64)
            };
            for i in 0..WINDOW_SAMPLES {
                let xi = w * ((i as f64) / (WINDOW_SAMPLES as f64) - 0.5);
                out.push(wrap_periodic(j.s_jump + xi, self.len));
            }
        }
        out
    }

    pub fn sup_norm(&self, curve: &BoundaryCurve) -> f64 {
        let mut m: f64 = 0.0;
        for s in self.scan_points() {
            m = m.max(self.eval(curve, s).abs());
        }
        if let Some(info) = self.jump() {
            m = m.max(info.below.abs()).max(info.above.abs());
        }
        m
    }

    /// Max |d/ds| away from a sharp jump; includes bridge slopes.
    pub fn grad_bound(&self, curve: &BoundaryCurve) -> f64 {
        let guard = match &self.kind {
            Kind::Jump(j) if j.half == 0.0 => Some(j.s_jump),
            _ => None,
        };
        let fd = FD_STEP_REL * self.len;
        let mut m: f64 = 0.0;
        for s in self.scan_points() {
            if let Some(sj) = guard {
                if wrap_centered(s - sj, self.len).abs() < 4.0 * fd {
                    continue;
                }
            }
            m = m.max(self.deriv(curve, s).abs());
        }
        m
    }

    /// Integral of |self - other| over the curve by refined midpoint sums.
    pub fn l1_distance(&self, other: &ScalarOnCurve, curve: &BoundaryCurve) -> f64 {
        let mut pts = self.scan_points();
        pts.extend(other.scan_points());
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        pts.dedup();
        let mut total = 0.0;
        for i in 0..pts.len() {
            let a = pts[i];
            let b = if i + 1 < pts.len() { pts[i + 1] } else { self.len };
            let mid = 0.5 * (a + b);
            total += (b - a) * (self.eval(curve, mid) - other.eval(curve, mid)).abs();
        }
        total
    }
}

impl std::fmt::Debug for ScalarOnCurve {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match &self.kind {
            Kind::Constant(c) => format!("Constant({c})"),
            Kind::Affine { c0, g } => format!("Affine({c0}, {g:?})"),
            Kind::Periodic(_) => "Periodic".into(),
            Kind::Spline(_) => "Spline".into(),
            Kind::Jump(j) => format!("Jump(s={}, half={})", j.s_jump, j.half),
        };
        write!(f, "ScalarOnCurve[len={}, {}]", self.len, name)
    }
}

fn hermite_quintic(lo: &[f64; 3], hi: &[f64; 3], h: f64, tau: f64) -> f64 {
    let t2 = tau * tau;
    let t3 = t2 * tau;
    let t4 = t3 * tau;
    let t5 = t4 * tau;
    let h0 = 1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5;
    let h1 = tau - 6.0 * t3 + 8.0 * t4 - 3.0 * t5;
    let h2 = 0.5 * t2 - 1.5 * t3 + 1.5 * t4 - 0.5 * t5;
    let h3 = 10.0 * t3 - 15.0 * t4 + 6.0 * t5;
    let h4 = -4.0 * t3 + 7.0 * t4 - 3.0 * t5;
    let h5 = 0.5 * t3 - t4 + 0.5 * t5;
    lo[0] * h0
        + h * lo[1] * h1
        + h * h * lo[2] * h2
        + hi[0] * h3
        + h * hi[1] * h4
        + h * h * hi[2] * h5
}

/// Periodic natural cubic spline of a scalar over uniform knots.
struct ScalarSpline {
    len: f64,
    v: Vec<f64>,
    m: Vec<f64>,
}

impl ScalarSpline {
    fn new(len: f64, values: &[f64]) -> ScalarSpline {
        let n = values.len();
        assert!(n >= 3, "scalar spline needs at least 3 samples");
        let h = len / (n as f64);
        let sub = vec![h / 6.0; n];
        let main = vec![2.0 * h / 3.0; n];
        let sup = vec![h / 6.0; n];
        let rhs: Vec<f64> = (0..n)
            .map(|i| {
                let prev = values[(i + n - 1) % n];
                let next = values[(i + 1) % n];
                (next - 2.0 * values[i] + prev) / h
            })
            .collect();
        let m = solve_cyclic_tridiagonal(&sub, &main, &sup, &rhs);
        ScalarSpline {
            len,
            v: values.to_vec(),
            m,
        }
    }

    fn eval(&self, s: f64) -> f64 {
        let n = self.v.len();
        let h = self.len / (n as f64);
        let sw = wrap_periodic(s, self.len);
        let i = ((sw / h) as usize).min(n - 1);
        let j = (i + 1) % n;
        let a = (i as f64 + 1.0) * h - sw;
        let b = sw - (i as f64) * h;
        self.m[i] * a * a * a / (6.0 * h)
            + self.m[j] * b * b * b / (6.0 * h)
            + (self.v[i] / h - self.m[i] * h / 6.0) * a
            + (self.v[j] / h - self.m[j] * h / 6.0) * b
    }
}

/// Boundary data for every curve of a domain, indexed like the domain.
#[derive(Debug, Clone)]
pub struct BoundaryData {
    per: Vec<ScalarOnCurve>,
}

impl BoundaryData {
    pub fn new(per: Vec<ScalarOnCurve>) -> BoundaryData {
        BoundaryData { per }
    }

    pub fn uniform(domain: &Domain, value: f64) -> BoundaryData {
        BoundaryData {
            per: domain
                .curve_ids()
                .map(|id| ScalarOnCurve::constant(domain.curve(id).len(), value))
                .collect(),
        }
    }

    pub fn get(&self, id: CurveId) -> &ScalarOnCurve {
        &self.per[id.0]
    }

    pub fn curve_count(&self) -> usize {
        self.per.len()
    }

    pub fn eval(&self, domain: &Domain, at: BoundaryPoint) -> f64 {
        self.get(at.curve).eval(domain.curve(at.curve), at.s)
    }

    pub fn sup_norm(&self, domain: &Domain) -> f64 {
        domain
            .curve_ids()
            .map(|id| self.get(id).sup_norm(domain.curve(id)))
            .fold(0.0, f64::max)
    }

    pub fn grad_bound(&self, domain: &Domain) -> f64 {
        domain
            .curve_ids()
            .map(|id| self.get(id).grad_bound(domain.curve(id)))
            .fold(0.0, f64::max)
    }

    pub fn jumps(&self) -> Vec<(CurveId, JumpInfo)> {
        self.per
            .iter()
            .enumerate()
            .filter_map(|(i, d)| d.jump().map(|j| (CurveId(i), j)))
            .collect()
    }

    pub fn smoothed(&self, window: f64) -> BoundaryData {
        BoundaryData {
            per: self.per.iter().map(|d| d.smoothed(window)).collect(),
        }
    }

    pub fn scaled(&self, factor: f64) -> BoundaryData {
        BoundaryData {
            per: self.per.iter().map(|d| d.scaled(factor)).collect(),
        }
    }

    pub fn l1_distance(&self, other: &BoundaryData, domain: &Domain) -> f64 {
        domain
            .curve_ids()
            .map(|id| {
                self.get(id)
                    .l1_distance(other.get(id), domain.curve(id))
            })
            .sum()
    }
}

/// The smoothing family: member k bridges each jump over a window
/// w0 * 2^-k, so members converge to the base data in L1 while their
/// slopes grow like 2^k.
#[derive(Debug, Clone)]
pub struct BoundaryFamily {
    base: BoundaryData,
    w0: f64,
}

impl BoundaryFamily {
    pub fn new(base: BoundaryData, w0: f64) -> BoundaryFamily {
        assert!(w0 > 0.0);
        BoundaryFamily { base, w0 }
    }

    pub fn base(&self) -> &BoundaryData {
        &self.base
    }

    pub fn window(&self, k: u32) -> f64 {
        self.w0 * 0.5f64.powi(k as i32)
    }

    pub fn at(&self, k: u32) -> BoundaryData {
        self.base.smoothed(self.window(k))
    }
}

/// The boundary manifold in 3-space: graphs of the data over each curve
/// together with the vertical segments spanning the jumps.
pub struct BoundaryManifold {
    curves: Vec<BoundaryCurve>,
    data: BoundaryData,
}

impl BoundaryManifold {
    pub fn new(domain: &Domain, data: &BoundaryData) -> BoundaryManifold {
        BoundaryManifold {
            curves: domain.curve_ids().map(|id| domain.curve(id).clone()).collect(),
            data: data.clone(),
        }
    }

    pub fn height_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (c, d) in self.curves.iter().zip(&self.data.per) {
            for s in d.scan_points() {
                let v = d.eval(c, s);
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if let Some(j) = d.jump() {
                lo = lo.min(j.below.min(j.above));
                hi = hi.max(j.below.max(j.above));
            }
        }
        (lo, hi)
    }

    /// Distance from a 3-space point to the manifold.
    pub fn distance_to(&self, p: Vec3) -> f64 {
        let mut best = f64::INFINITY;
        for (c, d) in self.curves.iter().zip(&self.data.per) {
            let n = 1024;
            let dist2 = |s: f64| -> f64 {
                let q = c.pos(s);
                let z = d.eval(c, s);
                (p.x - q.x).powi(2) + (p.y - q.y).powi(2) + (p.z - z).powi(2)
            };
            let mut seeds: Vec<(f64, f64)> = (0..n)
                .map(|i| {
                    let s = c.len() * (i as f64) / (n as f64);
                    (dist2(s), s)
                })
                .collect();
            seeds.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            for &(_, s0) in seeds.iter().take(3) {
                let step = c.len() / (n as f64);
                let (mut a, mut b) = (s0 - step, s0 + step);
                // golden-section refinement, robust to kinks
                let phi = 0.5 * (3.0 - 5.0f64.sqrt());
                for _ in 0..80 {
                    let x1 = a + phi * (b - a);
                    let x2 = b - phi * (b - a);
                    if dist2(x1) < dist2(x2) {
                        b = x2;
                    } else {
                        a = x1;
                    }
                }
                best = best.min(dist2(0.5 * (a + b)).sqrt());
            }
            if let Some(j) = d.jump() {
                let q = c.pos(j.s);
                let (z0, z1) = (j.below.min(j.above), j.below.max(j.above));
                let dz = (p.z - p.z.clamp(z0, z1)).abs();
                let dxy = ((p.x - q.x).powi(2) + (p.y - q.y).powi(2)).sqrt();
                best = best.min((dxy * dxy + dz * dz).sqrt());
            }
        }
        best
    }

    /// Points covering the manifold: graph samples on each curve plus
    /// samples along each vertical jump segment.
    pub fn samples(&self, per_curve: usize) -> Vec<Vec3> {
        let mut out = Vec::new();
        for (c, d) in self.curves.iter().zip(&self.data.per) {
            for i in 0..per_curve {
                let s = c.len() * (i as f64) / (per_curve as f64);
                let q = c.pos(s);
                out.push(v3(q.x, q.y, d.eval(c, s)));
            }
            if let Some(j) = d.jump() {
                let q = c.pos(j.s);
                let m = 32;
                for t in 0..=m {
                    let z = j.below + (j.above - j.below) * (t as f64) / (m as f64);
                    out.push(v3(q.x, q.y, z));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::v2;
    use std::f64::consts::PI;

    fn unit_circle() -> BoundaryCurve {
        BoundaryCurve::circle(Vec2::ZERO, 1.0, 96, true)
    }

    #[test]
    fn affine_data_is_exact() {
        let c = unit_circle();
        let d = ScalarOnCurve::affine(c.len(), 0.5, v2(0.3, -0.2));
        for i in 0..37 {
            let s = c.len() * (i as f64) / 37.0;
            let p = c.pos(s);
            let want = 0.5 + 0.3 * p.x - 0.2 * p.y;
            assert!((d.eval(&c, s) - want).abs() < 1e-14);
        }
        assert!(d.jump().is_none());
    }

    #[test]
    fn sampled_data_reproduces_smooth_function() {
        let c = unit_circle();
        let f = |s: f64| (2.0 * PI * s / c.len()).sin() + 0.3 * (4.0 * PI * s / c.len()).cos();
        let values: Vec<f64> = (0..128).map(|i| f(c.len() * (i as f64) / 128.0)).collect();
        let d = ScalarOnCurve::from_samples(c.len(), &values);
        for i in 0..311 {
            let s = c.len() * (i as f64) / 311.0;
            assert!((d.eval(&c, s) - f(s)).abs() < 1e-6);
        }
    }

    #[test]
    fn jump_limits_and_side_values() {
        let c = unit_circle();
        let len = c.len();
        // step from 0 (below) to 1 (above), smooth descent in the interior
        let d = ScalarOnCurve::with_jump(len, 0.0, move |sig| {
            let x = sig / len;
            1.0 - crate::geom::smootherstep((x - 0.25).clamp(0.0, 0.5) / 0.5)
        });
        let j = d.jump().unwrap();
        assert_eq!(j.below, 0.0);
        assert_eq!(j.above, 1.0);
        assert_eq!(j.height(), 1.0);
        assert_eq!(d.eval_side(&c, 0.0, Side::Below), 0.0);
        assert_eq!(d.eval_side(&c, 0.0, Side::Above), 1.0);
        // far from the jump the profile rules
        assert!((d.eval(&c, 0.1 * len) - 1.0).abs() < 1e-12);
        assert!((d.eval(&c, 0.9 * len) - 0.0).abs() < 1e-12);
    }

    #[test]
    fn smoothed_jump_is_c2_and_l1_close() {
        let c = unit_circle();
        let len = c.len();
        let sharp = ScalarOnCurve::with_jump(len, 1.0, move |sig| {
            let x = sig / len;
            2.0 - 2.0 * crate::geom::smootherstep((x - 0.3).clamp(0.0, 0.4) / 0.4)
        });
        let w = 0.05;
        let sm = sharp.smoothed(w);
        assert!(sm.jump().is_none());
        // values agree outside the window
        for s in [1.0 + 0.6 * w, 1.0 - 0.6 * w, 2.5, 4.0] {
            assert!((sm.eval(&c, s) - sharp.eval(&c, s)).abs() < 1e-12);
        }
        // C2 across the window edge: second differences stay bounded
        let fd = 1e-4;
        for edge in [1.0 - 0.5 * w, 1.0 + 0.5 * w] {
            let d2 = (sm.eval(&c, edge + fd) - 2.0 * sm.eval(&c, edge)
                + sm.eval(&c, edge - fd))
                / (fd * fd);
            assert!(d2.abs() < 50.0, "d2={d2} at {edge}");
        }
        // L1 distance scales with the window
        let l1_a = sm.l1_distance(&sharp, &c);
        let l1_b = sharp.smoothed(0.5 * w).l1_distance(&sharp, &c);
        assert!(l1_a < 2.0 * 2.0 * w);
        let ratio = l1_b / l1_a;
        assert!((0.3..0.7).contains(&ratio), "ratio={ratio}");
    }

    #[test]
    fn family_slopes_double_per_level() {
        let d = Domain::disk(Vec2::ZERO, 1.0, 96);
        let len = d.outer().len();
        // sawtooth: gentle interior slope, unit jump at the seam
        let base = BoundaryData::new(vec![ScalarOnCurve::with_jump(len, 0.0, move |sig| {
            1.0 - sig / len
        })]);
        let fam = BoundaryFamily::new(base, 0.4);
        let g2 = fam.at(2).grad_bound(&d);
        let g3 = fam.at(3).grad_bound(&d);
        let ratio = g3 / g2;
        assert!((1.7..2.3).contains(&ratio), "ratio={ratio}");
        // peak slope of the quintic bridge is 15/8 of height/window
        let want = 15.0 / 8.0 / fam.window(2);
        assert!((g2 - want).abs() < 0.05 * want, "g2={g2} want={want}");
    }

    #[test]
    fn manifold_distance_and_heights() {
        let dom = Domain::disk(Vec2::ZERO, 1.0, 96);
        let len = dom.outer().len();
        let data = BoundaryData::new(vec![ScalarOnCurve::with_jump(len, 0.0, move |sig| {
            let x = sig / len;
            1.0 - crate::geom::smootherstep((x - 0.2).clamp(0.0, 0.6) / 0.6)
        })]);
        let m = BoundaryManifold::new(&dom, &data);
        let (lo, hi) = m.height_range();
        assert!((lo - 0.0).abs() < 1e-9 && (hi - 1.0).abs() < 1e-9);
        // point on the graph
        let s = 0.05 * len;
        let q = dom.outer().pos(s);
        let z = data.get(crate::domain::CurveId(0)).eval(dom.outer(), s);
        assert!(m.distance_to(v3(q.x, q.y, z)) < 1e-6);
        // point on the vertical jump segment at (1, 0): heights 0..1
        let p0 = dom.outer().pos(0.0);
        assert!(m.distance_to(v3(p0.x, p0.y, 0.5)) < 1e-9);
        // point off the manifold
        assert!(m.distance_to(v3(0.0, 0.0, 0.0)) > 0.9);
    }
}
