//! The k-th regularized problem near the boundary: a shrinking collar
//! width schedule, a curvature source that is cut off in a boundary strip,
//! and a compensating collar field whose plane divergence matches the
//! boundary-normal field above the boundary data, its negative below, and
//! vanishes weakly past the strip.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::boundary::{BoundaryData, BoundaryFamily, BoundaryManifold, ScalarOnCurve};
use crate::divfree::{DivFreeError, DivFreeField, TestBump, KERNEL_ORDER};
use crate::domain::{BoundaryPoint, CollarMap, CurveId, Domain, GeometryError};
use crate::geom::{smoothstep, v2, Vec2};
use crate::quad;

#[derive(Debug, Error)]
pub enum ApproxError {
    #[error("prescribed curvature bound {sup:.4} exceeds the solvability limit {limit:.4}")]
    CurvatureTooLarge { sup: f64, limit: f64 },
    #[error("prescribed curvature decreases in height near ({x:.4}, {y:.4}), h = {h:.4}")]
    NotMonotoneInHeight { x: f64, y: f64, h: f64 },
    #[error("collar width schedule invalid: {0}")]
    InvalidSchedule(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    DivFree(#[from] DivFreeError),
}

/// Prescribed curvature H(x, h). Implementations must be non-decreasing in
/// h; builders sample-check this.
pub trait PrescribedCurvature: Send + Sync {
    fn value(&self, x: Vec2, h: f64) -> f64;
    /// Bound for sup |H|, used by the solvability check.
    fn sup(&self) -> f64;
}

pub struct ConstantCurvature(pub f64);

impl PrescribedCurvature for ConstantCurvature {
    fn value(&self, _x: Vec2, _h: f64) -> f64 {
        self.0
    }
    fn sup(&self) -> f64 {
        self.0.abs()
    }
}

/// Closure-backed curvature with a declared sup bound.
pub struct FnCurvature {
    f: Arc<dyn Fn(Vec2, f64) -> f64 + Send + Sync>,
    sup: f64,
}

impl FnCurvature {
    pub fn new(sup: f64, f: impl Fn(Vec2, f64) -> f64 + Send + Sync + 'static) -> FnCurvature {
        FnCurvature {
            f: Arc::new(f),
            sup,
        }
    }
}

impl PrescribedCurvature for FnCurvature {
    fn value(&self, x: Vec2, h: f64) -> f64 {
        (self.f)(x, h)
    }
    fn sup(&self) -> f64 {
        self.sup
    }
}

/// Per-step data the schedule builder consumes: geometry and data bounds of
/// the k-th shrunken domain and its boundary values.
#[derive(Debug, Clone, Copy)]
pub struct ScheduleInputs {
    pub reach: f64,
    pub curvature_sup: f64,
    pub grad_bound: f64,
}

/// Collar widths delta_k together with the two decay products they control:
/// sqrt(delta_k) * curvature_sup and delta_k^(alpha/2) * grad_bound.
#[derive(Debug, Clone)]
pub struct DeltaSchedule {
    deltas: Vec<f64>,
    curv_products: Vec<f64>,
    grad_products: Vec<f64>,
}

impl DeltaSchedule {
    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }

    pub fn delta(&self, k: u32) -> f64 {
        self.deltas[k as usize]
    }

    pub fn curv_product(&self, k: u32) -> f64 {
        self.curv_products[k as usize]
    }

    pub fn grad_product(&self, k: u32) -> f64 {
        self.grad_products[k as usize]
    }
}

/// Builds the width schedule. The base sequence delta_0 * 2^-k is capped by
/// a quarter of the reach (the normal projection must cover a band of twice
/// the width) and, whenever a data norm grows from one step to the next, by
/// the width that halves the corresponding decay product. With bounded data
/// the base sequence already sends both products to zero geometrically, so
/// the caps stay inactive.
pub fn delta_schedule(
    steps: &[ScheduleInputs],
    delta0: f64,
    alpha: f64,
) -> Result<DeltaSchedule, ApproxError> {
    if steps.is_empty() {
        return Err(ApproxError::InvalidSchedule("no steps".into()));
    }
    if !(delta0 > 0.0) || !(alpha > 0.0 && alpha <= 1.0) {
        return Err(ApproxError::InvalidSchedule(format!(
            "delta0 = {delta0}, alpha = {alpha}"
        )));
    }
    let mut deltas: Vec<f64> = Vec::with_capacity(steps.len());
    let mut curv_products: Vec<f64> = Vec::with_capacity(steps.len());
    let mut grad_products: Vec<f64> = Vec::with_capacity(steps.len());
    for (k, st) in steps.iter().enumerate() {
        if !(st.reach > 0.0) {
            return Err(ApproxError::InvalidSchedule(format!(
                "step {k}: reach = {}",
                st.reach
            )));
        }
        let base = delta0 * 0.5f64.powi(k as i32);
        let mut d = base.min(st.reach / 4.0);
        if k > 0 {
            // reach of later domains can grow; keep the sequence strictly
            // decreasing regardless
            if d >= deltas[k - 1] {
                d = 0.75 * deltas[k - 1];
            }
            let prev = &steps[k - 1];
            if st.curvature_sup > prev.curvature_sup * (1.0 + 1e-12) && st.curvature_sup > 0.0 {
                let cap = (curv_products[k - 1] / (2.0 * st.curvature_sup)).powi(2);
                d = d.min(cap);
            }
            if st.grad_bound > prev.grad_bound * (1.0 + 1e-12) && st.grad_bound > 0.0 {
                let cap = (grad_products[k - 1] / (2.0 * st.grad_bound)).powf(2.0 / alpha);
                d = d.min(cap);
            }
        }
        if !(d > 0.0) {
            return Err(ApproxError::InvalidSchedule(format!(
                "step {k}: width collapsed to {d}"
            )));
        }
        curv_products.push(d.sqrt() * st.curvature_sup);
        grad_products.push(d.powf(alpha / 2.0) * st.grad_bound);
        deltas.push(d);
    }
    for k in 1..deltas.len() {
        let ok = deltas[k] < deltas[k - 1]
            && curv_products[k] <= curv_products[k - 1] * (1.0 + 1e-9)
            && grad_products[k] <= grad_products[k - 1] * (1.0 + 1e-9);
        if !ok {
            return Err(ApproxError::InvalidSchedule(format!(
                "step {k}: monotonicity failed (delta {} -> {}, products {} -> {}, {} -> {})",
                deltas[k - 1],
                deltas[k],
                curv_products[k - 1],
                curv_products[k],
                grad_products[k - 1],
                grad_products[k]
            )));
        }
    }
    Ok(DeltaSchedule {
        deltas,
        curv_products,
        grad_products,
    })
}

/// Convenience builder: shrinks the domain dyadically, smooths the data at
/// matching levels, and derives the schedule inputs. Returns the shrunken
/// domains for reuse; data gradient bounds are measured on the base curves
/// since the transfer to the offset boundary changes them by O(offset).
pub fn schedule_for_family(
    base: &Domain,
    family: &BoundaryFamily,
    eps0: f64,
    delta0: f64,
    k_max: u32,
) -> Result<(DeltaSchedule, Vec<Domain>), ApproxError> {
    let mut steps = Vec::new();
    let mut domains = Vec::new();
    for k in 0..=k_max {
        let dk = base.shrink(k, eps0)?;
        let data_k = family.at(k);
        steps.push(ScheduleInputs {
            reach: dk.reach(),
            curvature_sup: dk.max_abs_curvature(),
            grad_bound: data_k.grad_bound(base),
        });
        domains.push(dk);
    }
    let schedule = delta_schedule(&steps, delta0, base.alpha())?;
    Ok((schedule, domains))
}

/// The cut-off curvature source: the prescribed H multiplied by a C1 ramp
/// in the boundary distance that vanishes below delta and is one above
/// 2*delta. The ramp is a nonnegative factor, so monotonicity in height is
/// inherited from H.
#[derive(Clone)]
pub struct CutoffCurvature {
    base: Arc<dyn PrescribedCurvature>,
    domain: Domain,
    delta: f64,
}

impl CutoffCurvature {
    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn sup(&self) -> f64 {
        self.base.sup()
    }

    /// Distance ramp at x; callers on a fixed grid can cache this.
    pub fn ramp(&self, x: Vec2) -> f64 {
        let (_, _, d, _) = self.domain.nearest_boundary(x);
        smoothstep((d - self.delta) / self.delta)
    }

    pub fn value(&self, x: Vec2, h: f64) -> f64 {
        self.ramp(x) * self.base.value(x, h)
    }

    /// Fast path when the ramp at x is already known.
    pub fn value_with_ramp(&self, ramp: f64, x: Vec2, h: f64) -> f64 {
        ramp * self.base.value(x, h)
    }

    /// Same cutoff geometry with the underlying curvature multiplied by a
    /// constant in [0, 1]; monotonicity in height is preserved.
    pub fn scaled(&self, factor: f64) -> CutoffCurvature {
        assert!((0.0..=1.0).contains(&factor));
        CutoffCurvature {
            base: Arc::new(ScaledCurvature {
                inner: self.base.clone(),
                factor,
            }),
            domain: self.domain.clone(),
            delta: self.delta,
        }
    }
}

struct ScaledCurvature {
    inner: Arc<dyn PrescribedCurvature>,
    factor: f64,
}

impl PrescribedCurvature for ScaledCurvature {
    fn value(&self, x: Vec2, h: f64) -> f64 {
        self.factor * self.inner.value(x, h)
    }

    fn sup(&self) -> f64 {
        self.factor * self.inner.sup()
    }
}

/// Solvability limit for sup |H| on a domain of this area (n = 2 form of
/// the isoperimetric bound).
pub fn curvature_limit(area: f64) -> f64 {
    2.0 * (PI / area).sqrt()
}

pub fn build_hk(
    base: Arc<dyn PrescribedCurvature>,
    domain: &Domain,
    delta: f64,
    h_range: (f64, f64),
) -> Result<CutoffCurvature, ApproxError> {
    let limit = curvature_limit(domain.area());
    if base.sup() > limit + 1e-12 {
        return Err(ApproxError::CurvatureTooLarge {
            sup: base.sup(),
            limit,
        });
    }
    // sample-check monotonicity in the height variable
    let nodes = domain.outer().nodes();
    let (mut lo, mut hi) = (nodes[0], nodes[0]);
    for p in nodes {
        lo = v2(lo.x.min(p.x), lo.y.min(p.y));
        hi = v2(hi.x.max(p.x), hi.y.max(p.y));
    }
    let tol = 1e-10 * (1.0 + base.sup());
    let (h0, h1) = h_range;
    for i in 0..10 {
        for j in 0..10 {
            let x = v2(
                lo.x + (hi.x - lo.x) * (i as f64 + 0.5) / 10.0,
                lo.y + (hi.y - lo.y) * (j as f64 + 0.5) / 10.0,
            );
            if !domain.contains(x) {
                continue;
            }
            let mut prev = f64::NEG_INFINITY;
            for m in 0..=8 {
                let h = h0 + (h1 - h0) * (m as f64) / 8.0;
                let val = base.value(x, h);
                if val < prev - tol {
                    return Err(ApproxError::NotMonotoneInHeight { x: x.x, y: x.y, h });
                }
                prev = val;
            }
        }
    }
    Ok(CutoffCurvature {
        base,
        domain: domain.clone(),
        delta,
    })
}

/// Region of the collar cylinder a point (x, h) falls in. Above and Below
/// are the extended wedges reaching distance delta; Band is the
/// divergence-free outer strip (delta, w_v); Outside covers the deep
/// interior and the domain exterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Above,
    Below,
    Wedge,
    Band,
    Outside,
}

/// Per-curve pieces of the collar field.
struct CurveCollar {
    w_v: f64,
    phi: ScalarOnCurve,
    x_field: DivFreeField,
}

/// The compensating collar field f(x, h). Height-independent off the wedge:
/// the inward normal (extended along normal rays) above the data, the
/// divergence-free double-flux field minus the normal below it, and a
/// divergence-free normal-transport field on the outer strip of the
/// neighborhood V = {dist < w_v}. Interfaces are joined by C1 blends placed
/// where no divergence identity is claimed.
pub struct CollarField {
    domain: Domain,
    delta: f64,
    per: Vec<CurveCollar>,
    pub warnings: Vec<String>,
}

/// Frozen geometry of the collar field at one plane point; region
/// classification and the field value then depend only on the height.
#[derive(Debug, Clone, Copy)]
pub struct CollarProbe {
    outside: bool,
    d: f64,
    delta: f64,
    w_v: f64,
    phi: f64,
    eta: Vec2,
    kappa: f64,
    m: f64,
    x_minus_eta: Vec2,
    y_val: Vec2,
}

impl CollarProbe {
    fn zero() -> CollarProbe {
        CollarProbe {
            outside: true,
            d: f64::INFINITY,
            delta: 0.0,
            w_v: 0.0,
            phi: 0.0,
            eta: Vec2::ZERO,
            kappa: 0.0,
            m: 1.0,
            x_minus_eta: Vec2::ZERO,
            y_val: Vec2::ZERO,
        }
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn boundary_value(&self) -> f64 {
        self.phi
    }

    /// Extended inward normal at this point.
    pub fn eta(&self) -> Vec2 {
        self.eta
    }

    /// Plane divergence of the extended normal: -kappa / (1 - kappa d).
    pub fn div_eta(&self) -> f64 {
        -self.kappa / self.m
    }

    pub fn region(&self, h: f64) -> Region {
        if self.outside || self.d >= self.w_v {
            return Region::Outside;
        }
        if self.d >= self.delta {
            return Region::Band;
        }
        let psi = h - self.phi;
        if psi >= self.d {
            Region::Above
        } else if psi <= -self.d {
            Region::Below
        } else {
            Region::Wedge
        }
    }

    fn wedge_value(&self, h: f64) -> Vec2 {
        let psi = h - self.phi;
        if psi >= self.d {
            self.eta
        } else if psi <= -self.d {
            self.x_minus_eta
        } else {
            // |psi| < d forces d > 0
            let w = smoothstep((psi + self.d) / (2.0 * self.d));
            self.x_minus_eta * (1.0 - w) + self.eta * w
        }
    }

    fn y_value(&self) -> Vec2 {
        self.y_val
    }

    pub fn value(&self, h: f64) -> Vec2 {
        if self.outside || self.d >= self.w_v {
            return Vec2::ZERO;
        }
        if self.d <= 0.5 * self.delta {
            self.wedge_value(h)
        } else if self.d < self.delta {
            let t = smoothstep((self.d - 0.5 * self.delta) / (0.5 * self.delta));
            self.wedge_value(h) * (1.0 - t) + self.y_value() * t
        } else {
            self.y_value()
        }
    }
}

impl CollarField {
    /// `reg_radius` is the boundary regularity radius r; the neighborhood
    /// half-width is max(4 delta, r/4) capped by chart validity.
    pub fn build(
        domain: &Domain,
        phi: &BoundaryData,
        delta: f64,
        reg_radius: f64,
    ) -> Result<CollarField, ApproxError> {
        let mut per = Vec::new();
        let mut warnings = Vec::new();
        for id in domain.curve_ids() {
            let c = domain.curve(id);
            let mut kappa_max: f64 = 0.0;
            for i in 0..4 * c.nodes().len() {
                let s = c.len() * (i as f64) / ((4 * c.nodes().len()) as f64);
                kappa_max = kappa_max.max(c.curvature(s).abs());
            }
            let chart_cap = if kappa_max > 0.0 {
                0.45 / kappa_max
            } else {
                f64::INFINITY
            };
            let want = (4.0 * delta).max(reg_radius / 4.0);
            let w_v = want.min(chart_cap).min(domain.reach() / 2.0);
            if w_v < want - 1e-12 {
                warnings.push(format!(
                    "curve {}: neighborhood width clipped {:.4} -> {:.4}",
                    id.0, want, w_v
                ));
            }
            if w_v <= 1.25 * delta {
                return Err(ApproxError::InvalidSchedule(format!(
                    "curve {}: neighborhood width {w_v:.5} too close to delta {delta:.5}",
                    id.0
                )));
            }
            let collar_width = (1.02 * w_v).min(0.49 / kappa_max.max(1e-300));
            let collar = CollarMap::new(c, collar_width)?;
            let x_field = DivFreeField::from_trace(&collar, |_| v2(0.0, 2.0), KERNEL_ORDER)?;
            per.push(CurveCollar {
                w_v,
                phi: phi.get(id).clone(),
                x_field,
            });
        }
        Ok(CollarField {
            domain: domain.clone(),
            delta,
            per,
            warnings,
        })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn w_v(&self, id: CurveId) -> f64 {
        self.per[id.0].w_v
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    /// Freeze the geometry at a plane point. Exterior points probe to zero.
    pub fn probe(&self, x: Vec2) -> CollarProbe {
        let (id, fr, d, side) = self.domain.nearest_frame(x);
        let cc = &self.per[id.0];
        if side < 0.0 || d >= cc.w_v {
            return CollarProbe::zero();
        }
        let eta = fr.normal();
        let m = 1.0 - fr.kappa * d;
        let xh = cc.x_field.eval_strip(fr.s, d);
        let x_push = fr.tangent * xh.x + eta * (xh.y / m);
        let phi = cc.phi.eval(self.domain.curve(id), fr.s);
        CollarProbe {
            outside: false,
            d,
            delta: self.delta,
            w_v: cc.w_v,
            phi,
            eta,
            kappa: fr.kappa,
            m,
            x_minus_eta: x_push - eta,
            y_val: eta * ((1.0 - fr.kappa * cc.w_v) / m),
        }
    }

    pub fn eval(&self, x: Vec2, h: f64) -> Vec2 {
        self.probe(x).value(h)
    }

    pub fn classify(&self, x: Vec2, h: f64) -> Region {
        self.probe(x).region(h)
    }

    /// Weak-divergence residuals of the field against bump test functions
    /// supported inside each region: the pairing integral f . grad zeta
    /// must match -div(eta), +div(eta), or zero. Relative to the test
    /// gradient mass times the local field scale.
    pub fn divergence_residual(&self, probes_per_curve: usize, n: usize) -> CollarDivReport {
        let mut rep = CollarDivReport {
            above: 0.0,
            below: 0.0,
            band: 0.0,
            outside: 0.0,
        };
        for (idx, cc) in self.per.iter().enumerate() {
            let c = self.domain.curve(CurveId(idx));
            let mut phi_sup: f64 = 0.0;
            for i in 0..256 {
                let s = c.len() * (i as f64) / 256.0;
                phi_sup = phi_sup.max(cc.phi.eval(c, s).abs());
            }
            for j in 0..probes_per_curve {
                let s = c.len() * (j as f64 + 0.37) / (probes_per_curve as f64);
                let fr = c.frame(s);
                let nu = fr.normal();
                // wedge probes sit well inside distance delta/2
                let d0 = self.delta / 8.0;
                let r_in = self.delta / 16.0;
                let center = fr.pos + nu * d0;
                let h_above = phi_sup + self.delta;
                let h_below = -phi_sup - self.delta;
                let ra = self.region_residual(center, r_in, h_above, n, 1.0);
                let rb = self.region_residual(center, r_in, h_below, n, -1.0);
                rep.above = rep.above.max(ra);
                rep.below = rep.below.max(rb);
                // band probe between delta and w_v
                let mid = 0.5 * (self.delta + cc.w_v);
                let r_band = 0.25 * (cc.w_v - self.delta);
                let rc = self.region_residual(fr.pos + nu * mid, r_band, 0.0, n, 0.0);
                rep.band = rep.band.max(rc);
                // deep probe past w_v when there is room
                let deep = 1.4 * cc.w_v;
                let r_deep = 0.2 * cc.w_v;
                if deep + r_deep < 0.48 * self.domain.reach() {
                    let ro = self.region_residual(fr.pos + nu * deep, r_deep, 0.0, n, 0.0);
                    rep.outside = rep.outside.max(ro);
                }
            }
        }
        rep
    }

    /// |integral f . grad zeta - sign * integral kappa/m zeta| over a polar
    /// rule around one bump, normalized. sign: +1 above the data, -1 below,
    /// 0 where the field should be weakly divergence free.
    fn region_residual(&self, center: Vec2, r: f64, h: f64, n: usize, sign: f64) -> f64 {
        let bump = TestBump { center, r };
        let (nodes, weights) = quad::gauss_legendre(n);
        let m_ang = 2 * n;
        let mut pairing = 0.0;
        let mut source = 0.0;
        let mut grad_l1 = 0.0;
        let mut sup: f64 = 0.0;
        for i in 0..n {
            let rho = 0.5 * r * (nodes[i] + 1.0);
            let w_rho = 0.5 * r * weights[i] * rho;
            for j in 0..m_ang {
                let th = 2.0 * PI * (j as f64) / (m_ang as f64);
                let x = center + v2(th.cos(), th.sin()) * rho;
                let w = w_rho * 2.0 * PI / (m_ang as f64);
                let gz = bump.grad_zeta(x);
                let z = bump.zeta(x);
                let probe = self.probe(x);
                let fv = probe.value(h);
                pairing += w * fv.dot(gz);
                if sign != 0.0 {
                    source += w * sign * (probe.kappa / probe.m) * z;
                }
                grad_l1 += w * gz.norm();
                sup = sup.max(fv.norm());
            }
        }
        (pairing - source).abs() / (sup * grad_l1 + source.abs()).max(1e-300)
    }

    /// Measured interior Holder constant: per boundary ball of radius r/4,
    /// (sup |f| + r^alpha [f]_alpha) / (1 + r^alpha [eta]_alpha) over
    /// sampled point pairs in the ball times a height interval.
    pub fn holder_constant(&self, r: f64, balls: usize, pairs: usize, seed: u64) -> HolderReport {
        let alpha = self.domain.alpha();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = HolderReport {
            worst_c: 0.0,
            lhs: 0.0,
            rhs: 0.0,
        };
        for (idx, cc) in self.per.iter().enumerate() {
            let c = self.domain.curve(CurveId(idx));
            let mut phi_sup: f64 = 0.0;
            for i in 0..256 {
                let s = c.len() * (i as f64) / 256.0;
                phi_sup = phi_sup.max(cc.phi.eval(c, s).abs());
            }
            let h_span = 2.0 * (phi_sup + self.delta + 1.0);
            for b in 0..balls {
                let s0 = c.len() * (b as f64 + 0.21) / (balls as f64);
                let x0 = c.pos(s0);
                // normal Holder seminorm along the nearby boundary arc
                let mut eta_holder: f64 = 0.0;
                for _ in 0..64 {
                    let s1 = s0 + rng.gen_range(-r..r);
                    let s2 = s0 + rng.gen_range(-r..r);
                    let p1 = c.pos(s1);
                    let p2 = c.pos(s2);
                    let gap = p1.dist(p2);
                    if gap > 1e-9 {
                        let q = c.inward_normal(s1).dist(c.inward_normal(s2)) / gap.powf(alpha);
                        eta_holder = eta_holder.max(q);
                    }
                }
                let rhs = 1.0 + r.powf(alpha) * eta_holder;
                let mut sup_f: f64 = 0.0;
                let mut f_holder: f64 = 0.0;
                let sample = |rng: &mut ChaCha8Rng| -> (Vec2, f64, Vec2) {
                    loop {
                        let p = x0
                            + v2(
                                rng.gen_range(-0.25 * r..0.25 * r),
                                rng.gen_range(-0.25 * r..0.25 * r),
                            );
                        if self.domain.contains(p) {
                            let h = rng.gen_range(-0.5 * h_span..0.5 * h_span);
                            return (p, h, self.eval(p, h));
                        }
                    }
                };
                for _ in 0..pairs {
                    let (p1, h1, f1) = sample(&mut rng);
                    let (p2, h2, f2) = sample(&mut rng);
                    sup_f = sup_f.max(f1.norm()).max(f2.norm());
                    let gap = (p1.dist(p2).powi(2) + (h1 - h2).powi(2)).sqrt();
                    if gap > 1e-9 {
                        f_holder = f_holder.max(f1.dist(f2) / gap.powf(alpha));
                    }
                }
                let lhs = sup_f + r.powf(alpha) * f_holder;
                if lhs / rhs > worst.worst_c {
                    worst = HolderReport {
                        worst_c: lhs / rhs,
                        lhs,
                        rhs,
                    };
                }
            }
        }
        worst
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CollarDivReport {
    pub above: f64,
    pub below: f64,
    pub band: f64,
    pub outside: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct HolderReport {
    pub worst_c: f64,
    pub lhs: f64,
    pub rhs: f64,
}

/// Worst |integral (H zeta - f . grad zeta)| / integral |grad zeta| over a
/// bump suite and a set of heights. Ratios below one certify the uniform
/// sup bound for solutions; the margin to one is the safety factor.
pub struct MarginReport {
    pub worst: f64,
}

pub fn source_margin(
    h_k: &CutoffCurvature,
    f_k: &CollarField,
    heights: &[f64],
    n: usize,
) -> MarginReport {
    let domain = f_k.domain();
    let mut worst: f64 = 0.0;
    let mut suite: Vec<TestBump> = Vec::new();
    for id in domain.curve_ids() {
        let c = domain.curve(id);
        let w_v = f_k.w_v(id);
        for j in 0..6 {
            let s = c.len() * (j as f64 + 0.5) / 6.0;
            let fr = c.frame(s);
            let nu = fr.normal();
            suite.push(TestBump {
                center: fr.pos + nu * (0.7 * w_v),
                r: 0.25 * w_v,
            });
            let deep = (1.5 * w_v).min(0.4 * domain.reach());
            if deep > w_v {
                suite.push(TestBump {
                    center: fr.pos + nu * deep,
                    r: 0.25 * (deep - w_v).max(0.1 * w_v),
                });
            }
        }
    }
    let (nodes, weights) = quad::gauss_legendre(n);
    let m_ang = 2 * n;
    for bump in &suite {
        for &h in heights {
            let mut lhs = 0.0;
            let mut grad_l1 = 0.0;
            for i in 0..n {
                let rho = 0.5 * bump.r * (nodes[i] + 1.0);
                let w_rho = 0.5 * bump.r * weights[i] * rho;
                for j in 0..m_ang {
                    let th = 2.0 * PI * (j as f64) / (m_ang as f64);
                    let x = bump.center + v2(th.cos(), th.sin()) * rho;
                    let w = w_rho * 2.0 * PI / (m_ang as f64);
                    let gz = bump.grad_zeta(x);
                    let z = bump.zeta(x);
                    lhs += w * (h_k.value(x, h) * z - f_k.eval(x, h).dot(gz));
                    grad_l1 += w * gz.norm();
                }
            }
            worst = worst.max(lhs.abs() / grad_l1.max(1e-300));
        }
    }
    MarginReport { worst }
}

/// The assembled k-th problem: shrunken domain, smoothed boundary data
/// transferred to it, the cutoff curvature, the collar field, and a
/// recorded sup-bound constant for solution diagnostics.
pub struct ApproxProblem {
    pub k: u32,
    pub domain: Domain,
    pub phi: BoundaryData,
    pub delta: f64,
    pub h_k: CutoffCurvature,
    pub f_k: CollarField,
    pub sup_bound: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy)]
pub struct AssembleOptions {
    /// Base inward offset; the k-th domain is offset by eps0 * 2^-k.
    pub eps0: f64,
    /// Base collar width used when no schedule is supplied externally.
    pub delta0: f64,
    /// Graph-norm bound defining the boundary regularity radius.
    pub reg_bound: f64,
    /// Safety fraction in the source margin check.
    pub margin_eps0: f64,
    pub check_margin: bool,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        AssembleOptions {
            eps0: 0.05,
            delta0: 0.05,
            reg_bound: 3.0,
            margin_eps0: 0.05,
            check_margin: true,
        }
    }
}

pub fn assemble_problem(
    k: u32,
    base: &Domain,
    family: &BoundaryFamily,
    curvature: Arc<dyn PrescribedCurvature>,
    schedule: &DeltaSchedule,
    opts: &AssembleOptions,
) -> Result<ApproxProblem, ApproxError> {
    let domain_k = base.shrink(k, opts.eps0)?;
    let delta = schedule.delta(k);
    if delta > domain_k.reach() / 4.0 * (1.0 + 1e-9) {
        return Err(ApproxError::InvalidSchedule(format!(
            "delta {delta:.5} exceeds a quarter of the reach {:.5}",
            domain_k.reach()
        )));
    }
    let data_k = family.at(k);

    // transfer the level-k data to the offset boundary through the nearest
    // point on the base curve
    let mut per = Vec::new();
    for id in domain_k.curve_ids() {
        let ck = domain_k.curve(id);
        let cb = base.curve(id);
        let window = family.window(k);
        let n = ((8.0 * ck.len() / window.max(1e-6)).ceil() as usize).clamp(512, 4096);
        let vals: Vec<f64> = (0..n)
            .map(|i| {
                let s = ck.len() * (i as f64) / (n as f64);
                let (sb, _) = cb.nearest(ck.pos(s));
                data_k.get(id).eval(cb, sb)
            })
            .collect();
        per.push(ScalarOnCurve::from_samples(ck.len(), &vals));
    }
    let phi_k = BoundaryData::new(per);

    let manifold = BoundaryManifold::new(base, family.base());
    let (h_lo, h_hi) = manifold.height_range();
    let pad = 1.0 + 0.5 * base.diameter();
    let h_k = build_hk(curvature, &domain_k, delta, (h_lo - pad, h_hi + pad))?;

    let mut reg_radius = f64::INFINITY;
    for id in domain_k.curve_ids() {
        let c = domain_k.curve(id);
        for i in 0..8 {
            let s = c.len() * (i as f64) / 8.0;
            let r = domain_k.regularity_radius(BoundaryPoint { curve: id, s }, opts.reg_bound);
            reg_radius = reg_radius.min(r);
        }
    }

    let f_k = CollarField::build(&domain_k, &phi_k, delta, reg_radius)?;
    let mut warnings = f_k.warnings.clone();

    let phi_sup = phi_k.sup_norm(&domain_k);
    let sup_bound = phi_sup + domain_k.diameter() / (2.0 * opts.margin_eps0);

    if opts.check_margin {
        let heights = [h_lo - pad, 0.5 * (h_lo + h_hi), h_hi + pad];
        let rep = source_margin(&h_k, &f_k, &heights, 24);
        if rep.worst > 1.0 - opts.margin_eps0 {
            warnings.push(format!(
                "source margin {:.3} above the safe level {:.3}",
                rep.worst,
                1.0 - opts.margin_eps0
            ));
        }
    }

    Ok(ApproxProblem {
        k,
        domain: domain_k,
        phi: phi_k,
        delta,
        h_k,
        f_k,
        sup_bound,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::BoundaryData;

    fn disk_steps(reach: f64, grad: impl Fn(usize) -> f64, n: usize) -> Vec<ScheduleInputs> {
        (0..n)
            .map(|k| ScheduleInputs {
                reach,
                curvature_sup: 1.0,
                grad_bound: grad(k),
            })
            .collect()
    }

    #[test]
    fn schedule_base_dyadic_when_data_is_tame() {
        let steps = disk_steps(1.0, |_| 0.7, 6);
        let sch = delta_schedule(&steps, 0.4, 0.5).unwrap();
        // delta_0 capped by reach/4, then the dyadic base takes over
        assert_eq!(sch.delta(0), 0.25);
        assert_eq!(sch.delta(1), 0.2);
        assert_eq!(sch.delta(2), 0.1);
        assert_eq!(sch.delta(3), 0.05);
        for k in 1..6 {
            assert!(sch.curv_product(k) < sch.curv_product(k - 1));
            assert!(sch.grad_product(k) < sch.grad_product(k - 1));
        }
    }

    #[test]
    fn schedule_growing_gradient_halves_product() {
        let alpha = 0.5;
        let steps = disk_steps(1.0, |k| 2f64.powf(k as f64 * alpha / 4.0), 5);
        let sch = delta_schedule(&steps, 0.2, alpha).unwrap();
        for k in 1..5 {
            let ratio = sch.grad_product(k) / sch.grad_product(k - 1);
            assert!((ratio - 0.5).abs() < 1e-9, "k={k} ratio={ratio}");
            // the width shrinks faster than the dyadic base
            assert!(sch.delta(k) < 0.2 * 0.5f64.powi(k as i32));
        }
    }

    #[test]
    fn schedule_rejects_bad_inputs() {
        assert!(delta_schedule(&[], 0.1, 0.5).is_err());
        let steps = disk_steps(-1.0, |_| 0.0, 2);
        assert!(delta_schedule(&steps, 0.1, 0.5).is_err());
    }

    #[test]
    fn cutoff_curvature_regions_and_bound() {
        let d = Domain::disk(Vec2::ZERO, 1.0, 96);
        let delta = 0.04;
        let h = build_hk(
            Arc::new(ConstantCurvature(0.5)),
            &d,
            delta,
            (-1.0, 1.0),
        )
        .unwrap();
        // distance 3 delta: full value; 0.5 delta: zero; between: strict
        assert_eq!(h.value(v2(1.0 - 3.0 * delta, 0.0), 0.3), 0.5);
        assert_eq!(h.value(v2(1.0 - 0.5 * delta, 0.0), 0.3), 0.0);
        let mid = h.value(v2(1.0 - 1.5 * delta, 0.0), 0.3);
        assert!(mid > 0.0 && mid < 0.5, "mid={mid}");
        assert!(h.sup() <= 0.5);
        // unit disk solvability limit is 2
        assert!((curvature_limit(d.area()) - 2.0).abs() < 1e-4);
        let too_big = build_hk(
            Arc::new(ConstantCurvature(2.2)),
            &d,
            delta,
            (-1.0, 1.0),
        );
        assert!(matches!(
            too_big,
            Err(ApproxError::CurvatureTooLarge { .. })
        ));
    }

    #[test]
    fn cutoff_preserves_height_monotonicity() {
        let d = Domain::disk(Vec2::ZERO, 1.0, 96);
        let delta = 0.04;
        let h = build_hk(
            Arc::new(FnCurvature::new(0.2, |_x, t| 0.1 * t.atan())),
            &d,
            delta,
            (-2.0, 2.0),
        )
        .unwrap();
        let x = v2(1.0 - 1.5 * delta, 0.0);
        let mut prev = f64::NEG_INFINITY;
        for m in 0..10 {
            let t = -2.0 + 4.0 * (m as f64) / 9.0;
            let val = h.value(x, t);
            assert!(val >= prev);
            prev = val;
        }
        let bad = build_hk(
            Arc::new(FnCurvature::new(0.2, |_x, t| -0.1 * t.atan())),
            &d,
            delta,
            (-2.0, 2.0),
        );
        assert!(matches!(bad, Err(ApproxError::NotMonotoneInHeight { .. })));
    }

    #[test]
    fn collar_field_disk_values() {
        let d = Domain::disk(Vec2::ZERO, 1.0, 128);
        let phi = BoundaryData::uniform(&d, 0.0);
        let delta = 0.05;
        let f = CollarField::build(&d, &phi, delta, 0.8).unwrap();
        // above the data just inside the rim: the inward normal
        let x = v2(0.98, 0.0);
        let above = f.eval(x, 0.5);
        assert!(above.dist(v2(-1.0, 0.0)) < 2e-3, "{above:?}");
        // below: double-flux field minus the normal, radial with magnitude
        // 2/m - 1 at m = 0.98
        let below = f.eval(x, -0.5);
        let want = -(2.0 / 0.98 - 1.0);
        assert!((below.x - want).abs() < 2e-3 && below.y.abs() < 2e-3, "{below:?}");
        // deep interior: zero
        assert_eq!(f.eval(v2(0.1, 0.0), 0.3), Vec2::ZERO);
        // band region: normal transport with trace eta at w_v
        let w_v = f.w_v(CurveId(0));
        let xb = v2(1.0 - 0.999 * w_v, 0.0);
        let band = f.eval(xb, 0.0);
        assert!(band.dist(v2(-1.0, 0.0)) < 5e-3, "{band:?}");
    }

    #[test]
    fn collar_regions_partition_and_heights_decouple() {
        let d = Domain::annulus(Vec2::ZERO, 1.0, 0.35, 128, 96);
        let phi = BoundaryData::uniform(&d, 0.2);
        let delta = 0.03;
        let f = CollarField::build(&d, &phi, delta, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut seen = [0usize; 5];
        for _ in 0..100_000 {
            let x = v2(rng.gen_range(-1.1..1.1), rng.gen_range(-1.1..1.1));
            let h = rng.gen_range(-2.0..2.0);
            let probe = f.probe(x);
            let region = probe.region(h);
            seen[match region {
                Region::Above => 0,
                Region::Below => 1,
                Region::Wedge => 2,
                Region::Band => 3,
                Region::Outside => 4,
            }] += 1;
            // classification must agree with the raw geometry
            if !d.contains(x) {
                assert_eq!(region, Region::Outside);
                continue;
            }
            let (id, _, dist, _) = d.nearest_boundary(x);
            let expect = if dist >= f.w_v(id) {
                Region::Outside
            } else if dist >= delta {
                Region::Band
            } else {
                let psi = h - 0.2;
                if psi >= dist {
                    Region::Above
                } else if psi <= -dist {
                    Region::Below
                } else {
                    Region::Wedge
                }
            };
            assert_eq!(region, expect, "at {x:?} h={h}");
            // off the wedge the value is height independent
            match region {
                Region::Above => {
                    assert_eq!(probe.value(h), probe.value(h + 1.0));
                    if dist <= 0.5 * delta {
                        assert_eq!(probe.value(h), probe.eta());
                    }
                }
                Region::Below => {
                    assert_eq!(probe.value(h), probe.value(h - 1.0));
                }
                Region::Band | Region::Outside => {
                    assert_eq!(probe.value(h), probe.value(-h));
                }
                Region::Wedge => {}
            }
        }
        // the wedge is a thin double cone and sees far fewer samples
        for (i, &n) in seen.iter().enumerate() {
            let min = if i == 2 { 10 } else { 100 };
            assert!(n > min, "region {i} undersampled: {n}");
        }
    }

    #[test]
    fn collar_divergence_identities() {
        let d = Domain::new(
            crate::domain::BoundaryCurve::ellipse(Vec2::ZERO, 1.0, 0.7, 192),
            vec![],
            0.5,
        )
        .unwrap();
        let phi = BoundaryData::uniform(&d, 0.0);
        let delta = 0.04;
        let f = CollarField::build(&d, &phi, delta, 0.6).unwrap();
        let rep = f.divergence_residual(6, 64);
        assert!(rep.above < 1e-5, "above={}", rep.above);
        assert!(rep.below < 1e-5, "below={}", rep.below);
        assert!(rep.band < 1e-5, "band={}", rep.band);
        assert!(rep.outside < 1e-12, "outside={}", rep.outside);
    }

    #[test]
    fn collar_field_stays_holder_bounded() {
        let d = Domain::disk(Vec2::ZERO, 1.0, 128);
        let phi = BoundaryData::uniform(&d, 0.1);
        let f = CollarField::build(&d, &phi, 0.05, 0.6).unwrap();
        let rep = f.holder_constant(0.4, 4, 200, 3);
        assert!(rep.worst_c.is_finite());
        assert!(rep.worst_c < 40.0, "C={}", rep.worst_c);
        assert!(rep.lhs >= 1.0 - 1e-9);
    }

    #[test]
    fn divergence_product_decreases_with_k() {
        // measured sup of the plane divergence times sqrt(delta) must fall
        // as the widths shrink
        let d = Domain::disk(Vec2::ZERO, 1.0, 128);
        let phi = BoundaryData::uniform(&d, 0.0);
        let mut prev = f64::INFINITY;
        for k in 0..3 {
            let delta = 0.06 * 0.5f64.powi(k);
            let f = CollarField::build(&d, &phi, delta, 0.6).unwrap();
            // FD divergence at upper-wedge points across the collar
            let mut sup_div: f64 = 0.0;
            let h = 1.0;
            let step = 1e-6;
            for i in 0..32 {
                let th = 2.0 * PI * (i as f64) / 32.0;
                let dir = v2(th.cos(), th.sin());
                for j in 1..8 {
                    let dist = delta * (j as f64) / 20.0;
                    let x = dir * (1.0 - dist);
                    let dxx = (f.eval(x + v2(step, 0.0), h).x - f.eval(x - v2(step, 0.0), h).x)
                        / (2.0 * step);
                    let dyy = (f.eval(x + v2(0.0, step), h).y - f.eval(x - v2(0.0, step), h).y)
                        / (2.0 * step);
                    sup_div = sup_div.max((dxx + dyy).abs());
                }
            }
            let product = delta.sqrt() * sup_div;
            assert!(product < prev, "k={k} product={product} prev={prev}");
            prev = product;
        }
    }

    #[test]
    fn assemble_disk_problem() {
        let d = Domain::disk(Vec2::ZERO, 1.0, 128);
        let family = BoundaryFamily::new(BoundaryData::uniform(&d, 0.0), 0.2);
        let opts = AssembleOptions::default();
        let (schedule, _) = schedule_for_family(&d, &family, opts.eps0, opts.delta0, 2).unwrap();
        let p = assemble_problem(
            0,
            &d,
            &family,
            Arc::new(ConstantCurvature(0.0)),
            &schedule,
            &opts,
        )
        .unwrap();
        assert_eq!(p.k, 0);
        assert!((p.domain.area() - PI * 0.95f64.powi(2)).abs() < 1e-2);
        assert!(p.delta <= p.domain.reach() / 4.0 * (1.0 + 1e-9));
        assert!(p.sup_bound > 0.0);
        assert!(p.phi.sup_norm(&p.domain) < 1e-9);
        // with zero data and zero curvature the margin check passes
        assert!(
            p.warnings.iter().all(|w| !w.contains("margin")),
            "{:?}",
            p.warnings
        );
        let p1 = assemble_problem(
            1,
            &d,
            &family,
            Arc::new(ConstantCurvature(0.0)),
            &schedule,
            &opts,
        )
        .unwrap();
        assert!(p1.delta < p.delta);
        assert!(p1.domain.area() > p.domain.area());
    }
}
