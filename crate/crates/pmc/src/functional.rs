//! The relaxed height functional and the weak residual of the regularized
//! equation on a piecewise-linear finite element space.
//!
//! F(v) = graph area + curvature volume + boundary attachment penalty.
//! Boundary nodal values float freely; detachment costs the penalty term
//! exactly as the vertical wall area does in the relaxed setting.

use std::sync::Arc;

use crate::approx::{ApproxProblem, CollarField, CutoffCurvature, PrescribedCurvature};
use crate::boundary::BoundaryData;
use crate::domain::{Domain, Mesh};
use crate::exec::{self, Mode};
use crate::geom::Vec2;
use crate::quad;

/// Nodal heights over a fixed mesh, interpolated linearly per triangle.
#[derive(Clone)]
pub struct DiscreteScalarField {
    mesh: Arc<Mesh>,
    values: Vec<f64>,
}

impl DiscreteScalarField {
    pub fn new(mesh: Arc<Mesh>, values: Vec<f64>) -> DiscreteScalarField {
        assert_eq!(values.len(), mesh.vertex_count());
        assert!(values.iter().all(|v| v.is_finite()), "nonfinite height");
        DiscreteScalarField { mesh, values }
    }

    pub fn zeros(mesh: Arc<Mesh>) -> DiscreteScalarField {
        let n = mesh.vertex_count();
        DiscreteScalarField {
            mesh,
            values: vec![0.0; n],
        }
    }

    pub fn constant(mesh: Arc<Mesh>, c: f64) -> DiscreteScalarField {
        assert!(c.is_finite());
        let n = mesh.vertex_count();
        DiscreteScalarField {
            mesh,
            values: vec![c; n],
        }
    }

    pub fn from_fn(mesh: Arc<Mesh>, f: impl Fn(Vec2) -> f64) -> DiscreteScalarField {
        let values: Vec<f64> = mesh.vertices().iter().map(|&p| f(p)).collect();
        DiscreteScalarField::new(mesh, values)
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn value_at(&self, p: Vec2) -> Option<f64> {
        self.mesh.value_at(&self.values, p)
    }

    pub fn tri_gradient(&self, tri: usize) -> Vec2 {
        self.mesh.tri_gradient(&self.values, tri)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// Diagnostic box-bound check against a sup estimate m.
    pub fn within_box(&self, m: f64) -> bool {
        self.sup_norm() <= 1.5 * m
    }

    pub fn shifted(&self, c: f64) -> DiscreteScalarField {
        let values = self.values.iter().map(|v| v + c).collect();
        DiscreteScalarField::new(self.mesh.clone(), values)
    }
}

/// The height potential G(x, t) of a curvature source, with its height
/// derivative H(x, t) = dG/dt kept alongside for gradients and residuals.
#[derive(Clone)]
pub struct CurvaturePotential {
    g: Arc<dyn Fn(Vec2, f64) -> f64 + Send + Sync>,
    h: Arc<dyn Fn(Vec2, f64) -> f64 + Send + Sync>,
}

impl CurvaturePotential {
    pub fn zero() -> CurvaturePotential {
        CurvaturePotential {
            g: Arc::new(|_, _| 0.0),
            h: Arc::new(|_, _| 0.0),
        }
    }

    pub fn constant(c: f64) -> CurvaturePotential {
        CurvaturePotential {
            g: Arc::new(move |_, t| c * t),
            h: Arc::new(move |_, _| c),
        }
    }

    /// Closed-form potential and derivative supplied together.
    pub fn closed(
        g: impl Fn(Vec2, f64) -> f64 + Send + Sync + 'static,
        h: impl Fn(Vec2, f64) -> f64 + Send + Sync + 'static,
    ) -> CurvaturePotential {
        CurvaturePotential {
            g: Arc::new(g),
            h: Arc::new(h),
        }
    }

    /// Potential of a general curvature by adaptive height quadrature.
    pub fn from_curvature(base: Arc<dyn PrescribedCurvature>, tol: f64) -> CurvaturePotential {
        let b = base.clone();
        CurvaturePotential {
            g: Arc::new(move |x, t| quad::adaptive(0.0, t, tol, |s| b.value(x, s))),
            h: Arc::new(move |x, t| base.value(x, t)),
        }
    }

    /// Potential of a cut-off curvature; the distance ramp factors out of
    /// the height integral and is evaluated once per point.
    pub fn from_cutoff(hk: CutoffCurvature, tol: f64) -> CurvaturePotential {
        let hk2 = hk.clone();
        CurvaturePotential {
            g: Arc::new(move |x, t| {
                let r = hk.ramp(x);
                if r == 0.0 || t == 0.0 {
                    return 0.0;
                }
                r * quad::adaptive(0.0, t, tol, |s| hk.value_with_ramp(1.0, x, s))
            }),
            h: Arc::new(move |x, t| hk2.value(x, t)),
        }
    }

    pub fn g(&self, x: Vec2, t: f64) -> f64 {
        (self.g)(x, t)
    }

    pub fn h(&self, x: Vec2, t: f64) -> f64 {
        (self.h)(x, t)
    }
}

/// One evaluation of the functional, split into its three integrals.
#[derive(Debug, Clone, Copy)]
pub struct FunctionalBreakdown {
    pub area: f64,
    pub curvature_volume: f64,
    pub boundary_penalty: f64,
    pub total: f64,
    pub epsilon: f64,
}

impl FunctionalBreakdown {
    pub fn csv_header() -> &'static str {
        "iteration,area,curvature_volume,boundary_penalty,total,epsilon"
    }

    pub fn csv_row(&self, iteration: usize) -> String {
        format!(
            "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.3e}",
            iteration, self.area, self.curvature_volume, self.boundary_penalty, self.total,
            self.epsilon
        )
    }
}

pub(crate) fn smooth_abs(t: f64, eps: f64) -> f64 {
    if eps == 0.0 {
        t.abs()
    } else {
        (t * t + eps * eps).sqrt() - eps
    }
}

pub(crate) fn smooth_abs_deriv(t: f64, eps: f64) -> f64 {
    t / (t * t + eps * eps).sqrt()
}

/// Arclength spans of one boundary edge after splitting at data jumps, so
/// every quadrature node sees a single-sided data value.
pub(crate) fn edge_pieces(e_s: [f64; 2], curve_len: f64, jumps: &[f64]) -> Vec<(f64, f64)> {
    let s0 = e_s[0];
    let mut s1 = e_s[1];
    if s1 <= s0 {
        s1 += curve_len;
    }
    let mut cuts: Vec<f64> = Vec::new();
    for &j in jumps {
        for cand in [j, j + curve_len] {
            if cand > s0 && cand < s1 {
                cuts.push(cand);
            }
        }
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut out = Vec::with_capacity(cuts.len() + 1);
    let mut a = s0;
    for c in cuts {
        out.push((a, c));
        a = c;
    }
    out.push((a, s1));
    out
}

pub(crate) const EDGE_GL: usize = 8;

/// Per-curve jump arclengths of the boundary data (exact jumps only;
/// smoothed families are continuous and need no splitting).
pub(crate) fn jump_table(domain: &Domain, phi: &BoundaryData) -> Vec<Vec<f64>> {
    let mut table = vec![Vec::new(); domain.curve_count()];
    for (id, info) in phi.jumps() {
        table[id.0].push(info.s);
    }
    table
}

pub fn evaluate_f(
    v: &DiscreteScalarField,
    domain: &Domain,
    phi: &BoundaryData,
    potential: &CurvaturePotential,
    eps: f64,
    mode: Mode,
) -> FunctionalBreakdown {
    let mesh = v.mesh();
    let nt = mesh.triangle_count();
    let vals = v.values();

    let area = exec::sum_indexed(mode, nt, |t| {
        let g = mesh.tri_gradient(vals, t);
        mesh.area(t) * (1.0 + g.norm2()).sqrt()
    });

    let rule = quad::triangle_rule_deg4();
    let verts = mesh.vertices();
    let curvature_volume = exec::sum_indexed(mode, nt, |t| {
        let [i, j, k] = mesh.triangles()[t];
        let (pi, pj, pk) = (verts[i as usize], verts[j as usize], verts[k as usize]);
        let (vi, vj, vk) = (vals[i as usize], vals[j as usize], vals[k as usize]);
        let a = mesh.area(t);
        let mut acc = 0.0;
        for &(bc, w) in rule {
            let x = pi * bc[0] + pj * bc[1] + pk * bc[2];
            let h = vi * bc[0] + vj * bc[1] + vk * bc[2];
            acc += w * potential.g(x, h);
        }
        a * acc
    });

    let jumps = jump_table(domain, phi);
    let edges = mesh.boundary_edges();
    let boundary_penalty = exec::sum_indexed(mode, edges.len(), |ei| {
        let e = &edges[ei];
        let curve = domain.curve(e.curve);
        let data = phi.get(e.curve);
        let len = curve.len();
        let (v0, v1) = (vals[e.v[0] as usize], vals[e.v[1] as usize]);
        let mut acc = 0.0;
        for (a, b) in edge_pieces(e.s, len, &jumps[e.curve.0]) {
            let span = {
                let mut t = e.s[1];
                if t <= e.s[0] {
                    t += len;
                }
                t - e.s[0]
            };
            acc += quad::integrate(a, b, EDGE_GL, |s| {
                let t = (s - e.s[0]) / span;
                let vv = v0 * (1.0 - t) + v1 * t;
                smooth_abs(vv - data.eval(curve, s), eps)
            });
        }
        acc
    });

    FunctionalBreakdown {
        area,
        curvature_volume,
        boundary_penalty,
        total: area + curvature_volume + boundary_penalty,
        epsilon: eps,
    }
}

/// Nodal gradient of the functional. Requires eps > 0 so the penalty is
/// differentiable; matches finite differences of `evaluate_f`.
pub fn gradient_f(
    v: &DiscreteScalarField,
    domain: &Domain,
    phi: &BoundaryData,
    potential: &CurvaturePotential,
    eps: f64,
    mode: Mode,
) -> Vec<f64> {
    assert!(eps > 0.0, "gradient needs a smoothed penalty");
    let mesh = v.mesh();
    let n = mesh.vertex_count();
    let nt = mesh.triangle_count();
    let vals = v.values();
    let rule = quad::triangle_rule_deg4();
    let verts = mesh.vertices();

    let mut grad = exec::scatter_sum::<_, 3>(mode, nt, n, |t| {
        let [i, j, k] = mesh.triangles()[t];
        let (pi, pj, pk) = (verts[i as usize], verts[j as usize], verts[k as usize]);
        let (vi, vj, vk) = (vals[i as usize], vals[j as usize], vals[k as usize]);
        let a = mesh.area(t);
        let g = mesh.tri_gradient(vals, t);
        let w = (1.0 + g.norm2()).sqrt();
        let sg = mesh.shape_gradients(t);
        let mut out = [0.0f64; 3];
        for (l, o) in out.iter_mut().enumerate() {
            *o = a * g.dot(sg[l]) / w;
        }
        for &(bc, wq) in rule {
            let x = pi * bc[0] + pj * bc[1] + pk * bc[2];
            let h = vi * bc[0] + vj * bc[1] + vk * bc[2];
            let hv = potential.h(x, h);
            for l in 0..3 {
                out[l] += a * wq * hv * bc[l];
            }
        }
        [
            (i as usize, out[0]),
            (j as usize, out[1]),
            (k as usize, out[2]),
        ]
    });

    let jumps = jump_table(domain, phi);
    let edges = mesh.boundary_edges();
    let edge_grad = exec::scatter_sum::<_, 2>(mode, edges.len(), n, |ei| {
        let e = &edges[ei];
        let curve = domain.curve(e.curve);
        let data = phi.get(e.curve);
        let len = curve.len();
        let (v0, v1) = (vals[e.v[0] as usize], vals[e.v[1] as usize]);
        let span = {
            let mut t = e.s[1];
            if t <= e.s[0] {
                t += len;
            }
            t - e.s[0]
        };
        let mut out = [0.0f64; 2];
        for (a, b) in edge_pieces(e.s, len, &jumps[e.curve.0]) {
            let (xs, ws) = quad::gauss_legendre(EDGE_GL);
            let c = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (x, w) in xs.iter().zip(&ws) {
                let s = mid + c * x;
                let t = (s - e.s[0]) / span;
                let vv = v0 * (1.0 - t) + v1 * t;
                let d = smooth_abs_deriv(vv - data.eval(curve, s), eps);
                out[0] += c * w * d * (1.0 - t);
                out[1] += c * w * d * t;
            }
        }
        [(e.v[0] as usize, out[0]), (e.v[1] as usize, out[1])]
    });
    for (g, eg) in grad.iter_mut().zip(&edge_grad) {
        *g += eg;
    }
    grad
}

/// The two x-dependent coefficients of the regularized weak form. Either
/// piece may be absent; the fully homogeneous form is the gradient operator
/// alone.
#[derive(Clone, Copy)]
pub struct WeakForm<'a> {
    pub curvature: Option<&'a CutoffCurvature>,
    pub field: Option<&'a CollarField>,
}

impl<'a> WeakForm<'a> {
    pub fn homogeneous() -> WeakForm<'static> {
        WeakForm {
            curvature: None,
            field: None,
        }
    }

    pub fn of(problem: &'a ApproxProblem) -> WeakForm<'a> {
        WeakForm {
            curvature: Some(&problem.h_k),
            field: Some(&problem.f_k),
        }
    }
}

/// Interior-node residuals of the weak equation; boundary-node entries are
/// zero by convention since their values are constrained.
#[derive(Debug, Clone)]
pub struct WeakResidual {
    pub per_node: Vec<f64>,
    pub max_norm: f64,
}

/// For each interior hat function z: area-term pairing grad v . grad z / W
/// plus curvature source minus field pairing, with both coefficients read
/// at the graph height v(x).
pub fn weak_residual(v: &DiscreteScalarField, form: &WeakForm, mode: Mode) -> WeakResidual {
    let mesh = v.mesh();
    let n = mesh.vertex_count();
    let nt = mesh.triangle_count();
    let vals = v.values();
    let rule = quad::triangle_rule_deg4();
    let verts = mesh.vertices();

    let raw = exec::scatter_sum::<_, 3>(mode, nt, n, |t| {
        let [i, j, k] = mesh.triangles()[t];
        let (pi, pj, pk) = (verts[i as usize], verts[j as usize], verts[k as usize]);
        let (vi, vj, vk) = (vals[i as usize], vals[j as usize], vals[k as usize]);
        let a = mesh.area(t);
        let g = mesh.tri_gradient(vals, t);
        let w = (1.0 + g.norm2()).sqrt();
        let sg = mesh.shape_gradients(t);
        let mut out = [0.0f64; 3];
        for (l, o) in out.iter_mut().enumerate() {
            *o = a * g.dot(sg[l]) / w;
        }
        if form.curvature.is_some() || form.field.is_some() {
            let mut f_avg = Vec2::ZERO;
            for &(bc, wq) in rule {
                let x = pi * bc[0] + pj * bc[1] + pk * bc[2];
                let h = vi * bc[0] + vj * bc[1] + vk * bc[2];
                if let Some(hk) = form.curvature {
                    let hv = hk.value(x, h);
                    for l in 0..3 {
                        out[l] += a * wq * hv * bc[l];
                    }
                }
                if let Some(fk) = form.field {
                    f_avg = f_avg + fk.eval(x, h) * wq;
                }
            }
            if form.field.is_some() {
                for l in 0..3 {
                    out[l] -= a * f_avg.dot(sg[l]);
                }
            }
        }
        [
            (i as usize, out[0]),
            (j as usize, out[1]),
            (k as usize, out[2]),
        ]
    });

    let mut per_node = raw;
    let mut max_norm: f64 = 0.0;
    for i in 0..n {
        if mesh.boundary_attach(i as u32).is_some() {
            per_node[i] = 0.0;
        } else {
            max_norm = max_norm.max(per_node[i].abs());
        }
    }
    WeakResidual { per_node, max_norm }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::{build_hk, ConstantCurvature};
    use crate::boundary::ScalarOnCurve;
    use crate::domain::MeshOptions;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn disk_mesh(h: f64) -> (Domain, Arc<Mesh>) {
        let d = Domain::disk(Vec2::ZERO, 1.0, 96);
        let mesh = Mesh::generate(&d, &MeshOptions::with_h(h)).unwrap();
        (d, Arc::new(mesh))
    }

    #[test]
    fn flat_disk_breakdown() {
        let (d, mesh) = disk_mesh(0.1);
        let v = DiscreteScalarField::zeros(mesh.clone());
        let phi = BoundaryData::uniform(&d, 0.0);
        let b = evaluate_f(&v, &d, &phi, &CurvaturePotential::zero(), 0.0, Mode::Sequential);
        assert!((b.area - PI).abs() < 5e-3, "area={}", b.area);
        assert_eq!(b.curvature_volume, 0.0);
        assert_eq!(b.boundary_penalty, 0.0);
        assert_eq!(b.total, b.area);
        // flat graph area equals the mesh area and bounds it from above
        assert!(b.area >= mesh.total_area() * (1.0 - 1e-14));
    }

    #[test]
    fn affine_graph_area_exact() {
        let (d, mesh) = disk_mesh(0.1);
        let a = 0.8;
        let v = DiscreteScalarField::from_fn(mesh.clone(), |p| a * p.x);
        let phi = BoundaryData::new(vec![ScalarOnCurve::affine(
            d.outer().len(),
            0.0,
            crate::geom::v2(a, 0.0),
        )]);
        let b = evaluate_f(&v, &d, &phi, &CurvaturePotential::zero(), 0.0, Mode::Sequential);
        let expect = (1.0 + a * a).sqrt() * mesh.total_area();
        assert!((b.area - expect).abs() / expect < 1e-13, "area={}", b.area);
        assert_eq!(b.curvature_volume, 0.0);
        // nodal trace matches the data; mid-edge chord deviation is O(h^2)
        assert!(b.boundary_penalty < 5e-3, "penalty={}", b.boundary_penalty);
    }

    #[test]
    fn constant_height_curvature_volume() {
        let (d, mesh) = disk_mesh(0.12);
        let (c, t) = (0.3, 0.7);
        let v = DiscreteScalarField::constant(mesh.clone(), t);
        let phi = BoundaryData::uniform(&d, 0.0);
        let b = evaluate_f(&v, &d, &phi, &CurvaturePotential::constant(c), 0.0, Mode::Sequential);
        let expect = c * t * mesh.total_area();
        assert!(
            (b.curvature_volume - expect).abs() / expect < 1e-13,
            "vol={}",
            b.curvature_volume
        );
        // constant offset penalty integrates the exact perimeter
        let perim = d.outer().len();
        assert!((b.boundary_penalty - t * perim).abs() / (t * perim) < 1e-12);
    }

    #[test]
    fn potential_by_quadrature_matches_closed_form() {
        let base: Arc<dyn PrescribedCurvature> = Arc::new(ConstantCurvature(0.4));
        let p = CurvaturePotential::from_curvature(base, 1e-12);
        for t in [-1.3, -0.2, 0.0, 0.5, 2.0] {
            assert!((p.g(Vec2::ZERO, t) - 0.4 * t).abs() < 1e-10, "t={t}");
        }
    }

    #[test]
    fn translation_changes_only_penalty() {
        let (d, mesh) = disk_mesh(0.15);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let phi = BoundaryData::uniform(&d, 0.1);
        // dyadic heights and shifts so v + c is exact and the bitwise area
        // comparison is meaningful
        let snap = |x: f64| (x * 1048576.0).round() / 1048576.0;
        for _ in 0..5 {
            let v = DiscreteScalarField::new(
                mesh.clone(),
                (0..mesh.vertex_count())
                    .map(|_| snap(rng.gen_range(-0.5..0.5)))
                    .collect(),
            );
            let c = snap(rng.gen_range(-1.0..1.0));
            let b0 = evaluate_f(&v, &d, &phi, &CurvaturePotential::zero(), 1e-3, Mode::Sequential);
            let b1 = evaluate_f(
                &v.shifted(c),
                &d,
                &phi,
                &CurvaturePotential::zero(),
                1e-3,
                Mode::Sequential,
            );
            assert_eq!(b0.area.to_bits(), b1.area.to_bits());
            assert_eq!(b0.curvature_volume, 0.0);
            assert_eq!(b1.curvature_volume, 0.0);
            let dt = b1.total - b0.total;
            let dp = b1.boundary_penalty - b0.boundary_penalty;
            assert!((dt - dp).abs() < 1e-12 * (1.0 + dt.abs()));
        }
    }

    #[test]
    fn area_term_is_convex() {
        let (d, mesh) = disk_mesh(0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let phi = BoundaryData::uniform(&d, 0.0);
        let p = CurvaturePotential::zero();
        for _ in 0..20 {
            let rand_field = |rng: &mut ChaCha8Rng| {
                DiscreteScalarField::new(
                    mesh.clone(),
                    (0..mesh.vertex_count())
                        .map(|_| rng.gen_range(-1.0..1.0))
                        .collect(),
                )
            };
            let v = rand_field(&mut rng);
            let w = rand_field(&mut rng);
            let mid = DiscreteScalarField::new(
                mesh.clone(),
                v.values()
                    .iter()
                    .zip(w.values())
                    .map(|(a, b)| 0.5 * (a + b))
                    .collect(),
            );
            let av = evaluate_f(&v, &d, &phi, &p, 0.0, Mode::Sequential).area;
            let aw = evaluate_f(&w, &d, &phi, &p, 0.0, Mode::Sequential).area;
            let am = evaluate_f(&mid, &d, &phi, &p, 0.0, Mode::Sequential).area;
            assert!(am <= 0.5 * (av + aw) + 1e-12, "am={am} bound={}", 0.5 * (av + aw));
        }
    }

    #[test]
    fn penalty_smoothing_monotone_from_below() {
        let (d, mesh) = disk_mesh(0.15);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = DiscreteScalarField::new(
            mesh.clone(),
            (0..mesh.vertex_count())
                .map(|_| rng.gen_range(-0.3..0.3))
                .collect(),
        );
        let phi = BoundaryData::uniform(&d, 0.05);
        let p = CurvaturePotential::zero();
        let pen = |eps: f64| evaluate_f(&v, &d, &phi, &p, eps, Mode::Sequential).boundary_penalty;
        let (p2, p3, p4, p0) = (pen(1e-2), pen(1e-3), pen(1e-4), pen(0.0));
        assert!(p2 <= p3 && p3 <= p4 && p4 <= p0, "{p2} {p3} {p4} {p0}");
        assert!(p0 - p4 < 1e-3 * (1.0 + p0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (d, mesh) = disk_mesh(0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let v = DiscreteScalarField::new(
            mesh.clone(),
            (0..mesh.vertex_count())
                .map(|_| rng.gen_range(-0.4..0.4))
                .collect(),
        );
        let phi = BoundaryData::uniform(&d, 0.1);
        let p = CurvaturePotential::closed(
            |x, t| 0.3 * (1.0 - t.cos()) + 0.1 * x.x * 0.5 * t * t,
            |x, t| 0.3 * t.sin() + 0.1 * x.x * t,
        );
        let eps = 1e-2;
        let grad = gradient_f(&v, &d, &phi, &p, eps, Mode::Sequential);
        let n = mesh.vertex_count();
        for _ in 0..10 {
            let i = rng.gen_range(0..n);
            let step = 1e-6;
            let mut vp = v.clone();
            vp.values_mut()[i] += step;
            let mut vm = v.clone();
            vm.values_mut()[i] -= step;
            let fp = evaluate_f(&vp, &d, &phi, &p, eps, Mode::Sequential).total;
            let fm = evaluate_f(&vm, &d, &phi, &p, eps, Mode::Sequential).total;
            let fd = (fp - fm) / (2.0 * step);
            assert!(
                (grad[i] - fd).abs() <= 1e-5 * fd.abs().max(1.0),
                "node {i}: grad={} fd={fd}",
                grad[i]
            );
        }
    }

    #[test]
    fn zero_field_has_zero_gradient() {
        let (d, mesh) = disk_mesh(0.2);
        let v = DiscreteScalarField::zeros(mesh);
        let phi = BoundaryData::uniform(&d, 0.0);
        let grad = gradient_f(&v, &d, &phi, &CurvaturePotential::zero(), 1e-3, Mode::Sequential);
        for g in grad {
            assert_eq!(g, 0.0);
        }
    }

    #[test]
    fn penalty_gradient_sign_above_data() {
        let (d, mesh) = disk_mesh(0.2);
        let v = DiscreteScalarField::constant(mesh.clone(), 1.0);
        let phi = BoundaryData::uniform(&d, 0.0);
        let grad = gradient_f(&v, &d, &phi, &CurvaturePotential::zero(), 1e-3, Mode::Sequential);
        for i in 0..mesh.vertex_count() {
            if mesh.boundary_attach(i as u32).is_some() {
                assert!(grad[i] > 0.0, "boundary node {i}: {}", grad[i]);
            } else {
                assert_eq!(grad[i], 0.0, "interior node {i}");
            }
        }
    }

    #[test]
    fn penalty_splits_at_data_jumps() {
        let (d, mesh) = disk_mesh(0.1);
        let len = d.outer().len();
        // sawtooth data: linear ramp closing with a unit jump; v stays at 0,
        // so the exact penalty is the triangle area len/2. Without the edge
        // split the straddling edge alone costs ~1e-3 relative.
        let phi = BoundaryData::new(vec![ScalarOnCurve::with_jump(len, 0.3 * len, move |sigma| {
            sigma / len
        })]);
        let v = DiscreteScalarField::zeros(mesh);
        let b = evaluate_f(&v, &d, &phi, &CurvaturePotential::zero(), 0.0, Mode::Sequential);
        let expect = 0.5 * len;
        assert!(
            (b.boundary_penalty - expect).abs() / expect < 1e-12,
            "penalty={} expect={expect}",
            b.boundary_penalty
        );
    }

    #[test]
    fn modes_agree_bitwise() {
        let (d, mesh) = disk_mesh(0.15);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = DiscreteScalarField::new(
            mesh.clone(),
            (0..mesh.vertex_count())
                .map(|_| rng.gen_range(-0.5..0.5))
                .collect(),
        );
        let phi = BoundaryData::uniform(&d, 0.1);
        let p = CurvaturePotential::constant(0.4);
        let a = evaluate_f(&v, &d, &phi, &p, 1e-3, Mode::Sequential);
        let b = evaluate_f(&v, &d, &phi, &p, 1e-3, Mode::Parallel);
        assert_eq!(a.total.to_bits(), b.total.to_bits());
        let ga = gradient_f(&v, &d, &phi, &p, 1e-3, Mode::Sequential);
        let gb = gradient_f(&v, &d, &phi, &p, 1e-3, Mode::Parallel);
        for (x, y) in ga.iter().zip(&gb) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        let ra = weak_residual(&v, &WeakForm::homogeneous(), Mode::Sequential);
        let rb = weak_residual(&v, &WeakForm::homogeneous(), Mode::Parallel);
        for (x, y) in ra.per_node.iter().zip(&rb.per_node) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn weak_residual_zero_for_flat_homogeneous() {
        let (_, mesh) = disk_mesh(0.2);
        let v = DiscreteScalarField::zeros(mesh);
        let r = weak_residual(&v, &WeakForm::homogeneous(), Mode::Sequential);
        assert_eq!(r.max_norm, 0.0);
        for x in r.per_node {
            assert_eq!(x, 0.0);
        }
    }

    #[test]
    fn weak_residual_shift_invariant_without_sources() {
        let (_, mesh) = disk_mesh(0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        // dyadic heights and a dyadic shift keep v + c exact nodewise
        let snap = |x: f64| (x * 1048576.0).round() / 1048576.0;
        let v = DiscreteScalarField::new(
            mesh.clone(),
            (0..mesh.vertex_count())
                .map(|_| snap(rng.gen_range(-0.5..0.5)))
                .collect(),
        );
        let r0 = weak_residual(&v, &WeakForm::homogeneous(), Mode::Sequential);
        let r1 = weak_residual(&v.shifted(0.375), &WeakForm::homogeneous(), Mode::Sequential);
        for (a, b) in r0.per_node.iter().zip(&r1.per_node) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn spherical_cap_residual_shrinks_under_refinement() {
        // graph of a sphere of radius 2 solves the equation with constant
        // curvature -1; nodal samples must be consistent at first order
        let rr = 2.0;
        let d = Domain::disk(Vec2::ZERO, 0.9, 128);
        let hk = build_hk(
            Arc::new(ConstantCurvature(-2.0 / rr)),
            &d,
            1e-4,
            (0.0, 2.5),
        )
        .unwrap();
        let form = WeakForm {
            curvature: Some(&hk),
            field: None,
        };
        let mut norms = Vec::new();
        for h in [0.1, 0.05] {
            let mesh = Arc::new(Mesh::generate(&d, &MeshOptions::with_h(h)).unwrap());
            let v = DiscreteScalarField::from_fn(mesh.clone(), |p| (rr * rr - p.norm2()).sqrt());
            let r = weak_residual(&v, &form, Mode::Sequential);
            norms.push(r.max_norm);
        }
        let rate = (norms[0] / norms[1]).log2();
        assert!(rate > 0.8, "norms {:?} rate {rate}", norms);
    }
}
