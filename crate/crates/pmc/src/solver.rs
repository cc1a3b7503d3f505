//! Minimization of the relaxed functional, the regularized interior
//! problems it is approximated by, the loading continuation that reaches
//! them from the zero solution, and boundary barriers that pin gradient
//! control at chosen boundary points.

use std::sync::Arc;

use thiserror::Error;

use crate::approx::{
    build_hk, ApproxError, ApproxProblem, CollarField, CollarProbe, CutoffCurvature,
    PrescribedCurvature,
};
use crate::boundary::{BoundaryData, BoundaryFamily};
use crate::domain::{BoundaryPoint, CollarGrading, Domain, GeometryError, Mesh, MeshOptions};
use crate::exec::{self, Mode};
use crate::functional::{
    self, edge_pieces, jump_table, CurvaturePotential, DiscreteScalarField, FunctionalBreakdown,
    WeakForm, EDGE_GL,
};
use crate::geom::{v2, Vec2};
use crate::linalg::{solve_cg, Csr};
use crate::quad;

#[derive(Debug, Error)]
pub enum SolverError {
    /// The iteration stopped above tolerance; `best` carries the last
    /// iterate so callers can inspect or restart.
    #[error("newton iteration stalled after {iterations} steps (residual {residual:.3e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },
    #[error("continuation cannot advance past sigma = {sigma:.4}")]
    ContinuationStall { sigma: f64 },
    #[error("no profile in the barrier search grid is a supersolution at ({x:.4}, {y:.4})")]
    BarrierConstructionFailed { x: f64, y: f64 },
    #[error("invalid solver options: {0}")]
    InvalidOptions(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Approx(#[from] ApproxError),
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Newton iteration cap per smoothing stage.
    pub max_newton: usize,
    /// Sufficient-decrease constant of the backtracking line search.
    pub armijo_c: f64,
    pub armijo_shrink: f64,
    /// Smallest admissible line-search step before giving up.
    pub min_step: f64,
    /// Penalty smoothing widths, outer to inner; the functional is
    /// minimized once per width with warm starts in between.
    pub eps_schedule: Vec<f64>,
    /// Loading grid for the continuation; must run from 0 to 1.
    pub sigma_steps: Vec<f64>,
    /// Bisection floor: continuation gives up when the gap to the next
    /// loading level falls below this.
    pub min_sigma_gap: f64,
    /// Target sup norm of the gradient (minimization) or of the weak
    /// residual (interior problems).
    pub tol_res: f64,
    pub tol_step: f64,
    /// Gradient magnitude cap inside the area metric; keeps the Newton
    /// matrix away from exact degeneracy on wild iterates.
    pub grad_cap: f64,
    /// Run the exact attachment pass after the smoothing schedule.
    pub polish: bool,
    /// A boundary vertex counts as detached when it sits farther than
    /// this multiple of the last smoothing width from the data.
    pub detach_factor: f64,
    /// Graph-norm level defining the boundary regularity radius when the
    /// continuation rebuilds its collar fields.
    pub reg_bound: f64,
    /// Cap on field-freeze sweeps in the interior solver.
    pub max_outer: usize,
}

impl Default for SolverOptions {
    fn default() -> SolverOptions {
        SolverOptions {
            max_newton: 40,
            armijo_c: 1e-4,
            armijo_shrink: 0.5,
            min_step: 1e-12,
            eps_schedule: vec![1e-2, 1e-3, 1e-4, 1e-5],
            sigma_steps: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            min_sigma_gap: 1e-3,
            tol_res: 1e-8,
            tol_step: 1e-10,
            grad_cap: 1e6,
            polish: true,
            detach_factor: 100.0,
            reg_bound: 3.0,
            max_outer: 40,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: String| Err(SolverError::InvalidOptions(m));
        if self.eps_schedule.is_empty() || self.eps_schedule.iter().any(|&e| e <= 0.0) {
            return bad("smoothing schedule must be nonempty and positive".into());
        }
        for w in self.eps_schedule.windows(2) {
            if w[1] > w[0] {
                return bad(format!("smoothing widths must not grow: {} > {}", w[1], w[0]));
            }
        }
        if self.sigma_steps.len() < 2
            || self.sigma_steps[0] != 0.0
            || *self.sigma_steps.last().unwrap() != 1.0
        {
            return bad("loading grid must run from 0 to 1".into());
        }
        for w in self.sigma_steps.windows(2) {
            if w[1] <= w[0] {
                return bad(format!("loading grid must increase: {} after {}", w[1], w[0]));
            }
        }
        if self.tol_res <= 0.0 || self.tol_step <= 0.0 || self.min_sigma_gap <= 0.0 {
            return bad("tolerances must be positive".into());
        }
        if !(0.0..=0.5).contains(&self.armijo_c) || !(0.0..1.0).contains(&self.armijo_shrink) {
            return bad("line search constants out of range".into());
        }
        if self.max_newton == 0 || self.max_outer == 0 {
            return bad("iteration caps must be at least 1".into());
        }
        Ok(())
    }
}

/// One line of the iteration history. `eps` is the penalty smoothing
/// width for minimization runs and 0 for interior solves; `energy` is NaN
/// where the run does not track the functional.
#[derive(Debug, Clone, Copy)]
pub struct LogRow {
    pub iteration: usize,
    pub sigma: f64,
    pub eps: f64,
    pub residual: f64,
    pub energy: f64,
    pub step: f64,
}

impl LogRow {
    pub fn csv_header() -> &'static str {
        "iteration,sigma,eps,residual,energy,step"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.4},{:.3e},{:.6e},{:.9e},{:.3e}",
            self.iteration, self.sigma, self.eps, self.residual, self.energy, self.step
        )
    }
}

pub struct DiscreteSolution {
    pub field: DiscreteScalarField,
    pub breakdown: FunctionalBreakdown,
    /// Sup norm of the final gradient (minimization) or weak residual
    /// (interior problems), measured after the last accepted step.
    pub residual: f64,
    pub iterations: usize,
    pub log: Vec<LogRow>,
    pub warnings: Vec<String>,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn axpy(y: &[f64], t: f64, d: &[f64]) -> Vec<f64> {
    y.iter().zip(d).map(|(a, b)| a + t * b).collect()
}

/// Area metric at a fixed in-plane gradient: the Hessian block of the
/// graph-area integrand, positive definite with eigenvalues 1/W and 1/W^3.
fn area_metric(g: Vec2, cap: f64) -> [[f64; 2]; 2] {
    let n = g.norm();
    let g = if n > cap { g * (cap / n) } else { g };
    let w2 = 1.0 + g.norm2();
    let w = w2.sqrt();
    let w3 = w2 * w;
    [
        [1.0 / w - g.x * g.x / w3, -g.x * g.y / w3],
        [-g.x * g.y / w3, 1.0 / w - g.y * g.y / w3],
    ]
}

fn metric_apply(m: &[[f64; 2]; 2], v: Vec2) -> Vec2 {
    v2(
        m[0][0] * v.x + m[0][1] * v.y,
        m[1][0] * v.x + m[1][1] * v.y,
    )
}

/// Height derivative of the curvature source by central differences,
/// clamped at zero so the Newton matrix stays positive semidefinite.
fn curvature_slope(f: impl Fn(f64) -> f64, h: f64) -> f64 {
    let step = 1e-4 * (1.0 + h.abs());
    ((f(h + step) - f(h - step)) / (2.0 * step)).max(0.0)
}

/// Triplets of the volume part of the energy Hessian: area metric plus
/// the clamped height-slope of the curvature source as a lumped-free mass
/// term. Symmetric by construction.
fn volume_hessian_triplets(
    v: &DiscreteScalarField,
    potential: &CurvaturePotential,
    grad_cap: f64,
    mode: Mode,
) -> Vec<(u32, u32, f64)> {
    let mesh = v.mesh();
    let nt = mesh.triangle_count();
    let vals = v.values();
    let verts = mesh.vertices();
    let rule = quad::triangle_rule_deg4();

    let per_tri = exec::map_indexed(mode, nt, |t| {
        let tri = mesh.triangles()[t];
        let (pi, pj, pk) = (
            verts[tri[0] as usize],
            verts[tri[1] as usize],
            verts[tri[2] as usize],
        );
        let (vi, vj, vk) = (
            vals[tri[0] as usize],
            vals[tri[1] as usize],
            vals[tri[2] as usize],
        );
        let a = mesh.area(t);
        let g = mesh.tri_gradient(vals, t);
        let sg = mesh.shape_gradients(t);
        let metric = area_metric(g, grad_cap);

        let mut local = [[0.0f64; 3]; 3];
        for (r, row) in local.iter_mut().enumerate() {
            let mg = metric_apply(&metric, sg[r]);
            for (c, entry) in row.iter_mut().enumerate() {
                *entry = a * mg.dot(sg[c]);
            }
        }
        for &(bc, wq) in rule {
            let x = pi * bc[0] + pj * bc[1] + pk * bc[2];
            let h = vi * bc[0] + vj * bc[1] + vk * bc[2];
            let slope = curvature_slope(|t| potential.h(x, t), h);
            if slope > 0.0 {
                for r in 0..3 {
                    for c in 0..3 {
                        local[r][c] += a * wq * slope * bc[r] * bc[c];
                    }
                }
            }
        }
        let mut out = [(0u32, 0u32, 0.0f64); 9];
        for r in 0..3 {
            for c in 0..3 {
                out[3 * r + c] = (tri[r], tri[c], local[r][c]);
            }
        }
        out
    });

    let mut triplets = Vec::with_capacity(9 * nt);
    for block in &per_tri {
        triplets.extend_from_slice(block);
    }
    triplets
}

/// Second derivative of the smoothed absolute value.
fn smooth_abs_curv(t: f64, eps: f64) -> f64 {
    let s = (t * t + eps * eps).sqrt();
    eps * eps / (s * s * s)
}

/// Boundary penalty block of the energy Hessian at smoothing width eps.
fn penalty_hessian_triplets(
    v: &DiscreteScalarField,
    domain: &Domain,
    phi: &BoundaryData,
    eps: f64,
    mode: Mode,
) -> Vec<(u32, u32, f64)> {
    let mesh = v.mesh();
    let vals = v.values();
    let jumps = jump_table(domain, phi);
    let edges = mesh.boundary_edges();

    let per_edge = exec::map_indexed(mode, edges.len(), |ei| {
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
        let mut local = [[0.0f64; 2]; 2];
        for (a, b) in edge_pieces(e.s, len, &jumps[e.curve.0]) {
            let (xs, ws) = quad::gauss_legendre(EDGE_GL);
            let c = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (x, w) in xs.iter().zip(&ws) {
                let s = mid + c * x;
                let t = (s - e.s[0]) / span;
                let vv = v0 * (1.0 - t) + v1 * t;
                let curv = smooth_abs_curv(vv - data.eval(curve, s), eps);
                let lam = [1.0 - t, t];
                for r in 0..2 {
                    for cc in 0..2 {
                        local[r][cc] += c * w * curv * lam[r] * lam[cc];
                    }
                }
            }
        }
        [
            (e.v[0], e.v[0], local[0][0]),
            (e.v[0], e.v[1], local[0][1]),
            (e.v[1], e.v[0], local[1][0]),
            (e.v[1], e.v[1], local[1][1]),
        ]
    });

    let mut triplets = Vec::with_capacity(4 * edges.len());
    for block in &per_edge {
        triplets.extend_from_slice(block);
    }
    triplets
}

/// Gradient of the volume terms alone (area plus curvature source), no
/// boundary penalty. The rows are exactly the first scatter pass of the
/// full energy gradient.
fn volume_gradient(v: &DiscreteScalarField, potential: &CurvaturePotential, mode: Mode) -> Vec<f64> {
    let mesh = v.mesh();
    let n = mesh.vertex_count();
    let nt = mesh.triangle_count();
    let vals = v.values();
    let verts = mesh.vertices();
    let rule = quad::triangle_rule_deg4();

    exec::scatter_sum::<_, 3>(mode, nt, n, |t| {
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
    })
}

struct NewtonStageReport {
    iterations: usize,
    residual: f64,
}

/// One smoothing stage: damped Newton on the smoothed energy until the
/// gradient sup norm reaches `tol`.
#[allow(clippy::too_many_arguments)]
fn newton_stage(
    u: &mut DiscreteScalarField,
    domain: &Domain,
    phi: &BoundaryData,
    potential: &CurvaturePotential,
    eps: f64,
    tol: f64,
    opts: &SolverOptions,
    mode: Mode,
    log: &mut Vec<LogRow>,
    iter_base: usize,
) -> Result<NewtonStageReport, SolverError> {
    let mesh = u.mesh().clone();
    let n = mesh.vertex_count();
    let mut f0 = functional::evaluate_f(u, domain, phi, potential, eps, mode).total;

    for it in 0..opts.max_newton {
        let grad = functional::gradient_f(u, domain, phi, potential, eps, mode);
        let gn = inf_norm(&grad);
        if gn <= tol {
            log.push(LogRow {
                iteration: iter_base + it,
                sigma: 1.0,
                eps,
                residual: gn,
                energy: f0,
                step: 0.0,
            });
            return Ok(NewtonStageReport {
                iterations: it,
                residual: gn,
            });
        }

        let mut triplets = volume_hessian_triplets(u, potential, opts.grad_cap, mode);
        triplets.extend(penalty_hessian_triplets(u, domain, phi, eps, mode));
        let hess = Csr::from_triplets(n, &mut triplets);
        let rhs: Vec<f64> = grad.iter().map(|g| -g).collect();
        let (mut dir, _) = solve_cg(&hess, &rhs, None, 1e-10, mode);

        let mut slope: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
        if !slope.is_finite() || slope >= 0.0 {
            // fall back to steepest descent when CG returns junk
            dir = rhs.clone();
            slope = -grad.iter().map(|g| g * g).sum::<f64>();
        }

        let mut t = 1.0;
        let mut accepted = None;
        while t >= opts.min_step {
            let trial = DiscreteScalarField::new(mesh.clone(), axpy(u.values(), t, &dir));
            let ft = functional::evaluate_f(&trial, domain, phi, potential, eps, mode).total;
            if ft <= f0 + opts.armijo_c * t * slope {
                accepted = Some((trial, ft));
                break;
            }
            t *= opts.armijo_shrink;
        }
        let Some((trial, ft)) = accepted else {
            return Err(SolverError::NonConvergence {
                iterations: iter_base + it,
                residual: gn,
                best: u.values().to_vec(),
            });
        };

        let step = t * inf_norm(&dir);
        *u = trial;
        f0 = ft;
        log.push(LogRow {
            iteration: iter_base + it,
            sigma: 1.0,
            eps,
            residual: gn,
            energy: f0,
            step,
        });
        if step <= opts.tol_step {
            return Ok(NewtonStageReport {
                iterations: it + 1,
                residual: gn,
            });
        }
    }

    let grad = functional::gradient_f(u, domain, phi, potential, eps, mode);
    let gn = inf_norm(&grad);
    if gn <= tol {
        return Ok(NewtonStageReport {
            iterations: opts.max_newton,
            residual: gn,
        });
    }
    Err(SolverError::NonConvergence {
        iterations: iter_base + opts.max_newton,
        residual: gn,
        best: u.values().to_vec(),
    })
}

struct BoundaryVertexInfo {
    vertex: u32,
    data_value: f64,
    /// Arclength weight of the vertex hat on the boundary; the exact
    /// penalty can exert at most this force on the vertex.
    weight: f64,
}

fn boundary_vertex_info(mesh: &Mesh, domain: &Domain, phi: &BoundaryData) -> Vec<BoundaryVertexInfo> {
    let mut weight = vec![0.0f64; mesh.vertex_count()];
    for e in mesh.boundary_edges() {
        let len = domain.curve(e.curve).len();
        let mut t = e.s[1];
        if t <= e.s[0] {
            t += len;
        }
        let span = t - e.s[0];
        weight[e.v[0] as usize] += 0.5 * span;
        weight[e.v[1] as usize] += 0.5 * span;
    }
    let mut out = Vec::new();
    for vtx in mesh.all_boundary_vertices() {
        let at = mesh.boundary_attach(vtx).expect("boundary vertex has attachment");
        let value = phi.get(at.curve).eval(domain.curve(at.curve), at.s);
        out.push(BoundaryVertexInfo {
            vertex: vtx,
            data_value: value,
            weight: weight[vtx as usize],
        });
    }
    out
}

/// Frozen-sign linear penalty gradient along the boundary. Signs are
/// sampled per quadrature node from the reference values and held fixed.
fn frozen_penalty_gradient(
    mesh: &Mesh,
    domain: &Domain,
    phi: &BoundaryData,
    reference: &[f64],
    n: usize,
    mode: Mode,
) -> Vec<f64> {
    let jumps = jump_table(domain, phi);
    let edges = mesh.boundary_edges();
    exec::scatter_sum::<_, 2>(mode, edges.len(), n, |ei| {
        let e = &edges[ei];
        let curve = domain.curve(e.curve);
        let data = phi.get(e.curve);
        let len = curve.len();
        let (v0, v1) = (reference[e.v[0] as usize], reference[e.v[1] as usize]);
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
                let diff = vv - data.eval(curve, s);
                let sign = if diff > 0.0 {
                    1.0
                } else if diff < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                out[0] += c * w * sign * (1.0 - t);
                out[1] += c * w * sign * t;
            }
        }
        [(e.v[0] as usize, out[0]), (e.v[1] as usize, out[1])]
    })
}

/// Exact attachment pass. Boundary vertices near the data are pinned to
/// it; the rest keep a linear penalty with signs frozen at entry. Newton
/// then drives the smooth remainder to machine level, and the attachment
/// guess is revised from the optimality conditions, at most three times.
#[allow(clippy::too_many_arguments)]
fn polish_active_set(
    u: &mut DiscreteScalarField,
    domain: &Domain,
    phi: &BoundaryData,
    potential: &CurvaturePotential,
    flat_source: bool,
    opts: &SolverOptions,
    mode: Mode,
    warnings: &mut Vec<String>,
) -> Result<f64, SolverError> {
    let mesh = u.mesh().clone();
    let n = mesh.vertex_count();
    let info = boundary_vertex_info(&mesh, domain, phi);
    if info.is_empty() {
        return Ok(0.0);
    }
    let eps_last = *opts.eps_schedule.last().unwrap();
    let detach_tol = opts.detach_factor * eps_last;
    let scale = 1.0 + phi.sup_norm(domain) + u.sup_norm();
    let polish_tol = 1e-11 * scale;
    let total_weight: f64 = info.iter().map(|b| b.weight).sum();

    let mut detached: Vec<bool> = info
        .iter()
        .map(|b| (u.values()[b.vertex as usize] - b.data_value).abs() > detach_tol)
        .collect();

    let mut final_res = 0.0;
    for round in 0..3 {
        // pin attached vertices exactly before linearizing
        for (b, det) in info.iter().zip(&detached) {
            if !det {
                u.values_mut()[b.vertex as usize] = b.data_value;
            }
        }
        let frozen_ref = u.values().to_vec();
        let lin_grad = frozen_penalty_gradient(&mesh, domain, phi, &frozen_ref, n, mode);

        let pinned: Vec<bool> = {
            let mut p = vec![false; n];
            for (b, det) in info.iter().zip(&detached) {
                if !det {
                    p[b.vertex as usize] = true;
                }
            }
            p
        };
        let all_detached = detached.iter().all(|&d| d);
        // boundary mean anchor: removes the constant mode when nothing is
        // pinned and the curvature slope cannot do it
        let anchor = all_detached && flat_source;
        let anchor_target = if anchor {
            info.iter()
                .map(|b| b.weight * u.values()[b.vertex as usize])
                .sum::<f64>()
                / total_weight
        } else {
            0.0
        };

        let residual_of = |v: &DiscreteScalarField| -> Vec<f64> {
            let mut g = volume_gradient(v, potential, mode);
            for (gi, li) in g.iter_mut().zip(&lin_grad) {
                *gi += li;
            }
            if anchor {
                let mean = info
                    .iter()
                    .map(|b| b.weight * v.values()[b.vertex as usize])
                    .sum::<f64>()
                    / total_weight;
                let force = mean - anchor_target;
                for b in &info {
                    g[b.vertex as usize] += force * b.weight / total_weight;
                }
            }
            for (i, p) in pinned.iter().enumerate() {
                if *p {
                    g[i] = 0.0;
                }
            }
            g
        };

        let mut res = residual_of(u);
        let mut rn = inf_norm(&res);
        for _ in 0..12 {
            if rn <= polish_tol {
                break;
            }
            let mut triplets: Vec<(u32, u32, f64)> =
                volume_hessian_triplets(u, potential, opts.grad_cap, mode)
                    .into_iter()
                    .filter(|&(r, c, _)| !pinned[r as usize] && !pinned[c as usize])
                    .collect();
            if anchor {
                for bi in &info {
                    for bj in &info {
                        triplets.push((
                            bi.vertex,
                            bj.vertex,
                            bi.weight * bj.weight / (total_weight * total_weight),
                        ));
                    }
                }
            }
            for (i, p) in pinned.iter().enumerate() {
                if *p {
                    triplets.push((i as u32, i as u32, 1.0));
                }
            }
            let hess = Csr::from_triplets(n, &mut triplets);
            let rhs: Vec<f64> = res.iter().map(|r| -r).collect();
            let (dir, _) = solve_cg(&hess, &rhs, None, 1e-12, mode);

            let mut t = 1.0;
            let mut moved = false;
            while t >= opts.min_step {
                let trial = DiscreteScalarField::new(mesh.clone(), axpy(u.values(), t, &dir));
                let tr = residual_of(&trial);
                let tn = inf_norm(&tr);
                if tn <= (1.0 - opts.armijo_c * t) * rn {
                    *u = trial;
                    res = tr;
                    rn = tn;
                    moved = true;
                    break;
                }
                t *= opts.armijo_shrink;
            }
            if !moved {
                break;
            }
        }
        final_res = rn;

        // revise the attachment guess from the optimality conditions
        let vol = volume_gradient(u, potential, mode);
        let force = frozen_penalty_gradient(&mesh, domain, phi, u.values(), n, mode);
        let mut changed = false;
        for (idx, b) in info.iter().enumerate() {
            let v = b.vertex as usize;
            if !detached[idx] {
                // an attached vertex must be holdable by a force in
                // [-weight, weight]
                if vol[v].abs() > b.weight * (1.0 + 1e-6) {
                    detached[idx] = true;
                    changed = true;
                }
            } else {
                // a detached vertex must satisfy the exact stationarity
                // balance with the sign force of its settled position;
                // anything else was a misread of the trace gap
                let balanced = (vol[v] + force[v]).abs() <= 0.02 * b.weight + 1e-12;
                if (u.values()[v] - b.data_value).abs() <= detach_tol || !balanced {
                    detached[idx] = false;
                    changed = true;
                }
            }
        }
        if !changed {
            if rn > polish_tol {
                warnings.push(format!(
                    "attachment pass stopped at residual {rn:.3e} above target {polish_tol:.3e}"
                ));
            }
            return Ok(final_res);
        }
        if round == 2 {
            warnings.push("attachment classification did not settle in three rounds".into());
        }
    }
    Ok(final_res)
}

/// Minimize the relaxed functional over the mesh: graph area plus the
/// prescribed volume term plus the boundary deviation, with the deviation
/// smoothed along `eps_schedule` and sharpened to the exact penalty by the
/// final attachment pass. The trace is free to detach from the data.
pub fn minimize_functional(
    domain: &Domain,
    phi: &BoundaryData,
    curvature: Arc<dyn PrescribedCurvature>,
    mesh: Arc<Mesh>,
    opts: &SolverOptions,
    mode: Mode,
) -> Result<DiscreteSolution, SolverError> {
    opts.validate()?;
    let pad = phi.sup_norm(domain) + 1.0 + 0.5 * domain.diameter();
    // admissibility: sup bound against the isoperimetric limit plus the
    // height monotonicity sample check
    build_hk(
        curvature.clone(),
        domain,
        domain.reach() / 8.0,
        (-pad, pad),
    )?;
    let flat_source = curvature.sup() == 0.0;
    let potential = if flat_source {
        CurvaturePotential::zero()
    } else {
        CurvaturePotential::from_curvature(curvature, 1e-10)
    };

    let mut warnings = Vec::new();
    let mut log = Vec::new();
    let mut u = DiscreteScalarField::zeros(mesh);
    let mut iterations = 0usize;
    let mut residual = 0.0;
    let n_stages = opts.eps_schedule.len();
    for (si, &eps) in opts.eps_schedule.iter().enumerate() {
        let stage_tol = if si + 1 == n_stages {
            opts.tol_res
        } else {
            (1e-2 * eps).max(opts.tol_res)
        };
        let rep = newton_stage(
            &mut u, domain, phi, &potential, eps, stage_tol, opts, mode, &mut log, iterations,
        )?;
        iterations += rep.iterations;
        residual = rep.residual;
    }
    if opts.polish {
        residual = polish_active_set(
            &mut u,
            domain,
            phi,
            &potential,
            flat_source,
            opts,
            mode,
            &mut warnings,
        )?;
    }

    let breakdown = functional::evaluate_f(&u, domain, phi, &potential, 0.0, mode);
    Ok(DiscreteSolution {
        field: u,
        breakdown,
        residual,
        iterations,
        log,
        warnings,
    })
}

/// Per-quadrature-point geometry shared by every sweep of an interior
/// solve: position, curvature cutoff ramp, and the collar probe when a
/// field is present. Probes carry the nearest-boundary query, which is
/// the expensive part; rereading the field at a new height is then cheap.
struct QuadCache {
    x: Vec<Vec2>,
    ramp: Vec<f64>,
    probe: Vec<Option<CollarProbe>>,
}

const TRI_RULE_LEN: usize = 6;

fn build_cache(
    mesh: &Mesh,
    hk: Option<&CutoffCurvature>,
    field: Option<&CollarField>,
    mode: Mode,
) -> QuadCache {
    let nt = mesh.triangle_count();
    let rule = quad::triangle_rule_deg4();
    debug_assert_eq!(rule.len(), TRI_RULE_LEN);
    let verts = mesh.vertices();
    let per_tri = exec::map_indexed(mode, nt, |t| {
        let [i, j, k] = mesh.triangles()[t];
        let (pi, pj, pk) = (verts[i as usize], verts[j as usize], verts[k as usize]);
        let mut xs = [Vec2::ZERO; TRI_RULE_LEN];
        let mut ramps = [1.0f64; TRI_RULE_LEN];
        let mut probes = [None; TRI_RULE_LEN];
        for (q, &(bc, _)) in rule.iter().enumerate() {
            let x = pi * bc[0] + pj * bc[1] + pk * bc[2];
            xs[q] = x;
            if let Some(hk) = hk {
                ramps[q] = hk.ramp(x);
            }
            if let Some(f) = field {
                probes[q] = Some(f.probe(x));
            }
        }
        (xs, ramps, probes)
    });
    let mut cache = QuadCache {
        x: Vec::with_capacity(nt * TRI_RULE_LEN),
        ramp: Vec::with_capacity(nt * TRI_RULE_LEN),
        probe: Vec::with_capacity(nt * TRI_RULE_LEN),
    };
    for (xs, ramps, probes) in per_tri {
        cache.x.extend_from_slice(&xs);
        cache.ramp.extend_from_slice(&ramps);
        cache.probe.extend_from_slice(&probes);
    }
    cache
}

/// Field pairing rows q_i = integral of f(x, v) . grad hat_i, from cached
/// probes at the heights of `vals`.
fn field_pairing(
    mesh: &Mesh,
    cache: &QuadCache,
    vals: &[f64],
    mode: Mode,
) -> Vec<f64> {
    let n = mesh.vertex_count();
    let nt = mesh.triangle_count();
    let rule = quad::triangle_rule_deg4();
    exec::scatter_sum::<_, 3>(mode, nt, n, |t| {
        let [i, j, k] = mesh.triangles()[t];
        let (vi, vj, vk) = (vals[i as usize], vals[j as usize], vals[k as usize]);
        let a = mesh.area(t);
        let sg = mesh.shape_gradients(t);
        let mut f_avg = Vec2::ZERO;
        for (q, &(bc, wq)) in rule.iter().enumerate() {
            let h = vi * bc[0] + vj * bc[1] + vk * bc[2];
            if let Some(p) = &cache.probe[t * TRI_RULE_LEN + q] {
                f_avg = f_avg + p.value(h) * wq;
            }
        }
        [
            (i as usize, a * f_avg.dot(sg[0])),
            (j as usize, a * f_avg.dot(sg[1])),
            (k as usize, a * f_avg.dot(sg[2])),
        ]
    })
}

/// Area and curvature rows of the weak operator from the cache; the field
/// pairing is subtracted separately so sweeps can freeze it.
fn operator_rows(
    mesh: &Mesh,
    cache: &QuadCache,
    hk: Option<&CutoffCurvature>,
    vals: &[f64],
    mode: Mode,
) -> Vec<f64> {
    let n = mesh.vertex_count();
    let nt = mesh.triangle_count();
    let rule = quad::triangle_rule_deg4();
    exec::scatter_sum::<_, 3>(mode, nt, n, |t| {
        let [i, j, k] = mesh.triangles()[t];
        let (vi, vj, vk) = (vals[i as usize], vals[j as usize], vals[k as usize]);
        let a = mesh.area(t);
        let g = mesh.tri_gradient(vals, t);
        let w = (1.0 + g.norm2()).sqrt();
        let sg = mesh.shape_gradients(t);
        let mut out = [0.0f64; 3];
        for (l, o) in out.iter_mut().enumerate() {
            *o = a * g.dot(sg[l]) / w;
        }
        if let Some(hk) = hk {
            for (q, &(bc, wq)) in rule.iter().enumerate() {
                let h = vi * bc[0] + vj * bc[1] + vk * bc[2];
                let hv = hk.value_with_ramp(
                    cache.ramp[t * TRI_RULE_LEN + q],
                    cache.x[t * TRI_RULE_LEN + q],
                    h,
                );
                for l in 0..3 {
                    out[l] += a * wq * hv * bc[l];
                }
            }
        }
        [
            (i as usize, out[0]),
            (j as usize, out[1]),
            (k as usize, out[2]),
        ]
    })
}

/// Jacobian of the cached weak operator: area metric plus the clamped
/// height slope of the cutoff source, with fixed (Dirichlet) rows and
/// columns eliminated.
fn operator_jacobian(
    mesh: &Mesh,
    cache: &QuadCache,
    hk: Option<&CutoffCurvature>,
    vals: &[f64],
    fixed: &[bool],
    grad_cap: f64,
    mode: Mode,
) -> Csr {
    let n = mesh.vertex_count();
    let nt = mesh.triangle_count();
    let rule = quad::triangle_rule_deg4();
    let per_tri = exec::map_indexed(mode, nt, |t| {
        let tri = mesh.triangles()[t];
        let (vi, vj, vk) = (
            vals[tri[0] as usize],
            vals[tri[1] as usize],
            vals[tri[2] as usize],
        );
        let a = mesh.area(t);
        let g = mesh.tri_gradient(vals, t);
        let sg = mesh.shape_gradients(t);
        let metric = area_metric(g, grad_cap);
        let mut local = [[0.0f64; 3]; 3];
        for (r, row) in local.iter_mut().enumerate() {
            let mg = metric_apply(&metric, sg[r]);
            for (c, entry) in row.iter_mut().enumerate() {
                *entry = a * mg.dot(sg[c]);
            }
        }
        if let Some(hk) = hk {
            for (q, &(bc, wq)) in rule.iter().enumerate() {
                let h = vi * bc[0] + vj * bc[1] + vk * bc[2];
                let ramp = cache.ramp[t * TRI_RULE_LEN + q];
                let x = cache.x[t * TRI_RULE_LEN + q];
                let slope = curvature_slope(|tt| hk.value_with_ramp(ramp, x, tt), h);
                if slope > 0.0 {
                    for r in 0..3 {
                        for c in 0..3 {
                            local[r][c] += a * wq * slope * bc[r] * bc[c];
                        }
                    }
                }
            }
        }
        let mut out = [(0u32, 0u32, 0.0f64); 9];
        for r in 0..3 {
            for c in 0..3 {
                out[3 * r + c] = (tri[r], tri[c], local[r][c]);
            }
        }
        out
    });
    let mut triplets = Vec::with_capacity(9 * nt + n);
    for block in &per_tri {
        for &(r, c, v) in block {
            if !fixed[r as usize] && !fixed[c as usize] {
                triplets.push((r, c, v));
            }
        }
    }
    for (i, f) in fixed.iter().enumerate() {
        if *f {
            triplets.push((i as u32, i as u32, 1.0));
        }
    }
    Csr::from_triplets(n, &mut triplets)
}

/// Solve the regularized interior problem on the given data: weak form of
/// the area operator with the cutoff curvature source and the collar field
/// pairing, boundary values fixed to the data. The field is frozen at the
/// current heights for each Newton sweep and refreshed between sweeps.
#[allow(clippy::too_many_arguments)]
fn solve_weak_system(
    domain: &Domain,
    phi: &BoundaryData,
    hk: Option<&CutoffCurvature>,
    field: Option<&CollarField>,
    mesh: &Arc<Mesh>,
    init: Option<&[f64]>,
    opts: &SolverOptions,
    mode: Mode,
    sigma_label: f64,
    log: &mut Vec<LogRow>,
) -> Result<(DiscreteScalarField, f64, usize), SolverError> {
    let n = mesh.vertex_count();
    let mut vals = match init {
        Some(v) => {
            assert_eq!(v.len(), n);
            v.to_vec()
        }
        None => vec![0.0; n],
    };
    let mut fixed = vec![false; n];
    for vtx in mesh.all_boundary_vertices() {
        let at = mesh.boundary_attach(vtx).expect("boundary vertex has attachment");
        vals[vtx as usize] = phi.get(at.curve).eval(domain.curve(at.curve), at.s);
        fixed[vtx as usize] = true;
    }

    let cache = build_cache(mesh, hk, field, mode);
    let inner_tol = 0.5 * opts.tol_res;
    let mut iterations = 0usize;

    let masked_norm = |r: &[f64]| -> f64 {
        r.iter()
            .zip(&fixed)
            .filter(|(_, f)| !**f)
            .fold(0.0f64, |m, (x, _)| m.max(x.abs()))
    };

    for _outer in 0..opts.max_outer {
        let frozen = if field.is_some() {
            field_pairing(mesh, &cache, &vals, mode)
        } else {
            vec![0.0; n]
        };
        let before = vals.clone();

        // Newton on the operator with the field pairing frozen
        let mut res: Vec<f64> = operator_rows(mesh, &cache, hk, &vals, mode)
            .iter()
            .zip(&frozen)
            .map(|(a, q)| a - q)
            .collect();
        let mut rn = masked_norm(&res);
        for _ in 0..opts.max_newton {
            if rn <= inner_tol {
                break;
            }
            let jac = operator_jacobian(mesh, &cache, hk, &vals, &fixed, opts.grad_cap, mode);
            let rhs: Vec<f64> = res
                .iter()
                .zip(&fixed)
                .map(|(r, f)| if *f { 0.0 } else { -r })
                .collect();
            let (dir, _) = solve_cg(&jac, &rhs, None, 1e-12, mode);

            let mut t = 1.0;
            let mut moved = false;
            while t >= opts.min_step {
                let trial = axpy(&vals, t, &dir);
                let tr: Vec<f64> = operator_rows(mesh, &cache, hk, &trial, mode)
                    .iter()
                    .zip(&frozen)
                    .map(|(a, q)| a - q)
                    .collect();
                let tn = masked_norm(&tr);
                if tn <= (1.0 - opts.armijo_c * t) * rn {
                    vals = trial;
                    res = tr;
                    rn = tn;
                    moved = true;
                    break;
                }
                t *= opts.armijo_shrink;
            }
            iterations += 1;
            log.push(LogRow {
                iteration: iterations,
                sigma: sigma_label,
                eps: 0.0,
                residual: rn,
                energy: f64::NAN,
                step: if moved { t } else { 0.0 },
            });
            if !moved {
                return Err(SolverError::NonConvergence {
                    iterations,
                    residual: rn,
                    best: vals,
                });
            }
        }
        if rn > inner_tol {
            return Err(SolverError::NonConvergence {
                iterations,
                residual: rn,
                best: vals,
            });
        }

        // refresh the field at the new heights and test the full residual
        let fresh: Vec<f64> = if field.is_some() {
            let q = field_pairing(mesh, &cache, &vals, mode);
            operator_rows(mesh, &cache, hk, &vals, mode)
                .iter()
                .zip(&q)
                .map(|(a, qq)| a - qq)
                .collect()
        } else {
            res
        };
        let full = masked_norm(&fresh);
        let moved = vals
            .iter()
            .zip(&before)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if full <= opts.tol_res && (field.is_none() || moved <= opts.tol_step.max(1e-12)) {
            let u = DiscreteScalarField::new(mesh.clone(), vals);
            return Ok((u, full, iterations));
        }
    }

    Err(SolverError::NonConvergence {
        iterations,
        residual: f64::NAN,
        best: vals,
    })
}

/// Solve one assembled interior problem with its own data, cutoff source,
/// and collar field. Boundary values are pinned to the problem data.
pub fn solve_regularized(
    problem: &ApproxProblem,
    mesh: Arc<Mesh>,
    init: Option<&[f64]>,
    opts: &SolverOptions,
    mode: Mode,
) -> Result<DiscreteSolution, SolverError> {
    opts.validate()?;
    let mut log = Vec::new();
    let (u, _cached_res, iterations) = solve_weak_system(
        &problem.domain,
        &problem.phi,
        Some(&problem.h_k),
        Some(&problem.f_k),
        &mesh,
        init,
        opts,
        mode,
        1.0,
        &mut log,
    )?;

    let mut warnings = Vec::new();
    let honest = functional::weak_residual(&u, &WeakForm::of(problem), mode);
    if honest.max_norm > opts.tol_res * (1.0 + 1e-9) {
        warnings.push(format!(
            "reported weak residual {:.3e} exceeds the target {:.3e}",
            honest.max_norm, opts.tol_res
        ));
    }
    if u.sup_norm() > 1.1 * problem.sup_bound {
        warnings.push(format!(
            "solution sup {:.4} above the a priori bound {:.4}",
            u.sup_norm(),
            problem.sup_bound
        ));
    }

    let potential = CurvaturePotential::from_cutoff(problem.h_k.clone(), 1e-8);
    let breakdown =
        functional::evaluate_f(&u, &problem.domain, &problem.phi, &potential, 0.0, mode);
    Ok(DiscreteSolution {
        field: u,
        breakdown,
        residual: honest.max_norm,
        iterations,
        log,
        warnings,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct ContinuationStage {
    pub sigma: f64,
    /// Collar width scale of the stage field, the square root of sigma.
    pub width_scale: f64,
    pub sup_norm: f64,
    pub residual: f64,
    pub iterations: usize,
}

pub struct ContinuationReport {
    pub stages: Vec<ContinuationStage>,
    /// Measured growth constant: the largest sup norm over width scale
    /// across loaded stages.
    pub ratio: f64,
    pub solution: DiscreteSolution,
}

/// March the interior problem from the zero data to the full data along
/// `sigma_steps`, scaling boundary values and curvature by sigma and the
/// collar width by sqrt(sigma), warm-starting every stage and bisecting
/// on failure. At sigma = 0 the zero field solves the stage exactly.
pub fn sigma_continuation(
    problem: &ApproxProblem,
    mesh: Arc<Mesh>,
    opts: &SolverOptions,
    mode: Mode,
) -> Result<ContinuationReport, SolverError> {
    opts.validate()?;
    let domain = &problem.domain;
    let mut reg_radius = f64::INFINITY;
    for id in domain.curve_ids() {
        let c = domain.curve(id);
        for i in 0..8 {
            let s = c.len() * (i as f64) / 8.0;
            let r = domain.regularity_radius(BoundaryPoint { curve: id, s }, opts.reg_bound);
            reg_radius = reg_radius.min(r);
        }
    }

    let mut grid = opts.sigma_steps.clone();
    let mut stages = Vec::new();
    let mut log = Vec::new();
    let mut current: Option<Vec<f64>> = None;
    let mut last_sigma = 0.0;
    let mut last: Option<(DiscreteScalarField, f64, usize)> = None;

    let mut i = 0usize;
    while i < grid.len() {
        let sigma = grid[i];
        let s = sigma.sqrt();
        let phi_s = problem.phi.scaled(sigma);
        let (hk_s, field_s) = if sigma == 0.0 {
            (None, None)
        } else {
            let f = CollarField::build(domain, &phi_s, s * problem.delta, reg_radius)?;
            (Some(problem.h_k.scaled(sigma)), Some(f))
        };
        let attempt = solve_weak_system(
            domain,
            &phi_s,
            hk_s.as_ref(),
            field_s.as_ref(),
            &mesh,
            current.as_deref(),
            opts,
            mode,
            sigma,
            &mut log,
        );
        match attempt {
            Ok((u, res, iters)) => {
                stages.push(ContinuationStage {
                    sigma,
                    width_scale: s,
                    sup_norm: u.sup_norm(),
                    residual: res,
                    iterations: iters,
                });
                current = Some(u.values().to_vec());
                last = Some((u, res, iters));
                last_sigma = sigma;
                i += 1;
            }
            Err(SolverError::NonConvergence { .. }) => {
                if sigma - last_sigma < opts.min_sigma_gap {
                    return Err(SolverError::ContinuationStall { sigma: last_sigma });
                }
                grid.insert(i, 0.5 * (last_sigma + sigma));
            }
            Err(e) => return Err(e),
        }
    }

    let (u, res, _) = last.expect("grid has at least the endpoints");
    let ratio = stages
        .iter()
        .filter(|st| st.sigma > 0.0)
        .fold(0.0f64, |m, st| m.max(st.sup_norm / st.width_scale));

    let mut warnings = Vec::new();
    if u.sup_norm() > 1.1 * problem.sup_bound {
        warnings.push(format!(
            "solution sup {:.4} above the a priori bound {:.4}",
            u.sup_norm(),
            problem.sup_bound
        ));
    }
    let potential = CurvaturePotential::from_cutoff(problem.h_k.clone(), 1e-8);
    let breakdown =
        functional::evaluate_f(&u, &problem.domain, &problem.phi, &potential, 0.0, mode);
    let iterations = stages.iter().map(|s| s.iterations).sum();
    let solution = DiscreteSolution {
        field: u,
        breakdown,
        residual: res,
        iterations,
        log,
        warnings,
    };
    Ok(ContinuationReport {
        stages,
        ratio,
        solution,
    })
}

#[derive(Debug, Clone)]
pub struct SequencePolicy {
    /// Base inward offset of the exhausting domains.
    pub eps0: f64,
    /// Base cutoff width of the schedule.
    pub delta0: f64,
    pub h_max: f64,
    pub h_min: f64,
    /// Refine the mesh toward the boundary over twice the cutoff width.
    pub grade_collar: bool,
    /// Interior compact used for the stabilization probes, as a fraction
    /// of the reach measured from the base boundary.
    pub compact_margin: f64,
    /// Probe grid resolution across the bounding box.
    pub probe_grid: usize,
}

impl Default for SequencePolicy {
    fn default() -> SequencePolicy {
        SequencePolicy {
            eps0: 0.05,
            delta0: 0.05,
            h_max: 0.12,
            h_min: 0.04,
            grade_collar: true,
            compact_margin: 0.35,
            probe_grid: 24,
        }
    }
}

pub struct SequenceStep {
    pub problem: ApproxProblem,
    pub mesh: Arc<Mesh>,
    pub solution: DiscreteSolution,
}

pub struct SequenceReport {
    pub steps: Vec<SequenceStep>,
    pub sup_norms: Vec<f64>,
    /// Largest a priori sup bound across the levels; every solution must
    /// stay under it.
    pub uniform_bound: f64,
    /// Sup difference of consecutive solutions over the interior probes.
    pub cauchy: Vec<f64>,
    /// Largest solution gradient over the interior probes, per level.
    pub grad_sups: Vec<f64>,
    pub probes: Vec<Vec2>,
    pub warnings: Vec<String>,
}

/// Solve the whole exhausting family: level k lives on the domain offset
/// inward by eps0 * 2^-k with the level-k smoothed data, cutoff width from
/// the shared schedule, warm starts carried across levels, and interior
/// probes tracking stabilization on a fixed compact.
pub fn run_sequence(
    base: &Domain,
    family: &BoundaryFamily,
    curvature: Arc<dyn PrescribedCurvature>,
    k_max: u32,
    policy: &SequencePolicy,
    opts: &SolverOptions,
    mode: Mode,
) -> Result<SequenceReport, SolverError> {
    opts.validate()?;
    let (schedule, _domains) =
        crate::approx::schedule_for_family(base, family, policy.eps0, policy.delta0, k_max)?;
    let aopts = crate::approx::AssembleOptions {
        eps0: policy.eps0,
        ..Default::default()
    };

    // probes on a fixed compact inside every level domain
    let margin = policy.eps0 + policy.compact_margin * base.reach();
    let nodes = base.outer().nodes();
    let (mut lo, mut hi) = (nodes[0], nodes[0]);
    for p in nodes {
        lo = v2(lo.x.min(p.x), lo.y.min(p.y));
        hi = v2(hi.x.max(p.x), hi.y.max(p.y));
    }
    let mut probes = Vec::new();
    for i in 0..policy.probe_grid {
        for j in 0..policy.probe_grid {
            let p = v2(
                lo.x + (hi.x - lo.x) * (i as f64 + 0.5) / (policy.probe_grid as f64),
                lo.y + (hi.y - lo.y) * (j as f64 + 0.5) / (policy.probe_grid as f64),
            );
            if base.signed_distance(p) >= margin {
                probes.push(p);
            }
        }
    }

    let mut warnings = Vec::new();
    if probes.is_empty() {
        warnings.push("no interior probes fit the compact margin".into());
    }

    let mut steps: Vec<SequenceStep> = Vec::new();
    let mut sup_norms = Vec::new();
    let mut cauchy = Vec::new();
    let mut grad_sups = Vec::new();
    let mut uniform_bound = 0.0f64;
    let mut prev_samples: Option<Vec<Option<f64>>> = None;

    for k in 0..=k_max {
        let problem =
            crate::approx::assemble_problem(k, base, family, curvature.clone(), &schedule, &aopts)?;
        for w in &problem.warnings {
            warnings.push(format!("level {k}: {w}"));
        }
        let h = (problem.delta / 3.0).clamp(policy.h_min, policy.h_max);
        let mut mopt = MeshOptions::with_h(h);
        if policy.grade_collar {
            mopt.grading = Some(CollarGrading {
                width: 2.0 * problem.delta,
                levels: 2,
            });
        }
        let mesh = Arc::new(Mesh::generate(&problem.domain, &mopt)?);

        // warm start by sampling the previous level where it exists
        let init = steps.last().map(|prev| {
            let pm = prev.solution.field.mesh();
            let pv = prev.solution.field.values();
            mesh.vertices()
                .iter()
                .map(|&p| {
                    pm.value_at(pv, p).unwrap_or_else(|| {
                        let mut best = (f64::INFINITY, 0.0);
                        for (i, &q) in pm.vertices().iter().enumerate() {
                            let d = p.dist(q);
                            if d < best.0 {
                                best = (d, pv[i]);
                            }
                        }
                        best.1
                    })
                })
                .collect::<Vec<f64>>()
        });

        let solution = solve_regularized(&problem, mesh.clone(), init.as_deref(), opts, mode)?;
        for w in &solution.warnings {
            warnings.push(format!("level {k}: {w}"));
        }

        let samples: Vec<Option<f64>> = probes
            .iter()
            .map(|&p| mesh.value_at(solution.field.values(), p))
            .collect();
        if let Some(prev) = &prev_samples {
            let mut worst = 0.0f64;
            for (a, b) in samples.iter().zip(prev) {
                if let (Some(a), Some(b)) = (a, b) {
                    worst = worst.max((a - b).abs());
                }
            }
            cauchy.push(worst);
        }
        let mut gs = 0.0f64;
        for &p in &probes {
            if let Some((tri, _)) = mesh.locate(p) {
                gs = gs.max(mesh.tri_gradient(solution.field.values(), tri).norm());
            }
        }
        grad_sups.push(gs);
        sup_norms.push(solution.field.sup_norm());
        uniform_bound = uniform_bound.max(problem.sup_bound);
        prev_samples = Some(samples);
        steps.push(SequenceStep {
            problem,
            mesh,
            solution,
        });
    }

    Ok(SequenceReport {
        steps,
        sup_norms,
        uniform_bound,
        cauchy,
        grad_sups,
        probes,
        warnings,
    })
}

/// Upper and lower graph barriers over the collar band of one boundary
/// curve, pinned at a chosen point. Both equal the data on the curve,
/// clear the sup bound on the inner face of the band, and are super- and
/// subsolutions of the area operator against the collar divergence, which
/// caps the solution gradient on the curve independently of the level.
pub struct BarrierPair {
    domain: Domain,
    phi: BoundaryData,
    pub at: BoundaryPoint,
    x0: Vec2,
    /// Depth of the barrier band below the curve.
    pub depth: f64,
    /// Log profile amplitude and slope: the graph climbs away from the
    /// data by amplitude * ln(1 + slope * d).
    pub amplitude: f64,
    pub slope: f64,
    /// Gradient of either barrier at the pin; bounds the solution
    /// gradient there by the comparison principle.
    pub grad_bound: f64,
}

impl BarrierPair {
    pub fn contains(&self, x: Vec2) -> bool {
        let (id, _, d, side) = self.domain.nearest_boundary(x);
        id == self.at.curve && side >= 0.0 && d < self.depth
    }

    fn profile(&self, d: f64) -> f64 {
        self.amplitude * (1.0 + self.slope * d).ln()
    }

    pub fn upper(&self, x: Vec2) -> f64 {
        let (id, fr, d, _) = self.domain.nearest_frame(x);
        let data = self.phi.get(id).eval(self.domain.curve(id), fr.s);
        data + self.profile(d)
    }

    pub fn lower(&self, x: Vec2) -> f64 {
        let (id, fr, d, _) = self.domain.nearest_frame(x);
        let data = self.phi.get(id).eval(self.domain.curve(id), fr.s);
        data - self.profile(d)
    }
}

/// Mean curvature operator of a barrier graph in collar chart
/// coordinates, by nested central differences of the flux. `value` maps
/// (tangent offset, depth) to the barrier height.
fn chart_mean_curvature(
    value: &impl Fn(f64, f64) -> f64,
    kappa_at: &impl Fn(f64) -> f64,
    tau: f64,
    d: f64,
    e1: f64,
    e2: f64,
) -> f64 {
    let flux = |t: f64, dd: f64| -> (f64, f64) {
        let m = 1.0 - kappa_at(t) * dd;
        let vt = (value(t + e1, dd) - value(t - e1, dd)) / (2.0 * e1);
        let vd = (value(t, dd + e1) - value(t, dd - e1)) / (2.0 * e1);
        let w = (1.0 + (vt / m) * (vt / m) + vd * vd).sqrt();
        (vt / (m * w), m * vd / w)
    };
    let m = 1.0 - kappa_at(tau) * d;
    let (pp, _) = flux(tau + e2, d);
    let (pm, _) = flux(tau - e2, d);
    let (_, qp) = flux(tau, d + e2);
    let (_, qm) = flux(tau, d - e2);
    ((pp - pm) / (2.0 * e2) + (qp - qm) / (2.0 * e2)) / m
}

/// Build the barrier pair over the collar band of the curve through the
/// given point. The log profile must climb past the sup bound by the
/// inner face of the band while staying a supersolution against the
/// collar divergence; amplitude and slope are searched over a small grid,
/// smallest gradient first, and failure is reported rather than patched.
pub fn build_barriers(
    problem: &ApproxProblem,
    at: BoundaryPoint,
    m_bound: f64,
) -> Result<BarrierPair, SolverError> {
    let domain = &problem.domain;
    let curve = domain.curve(at.curve);
    let x0 = curve.pos(at.s);
    let kmax = domain.max_abs_curvature();
    let depth = (0.5 * problem.delta).min(0.4 / kmax.max(1e-9));
    let phi_sup = problem.phi.sup_norm(domain);
    // the barrier must clear every solution bounded by m_bound on the
    // inner face even where the data is at its lowest
    let lift = m_bound + 1.0 + phi_sup;

    let data = problem.phi.get(at.curve);
    let value_of = |amplitude: f64, slope: f64, sign: f64| {
        move |tau: f64, d: f64| {
            data.eval(curve, tau) + sign * amplitude * (1.0 + slope * d).ln()
        }
    };
    let kappa_at = |tau: f64| curve.curvature(tau);

    // sample the whole band, staying off the boundary so the nested
    // differences never leave it
    let n_tau = 32;
    let mut samples = Vec::new();
    for it in 0..n_tau {
        for id in 1..=6 {
            let tau = curve.len() * (it as f64) / (n_tau as f64);
            let d = depth * (0.08 + 0.87 * (id as f64 - 1.0) / 5.0);
            samples.push((tau, d));
        }
    }

    let e1 = 1e-6 * curve.len();
    let e2 = 2e-5 * curve.len();
    let margin = 1e-4 * (1.0 + kmax);

    // amplitudes must stay below the reciprocal data curvature for the
    // log profile to keep leverage; slopes start at the smallest value
    // that lifts the profile past the bound within the band
    let mut candidates = Vec::new();
    for &amplitude in &[0.2, 0.3, 0.5, 0.7, 1.0, 1.4, 2.0, 2.8] {
        let b0 = ((lift / amplitude).exp() - 1.0) / depth;
        for &bf in &[1.0, 1.5, 2.5, 4.0] {
            let slope: f64 = b0 * bf;
            if slope * amplitude < 1.05 {
                continue;
            }
            candidates.push((amplitude * slope, amplitude, slope));
        }
    }
    candidates.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    for &(_, amplitude, slope) in &candidates {
        let upper = value_of(amplitude, slope, 1.0);
        let lower = value_of(amplitude, slope, -1.0);
        let mut ok = true;
        for &(tau, d) in &samples {
            let kap = kappa_at(tau);
            let m = 1.0 - kap * d;
            let div_eta = -kap / m;
            let up = chart_mean_curvature(&upper, &kappa_at, tau, d, e1, e2);
            if !(up <= div_eta - margin) {
                ok = false;
                break;
            }
            let lo = chart_mean_curvature(&lower, &kappa_at, tau, d, e1, e2);
            if !(lo >= -div_eta + margin) {
                ok = false;
                break;
            }
        }
        if ok {
            let dphi = data.deriv(curve, at.s).abs();
            let grad_bound = dphi + amplitude * slope;
            return Ok(BarrierPair {
                domain: domain.clone(),
                phi: problem.phi.clone(),
                at,
                x0,
                depth,
                amplitude,
                slope,
                grad_bound,
            });
        }
    }
    Err(SolverError::BarrierConstructionFailed { x: x0.x, y: x0.y })
}

#[derive(Debug, Clone, Copy)]
pub struct BarrierCheck {
    pub checked: usize,
    pub violations: usize,
    /// Largest signed excess outside the barrier bracket; nonpositive
    /// when the solution is fully bracketed.
    pub worst: f64,
}

/// Test a discrete solution against the barrier bracket on every mesh
/// vertex inside the neighborhood.
pub fn barrier_check(u: &DiscreteScalarField, pair: &BarrierPair, slack: f64) -> BarrierCheck {
    let mesh = u.mesh();
    let vals = u.values();
    let mut checked = 0;
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for (i, &p) in mesh.vertices().iter().enumerate() {
        if !pair.contains(p) {
            continue;
        }
        checked += 1;
        let up = pair.upper(p);
        let lo = pair.lower(p);
        let excess = (vals[i] - up).max(lo - vals[i]);
        worst = worst.max(excess);
        if excess > slack {
            violations += 1;
        }
    }
    if checked == 0 {
        worst = 0.0;
    }
    BarrierCheck {
        checked,
        violations,
        worst,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::{delta_schedule, ConstantCurvature, ScheduleInputs};
    use crate::boundary::ScalarOnCurve;

    fn unit_disk() -> Domain {
        Domain::disk(Vec2::ZERO, 1.0, 96)
    }

    fn disk_mesh(domain: &Domain, h: f64) -> Arc<Mesh> {
        Arc::new(Mesh::generate(domain, &MeshOptions::with_h(h)).unwrap())
    }

    fn wiggle_data(domain: &Domain, amp: f64) -> BoundaryData {
        let len = domain.outer().len();
        BoundaryData::new(vec![ScalarOnCurve::periodic_fn(len, move |s| {
            amp * (2.0 * std::f64::consts::PI * 2.0 * s / len).sin()
        })])
    }

    fn small_problem(h_const: f64) -> (ApproxProblem, Arc<Mesh>) {
        let base = unit_disk();
        let data = wiggle_data(&base, 0.2);
        let family = BoundaryFamily::new(data, 0.1);
        let steps: Vec<ScheduleInputs> = (0..1)
            .map(|_| ScheduleInputs {
                reach: base.shrink(0, 0.05).unwrap().reach(),
                curvature_sup: 1.2,
                grad_bound: 1.5,
            })
            .collect();
        let schedule = delta_schedule(&steps, 0.05, base.alpha()).unwrap();
        let problem = crate::approx::assemble_problem(
            0,
            &base,
            &family,
            Arc::new(ConstantCurvature(h_const)),
            &schedule,
            &crate::approx::AssembleOptions::default(),
        )
        .unwrap();
        let mesh = disk_mesh(&problem.domain, 0.22);
        (problem, mesh)
    }


    #[test]
    fn zero_data_stays_exactly_zero() {
        let domain = unit_disk();
        let mesh = disk_mesh(&domain, 0.25);
        let phi = BoundaryData::uniform(&domain, 0.0);
        let sol = minimize_functional(
            &domain,
            &phi,
            Arc::new(ConstantCurvature(0.0)),
            mesh,
            &SolverOptions::default(),
            Mode::Sequential,
        )
        .unwrap();
        // zero is a stationary point of every term and the start value
        assert!(sol.field.values().iter().all(|&v| v == 0.0));
        assert!(sol.residual <= 1e-12);
        assert!((sol.breakdown.area - sol.field.mesh().total_area()).abs() < 1e-12);
        assert_eq!(sol.breakdown.boundary_penalty, 0.0);
    }

    #[test]
    fn affine_data_is_reproduced_exactly() {
        let domain = unit_disk();
        let mesh = disk_mesh(&domain, 0.24);
        let g = v2(0.3, -0.2);
        let c0 = 0.1;
        let phi = BoundaryData::new(vec![ScalarOnCurve::affine(domain.outer().len(), c0, g)]);
        let sol = minimize_functional(
            &domain,
            &phi,
            Arc::new(ConstantCurvature(0.0)),
            mesh.clone(),
            &SolverOptions::default(),
            Mode::Sequential,
        )
        .unwrap();
        // the affine interpolant is the exact discrete minimizer once the
        // trace attaches, and attachment holds because the data slope is
        // subcritical for the penalty
        let mut worst = 0.0f64;
        for (i, &p) in mesh.vertices().iter().enumerate() {
            let exact = c0 + g.dot(p);
            worst = worst.max((sol.field.values()[i] - exact).abs());
        }
        assert!(worst < 1e-8, "affine reproduction off by {worst:.3e}");
        // the attached trace is linear in arclength between vertices, so a
        // chord gap against the curved data survives at second order in h
        assert!(sol.breakdown.boundary_penalty < 2e-2);
    }

    #[test]
    fn minimizer_energy_is_monotone() {
        let domain = unit_disk();
        let mesh = disk_mesh(&domain, 0.28);
        let phi = wiggle_data(&domain, 0.3);
        let sol = minimize_functional(
            &domain,
            &phi,
            Arc::new(ConstantCurvature(0.4)),
            mesh,
            &SolverOptions::default(),
            Mode::Sequential,
        )
        .unwrap();
        for pair in sol.log.windows(2) {
            if pair[0].eps == pair[1].eps {
                assert!(
                    pair[1].energy <= pair[0].energy + 1e-10,
                    "energy rose within a stage: {} -> {}",
                    pair[0].energy,
                    pair[1].energy
                );
            }
        }
        assert!(sol.residual <= 1e-6);
    }

    #[test]
    fn shifted_data_shifts_the_solution() {
        let domain = unit_disk();
        let mesh = disk_mesh(&domain, 0.26);
        let phi = wiggle_data(&domain, 0.25);
        let shift = 0.375;
        let len = domain.outer().len();
        let shifted = BoundaryData::new(vec![ScalarOnCurve::periodic_fn(len, move |s| {
            0.25 * (2.0 * std::f64::consts::PI * 2.0 * s / len).sin() + shift
        })]);
        let opts = SolverOptions::default();
        let a = minimize_functional(
            &domain,
            &phi,
            Arc::new(ConstantCurvature(0.0)),
            mesh.clone(),
            &opts,
            Mode::Sequential,
        )
        .unwrap();
        let b = minimize_functional(
            &domain,
            &shifted,
            Arc::new(ConstantCurvature(0.0)),
            mesh,
            &opts,
            Mode::Sequential,
        )
        .unwrap();
        let mut worst = 0.0f64;
        for (x, y) in a.field.values().iter().zip(b.field.values()) {
            worst = worst.max((y - x - shift).abs());
        }
        assert!(worst < 5e-8, "equivariance violated by {worst:.3e}");
    }

    #[test]
    fn ordered_data_gives_ordered_solutions() {
        let domain = unit_disk();
        let mesh = disk_mesh(&domain, 0.26);
        let low = wiggle_data(&domain, 0.2);
        let len = domain.outer().len();
        let high = BoundaryData::new(vec![ScalarOnCurve::periodic_fn(len, move |s| {
            0.2 * (2.0 * std::f64::consts::PI * 2.0 * s / len).sin() + 0.4
        })]);
        let opts = SolverOptions::default();
        let h = Arc::new(ConstantCurvature(0.3));
        let a = minimize_functional(&domain, &low, h.clone(), mesh.clone(), &opts, Mode::Sequential)
            .unwrap();
        let b = minimize_functional(&domain, &high, h, mesh, &opts, Mode::Sequential).unwrap();
        for (x, y) in a.field.values().iter().zip(b.field.values()) {
            assert!(*x <= y + 1e-8, "comparison failed: {x} > {y}");
        }
    }

    #[test]
    fn zero_loading_stage_is_exactly_zero() {
        let (problem, mesh) = small_problem(0.3);
        let mut opts = SolverOptions::default();
        opts.sigma_steps = vec![0.0, 0.5, 1.0];
        let rep = sigma_continuation(&problem, mesh, &opts, Mode::Sequential).unwrap();
        assert_eq!(rep.stages[0].sup_norm, 0.0);
        assert_eq!(rep.stages[0].iterations, 0);
        for st in &rep.stages {
            assert!(st.residual <= opts.tol_res * (1.0 + 1e-12));
        }
        assert!(rep.ratio.is_finite() && rep.ratio > 0.0);
        assert!(rep.solution.field.sup_norm() <= problem.sup_bound);
    }

    #[test]
    fn regularized_solution_meets_reported_residual() {
        let (problem, mesh) = small_problem(0.3);
        let opts = SolverOptions::default();
        let sol = solve_regularized(&problem, mesh, None, &opts, Mode::Sequential).unwrap();
        assert!(sol.residual <= opts.tol_res * (1.0 + 1e-9), "residual {}", sol.residual);
        assert!(sol.warnings.is_empty(), "{:?}", sol.warnings);
        let honest = functional::weak_residual(&sol.field, &WeakForm::of(&problem), Mode::Sequential);
        assert!(honest.max_norm <= opts.tol_res * (1.0 + 1e-9));
    }

    #[test]
    fn barriers_bracket_the_discrete_solution() {
        let (problem, mesh) = small_problem(0.3);
        let opts = SolverOptions::default();
        let sol = solve_regularized(&problem, mesh, None, &opts, Mode::Sequential).unwrap();
        let s0 = 0.3 * problem.domain.outer().len();
        let at = BoundaryPoint {
            curve: crate::domain::CurveId(0),
            s: s0,
        };
        let m_bound = sol.field.sup_norm() + 0.5;
        let pair = build_barriers(&problem, at, m_bound).unwrap();
        assert!(pair.grad_bound.is_finite() && pair.grad_bound > 0.0);
        // the pin is exact: both barriers meet the data there
        let xp = problem.domain.curve(at.curve).pos(s0);
        let data_at = problem
            .phi
            .get(at.curve)
            .eval(problem.domain.curve(at.curve), s0);
        assert!((pair.upper(xp) - data_at).abs() < 1e-9);
        assert!((pair.lower(xp) - data_at).abs() < 1e-9);

        let check = barrier_check(&sol.field, &pair, 1e-9);
        assert!(check.checked > 0, "no vertices inside the barrier patch");
        assert_eq!(check.violations, 0, "worst excess {:.3e}", check.worst);

        // a tampered solution must be caught
        let lifted = sol.field.shifted(3.0 * (m_bound + 1.0));
        let bad = barrier_check(&lifted, &pair, 1e-9);
        assert!(bad.violations > 0);
    }

    #[test]
    fn invalid_options_are_rejected() {
        let mut opts = SolverOptions::default();
        opts.sigma_steps = vec![0.0, 0.5];
        assert!(matches!(
            opts.validate(),
            Err(SolverError::InvalidOptions(_))
        ));
        let mut opts = SolverOptions::default();
        opts.tol_res = 0.0;
        assert!(matches!(
            opts.validate(),
            Err(SolverError::InvalidOptions(_))
        ));
        let mut opts = SolverOptions::default();
        opts.eps_schedule = vec![1e-3, 1e-2];
        assert!(matches!(
            opts.validate(),
            Err(SolverError::InvalidOptions(_))
        ));
    }

    #[test]
    fn nonconvergence_carries_the_best_iterate() {
        let domain = unit_disk();
        let mesh = disk_mesh(&domain, 0.3);
        let n = mesh.vertex_count();
        let phi = wiggle_data(&domain, 0.4);
        let mut opts = SolverOptions::default();
        opts.max_newton = 1;
        opts.tol_res = 1e-14;
        let err = match minimize_functional(
            &domain,
            &phi,
            Arc::new(ConstantCurvature(0.5)),
            mesh,
            &opts,
            Mode::Sequential,
        ) {
            Err(e) => e,
            Ok(_) => panic!("expected nonconvergence"),
        };
        match err {
            SolverError::NonConvergence { best, residual, .. } => {
                assert_eq!(best.len(), n);
                assert!(residual > 0.0);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn sequence_stays_under_the_uniform_bound() {
        let base = unit_disk();
        let data = wiggle_data(&base, 0.2);
        let family = BoundaryFamily::new(data, 0.1);
        let policy = SequencePolicy {
            h_min: 0.15,
            h_max: 0.2,
            grade_collar: false,
            ..Default::default()
        };
        let rep = run_sequence(
            &base,
            &family,
            Arc::new(ConstantCurvature(0.4)),
            2,
            &policy,
            &SolverOptions::default(),
            Mode::Sequential,
        )
        .unwrap();
        assert_eq!(rep.steps.len(), 3);
        for sup in &rep.sup_norms {
            assert!(*sup <= rep.uniform_bound, "sup {sup} above {}", rep.uniform_bound);
        }
        assert_eq!(rep.cauchy.len(), 2);
        assert!(
            rep.cauchy[1] < rep.cauchy[0] + 1e-9,
            "differences grew: {:?}",
            rep.cauchy
        );
        for g in &rep.grad_sups {
            assert!(g.is_finite());
        }
    }
}
