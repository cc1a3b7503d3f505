//! Assembly of the surface carried by a solved height field: the graph
//! sheet over the domain plus the vertical wall that closes the gap
//! between the boundary trace and the prescribed data, together with the
//! measure queries (clipped mass, plane closeness, normal variation,
//! weighted column volume) used by the verification layer.
//!
//! Orientation conventions. Graph faces carry the downward unit normal,
//! so their winding is the reverse of the plan triangulation. Wall faces
//! are wound so that shared edges cancel against the graph sheet and
//! against neighbouring strips; the surviving one-dimensional boundary of
//! the whole surface is then the data curve at mesh resolution. With this
//! winding a wall face's normal points out of the domain where the trace
//! sits below the data and into the domain where it sits above.

use std::collections::HashMap;
use std::io::{self, Write};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::boundary::{BoundaryData, Side};
use crate::domain::{CurveId, Domain};
use crate::exec::{self, Mode};
use crate::functional::DiscreteScalarField;
use crate::geom::{v3, wrap_periodic, Vec2, Vec3};
use crate::quad;

/// One boundary vertex of the solved field with its data value and the
/// detachment verdict at tolerance `tol`.
#[derive(Debug, Clone, Copy)]
pub struct TraceSample {
    pub vertex: u32,
    pub s: f64,
    pub value: f64,
    pub data: f64,
    pub tol: f64,
    pub detached: bool,
}

/// Nodal trace of the solution along one boundary curve, ordered by
/// arclength.
#[derive(Debug, Clone)]
pub struct TraceCurve {
    pub curve: CurveId,
    pub len: f64,
    pub samples: Vec<TraceSample>,
}

impl TraceCurve {
    /// Arclength of the detached part, counting each span between
    /// consecutive samples by the fraction of its endpoints detached.
    pub fn detached_arclength(&self) -> f64 {
        let n = self.samples.len();
        if n < 2 {
            return 0.0;
        }
        let mut total = 0.0;
        for i in 0..n {
            let a = &self.samples[i];
            let b = &self.samples[(i + 1) % n];
            let span = wrap_periodic(b.s - a.s, self.len);
            let ends = a.detached as u32 + b.detached as u32;
            total += span * 0.5 * ends as f64;
        }
        total
    }

    pub fn attached_arclength(&self) -> f64 {
        self.len - self.detached_arclength()
    }

    pub fn fully_attached(&self) -> bool {
        self.samples.iter().all(|s| !s.detached)
    }

    pub fn fully_detached(&self) -> bool {
        self.samples.iter().all(|s| s.detached)
    }

    pub fn mask(&self) -> Vec<bool> {
        self.samples.iter().map(|s| s.detached).collect()
    }
}

/// Nodal boundary trace with a detachment mask. With `tol_detach = None`
/// each sample uses `10 h (1 + |Du|)` with the gradient taken over the
/// triangles touching the vertex: a discrete trace cannot resolve
/// detachment below mesh scale.
pub fn extract_trace(
    u: &DiscreteScalarField,
    domain: &Domain,
    phi: &BoundaryData,
    tol_detach: Option<f64>,
) -> Vec<TraceCurve> {
    let mesh = u.mesh();
    let vals = u.values();
    let mut slope = vec![0.0f64; mesh.vertex_count()];
    if tol_detach.is_none() {
        for t in 0..mesh.triangle_count() {
            let g = mesh.tri_gradient(vals, t).norm();
            for v in mesh.triangles()[t] {
                let v = v as usize;
                if g > slope[v] {
                    slope[v] = g;
                }
            }
        }
    }
    domain
        .curve_ids()
        .map(|cid| {
            let curve = domain.curve(cid);
            let data = phi.get(cid);
            let samples = mesh
                .boundary_vertices(cid)
                .into_iter()
                .map(|(v, s)| {
                    let value = vals[v as usize];
                    assert!(value.is_finite(), "trace value at vertex {v} is not finite");
                    let dv = data.eval(curve, s);
                    let tol = tol_detach
                        .unwrap_or_else(|| 10.0 * mesh.h() * (1.0 + slope[v as usize]));
                    TraceSample {
                        vertex: v,
                        s,
                        value,
                        data: dv,
                        tol,
                        detached: (value - dv).abs() > tol,
                    }
                })
                .collect();
            TraceCurve {
                curve: cid,
                len: curve.len(),
                samples,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FacePart {
    Graph,
    Wall,
}

/// Triangulated surface of the lifted solution: graph sheet plus the
/// vertical wall strips between trace and data.
#[derive(Debug, Clone)]
pub struct GraphCurrent {
    vertices: Vec<Vec3>,
    faces: Vec<[u32; 3]>,
    wall_from: usize,
    graph_area: f64,
    wall_area: f64,
    traces: Vec<TraceCurve>,
}

fn tri_area3(a: Vec3, b: Vec3, c: Vec3) -> f64 {
    0.5 * (b - a).cross(c - a).norm()
}

/// Builds the oriented surface for a solved field. The wall is assembled
/// per boundary edge from per-vertex columns; columns are shared between
/// neighbouring strips whenever their one-sided data values agree, so the
/// internal seams cancel and data jumps survive as vertical segments.
pub fn build_current(u: &DiscreteScalarField, domain: &Domain, phi: &BoundaryData) -> GraphCurrent {
    let mesh = u.mesh();
    let vals = u.values();
    let mut vertices: Vec<Vec3> = mesh
        .vertices()
        .iter()
        .zip(vals.iter())
        .map(|(p, &z)| v3(p.x, p.y, z))
        .collect();

    let mut faces: Vec<[u32; 3]> = Vec::with_capacity(mesh.triangle_count());
    let mut graph_area = 0.0;
    for &[a, b, c] in mesh.triangles() {
        // reverse the ccw plan winding so the lifted face points downward
        faces.push([a, c, b]);
        graph_area += tri_area3(
            vertices[a as usize],
            vertices[c as usize],
            vertices[b as usize],
        );
    }
    let wall_from = faces.len();

    let sup = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let wall_eps = 1e-10 * (1.0 + phi.sup_norm(domain) + sup);

    // a column holds the vertical subdivision above one boundary vertex,
    // from the trace vertex up to (one side of) the data value
    struct Column {
        points: Vec<u32>,
    }
    let mut col_index: HashMap<(u32, u64), usize> = HashMap::new();
    let mut columns: Vec<Column> = Vec::new();
    let h_ref = mesh.h();

    fn column_for(
        v: u32,
        data: f64,
        h_ref: f64,
        col_index: &mut HashMap<(u32, u64), usize>,
        columns: &mut Vec<Column>,
        vertices: &mut Vec<Vec3>,
    ) -> usize {
        *col_index.entry((v, data.to_bits())).or_insert_with(|| {
            let base = vertices[v as usize];
            let gap = data - base.z;
            let rows = ((gap.abs() / h_ref).ceil() as usize).clamp(1, 512);
            let mut points = Vec::with_capacity(rows + 1);
            points.push(v);
            for k in 1..=rows {
                let z = if k == rows {
                    data
                } else {
                    base.z + gap * (k as f64 / rows as f64)
                };
                vertices.push(v3(base.x, base.y, z));
                points.push((vertices.len() - 1) as u32);
            }
            columns.push(Column { points });
            columns.len() - 1
        })
    }

    let mut wall_area = 0.0;
    for e in mesh.boundary_edges() {
        let curve = domain.curve(e.curve);
        let data = phi.get(e.curve);
        // data values one-sided into the edge span, so an exact jump at a
        // shared vertex produces two distinct columns there
        let d0 = data.eval_side(curve, e.s[0], Side::Above);
        let d1 = data.eval_side(curve, e.s[1], Side::Below);
        let g0 = d0 - vals[e.v[0] as usize];
        let g1 = d1 - vals[e.v[1] as usize];
        if g0.abs() < wall_eps && g1.abs() < wall_eps {
            continue;
        }
        let cl = column_for(e.v[0], d0, h_ref, &mut col_index, &mut columns, &mut vertices);
        let cr = column_for(e.v[1], d1, h_ref, &mut col_index, &mut columns, &mut vertices);
        let left = columns[cl].points.clone();
        let right = columns[cr].points.clone();
        // ladder between the two columns; every face keeps one vertical
        // edge, so wall normals are exactly horizontal, and the rung at
        // the trace cancels the graph sheet's boundary edge
        let a = left.len() - 1;
        let b = right.len() - 1;
        let (mut i, mut j) = (0usize, 0usize);
        while i < a || j < b {
            let advance_right = if j == b {
                false
            } else if i == a {
                true
            } else {
                ((j + 1) as f64) / (b as f64) <= ((i + 1) as f64) / (a as f64)
            };
            let face = if advance_right {
                let f = [left[i], right[j], right[j + 1]];
                j += 1;
                f
            } else {
                let f = [left[i], right[j], left[i + 1]];
                i += 1;
                f
            };
            wall_area += tri_area3(
                vertices[face[0] as usize],
                vertices[face[1] as usize],
                vertices[face[2] as usize],
            );
            faces.push(face);
        }
    }

    GraphCurrent {
        vertices,
        faces,
        wall_from,
        graph_area,
        wall_area,
        traces: extract_trace(u, domain, phi, None),
    }
}

impl GraphCurrent {
    pub fn vertex_positions(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn part(&self, face: usize) -> FacePart {
        if face < self.wall_from {
            FacePart::Graph
        } else {
            FacePart::Wall
        }
    }

    pub fn graph_area(&self) -> f64 {
        self.graph_area
    }

    pub fn wall_area(&self) -> f64 {
        self.wall_area
    }

    pub fn mass(&self) -> f64 {
        self.graph_area + self.wall_area
    }

    pub fn traces(&self) -> &[TraceCurve] {
        &self.traces
    }

    fn face_cross(&self, face: usize) -> Vec3 {
        let [a, b, c] = self.faces[face].map(|i| self.vertices[i as usize]);
        (b - a).cross(c - a)
    }

    pub fn face_area(&self, face: usize) -> f64 {
        0.5 * self.face_cross(face).norm()
    }

    /// Unit normal in the stored winding; `None` for degenerate faces.
    pub fn face_normal(&self, face: usize) -> Option<Vec3> {
        let c = self.face_cross(face);
        let n = c.norm();
        if n < 1e-14 {
            None
        } else {
            Some(c / n)
        }
    }

    pub fn face_centroid(&self, face: usize) -> Vec3 {
        let [a, b, c] = self.faces[face].map(|i| self.vertices[i as usize]);
        (a + b + c) / 3.0
    }

    /// Directed edges that do not cancel between faces: the discrete
    /// one-dimensional boundary of the surface.
    pub fn free_boundary_edges(&self) -> Vec<[u32; 2]> {
        let mut net: HashMap<(u32, u32), i64> = HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let a = f[k];
                let b = f[(k + 1) % 3];
                if a == b {
                    continue;
                }
                if a < b {
                    *net.entry((a, b)).or_default() += 1;
                } else {
                    *net.entry((b, a)).or_default() -= 1;
                }
            }
        }
        let mut out: Vec<[u32; 2]> = Vec::new();
        for ((a, b), n) in net {
            for _ in 0..n.abs() {
                out.push(if n > 0 { [a, b] } else { [b, a] });
            }
        }
        out.sort_unstable();
        out
    }

    /// Symmetric gap between the free boundary and the lifted data curve
    /// (graph of the data over each boundary curve plus vertical jump
    /// segments). Finite sampling on both sides.
    pub fn boundary_gap(&self, domain: &Domain, phi: &BoundaryData) -> f64 {
        let edges: Vec<(Vec3, Vec3)> = self
            .free_boundary_edges()
            .into_iter()
            .map(|[a, b]| (self.vertices[a as usize], self.vertices[b as usize]))
            .collect();

        let mut data_pts: Vec<Vec3> = Vec::new();
        for cid in domain.curve_ids() {
            let curve = domain.curve(cid);
            let data = phi.get(cid);
            let n = 512;
            for k in 0..n {
                let s = curve.len() * (k as f64) / (n as f64);
                let p = curve.pos(s);
                data_pts.push(v3(p.x, p.y, data.eval(curve, s)));
            }
            if let Some(j) = data.jump() {
                let p = curve.pos(j.s);
                for k in 0..=32 {
                    let t = k as f64 / 32.0;
                    data_pts.push(v3(p.x, p.y, j.below + (j.above - j.below) * t));
                }
            }
        }

        let mut gap = 0.0f64;
        for &(a, b) in &edges {
            for k in 0..=4 {
                let p = a + (b - a) * (k as f64 / 4.0);
                let d = data_pts
                    .iter()
                    .map(|q| q.dist(p))
                    .fold(f64::INFINITY, f64::min);
                gap = gap.max(d);
            }
        }
        for &q in &data_pts {
            let d = edges
                .iter()
                .map(|&(a, b)| point_segment_distance(q, a, b))
                .fold(f64::INFINITY, f64::min);
            gap = gap.max(d);
        }
        gap
    }

    /// V - E + F over the assembled complex: 1 for a disk-type surface,
    /// 0 for an annulus-type one.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used: Vec<u32> = self.faces.iter().flatten().copied().collect();
        used.sort_unstable();
        used.dedup();
        let mut edges: Vec<(u32, u32)> = Vec::with_capacity(self.faces.len() * 3);
        for f in &self.faces {
            for k in 0..3 {
                let a = f[k];
                let b = f[(k + 1) % 3];
                if a != b {
                    edges.push((a.min(b), a.max(b)));
                }
            }
        }
        edges.sort_unstable();
        edges.dedup();
        used.len() as i64 - edges.len() as i64 + self.faces.len() as i64
    }

    /// Wavefront OBJ with the graph sheet and the wall as named groups.
    /// Face winding is emitted as stored, so viewer-side normals agree
    /// with the orientation of the surface.
    pub fn write_obj<W: Write>(&self, w: &mut W) -> io::Result<()> {
        for v in &self.vertices {
            writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
        }
        writeln!(w, "g graph")?;
        for f in &self.faces[..self.wall_from] {
            writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
        }
        writeln!(w, "g wall")?;
        for f in &self.faces[self.wall_from..] {
            writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
        }
        Ok(())
    }
}

fn point_segment_distance(p: Vec3, a: Vec3, b: Vec3) -> f64 {
    let ab = b - a;
    let denom = ab.dot(ab);
    if denom < 1e-24 {
        return p.dist(a);
    }
    let t = ((p - a).dot(ab) / denom).clamp(0.0, 1.0);
    p.dist(a + ab * t)
}

fn ball_clipped_area(p0: Vec3, p1: Vec3, p2: Vec3, x: Vec3, rho: f64, depth: u32) -> f64 {
    let inside = |p: Vec3| p.dist(x) <= rho;
    if inside(p0) && inside(p1) && inside(p2) {
        return tri_area3(p0, p1, p2);
    }
    let cen = (p0 + p1 + p2) / 3.0;
    let rad = cen.dist(p0).max(cen.dist(p1)).max(cen.dist(p2));
    if cen.dist(x) - rad >= rho {
        return 0.0;
    }
    if depth == 0 {
        return if inside(cen) { tri_area3(p0, p1, p2) } else { 0.0 };
    }
    let m01 = (p0 + p1) / 2.0;
    let m12 = (p1 + p2) / 2.0;
    let m20 = (p2 + p0) / 2.0;
    ball_clipped_area(p0, m01, m20, x, rho, depth - 1)
        + ball_clipped_area(m01, p1, m12, x, rho, depth - 1)
        + ball_clipped_area(m20, m12, p2, x, rho, depth - 1)
        + ball_clipped_area(m01, m12, m20, x, rho, depth - 1)
}

/// Area of the surface inside the ball of radius `rho` at `x`, divided by
/// the flat disk area `pi rho^2`.
pub fn mass_ratio(t: &GraphCurrent, x: Vec3, rho: f64, mode: Mode) -> f64 {
    let area = exec::sum_indexed(mode, t.faces.len(), |i| {
        let [a, b, c] = t.faces[i].map(|k| t.vertices[k as usize]);
        ball_clipped_area(a, b, c, x, rho, 8)
    });
    area / (std::f64::consts::PI * rho * rho)
}

fn collect_ball_points(p0: Vec3, p1: Vec3, p2: Vec3, x: Vec3, rho: f64, depth: u32, out: &mut Vec<Vec3>) {
    let inside = |p: Vec3| p.dist(x) <= rho;
    // a linear height over the face peaks at a corner, so corners of
    // fully inside faces carry the supremum exactly
    if inside(p0) && inside(p1) && inside(p2) {
        out.push(p0);
        out.push(p1);
        out.push(p2);
        return;
    }
    let cen = (p0 + p1 + p2) / 3.0;
    let rad = cen.dist(p0).max(cen.dist(p1)).max(cen.dist(p2));
    if cen.dist(x) - rad >= rho {
        return;
    }
    if depth == 0 {
        for p in [p0, p1, p2] {
            if inside(p) {
                out.push(p);
            }
        }
        return;
    }
    let m01 = (p0 + p1) / 2.0;
    let m12 = (p1 + p2) / 2.0;
    let m20 = (p2 + p0) / 2.0;
    collect_ball_points(p0, m01, m20, x, rho, depth - 1, out);
    collect_ball_points(m01, p1, m12, x, rho, depth - 1, out);
    collect_ball_points(m20, m12, p2, x, rho, depth - 1, out);
    collect_ball_points(m01, m12, m20, x, rho, depth - 1, out);
}

fn fibonacci_hemisphere(n: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
    (0..n)
        .map(|i| {
            let z = (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let a = golden * i as f64;
            v3(r * a.cos(), r * a.sin(), z)
        })
        .collect()
}

fn slab_halfwidth(pts: &[Vec3], x: Vec3, n: Vec3) -> f64 {
    let n = n.normalized();
    pts.iter()
        .map(|p| ((*p - x).dot(n)).abs())
        .fold(0.0f64, f64::max)
}

/// Nelder-Mead on two parameters; deterministic, fixed iteration budget.
fn nelder_mead2<F: Fn([f64; 2]) -> f64>(f: F, start: [f64; 2], scale: f64, iters: usize) -> ([f64; 2], f64) {
    let mut simplex = [
        start,
        [start[0] + scale, start[1]],
        [start[0], start[1] + scale],
    ];
    let mut vals = simplex.map(&f);
    for _ in 0..iters {
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap());
        let (best, mid, worst) = (order[0], order[1], order[2]);
        let centroid = [
            0.5 * (simplex[best][0] + simplex[mid][0]),
            0.5 * (simplex[best][1] + simplex[mid][1]),
        ];
        let dir = [
            centroid[0] - simplex[worst][0],
            centroid[1] - simplex[worst][1],
        ];
        let at = |t: f64| [centroid[0] + t * dir[0], centroid[1] + t * dir[1]];
        let refl = at(1.0);
        let fr = f(refl);
        if fr < vals[best] {
            let exp = at(2.0);
            let fe = f(exp);
            if fe < fr {
                simplex[worst] = exp;
                vals[worst] = fe;
            } else {
                simplex[worst] = refl;
                vals[worst] = fr;
            }
        } else if fr < vals[mid] {
            simplex[worst] = refl;
            vals[worst] = fr;
        } else {
            let con = at(-0.5);
            let fc = f(con);
            if fc < vals[worst] {
                simplex[worst] = con;
                vals[worst] = fc;
            } else {
                for k in [mid, worst] {
                    simplex[k] = [
                        0.5 * (simplex[k][0] + simplex[best][0]),
                        0.5 * (simplex[k][1] + simplex[best][1]),
                    ];
                    vals[k] = f(simplex[k]);
                }
            }
        }
    }
    let mut bi = 0;
    for k in 1..3 {
        if vals[k] < vals[bi] {
            bi = k;
        }
    }
    (simplex[bi], vals[bi])
}

fn ball_samples(t: &GraphCurrent, x: Vec3, rho: f64) -> Vec<Vec3> {
    let mut pts = Vec::new();
    for f in &t.faces {
        let [a, b, c] = f.map(|k| t.vertices[k as usize]);
        collect_ball_points(a, b, c, x, rho, 7, &mut pts);
    }
    pts
}

/// Smallest slab half-width around a plane through `x` containing the
/// surface inside the ball, relative to the radius: coarse direction grid
/// then a simplex refinement. Returns the ratio and the plane normal.
pub fn sigma_closeness(t: &GraphCurrent, x: Vec3, rho: f64) -> (f64, Vec3) {
    let pts = ball_samples(t, x, rho);
    if pts.is_empty() {
        return (0.0, v3(0.0, 0.0, 1.0));
    }
    let mut dirs = fibonacci_hemisphere(256);
    dirs.push(v3(1.0, 0.0, 0.0));
    dirs.push(v3(0.0, 1.0, 0.0));
    dirs.push(v3(0.0, 0.0, 1.0));
    let mut best = dirs[0];
    let mut best_w = f64::INFINITY;
    for d in dirs {
        let w = slab_halfwidth(&pts, x, d);
        if w < best_w {
            best_w = w;
            best = d;
        }
    }
    // refine on a tangent chart around the best direction
    let t1 = if best.z.abs() < 0.9 {
        best.cross(v3(0.0, 0.0, 1.0)).normalized()
    } else {
        best.cross(v3(1.0, 0.0, 0.0)).normalized()
    };
    let t2 = best.cross(t1).normalized();
    let eval = |ab: [f64; 2]| {
        let n = (best + t1 * ab[0] + t2 * ab[1]).normalized();
        slab_halfwidth(&pts, x, n)
    };
    let (ab, w) = nelder_mead2(eval, [0.0, 0.0], 0.15, 140);
    let n = (best + t1 * ab[0] + t2 * ab[1]).normalized();
    if w <= best_w {
        (w / rho, n)
    } else {
        (best_w / rho, best)
    }
}

/// Closeness to a half-plane whose edge line runs through `x` along
/// `edge_dir`: the plane angle about the edge is scanned and refined by
/// golden section. Returns the ratio and the half-plane normal.
pub fn sigma_halfplane(t: &GraphCurrent, x: Vec3, rho: f64, edge_dir: Vec3) -> (f64, Vec3) {
    let pts = ball_samples(t, x, rho);
    if pts.is_empty() {
        return (0.0, v3(0.0, 0.0, 1.0));
    }
    let e = edge_dir.normalized();
    let m1 = if e.z.abs() < 0.9 {
        e.cross(v3(0.0, 0.0, 1.0)).normalized()
    } else {
        e.cross(v3(1.0, 0.0, 0.0)).normalized()
    };
    let m2 = e.cross(m1).normalized();
    let width = |psi: f64| {
        let n = m1 * psi.cos() + m2 * psi.sin();
        let w = n.cross(e);
        pts.iter()
            .map(|p| {
                let q = *p - x;
                let dn = q.dot(n);
                let dw = q.dot(w).min(0.0);
                (dn * dn + dw * dw).sqrt()
            })
            .fold(0.0f64, f64::max)
    };
    let scan = 512;
    let mut best_psi = 0.0;
    let mut best_w = f64::INFINITY;
    for k in 0..scan {
        let psi = std::f64::consts::TAU * k as f64 / scan as f64;
        let w = width(psi);
        if w < best_w {
            best_w = w;
            best_psi = psi;
        }
    }
    let (mut lo, mut hi) = (
        best_psi - std::f64::consts::TAU / scan as f64,
        best_psi + std::f64::consts::TAU / scan as f64,
    );
    let phi_ratio = (5.0f64.sqrt() - 1.0) / 2.0;
    for _ in 0..60 {
        let a = hi - phi_ratio * (hi - lo);
        let b = lo + phi_ratio * (hi - lo);
        if width(a) < width(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    let psi = 0.5 * (lo + hi);
    let w = width(psi).min(best_w);
    (w / rho, m1 * psi.cos() + m2 * psi.sin())
}

/// Largest ratio of normal deviation to centroid distance to the power
/// `alpha` over face pairs closer than `r`, optionally restricted to one
/// part of the surface. Degenerate faces are skipped.
pub fn normal_holder_seminorm(
    t: &GraphCurrent,
    r: f64,
    alpha: f64,
    part: Option<FacePart>,
    mode: Mode,
) -> f64 {
    let max_area = (0..t.faces.len())
        .map(|i| t.face_area(i))
        .fold(0.0f64, f64::max);
    let floor = 1e-10 * max_area;
    let items: Vec<(Vec3, Vec3)> = (0..t.faces.len())
        .filter(|&i| part.is_none_or(|p| p == t.part(i)) && t.face_area(i) > floor)
        .filter_map(|i| t.face_normal(i).map(|n| (t.face_centroid(i), n)))
        .collect();
    let locals = exec::map_indexed(mode, items.len(), |i| {
        let (ci, ni) = items[i];
        let mut m = 0.0f64;
        for (j, &(cj, nj)) in items.iter().enumerate() {
            if i == j {
                continue;
            }
            let d = ci.dist(cj);
            if d > r || d < 1e-12 {
                continue;
            }
            m = m.max((ni - nj).norm() / d.powf(alpha));
        }
        m
    });
    locals.into_iter().fold(0.0, f64::max)
}

/// Signed column region between the graph sheet and the zero reference
/// level: the plan triangles with their corner heights.
#[derive(Debug, Clone)]
pub struct TildeRegion {
    columns: Vec<([Vec2; 3], [f64; 3])>,
}

impl TildeRegion {
    pub fn of(t: &GraphCurrent) -> TildeRegion {
        let columns = t.faces[..t.wall_from]
            .iter()
            .map(|f| {
                // undo the downward winding to recover the ccw plan triangle
                let ids = [f[0], f[2], f[1]];
                let plan = ids.map(|i| t.vertices[i as usize].xy());
                let heights = ids.map(|i| t.vertices[i as usize].z);
                (plan, heights)
            })
            .collect();
        TildeRegion { columns }
    }

    /// Signed volume of the region: exact for the piecewise linear sheet.
    pub fn signed_volume(&self, mode: Mode) -> f64 {
        exec::sum_indexed(mode, self.columns.len(), |i| {
            let (p, z) = &self.columns[i];
            let area = 0.5 * (p[1] - p[0]).cross(p[2] - p[0]);
            area * (z[0] + z[1] + z[2]) / 3.0
        })
    }

    /// Integral of a height-dependent weight over the signed region,
    /// by a plan triangle rule with a nested vertical quadrature.
    pub fn weighted<F: Fn(Vec2, f64) -> f64 + Sync>(&self, weight: F, mode: Mode) -> f64 {
        let rule = quad::triangle_rule_deg4();
        exec::sum_indexed(mode, self.columns.len(), |i| {
            let (p, z) = &self.columns[i];
            let area = 0.5 * (p[1] - p[0]).cross(p[2] - p[0]);
            let mut acc = 0.0;
            for &(l, w) in rule {
                let xq = p[0] * l[0] + p[1] * l[1] + p[2] * l[2];
                let zq = z[0] * l[0] + z[1] * l[1] + z[2] * l[2];
                acc += w * quad::integrate(0.0, zq, 8, |h| weight(xq, h));
            }
            area * acc
        })
    }
}

/// Integral of `weight` over the signed region between the graph sheet
/// and the zero level. Reference shifts change this by a data-only
/// constant that cancels when comparing competitors.
pub fn tilde_h_volume<F: Fn(Vec2, f64) -> f64 + Sync>(
    t: &GraphCurrent,
    weight: F,
    mode: Mode,
) -> f64 {
    TildeRegion::of(t).weighted(weight, mode)
}

#[derive(Debug, Clone)]
pub struct ProbeReport {
    pub trials: usize,
    pub worst_deficit: f64,
    pub deficits: Vec<f64>,
}

/// Perturbs the solved sheet by random interior hat bumps with fixed
/// boundary and reports how much each competitor lowers the area plus
/// weighted column volume. Nonnegative deficits mean the solution resists
/// every probe. Deterministic for a fixed seed, independent of the mode.
pub fn minimality_probe<F: Fn(Vec2, f64) -> f64 + Sync>(
    u: &DiscreteScalarField,
    domain: &Domain,
    weight: F,
    margin: f64,
    seed: u64,
    trials: usize,
    amplitudes: &[f64],
    mode: Mode,
) -> ProbeReport {
    assert!(!amplitudes.is_empty());
    let mesh = u.mesh();
    let vals = u.values();
    let candidates: Vec<u32> = (0..mesh.vertex_count() as u32)
        .filter(|&v| {
            mesh.boundary_attach(v).is_none()
                && domain.signed_distance(mesh.vertices()[v as usize]) >= margin
        })
        .collect();
    assert!(
        !candidates.is_empty(),
        "no interior vertices clear the margin"
    );
    let mut incident: Vec<Vec<u32>> = vec![Vec::new(); mesh.vertex_count()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        for &v in tri {
            incident[v as usize].push(t as u32);
        }
    }

    let rule = quad::triangle_rule_deg4();
    let local_objective = |v: &[f64], tris: &[u32]| -> f64 {
        let mut acc = 0.0;
        for &t in tris {
            let t = t as usize;
            let area = mesh.area(t);
            let g = mesh.tri_gradient(v, t);
            acc += area * (1.0 + g.norm2()).sqrt();
            let [a, b, c] = mesh.triangles()[t].map(|i| i as usize);
            let pa = mesh.vertices()[a];
            let pb = mesh.vertices()[b];
            let pc = mesh.vertices()[c];
            for &(l, w) in rule {
                let xq = pa * l[0] + pb * l[1] + pc * l[2];
                let vq = v[a] * l[0] + v[b] * l[1] + v[c] * l[2];
                acc += area * w * quad::integrate(0.0, vq, 8, |h| weight(xq, h));
            }
        }
        acc
    };

    let deficits = exec::map_indexed(mode, trials, |k| {
        let mut rng = StdRng::seed_from_u64(seed ^ (0x9e3779b97f4a7c15u64.wrapping_mul(k as u64 + 1)));
        let v = candidates[rng.gen_range(0..candidates.len())];
        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let amp = sign * amplitudes[k % amplitudes.len()];
        let tris = &incident[v as usize];
        let base = local_objective(vals, tris);
        let mut pert = vals.to_vec();
        pert[v as usize] += amp;
        local_objective(&pert, tris) - base
    });
    let worst = deficits.iter().copied().fold(f64::INFINITY, f64::min);
    ProbeReport {
        trials,
        worst_deficit: worst,
        deficits,
    }
}
