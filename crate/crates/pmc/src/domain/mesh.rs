//! Conforming triangulation of a planar domain with holes. Boundary curves
//! are sampled into constraint chains, the interior is filled by Delaunay
//! refinement, and vertices inserted on constraint chords are snapped back
//! onto the exact curves afterwards.

use spade::{
    AngleLimit, ConstrainedDelaunayTriangulation, Point2, RefinementParameters, Triangulation,
};

use crate::geom::{v2, Vec2};

use super::domain::{CurveId, Domain};
use super::GeometryError;

/// Quality gate applied after snapping; refinement itself targets 26 deg.
const MIN_ANGLE_DEG: f64 = 20.0;
const REFINE_ANGLE_DEG: f64 = 26.0;
/// Minimum boundary samples per closed curve regardless of target spacing.
const MIN_BOUNDARY_SAMPLES: usize = 12;

#[derive(Debug, Clone)]
pub struct MeshOptions {
    /// Target edge length.
    pub h: f64,
    /// Boundary sample spacing as a multiple of h.
    pub boundary_factor: f64,
    /// Optional geometric refinement toward the boundary.
    pub grading: Option<CollarGrading>,
    /// Cap on refinement points, guards runaway refinement.
    pub max_extra_vertices: usize,
}

#[derive(Debug, Clone)]
pub struct CollarGrading {
    /// Band width measured from each boundary curve.
    pub width: f64,
    /// Number of dyadic offset rings seeded inside the band.
    pub levels: usize,
}

impl MeshOptions {
    pub fn with_h(h: f64) -> MeshOptions {
        MeshOptions {
            h,
            boundary_factor: 1.0,
            grading: None,
            max_extra_vertices: 400_000,
        }
    }
}

/// Attachment of a mesh vertex to a boundary curve at arclength s.
#[derive(Debug, Clone, Copy)]
pub struct BoundaryAttach {
    pub curve: CurveId,
    pub s: f64,
}

/// One straight mesh edge lying on a boundary chain. Vertex order follows
/// the traversal direction of the curve.
#[derive(Debug, Clone, Copy)]
pub struct BoundaryEdge {
    pub curve: CurveId,
    pub v: [u32; 2],
    pub s: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct Mesh {
    vertices: Vec<Vec2>,
    triangles: Vec<[u32; 3]>,
    tri_area: Vec<f64>,
    tri_grad: Vec<[Vec2; 3]>,
    boundary: Vec<Option<BoundaryAttach>>,
    boundary_edges: Vec<BoundaryEdge>,
    h: f64,
    locator: Locator,
}

impl Mesh {
    pub fn generate(domain: &Domain, opt: &MeshOptions) -> Result<Mesh, GeometryError> {
        if !(opt.h > 0.0) || opt.h > domain.diameter() {
            return Err(GeometryError::MeshFailure(format!(
                "edge length {} out of range for diameter {}",
                opt.h,
                domain.diameter()
            )));
        }
        let mut cdt: ConstrainedDelaunayTriangulation<Point2<f64>> =
            ConstrainedDelaunayTriangulation::new();
        let fail = |e: spade::InsertionError| GeometryError::MeshFailure(format!("{e}"));

        // boundary chains
        for id in domain.curve_ids() {
            let c = domain.curve(id);
            let n = ((c.len() / (opt.boundary_factor * opt.h)).ceil() as usize)
                .max(MIN_BOUNDARY_SAMPLES);
            let mut handles = Vec::with_capacity(n);
            for k in 0..n {
                let s = c.len() * (k as f64) / (n as f64);
                let p = c.pos(s);
                handles.push(cdt.insert(Point2::new(p.x, p.y)).map_err(fail)?);
            }
            for k in 0..n {
                cdt.add_constraint(handles[k], handles[(k + 1) % n]);
            }
        }

        // graded seed rings, free points only
        if let Some(g) = &opt.grading {
            for id in domain.curve_ids() {
                let c = domain.curve(id);
                for j in 1..=g.levels {
                    let d = g.width * 0.5f64.powi(j as i32);
                    let spacing = (opt.boundary_factor * opt.h).max(d);
                    let n = ((c.len() / spacing).ceil() as usize).max(MIN_BOUNDARY_SAMPLES);
                    for k in 0..n {
                        let s = c.len() * (k as f64) / (n as f64);
                        let p = c.pos(s) + c.inward_normal(s) * d;
                        if domain.signed_distance(p) > 0.25 * d {
                            cdt.insert(Point2::new(p.x, p.y)).map_err(fail)?;
                        }
                    }
                }
            }
        }

        let max_area = 0.5 * opt.h * opt.h;
        let params = RefinementParameters::<f64>::new()
            .exclude_outer_faces(true)
            .with_angle_limit(AngleLimit::from_deg(REFINE_ANGLE_DEG))
            .with_max_allowed_area(max_area)
            .with_max_additional_vertices(opt.max_extra_vertices);
        let outcome = cdt.refine(params);
        if !outcome.refinement_complete {
            return Err(GeometryError::MeshFailure(format!(
                "refinement hit the vertex cap {}",
                opt.max_extra_vertices
            )));
        }
        let excluded: std::collections::HashSet<usize> = outcome
            .excluded_faces
            .iter()
            .map(|f| f.index())
            .collect();

        // extract arrays in handle order
        let nv = cdt.num_vertices();
        let mut vertices = vec![Vec2::ZERO; nv];
        for v in cdt.vertices() {
            let p = v.position();
            vertices[v.fix().index()] = v2(p.x, p.y);
        }
        let mut triangles: Vec<[u32; 3]> = Vec::new();
        for f in cdt.inner_faces() {
            if excluded.contains(&f.fix().index()) {
                continue;
            }
            let vs = f.vertices();
            triangles.push([
                vs[0].fix().index() as u32,
                vs[1].fix().index() as u32,
                vs[2].fix().index() as u32,
            ]);
        }
        if triangles.is_empty() {
            return Err(GeometryError::MeshFailure("no interior faces".into()));
        }

        // vertices on constraint chains, and the chains themselves
        let mut on_boundary = vec![false; nv];
        let mut raw_edges: Vec<[u32; 2]> = Vec::new();
        for e in cdt.undirected_edges() {
            if e.is_constraint_edge() {
                let [a, b] = e.vertices();
                let (ia, ib) = (a.fix().index(), b.fix().index());
                on_boundary[ia] = true;
                on_boundary[ib] = true;
                raw_edges.push([ia as u32, ib as u32]);
            }
        }

        // snap chord vertices to the exact curves
        let kappa_max = domain.max_abs_curvature();
        let snap_tol = 0.5 * opt.h * opt.h * kappa_max + 1e-9 * domain.diameter();
        let mut boundary: Vec<Option<BoundaryAttach>> = vec![None; nv];
        for i in 0..nv {
            if !on_boundary[i] {
                continue;
            }
            let (curve, s, dist, _) = domain.nearest_boundary(vertices[i]);
            if dist > snap_tol {
                return Err(GeometryError::MeshFailure(format!(
                    "constraint vertex {dist:.3e} away from the boundary, tolerance {snap_tol:.3e}"
                )));
            }
            vertices[i] = domain.curve(curve).pos(s);
            boundary[i] = Some(BoundaryAttach { curve, s });
        }

        let mut boundary_edges = Vec::with_capacity(raw_edges.len());
        for [a, b] in raw_edges {
            let (aa, ab) = (boundary[a as usize].unwrap(), boundary[b as usize].unwrap());
            if aa.curve != ab.curve {
                return Err(GeometryError::MeshFailure(
                    "constraint edge links two different curves".into(),
                ));
            }
            let c = domain.curve(aa.curve);
            // orient along the traversal: the forward gap is the short one
            let forward = crate::geom::wrap_periodic(ab.s - aa.s, c.len());
            let e = if forward <= 0.5 * c.len() {
                BoundaryEdge {
                    curve: aa.curve,
                    v: [a, b],
                    s: [aa.s, ab.s],
                }
            } else {
                BoundaryEdge {
                    curve: aa.curve,
                    v: [b, a],
                    s: [ab.s, aa.s],
                }
            };
            boundary_edges.push(e);
        }
        boundary_edges.sort_by(|x, y| {
            (x.curve.0, x.s[0])
                .partial_cmp(&(y.curve.0, y.s[0]))
                .unwrap()
        });

        let mut mesh = Mesh {
            vertices,
            triangles,
            tri_area: Vec::new(),
            tri_grad: Vec::new(),
            boundary,
            boundary_edges,
            h: opt.h,
            locator: Locator::empty(),
        };
        mesh.compute_fem_data()?;
        mesh.validate(domain)?;
        mesh.locator = Locator::build(&mesh.vertices, &mesh.triangles, opt.h);
        Ok(mesh)
    }

    fn compute_fem_data(&mut self) -> Result<(), GeometryError> {
        self.tri_area.clear();
        self.tri_grad.clear();
        for (t, tri) in self.triangles.iter_mut().enumerate() {
            let [a, b, c] = tri.map(|i| self.vertices[i as usize]);
            let twice = (b - a).cross(c - a);
            if twice < 0.0 {
                tri.swap(1, 2);
            }
            let [a, b, c] = tri.map(|i| self.vertices[i as usize]);
            let twice = (b - a).cross(c - a);
            if twice <= 0.0 {
                return Err(GeometryError::MeshFailure(format!(
                    "degenerate triangle {t} after snapping"
                )));
            }
            let area = 0.5 * twice;
            self.tri_area.push(area);
            // P1 shape gradients: grad of the hat at vertex i is the inward
            // normal of the opposite edge scaled by its length / 2A
            let g = |p: Vec2, q: Vec2| -> Vec2 { (q - p).perp() * (1.0 / twice) };
            self.tri_grad.push([g(b, c), g(c, a), g(a, b)]);
        }
        Ok(())
    }

    fn validate(&self, domain: &Domain) -> Result<(), GeometryError> {
        // angle quality
        let min_angle = self.min_angle_deg();
        if min_angle < MIN_ANGLE_DEG {
            return Err(GeometryError::MeshFailure(format!(
                "minimum angle {min_angle:.2} deg below the {MIN_ANGLE_DEG} deg gate"
            )));
        }
        // every edge is shared by two triangles or is a single boundary edge
        use std::collections::HashMap;
        let mut count: HashMap<(u32, u32), u32> = HashMap::new();
        for tri in &self.triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                *count.entry(key).or_insert(0) += 1;
            }
        }
        for e in &self.boundary_edges {
            let key = (e.v[0].min(e.v[1]), e.v[0].max(e.v[1]));
            match count.get(&key) {
                Some(1) => {}
                other => {
                    return Err(GeometryError::MeshFailure(format!(
                        "boundary edge shared by {other:?} triangles"
                    )))
                }
            }
        }
        let boundary_keys: std::collections::HashSet<(u32, u32)> = self
            .boundary_edges
            .iter()
            .map(|e| (e.v[0].min(e.v[1]), e.v[0].max(e.v[1])))
            .collect();
        for (key, c) in &count {
            let expect = if boundary_keys.contains(key) { 1 } else { 2 };
            if *c != expect {
                return Err(GeometryError::MeshFailure(format!(
                    "edge {key:?} shared by {c} triangles, expected {expect}"
                )));
            }
        }
        // area consistency against the smooth domain
        let total: f64 = self.tri_area.iter().sum();
        let perimeter: f64 = domain
            .curve_ids()
            .map(|id| domain.curve(id).len())
            .sum::<f64>();
        let tol = 0.5 * self.h * perimeter + 1e-9 * domain.area();
        if (total - domain.area()).abs() > tol {
            return Err(GeometryError::MeshFailure(format!(
                "triangulated area {total} vs domain area {} (tol {tol})",
                domain.area()
            )));
        }
        Ok(())
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn area(&self, tri: usize) -> f64 {
        self.tri_area[tri]
    }

    pub fn total_area(&self) -> f64 {
        self.tri_area.iter().sum()
    }

    /// Gradients of the three vertex hats on triangle `tri`.
    pub fn shape_gradients(&self, tri: usize) -> [Vec2; 3] {
        self.tri_grad[tri]
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn boundary_attach(&self, v: u32) -> Option<BoundaryAttach> {
        self.boundary[v as usize]
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    /// Vertices attached to `curve`, sorted by arclength.
    pub fn boundary_vertices(&self, curve: CurveId) -> Vec<(u32, f64)> {
        let mut out: Vec<(u32, f64)> = self
            .boundary
            .iter()
            .enumerate()
            .filter_map(|(i, a)| match a {
                Some(at) if at.curve == curve => Some((i as u32, at.s)),
                _ => None,
            })
            .collect();
        out.sort_by(|x, y| x.1.partial_cmp(&y.1).unwrap());
        out
    }

    pub fn all_boundary_vertices(&self) -> Vec<u32> {
        self.boundary
            .iter()
            .enumerate()
            .filter_map(|(i, a)| a.map(|_| i as u32))
            .collect()
    }

    /// Piecewise-linear gradient of the vertex field `u` on triangle `tri`.
    /// Difference form so constant fields give the exact zero vector and a
    /// uniform shift leaves the gradient bit-identical.
    pub fn tri_gradient(&self, u: &[f64], tri: usize) -> Vec2 {
        let t = self.triangles[tri];
        let g = self.tri_grad[tri];
        let u0 = u[t[0] as usize];
        g[1] * (u[t[1] as usize] - u0) + g[2] * (u[t[2] as usize] - u0)
    }

    pub fn tri_centroid(&self, tri: usize) -> Vec2 {
        let [a, b, c] = self.triangles[tri].map(|i| self.vertices[i as usize]);
        (a + b + c) * (1.0 / 3.0)
    }

    /// Triangle containing p with its barycentric coordinates, if any.
    pub fn locate(&self, p: Vec2) -> Option<(usize, [f64; 3])> {
        self.locator.locate(p, &self.vertices, &self.triangles)
    }

    /// Interpolated value of the vertex field `u` at p.
    pub fn value_at(&self, u: &[f64], p: Vec2) -> Option<f64> {
        self.locate(p).map(|(tri, l)| {
            let t = self.triangles[tri];
            l[0] * u[t[0] as usize] + l[1] * u[t[1] as usize] + l[2] * u[t[2] as usize]
        })
    }

    pub fn min_angle_deg(&self) -> f64 {
        let mut min_angle = f64::INFINITY;
        for tri in &self.triangles {
            let [a, b, c] = tri.map(|i| self.vertices[i as usize]);
            for (p, q, r) in [(a, b, c), (b, c, a), (c, a, b)] {
                let u = (q - p).normalized();
                let v = (r - p).normalized();
                min_angle = min_angle.min(u.dot(v).clamp(-1.0, 1.0).acos());
            }
        }
        min_angle.to_degrees()
    }

    pub fn max_edge_len(&self) -> f64 {
        let mut m: f64 = 0.0;
        for tri in &self.triangles {
            let [a, b, c] = tri.map(|i| self.vertices[i as usize]);
            m = m.max(a.dist(b)).max(b.dist(c)).max(c.dist(a));
        }
        m
    }
}

/// Uniform-grid point locator over the triangle list.
#[derive(Debug, Clone)]
struct Locator {
    origin: Vec2,
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<u32>>,
}

impl Locator {
    fn empty() -> Locator {
        Locator {
            origin: Vec2::ZERO,
            cell: 1.0,
            nx: 0,
            ny: 0,
            buckets: Vec::new(),
        }
    }

    fn build(vertices: &[Vec2], triangles: &[[u32; 3]], h: f64) -> Locator {
        let mut lo = v2(f64::INFINITY, f64::INFINITY);
        let mut hi = v2(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in vertices {
            lo = v2(lo.x.min(p.x), lo.y.min(p.y));
            hi = v2(hi.x.max(p.x), hi.y.max(p.y));
        }
        let cell = (2.0 * h).max(1e-12);
        let nx = (((hi.x - lo.x) / cell).ceil() as usize + 1).max(1);
        let ny = (((hi.y - lo.y) / cell).ceil() as usize + 1).max(1);
        let mut buckets = vec![Vec::new(); nx * ny];
        for (t, tri) in triangles.iter().enumerate() {
            let [a, b, c] = tri.map(|i| vertices[i as usize]);
            let tx0 = ((a.x.min(b.x).min(c.x) - lo.x) / cell).floor().max(0.0) as usize;
            let tx1 = (((a.x.max(b.x).max(c.x) - lo.x) / cell).floor() as usize).min(nx - 1);
            let ty0 = ((a.y.min(b.y).min(c.y) - lo.y) / cell).floor().max(0.0) as usize;
            let ty1 = (((a.y.max(b.y).max(c.y) - lo.y) / cell).floor() as usize).min(ny - 1);
            for gy in ty0..=ty1 {
                for gx in tx0..=tx1 {
                    buckets[gy * nx + gx].push(t as u32);
                }
            }
        }
        Locator {
            origin: lo,
            cell,
            nx,
            ny,
            buckets,
        }
    }

    fn locate(
        &self,
        p: Vec2,
        vertices: &[Vec2],
        triangles: &[[u32; 3]],
    ) -> Option<(usize, [f64; 3])> {
        if self.buckets.is_empty() {
            return None;
        }
        let gx = ((p.x - self.origin.x) / self.cell).floor();
        let gy = ((p.y - self.origin.y) / self.cell).floor();
        if gx < 0.0 || gy < 0.0 || gx as usize >= self.nx || gy as usize >= self.ny {
            return None;
        }
        let bucket = &self.buckets[gy as usize * self.nx + gx as usize];
        let mut best: Option<(usize, [f64; 3], f64)> = None;
        for &t in bucket {
            let tri = triangles[t as usize];
            let [a, b, c] = tri.map(|i| vertices[i as usize]);
            let twice = (b - a).cross(c - a);
            let l0 = (b - p).cross(c - p) / twice;
            let l1 = (c - p).cross(a - p) / twice;
            let l2 = 1.0 - l0 - l1;
            let worst = l0.min(l1).min(l2);
            match &best {
                Some((_, _, w)) if *w >= worst => {}
                _ => best = Some((t as usize, [l0, l1, l2], worst)),
            }
        }
        // accept small negative coordinates for points on edges
        match best {
            Some((t, l, worst)) if worst > -1e-9 => {
                let clamped = [l[0].max(0.0), l[1].max(0.0), l[2].max(0.0)];
                let sum = clamped[0] + clamped[1] + clamped[2];
                Some((t, [clamped[0] / sum, clamped[1] / sum, clamped[2] / sum]))
            }
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::v2;

    #[test]
    fn disk_mesh_basics() {
        let d = Domain::disk(Vec2::ZERO, 1.0, 64);
        let mesh = Mesh::generate(&d, &MeshOptions::with_h(0.15)).unwrap();
        assert!(mesh.triangle_count() > 100);
        assert!((mesh.total_area() - std::f64::consts::PI).abs() < 0.05);
        assert!(mesh.min_angle_deg() >= 20.0);
        // boundary vertices sit on the spline, which tracks the circle to
        // the interpolation error of 64 nodes
        for v in mesh.all_boundary_vertices() {
            assert!((mesh.vertices()[v as usize].norm() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn annulus_mesh_excludes_hole() {
        let a = Domain::annulus(Vec2::ZERO, 1.0, 0.3, 96, 48);
        let mesh = Mesh::generate(&a, &MeshOptions::with_h(0.1)).unwrap();
        let expect = std::f64::consts::PI * (1.0 - 0.09);
        assert!((mesh.total_area() - expect).abs() < 0.05);
        assert!(mesh.locate(v2(0.0, 0.0)).is_none());
        assert!(mesh.locate(v2(0.6, 0.0)).is_some());
        // both chains present at the sampled resolution (len / h samples)
        assert!(mesh.boundary_vertices(CurveId(0)).len() >= 60);
        assert!(mesh.boundary_vertices(CurveId(1)).len() >= 18);
    }

    #[test]
    fn interpolation_reproduces_linear_fields() {
        let d = Domain::disk(Vec2::ZERO, 1.0, 64);
        let mesh = Mesh::generate(&d, &MeshOptions::with_h(0.2)).unwrap();
        let u: Vec<f64> = mesh
            .vertices()
            .iter()
            .map(|p| 3.0 * p.x - 2.0 * p.y + 0.5)
            .collect();
        for &p in &[v2(0.3, 0.1), v2(-0.5, 0.4), v2(0.0, -0.9)] {
            let v = mesh.value_at(&u, p).unwrap();
            assert!((v - (3.0 * p.x - 2.0 * p.y + 0.5)).abs() < 1e-10);
        }
        // gradients are exact per triangle
        for t in 0..mesh.triangle_count() {
            let g = mesh.tri_gradient(&u, t);
            assert!(g.dist(v2(3.0, -2.0)) < 1e-9);
        }
    }

    #[test]
    fn boundary_edges_traverse_each_curve_once() {
        let a = Domain::annulus(Vec2::ZERO, 1.0, 0.3, 96, 48);
        let mesh = Mesh::generate(&a, &MeshOptions::with_h(0.12)).unwrap();
        for id in a.curve_ids() {
            let c = a.curve(id);
            let total: f64 = mesh
                .boundary_edges()
                .iter()
                .filter(|e| e.curve == id)
                .map(|e| crate::geom::wrap_periodic(e.s[1] - e.s[0], c.len()))
                .sum();
            assert!(
                (total - c.len()).abs() < 1e-6 * c.len(),
                "curve {} arc sum {} vs {}",
                id.0,
                total,
                c.len()
            );
        }
    }

    #[test]
    fn graded_mesh_is_finer_near_boundary() {
        let d = Domain::disk(Vec2::ZERO, 1.0, 64);
        let mut opt = MeshOptions::with_h(0.2);
        opt.grading = Some(CollarGrading {
            width: 0.3,
            levels: 3,
        });
        let graded = Mesh::generate(&d, &opt).unwrap();
        let plain = Mesh::generate(&d, &MeshOptions::with_h(0.2)).unwrap();
        assert!(graded.vertex_count() > plain.vertex_count());
    }
}
