//! Closed periodic C^2 cubic spline through a node polygon, reparametrized
//! by arclength, with nearest-point queries.

use crate::geom::{v2, wrap_periodic, Vec2};
use crate::linalg::solve_cyclic_tridiagonal;
use crate::quad;

/// Arclength sub-table entries per spline segment.
const ARCLEN_SUBDIV: usize = 8;
/// Gauss points per sub-table interval.
const ARCLEN_GL: usize = 8;
/// Tail integrals span at most one sub-interval; a short rule suffices.
const ARCLEN_TAIL_GL: usize = 4;
/// Dense samples per segment seeding nearest-point searches.
const NEAREST_SAMPLES_PER_SEG: usize = 8;
/// Newton tolerance for nearest-point and arclength inversion, relative to
/// curve scale.
const PARAM_TOL: f64 = 1e-14;

/// Closed cubic spline through `p[0..n]` (period n in knot space), C^2
/// by construction (periodic natural spline, chord-length knots).
#[derive(Debug, Clone)]
pub struct SplineCurve {
    p: Vec<Vec2>,
    /// knot parameters t_0 = 0 < t_1 < ... < t_{n-1}; period t_n
    t: Vec<f64>,
    period: f64,
    /// second derivatives at knots (periodic)
    m: Vec<Vec2>,
    /// cumulative arclength at knots; s_knot[n] = total length
    s_knot: Vec<f64>,
    /// arclength sub-table: ts strictly increasing knot parameters with
    /// ARCLEN_SUBDIV entries per segment, ss the cumulative arclengths
    ts: Vec<f64>,
    ss: Vec<f64>,
    /// dense (t, point) samples for nearest-point seeding
    samples: Vec<(f64, Vec2)>,
    scale: f64,
}

impl SplineCurve {
    /// `nodes` are distinct points of a closed polygon (no repeated closing
    /// node). Panics if fewer than 3 nodes.
    pub fn new(nodes: &[Vec2]) -> SplineCurve {
        let n = nodes.len();
        assert!(n >= 3, "spline needs at least 3 distinct nodes");
        let mut t = vec![0.0; n];
        for i in 1..n {
            t[i] = t[i - 1] + nodes[i].dist(nodes[i - 1]);
        }
        let period = t[n - 1] + nodes[0].dist(nodes[n - 1]);
        let m = periodic_second_derivatives(nodes, &t, period);
        let mut c = SplineCurve {
            p: nodes.to_vec(),
            t,
            period,
            m,
            s_knot: Vec::new(),
            ts: Vec::new(),
            ss: Vec::new(),
            samples: Vec::new(),
            scale: 0.0,
        };
        c.scale = {
            let (mut lo, mut hi) = (nodes[0], nodes[0]);
            for q in nodes {
                lo = v2(lo.x.min(q.x), lo.y.min(q.y));
                hi = v2(hi.x.max(q.x), hi.y.max(q.y));
            }
            (hi - lo).norm().max(1e-300)
        };
        c.build_tables();
        c
    }

    fn build_tables(&mut self) {
        let n = self.p.len();
        let mut ts = Vec::with_capacity(n * ARCLEN_SUBDIV + 1);
        let mut ss = Vec::with_capacity(n * ARCLEN_SUBDIV + 1);
        ts.push(0.0);
        ss.push(0.0);
        for i in 0..n {
            let (a, b) = (self.knot(i), self.knot(i + 1));
            for m in 1..=ARCLEN_SUBDIV {
                let t0 = a + (b - a) * ((m - 1) as f64) / (ARCLEN_SUBDIV as f64);
                let t1 = a + (b - a) * (m as f64) / (ARCLEN_SUBDIV as f64);
                let ds = quad::integrate(t0, t1, ARCLEN_GL, |t| self.d1(t).norm());
                ts.push(t1);
                ss.push(ss.last().unwrap() + ds);
            }
        }
        let mut s = vec![0.0; n + 1];
        for (i, si) in s.iter_mut().enumerate() {
            *si = ss[i * ARCLEN_SUBDIV];
        }
        self.s_knot = s;
        self.ts = ts;
        self.ss = ss;
        let mut samples = Vec::with_capacity(n * NEAREST_SAMPLES_PER_SEG);
        for i in 0..n {
            let (a, b) = (self.knot(i), self.knot(i + 1));
            for j in 0..NEAREST_SAMPLES_PER_SEG {
                let t = a + (b - a) * (j as f64) / (NEAREST_SAMPLES_PER_SEG as f64);
                samples.push((t, self.eval(t)));
            }
        }
        self.samples = samples;
    }

    fn knot(&self, i: usize) -> f64 {
        if i < self.t.len() {
            self.t[i]
        } else {
            self.period
        }
    }

    pub fn node_count(&self) -> usize {
        self.p.len()
    }

    pub fn nodes(&self) -> &[Vec2] {
        &self.p
    }

    pub fn total_len(&self) -> f64 {
        self.s_knot[self.p.len()]
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Arclength at knot i.
    pub fn arclength_at_node(&self, i: usize) -> f64 {
        self.s_knot[i]
    }

    fn segment_of(&self, t: f64) -> usize {
        let t = wrap_periodic(t, self.period);
        // binary search over knots
        match self
            .t
            .binary_search_by(|k| k.partial_cmp(&t).unwrap())
        {
            Ok(i) => i,
            Err(i) => i - 1,
        }
    }

    /// Position at knot parameter t (periodic).
    pub fn eval(&self, t: f64) -> Vec2 {
        let tw = wrap_periodic(t, self.period);
        let i = self.segment_of(tw);
        let (t0, t1) = (self.knot(i), self.knot(i + 1));
        let h = t1 - t0;
        let j = (i + 1) % self.p.len();
        let (a, b) = (t1 - tw, tw - t0);
        let (p0, p1, m0, m1) = (self.p[i], self.p[j], self.m[i], self.m[j]);
        m0 * (a * a * a / (6.0 * h))
            + m1 * (b * b * b / (6.0 * h))
            + (p0 / h - m0 * (h / 6.0)) * a
            + (p1 / h - m1 * (h / 6.0)) * b
    }

    /// First derivative with respect to the knot parameter.
    pub fn d1(&self, t: f64) -> Vec2 {
        let tw = wrap_periodic(t, self.period);
        let i = self.segment_of(tw);
        let (t0, t1) = (self.knot(i), self.knot(i + 1));
        let h = t1 - t0;
        let j = (i + 1) % self.p.len();
        let (a, b) = (t1 - tw, tw - t0);
        let (p0, p1, m0, m1) = (self.p[i], self.p[j], self.m[i], self.m[j]);
        m0 * (-a * a / (2.0 * h))
            + m1 * (b * b / (2.0 * h))
            + (p1 - p0) / h
            + (m0 - m1) * (h / 6.0)
    }

    /// Second derivative with respect to the knot parameter (continuous).
    pub fn d2(&self, t: f64) -> Vec2 {
        let tw = wrap_periodic(t, self.period);
        let i = self.segment_of(tw);
        let (t0, t1) = (self.knot(i), self.knot(i + 1));
        let h = t1 - t0;
        let j = (i + 1) % self.p.len();
        let (a, b) = (t1 - tw, tw - t0);
        self.m[i] * (a / h) + self.m[j] * (b / h)
    }

    /// Knot parameter at arclength s (periodic). Table lookup plus a few
    /// Newton steps within one sub-interval.
    pub fn t_of_s(&self, s: f64) -> f64 {
        let total = self.total_len();
        let sw = wrap_periodic(s, total);
        let k = match self.ss.binary_search_by(|v| v.partial_cmp(&sw).unwrap()) {
            Ok(k) => k,
            Err(k) => k - 1,
        };
        let k = k.min(self.ss.len() - 2);
        let (ta, tb) = (self.ts[k], self.ts[k + 1]);
        let (sa, sb) = (self.ss[k], self.ss[k + 1]);
        let mut lo = ta;
        let mut hi = tb;
        let mut t = ta + (tb - ta) * (sw - sa) / (sb - sa);
        for _ in 0..8 {
            let f = sa + quad::integrate(ta, t, ARCLEN_TAIL_GL, |u| self.d1(u).norm()) - sw;
            if f > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
            let df = self.d1(t).norm();
            let mut tn = t - f / df;
            if !(tn > lo && tn < hi) {
                tn = 0.5 * (lo + hi);
            }
            if (tn - t).abs() < PARAM_TOL * self.period {
                return tn;
            }
            t = tn;
        }
        t
    }

    /// Arclength at knot parameter t (wrapped to [0, total)).
    pub fn s_of_t(&self, t: f64) -> f64 {
        let tw = wrap_periodic(t, self.period);
        let k = match self.ts.binary_search_by(|v| v.partial_cmp(&tw).unwrap()) {
            Ok(k) => k,
            Err(k) => k - 1,
        };
        let k = k.min(self.ts.len() - 2);
        self.ss[k] + quad::integrate(self.ts[k], tw, ARCLEN_TAIL_GL, |u| self.d1(u).norm())
    }

    pub fn pos_s(&self, s: f64) -> Vec2 {
        self.eval(self.t_of_s(s))
    }

    /// Unit tangent at arclength s, in traversal direction.
    pub fn tangent_s(&self, s: f64) -> Vec2 {
        self.d1(self.t_of_s(s)).normalized()
    }

    /// Signed curvature at arclength s w.r.t. the stored traversal.
    pub fn curvature_s(&self, s: f64) -> f64 {
        self.curvature_t(self.t_of_s(s))
    }

    pub fn curvature_t(&self, t: f64) -> f64 {
        let d1 = self.d1(t);
        let d2 = self.d2(t);
        d1.cross(d2) / d1.norm().powi(3)
    }

    /// Nearest point on the curve: returns (t, s, distance).
    pub fn nearest(&self, p: Vec2) -> (f64, f64, f64) {
        // two-level seed scan: one sample per segment first, then the fine
        // samples around the winner; a second coarse winner from another
        // basin is polished too when it is competitive, so medial-axis
        // ties resolve to the true minimum
        let n = self.samples.len();
        let c = NEAREST_SAMPLES_PER_SEG;
        let mut b0 = (f64::INFINITY, 0usize); // (dist2, index)
        let mut b1 = (f64::INFINITY, 0usize); // best coarse in another basin
        for i in (0..n).step_by(c) {
            let d2 = (self.samples[i].1 - p).norm2();
            if d2 < b0.0 {
                b0 = (d2, i);
            }
        }
        for i in (0..n).step_by(c) {
            let gap = (i + n - b0.1) % n;
            if gap.min(n - gap) <= 2 * c {
                continue;
            }
            let d2 = (self.samples[i].1 - p).norm2();
            if d2 < b1.0 {
                b1 = (d2, i);
            }
        }
        let refine = |i0: usize| -> usize {
            let mut best = (f64::INFINITY, i0);
            for k in 0..=2 * c {
                let i = (i0 + n + k - c) % n;
                let d2 = (self.samples[i].1 - p).norm2();
                if d2 < best.0 {
                    best = (d2, i);
                }
            }
            best.1
        };
        let polish = |i: usize| -> (f64, f64) {
            let t = self.polish_nearest(p, self.samples[i].0);
            ((self.eval(t) - p).norm(), t)
        };
        let mut out = polish(refine(b0.1));
        // coarse distances miss the segment interior; 1.5 is a safe margin
        if b1.0 < 1.5 * b0.0 {
            let cand = polish(refine(b1.1));
            if cand.0 < out.0 {
                out = cand;
            }
        }
        let (d, t) = out;
        (t, self.s_of_t(t), d)
    }

    fn polish_nearest(&self, p: Vec2, t0: f64) -> f64 {
        // minimize |gamma(t) - p|^2: solve g(t) = (gamma - p) . gamma' = 0
        let step = self.period / (self.samples.len() as f64);
        let mut lo = t0 - 1.5 * step;
        let mut hi = t0 + 1.5 * step;
        let glo = (self.eval(lo) - p).dot(self.d1(lo));
        let ghi = (self.eval(hi) - p).dot(self.d1(hi));
        let bracketed = glo < 0.0 && ghi > 0.0;
        let mut t = t0;
        for _ in 0..80 {
            let e = self.eval(t) - p;
            let d1 = self.d1(t);
            let g = e.dot(d1);
            let dg = d1.norm2() + e.dot(self.d2(t));
            if bracketed {
                if g > 0.0 {
                    hi = t;
                } else {
                    lo = t;
                }
            }
            let mut tn = if dg.abs() > 0.0 { t - g / dg } else { t };
            if bracketed && !(tn > lo && tn < hi) {
                tn = 0.5 * (lo + hi);
            }
            if (tn - t).abs() < PARAM_TOL * self.period {
                return tn;
            }
            t = tn;
        }
        t
    }
}

fn periodic_second_derivatives(p: &[Vec2], t: &[f64], period: f64) -> Vec<Vec2> {
    let n = p.len();
    let h = |i: usize| -> f64 {
        if i + 1 < n {
            t[i + 1] - t[i]
        } else {
            period - t[n - 1]
        }
    };
    let hp = |i: usize| -> f64 {
        // h_{i-1} with wraparound
        if i == 0 {
            h(n - 1)
        } else {
            h(i - 1)
        }
    };
    let mut sub = vec![0.0; n];
    let mut main = vec![0.0; n];
    let mut sup = vec![0.0; n];
    let mut rx = vec![0.0; n];
    let mut ry = vec![0.0; n];
    for i in 0..n {
        let prev = (i + n - 1) % n;
        let next = (i + 1) % n;
        sub[i] = hp(i) / 6.0; // for i=0 this is the wrap entry (0, n-1)
        main[i] = (hp(i) + h(i)) / 3.0;
        sup[i] = h(i) / 6.0; // for i=n-1 this is the wrap entry (n-1, 0)
        let d_next = (p[next] - p[i]) / h(i);
        let d_prev = (p[i] - p[prev]) / hp(i);
        rx[i] = d_next.x - d_prev.x;
        ry[i] = d_next.y - d_prev.y;
    }
    let mx = solve_cyclic_tridiagonal(&sub, &main, &sup, &rx);
    let my = solve_cyclic_tridiagonal(&sub, &main, &sup, &ry);
    mx.into_iter().zip(my).map(|(x, y)| v2(x, y)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn circle_nodes(r: f64, n: usize) -> Vec<Vec2> {
        (0..n)
            .map(|i| {
                let a = 2.0 * PI * (i as f64) / (n as f64);
                v2(r * a.cos(), r * a.sin())
            })
            .collect()
    }

    #[test]
    fn circle_length_and_positions() {
        let c = SplineCurve::new(&circle_nodes(1.0, 64));
        assert!((c.total_len() - 2.0 * PI).abs() < 1e-5);
        // interpolates nodes
        for (i, q) in circle_nodes(1.0, 64).iter().enumerate() {
            assert!(c.eval(c.t[i]).dist(*q) < 1e-14);
        }
        // mid-segment points stay near the circle
        for i in 0..200 {
            let s = c.total_len() * (i as f64) / 200.0;
            let r = c.pos_s(s).norm();
            assert!((r - 1.0).abs() < 1e-6, "r={r}");
        }
    }

    #[test]
    fn circle_curvature_continuous_and_correct() {
        let c = SplineCurve::new(&circle_nodes(2.0, 96));
        for i in 0..300 {
            let s = c.total_len() * (i as f64) / 300.0;
            let k = c.curvature_s(s);
            // curvature of the interpolant matches to O(h^2)
            assert!((k - 0.5).abs() < 5e-4, "k={k} at s={s}");
        }
        // continuity across a knot
        let t_knot = c.t[10];
        let a = c.curvature_t(t_knot - 1e-9);
        let b = c.curvature_t(t_knot + 1e-9);
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn arclength_inversion_roundtrip() {
        let c = SplineCurve::new(&circle_nodes(1.5, 40));
        for i in 0..97 {
            let s = c.total_len() * (i as f64) / 97.0;
            let t = c.t_of_s(s);
            let s2 = c.s_of_t(t);
            assert!((s - s2).abs() < 1e-10 * c.total_len());
        }
    }

    #[test]
    fn nearest_point_on_circle() {
        let c = SplineCurve::new(&circle_nodes(1.0, 64));
        for (px, py, want_d) in [(0.5, 0.0, 0.5), (0.0, 1.7, 0.7), (-0.3, -0.4, 0.5)] {
            let (_, _, d) = c.nearest(v2(px, py));
            assert!((d - want_d).abs() < 2e-6, "d={d} want={want_d}");
        }
        // nearest point is radial, up to the spline's deviation from the arc
        let (t, _, _) = c.nearest(v2(0.3, 0.2));
        let q = c.eval(t);
        let dir = q.normalized();
        let want = v2(0.3, 0.2).normalized();
        assert!(dir.dist(want) < 1e-4);
    }

    #[test]
    fn tangent_is_unit() {
        let c = SplineCurve::new(&circle_nodes(0.7, 32));
        for i in 0..50 {
            let s = c.total_len() * (i as f64) / 50.0;
            assert!((c.tangent_s(s).norm() - 1.0).abs() < 1e-12);
        }
    }
}
