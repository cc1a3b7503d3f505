//! Sparse symmetric linear algebra: CSR matrices, preconditioned conjugate
//! gradients, and the cyclic tridiagonal solver used by periodic splines.
//!
//! The Newton systems assembled in this crate are symmetric positive
//! definite (the discrete functional is convex), so CG with an SSOR
//! preconditioner is sufficient and keeps every reduction in a fixed order.

use crate::exec::{self, Mode};

/// Compressed sparse row matrix. Assumed structurally symmetric.
#[derive(Debug, Clone)]
pub struct Csr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col: Vec<u32>,
    pub val: Vec<f64>,
}

impl Csr {
    /// Build from unsorted (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(n: usize, triplets: &mut Vec<(u32, u32, f64)>) -> Csr {
        triplets.sort_unstable_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col = Vec::with_capacity(triplets.len());
        let mut val = Vec::with_capacity(triplets.len());
        let mut last: Option<(u32, u32)> = None;
        for &(r, c, v) in triplets.iter() {
            if last == Some((r, c)) {
                *val.last_mut().unwrap() += v;
            } else {
                col.push(c);
                val.push(v);
                row_ptr[r as usize + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Csr {
            n,
            row_ptr,
            col,
            val,
        }
    }

    pub fn mul_vec(&self, x: &[f64], mode: Mode) -> Vec<f64> {
        exec::map_indexed(mode, self.n, |i| {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.val[k] * x[self.col[k] as usize];
            }
            acc
        })
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.col[k] as usize == i {
                    d[i] = self.val[k];
                }
            }
        }
        d
    }
}

/// SSOR preconditioner application: z = (D/w + L)^-T D/w (D/w + L)^-1 r
/// with relaxation w. Sequential triangular sweeps (deterministic).
struct Ssor<'a> {
    a: &'a Csr,
    diag: Vec<f64>,
    omega: f64,
}

impl<'a> Ssor<'a> {
    fn new(a: &'a Csr, omega: f64) -> Self {
        Ssor {
            diag: a.diagonal(),
            a,
            omega,
        }
    }

    fn apply(&self, r: &[f64]) -> Vec<f64> {
        let a = self.a;
        let w = self.omega;
        let mut z = vec![0.0; a.n];
        // forward sweep: (D/w + L) y = r
        for i in 0..a.n {
            let mut s = r[i];
            for k in a.row_ptr[i]..a.row_ptr[i + 1] {
                let j = a.col[k] as usize;
                if j < i {
                    s -= a.val[k] * z[j];
                }
            }
            z[i] = s * w / self.diag[i];
        }
        // scale by D/w
        for i in 0..a.n {
            z[i] *= self.diag[i] / w;
        }
        // backward sweep: (D/w + U) z = y
        for i in (0..a.n).rev() {
            let mut s = z[i];
            for k in a.row_ptr[i]..a.row_ptr[i + 1] {
                let j = a.col[k] as usize;
                if j > i {
                    s -= a.val[k] * z[j];
                }
            }
            z[i] = s * w / self.diag[i];
        }
        z
    }
}

#[derive(Debug, Clone)]
pub struct CgReport {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Preconditioned CG for SPD systems. Converges to relative residual `tol`.
pub fn solve_cg(a: &Csr, b: &[f64], x0: Option<&[f64]>, tol: f64, mode: Mode) -> (Vec<f64>, CgReport) {
    const SSOR_OMEGA: f64 = 1.5;
    let n = a.n;
    let max_iter = 40 * n + 200;
    let pc = Ssor::new(a, SSOR_OMEGA);
    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    let ax = a.mul_vec(&x, mode);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let bnorm = exec::sum_indexed(mode, n, |i| b[i] * b[i]).sqrt().max(1e-300);
    let mut z = pc.apply(&r);
    let mut p = z.clone();
    let mut rz = exec::sum_indexed(mode, n, |i| r[i] * z[i]);
    let mut rnorm = exec::sum_indexed(mode, n, |i| r[i] * r[i]).sqrt();
    let mut iterations = 0;
    while rnorm > tol * bnorm && iterations < max_iter {
        let ap = a.mul_vec(&p, mode);
        let pap = exec::sum_indexed(mode, n, |i| p[i] * ap[i]);
        if pap <= 0.0 {
            break; // loss of positive definiteness: report non-convergence
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        z = pc.apply(&r);
        let rz_new = exec::sum_indexed(mode, n, |i| r[i] * z[i]);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rnorm = exec::sum_indexed(mode, n, |i| r[i] * r[i]).sqrt();
        iterations += 1;
    }
    let converged = rnorm <= tol * bnorm;
    (
        x,
        CgReport {
            iterations,
            residual: rnorm / bnorm,
            converged,
        },
    )
}

/// Solve a cyclic tridiagonal system with sub/main/super diagonals
/// (a, b, c) and wrap-around entries a[0] (row 0, col n-1) and c[n-1]
/// (row n-1, col 0), via the Sherman-Morrison correction.
pub fn solve_cyclic_tridiagonal(a: &[f64], b: &[f64], c: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = b.len();
    assert!(n >= 3);
    let gamma = -b[0];
    let mut bb = b.to_vec();
    bb[0] = b[0] - gamma;
    bb[n - 1] = b[n - 1] - a[0] * c[n - 1] / gamma;
    let x = solve_tridiagonal(a, &bb, c, rhs);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = c[n - 1];
    let z = solve_tridiagonal(a, &bb, c, &u);
    let vx = x[0] + a[0] * x[n - 1] / gamma;
    let vz = 1.0 + z[0] + a[0] * z[n - 1] / gamma;
    let factor = vx / vz;
    x.iter().zip(&z).map(|(xi, zi)| xi - factor * zi).collect()
}

/// Thomas algorithm; `a[i]` is the subdiagonal entry of row i (a[0] unused).
pub fn solve_tridiagonal(a: &[f64], b: &[f64], c: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    cp[0] = c[0] / b[0];
    dp[0] = rhs[0] / b[0];
    for i in 1..n {
        let m = b[i] - a[i] * cp[i - 1];
        cp[i] = if i + 1 < n { c[i] / m } else { 0.0 };
        dp[i] = (rhs[i] - a[i] * dp[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = dp[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = dp[i] - cp[i] * x[i + 1];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize) -> Csr {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i as u32, i as u32, 2.0));
            if i > 0 {
                t.push((i as u32, (i - 1) as u32, -1.0));
            }
            if i + 1 < n {
                t.push((i as u32, (i + 1) as u32, -1.0));
            }
        }
        Csr::from_triplets(n, &mut t)
    }

    #[test]
    fn csr_sums_duplicates() {
        let mut t = vec![(0, 0, 1.0), (0, 0, 2.5), (1, 0, 1.0), (1, 1, 4.0)];
        let a = Csr::from_triplets(2, &mut t);
        assert_eq!(a.diagonal(), vec![3.5, 4.0]);
        let y = a.mul_vec(&[1.0, 1.0], Mode::Sequential);
        assert_eq!(y, vec![3.5, 5.0]);
    }

    #[test]
    fn cg_solves_laplacian() {
        let n = 500;
        let a = laplacian_1d(n);
        let xstar: Vec<f64> = (0..n).map(|i| ((i as f64) * 0.01).sin()).collect();
        let b = a.mul_vec(&xstar, Mode::Sequential);
        let (x, rep) = solve_cg(&a, &b, None, 1e-12, Mode::Sequential);
        assert!(rep.converged, "{rep:?}");
        let err = x
            .iter()
            .zip(&xstar)
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-8, "err={err}");
    }

    #[test]
    fn cg_modes_bitwise_identical() {
        let n = 300;
        let a = laplacian_1d(n);
        let b: Vec<f64> = (0..n).map(|i| ((i * 7 % 13) as f64) - 6.0).collect();
        let (xs, _) = solve_cg(&a, &b, None, 1e-13, Mode::Sequential);
        let (xp, _) = solve_cg(&a, &b, None, 1e-13, Mode::Parallel);
        for (p, q) in xs.iter().zip(&xp) {
            assert_eq!(p.to_bits(), q.to_bits());
        }
    }

    #[test]
    fn cyclic_tridiagonal_matches_dense() {
        let n = 7;
        let a = [0.5, 1.0, 0.3, 0.8, 0.2, 0.9, 0.4]; // a[0] is the (0, n-1) wrap entry
        let b = [4.0, 5.0, 4.5, 6.0, 4.2, 5.5, 4.8];
        let c = [1.1, 0.7, 0.9, 0.4, 1.0, 0.6, 0.8]; // c[n-1] is the (n-1, 0) wrap entry
        let xstar: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).cos()).collect();
        // rhs = A xstar with the cyclic structure
        let mut rhs = vec![0.0; n];
        for i in 0..n {
            rhs[i] += b[i] * xstar[i];
            if i > 0 {
                rhs[i] += a[i] * xstar[i - 1];
            }
            if i + 1 < n {
                rhs[i] += c[i] * xstar[i + 1];
            }
        }
        rhs[0] += a[0] * xstar[n - 1];
        rhs[n - 1] += c[n - 1] * xstar[0];
        let x = solve_cyclic_tridiagonal(&a, &b, &c, &rhs);
        for (p, q) in x.iter().zip(&xstar) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}
