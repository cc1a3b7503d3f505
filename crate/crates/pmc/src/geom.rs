//! Small fixed-size vector and matrix types used throughout the crate.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

/// 2-D point / vector.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

pub const fn v2(x: f64, y: f64) -> Vec2 {
    Vec2 { x, y }
}

impl Vec2 {
    pub const ZERO: Vec2 = v2(0.0, 0.0);

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3-D cross product.
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm2(self) -> f64 {
        self.dot(self)
    }

    pub fn dist(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        v2(self.x / n, self.y / n)
    }

    /// Counterclockwise rotation by 90 degrees.
    pub fn perp(self) -> Vec2 {
        v2(-self.y, self.x)
    }

    pub fn lerp(self, o: Vec2, t: f64) -> Vec2 {
        self + (o - self) * t
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        v2(self.x + o.x, self.y + o.y)
    }
}
impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        v2(self.x - o.x, self.y - o.y)
    }
}
impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        v2(self.x * s, self.y * s)
    }
}
impl Div<f64> for Vec2 {
    type Output = Vec2;
    fn div(self, s: f64) -> Vec2 {
        v2(self.x / s, self.y / s)
    }
}
impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        v2(-self.x, -self.y)
    }
}
impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        *self = *self + o;
    }
}
impl SubAssign for Vec2 {
    fn sub_assign(&mut self, o: Vec2) {
        *self = *self - o;
    }
}

/// 3-D point / vector (graphs live in R^3).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

pub const fn v3(x: f64, y: f64, z: f64) -> Vec3 {
    Vec3 { x, y, z }
}

impl Vec3 {
    pub const ZERO: Vec3 = v3(0.0, 0.0, 0.0);

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        v3(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dist(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        v3(self.x / n, self.y / n, self.z / n)
    }

    pub fn xy(self) -> Vec2 {
        v2(self.x, self.y)
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        v3(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}
impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        v3(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}
impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        v3(self.x * s, self.y * s, self.z * s)
    }
}
impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        v3(self.x / s, self.y / s, self.z / s)
    }
}
impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        v3(-self.x, -self.y, -self.z)
    }
}

/// 2x2 matrix, column-major: `Mat2 { a: col0, b: col1 }`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2 {
    pub a: Vec2,
    pub b: Vec2,
}

impl Mat2 {
    pub fn from_cols(a: Vec2, b: Vec2) -> Mat2 {
        Mat2 { a, b }
    }

    pub fn det(self) -> f64 {
        self.a.cross(self.b)
    }

    pub fn mul_vec(self, v: Vec2) -> Vec2 {
        self.a * v.x + self.b * v.y
    }

    pub fn inverse(self) -> Mat2 {
        let d = self.det();
        Mat2 {
            a: v2(self.b.y / d, -self.a.y / d),
            b: v2(-self.b.x / d, self.a.x / d),
        }
    }
}

/// Smooth step: 0 for t <= 0, 1 for t >= 1, C^1 cubic blend in between.
pub fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Quintic step: C^2 blend, monotone, 0 at 0 and 1 at 1.
pub fn smootherstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// Wrap a periodic coordinate into (-period/2, period/2].
pub fn wrap_centered(x: f64, period: f64) -> f64 {
    let mut r = x % period;
    if r > 0.5 * period {
        r -= period;
    } else if r <= -0.5 * period {
        r += period;
    }
    r
}

/// Wrap a periodic coordinate into [0, period).
pub fn wrap_periodic(x: f64, period: f64) -> f64 {
    let mut r = x % period;
    if r < 0.0 {
        r += period;
    }
    // r + period can round up to period itself for tiny negative x
    if r >= period {
        0.0
    } else {
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perp_is_ccw_quarter_turn() {
        let t = v2(1.0, 0.0);
        assert_eq!(t.perp(), v2(0.0, 1.0));
        assert!((t.cross(t.perp()) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mat2_inverse_roundtrip() {
        let m = Mat2::from_cols(v2(2.0, 0.3), v2(-0.5, 1.7));
        let v = v2(0.7, -1.2);
        let w = m.inverse().mul_vec(m.mul_vec(v));
        assert!(w.dist(v) < 1e-14);
    }

    #[test]
    fn wrap_centered_range() {
        let p = 2.0;
        for k in -8..8 {
            let x = 0.3 + 1.7 * k as f64;
            let w = wrap_centered(x, p);
            assert!(w > -1.0 - 1e-12 && w <= 1.0 + 1e-12);
            assert!(((x - w) / p).round() * p + w - x < 1e-12);
        }
    }

    #[test]
    fn wrap_periodic_half_open_at_seam() {
        // tiny negative inputs round onto the period; the result must
        // stay strictly below it
        let p = 6.2820639017810125_f64;
        for x in [-4.4e-16, -1e-300, -0.0, 0.0, p, -p, 2.0 * p] {
            let w = wrap_periodic(x, p);
            assert!((0.0..p).contains(&w), "x={x:e} w={w:e}");
        }
        assert_eq!(wrap_periodic(-4.4e-16, p), 0.0);
    }

    #[test]
    fn steps_are_monotone_and_clamped() {
        assert_eq!(smoothstep(-1.0), 0.0);
        assert_eq!(smoothstep(2.0), 1.0);
        let mut prev = -1.0;
        for i in 0..=100 {
            let v = smootherstep(i as f64 / 100.0);
            assert!(v >= prev);
            prev = v;
        }
    }
}
