//! Small 2D vector/matrix types shared by the mesh, FEM and field modules.

use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Vec2<R> {
    pub x: R,
    pub y: R,
}

pub fn v2<R: Real>(x: R, y: R) -> Vec2<R> {
    Vec2 { x, y }
}

impl<R: Real> Vec2<R> {
    pub const fn new(x: R, y: R) -> Self {
        Vec2 { x, y }
    }
    pub fn zero() -> Self {
        Vec2 {
            x: R::zero(),
            y: R::zero(),
        }
    }
    pub fn dot(self, o: Self) -> R {
        self.x * o.x + self.y * o.y
    }
    /// z-component of the 3D cross product of the embedded vectors.
    pub fn cross(self, o: Self) -> R {
        self.x * o.y - self.y * o.x
    }
    pub fn norm2(self) -> R {
        self.dot(self)
    }
    pub fn norm(self) -> R {
        self.norm2().sqrt()
    }
    /// Counter-clockwise rotation by pi/2.
    pub fn perp(self) -> Self {
        Vec2 {
            x: -self.y,
            y: self.x,
        }
    }
    pub fn scale(self, s: R) -> Self {
        Vec2 {
            x: self.x * s,
            y: self.y * s,
        }
    }
}

impl<R: Real> std::ops::Add for Vec2<R> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Vec2 {
            x: self.x + o.x,
            y: self.y + o.y,
        }
    }
}

impl<R: Real> std::ops::Sub for Vec2<R> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Vec2 {
            x: self.x - o.x,
            y: self.y - o.y,
        }
    }
}

impl<R: Real> std::ops::Neg for Vec2<R> {
    type Output = Self;
    fn neg(self) -> Self {
        Vec2 {
            x: -self.x,
            y: -self.y,
        }
    }
}

/// Symmetric 2x2 matrix stored as the three independent components.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Sym2<R> {
    pub a11: R,
    pub a12: R,
    pub a22: R,
}

impl<R: Real> Sym2<R> {
    pub const fn new(a11: R, a12: R, a22: R) -> Self {
        Sym2 { a11, a12, a22 }
    }
    pub fn identity() -> Self {
        Sym2 {
            a11: R::one(),
            a12: R::zero(),
            a22: R::one(),
        }
    }
    pub fn diag(a: R, b: R) -> Self {
        Sym2 {
            a11: a,
            a12: R::zero(),
            a22: b,
        }
    }
    pub fn iso(c: R) -> Self {
        Self::diag(c, c)
    }
    pub fn zero() -> Self {
        Sym2 {
            a11: R::zero(),
            a12: R::zero(),
            a22: R::zero(),
        }
    }
    pub fn det(self) -> R {
        self.a11 * self.a22 - self.a12 * self.a12
    }
    pub fn trace(self) -> R {
        self.a11 + self.a22
    }
    pub fn apply(self, v: Vec2<R>) -> Vec2<R> {
        Vec2 {
            x: self.a11 * v.x + self.a12 * v.y,
            y: self.a12 * v.x + self.a22 * v.y,
        }
    }
    /// Eigenvalues sorted ascending.
    pub fn eigenvalues(self) -> (R, R) {
        let m = (self.a11 + self.a22) * R::HALF;
        let d = (self.a11 - self.a22) * R::HALF;
        let r = (d * d + self.a12 * self.a12).sqrt();
        (m - r, m + r)
    }
    /// Unit eigenvector for the largest eigenvalue.
    pub fn max_eigenvector(self) -> Vec2<R> {
        let (_, lmax) = self.eigenvalues();
        // Pick the more numerically robust of the two defining rows.
        let r1 = Vec2::new(self.a11 - lmax, self.a12);
        let r2 = Vec2::new(self.a12, self.a22 - lmax);
        let v = if r1.norm2() > r2.norm2() {
            r1.perp()
        } else {
            r2.perp()
        };
        let n = v.norm();
        if n == R::zero() {
            Vec2::new(R::one(), R::zero())
        } else {
            v.scale(R::one() / n)
        }
    }
    pub fn add(self, o: Self) -> Self {
        Sym2 {
            a11: self.a11 + o.a11,
            a12: self.a12 + o.a12,
            a22: self.a22 + o.a22,
        }
    }
    pub fn sub(self, o: Self) -> Self {
        Sym2 {
            a11: self.a11 - o.a11,
            a12: self.a12 - o.a12,
            a22: self.a22 - o.a22,
        }
    }
    pub fn scale(self, s: R) -> Self {
        Sym2 {
            a11: self.a11 * s,
            a12: self.a12 * s,
            a22: self.a22 * s,
        }
    }
    /// Conjugation R M R^T by the pi/2 rotation (jshdkjhewkehj-style constant).
    ///
    /// For the rotation R = [[0,-1],[1,0]] this swaps the diagonal entries and
    /// negates the off-diagonal one.
    pub fn rotate_pi2(self) -> Self {
        Sym2 {
            a11: self.a22,
            a12: -self.a12,
            a22: self.a11,
        }
    }
}

/// General 2x2 matrix (column-major semantics: columns are images of e1, e2).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat2<R> {
    pub a: R, // (1,1)
    pub b: R, // (1,2)
    pub c: R, // (2,1)
    pub d: R, // (2,2)
}

impl<R: Real> Mat2<R> {
    pub fn from_cols(c1: Vec2<R>, c2: Vec2<R>) -> Self {
        Mat2 {
            a: c1.x,
            b: c2.x,
            c: c1.y,
            d: c2.y,
        }
    }
    pub fn det(self) -> R {
        self.a * self.d - self.b * self.c
    }
    pub fn apply(self, v: Vec2<R>) -> Vec2<R> {
        Vec2 {
            x: self.a * v.x + self.b * v.y,
            y: self.c * v.x + self.d * v.y,
        }
    }
    pub fn transpose(self) -> Self {
        Mat2 {
            a: self.a,
            b: self.c,
            c: self.b,
            d: self.d,
        }
    }
    pub fn inverse(self) -> Option<Self> {
        let det = self.det();
        if det == R::zero() {
            return None;
        }
        let inv = R::one() / det;
        Some(Mat2 {
            a: self.d * inv,
            b: -self.b * inv,
            c: -self.c * inv,
            d: self.a * inv,
        })
    }
    pub fn mul(self, o: Self) -> Self {
        Mat2 {
            a: self.a * o.a + self.b * o.c,
            b: self.a * o.b + self.b * o.d,
            c: self.c * o.a + self.d * o.c,
            d: self.c * o.b + self.d * o.d,
        }
    }
    /// A^T S A for symmetric S; result is symmetric.
    pub fn congruence(self, s: Sym2<R>) -> Sym2<R> {
        let sa = Mat2 {
            a: s.a11 * self.a + s.a12 * self.c,
            b: s.a11 * self.b + s.a12 * self.d,
            c: s.a12 * self.a + s.a22 * self.c,
            d: s.a12 * self.b + s.a22 * self.d,
        };
        Sym2 {
            a11: self.a * sa.a + self.c * sa.c,
            a12: self.a * sa.b + self.c * sa.d,
            a22: self.b * sa.b + self.d * sa.d,
        }
    }
}

/// Twice the signed area of triangle (a, b, c); positive when counter-clockwise.
pub fn signed_area2<R: Real>(a: Vec2<R>, b: Vec2<R>, c: Vec2<R>) -> R {
    (b - a).cross(c - a)
}

/// Gradient of the area of triangle (p, a, b) with respect to p, assuming
/// (p, a, b) is counter-clockwise: half the edge normal pointing toward p.
pub fn area_gradient<R: Real>(a: Vec2<R>, b: Vec2<R>) -> Vec2<R> {
    (b - a).perp().scale(R::HALF)
}

/// Reflect point p across the line through a and b.
pub fn reflect_across<R: Real>(p: Vec2<R>, a: Vec2<R>, b: Vec2<R>) -> Vec2<R> {
    let d = b - a;
    let n2 = d.norm2();
    let t = (p - a).dot(d) / n2;
    let foot = a + d.scale(t);
    foot + (foot - p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sym2_eigen_ordering() {
        let m: Sym2<f64> = Sym2::new(2.0, 1.0, 3.0);
        let (lo, hi) = m.eigenvalues();
        assert!(lo <= hi);
        // trace and det consistency
        assert!((lo + hi - m.trace()).abs() < 1e-12);
        assert!((lo * hi - m.det()).abs() < 1e-12);
    }

    #[test]
    fn rotate_pi2_matches_direct_product() {
        // R M R^T with R = [[0,-1],[1,0]]
        let m: Sym2<f64> = Sym2::new(1.5, -0.25, 4.0);
        let r = Mat2 {
            a: 0.0,
            b: -1.0,
            c: 1.0,
            d: 0.0,
        };
        // congruence computes A^T S A, so use A = R^T to get R S R^T
        let direct = r.transpose().congruence(m);
        let quick = m.rotate_pi2();
        assert_eq!(direct, quick);
    }

    #[test]
    fn reflection_across_x_axis() {
        let p: Vec2<f64> = reflect_across(v2(0.0, 1.0), v2(0.0, 0.0), v2(1.0, 0.0));
        assert!((p.x - 0.0).abs() < 1e-15 && (p.y + 1.0).abs() < 1e-15);
    }

    #[test]
    fn area_gradient_finite_difference() {
        let a = v2(0.3, 0.1);
        let b = v2(0.9, 0.8);
        let p = v2(0.1, 0.7);
        let area = |p: Vec2<f64>| 0.5 * signed_area2(p, a, b);
        let g = area_gradient(a, b);
        let h = 1e-6;
        let gx = (area(v2(p.x + h, p.y)) - area(v2(p.x - h, p.y))) / (2.0 * h);
        let gy = (area(v2(p.x, p.y + h)) - area(v2(p.x, p.y - h))) / (2.0 * h);
        assert!((g.x - gx).abs() < 1e-8);
        assert!((g.y - gy).abs() < 1e-8);
    }
}
