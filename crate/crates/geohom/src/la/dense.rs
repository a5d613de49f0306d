//! Dense symmetric matrices: Cholesky solves and a Jacobi eigensolver for
//! the small systems that show up in stencil fitting and DtN mode analysis.

use crate::scalar::Real;

/// Row-major dense symmetric matrix; only used at small sizes.
#[derive(Clone, Debug)]
pub struct DenseSym<R> {
    pub n: usize,
    pub data: Vec<R>,
}

impl<R: Real> DenseSym<R> {
    pub fn zeros(n: usize) -> Self {
        DenseSym {
            n,
            data: vec![R::zero(); n * n],
        }
    }
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> R {
        self.data[i * self.n + j]
    }
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: R) {
        self.data[i * self.n + j] = v;
        self.data[j * self.n + i] = v;
    }
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: R) {
        self.data[i * self.n + j] += v;
        if i != j {
            self.data[j * self.n + i] += v;
        }
    }
    pub fn matvec(&self, x: &[R]) -> Vec<R> {
        let mut y = vec![R::zero(); self.n];
        for i in 0..self.n {
            let mut s = R::zero();
            for j in 0..self.n {
                s += self.get(i, j) * x[j];
            }
            y[i] = s;
        }
        y
    }
}

/// In-place Cholesky solve A x = b for SPD A; returns None if a pivot is
/// not strictly positive.
pub fn cholesky_solve<R: Real>(a: &DenseSym<R>, b: &[R]) -> Option<Vec<R>> {
    let n = a.n;
    let mut l = a.data.clone();
    for j in 0..n {
        let mut d = l[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if d <= R::zero() {
            return None;
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in (j + 1)..n {
            let mut s = l[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / d;
        }
    }
    // forward substitution L y = b
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            let t = l[i * n + k] * y[k];
            y[i] -= t;
        }
        y[i] /= l[i * n + i];
    }
    // back substitution L^T x = y
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            let t = l[k * n + i] * y[k];
            y[i] -= t;
        }
        y[i] /= l[i * n + i];
    }
    Some(y)
}

/// Solve a general (non-symmetric) dense system by Gaussian elimination
/// with partial pivoting. Used for small Vandermonde-type systems.
pub fn lu_solve(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.iter().cloned().collect();
    let mut x = b.to_vec();
    for col in 0..n {
        let (piv, mx) = (col..n)
            .map(|r| (r, m[r][col].abs()))
            .max_by(|u, v| u.1.total_cmp(&v.1))?;
        if mx == 0.0 {
            return None;
        }
        m.swap(col, piv);
        x.swap(col, piv);
        for r in (col + 1)..n {
            let f = m[r][col] / m[col][col];
            if f != 0.0 {
                for c in col..n {
                    m[r][c] -= f * m[col][c];
                }
                x[r] -= f * x[col];
            }
        }
    }
    for r in (0..n).rev() {
        let mut s = x[r];
        for c in (r + 1)..n {
            s -= m[r][c] * x[c];
        }
        x[r] = s / m[r][r];
    }
    Some(x)
}

/// Dense LU with partial pivoting, factored once for repeated solves.
pub struct DenseLu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl DenseLu {
    pub fn factor(n: usize, rows: impl Fn(usize, usize) -> f64) -> Option<DenseLu> {
        let mut lu = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                lu[r * n + c] = rows(r, c);
            }
        }
        let mut perm: Vec<usize> = (0..n).collect();
        for col in 0..n {
            let (piv, mx) = (col..n)
                .map(|r| (r, lu[r * n + col].abs()))
                .max_by(|a, b| a.1.total_cmp(&b.1))?;
            if mx == 0.0 {
                return None;
            }
            if piv != col {
                for c in 0..n {
                    lu.swap(col * n + c, piv * n + c);
                }
                perm.swap(col, piv);
            }
            let d = lu[col * n + col];
            for r in (col + 1)..n {
                let f = lu[r * n + col] / d;
                lu[r * n + col] = f;
                if f != 0.0 {
                    for c in (col + 1)..n {
                        lu[r * n + c] -= f * lu[col * n + c];
                    }
                }
            }
        }
        Some(DenseLu { n, lu, perm })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for r in 1..n {
            for c in 0..r {
                let t = self.lu[r * n + c] * x[c];
                x[r] -= t;
            }
        }
        for r in (0..n).rev() {
            for c in (r + 1)..n {
                let t = self.lu[r * n + c] * x[c];
                x[r] -= t;
            }
            x[r] /= self.lu[r * n + r];
        }
        x
    }
}

/// Full eigen-decomposition of a small symmetric matrix by cyclic Jacobi
/// rotations. Returns (eigenvalues ascending, eigenvectors as columns).
pub fn jacobi_eigh(a: &DenseSym<f64>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.n;
    let mut m = a.data.clone();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let off = |m: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += m[i * n + j] * m[i * n + j];
            }
        }
        s
    };
    let scale: f64 = m.iter().map(|x| x * x).sum::<f64>().max(1e-300);
    for _sweep in 0..100 {
        if off(&m) <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[i * n + i].total_cmp(&m[j * n + j]));
    let vals: Vec<f64> = order.iter().map(|&i| m[i * n + i]).collect();
    let vecs: Vec<Vec<f64>> = order
        .iter()
        .map(|&c| (0..n).map(|r| v[r * n + c]).collect())
        .collect();
    (vals, vecs)
}
