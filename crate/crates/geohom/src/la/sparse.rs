//! Sparse symmetric positive-definite systems.
//!
//! Storage is full-pattern CSR assembled from triplets with a deterministic
//! sorted reduction, so repeated assemblies are bit-identical. Solves use a
//! reverse-Cuthill-McKee-ordered envelope (skyline) Cholesky factorization at
//! desk scale, with a Jacobi-preconditioned conjugate-gradient fallback when
//! the envelope would not fit.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("matrix is not positive definite (pivot {pivot:.3e} at row {row})")]
    NotSpd { row: usize, pivot: f64 },
    #[error("conjugate gradient stalled at relative residual {residual:.3e}")]
    CgStall { residual: f64 },
}

/// Symmetric sparse matrix in CSR form holding both triangles.
#[derive(Clone, Debug)]
pub struct SparseSym {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseSym {
    /// Build from (i, j, v) triplets; the caller pushes both (i,j) and (j,i).
    /// Duplicates are summed in deterministic sorted order.
    pub fn from_triplets(n: usize, triplets: &mut Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        for &(i, j, v) in triplets.iter() {
            col_idx.push(j);
            values.push(v);
            row_ptr[i + 1] = col_idx.len();
        }
        for i in 0..n {
            if row_ptr[i + 1] < row_ptr[i] {
                row_ptr[i + 1] = row_ptr[i];
            }
        }
        let mut m = SparseSym {
            n,
            row_ptr,
            col_idx,
            values,
        };
        m.merge_duplicates();
        m
    }

    fn merge_duplicates(&mut self) {
        let mut rp = vec![0usize; self.n + 1];
        let mut ci = Vec::with_capacity(self.col_idx.len());
        let mut vs = Vec::with_capacity(self.values.len());
        for i in 0..self.n {
            let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
            let mut k = s;
            while k < e {
                let j = self.col_idx[k];
                let mut v = self.values[k];
                let mut k2 = k + 1;
                while k2 < e && self.col_idx[k2] == j {
                    v += self.values[k2];
                    k2 += 1;
                }
                ci.push(j);
                vs.push(v);
                k = k2;
            }
            rp[i + 1] = ci.len();
        }
        self.row_ptr = rp;
        self.col_idx = ci;
        self.values = vs;
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            y[i] = s;
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
        match self.col_idx[s..e].binary_search(&j) {
            Ok(k) => self.values[s + k],
            Err(_) => 0.0,
        }
    }

    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        let y = self.matvec(x);
        x.iter().zip(&y).map(|(a, b)| a * b).sum()
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }
}

/// Reverse Cuthill-McKee ordering from a pseudo-peripheral start vertex.
fn rcm_order(a: &SparseSym) -> Vec<usize> {
    let n = a.n;
    if n == 0 {
        return Vec::new();
    }
    let degree = |i: usize| a.row_ptr[i + 1] - a.row_ptr[i];
    let bfs = |start: usize| -> (Vec<usize>, usize) {
        let mut seen = vec![false; n];
        let mut order = Vec::with_capacity(n);
        let mut queue = std::collections::VecDeque::new();
        let mut last = start;
        // cover disconnected graphs by restarting from the lowest unseen index
        let mut starts = vec![start];
        loop {
            for s in starts.drain(..) {
                if !seen[s] {
                    seen[s] = true;
                    queue.push_back(s);
                }
            }
            while let Some(u) = queue.pop_front() {
                order.push(u);
                last = u;
                let mut nbrs: Vec<usize> = (a.row_ptr[u]..a.row_ptr[u + 1])
                    .map(|k| a.col_idx[k])
                    .filter(|&v| v != u && !seen[v])
                    .collect();
                nbrs.sort_by_key(|&v| (degree(v), v));
                for v in nbrs {
                    if !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
            if let Some(next) = (0..n).find(|&i| !seen[i]) {
                starts.push(next);
            } else {
                break;
            }
        }
        (order, last)
    };
    let start0 = (0..n).min_by_key(|&i| (degree(i), i)).unwrap();
    let (_, far) = bfs(start0);
    let (mut order, _) = bfs(far);
    order.reverse();
    order
}

enum Factor {
    /// Envelope Cholesky in RCM order.
    Skyline {
        perm: Vec<usize>,
        iperm: Vec<usize>,
        jmin: Vec<usize>,
        start: Vec<usize>, // offset of column jmin[i] within row i's storage
        data: Vec<f64>,
        diag: Vec<f64>,
    },
    /// Jacobi-preconditioned CG (matrix retained by the solver).
    Cg { inv_diag: Vec<f64>, tol: f64 },
}

/// Factorized SPD solver; direct where the envelope fits, CG beyond.
pub struct SymSolver {
    a: SparseSym,
    factor: Factor,
}

const ENVELOPE_CAP: usize = 40_000_000;

impl SymSolver {
    pub fn new(a: SparseSym) -> Result<Self, SolveError> {
        Self::with_tolerance(a, 1e-12)
    }

    pub fn with_tolerance(a: SparseSym, cg_tol: f64) -> Result<Self, SolveError> {
        let n = a.n;
        let perm = rcm_order(&a);
        let mut iperm = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }
        // envelope profile in permuted order
        let mut jmin = vec![0usize; n];
        for new_i in 0..n {
            let old_i = perm[new_i];
            let mut lo = new_i;
            for k in a.row_ptr[old_i]..a.row_ptr[old_i + 1] {
                let nj = iperm[a.col_idx[k]];
                if nj < lo {
                    lo = nj;
                }
            }
            jmin[new_i] = lo;
        }
        let env: usize = (0..n).map(|i| i - jmin[i]).sum();
        if env <= ENVELOPE_CAP {
            let mut start = vec![0usize; n + 1];
            for i in 0..n {
                start[i + 1] = start[i] + (i - jmin[i]);
            }
            let mut data = vec![0.0; start[n]];
            let mut diag = vec![0.0; n];
            for new_i in 0..n {
                let old_i = perm[new_i];
                for k in a.row_ptr[old_i]..a.row_ptr[old_i + 1] {
                    let new_j = iperm[a.col_idx[k]];
                    if new_j < new_i {
                        data[start[new_i] + (new_j - jmin[new_i])] = a.values[k];
                    } else if new_j == new_i {
                        diag[new_i] = a.values[k];
                    }
                }
            }
            // envelope Cholesky: L strictly lower in `data`, pivots in `diag`
            for i in 0..n {
                let ji = jmin[i];
                for j in ji..i {
                    let jj = jmin[j];
                    let lo = ji.max(jj);
                    let mut s = data[start[i] + (j - ji)];
                    for k in lo..j {
                        s -= data[start[i] + (k - ji)] * data[start[j] + (k - jj)];
                    }
                    data[start[i] + (j - ji)] = s / diag[j];
                }
                let mut d = diag[i];
                for k in ji..i {
                    let l = data[start[i] + (k - ji)];
                    d -= l * l;
                }
                if d <= 0.0 || !d.is_finite() {
                    return Err(SolveError::NotSpd { row: i, pivot: d });
                }
                diag[i] = d.sqrt();
            }
            Ok(SymSolver {
                a,
                factor: Factor::Skyline {
                    perm,
                    iperm,
                    jmin,
                    start,
                    data,
                    diag,
                },
            })
        } else {
            let mut inv_diag = vec![0.0; n];
            for i in 0..n {
                let d = a.get(i, i);
                if d <= 0.0 {
                    return Err(SolveError::NotSpd { row: i, pivot: d });
                }
                inv_diag[i] = 1.0 / d;
            }
            Ok(SymSolver {
                a,
                factor: Factor::Cg {
                    inv_diag,
                    tol: cg_tol,
                },
            })
        }
    }

    pub fn matrix(&self) -> &SparseSym {
        &self.a
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, SolveError> {
        match &self.factor {
            Factor::Skyline {
                perm,
                iperm,
                jmin,
                start,
                data,
                diag,
            } => {
                let n = self.a.n;
                let mut y = vec![0.0; n];
                for i in 0..n {
                    y[i] = b[perm[i]];
                }
                // L z = Pb
                for i in 0..n {
                    let mut s = y[i];
                    for k in jmin[i]..i {
                        s -= data[start[i] + (k - jmin[i])] * y[k];
                    }
                    y[i] = s / diag[i];
                }
                // L^T x = z
                for i in (0..n).rev() {
                    y[i] /= diag[i];
                    let yi = y[i];
                    for k in jmin[i]..i {
                        y[k] -= data[start[i] + (k - jmin[i])] * yi;
                    }
                }
                let mut x = vec![0.0; n];
                for i in 0..n {
                    x[i] = y[iperm[i]];
                }
                Ok(x)
            }
            Factor::Cg { inv_diag, tol } => self.solve_cg(b, inv_diag, *tol),
        }
    }

    fn solve_cg(&self, b: &[f64], inv_diag: &[f64], tol: f64) -> Result<Vec<f64>, SolveError> {
        let n = self.a.n;
        let bnorm: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if bnorm == 0.0 {
            return Ok(vec![0.0; n]);
        }
        let mut x = vec![0.0; n];
        let mut r = b.to_vec();
        let mut z: Vec<f64> = r.iter().zip(inv_diag).map(|(a, d)| a * d).collect();
        let mut p = z.clone();
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let mut ap = vec![0.0; n];
        let max_iter = 40 * n + 1000;
        for _ in 0..max_iter {
            self.a.matvec_into(&p, &mut ap);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            if pap <= 0.0 {
                return Err(SolveError::NotSpd { row: 0, pivot: pap });
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rnorm: f64 = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if rnorm <= tol * bnorm {
                return Ok(x);
            }
            for i in 0..n {
                z[i] = r[i] * inv_diag[i];
            }
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        let rnorm: f64 = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        Err(SolveError::CgStall {
            residual: rnorm / bnorm,
        })
    }
}

/// Extreme eigenvalues of an SPD matrix: power iteration for the largest,
/// inverse iteration through a factorization for the smallest.
pub fn extreme_eigenvalues(a: &SparseSym, iters: usize) -> Result<(f64, f64), SolveError> {
    let n = a.n;
    let mut v: Vec<f64> = (0..n)
        .map(|i| 1.0 + 0.5 * ((i * 2654435761 + 1) % 1024) as f64 / 1024.0)
        .collect();
    let normalize = |v: &mut Vec<f64>| {
        let s: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in v.iter_mut() {
            *x /= s;
        }
    };
    normalize(&mut v);
    let mut lmax = 0.0;
    for _ in 0..iters {
        let w = a.matvec(&v);
        let l: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        let delta = (l - lmax).abs();
        lmax = l;
        v = w;
        normalize(&mut v);
        if delta <= 1e-12 * lmax.abs() {
            break;
        }
    }
    let solver = SymSolver::new(a.clone())?;
    let mut u: Vec<f64> = (0..n)
        .map(|i| 1.0 - 0.3 * ((i * 40503 + 7) % 977) as f64 / 977.0)
        .collect();
    normalize(&mut u);
    let mut lmin_inv = 0.0;
    for _ in 0..iters {
        let w = solver.solve(&u)?;
        let l: f64 = u.iter().zip(&w).map(|(a, b)| a * b).sum();
        let delta = (l - lmin_inv).abs();
        lmin_inv = l;
        u = w;
        normalize(&mut u);
        if delta <= 1e-12 * lmin_inv.abs() {
            break;
        }
    }
    Ok((1.0 / lmin_inv, lmax))
}
