//! Dense two-phase simplex for small linear programs with variable bounds:
//! minimise c'x subject to A x = b and lower <= x <= upper.
//!
//! Nonbasic variables rest at a finite bound; upper bounds are handled by
//! the usual bound-flip extension of the ratio test. Sized for desk-scale
//! problems (a few thousand variables); everything is deterministic.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LpError {
    #[error("infeasible linear program (phase-1 residual {residual:.3e}, worst row {row})")]
    Infeasible { row: usize, residual: f64 },
    #[error("unbounded linear program (column {col})")]
    Unbounded { col: usize },
    #[error("iteration limit reached")]
    IterationLimit,
}

pub struct LinearProgram {
    pub c: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
}

#[derive(Clone, Copy, PartialEq)]
enum Status {
    Basic,
    AtLower,
    AtUpper,
}

struct Tableau {
    m: usize,
    n: usize, // structural + artificial
    t: Vec<f64>,
    // rows m x (n + 1); last column is the basic solution value
    basis: Vec<usize>,
    status: Vec<Status>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    xval: Vec<f64>, // value of every variable (nonbasic at bound, basic from tableau)
    art_sign: Vec<f64>,
    price_tol: f64,
    pivots: usize,
}

impl Tableau {
    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.t[r * (self.n + 1) + c]
    }
    #[inline]
    fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.t[r * (self.n + 1) + c]
    }

    /// Gaussian elimination on the matrix part only; the rhs column holds
    /// current basic values and is maintained separately.
    fn pivot(&mut self, row: usize, col: usize) {
        let w = self.n + 1;
        let piv = self.at(row, col);
        let inv = 1.0 / piv;
        for c in 0..self.n {
            self.t[row * w + c] *= inv;
        }
        for r in 0..self.m {
            if r == row {
                continue;
            }
            let f = self.at(r, col);
            if f != 0.0 {
                for c in 0..self.n {
                    self.t[r * w + c] -= f * self.t[row * w + c];
                }
            }
        }
    }

    fn basic_values(&mut self) {
        for r in 0..self.m {
            self.xval[self.basis[r]] = self.at(r, self.n);
        }
    }

    /// Rebuild the whole tableau from the original data for the current
    /// basis: T = B^{-1} [A | artificials] and exact basic values. Clears
    /// the roundoff accumulated by explicit pivoting.
    fn rebuild(&mut self, lp: &LinearProgram) -> bool {
        let m = self.m;
        let ns = lp.c.len();
        let basis_entry = |r: usize, slot: usize| {
            let j = self.basis[slot];
            if j < ns {
                lp.rows[r][j]
            } else if j - ns == r {
                self.art_sign[r]
            } else {
                0.0
            }
        };
        let Some(lu) = crate::la::dense::DenseLu::factor(m, basis_entry) else {
            return false;
        };
        let w = self.n + 1;
        // columns of B^{-1} A for every variable
        let mut col = vec![0.0; m];
        for j in 0..self.n {
            for r in 0..m {
                col[r] = if j < ns {
                    lp.rows[r][j]
                } else if j - ns == r {
                    self.art_sign[r]
                } else {
                    0.0
                };
            }
            let x = lu.solve(&col);
            for r in 0..m {
                self.t[r * w + j] = x[r];
            }
        }
        // exact basic values
        let mut rhs = lp.rhs.clone();
        for j in 0..self.n {
            if self.status[j] == Status::Basic {
                continue;
            }
            let xj = self.xval[j];
            if xj == 0.0 {
                continue;
            }
            if j < ns {
                for r in 0..m {
                    rhs[r] -= lp.rows[r][j] * xj;
                }
            } else {
                rhs[j - ns] -= self.art_sign[j - ns] * xj;
            }
        }
        let xb = lu.solve(&rhs);
        for slot in 0..m {
            let bj = self.basis[slot];
            self.xval[bj] = xb[slot];
            self.t[slot * w + self.n] = xb[slot];
        }
        true
    }

    /// One simplex phase minimizing `cost`; returns Ok(objective).
    fn run(&mut self, cost: &[f64], max_iter: usize, bland_after: usize) -> Result<Option<f64>, LpError> {
        let mut degenerate_streak = 0usize;
        for iter in 0..max_iter {
            // reduced costs d_j = c_j - c_B' B^-1 A_j via the tableau rows
            let mut y = vec![0.0; self.m];
            for r in 0..self.m {
                y[r] = cost[self.basis[r]];
            }
            let bland = degenerate_streak > bland_after;
            let mut enter: Option<(usize, f64, bool)> = None; // (col, |d|, increase?)
            for j in 0..self.n {
                if self.status[j] == Status::Basic || self.upper[j] <= self.lower[j] {
                    continue;
                }
                let mut d = cost[j];
                for r in 0..self.m {
                    let a = self.at(r, j);
                    if a != 0.0 {
                        d -= y[r] * a;
                    }
                }
                let (viol, increase) = match self.status[j] {
                    Status::AtLower => (-d, true),
                    Status::AtUpper => (d, false),
                    Status::Basic => unreachable!(),
                };
                if viol > self.price_tol {
                    if bland {
                        enter = Some((j, viol, increase));
                        break;
                    }
                    if enter.map_or(true, |(_, best, _)| viol > best) {
                        enter = Some((j, viol, increase));
                    }
                }
            }
            let Some((jcol, _, increase)) = enter else {
                self.basic_values();
                let obj = (0..self.n).map(|j| cost[j] * self.xval[j]).sum();
                return Ok(Some(obj));
            };

            // two-pass ratio test: find the tightest limit over every row
            // with a nonzero pivot entry, then among rows within a small
            // ratio tolerance pick the one with the largest pivot so the
            // basis never turns near-singular
            let dir = if increase { 1.0 } else { -1.0 };
            let own_range = self.upper[jcol] - self.lower[jcol];
            let col_max = (0..self.m)
                .map(|r| self.at(r, jcol).abs())
                .fold(0.0f64, f64::max);
            let eps_a = 1e-11 * col_max.max(1.0);
            let mut limit = own_range; // bound-flip distance
            for r in 0..self.m {
                let a = self.at(r, jcol) * dir;
                if a.abs() <= eps_a {
                    continue;
                }
                let bi = self.basis[r];
                let xb = self.at(r, self.n);
                let room = if a > 0.0 {
                    xb - self.lower[bi]
                } else {
                    self.upper[bi] - xb
                };
                // clamp: a slightly negative room must not step backwards
                let ratio = (room / a.abs()).max(0.0);
                if ratio < limit {
                    limit = ratio;
                }
            }
            if !limit.is_finite() {
                return Err(LpError::Unbounded { col: jcol });
            }
            let mut leave: Option<(usize, bool)> = None;
            if limit < own_range {
                let slack = 1e-7 * (1.0 + limit);
                let mut best_pivot = 0.0f64;
                for r in 0..self.m {
                    let a = self.at(r, jcol) * dir;
                    if a.abs() <= eps_a {
                        continue;
                    }
                    let bi = self.basis[r];
                    let xb = self.at(r, self.n);
                    let (room, to_upper) = if a > 0.0 {
                        (xb - self.lower[bi], false)
                    } else {
                        (self.upper[bi] - xb, true)
                    };
                    let ratio = (room / a.abs()).max(0.0);
                    if ratio <= limit + slack && a.abs() > best_pivot {
                        best_pivot = a.abs();
                        leave = Some((r, to_upper));
                    }
                }
            }
            if limit <= 1e-12 {
                degenerate_streak += 1;
            } else {
                degenerate_streak = 0;
            }
            match leave {
                None => {
                    // bound flip: x_j runs to its other bound
                    let w = self.n + 1;
                    let delta = limit * dir;
                    for r in 0..self.m {
                        let a = self.at(r, jcol);
                        if a != 0.0 {
                            self.t[r * w + self.n] -= a * delta;
                        }
                    }
                    self.xval[jcol] = if increase {
                        self.upper[jcol]
                    } else {
                        self.lower[jcol]
                    };
                    self.status[jcol] = if increase {
                        Status::AtUpper
                    } else {
                        Status::AtLower
                    };
                }
                Some((row, to_upper)) => {
                    let out = self.basis[row];
                    let w = self.n + 1;
                    let delta = limit * dir;
                    for r in 0..self.m {
                        let a = self.at(r, jcol);
                        if a != 0.0 {
                            self.t[r * w + self.n] -= a * delta;
                        }
                    }
                    self.xval[jcol] = if increase {
                        self.lower[jcol] + limit
                    } else {
                        self.upper[jcol] - limit
                    };
                    self.status[out] = if to_upper {
                        Status::AtUpper
                    } else {
                        Status::AtLower
                    };
                    self.xval[out] = if to_upper {
                        self.upper[out]
                    } else {
                        self.lower[out]
                    };
                    self.status[jcol] = Status::Basic;
                    self.basis[row] = jcol;
                    self.pivots += 1;
                    *self.at_mut(row, self.n) = self.xval[jcol];
                    self.pivot(row, jcol);
                }
            }
            if iter + 1 == max_iter {
                return Ok(None);
            }
        }
        Ok(None)
    }

}


/// Run one simplex phase in chunks, rebuilding the tableau from the
/// original data between chunks; optimality must be confirmed on a freshly
/// rebuilt tableau with zero further pivots.
fn run_phase(
    tab: &mut Tableau,
    lp: &LinearProgram,
    cost: &[f64],
    max_iter: usize,
) -> Result<(), LpError> {
    let chunk = 400;
    let mut used = 0usize;
    loop {
        let res = tab.run(cost, chunk, 40)?;
        used += chunk;
        tab.rebuild(lp);
        if std::env::var("GEOHOM_LP_TRACE").is_ok() {
            tab.basic_values();
            let obj: f64 = (0..tab.n).map(|j| cost[j] * tab.xval[j]).sum();
            let ns = lp.c.len();
            let mut bound_viol = 0.0f64;
            for j in 0..tab.n {
                let v = tab.xval[j];
                bound_viol = bound_viol.max(tab.lower[j] - v).max(v - tab.upper[j]);
            }
            let mut eq_viol = 0.0f64;
            for (r, row) in lp.rows.iter().enumerate() {
                let mut ax: f64 = (0..ns).map(|j| row[j] * tab.xval[j]).sum();
                ax += tab.art_sign[r] * tab.xval[ns + r];
                eq_viol = eq_viol.max((ax - lp.rhs[r]).abs());
            }
            eprintln!("chunk: pivots {} obj {obj:.6e} bound_viol {bound_viol:.3e} eq_viol {eq_viol:.3e} opt {}", tab.pivots, res.is_some());
        }
        if res.is_some() {
            let before = tab.pivots;
            let res2 = tab.run(cost, chunk, 40)?;
            used += chunk;
            if res2.is_some() && tab.pivots == before {
                return Ok(());
            }
            tab.rebuild(lp);
        }
        if used > max_iter.max(2 * chunk) {
            return Err(LpError::IterationLimit);
        }
    }
}

pub fn solve_lp(lp: &LinearProgram, max_iter: usize) -> Result<LpSolution, LpError> {
    let m = lp.rows.len();
    let ns = lp.c.len();
    let n = ns + m; // artificials appended
    let w = n + 1;
    let mut t = vec![0.0; m * w];
    let mut lower = lp.lower.clone();
    let mut upper = lp.upper.clone();
    lower.resize(n, 0.0);
    upper.resize(n, f64::INFINITY);
    let mut status = vec![Status::AtLower; n];
    // nonbasic structural variables start at the bound of smaller magnitude
    let mut xval = vec![0.0; n];
    for j in 0..ns {
        if lower[j].is_finite() {
            status[j] = Status::AtLower;
            xval[j] = lower[j];
        } else if upper[j].is_finite() {
            status[j] = Status::AtUpper;
            xval[j] = upper[j];
        } else {
            status[j] = Status::AtLower;
            lower[j] = 0.0; // free variables are not needed by the callers
            xval[j] = 0.0;
        }
    }
    // rhs after fixing nonbasics at bounds
    let mut resid = vec![0.0; m];
    for r in 0..m {
        let mut s = lp.rhs[r];
        for j in 0..ns {
            s -= lp.rows[r][j] * xval[j];
        }
        resid[r] = s;
    }
    let mut basis = vec![0usize; m];
    let mut art_sign = vec![1.0; m];
    for r in 0..m {
        // the initial basis matrix is diag(sign), so store sign * A_r to keep
        // the tableau equal to B^{-1} A with the artificial column at +1
        let sign = if resid[r] >= 0.0 { 1.0 } else { -1.0 };
        art_sign[r] = sign;
        for j in 0..ns {
            t[r * w + j] = sign * lp.rows[r][j];
        }
        t[r * w + ns + r] = 1.0;
        t[r * w + n] = resid[r].abs();
        basis[r] = ns + r;
        status[ns + r] = Status::Basic;
        xval[ns + r] = resid[r].abs();
    }
    let mut tab = Tableau {
        m,
        n,
        t,
        basis,
        status,
        lower,
        upper,
        xval,
        art_sign,
        price_tol: 1e-9,
        pivots: 0,
    };

    // phase 1
    let mut phase1_cost = vec![0.0; n];
    for j in ns..n {
        phase1_cost[j] = 1.0;
    }
    run_phase(&mut tab, lp, &phase1_cost, max_iter)?;
    let p1: f64 = (ns..n).map(|j| tab.xval[j].abs()).sum();
    if p1 > 1e-7 {
        let (row, _) = tab
            .basis
            .iter()
            .enumerate()
            .filter(|(_, &b)| b >= ns)
            .max_by(|a, b| tab.at(a.0, tab.n).total_cmp(&tab.at(b.0, tab.n)))
            .map(|(r, _)| (r, ()))
            .unwrap_or((0, ()));
        return Err(LpError::Infeasible { row, residual: p1 });
    }
    // forbid artificials from re-entering
    for j in ns..n {
        if tab.status[j] != Status::Basic {
            tab.lower[j] = 0.0;
            tab.upper[j] = 0.0;
        } else {
            tab.upper[j] = 0.0;
        }
    }

    // phase 2
    let mut cost = lp.c.clone();
    cost.resize(n, 0.0);
    run_phase(&mut tab, lp, &cost, max_iter)?;
    let obj = (0..ns).map(|j| lp.c[j] * tab.xval[j]).sum();
    Ok(LpSolution {
        x: tab.xval[..ns].to_vec(),
        objective: obj,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equality_with_bounds() {
        // min x + 2y  s.t. x + y = 3, 0 <= x <= 2, 0 <= y <= 5  -> x=2, y=1
        let lp = LinearProgram {
            c: vec![1.0, 2.0],
            rows: vec![vec![1.0, 1.0]],
            rhs: vec![3.0],
            lower: vec![0.0, 0.0],
            upper: vec![2.0, 5.0],
        };
        let s = solve_lp(&lp, 1000).unwrap();
        assert!((s.x[0] - 2.0).abs() < 1e-8);
        assert!((s.x[1] - 1.0).abs() < 1e-8);
        assert!((s.objective - 4.0).abs() < 1e-8);
    }

    #[test]
    fn detects_infeasible() {
        // x = 5 with 0 <= x <= 1
        let lp = LinearProgram {
            c: vec![1.0],
            rows: vec![vec![1.0]],
            rhs: vec![5.0],
            lower: vec![0.0],
            upper: vec![1.0],
        };
        assert!(matches!(solve_lp(&lp, 1000), Err(LpError::Infeasible { .. })));
    }

    #[test]
    fn l1_fit_via_split_variables() {
        // minimise |x - 4| with x expressed through p - q = x - 4, p,q >= 0,
        // x forced to 1 by an equality: objective should be 3.
        let lp = LinearProgram {
            c: vec![0.0, 1.0, 1.0],
            rows: vec![vec![1.0, -1.0, 1.0], vec![1.0, 0.0, 0.0]],
            rhs: vec![4.0, 1.0],
            lower: vec![0.0, 0.0, 0.0],
            upper: vec![10.0, f64::INFINITY, f64::INFINITY],
        };
        let s = solve_lp(&lp, 1000).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-8);
        assert!((s.objective - 3.0).abs() < 1e-8);
    }

    #[test]
    fn random_feasible_instances_stay_feasible() {
        let mut state = 99u64;
        let mut rnd = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((state >> 11) as f64) / ((1u64 << 53) as f64)
        };
        for _case in 0..30 {
            let nv = 6;
            let mrows = 3;
            let x0: Vec<f64> = (0..nv).map(|_| rnd() * 2.0).collect();
            let rows: Vec<Vec<f64>> = (0..mrows)
                .map(|_| (0..nv).map(|_| rnd() * 2.0 - 1.0).collect())
                .collect();
            let rhs: Vec<f64> = rows
                .iter()
                .map(|r| r.iter().zip(&x0).map(|(a, b)| a * b).sum())
                .collect();
            let lp = LinearProgram {
                c: (0..nv).map(|_| rnd()).collect(),
                rows: rows.clone(),
                rhs: rhs.clone(),
                lower: vec![0.0; nv],
                upper: vec![2.0; nv],
            };
            let s = solve_lp(&lp, 5000).expect("constructed feasible");
            // optimum at least as good as the seed point and feasible
            let seed_obj: f64 = lp.c.iter().zip(&x0).map(|(a, b)| a * b).sum();
            assert!(s.objective <= seed_obj + 1e-7);
            for (r, row) in rows.iter().enumerate() {
                let ax: f64 = row.iter().zip(&s.x).map(|(a, b)| a * b).sum();
                assert!((ax - rhs[r]).abs() < 1e-6, "row {r} violated");
            }
            for (j, &v) in s.x.iter().enumerate() {
                assert!(v >= -1e-9 && v <= 2.0 + 1e-9, "bound {j} violated: {v}");
            }
        }
    }
}
