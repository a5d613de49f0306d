//! Exact-sign orientation predicates.
//!
//! `orient2d` and `orient3d` return the sign of the corresponding point
//! determinant, evaluated with a cheap floating-point filter first and an
//! exact multi-component expansion fallback when the filter cannot certify
//! the sign. The expansion arithmetic follows the classic error-free
//! transformation approach (two-sum / two-product / expansion sums), so the
//! slow path is exact for all finite `f64` inputs.
//!
//! The regular-triangulation code calls `orient3d` on lifted points; a zero
//! result there means an exactly flat hinge.

const EPS: f64 = f64::EPSILON / 2.0; // 2^-53
const SPLITTER: f64 = 134217729.0; // 2^27 + 1

const RESULT_ERRBOUND: f64 = (3.0 + 8.0 * EPS) * EPS;
const O2D_ERRBOUND_A: f64 = (3.0 + 16.0 * EPS) * EPS;
const O2D_ERRBOUND_B: f64 = (2.0 + 12.0 * EPS) * EPS;
const O2D_ERRBOUND_C: f64 = (9.0 + 64.0 * EPS) * EPS * EPS;
const O3D_ERRBOUND_A: f64 = (7.0 + 56.0 * EPS) * EPS;

#[inline]
fn fast_two_sum(a: f64, b: f64) -> (f64, f64) {
    // requires |a| >= |b|
    let x = a + b;
    let y = b - (x - a);
    (x, y)
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let x = a + b;
    let bv = x - a;
    let av = x - bv;
    let y = (a - av) + (b - bv);
    (x, y)
}

#[inline]
fn two_diff(a: f64, b: f64) -> (f64, f64) {
    let x = a - b;
    let bv = a - x;
    let av = x + bv;
    let y = (a - av) + (bv - b);
    (x, y)
}

#[inline]
fn split(a: f64) -> (f64, f64) {
    let c = SPLITTER * a;
    let hi = c - (c - a);
    let lo = a - hi;
    (hi, lo)
}

#[inline]
fn two_product(a: f64, b: f64) -> (f64, f64) {
    let x = a * b;
    let (ahi, alo) = split(a);
    let (bhi, blo) = split(b);
    let err = x - ahi * bhi - alo * bhi - ahi * blo;
    let y = alo * blo - err;
    (x, y)
}

/// Product of two 2-component expansions; returns up to 8 components,
/// nondecreasing magnitude, possibly with zeros.
fn two_two_product(a1: f64, a0: f64, b1: f64, b0: f64) -> Vec<f64> {
    // (a1 + a0) * (b1 + b0) expanded via four two_products and summed.
    let (p11, e11) = two_product(a1, b1);
    let (p10, e10) = two_product(a1, b0);
    let (p01, e01) = two_product(a0, b1);
    let (p00, e00) = two_product(a0, b0);
    let s = fast_expansion_sum(&[e11, p11], &[e10, p10]);
    let t = fast_expansion_sum(&[e01, p01], &[e00, p00]);
    fast_expansion_sum(&s, &t)
}

/// Sum of two expansions (components sorted by increasing magnitude),
/// with zero elimination.
fn fast_expansion_sum(e: &[f64], f: &[f64]) -> Vec<f64> {
    let mut h = Vec::with_capacity(e.len() + f.len());
    let (mut ei, mut fi) = (0usize, 0usize);
    let mut enow = e.get(0).copied();
    let mut fnow = f.get(0).copied();
    let mut q: f64;

    match (enow, fnow) {
        (Some(ev), Some(fv)) => {
            if fv.abs() > ev.abs() {
                q = ev;
                ei += 1;
                enow = e.get(ei).copied();
            } else {
                q = fv;
                fi += 1;
                fnow = f.get(fi).copied();
            }
        }
        (Some(ev), None) => {
            q = ev;
            ei += 1;
            enow = e.get(ei).copied();
        }
        (None, Some(fv)) => {
            q = fv;
            fi += 1;
            fnow = f.get(fi).copied();
        }
        (None, None) => return vec![0.0],
    }

    let mut first = true;
    loop {
        let next = match (enow, fnow) {
            (Some(ev), Some(fv)) => {
                if fv.abs() > ev.abs() {
                    ei += 1;
                    enow = e.get(ei).copied();
                    ev
                } else {
                    fi += 1;
                    fnow = f.get(fi).copied();
                    fv
                }
            }
            (Some(ev), None) => {
                ei += 1;
                enow = e.get(ei).copied();
                ev
            }
            (None, Some(fv)) => {
                fi += 1;
                fnow = f.get(fi).copied();
                fv
            }
            (None, None) => break,
        };
        let (qn, hh) = if first {
            first = false;
            fast_two_sum(next, q)
        } else {
            two_sum(q, next)
        };
        q = qn;
        if hh != 0.0 {
            h.push(hh);
        }
    }
    if q != 0.0 || h.is_empty() {
        h.push(q);
    }
    h
}

/// Expansion times scalar, with zero elimination.
fn scale_expansion(e: &[f64], b: f64) -> Vec<f64> {
    let mut h = Vec::with_capacity(2 * e.len());
    let (mut q, hh) = two_product(e[0], b);
    if hh != 0.0 {
        h.push(hh);
    }
    for &en in &e[1..] {
        let (p1, p0) = two_product(en, b);
        let (sum, hh) = two_sum(q, p0);
        if hh != 0.0 {
            h.push(hh);
        }
        let (qn, hh) = fast_two_sum(p1, sum);
        q = qn;
        if hh != 0.0 {
            h.push(hh);
        }
    }
    if q != 0.0 || h.is_empty() {
        h.push(q);
    }
    h
}

fn negate(e: &[f64]) -> Vec<f64> {
    e.iter().map(|&x| -x).collect()
}

fn expansion_sign(e: &[f64]) -> f64 {
    // the largest-magnitude (last) nonzero component carries the sign
    let v = *e.last().unwrap();
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn estimate(e: &[f64]) -> f64 {
    e.iter().sum()
}

/// Sign of the 2D orientation determinant |b-a, c-a|.
///
/// Positive when (a, b, c) wind counter-clockwise, negative clockwise,
/// exactly zero for collinear points.
pub fn orient2d(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    let detleft = (a[0] - c[0]) * (b[1] - c[1]);
    let detright = (a[1] - c[1]) * (b[0] - c[0]);
    let det = detleft - detright;

    let detsum = if detleft > 0.0 {
        if detright <= 0.0 {
            return sign_of(det);
        }
        detleft + detright
    } else if detleft < 0.0 {
        if detright >= 0.0 {
            return sign_of(det);
        }
        -detleft - detright
    } else {
        return sign_of(det);
    };

    let errbound = O2D_ERRBOUND_A * detsum;
    if det >= errbound || -det >= errbound {
        return sign_of(det);
    }
    orient2d_adapt(a, b, c, detsum)
}

fn orient2d_adapt(a: [f64; 2], b: [f64; 2], c: [f64; 2], detsum: f64) -> f64 {
    let acx = a[0] - c[0];
    let bcx = b[0] - c[0];
    let acy = a[1] - c[1];
    let bcy = b[1] - c[1];

    let (detleft, detlefttail) = two_product(acx, bcy);
    let (detright, detrighttail) = two_product(acy, bcx);
    let b_exp = fast_expansion_sum(
        &[detlefttail, detleft],
        &negate(&[detrighttail, detright]),
    );
    let mut det = estimate(&b_exp);
    let errbound = O2D_ERRBOUND_B * detsum;
    if det >= errbound || -det >= errbound {
        return sign_of(det);
    }

    let acxtail = two_diff_tail(a[0], c[0], acx);
    let bcxtail = two_diff_tail(b[0], c[0], bcx);
    let acytail = two_diff_tail(a[1], c[1], acy);
    let bcytail = two_diff_tail(b[1], c[1], bcy);
    if acxtail == 0.0 && acytail == 0.0 && bcxtail == 0.0 && bcytail == 0.0 {
        return sign_of(det);
    }

    let errbound = O2D_ERRBOUND_C * detsum + RESULT_ERRBOUND * det.abs();
    det += (acx * bcytail + bcy * acxtail) - (acy * bcxtail + bcx * acytail);
    if det >= errbound || -det >= errbound {
        return sign_of(det);
    }

    // full exact tail
    let (s1, s0) = two_product(acxtail, bcy);
    let (t1, t0) = two_product(acytail, bcx);
    let u = fast_expansion_sum(&[s0, s1], &negate(&[t0, t1]));
    let c1 = fast_expansion_sum(&b_exp, &u);

    let (s1, s0) = two_product(acx, bcytail);
    let (t1, t0) = two_product(acy, bcxtail);
    let u = fast_expansion_sum(&[s0, s1], &negate(&[t0, t1]));
    let c2 = fast_expansion_sum(&c1, &u);

    let (s1, s0) = two_product(acxtail, bcytail);
    let (t1, t0) = two_product(acytail, bcxtail);
    let u = fast_expansion_sum(&[s0, s1], &negate(&[t0, t1]));
    let d = fast_expansion_sum(&c2, &u);

    expansion_sign(&d)
}

#[inline]
fn two_diff_tail(a: f64, b: f64, x: f64) -> f64 {
    let bv = a - x;
    let av = x + bv;
    (a - av) + (bv - b)
}

#[inline]
fn sign_of(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Sign of the 3D orientation determinant of (a-d, b-d, c-d).
///
/// Positive when d lies below the plane through (a, b, c) oriented
/// counter-clockwise seen from above, following the right-hand rule.
pub fn orient3d(a: [f64; 3], b: [f64; 3], c: [f64; 3], d: [f64; 3]) -> f64 {
    let adx = a[0] - d[0];
    let bdx = b[0] - d[0];
    let cdx = c[0] - d[0];
    let ady = a[1] - d[1];
    let bdy = b[1] - d[1];
    let cdy = c[1] - d[1];
    let adz = a[2] - d[2];
    let bdz = b[2] - d[2];
    let cdz = c[2] - d[2];

    let bdxcdy = bdx * cdy;
    let cdxbdy = cdx * bdy;
    let cdxady = cdx * ady;
    let adxcdy = adx * cdy;
    let adxbdy = adx * bdy;
    let bdxady = bdx * ady;

    let det = adz * (bdxcdy - cdxbdy) + bdz * (cdxady - adxcdy) + cdz * (adxbdy - bdxady);

    let permanent = (bdxcdy.abs() + cdxbdy.abs()) * adz.abs()
        + (cdxady.abs() + adxcdy.abs()) * bdz.abs()
        + (adxbdy.abs() + bdxady.abs()) * cdz.abs();
    let errbound = O3D_ERRBOUND_A * permanent;
    if det > errbound || -det > errbound {
        return sign_of(det);
    }

    orient3d_exact(a, b, c, d)
}

/// Exact 3x3 determinant via expansion arithmetic; no early termination.
fn orient3d_exact(a: [f64; 3], b: [f64; 3], c: [f64; 3], d: [f64; 3]) -> f64 {
    let diff = |p: [f64; 3], q: [f64; 3], k: usize| two_diff(p[k], q[k]);
    let (adx1, adx0) = diff(a, d, 0);
    let (bdx1, bdx0) = diff(b, d, 0);
    let (cdx1, cdx0) = diff(c, d, 0);
    let (ady1, ady0) = diff(a, d, 1);
    let (bdy1, bdy0) = diff(b, d, 1);
    let (cdy1, cdy0) = diff(c, d, 1);
    let (adz1, adz0) = diff(a, d, 2);
    let (bdz1, bdz0) = diff(b, d, 2);
    let (cdz1, cdz0) = diff(c, d, 2);

    // minor(p, q) = p_x*q_y - q_x*p_y as an expansion
    let minor = |px1: f64, px0: f64, py1: f64, py0: f64, qx1: f64, qx0: f64, qy1: f64, qy0: f64| {
        let m1 = two_two_product(px1, px0, qy1, qy0);
        let m2 = two_two_product(qx1, qx0, py1, py0);
        fast_expansion_sum(&m1, &negate(&m2))
    };

    // bd x cd, cd x ad, ad x bd (z-components of pairwise cross products)
    let bc = minor(bdx1, bdx0, bdy1, bdy0, cdx1, cdx0, cdy1, cdy0);
    let ca = minor(cdx1, cdx0, cdy1, cdy0, adx1, adx0, ady1, ady0);
    let ab = minor(adx1, adx0, ady1, ady0, bdx1, bdx0, bdy1, bdy0);

    let mul2 = |e: &[f64], s1: f64, s0: f64| {
        let hi = scale_expansion(e, s1);
        let lo = scale_expansion(e, s0);
        fast_expansion_sum(&hi, &lo)
    };

    let t1 = mul2(&bc, adz1, adz0);
    let t2 = mul2(&ca, bdz1, bdz0);
    let t3 = mul2(&ab, cdz1, cdz0);

    let s = fast_expansion_sum(&t1, &t2);
    let det = fast_expansion_sum(&s, &t3);
    expansion_sign(&det)
}
