//! Extended-precision helpers for direction normalization.
//!
//! `unit_direction` computes `v / ||v||` in double-double arithmetic and rounds
//! once at the end, so the result depends only on the exact direction of `v`:
//! `unit_direction(c * v) == unit_direction(v)` bit for bit whenever `c * v`
//! is itself exactly representable.

#[derive(Debug, Clone, Copy)]
struct Dd {
    hi: f64,
    lo: f64,
}

fn two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    Dd { hi: s, lo: err }
}

fn quick_two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    Dd { hi: s, lo: b - (s - a) }
}

fn two_prod(a: f64, b: f64) -> Dd {
    let p = a * b;
    Dd { hi: p, lo: a.mul_add(b, -p) }
}

fn dd_add(a: Dd, b: Dd) -> Dd {
    let s = two_sum(a.hi, b.hi);
    let t = two_sum(a.lo, b.lo);
    let s = quick_two_sum(s.hi, s.lo + t.hi);
    quick_two_sum(s.hi, s.lo + t.lo)
}

fn dd_sqrt(a: Dd) -> Dd {
    let s = a.hi.sqrt();
    let sq = two_prod(s, s);
    let resid = ((a.hi - sq.hi) - sq.lo) + a.lo;
    quick_two_sum(s, resid / (2.0 * s))
}

/// `x / d`, correctly rounded up to the residual of the double-double divisor.
fn div_by_dd(x: f64, d: Dd) -> f64 {
    let q1 = x / d.hi;
    // r = x - q1 * d, with q1 * d.hi formed exactly
    let p = two_prod(q1, d.hi);
    let r = ((x - p.hi) - p.lo) - q1 * d.lo;
    q1 + r / d.hi
}

/// Power-of-two factor bringing the largest magnitude of `v` near 1.
fn exponent_scale(v: &[f64]) -> f64 {
    let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if max == 0.0 {
        return 1.0;
    }
    let exp = max.log2().floor() as i32;
    2f64.powi(-exp.clamp(-1000, 1000))
}

fn sum_squares(scaled: &[f64]) -> Dd {
    scaled.iter().fold(Dd { hi: 0.0, lo: 0.0 }, |acc, &x| dd_add(acc, two_prod(x, x)))
}

/// Unit vector along `v`, or `None` when `v` is all zeros.
pub fn unit_direction(v: &[f64]) -> Option<Vec<f64>> {
    if v.iter().all(|&x| x == 0.0) {
        return None;
    }
    let s = exponent_scale(v);
    let scaled: Vec<f64> = v.iter().map(|x| x * s).collect();
    let norm = dd_sqrt(sum_squares(&scaled));
    Some(scaled.iter().map(|&x| div_by_dd(x, norm)).collect())
}

/// Euclidean (Frobenius) norm of a flat array.
pub fn norm(v: &[f64]) -> f64 {
    if v.iter().all(|&x| x == 0.0) {
        return 0.0;
    }
    let s = exponent_scale(v);
    let scaled: Vec<f64> = v.iter().map(|x| x * s).collect();
    let n = dd_sqrt(sum_squares(&scaled));
    (n.hi + n.lo) / s
}
