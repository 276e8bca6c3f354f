//! Golden-section minimization on a closed interval.

use crate::Result;

const INV_PHI: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Clone, Copy)]
pub struct Minimum {
    pub x: f64,
    pub value: f64,
    pub evaluations: usize,
}

/// Minimizes `f` over `[a, b]` to bracket width `tol`. Both endpoints are
/// also evaluated so a boundary minimum of a unimodal function is found
/// exactly; among equal values the smaller `x` wins.
pub fn minimize<F>(mut f: F, a: f64, b: f64, tol: f64) -> Result<Minimum>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (mut lo, mut hi) = if a <= b { (a, b) } else { (b, a) };
    let f_lo = f(lo)?;
    let f_hi = f(hi)?;
    let mut evaluations = 2;
    let mut best = Minimum { x: lo, value: f_lo, evaluations };
    let consider = |x: f64, v: f64, best: &mut Minimum| {
        if v < best.value || (v == best.value && x < best.x) {
            best.x = x;
            best.value = v;
        }
    };
    consider(hi, f_hi, &mut best);
    if hi - lo <= tol {
        best.evaluations = evaluations;
        return Ok(best);
    }
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    evaluations += 2;
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2)?;
        }
        evaluations += 1;
    }
    consider(x1, f1, &mut best);
    consider(x2, f2, &mut best);
    best.evaluations = evaluations;
    Ok(best)
}
