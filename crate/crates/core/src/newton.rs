//! Damped Newton iteration for small square systems with a central-difference
//! Jacobian.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    /// Converged when the max-norm of the residual is below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Relative finite-difference step; the absolute step is
    /// `fd_step * max(|x_i|, fd_floor)`.
    pub fd_step: f64,
    pub fd_floor: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions { tol: 1e-11, max_iter: 60, fd_step: 1e-6, fd_floor: 1e-2 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Root<const N: usize> {
    pub x: [f64; N],
    pub residual: f64,
    pub iterations: usize,
}

fn norm<const N: usize>(r: &[f64; N]) -> f64 {
    r.iter().fold(0.0_f64, |m, v| if v.is_nan() { f64::INFINITY } else { m.max(v.abs()) })
}

fn jacobian<const N: usize, F>(f: &mut F, x: &[f64; N], fx: &[f64; N], opts: &NewtonOptions) -> DMatrix<f64>
where
    F: FnMut(&[f64; N]) -> Result<[f64; N]>,
{
    let mut jac = DMatrix::<f64>::zeros(N, N);
    for j in 0..N {
        let h = opts.fd_step * x[j].abs().max(opts.fd_floor);
        let mut xp = *x;
        let mut xm = *x;
        xp[j] += h;
        xm[j] -= h;
        let col = match (f(&xp), f(&xm)) {
            (Ok(p), Ok(m)) => core::array::from_fn::<f64, N, _>(|i| (p[i] - m[i]) / (2.0 * h)),
            (Ok(p), Err(_)) => core::array::from_fn(|i| (p[i] - fx[i]) / h),
            (Err(_), Ok(m)) => core::array::from_fn(|i| (fx[i] - m[i]) / h),
            (Err(_), Err(_)) => [f64::NAN; N],
        };
        for i in 0..N {
            jac[(i, j)] = col[i];
        }
    }
    jac
}

/// Solves `f(x) = 0` from `x0`. Trial points where `f` fails count as
/// infinitely bad and trigger step halving.
pub fn solve<const N: usize, F>(mut f: F, x0: [f64; N], opts: NewtonOptions) -> core::result::Result<Root<N>, Root<N>>
where
    F: FnMut(&[f64; N]) -> Result<[f64; N]>,
{
    let mut x = x0;
    let mut fx = match f(&x) {
        Ok(v) => v,
        Err(_) => return Err(Root { x, residual: f64::INFINITY, iterations: 0 }),
    };
    let mut r = norm(&fx);
    for it in 0..opts.max_iter {
        if r < opts.tol {
            return Ok(Root { x, residual: r, iterations: it });
        }
        let jac = jacobian(&mut f, &x, &fx, &opts);
        let rhs = DVector::<f64>::from_column_slice(&fx);
        let Some(dx) = jac.lu().solve(&rhs) else {
            return Err(Root { x, residual: r, iterations: it });
        };
        if dx.iter().any(|v| !v.is_finite()) {
            return Err(Root { x, residual: r, iterations: it });
        }
        let mut lambda = 1.0;
        let mut accepted = false;
        while lambda > 1e-8 {
            let trial: [f64; N] = core::array::from_fn(|i| x[i] - lambda * dx[i]);
            if let Ok(ft) = f(&trial) {
                let rt = norm(&ft);
                if rt < (1.0 - 1e-4 * lambda) * r {
                    x = trial;
                    fx = ft;
                    r = rt;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            let root = Root { x, residual: r, iterations: it };
            return if r < opts.tol { Ok(root) } else { Err(root) };
        }
    }
    let root = Root { x, residual: r, iterations: opts.max_iter };
    if r < opts.tol {
        Ok(root)
    } else {
        Err(root)
    }
}

/// Runs [`solve`] from each seed in order and returns the first converged
/// root. On total failure reports the smallest residual seen.
pub fn solve_multistart<const N: usize, F, I>(
    system: &'static str,
    mut f: F,
    seeds: I,
    opts: NewtonOptions,
) -> Result<Root<N>>
where
    F: FnMut(&[f64; N]) -> Result<[f64; N]>,
    I: IntoIterator<Item = [f64; N]>,
{
    let mut best = f64::INFINITY;
    let mut tried = 0;
    for seed in seeds {
        tried += 1;
        match solve(&mut f, seed, opts) {
            Ok(root) => return Ok(root),
            Err(partial) => best = best.min(partial.residual),
        }
    }
    Err(Error::NoConvergence { system, best_residual: best, seeds_tried: tried })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_circle_line_intersection() {
        let f = |x: &[f64; 2]| Ok([x[0] * x[0] + x[1] * x[1] - 1.0, x[0] - x[1]]);
        let root = solve(f, [1.0, 0.2], NewtonOptions::default()).unwrap();
        let h = core::f64::consts::FRAC_1_SQRT_2;
        assert!((root.x[0] - h).abs() < 1e-10 && (root.x[1] - h).abs() < 1e-10);
    }

    #[test]
    fn damping_rescues_far_seed() {
        // atan has a tiny basin for undamped Newton
        let f = |x: &[f64; 1]| Ok([libm::atan(x[0])]);
        let root = solve(f, [5.0], NewtonOptions::default()).unwrap();
        assert!(root.x[0].abs() < 1e-10);
    }

    #[test]
    fn multistart_reports_failure() {
        let f = |x: &[f64; 1]| Ok([x[0] * x[0] + 1.0]);
        let err = solve_multistart("no-root", f, [[0.5], [2.0]], NewtonOptions::default()).unwrap_err();
        match err {
            Error::NoConvergence { system, seeds_tried, best_residual } => {
                assert_eq!(system, "no-root");
                assert_eq!(seeds_tried, 2);
                assert!(best_residual >= 1.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn failing_region_is_avoided() {
        // f undefined for x <= 0; full Newton step from 3 would jump there
        let f = |x: &[f64; 1]| if x[0] <= 0.0 { Err(Error::Domain("x <= 0")) } else { Ok([libm::log(x[0]) - 0.1]) };
        let root = solve(f, [3.0], NewtonOptions::default()).unwrap();
        assert!((root.x[0] - libm::exp(0.1)).abs() < 1e-10);
    }
}
