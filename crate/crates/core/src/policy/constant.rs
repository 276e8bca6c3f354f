//! Minimum constant testing rate under the total-infected cap.
//!
//! The cheapest constant rate makes `i_u + i_d` touch the cap tangentially at
//! some time `t_bar`. With `(s_bar, iu_bar, id_bar)` the state there:
//!
//! - `iu_bar + id_bar = i_max`
//! - `beta s_bar iu_bar = gamma i_max` (zero derivative)
//! - `(s_bar, iu_bar)` lies on the constant-rate orbit through `(s0, i0)`
//! - `id_bar` is what the orbit's detection accumulates by `t_bar`
//!
//! The system is solved by damped Newton, seeded by shooting on the rate.

use alloc::vec::Vec;

use super::{bisect_decreasing, total_infected_peak};
use crate::orbit::{orbit_residual, Orbit};
use crate::math;
use crate::model::{FractionState, DEFAULT_STEP};
use crate::newton::{self, NewtonOptions};
use crate::params::Params;
use crate::quadrature::QuadOptions;
use crate::{Error, Result};

/// Search window for the peak of a constant-rate run, days.
const PEAK_WINDOW: f64 = 20_000.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantRateSolution {
    pub theta_const: f64,
    pub s_bar: f64,
    pub iu_bar: f64,
    pub id_bar: f64,
    /// Time of the tangential touch.
    pub t_bar: f64,
    /// Max-norm residual of the tangency system at the returned root (zero
    /// when no testing is needed).
    pub residual: f64,
}

/// Residuals of the tangency system at `x = (s_bar, iu_bar, id_bar, theta)`.
pub fn tangency_residuals(x: &[f64; 4], s0: f64, i0: f64, i_max: f64, params: &Params) -> Result<[f64; 4]> {
    let [s, iu, id, theta] = *x;
    if !(theta >= 0.0) {
        return Err(Error::Domain("negative testing rate"));
    }
    let orbit = Orbit::new(theta, s0, i0, params)?;
    let opts = QuadOptions::tight();
    let dt = orbit.elapsed(s, opts)?;
    let j = orbit.transfer(s, opts)?;
    Ok([
        iu + id - i_max,
        params.beta * s * iu - params.gamma * i_max,
        orbit_residual(theta, s0, i0, s, iu, params)?,
        id - params.detection_rate(theta) * math::exp(-params.gamma * dt) * j,
    ])
}

/// Solves for the minimum constant rate keeping `i_u + i_d <= i_max` from
/// `s = s0`, `i_u = i0`, `i_d = 0`.
///
/// If the untested epidemic never reaches the cap the rate is zero and the
/// reported state is the untested peak.
pub fn solve_constant_rate(s0: f64, i0: f64, i_max: f64, params: &Params) -> Result<ConstantRateSolution> {
    params.validate()?;
    if !(params.eta > 0.0) {
        return Err(Error::Domain("eta must be positive"));
    }
    if !(s0 > 0.0) || !(i0 > 0.0) || s0 + i0 > 1.0 + 1e-12 {
        return Err(Error::Domain("need s0 > 0, i0 > 0, s0 + i0 <= 1"));
    }
    if i0 >= i_max {
        return Err(Error::Infeasible("initial infected at or above the cap"));
    }
    let x0 = FractionState::initial(s0, i0);
    let peak_at = |theta: f64| total_infected_peak(&x0, 0.0, theta, params, DEFAULT_STEP, PEAK_WINDOW);

    let free = peak_at(0.0)?;
    if free.value <= i_max {
        return Ok(ConstantRateSolution {
            theta_const: 0.0,
            s_bar: free.state.s,
            iu_bar: free.state.iu,
            id_bar: free.state.id,
            t_bar: free.t,
            residual: 0.0,
        });
    }

    let mut hi = params.theta_for_exit_rate(params.beta * s0).max(0.05);
    while peak_at(hi)?.value > i_max {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::Infeasible("no constant rate keeps infected under the cap"));
        }
    }
    let theta_seed = bisect_decreasing(|th| Ok(peak_at(th)?.value - i_max), 0.0, hi, 1e-12)?;
    let touch = peak_at(theta_seed)?;

    let system = |x: &[f64; 4]| tangency_residuals(x, s0, i0, i_max, params);
    let mut seeds: Vec<[f64; 4]> = alloc::vec![[touch.state.s, touch.state.iu, touch.state.id, theta_seed]];
    let s_lo = params.gamma / params.beta;
    for a in 1..4 {
        for b in 1..4 {
            let s = s_lo + (s0 - s_lo) * a as f64 / 4.0;
            let iu = i_max * b as f64 / 4.0;
            seeds.push([s, iu, i_max - iu, theta_seed]);
        }
    }
    let root = newton::solve_multistart("constant-rate tangency", system, seeds, NewtonOptions::default())?;
    let [s_bar, iu_bar, id_bar, theta_const] = root.x;
    let t_bar = Orbit::new(theta_const, s0, i0, params)?.elapsed(s_bar, QuadOptions::tight())?;
    Ok(ConstantRateSolution { theta_const, s_bar, iu_bar, id_bar, t_bar, residual: root.residual })
}
