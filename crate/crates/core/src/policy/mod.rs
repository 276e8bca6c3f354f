//! Optimal testing policies for the deterministic model.
//!
//! - [`threshold`]: keep undetected infected at the cap by testing exactly as
//!   fast as they are created, until herd immunity.
//! - [`switching`]: the capped-rate schedule that keeps all infected (detected
//!   or not) under the cap.
//! - [`constant`]: the cheapest constant rate that keeps all infected under the
//!   cap.

pub mod constant;
pub mod switching;
pub mod threshold;

pub use constant::{solve_constant_rate, ConstantRateSolution};
pub use switching::{solve_switching, SwitchingArcs, SwitchingPolicy};
pub use threshold::{threshold_rate, Phase, ThresholdPolicy};

use crate::model::{BetaSignal, ConstantRate, FractionState, Integrator, Trajectory};
use crate::params::Params;
use crate::{Error, Result};

/// Rate that holds `i_u + i_d` constant once it sits at the cap with zero
/// derivative. Unclamped; callers clamp to `[0, theta_max]`.
pub fn plateau_rate(state: &FractionState, params: &Params) -> f64 {
    params.theta_for_exit_rate(params.beta * (state.s - state.iu))
}

/// `d(i_u + i_d)/dt` at a constant transmission rate. Independent of testing.
#[inline]
pub(crate) fn infected_slope(x: &FractionState, beta: f64, gamma: f64) -> f64 {
    beta * x.s * x.iu - gamma * x.infected()
}

/// Any of the three policy families, for [`policy_cost`].
#[derive(Debug, Clone, Copy)]
pub enum PolicyRef<'a> {
    Threshold(&'a ThresholdPolicy),
    Switching(&'a SwitchingPolicy),
    Constant(&'a ConstantRateSolution),
}

/// Tests per capita, `integral theta dt`, over `[0, horizon]`.
///
/// The switching schedule uses its closed form when the horizon covers the
/// whole schedule; everything else integrates the realized rate.
pub fn policy_cost(policy: PolicyRef<'_>, params: &Params, horizon: f64) -> Result<f64> {
    match policy {
        PolicyRef::Threshold(p) => Ok(p.cost_until(horizon)),
        PolicyRef::Switching(p) => match &p.arcs {
            None => Ok(0.0),
            Some(arcs) if horizon >= arcs.t_d => Ok(p.cost()),
            Some(_) => Ok(p.replay(params, horizon, crate::model::DEFAULT_STEP)?.cost),
        },
        PolicyRef::Constant(c) => Ok(c.theta_const * horizon.max(0.0)),
    }
}

/// Highest point of `i_u + i_d` reached from `(t0, x0)` under a constant rate
/// and constant transmission.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Peak {
    pub t: f64,
    pub state: FractionState,
    pub value: f64,
}

/// Follows the constant-rate trajectory until `i_u + i_d` can no longer
/// increase (it is falling while `i_u` is falling) and reports the largest
/// value seen. Interior maxima are located by event bisection.
pub(crate) fn total_infected_peak(
    x0: &FractionState,
    t0: f64,
    theta: f64,
    params: &Params,
    step: f64,
    max_days: f64,
) -> Result<Peak> {
    let beta = BetaSignal::Constant(params.beta);
    let integ = Integrator::new(params, &beta, step);
    let sched = ConstantRate(theta);
    let exit = params.exit_rate(theta);
    let (b, g) = (params.beta, params.gamma);
    let mut best = Peak { t: t0, state: *x0, value: x0.infected() };
    let mut traj = Trajectory::starting_at(t0, *x0, theta);
    let t_stop = t0 + max_days;
    loop {
        let p = *traj.last();
        let q = infected_slope(&p.state, b, g);
        if q > 0.0 {
            let falling = |_t: f64, x: &FractionState| -infected_slope(x, b, g);
            match integ.extend(&mut traj, &sched, t_stop, Some(&falling))? {
                Some(_) => {
                    let top = *traj.last();
                    if top.state.infected() > best.value {
                        best = Peak { t: top.t, state: top.state, value: top.state.infected() };
                    }
                }
                None => return Err(Error::Domain("peak of infected not reached within the search window")),
            }
        } else if b * p.state.s <= exit || p.state.iu <= 0.0 {
            return Ok(best);
        } else {
            if p.t >= t_stop {
                return Err(Error::Domain("peak of infected not reached within the search window"));
            }
            integ.extend(&mut traj, &sched, (p.t + step).min(t_stop), None)?;
            let x = traj.last();
            if x.state.infected() > best.value {
                best = Peak { t: x.t, state: x.state, value: x.state.infected() };
            }
        }
        // long searches only need the tail
        if traj.len() > 4096 {
            let tail = *traj.last();
            traj = Trajectory::starting_at(tail.t, tail.state, theta);
        }
    }
}

/// Bisection for the root of a decreasing function on `[lo, hi]` given
/// `f(lo) > 0 > f(hi)`.
pub(crate) fn bisect_decreasing<F>(mut f: F, mut lo: f64, mut hi: f64, x_tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    for _ in 0..200 {
        if hi - lo <= x_tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if f(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plateau_rate_hand_value() {
        let p = Params::standard().with_eta(1.0);
        let x = FractionState::new(0.5, 0.01, 0.09, 0.0);
        assert!((plateau_rate(&x, &p) - 0.035_571_428_571).abs() < 1e-9);
    }

    #[test]
    fn plateau_rate_zero_on_boundary() {
        let p = Params::standard();
        let s = 0.01 + (p.gamma + p.kappa) / p.beta;
        assert!(plateau_rate(&FractionState::new(s, 0.01, 0.0, 0.0), &p).abs() < 1e-15);
    }

    #[test]
    fn peak_of_untested_epidemic() {
        let p = Params::standard().with_eta(1.0);
        let x0 = FractionState::initial(0.999, 0.001);
        let peak = total_infected_peak(&x0, 0.0, 0.0, &p, 0.01, 2000.0).unwrap();
        assert!(peak.value > 0.2 && peak.value < 0.6);
        assert!(infected_slope(&peak.state, p.beta, p.gamma).abs() < 1e-10);
    }
}
