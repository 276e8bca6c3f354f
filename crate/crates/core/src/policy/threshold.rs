//! Optimal policy when only undetected infected are capped.
//!
//! No testing until `i_u` reaches the cap, then `theta = (beta(t) s - gamma) / eta`,
//! which freezes `i_u`, until `beta(t) s = gamma`; no testing afterwards. This
//! requires `kappa = theta_b = 0`.

use crate::math;
use crate::model::{BetaSignal, FractionState, Integrator, Trajectory};
use crate::params::Params;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Before `i_u` first reaches the cap.
    Free,
    /// Riding the cap.
    Plateau,
    /// After herd immunity.
    Done,
}

/// Rate prescribed in `phase`: `(beta_now s - gamma) / eta` on the plateau
/// (never negative), zero otherwise.
pub fn threshold_rate(state: &FractionState, beta_now: f64, params: &Params, phase: Phase) -> f64 {
    match phase {
        Phase::Plateau => ((beta_now * state.s - params.gamma) / params.eta).max(0.0),
        Phase::Free | Phase::Done => 0.0,
    }
}

#[derive(Debug, Clone)]
pub struct ThresholdPolicy {
    pub i_max: f64,
    /// First time `i_u = i_max`; `None` if the cap is never reached.
    pub t_hit: Option<f64>,
    /// First time `beta(t) s = gamma` after `t_hit`; `None` if not reached
    /// within the horizon.
    pub t_herd: Option<f64>,
    /// Rate just after `t_hit` (the recorded point at `t_hit` carries the
    /// rate just before it).
    pub theta_after_hit: f64,
    /// Replay of the policy on the deterministic model.
    pub trajectory: Trajectory,
}

impl ThresholdPolicy {
    /// Builds the policy by integrating the model and locating the phase
    /// boundaries by event bisection.
    pub fn solve(
        x0: &FractionState,
        i_max: f64,
        beta: &BetaSignal,
        params: &Params,
        horizon: f64,
        step: f64,
    ) -> Result<Self> {
        params.validate()?;
        beta.validate()?;
        x0.validate()?;
        if params.kappa != 0.0 || params.theta_b != 0.0 {
            return Err(Error::Domain("the undetected-cap policy assumes kappa = theta_b = 0"));
        }
        if !(params.eta > 0.0) {
            return Err(Error::Domain("eta must be positive"));
        }
        if !(i_max > 0.0) || x0.iu > i_max {
            return Err(Error::Infeasible("initial undetected infected exceed the cap"));
        }
        let integ = Integrator::new(params, beta, step);
        let x0 = FractionState::new(x0.s, x0.iu, x0.id, x0.ru);
        let mut trajectory = Trajectory::starting_at(0.0, x0, 0.0);
        let free = |_t: f64, _x: &FractionState| 0.0;
        let hits = |_t: f64, x: &FractionState| x.iu - i_max;
        let t_hit = integ.extend(&mut trajectory, &free, horizon, Some(&hits))?;
        let Some(t_hit) = t_hit else {
            return Ok(ThresholdPolicy { i_max, t_hit: None, t_herd: None, theta_after_hit: 0.0, trajectory });
        };
        let g = params.gamma;
        let herd = |t: f64, x: &FractionState| g - beta.value(t) * x.s;
        if herd(t_hit, &trajectory.last().state) >= 0.0 {
            // the cap is touched exactly at herd immunity: nothing to do
            integ.extend(&mut trajectory, &free, horizon, None)?;
            return Ok(ThresholdPolicy { i_max, t_hit: Some(t_hit), t_herd: Some(t_hit), theta_after_hit: 0.0, trajectory });
        }
        let riding = |t: f64, x: &FractionState| threshold_rate(x, beta.value(t), params, Phase::Plateau);
        let theta_after_hit = riding(t_hit, &trajectory.last().state);
        let t_herd = integ.extend(&mut trajectory, &riding, horizon, Some(&herd))?;
        if let Some(t) = t_herd {
            if let Some(last) = trajectory.points.last_mut() {
                last.theta = 0.0;
            }
            integ.extend(&mut trajectory, &free, horizon.max(t), None)?;
        }
        Ok(ThresholdPolicy { i_max, t_hit: Some(t_hit), t_herd, theta_after_hit, trajectory })
    }

    /// Phase at time `t`.
    pub fn phase(&self, t: f64) -> Phase {
        match (self.t_hit, self.t_herd) {
            (Some(hit), _) if t < hit => Phase::Free,
            (None, _) => Phase::Free,
            (Some(_), Some(herd)) if t >= herd => Phase::Done,
            _ => Phase::Plateau,
        }
    }

    /// Trapezoidal integral of the realized rate up to `horizon`.
    pub fn cost_until(&self, horizon: f64) -> f64 {
        self.trajectory
            .points
            .windows(2)
            .take_while(|w| w[0].t < horizon)
            .map(|w| {
                let th0 = if Some(w[0].t) == self.t_hit { self.theta_after_hit } else { w[0].theta };
                let t1 = w[1].t.min(horizon);
                let frac = (t1 - w[0].t) / (w[1].t - w[0].t);
                let th1 = th0 + frac * (w[1].theta - th0);
                0.5 * (th0 + th1) * (t1 - w[0].t)
            })
            .sum()
    }

    /// Closed-form cost for constant `beta`: on the plateau `s` decays as
    /// `s_hit exp(-beta i_max t)` until `beta s = gamma`.
    pub fn closed_form_cost(&self, params: &Params) -> Option<f64> {
        let t_hit = self.t_hit?;
        let s_hit = self.trajectory.state_at(t_hit).s;
        let (b, g, i) = (params.beta, params.gamma, self.i_max);
        if b * s_hit <= g {
            return Some(0.0);
        }
        let tau = math::ln(b * s_hit / g) / (b * i);
        Some((s_hit * (1.0 - math::exp(-b * i * tau)) / i - g * tau) / params.eta)
    }
}
