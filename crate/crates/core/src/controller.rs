//! Receding-horizon testing policy and the stochastic closed loop.
//!
//! At each epoch the controller picks the constant rate that would bring the
//! deterministic model to `i_u + i_d = i_max` with zero slope after `H` days,
//! using a trapezoidal estimate of the susceptible depletion. The loop reads
//! exact detected counts, filters them, and holds the resulting rate until
//! the next epoch.

use alloc::vec::Vec;

use rand::Rng;

use crate::estimator::{self, EstimatorState, HistoryRecord, Observation, BETA_WINDOW};
use crate::math;
use crate::model::BetaSignal;
use crate::params::Params;
use crate::stochastic::{CountState, Simulator};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerConfig {
    /// Look-ahead [day].
    pub h: f64,
    pub i_max: f64,
    pub theta_max: f64,
    /// No adaptive testing before this time [day].
    pub t_a: f64,
    pub epoch: f64,
}

impl ControllerConfig {
    /// Three-day look-ahead, daily epochs, active from the start.
    pub fn new(i_max: f64, theta_max: f64) -> Self {
        ControllerConfig { h: 3.0, i_max, theta_max, t_a: 0.0, epoch: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.epoch > 0.0) {
            return Err(Error::Domain("horizon and epoch must be positive"));
        }
        if !(self.i_max > 0.0 && self.i_max < 1.0 && self.theta_max >= 0.0) {
            return Err(Error::Domain("i_max must be in (0, 1) and theta_max nonnegative"));
        }
        Ok(())
    }
}

/// Solution of the look-ahead system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecedingRate {
    /// Unclamped testing rate; 0 when `solved` is false.
    pub theta: f64,
    /// Exit rate from the undetected-infected class implied by `theta`.
    pub exit_rate: f64,
    pub s_h: f64,
    pub iu_h: f64,
    /// False when the trapezoidal step leaves no susceptibles.
    pub solved: bool,
}

/// Look-ahead rate from `(s, i_u)`. The orbit relation between now and
/// `t + H` fixes the exit rate; the zero-slope condition gives
/// `beta s_H i_uH = gamma i_max` and the trapezoid gives `s_H` in closed form.
pub fn receding_rate(s: f64, iu: f64, cfg: &ControllerConfig, params: &Params) -> RecedingRate {
    let none = RecedingRate { theta: 0.0, exit_rate: f64::NAN, s_h: f64::NAN, iu_h: f64::NAN, solved: false };
    if !(s > 0.0) {
        return none;
    }
    let (b, g) = (params.beta, params.gamma);
    let s_h = s - 0.5 * cfg.h * (g * cfg.i_max + b * s * iu);
    if !(s_h > 0.0) {
        return none;
    }
    let iu_h = g * cfg.i_max / (b * s_h);
    let log = math::ln(s_h / s);
    let exit_rate = -b * (s + iu - s_h) / log + g * cfg.i_max / (s_h * log);
    if !exit_rate.is_finite() {
        return none;
    }
    RecedingRate { theta: params.theta_for_exit_rate(exit_rate), exit_rate, s_h, iu_h, solved: true }
}

/// Rate applied at epoch `t`: zero before `t_A`, otherwise the look-ahead
/// rate from the estimate clamped to `[0, theta_max]`.
pub fn control_law(t: f64, est: &EstimatorState, cfg: &ControllerConfig, params: &Params) -> f64 {
    if t < cfg.t_a {
        return 0.0;
    }
    let x = est.fractions();
    let r = receding_rate(x.s, x.iu, cfg, params);
    r.theta.clamp(0.0, cfg.theta_max)
}

#[derive(Debug, Clone, PartialEq)]
pub enum BetaMode {
    /// The plant runs at `params.beta` and the controller knows it.
    Known,
    /// The plant follows the signal; the controller fits `beta` from the
    /// last seven filtered states, starting from `params.beta`.
    Estimated(BetaSignal),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub t: f64,
    pub truth: CountState,
    /// Filtered estimate after this epoch's observation.
    pub estimate: EstimatorState,
    pub beta_hat: f64,
    /// Rate held from `t` to the next epoch.
    pub theta: f64,
    /// Adaptive tests administered up to `t`, in individuals.
    pub tests: f64,
    /// Per-capita cost up to `t`.
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopRecord {
    pub epochs: Vec<EpochRecord>,
    pub absorbed_at: Option<f64>,
    /// `sum (theta + c_ser theta_B) * epoch` over epochs that start with
    /// infected present.
    pub cost: f64,
    pub tests: f64,
}

/// Runs the estimator-controller loop against an exact stochastic path until
/// `horizon`. Cost stops accruing once the path has no infected left.
pub fn closed_loop<R: Rng>(
    x0: CountState,
    cfg: &ControllerConfig,
    params: &Params,
    mode: &BetaMode,
    horizon: f64,
    rng: R,
) -> Result<ClosedLoopRecord> {
    cfg.validate()?;
    let n = x0.n as f64;
    let plant_beta = match mode {
        BetaMode::Known => BetaSignal::Constant(params.beta),
        BetaMode::Estimated(signal) => signal.clone(),
    };
    let mut sim = Simulator::new(x0, *params, plant_beta, rng)?;
    let steps = math::ceil(horizon / cfg.epoch - 1e-9).max(0.0) as usize;
    let mut est = EstimatorState::initial(cfg.i_max);
    let mut beta_hat = params.beta;
    let mut history: Vec<HistoryRecord> = Vec::with_capacity(steps + 1);
    let mut epochs = Vec::with_capacity(steps + 1);
    let (mut cost, mut tests, mut theta_prev) = (0.0, 0.0, 0.0);
    for k in 0..=steps {
        let t = (k as f64 * cfg.epoch).min(horizon);
        let model = params.with_beta(beta_hat);
        if k > 0 {
            let dt = t - est.t;
            est = estimator::predict(&est, theta_prev, dt, &model, n).map_err(|e| e.at_epoch(t))?;
        }
        let truth = sim.state;
        let obs = Observation { t, id: truth.id as f64 / n, rd: truth.rd() as f64 / n };
        est = estimator::update(&est, &obs).map_err(|e| e.at_epoch(t))?;
        if matches!(mode, BetaMode::Estimated(_)) && history.len() >= BETA_WINDOW {
            let fit = estimator::estimate_beta(&history, params, beta_hat).map_err(|e| e.at_epoch(t))?;
            beta_hat = fit.beta_hat;
        }
        let theta = if k < steps { control_law(t, &est, cfg, &params.with_beta(beta_hat)) } else { 0.0 };
        epochs.push(EpochRecord { t, truth, estimate: est, beta_hat, theta, tests, cost });
        history.push(HistoryRecord { state: est.fractions(), t, theta });
        if k == steps {
            break;
        }
        let t_next = ((k + 1) as f64 * cfg.epoch).min(horizon);
        if !truth.is_absorbed() {
            cost += (theta + params.c_ser * params.theta_b) * (t_next - t);
            tests += theta * n * (t_next - t);
        }
        sim.advance(theta, t_next, |_, _, _| {});
        theta_prev = theta;
    }
    Ok(ClosedLoopRecord { epochs, absorbed_at: sim.absorbed_at, cost, tests })
}
