//! Replicate-parallel closed-loop ensembles and their per-replicate analysis.

use adaptest_core::controller::{closed_loop, control_law, ClosedLoopRecord, ControllerConfig};
use adaptest_core::estimator::EstimatorState;
use adaptest_core::model::{FractionState, Integrator, Trajectory};
use adaptest_core::policy::{solve_constant_rate, solve_switching};
use adaptest_core::stochastic::{gillespie_run, replicate_rng, CountState};
use adaptest_core::Params;
use rayon::prelude::*;

use crate::config::{Activation, Scenario};
use crate::error::AppError;

/// Half-width multiplier of a two-sided 95% normal interval.
pub const Z95: f64 = 1.959963984540054;

/// Runs `f(0..n)` on `jobs` threads and returns results in index order.
pub fn par_map<T, F>(jobs: usize, n: usize, f: F) -> Result<Vec<T>, AppError>
where
    T: Send,
    F: Fn(usize) -> Result<T, AppError> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| AppError::Usage(format!("--jobs: {e}")))?;
    pool.install(|| (0..n).into_par_iter().map(&f).collect())
}

/// Activation time for the receding-horizon controller. Under
/// `activation = "switching"` it is the start of full-rate testing in the
/// deterministic switching schedule; when that schedule needs no testing
/// the controller never switches on.
pub fn activation_time(sc: &Scenario, params: &Params) -> Result<f64, AppError> {
    match sc.config.controller.activation {
        Activation::Always => Ok(0.0),
        Activation::Switching => {
            let (s0, i0) = sc.initial_fractions();
            let pol = solve_switching(s0, i0, sc.i_max, params.theta_max, params)?;
            Ok(pol.arcs.map_or(sc.horizon, |a| a.t_a))
        }
    }
}

pub fn controller_for(sc: &Scenario, params: &Params) -> Result<ControllerConfig, AppError> {
    let mut cfg = sc.controller();
    cfg.t_a = activation_time(sc, params)?;
    Ok(cfg)
}

/// Noise-free closed loop: the control law reads the exact state at every
/// epoch and the model is integrated in between.
#[derive(Debug, Clone)]
pub struct DeterministicLoop {
    pub trajectory: Trajectory,
    /// `(t, state, theta)` at each epoch; the last entry closes the horizon.
    pub epochs: Vec<(f64, FractionState, f64)>,
    pub cost: f64,
}

impl DeterministicLoop {
    /// Epochs on which the loop holds `i_u + i_d` at the cap: from the first
    /// epoch within `tol` of it until testing stops.
    pub fn plateau(&self, i_max: f64, tol: f64) -> Option<(f64, f64)> {
        let start = self.epochs.iter().position(|(_, x, _)| (x.infected() - i_max).abs() < tol)?;
        let end = self.epochs[start..].iter().position(|(_, _, th)| *th == 0.0)? + start;
        (end > start).then(|| (self.epochs[start].0, self.epochs[end - 1].0))
    }
}

pub fn deterministic_loop(sc: &Scenario, params: &Params) -> Result<DeterministicLoop, AppError> {
    let cfg = controller_for(sc, params)?;
    let (s0, i0) = sc.initial_fractions();
    let integrator = Integrator::new(params, &sc.beta, sc.step);
    let mut traj = Trajectory::starting_at(0.0, FractionState::initial(s0, i0), 0.0);
    let mut epochs = Vec::new();
    let mut cost = 0.0;
    let steps = (sc.horizon / cfg.epoch - 1e-9).ceil().max(1.0) as usize;
    for k in 0..steps {
        let t = k as f64 * cfg.epoch;
        let x = traj.last().state;
        let theta = control_law(t, &EstimatorState::exact(&x, t), &cfg, params);
        let t_next = ((k + 1) as f64 * cfg.epoch).min(sc.horizon);
        if let Some(last) = traj.points.last_mut() {
            last.theta = theta;
        }
        integrator.extend(&mut traj, &move |_: f64, _: &FractionState| theta, t_next, None)?;
        epochs.push((t, x, theta));
        if x.iu > 0.0 || x.id > 0.0 {
            cost += (theta + params.c_ser * params.theta_b) * (t_next - t);
        }
    }
    epochs.push((traj.last().t, traj.last().state, 0.0));
    Ok(DeterministicLoop { trajectory: traj, epochs, cost })
}

/// Per-replicate numbers derived from a closed-loop record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicateSummary {
    pub adaptive: f64,
    pub serology: f64,
    pub total: f64,
    /// Largest infected count seen at an epoch.
    pub peak: u64,
    /// Share of epochs with infected present where the true `i_u` lies in
    /// the filter's 95% band.
    pub coverage: f64,
    pub absorbed_at: Option<f64>,
}

/// Splits the cost of `rec` into adaptive and serology parts. The two are
/// accumulated separately from the epochs and must add up to the loop's own
/// total.
pub fn summarize_replicate(rec: &ClosedLoopRecord, params: &Params) -> Result<ReplicateSummary, AppError> {
    let (mut adaptive, mut serology) = (0.0, 0.0);
    for w in rec.epochs.windows(2) {
        if !w[0].truth.is_absorbed() {
            let dt = w[1].t - w[0].t;
            adaptive += w[0].theta * dt;
            serology += params.c_ser * params.theta_b * dt;
        }
    }
    if (adaptive + serology - rec.cost).abs() > 1e-9 * rec.cost.max(1.0) {
        return Err(AppError::Invariant(format!(
            "cost split {adaptive} + {serology} does not add up to {}",
            rec.cost
        )));
    }
    let n = rec.epochs.first().map_or(1, |e| e.truth.n) as f64;
    let active: Vec<_> = rec.epochs.iter().filter(|e| !e.truth.is_absorbed()).collect();
    let inside = active
        .iter()
        .filter(|e| {
            let sd = e.estimate.p[(1, 1)].max(0.0).sqrt();
            (e.truth.iu as f64 / n - e.estimate.x[1]).abs() <= Z95 * sd
        })
        .count();
    Ok(ReplicateSummary {
        adaptive,
        serology,
        total: rec.cost,
        peak: rec.epochs.iter().map(|e| e.truth.infected()).max().unwrap_or(0),
        coverage: if active.is_empty() { 1.0 } else { inside as f64 / active.len() as f64 },
        absorbed_at: rec.absorbed_at,
    })
}

/// Closed-loop replicates under `params`; replicate `r` draws from
/// `replicate_rng(seed, r)`.
pub fn closed_loop_ensemble(sc: &Scenario, params: &Params, jobs: usize) -> Result<Vec<ClosedLoopRecord>, AppError> {
    let cfg = controller_for(sc, params)?;
    let x0 = CountState::outbreak(sc.n, sc.i0)?;
    par_map(jobs, sc.replicates, |r| {
        Ok(closed_loop(x0, &cfg, params, &sc.beta_mode, sc.horizon, replicate_rng(sc.seed, r as u64))?)
    })
}

/// The baseline arm: the smallest constant molecular rate that keeps the
/// deterministic `i_u + i_d` under the cap, without baseline serology.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantArm {
    pub theta_const: f64,
    /// Per-replicate `theta_const` times the time with infected present.
    pub costs: Vec<f64>,
    pub peaks: Vec<u64>,
}

pub fn constant_arm(sc: &Scenario, params: &Params, jobs: usize) -> Result<ConstantArm, AppError> {
    let p = params.with_theta_b(0.0);
    let (s0, i0) = sc.initial_fractions();
    let theta = solve_constant_rate(s0, i0, sc.i_max, &p)?.theta_const;
    let x0 = CountState::outbreak(sc.n, sc.i0)?;
    let epoch = sc.config.controller.epoch;
    let runs = par_map(jobs, sc.replicates, |r| {
        let run = gillespie_run(x0, |_, _| theta, &p, &sc.beta, sc.horizon, epoch, replicate_rng(sc.seed, r as u64))?;
        let mut cost = 0.0;
        for w in run.samples.windows(2) {
            if !w[0].state.is_absorbed() {
                cost += theta * (w[1].t - w[0].t);
            }
        }
        let peak = run.samples.iter().map(|s| s.state.infected()).max().unwrap_or(0);
        Ok((cost, peak))
    })?;
    Ok(ConstantArm { theta_const: theta, costs: runs.iter().map(|r| r.0).collect(), peaks: runs.iter().map(|r| r.1).collect() })
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation.
pub fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let k = s.len() / 2;
    if s.len() % 2 == 1 {
        s[k]
    } else {
        0.5 * (s[k - 1] + s[k])
    }
}
