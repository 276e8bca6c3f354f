//! Capped-rate schedule keeping all infected under the cap.
//!
//! The schedule has five arcs:
//!
//! 1. `[0, t_A]`: no testing.
//! 2. `[t_A, t_B]`: `theta_max`, chosen so `i_u + i_d` reaches the cap with
//!    zero slope at `t_B`.
//! 3. `[t_B, t_C]`: the plateau law, which holds `i_u + i_d` at the cap. Here
//!    `i_u = 1 / (1 / i_uB - beta tau)` and `s = s_B - gamma i_max tau`.
//! 4. `[t_C, t_D]`: `theta_max` again.
//! 5. after `t_D`: no testing; `i_u + i_d` rises once more and touches the cap
//!    tangentially at `t_E`.
//!
//! Arcs 1-2 are fixed by four equations in `(s_A, i_uA, s_B, i_uB)`; for a
//! given plateau length `tau3` arcs 4-5 are fixed by four equations in
//! `(s_D, i_uD, s_E, i_uE)`. The plateau length minimizes the total cost by
//! golden-section search. Synthesis assumes no baseline serology.

use super::{bisect_decreasing, plateau_rate, total_infected_peak};
use crate::golden;
use crate::orbit::{orbit_residual, Orbit};
use crate::math;
use crate::model::{BetaSignal, ConstantRate, FractionState, Integrator, Schedule, Trajectory, DEFAULT_STEP};
use crate::newton::{self, NewtonOptions};
use crate::params::Params;
use crate::quadrature::QuadOptions;
use crate::{Error, Result};

const PEAK_WINDOW: f64 = 20_000.0;
const TAU3_TOL: f64 = 1e-6;

/// Switching times and boundary states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchingArcs {
    pub t_a: f64,
    pub t_b: f64,
    pub t_c: f64,
    pub t_d: f64,
    /// Tangential re-touch after testing stops.
    pub t_e: f64,
    pub a: FractionState,
    pub b: FractionState,
    pub c: FractionState,
    pub d: FractionState,
    pub e: FractionState,
    pub tau3: f64,
    /// Longest feasible plateau: the plateau rate reaches zero there.
    pub tau3_bar: f64,
    /// Max-norm residual of the `A`/`B` system.
    pub residual_ab: f64,
    /// Max-norm residual of the `D`/`E` system (zero when `tau3 = tau3_bar`).
    pub residual_de: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingPolicy {
    pub i_max: f64,
    pub theta_max: f64,
    /// Parameters used for synthesis (baseline serology removed).
    pub params: Params,
    pub x0: FractionState,
    /// `None` when the untested epidemic stays under the cap.
    pub arcs: Option<SwitchingArcs>,
}

/// Realized replay of a schedule.
#[derive(Debug, Clone)]
pub struct Replay {
    pub trajectory: Trajectory,
    /// Trapezoidal `integral theta dt`, with rate jumps handled exactly.
    pub cost: f64,
}

impl SwitchingPolicy {
    /// Adaptive rate at time `t` in state `x`.
    pub fn rate(&self, t: f64, x: &FractionState) -> f64 {
        let Some(a) = &self.arcs else { return 0.0 };
        if t < a.t_a || t >= a.t_d {
            0.0
        } else if t < a.t_b || t >= a.t_c {
            self.theta_max
        } else {
            plateau_rate(x, &self.params).clamp(0.0, self.theta_max)
        }
    }

    /// Closed-form total cost
    /// `theta_max (tau2 + tau4) + plateau_cost(tau3)`.
    pub fn cost(&self) -> f64 {
        match &self.arcs {
            None => 0.0,
            Some(a) => {
                self.theta_max * ((a.t_b - a.t_a) + (a.t_d - a.t_c))
                    + plateau_cost(&a.b, a.tau3, self.i_max, &self.params)
            }
        }
    }

    /// Cost of the schedule with the plateau cut to `tau3`, re-solving the
    /// final arcs. Infinite when the second capped arc would have to run
    /// longer than ten times the full plateau's cost in days at `theta_max`.
    pub fn cost_at(&self, tau3: f64) -> Result<f64> {
        let Some(a) = &self.arcs else { return Ok(0.0) };
        let synth = Synthesis::new(&self.params, self.i_max, self.theta_max);
        let cap = 10.0 * plateau_cost(&a.b, a.tau3_bar, self.i_max, &self.params) / self.theta_max;
        match synth.tail(&a.b, a.t_b, tau3.clamp(0.0, a.tau3_bar), a.tau3_bar, None, cap) {
            Ok(tail) => Ok(self.theta_max * (a.t_b - a.t_a) + tail.cost),
            Err(Error::Infeasible(_)) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    }

    /// Integrates the schedule from `x0` with the given model parameters.
    /// Each arc is its own integration segment ending exactly on its
    /// switching time.
    pub fn replay(&self, params: &Params, horizon: f64, step: f64) -> Result<Replay> {
        let beta = BetaSignal::Constant(params.beta);
        let integ = Integrator::new(params, &beta, step);
        let mut trajectory = Trajectory::starting_at(0.0, self.x0, self.rate(0.0, &self.x0));
        let mut cost = 0.0;
        let Some(a) = self.arcs else {
            integ.extend(&mut trajectory, &ConstantRate(0.0), horizon, None)?;
            return Ok(Replay { trajectory, cost });
        };
        let th = self.theta_max;
        let synth = self.params;
        let plateau = move |_t: f64, x: &FractionState| plateau_rate(x, &synth).clamp(0.0, th);
        let arcs: [(&dyn Schedule, f64); 5] = [
            (&ConstantRate(0.0), a.t_a),
            (&ConstantRate(th), a.t_b),
            (&plateau, a.t_c),
            (&ConstantRate(th), a.t_d),
            (&ConstantRate(0.0), horizon.max(a.t_d)),
        ];
        for (sched, t_end) in arcs {
            let t_end = t_end.min(horizon.max(a.t_d));
            let start = trajectory.len() - 1;
            let p0 = *trajectory.last();
            integ.extend(&mut trajectory, sched, t_end, None)?;
            let mut prev = (p0.t, sched.rate(p0.t, &p0.state));
            for p in &trajectory.points[start + 1..] {
                cost += 0.5 * (prev.1 + p.theta) * (p.t - prev.0);
                prev = (p.t, p.theta);
            }
        }
        Ok(Replay { trajectory, cost })
    }
}

/// Closed-form plateau cost
/// `[tau (beta s_B - gamma - kappa - (gamma/2) beta i_max tau) + ln(1 - beta i_uB tau)] / eta`.
pub fn plateau_cost(b: &FractionState, tau3: f64, i_max: f64, params: &Params) -> f64 {
    if tau3 <= 0.0 {
        return 0.0;
    }
    let (be, g) = (params.beta, params.gamma);
    let base = g + params.kappa + params.theta_b * params.eta_bi;
    (tau3 * (be * b.s - base - 0.5 * g * be * i_max * tau3) + math::ln_1p(-be * b.iu * tau3)) / params.eta
}

/// Plateau state `tau` days after `b`.
fn plateau_state(b: &FractionState, tau: f64, i_max: f64, params: &Params, ru_b: f64) -> FractionState {
    let s = b.s - params.gamma * i_max * tau;
    let iu = 1.0 / (1.0 / b.iu - params.beta * tau);
    FractionState::new(s, iu, i_max - iu, ru_b + params.gamma / params.beta * math::ln(b.s / s))
}

struct Tail {
    c: FractionState,
    d: FractionState,
    e: FractionState,
    t_d: f64,
    t_e: f64,
    cost: f64,
    residual: f64,
    root: [f64; 4],
}

struct Synthesis<'a> {
    params: &'a Params,
    i_max: f64,
    theta_max: f64,
    opts: QuadOptions,
}

impl<'a> Synthesis<'a> {
    fn new(params: &'a Params, i_max: f64, theta_max: f64) -> Self {
        Synthesis { params, i_max, theta_max, opts: QuadOptions { abs_tol: 1e-13, rel_tol: 1e-11, max_intervals: 4000 } }
    }

    /// `i_d` after following the `theta` orbit from `(s, iu, id)` down to
    /// `s_end`, with the elapsed time.
    fn carry_id(&self, theta: f64, s: f64, iu: f64, id: f64, s_end: f64) -> Result<(f64, f64)> {
        let orbit = Orbit::new(theta, s, iu, self.params)?;
        let dt = orbit.elapsed(s_end, self.opts)?;
        let j = orbit.transfer(s_end, self.opts)?;
        Ok(((id + self.params.detection_rate(theta) * j) * math::exp(-self.params.gamma * dt), dt))
    }

    fn ab_residuals(&self, x0: &FractionState, x: &[f64; 4]) -> Result<[f64; 4]> {
        let [sa, iua, sb, iub] = *x;
        let p = self.params;
        let (ida, _) = self.carry_id(0.0, x0.s, x0.iu, x0.id, sa)?;
        let (idb, _) = self.carry_id(self.theta_max, sa, iua, ida, sb)?;
        Ok([
            orbit_residual(0.0, x0.s, x0.iu, sa, iua, p)?,
            orbit_residual(self.theta_max, sa, iua, sb, iub, p)?,
            p.beta * sb * iub - p.gamma * self.i_max,
            self.i_max - iub - idb,
        ])
    }

    fn de_residuals(&self, c: &FractionState, x: &[f64; 4]) -> Result<[f64; 4]> {
        let [sd, iud, se, iue] = *x;
        let p = self.params;
        let (id_fwd, _) = self.carry_id(self.theta_max, c.s, c.iu, c.id, sd)?;
        // backward from the touch point along the untested orbit
        let orbit = Orbit::new(0.0, sd, iud, p)?;
        let dt = orbit.elapsed(se, self.opts)?;
        let j = orbit.transfer(se, self.opts)?;
        let id_bwd = (self.i_max - iue) * math::exp(p.gamma * dt) - p.detection_rate(0.0) * j;
        Ok([
            orbit_residual(self.theta_max, c.s, c.iu, sd, iud, p)?,
            orbit_residual(0.0, sd, iud, se, iue, p)?,
            p.beta * se * iue - p.gamma * self.i_max,
            id_fwd - id_bwd,
        ])
    }

    fn peak_from(&self, x: &FractionState, theta: f64) -> Result<super::Peak> {
        total_infected_peak(x, 0.0, theta, self.params, DEFAULT_STEP, PEAK_WINDOW)
    }

    /// State after `dt` days at constant `theta` from `x`.
    fn advance(&self, x: &FractionState, theta: f64, dt: f64) -> Result<FractionState> {
        let beta = BetaSignal::Constant(self.params.beta);
        let mut tr = Trajectory::starting_at(0.0, *x, theta);
        Integrator::new(self.params, &beta, DEFAULT_STEP).extend(&mut tr, &ConstantRate(theta), dt, None)?;
        Ok(tr.last().state)
    }

    /// Plateau length at which the plateau rate reaches zero.
    fn tau3_bar(&self, b: &FractionState) -> Result<f64> {
        let p = self.params;
        let limit = (1.0 / (p.beta * b.iu)).min(b.s / (p.gamma * self.i_max));
        let rate = |tau: f64| {
            let s = b.s - p.gamma * self.i_max * tau;
            let iu = 1.0 / (1.0 / b.iu - p.beta * tau);
            Ok(p.beta * (s - iu) - p.gamma - p.kappa - p.theta_b * p.eta_bi)
        };
        if rate(0.0)? <= 0.0 {
            return Ok(0.0);
        }
        bisect_decreasing(rate, 0.0, limit * (1.0 - 1e-12), 1e-13)
    }

    /// `i_u + i_d` overshoot after `tau4` days at `theta_max` from `c` and
    /// no testing afterwards.
    fn late_excess(&self, c: &FractionState, tau4: f64) -> Result<f64> {
        let d = self.advance(c, self.theta_max, tau4)?;
        Ok(self.peak_from(&d, 0.0)?.value - self.i_max)
    }

    /// Shortest plateau whose final capped arc fits within `tau4_cap` days.
    fn tau3_lo(&self, b: &FractionState, tau3_bar: f64, tau4_cap: f64) -> Result<f64> {
        let excess = |tau3: f64| self.late_excess(&plateau_state(b, tau3, self.i_max, self.params, b.ru), tau4_cap);
        if excess(0.0)? <= 0.0 {
            return Ok(0.0);
        }
        bisect_decreasing(excess, 0.0, tau3_bar, 1e-9)
    }

    /// Final arcs for a plateau of length `tau3`: solves the `D`/`E` system
    /// and returns the cost from `t_B` on.
    fn tail(
        &self,
        b: &FractionState,
        t_b: f64,
        tau3: f64,
        tau3_bar: f64,
        warm: Option<[f64; 4]>,
        tau4_cap: f64,
    ) -> Result<Tail> {
        let c = plateau_state(b, tau3, self.i_max, self.params, b.ru);
        let t_c = t_b + tau3;
        let pc = plateau_cost(b, tau3, self.i_max, self.params);
        if tau3 >= tau3_bar {
            return Ok(Tail { c, d: c, e: c, t_d: t_c, t_e: t_c, cost: pc, residual: 0.0, root: [c.s, c.iu, c.s, c.iu] });
        }
        // shooting on the length of the second capped arc, only if the warm
        // start fails
        let shoot = || -> Result<[f64; 4]> {
            if self.late_excess(&c, tau4_cap)? > 0.0 {
                return Err(Error::Infeasible("no final capped arc prevents a late overshoot"));
            }
            let tau4 = bisect_decreasing(|t| self.late_excess(&c, t), 0.0, tau4_cap, 1e-11)?;
            let d = self.advance(&c, self.theta_max, tau4)?;
            let e = self.peak_from(&d, 0.0)?.state;
            Ok([d.s, d.iu, e.s, e.iu])
        };
        let system = |x: &[f64; 4]| self.de_residuals(&c, x);
        let opts = NewtonOptions::default();
        let warm_root = warm.and_then(|w| newton::solve(system, w, opts).ok());
        let root = match warm_root {
            Some(r) => r,
            None => {
                let seed = shoot()?;
                newton::solve_multistart("final capped arc (D/E)", system, [seed], opts)?
            }
        };
        let [sd, iud, se, iue] = root.x;
        let (idd, tau4) = self.carry_id(self.theta_max, c.s, c.iu, c.id, sd)?;
        let (ide, tau5) = self.carry_id(0.0, sd, iud, idd, se)?;
        let ru = |s: f64| c.ru + self.params.gamma / self.params.beta * math::ln(c.s / s);
        let d = FractionState::new(sd, iud, idd, ru(sd));
        let e = FractionState::new(se, iue, ide, ru(se));
        Ok(Tail {
            c,
            d,
            e,
            t_d: t_c + tau4,
            t_e: t_c + tau4 + tau5,
            cost: pc + self.theta_max * tau4,
            residual: root.residual,
            root: root.x,
        })
    }
}

/// Solves the capped-rate schedule from `s = s0`, `i_u = i0`, `i_d = 0`.
pub fn solve_switching(s0: f64, i0: f64, i_max: f64, theta_max: f64, params: &Params) -> Result<SwitchingPolicy> {
    params.validate()?;
    if !(params.eta > 0.0) || !(theta_max > 0.0) {
        return Err(Error::Domain("eta and theta_max must be positive"));
    }
    if !(s0 > 0.0) || !(i0 > 0.0) || s0 + i0 > 1.0 + 1e-12 {
        return Err(Error::Domain("need s0 > 0, i0 > 0, s0 + i0 <= 1"));
    }
    if i0 >= i_max {
        return Err(Error::Infeasible("initial infected at or above the cap"));
    }
    let params = params.with_theta_b(0.0);
    let x0 = FractionState::initial(s0, i0);
    let synth = Synthesis::new(&params, i_max, theta_max);
    let zero = SwitchingPolicy { i_max, theta_max, params, x0, arcs: None };

    let untested = synth.peak_from(&x0, 0.0)?;
    if untested.value <= i_max {
        return Ok(zero);
    }
    if synth.peak_from(&x0, theta_max)?.value > i_max {
        return Err(Error::Infeasible("testing at theta_max from the start still exceeds the cap"));
    }

    // A/B: shooting on the activation time, then Newton
    let t_hit = {
        let beta = BetaSignal::Constant(params.beta);
        let mut tr = Trajectory::starting_at(0.0, x0, 0.0);
        let over = |_t: f64, x: &FractionState| x.infected() - i_max;
        Integrator::new(&params, &beta, DEFAULT_STEP)
            .extend(&mut tr, &ConstantRate(0.0), PEAK_WINDOW, Some(&over))?
            .ok_or(Error::Domain("untested epidemic never reaches the cap"))?
    };
    let margin = |t_a: f64| -> Result<f64> {
        let a = synth.advance(&x0, 0.0, t_a)?;
        Ok(i_max - synth.peak_from(&a, theta_max)?.value)
    };
    let t_a_seed = bisect_decreasing(margin, 0.0, t_hit, 1e-11)?;
    let a_seed = synth.advance(&x0, 0.0, t_a_seed)?;
    let b_seed = synth.peak_from(&a_seed, theta_max)?.state;
    let mut seeds = alloc::vec![[a_seed.s, a_seed.iu, b_seed.s, b_seed.iu]];
    let herd = params.gamma / params.beta;
    for k in 1..4 {
        for m in 1..4 {
            let sa = s0 - (s0 - herd) * k as f64 / 8.0;
            let sb = sa - (sa - herd) * m as f64 / 4.0;
            let iua = Orbit::new(0.0, s0, i0, &params)?.iu(sa).max(i0);
            seeds.push([sa, iua, sb, params.gamma * i_max / (params.beta * sb)]);
        }
    }
    let ab = newton::solve_multistart(
        "first capped arc (A/B)",
        |x: &[f64; 4]| synth.ab_residuals(&x0, x),
        seeds,
        NewtonOptions::default(),
    )?;
    let [sa, iua, sb, iub] = ab.x;
    let (ida, t_a) = synth.carry_id(0.0, s0, i0, 0.0, sa)?;
    let (idb, tau2) = synth.carry_id(theta_max, sa, iua, ida, sb)?;
    let ru = |s: f64| x0.ru + params.gamma / params.beta * math::ln(s0 / s);
    let a = FractionState::new(sa, iua, ida, ru(sa));
    let b = FractionState::new(sb, iub, idb, ru(sb));
    let t_b = t_a + tau2;

    // plateau length: the full plateau alone costs `c_bar`, so the optimum
    // never spends more than `c_bar / theta_max` days on the second capped arc
    let tau3_bar = synth.tau3_bar(&b)?;
    let tau4_cap = plateau_cost(&b, tau3_bar, i_max, &params) / theta_max;
    let tau3_lo = synth.tau3_lo(&b, tau3_bar, tau4_cap)?;
    let mut warm: Option<[f64; 4]> = None;
    let best = golden::minimize(
        |tau3| match synth.tail(&b, t_b, tau3, tau3_bar, warm, tau4_cap) {
            Ok(tail) => {
                if tau3 < tau3_bar {
                    warm = Some(tail.root);
                }
                Ok(tail.cost)
            }
            // at tau3_lo the second capped arc runs the full tau4_cap and the
            // orbit quadrature can stall on the tiny i_u; the chosen tau3 is
            // re-solved below without this fallback
            Err(Error::Infeasible(_) | Error::NoConvergence { .. } | Error::Quadrature { .. }) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        },
        tau3_lo,
        tau3_bar,
        TAU3_TOL,
    )?;
    let tail = synth.tail(&b, t_b, best.x, tau3_bar, warm, tau4_cap)?;
    Ok(SwitchingPolicy {
        i_max,
        theta_max,
        params,
        x0,
        arcs: Some(SwitchingArcs {
            t_a,
            t_b,
            t_c: t_b + best.x,
            t_d: tail.t_d,
            t_e: tail.t_e,
            a,
            b,
            c: tail.c,
            d: tail.d,
            e: tail.e,
            tau3: best.x,
            tau3_bar,
            residual_ab: ab.residual,
            residual_de: tail.residual,
        }),
    })
}
