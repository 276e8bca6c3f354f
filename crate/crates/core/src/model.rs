//! Deterministic SIR dynamics with adaptive molecular testing, symptomatic
//! detection and baseline serology, plus the fixed-step RK4 integrator.
//!
//! Integration carries the four independent fractions `(s, i_u, i_d, r_u)`;
//! `r_d` is always read out as one minus the rest.

use alloc::vec::Vec;

use crate::math;
use crate::params::Params;
use crate::{Error, Result};

/// Default integration step in days.
pub const DEFAULT_STEP: f64 = 0.01;

/// Rounding allowance on the simplex. Anything below `-10 * SIMPLEX_TOL` is
/// reported as an unstable step; smaller excursions are clipped to zero.
pub const SIMPLEX_TOL: f64 = 1e-10;

/// Population fractions.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FractionState {
    pub s: f64,
    pub iu: f64,
    pub id: f64,
    pub ru: f64,
    pub rd: f64,
}

impl FractionState {
    /// Builds a state with `r_d` implied by conservation.
    pub fn new(s: f64, iu: f64, id: f64, ru: f64) -> Self {
        FractionState { s, iu, id, ru, rd: 1.0 - s - iu - id - ru }
    }

    /// Susceptible `s0`, undetected infected `i0`, everyone else recovered
    /// and undetected.
    pub fn initial(s0: f64, i0: f64) -> Self {
        FractionState::new(s0, i0, 0.0, 1.0 - s0 - i0)
    }

    /// Total infected, detected or not.
    #[inline]
    pub fn infected(&self) -> f64 {
        self.iu + self.id
    }

    #[inline]
    pub fn sum(&self) -> f64 {
        self.s + self.iu + self.id + self.ru + self.rd
    }

    pub fn validate(&self) -> Result<()> {
        let c = [self.s, self.iu, self.id, self.ru, self.rd];
        if c.iter().any(|v| !v.is_finite() || *v < -10.0 * SIMPLEX_TOL || *v > 1.0 + 10.0 * SIMPLEX_TOL) {
            return Err(Error::Domain("fractions must lie in [0, 1]"));
        }
        if (self.sum() - 1.0).abs() > 1e-9 {
            return Err(Error::Domain("fractions must sum to 1"));
        }
        Ok(())
    }

    #[inline]
    pub(crate) fn core(&self) -> [f64; 4] {
        [self.s, self.iu, self.id, self.ru]
    }

    #[inline]
    pub(crate) fn from_core(x: [f64; 4]) -> Self {
        FractionState::new(x[0], x[1], x[2], x[3])
    }
}

/// Time derivative of a [`FractionState`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Derivative {
    pub s: f64,
    pub iu: f64,
    pub id: f64,
    pub ru: f64,
    pub rd: f64,
}

impl Derivative {
    #[inline]
    pub fn sum(&self) -> f64 {
        self.s + self.iu + self.id + self.ru + self.rd
    }

    /// Rate of change of the total infected fraction.
    #[inline]
    pub fn infected(&self) -> f64 {
        self.iu + self.id
    }
}

/// Vector field of the five-compartment model at adaptive rate `theta` and
/// transmission rate `beta_t`. With `kappa = theta_b = 0` this is the plain
/// testing model.
pub fn derivative(state: &FractionState, params: &Params, theta: f64, beta_t: f64) -> Derivative {
    let infection = beta_t * state.s * state.iu;
    let recovery_u = params.gamma * state.iu;
    let detection_u = params.detection_rate(theta) * state.iu;
    let recovery_d = params.gamma * state.id;
    let detection_r = params.serology_recovered_rate() * state.ru;
    Derivative {
        s: -infection,
        iu: infection - recovery_u - detection_u,
        id: detection_u - recovery_d,
        ru: recovery_u - detection_r,
        rd: recovery_d + detection_r,
    }
}

#[inline]
pub(crate) fn rhs(x: &[f64; 4], params: &Params, theta: f64, beta_t: f64) -> [f64; 4] {
    let infection = beta_t * x[0] * x[1];
    let detection_u = params.detection_rate(theta) * x[1];
    [
        -infection,
        infection - params.gamma * x[1] - detection_u,
        detection_u - params.gamma * x[2],
        params.gamma * x[1] - params.serology_recovered_rate() * x[3],
    ]
}

/// Basic reproduction number under a constant adaptive rate.
pub fn reproduction_number(params: &Params, theta_const: f64) -> f64 {
    params.beta / (params.gamma + params.kappa + params.eta * theta_const)
}

/// A transmission rate as a function of time.
#[derive(Debug, Clone, PartialEq)]
pub enum BetaSignal {
    Constant(f64),
    /// `values[k]` holds on `[t0 + k dt, t0 + (k+1) dt)`; the ends extend.
    Piecewise { t0: f64, dt: f64, values: Vec<f64> },
    /// `center + amplitude * sin(2 pi t / period)`.
    Sinusoidal { center: f64, amplitude: f64, period: f64 },
    /// Cubic Hermite interpolation of node values and slopes on a uniform grid.
    Hermite { t0: f64, dt: f64, values: Vec<f64>, slopes: Vec<f64> },
}

impl BetaSignal {
    pub fn value(&self, t: f64) -> f64 {
        match self {
            BetaSignal::Constant(b) => *b,
            BetaSignal::Piecewise { t0, dt, values } => {
                let k = math::floor((t - t0) / dt);
                let k = if k < 0.0 { 0 } else { (k as usize).min(values.len() - 1) };
                values[k]
            }
            BetaSignal::Sinusoidal { center, amplitude, period } => {
                center + amplitude * math::sin(2.0 * core::f64::consts::PI * t / period)
            }
            BetaSignal::Hermite { t0, dt, values, slopes } => {
                let n = values.len();
                let u = (t - t0) / dt;
                if u <= 0.0 {
                    return values[0];
                }
                if u >= (n - 1) as f64 {
                    return values[n - 1];
                }
                let k = (math::floor(u) as usize).min(n - 2);
                let x = u - k as f64;
                let (x2, x3) = (x * x, x * x * x);
                let h00 = 2.0 * x3 - 3.0 * x2 + 1.0;
                let h10 = x3 - 2.0 * x2 + x;
                let h01 = -2.0 * x3 + 3.0 * x2;
                let h11 = x3 - x2;
                h00 * values[k] + h10 * dt * slopes[k] + h01 * values[k + 1] + h11 * dt * slopes[k + 1]
            }
        }
    }

    /// An upper bound of the signal on `[t0, t1]`, used for thinning.
    pub fn upper_bound(&self, t0: f64, t1: f64) -> f64 {
        match self {
            BetaSignal::Constant(b) => *b,
            BetaSignal::Sinusoidal { center, amplitude, .. } => center + amplitude.abs(),
            BetaSignal::Piecewise { .. } => {
                // piecewise constant: the extremes are the node values hit on the window
                let mut m = self.value(t0).max(self.value(t1));
                if let BetaSignal::Piecewise { t0: s0, dt, values } = self {
                    for (k, v) in values.iter().enumerate() {
                        let a = s0 + k as f64 * dt;
                        if a + dt > t0 && a < t1 {
                            m = m.max(*v);
                        }
                    }
                }
                m
            }
            BetaSignal::Hermite { values, slopes, dt, .. } => {
                // Hermite overshoot is bounded by dt * max|slope| / 4 above the nodes
                let vmax = values.iter().cloned().fold(f64::MIN, f64::max);
                let smax = slopes.iter().fold(0.0_f64, |a, s| a.max(s.abs()));
                vmax + 0.25 * dt * smax
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, BetaSignal::Constant(_))
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            BetaSignal::Constant(b) => b.is_finite() && *b >= 0.0,
            BetaSignal::Piecewise { dt, values, .. } => {
                *dt > 0.0 && !values.is_empty() && values.iter().all(|v| v.is_finite() && *v >= 0.0)
            }
            BetaSignal::Sinusoidal { center, amplitude, period } => {
                *period > 0.0 && center.is_finite() && *center >= amplitude.abs()
            }
            BetaSignal::Hermite { dt, values, slopes, .. } => {
                *dt > 0.0
                    && values.len() >= 2
                    && values.len() == slopes.len()
                    && values.iter().all(|v| v.is_finite() && *v >= 0.0)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain("transmission rate signal must be nonnegative and well formed"))
        }
    }
}

/// An adaptive testing rate, possibly in feedback on the state. Evaluated at
/// every Runge–Kutta stage.
pub trait Schedule {
    fn rate(&self, t: f64, x: &FractionState) -> f64;
}

impl<F: Fn(f64, &FractionState) -> f64> Schedule for F {
    fn rate(&self, t: f64, x: &FractionState) -> f64 {
        self(t, x)
    }
}

/// Time-invariant adaptive rate.
#[derive(Debug, Clone, Copy)]
pub struct ConstantRate(pub f64);

impl Schedule for ConstantRate {
    fn rate(&self, _t: f64, _x: &FractionState) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub state: FractionState,
    /// Adaptive rate applied at `t`.
    pub theta: f64,
}

/// Time-ordered states with the applied adaptive rate.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
}

impl Trajectory {
    pub fn starting_at(t0: f64, x0: FractionState, theta0: f64) -> Self {
        Trajectory { points: alloc::vec![TrajectoryPoint { t: t0, state: x0, theta: theta0 }] }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first(&self) -> &TrajectoryPoint {
        &self.points[0]
    }

    pub fn last(&self) -> &TrajectoryPoint {
        &self.points[self.points.len() - 1]
    }

    pub fn iter(&self) -> impl Iterator<Item = &TrajectoryPoint> {
        self.points.iter()
    }

    /// Time at which `f` is largest along the trajectory, and that value.
    pub fn max_of(&self, f: impl Fn(&FractionState) -> f64) -> (f64, f64) {
        self.points
            .iter()
            .map(|p| (p.t, f(&p.state)))
            .fold((f64::NAN, f64::NEG_INFINITY), |acc, (t, v)| if v > acc.1 { (t, v) } else { acc })
    }

    /// Linear interpolation of the state at `t` (clamped to the time span).
    pub fn state_at(&self, t: f64) -> FractionState {
        let pts = &self.points;
        if t <= pts[0].t {
            return pts[0].state;
        }
        if t >= self.last().t {
            return self.last().state;
        }
        let k = pts.partition_point(|p| p.t <= t) - 1;
        let (a, b) = (&pts[k], &pts[k + 1]);
        let w = (t - a.t) / (b.t - a.t);
        let lerp = |x: f64, y: f64| x + w * (y - x);
        FractionState {
            s: lerp(a.state.s, b.state.s),
            iu: lerp(a.state.iu, b.state.iu),
            id: lerp(a.state.id, b.state.id),
            ru: lerp(a.state.ru, b.state.ru),
            rd: lerp(a.state.rd, b.state.rd),
        }
    }

    /// Trapezoidal integral of the applied rate.
    pub fn rate_integral(&self) -> f64 {
        self.points.windows(2).map(|w| 0.5 * (w[0].theta + w[1].theta) * (w[1].t - w[0].t)).sum()
    }
}

/// Event function: the segment stops at the first time it becomes `>= 0`.
pub type EventFn<'a> = &'a dyn Fn(f64, &FractionState) -> f64;

/// Fixed-step RK4 on the model, with optional event location by bisection.
#[derive(Debug, Clone, Copy)]
pub struct Integrator<'a> {
    pub params: &'a Params,
    pub beta: &'a BetaSignal,
    pub step: f64,
}

impl<'a> Integrator<'a> {
    pub fn new(params: &'a Params, beta: &'a BetaSignal, step: f64) -> Self {
        Integrator { params, beta, step }
    }

    #[inline]
    fn field<S: Schedule + ?Sized>(&self, t: f64, x: &[f64; 4], schedule: &S) -> [f64; 4] {
        let theta = schedule.rate(t, &FractionState::from_core(*x));
        rhs(x, self.params, theta, self.beta.value(t))
    }

    pub(crate) fn rk4_step<S: Schedule + ?Sized>(&self, t: f64, x: &[f64; 4], h: f64, schedule: &S) -> [f64; 4] {
        let k1 = self.field(t, x, schedule);
        let x2 = axpy(x, 0.5 * h, &k1);
        let k2 = self.field(t + 0.5 * h, &x2, schedule);
        let x3 = axpy(x, 0.5 * h, &k2);
        let k3 = self.field(t + 0.5 * h, &x3, schedule);
        let x4 = axpy(x, h, &k3);
        let k4 = self.field(t + h, &x4, schedule);
        let mut out = *x;
        for i in 0..4 {
            out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        out
    }

    /// Extends `traj` from its last point to `t_end` under `schedule`. Steps
    /// are uniform and land exactly on `t_end`. With an event, integration
    /// stops at its first zero crossing (located to ~1e-12 day) and the
    /// crossing time is returned.
    pub fn extend<S: Schedule + ?Sized>(
        &self,
        traj: &mut Trajectory,
        schedule: &S,
        t_end: f64,
        event: Option<EventFn<'_>>,
    ) -> Result<Option<f64>> {
        if !(self.step > 0.0) {
            return Err(Error::Domain("step must be positive"));
        }
        let start = *traj.last();
        let t0 = start.t;
        if let Some(g) = event {
            if g(t0, &start.state) >= 0.0 {
                return Ok(Some(t0));
            }
        }
        let span = t_end - t0;
        if span <= 0.0 {
            return Ok(None);
        }
        let n = math::ceil(span / self.step - 1e-9).max(1.0) as usize;
        let h = span / n as f64;
        let mut x = start.state.core();
        traj.points.reserve(n);
        for k in 0..n {
            let t = t0 + k as f64 * h;
            let t_next = if k + 1 == n { t_end } else { t0 + (k + 1) as f64 * h };
            let hk = t_next - t;
            let mut x_next = self.rk4_step(t, &x, hk, schedule);
            clip(&mut x_next, t_next)?;
            if let Some(g) = event {
                let state_next = FractionState::from_core(x_next);
                if g(t_next, &state_next) >= 0.0 {
                    let (te, xe) = self.locate(t, &x, hk, schedule, g)?;
                    let state = FractionState::from_core(xe);
                    traj.points.push(TrajectoryPoint { t: te, state, theta: schedule.rate(te, &state) });
                    return Ok(Some(te));
                }
            }
            let state = FractionState::from_core(x_next);
            traj.points.push(TrajectoryPoint { t: t_next, state, theta: schedule.rate(t_next, &state) });
            x = x_next;
        }
        Ok(None)
    }

    fn locate<S: Schedule + ?Sized>(
        &self,
        t: f64,
        x: &[f64; 4],
        h: f64,
        schedule: &S,
        g: EventFn<'_>,
    ) -> Result<(f64, [f64; 4])> {
        let (mut lo, mut hi) = (0.0, h);
        let mut x_hi = self.rk4_step(t, x, hi, schedule);
        for _ in 0..80 {
            if hi - lo <= 1e-13 * (1.0 + t.abs()) {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let xm = self.rk4_step(t, x, mid, schedule);
            if g(t + mid, &FractionState::from_core(xm)) >= 0.0 {
                hi = mid;
                x_hi = xm;
            } else {
                lo = mid;
            }
        }
        clip(&mut x_hi, t + hi)?;
        Ok((t + hi, x_hi))
    }
}

#[inline]
fn axpy(x: &[f64; 4], a: f64, y: &[f64; 4]) -> [f64; 4] {
    [x[0] + a * y[0], x[1] + a * y[1], x[2] + a * y[2], x[3] + a * y[3]]
}

fn clip(x: &mut [f64; 4], t: f64) -> Result<()> {
    const NAMES: [&str; 4] = ["s", "i_u", "i_d", "r_u"];
    for (v, name) in x.iter_mut().zip(NAMES) {
        if !v.is_finite() || *v < -10.0 * SIMPLEX_TOL {
            return Err(Error::UnstableStep { t, compartment: name, value: *v });
        }
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let rd = 1.0 - x.iter().sum::<f64>();
    if rd < -10.0 * SIMPLEX_TOL {
        return Err(Error::UnstableStep { t, compartment: "r_d", value: rd });
    }
    Ok(())
}

/// Integrates from `x0` at `t = 0` to `horizon` with step `step`.
pub fn integrate<S: Schedule + ?Sized>(
    x0: &FractionState,
    schedule: &S,
    beta: &BetaSignal,
    params: &Params,
    horizon: f64,
    step: f64,
) -> Result<Trajectory> {
    x0.validate()?;
    beta.validate()?;
    let x0 = FractionState::new(x0.s, x0.iu, x0.id, x0.ru);
    let mut traj = Trajectory::starting_at(0.0, x0, schedule.rate(0.0, &x0));
    Integrator::new(params, beta, step).extend(&mut traj, schedule, horizon, None)?;
    Ok(traj)
}
