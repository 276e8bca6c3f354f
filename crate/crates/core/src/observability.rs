//! Observability demonstrations.
//!
//! With molecular testing only, `i_d` alone does not pin down the state once
//! `beta` may vary in time: [`counterexample_pair`] builds two runs with
//! different susceptible fractions and the same detected curve. With
//! serology, [`reconstruct_from_serology`] recovers the full state and
//! `beta(t)` from `(i_d, r_d)` by differentiation. [`reconstruct_from_molecular`]
//! is the constant-`beta` inversion from `i_d` alone; it needs second
//! derivatives and is meant for contrast, not production use.

use alloc::vec::Vec;

use crate::math;
use crate::model::{integrate, BetaSignal, FractionState, Trajectory};
use crate::params::Params;
use crate::{Error, Result};

/// Primary and shadow runs sharing a testing schedule.
#[derive(Debug, Clone)]
pub struct TwinRun {
    pub primary: Trajectory,
    pub shadow: Trajectory,
    /// `beta(t) s(t) / s_bar(t)`, realized on the integration grid.
    pub shadow_beta: BetaSignal,
    /// `sup |i_d - i_d_bar|` over the grid.
    pub id_gap: f64,
    pub iu_gap: f64,
    /// `sup |s - s_bar|` over the grid.
    pub s_gap: f64,
}

/// Runs the primary at constant `params.beta` from `(s0, i0)` and a shadow
/// from `(s0_bar, i0)` whose transmission rate is `beta s / s_bar`.
///
/// Along the shadow `s_bar - s` stays at `s0_bar - s0`, so the shadow rate is
/// known from the primary alone. It is stored as a cubic Hermite signal with
/// exact slopes at the primary's grid nodes, then the shadow is integrated
/// like any other run. The detected curves then agree to the integrator's
/// order. Fractions not in `s`, `i_u` are booked as detected recovered, which
/// no observed equation reads.
pub fn counterexample_pair(
    s0: f64,
    s0_bar: f64,
    i0: f64,
    schedule: impl Fn(f64) -> f64,
    params: &Params,
    horizon: f64,
    step: f64,
) -> Result<TwinRun> {
    let sched = |t: f64, _: &FractionState| schedule(t);
    let beta = BetaSignal::Constant(params.beta);
    let primary = integrate(&FractionState::new(s0, i0, 0.0, 0.0), &sched, &beta, params, horizon, step)?;
    let shift = s0_bar - s0;
    let mut values = Vec::with_capacity(primary.len());
    let mut slopes = Vec::with_capacity(primary.len());
    for p in primary.iter() {
        let s_bar = p.state.s + shift;
        if !(s_bar > 0.0) {
            return Err(Error::Domain("shadow susceptible fraction reaches zero"));
        }
        let ds = -params.beta * p.state.s * p.state.iu;
        values.push(params.beta * p.state.s / s_bar);
        slopes.push(params.beta * shift * ds / (s_bar * s_bar));
    }
    let dt = horizon / (primary.len() - 1) as f64;
    let shadow_beta = BetaSignal::Hermite { t0: 0.0, dt, values, slopes };
    let shadow = integrate(&FractionState::new(s0_bar, i0, 0.0, 0.0), &sched, &shadow_beta, params, horizon, step)?;
    let sup = |f: &dyn Fn(&FractionState) -> f64| {
        primary.iter().zip(shadow.iter()).fold(0.0_f64, |m, (a, b)| m.max((f(&a.state) - f(&b.state)).abs()))
    };
    let id_gap = sup(&|x| x.id);
    let iu_gap = sup(&|x| x.iu);
    let s_gap = sup(&|x| x.s);
    Ok(TwinRun { primary, shadow, shadow_beta, id_gap, iu_gap, s_gap })
}

/// How derivatives of sampled series are taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Differentiation {
    /// Second-order central differences, one-sided second order at the ends.
    #[default]
    Central,
    /// Slope of a local least-squares line over `2 half_width + 1` samples
    /// (Savitzky-Golay, first derivative); for noisy inputs. Falls back to
    /// [`Differentiation::Central`] within `half_width` of the ends.
    LocalPolynomial { half_width: usize },
}

/// Derivative of a uniformly sampled series.
pub fn differentiate(f: &[f64], dt: f64, method: Differentiation) -> Result<Vec<f64>> {
    let n = f.len();
    if n < 3 || !(dt > 0.0) {
        return Err(Error::Domain("differentiation needs three samples and a positive spacing"));
    }
    let mut d: Vec<f64> = (0..n)
        .map(|i| match i {
            0 => (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * dt),
            i if i == n - 1 => (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * dt),
            i => (f[i + 1] - f[i - 1]) / (2.0 * dt),
        })
        .collect();
    if let Differentiation::LocalPolynomial { half_width: m } = method {
        if m >= 1 && n > 2 * m {
            let norm: f64 = (1..=m).map(|k| 2.0 * (k * k) as f64).sum::<f64>() * dt;
            for (i, slot) in d.iter_mut().enumerate().take(n - m).skip(m) {
                *slot = (1..=m).map(|k| k as f64 * (f[i + k] - f[i - k])).sum::<f64>() / norm;
            }
        }
    }
    Ok(d)
}

/// Uniformly sampled observations starting at `t0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSeries {
    pub t0: f64,
    pub dt: f64,
    pub id: Vec<f64>,
    pub rd: Vec<f64>,
    pub theta: Vec<f64>,
}

impl SampledSeries {
    /// Samples a trajectory with grid spacing `dt` (a multiple of its step).
    pub fn from_trajectory(traj: &Trajectory, dt: f64) -> Self {
        let t0 = traj.first().t;
        let step = (traj.points[1].t - t0).max(f64::MIN_POSITIVE);
        let stride = math::round(dt / step).max(1.0) as usize;
        let pts: Vec<_> = traj.iter().step_by(stride).collect();
        SampledSeries {
            t0,
            dt: stride as f64 * step,
            id: pts.iter().map(|p| p.state.id).collect(),
            rd: pts.iter().map(|p| p.state.rd).collect(),
            theta: pts.iter().map(|p| p.theta).collect(),
        }
    }

    fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub t: Vec<f64>,
    pub iu: Vec<f64>,
    pub ru: Vec<f64>,
    pub s: Vec<f64>,
    /// `None` where `s i_u` vanishes.
    pub beta: Vec<Option<f64>>,
}

/// Recovers `(i_u, r_u, s, beta)` from detected infected and detected
/// recovered: `i_u` from the `i_d` balance, `r_u` from the `r_d` balance,
/// `s` by conservation, `beta` from the `s` equation.
pub fn reconstruct_from_serology(obs: &SampledSeries, params: &Params, method: Differentiation) -> Result<Reconstruction> {
    let sero = params.serology_recovered_rate();
    if !(sero > 0.0) {
        return Err(Error::IllPosed { t: obs.t0, what: "no serology testing of recovered" });
    }
    let did = differentiate(&obs.id, obs.dt, method)?;
    let drd = differentiate(&obs.rd, obs.dt, method)?;
    let n = obs.id.len();
    let (mut iu, mut ru, mut s) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for k in 0..n {
        let det = params.detection_rate(obs.theta[k]);
        if !(det > 0.0) {
            return Err(Error::IllPosed { t: obs.time(k), what: "detection rate of undetected infected is zero" });
        }
        let u = (did[k] + params.gamma * obs.id[k]) / det;
        let r = (drd[k] - params.gamma * obs.id[k]) / sero;
        iu.push(u);
        ru.push(r);
        s.push(1.0 - u - r - obs.id[k] - obs.rd[k]);
    }
    let ds = differentiate(&s, obs.dt, method)?;
    let beta = (0..n)
        .map(|k| {
            let denom = s[k] * iu[k];
            (denom > 0.0).then(|| -ds[k] / denom)
        })
        .collect();
    Ok(Reconstruction { t: (0..n).map(|k| obs.time(k)).collect(), iu, ru, s, beta })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MolecularReconstruction {
    pub t: Vec<f64>,
    pub iu: Vec<f64>,
    /// The product `beta s`.
    pub beta_s: Vec<f64>,
    /// Pointwise `beta`; `None` where `beta s i_u` vanishes.
    pub beta_pointwise: Vec<Option<f64>>,
    /// Median of the pointwise values.
    pub beta: f64,
    pub s: Vec<f64>,
}

/// Constant-`beta` inversion from `i_d` alone: `i_u` from the `i_d` balance,
/// `beta s` from the `i_u` balance, and `beta` from
/// `d(beta s)/dt = -beta (beta s) i_u`.
pub fn reconstruct_from_molecular(
    obs: &SampledSeries,
    params: &Params,
    method: Differentiation,
) -> Result<MolecularReconstruction> {
    let n = obs.id.len();
    let did = differentiate(&obs.id, obs.dt, method)?;
    let mut iu = Vec::with_capacity(n);
    for (k, (&d, &id)) in did.iter().zip(&obs.id).enumerate() {
        let det = params.detection_rate(obs.theta[k]);
        if !(det > 1e-12) {
            return Err(Error::IllPosed { t: obs.time(k), what: "testing rate vanishes" });
        }
        iu.push((d + params.gamma * id) / det);
    }
    let diu = differentiate(&iu, obs.dt, method)?;
    let beta_s: Vec<f64> = (0..n)
        .map(|k| if iu[k] > 0.0 { diu[k] / iu[k] + params.exit_rate(obs.theta[k]) } else { f64::NAN })
        .collect();
    let dbs = differentiate(&beta_s, obs.dt, method)?;
    let beta_pointwise: Vec<Option<f64>> = (0..n)
        .map(|k| {
            let denom = beta_s[k] * iu[k];
            (denom.is_finite() && denom > 0.0).then(|| -dbs[k] / denom).filter(|b| b.is_finite())
        })
        .collect();
    let mut finite: Vec<f64> = beta_pointwise.iter().flatten().copied().collect();
    if finite.is_empty() {
        return Err(Error::IllPosed { t: obs.t0, what: "no sample with infected present" });
    }
    finite.sort_by(f64::total_cmp);
    let m = finite.len();
    let beta = if m % 2 == 1 { finite[m / 2] } else { 0.5 * (finite[m / 2 - 1] + finite[m / 2]) };
    let s = beta_s.iter().map(|bs| bs / beta).collect();
    Ok(MolecularReconstruction { t: (0..n).map(|k| obs.time(k)).collect(), iu, beta_s, beta_pointwise, beta, s })
}
