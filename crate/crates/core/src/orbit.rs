//! Closed-form relations along constant-rate orbits with constant `beta`.
//!
//! Under a constant adaptive rate the quantity
//! `s + i_u - (a / beta) ln s` is conserved, where `a` is the total exit rate
//! from the undetected-infected compartment. That gives `i_u` as a function of
//! `s` on an orbit, and turns elapsed time and detected-infected build-up into
//! one-dimensional integrals over `s`.
//!
//! The exit rate is `gamma + eta theta + kappa + theta_b eta_bi`; with
//! `eta = 1` and `theta_b = 0` it is the familiar `gamma + theta + kappa`.

use crate::math;
use crate::params::Params;
use crate::quadrature::{self, QuadOptions};
use crate::{Error, Result};

/// Orbit residual: zero iff `(s1, iu1)` and `(s2, iu2)` lie on the same
/// constant-`theta` orbit.
pub fn orbit_residual(theta: f64, s1: f64, iu1: f64, s2: f64, iu2: f64, params: &Params) -> Result<f64> {
    if !(s1 > 0.0 && s2 > 0.0) {
        return Err(Error::Domain("orbit relation needs positive susceptible fractions"));
    }
    let a = params.exit_rate(theta);
    if !(a > 0.0) {
        return Err(Error::Domain("exit rate must be positive"));
    }
    Ok(math::ln_1p((s2 - s1) / s1) - params.beta / a * ((s2 - s1) + (iu2 - iu1)))
}

/// One constant-rate orbit through `(s_ref, iu_ref)`.
#[derive(Debug, Clone, Copy)]
pub struct Orbit {
    pub beta: f64,
    pub exit: f64,
    pub gamma: f64,
    pub s_ref: f64,
    pub iu_ref: f64,
}

impl Orbit {
    pub fn new(theta: f64, s_ref: f64, iu_ref: f64, params: &Params) -> Result<Self> {
        let exit = params.exit_rate(theta);
        if !(s_ref > 0.0) || !(iu_ref >= 0.0) {
            return Err(Error::Domain("orbit reference needs s > 0 and i_u >= 0"));
        }
        if !(exit > 0.0) || !(params.beta > 0.0) {
            return Err(Error::Domain("orbit needs positive beta and exit rate"));
        }
        Ok(Orbit { beta: params.beta, exit, gamma: params.gamma, s_ref, iu_ref })
    }

    /// Undetected infected on the orbit at susceptible fraction `s`.
    #[inline]
    pub fn iu(&self, s: f64) -> f64 {
        self.iu_ref - (s - self.s_ref) + self.exit / self.beta * math::ln_1p((s - self.s_ref) / self.s_ref)
    }

    /// Susceptible fraction where the orbit's `i_u` vanishes (below `s_ref`).
    pub fn s_limit(&self) -> f64 {
        if self.iu_ref <= 0.0 {
            return self.s_ref;
        }
        let (mut lo, mut hi) = (0.0_f64, self.s_ref);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.iu(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    fn check_reachable(&self, s_target: f64) -> Result<()> {
        if !(s_target > 0.0) || s_target > self.s_ref {
            return Err(Error::Domain("need 0 < s_target <= s_start"));
        }
        if s_target < self.s_ref && (self.iu_ref <= 0.0 || !(self.iu(s_target) > 0.0)) {
            return Err(Error::SingularIntegrand { s_target, s_limit_hint: self.s_limit() });
        }
        Ok(())
    }

    /// Time for `s` to fall from `s_ref` to `s_target`.
    pub fn elapsed(&self, s_target: f64, opts: QuadOptions) -> Result<f64> {
        self.check_reachable(s_target)?;
        if s_target == self.s_ref {
            return Ok(0.0);
        }
        let r = quadrature::integrate(|s| 1.0 / (self.beta * s * self.iu(s)), s_target, self.s_ref, opts)?;
        Ok(r.value)
    }

    /// `integral_{s_lo}^{s_ref} exp(gamma * elapsed(s)) / (beta s) ds`, i.e.
    /// `integral_0^T exp(gamma t) i_u(t) dt` with `T = elapsed(s_lo)`.
    /// Multiplied by a detection rate and `exp(-gamma T)` it is the detected
    /// infected accumulated along the orbit.
    pub fn transfer(&self, s_lo: f64, opts: QuadOptions) -> Result<f64> {
        self.check_reachable(s_lo)?;
        if s_lo == self.s_ref {
            return Ok(0.0);
        }
        let mut failure = None;
        let r = quadrature::integrate(
            |s| match self.elapsed(s, opts) {
                Ok(dt) => math::exp(self.gamma * dt) / (self.beta * s),
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            },
            s_lo,
            self.s_ref,
            opts,
        );
        if let Some(e) = failure {
            return Err(e);
        }
        Ok(r?.value)
    }
}

/// Time for `s` to fall from `s_start` to `s_target` under constant `theta`,
/// by adaptive quadrature (absolute tolerance 1e-8).
pub fn orbit_time(theta: f64, s_target: f64, s_start: f64, iu_start: f64, params: &Params) -> Result<f64> {
    Orbit::new(theta, s_start, iu_start, params)?.elapsed(s_target, QuadOptions::default())
}
