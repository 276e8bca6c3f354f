//! Gillespie direct-method simulation.
//!
//! The adaptive rate is held constant between calls to [`Simulator::advance`];
//! callers advance one observation epoch at a time. A time-varying
//! transmission rate is handled by thinning against its upper bound over the
//! epoch, which keeps the path exact.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Exp1};

use super::{transition_rates_at, CountState, EventKind};
use crate::math;
use crate::model::BetaSignal;
use crate::params::Params;
use crate::Result;

/// Generator for replicate `replicate` of an ensemble: the master seed picks
/// the key, the replicate index picks an independent ChaCha stream.
pub fn replicate_rng(master_seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(replicate);
    rng
}

/// One exact sample path, advanced epoch by epoch.
#[derive(Debug, Clone)]
pub struct Simulator<R = ChaCha8Rng> {
    pub state: CountState,
    pub t: f64,
    params: Params,
    beta: BetaSignal,
    rng: R,
    /// Events fired so far, in [`EventKind::ALL`] order.
    pub event_counts: [u64; 5],
    /// First time the chain had no infected left.
    pub absorbed_at: Option<f64>,
}

impl<R: Rng> Simulator<R> {
    pub fn new(x0: CountState, params: Params, beta: BetaSignal, rng: R) -> Result<Self> {
        params.validate()?;
        beta.validate()?;
        let absorbed_at = if x0.is_absorbed() { Some(0.0) } else { None };
        Ok(Simulator { state: x0, t: 0.0, params, beta, rng, event_counts: [0; 5], absorbed_at })
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    /// Runs the chain to `t_end` at adaptive rate `theta`, reporting every
    /// event. Once no infected remain, serology detections of the recovered
    /// are drawn in one binomial step per call and not reported.
    pub fn advance(&mut self, theta: f64, t_end: f64, mut on_event: impl FnMut(f64, EventKind, &CountState)) {
        if t_end <= self.t {
            return;
        }
        if self.state.is_absorbed() {
            self.fast_forward(t_end);
            return;
        }
        let constant_beta = self.beta.is_constant();
        let beta_bar = if constant_beta { self.beta.value(self.t) } else { self.beta.upper_bound(self.t, t_end) };
        loop {
            let Some((wait, kind)) = self.sample_next(theta, beta_bar) else {
                self.t = t_end;
                return;
            };
            if self.t + wait >= t_end {
                self.t = t_end;
                return;
            }
            self.t += wait;
            if kind == EventKind::Infection && !constant_beta {
                let accept = self.beta.value(self.t) / beta_bar;
                if self.rng.random::<f64>() >= accept {
                    continue;
                }
            }
            kind.apply(&mut self.state);
            self.event_counts[kind as usize] += 1;
            on_event(self.t, kind, &self.state);
            if self.state.is_absorbed() {
                self.absorbed_at = Some(self.t);
                self.fast_forward(t_end);
                return;
            }
        }
    }

    /// Draws the waiting time and kind of the next event from the current
    /// state at transmission rate `beta_t`, without applying it. `None` when
    /// every rate is zero.
    pub fn sample_next(&mut self, theta: f64, beta_t: f64) -> Option<(f64, EventKind)> {
        let rates = transition_rates_at(&self.state, theta, beta_t, &self.params);
        let total: f64 = rates.iter().sum();
        if total <= 0.0 {
            return None;
        }
        let wait: f64 = Exp1.sample(&mut self.rng);
        let mut u = self.rng.random::<f64>() * total;
        let mut kind = EventKind::DetectionR;
        for (k, r) in EventKind::ALL.iter().zip(rates) {
            if u < r {
                kind = *k;
                break;
            }
            u -= r;
        }
        Some((wait / total, kind))
    }

    fn fast_forward(&mut self, t_end: f64) {
        let rate = self.params.serology_recovered_rate();
        if rate > 0.0 && self.state.ru > 0 {
            let keep = math::exp(-rate * (t_end - self.t));
            let kept = Binomial::new(self.state.ru, keep).map(|b| b.sample(&mut self.rng)).unwrap_or(self.state.ru);
            self.event_counts[EventKind::DetectionR as usize] += self.state.ru - kept;
            self.state.ru = kept;
        }
        self.t = t_end;
    }
}

/// State at an observation epoch with the rate applied from then on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub state: CountState,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsaRun {
    /// One sample per epoch, from `t = 0` to the horizon.
    pub samples: Vec<Sample>,
    pub absorbed_at: Option<f64>,
    pub event_counts: [u64; 5],
}

/// Simulates from `x0` to `horizon`. The controller is queried at every epoch
/// `k * epoch` with the current counts and its rate is held until the next
/// epoch. After absorption the remaining epochs only see serology detections.
pub fn gillespie_run(
    x0: CountState,
    mut controller: impl FnMut(f64, &CountState) -> f64,
    params: &Params,
    beta: &BetaSignal,
    horizon: f64,
    epoch: f64,
    rng: impl Rng,
) -> Result<SsaRun> {
    let mut sim = Simulator::new(x0, *params, beta.clone(), rng)?;
    let steps = math::ceil(horizon / epoch - 1e-9).max(0.0) as usize;
    let mut samples = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = (k as f64 * epoch).min(horizon);
        let theta = if k < steps { controller(t, &sim.state) } else { 0.0 };
        samples.push(Sample { t, state: sim.state, theta });
        if k < steps {
            sim.advance(theta, ((k + 1) as f64 * epoch).min(horizon), |_, _, _| {});
        }
    }
    Ok(SsaRun { samples, absorbed_at: sim.absorbed_at, event_counts: sim.event_counts })
}
