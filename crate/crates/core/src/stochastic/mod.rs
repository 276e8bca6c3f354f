//! Continuous-time Markov chain version of the model.
//!
//! Counts change by single individuals through five events. [`ssa`] samples
//! exact paths with the Gillespie direct method; [`ensemble`] aggregates
//! seeded replicates. The diffusion matrix of the system-size expansion is
//! used as process noise by the state estimator.

pub mod ensemble;
pub mod ssa;

pub use ensemble::{ensemble_run, summarize, EnsembleSummary, CHANNELS, CHANNEL_NAMES};
pub use ssa::{gillespie_run, replicate_rng, Sample, Simulator, SsaRun};

use nalgebra::Matrix4;

use crate::model::FractionState;
use crate::params::Params;
use crate::{Error, Result};

/// Integer compartment counts; `R_d = N - S - I_u - I_d - R_u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CountState {
    pub s: u64,
    pub iu: u64,
    pub id: u64,
    pub ru: u64,
    pub n: u64,
}

impl CountState {
    pub fn new(s: u64, iu: u64, id: u64, ru: u64, n: u64) -> Result<Self> {
        let used = s.checked_add(iu).and_then(|v| v.checked_add(id)).and_then(|v| v.checked_add(ru));
        match used {
            Some(u) if u <= n && n > 0 => Ok(CountState { s, iu, id, ru, n }),
            _ => Err(Error::Domain("compartment counts exceed the population")),
        }
    }

    /// `N - I0` susceptible and `I0` undetected infected.
    pub fn outbreak(n: u64, i0: u64) -> Result<Self> {
        CountState::new(n.saturating_sub(i0), i0, 0, 0, n)
    }

    #[inline]
    pub fn rd(&self) -> u64 {
        self.n - self.s - self.iu - self.id - self.ru
    }

    #[inline]
    pub fn infected(&self) -> u64 {
        self.iu + self.id
    }

    /// No infected left: only serology detection of the recovered remains.
    #[inline]
    pub fn is_absorbed(&self) -> bool {
        self.iu == 0 && self.id == 0
    }

    pub fn fractions(&self) -> FractionState {
        let n = self.n as f64;
        FractionState {
            s: self.s as f64 / n,
            iu: self.iu as f64 / n,
            id: self.id as f64 / n,
            ru: self.ru as f64 / n,
            rd: self.rd() as f64 / n,
        }
    }
}

/// The five transitions, in the fixed order used for rates and jumps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    /// `S -> I_u`
    Infection,
    /// `I_u -> R_u`
    RecoveryU,
    /// `I_u -> I_d` (molecular, symptomatic or serology detection)
    DetectionU,
    /// `I_d -> R_d`
    RecoveryD,
    /// `R_u -> R_d` (serology)
    DetectionR,
}

impl EventKind {
    pub const ALL: [EventKind; 5] =
        [EventKind::Infection, EventKind::RecoveryU, EventKind::DetectionU, EventKind::RecoveryD, EventKind::DetectionR];

    /// Change of `(S, I_u, I_d, R_u)`.
    pub const fn jump(self) -> [i64; 4] {
        match self {
            EventKind::Infection => [-1, 1, 0, 0],
            EventKind::RecoveryU => [0, -1, 0, 1],
            EventKind::DetectionU => [0, -1, 1, 0],
            EventKind::RecoveryD => [0, 0, -1, 0],
            EventKind::DetectionR => [0, 0, 0, -1],
        }
    }

    pub fn apply(self, x: &mut CountState) {
        match self {
            EventKind::Infection => {
                x.s -= 1;
                x.iu += 1;
            }
            EventKind::RecoveryU => {
                x.iu -= 1;
                x.ru += 1;
            }
            EventKind::DetectionU => {
                x.iu -= 1;
                x.id += 1;
            }
            EventKind::RecoveryD => x.id -= 1,
            EventKind::DetectionR => x.ru -= 1,
        }
    }
}

/// Event rates in [`EventKind::ALL`] order with transmission rate `beta_t`.
#[inline]
pub fn transition_rates_at(x: &CountState, theta: f64, beta_t: f64, params: &Params) -> [f64; 5] {
    let iu = x.iu as f64;
    [
        beta_t * x.s as f64 * iu / x.n as f64,
        params.gamma * iu,
        params.detection_rate(theta) * iu,
        params.gamma * x.id as f64,
        params.serology_recovered_rate() * x.ru as f64,
    ]
}

/// Event rates in [`EventKind::ALL`] order at the nominal `beta`.
pub fn transition_rates(x: &CountState, theta: f64, params: &Params) -> [f64; 5] {
    transition_rates_at(x, theta, params.beta, params)
}

/// Diffusion matrix of the system-size expansion over `(s, i_u, i_d, r_u)`:
/// fraction increments over a short `dt` have covariance `B dt / N`.
pub fn diffusion_matrix(x: &FractionState, theta: f64, params: &Params) -> Matrix4<f64> {
    let inf = params.beta * x.s * x.iu;
    let det = params.detection_rate(theta) * x.iu;
    let rec = params.gamma * x.iu;
    Matrix4::new(
        inf,
        -inf,
        0.0,
        0.0,
        -inf,
        inf + rec + det,
        -det,
        -rec,
        0.0,
        -det,
        det + params.gamma * x.id,
        0.0,
        0.0,
        -rec,
        0.0,
        rec + params.serology_recovered_rate() * x.ru,
    )
}
