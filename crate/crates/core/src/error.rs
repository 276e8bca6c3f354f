use alloc::boxed::Box;
use core::fmt;

/// Everything that can go wrong in the numerical core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A compartment left the simplex by more than the rounding allowance.
    UnstableStep { t: f64, compartment: &'static str, value: f64 },
    /// An argument is outside the domain of the operation.
    Domain(&'static str),
    /// The orbit-time integrand has a root inside the integration range.
    SingularIntegrand { s_target: f64, s_limit_hint: f64 },
    /// Adaptive quadrature hit its interval budget before meeting tolerance.
    Quadrature { estimate: f64, error: f64 },
    /// The requested constraint cannot be met.
    Infeasible(&'static str),
    /// A nonlinear solve failed from every seed.
    NoConvergence { system: &'static str, best_residual: f64, seeds_tried: usize },
    /// Reconstruction gate failed (denominator vanishes).
    IllPosed { t: f64, what: &'static str },
    /// Covariance lost positive semidefiniteness.
    CovarianceNotPsd { min_eigenvalue: f64, trace: f64 },
    /// An internal contract that valid inputs always satisfy was broken.
    ContractViolation(&'static str),
    /// A closed-loop step failed at epoch time `t`.
    AtEpoch { t: f64, source: Box<Error> },
}

impl Error {
    pub fn at_epoch(self, t: f64) -> Self {
        Error::AtEpoch { t, source: Box::new(self) }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::UnstableStep { t, compartment, value } => write!(
                f,
                "compartment {compartment} reached {value:e} at t = {t}; step size too large"
            ),
            Error::Domain(what) => write!(f, "domain error: {what}"),
            Error::SingularIntegrand { s_target, s_limit_hint } => write!(
                f,
                "orbit time is unbounded: s = {s_target} is at or past the asymptotic limit (~{s_limit_hint})"
            ),
            Error::Quadrature { estimate, error } => {
                write!(f, "quadrature did not converge (estimate {estimate}, error {error:e})")
            }
            Error::Infeasible(why) => write!(f, "infeasible: {why}"),
            Error::NoConvergence { system, best_residual, seeds_tried } => write!(
                f,
                "{system}: no convergence from {seeds_tried} seeds (best residual {best_residual:e})"
            ),
            Error::IllPosed { t, what } => write!(f, "ill-posed reconstruction at t = {t}: {what}"),
            Error::CovarianceNotPsd { min_eigenvalue, trace } => write!(
                f,
                "covariance has eigenvalue {min_eigenvalue:e} (trace {trace:e})"
            ),
            Error::ContractViolation(what) => write!(f, "contract violation: {what}"),
            Error::AtEpoch { t, source } => write!(f, "epoch t = {t}: {source}"),
        }
    }
}

impl core::error::Error for Error {}
