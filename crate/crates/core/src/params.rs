//! Epidemiological and testing constants.

use crate::{Error, Result};

/// All rates are per day; sensitivities and the serology cost are dimensionless.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Params {
    /// Transmission rate.
    pub beta: f64,
    /// Recovery rate.
    pub gamma: f64,
    /// Symptom-driven detection rate.
    pub kappa: f64,
    /// Molecular test sensitivity.
    pub eta: f64,
    /// Serology sensitivity for current infections.
    pub eta_bi: f64,
    /// Serology sensitivity for past infections.
    pub eta_br: f64,
    /// Baseline serology testing rate.
    pub theta_b: f64,
    /// Cap on the adaptive molecular testing rate.
    pub theta_max: f64,
    /// Cost of one serology test relative to one molecular test.
    pub c_ser: f64,
}

impl Params {
    /// COVID-19 literature values. The baseline serology rate is not part of
    /// that set and starts at zero; scenarios set it explicitly.
    pub const fn standard() -> Self {
        Params {
            beta: 0.3,
            gamma: 1.0 / 14.0,
            kappa: 0.04,
            eta: 0.9,
            eta_bi: 0.6,
            eta_br: 0.8,
            theta_b: 0.0,
            theta_max: 2.0 / 7.0,
            c_ser: 0.4,
        }
    }

    /// The plain testing model: no symptomatic detection, no serology.
    pub const fn without_baseline_detection(self) -> Self {
        Params { kappa: 0.0, theta_b: 0.0, ..self }
    }

    pub const fn with_theta_b(self, theta_b: f64) -> Self {
        Params { theta_b, ..self }
    }

    pub const fn with_eta(self, eta: f64) -> Self {
        Params { eta, ..self }
    }

    pub const fn with_beta(self, beta: f64) -> Self {
        Params { beta, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.beta,
            self.gamma,
            self.kappa,
            self.eta,
            self.eta_bi,
            self.eta_br,
            self.theta_b,
            self.theta_max,
            self.c_ser,
        ];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Domain("parameters must be finite and nonnegative"));
        }
        if self.eta > 1.0 || self.eta_bi > 1.0 || self.eta_br > 1.0 {
            return Err(Error::Domain("sensitivities must not exceed 1"));
        }
        Ok(())
    }

    /// Per-capita rate at which undetected infected are moved to detected
    /// for a given adaptive rate.
    #[inline]
    pub fn detection_rate(&self, theta: f64) -> f64 {
        self.eta * theta + self.kappa + self.theta_b * self.eta_bi
    }

    /// Total exit rate out of the undetected-infected compartment.
    #[inline]
    pub fn exit_rate(&self, theta: f64) -> f64 {
        self.gamma + self.detection_rate(theta)
    }

    /// Adaptive rate that produces a given total exit rate.
    #[inline]
    pub fn theta_for_exit_rate(&self, exit_rate: f64) -> f64 {
        (exit_rate - self.gamma - self.kappa - self.theta_b * self.eta_bi) / self.eta
    }

    /// Per-capita serology detection rate of the undetected recovered.
    #[inline]
    pub fn serology_recovered_rate(&self) -> f64 {
        self.theta_b * self.eta_br
    }
}

impl Default for Params {
    fn default() -> Self {
        Params::standard()
    }
}
