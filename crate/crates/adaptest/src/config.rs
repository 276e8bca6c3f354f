//! Scenario files.
//!
//! A scenario is a TOML document with one table per concern. Every table
//! rejects unknown keys, and everything but `[scenario]` and `[population]`
//! has defaults, so the smallest useful file is
//!
//! ```toml
//! [scenario]
//! policy = "closed-loop"
//!
//! [population]
//! n = 50000
//! i0 = 50
//! i_max_count = 1000
//! ```
//!
//! [`Config::resolve`] validates the document and fills in derived values;
//! the resolved document is what output headers record.

use std::path::Path;

use adaptest_core::controller::{BetaMode, ControllerConfig};
use adaptest_core::{BetaSignal, Params};
use serde::{Deserialize, Serialize};

use crate::error::AppError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Threshold,
    Switching,
    Constant,
    ClosedLoop,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Threshold => "threshold",
            PolicyKind::Switching => "switching",
            PolicyKind::Constant => "constant",
            PolicyKind::ClosedLoop => "closed-loop",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    /// Test from day 0.
    Always,
    /// Start at the activation time of the deterministic switching schedule.
    Switching,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Signal {
    Constant,
    Sinusoidal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub policy: PolicyKind,
    /// Simulated days.
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default)]
    pub seed: u64,
    /// Integrator step for deterministic runs [day].
    #[serde(default = "default_step")]
    pub step: f64,
}

fn default_horizon() -> f64 {
    1500.0
}

fn default_step() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParamsSection {
    pub beta: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub eta: f64,
    pub eta_bi: f64,
    pub eta_br: f64,
    pub theta_b: f64,
    pub theta_max: f64,
    pub c_ser: f64,
}

impl Default for ParamsSection {
    fn default() -> Self {
        let p = Params::standard();
        ParamsSection {
            beta: p.beta,
            gamma: p.gamma,
            kappa: p.kappa,
            eta: p.eta,
            eta_bi: p.eta_bi,
            eta_br: p.eta_br,
            theta_b: p.theta_b,
            theta_max: p.theta_max,
            c_ser: p.c_ser,
        }
    }
}

impl ParamsSection {
    pub fn params(&self) -> Params {
        Params {
            beta: self.beta,
            gamma: self.gamma,
            kappa: self.kappa,
            eta: self.eta,
            eta_bi: self.eta_bi,
            eta_br: self.eta_br,
            theta_b: self.theta_b,
            theta_max: self.theta_max,
            c_ser: self.c_ser,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSection {
    pub n: u64,
    /// Initial undetected infected; everybody else is susceptible.
    pub i0: u64,
    /// Cap on `i_u + i_d` as a fraction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i_max: Option<f64>,
    /// The same cap in individuals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i_max_count: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleSection {
    pub replicates: usize,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        EnsembleSection { replicates: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSection {
    /// Look-ahead of the receding-horizon law [day].
    pub lookahead: f64,
    /// Observation and control period [day].
    pub epoch: f64,
    pub activation: Activation,
}

impl Default for ControllerSection {
    fn default() -> Self {
        ControllerSection { lookahead: 3.0, epoch: 1.0, activation: Activation::Switching }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BetaSection {
    /// Shape of the plant's transmission rate around `params.beta`.
    pub signal: Signal,
    pub amplitude: f64,
    pub period: f64,
    /// Fit the transmission rate from filtered states instead of using
    /// `params.beta`.
    pub estimate: bool,
}

impl Default for BetaSection {
    fn default() -> Self {
        BetaSection { signal: Signal::Constant, amplitude: 0.0, period: 365.0, estimate: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub theta_b: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection { theta_b: vec![1.0 / 56.0, 1.0 / 28.0, 1.0 / 14.0, 1.0 / 7.0, 2.0 / 7.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObservabilitySection {
    /// Susceptible fraction of the primary twin.
    pub s0: f64,
    /// Susceptible fraction of the shadow twin.
    pub s0_bar: f64,
    pub i0: f64,
    /// Constant adaptive rate shared by the twins and the serology run.
    pub theta: f64,
    pub horizon: f64,
    pub step: f64,
    /// Sampling interval of the reconstructions.
    pub sample_dt: f64,
}

impl Default for ObservabilitySection {
    fn default() -> Self {
        ObservabilitySection { s0: 0.9, s0_bar: 0.8, i0: 0.05, theta: 0.1, horizon: 100.0, step: 0.01, sample_dt: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: "out".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub params: ParamsSection,
    pub population: PopulationSection,
    #[serde(default)]
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub controller: ControllerSection,
    #[serde(default)]
    pub beta: BetaSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub observability: ObservabilitySection,
    #[serde(default)]
    pub output: OutputSection,
}

fn invalid(field: &'static str, message: impl Into<String>) -> AppError {
    AppError::Invalid { field, message: message.into() }
}

/// A validated scenario with every derived quantity filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// The resolved document, written into output headers.
    pub config: Config,
    pub params: Params,
    pub n: u64,
    pub i0: u64,
    /// Cap as a fraction of `n`.
    pub i_max: f64,
    pub kind: PolicyKind,
    /// Transmission rate of the plant.
    pub beta: BetaSignal,
    pub beta_mode: BetaMode,
    pub horizon: f64,
    pub step: f64,
    pub replicates: usize,
    pub seed: u64,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Config, AppError> {
        toml::from_str(text).map_err(|e| AppError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Config, AppError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AppError::Parse(format!("cannot read {}: {e}", path.display())))?;
        Config::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config tables always serialize")
    }

    /// Validates and derives the run description.
    pub fn resolve(mut self) -> Result<Scenario, AppError> {
        let pop = &mut self.population;
        if pop.n == 0 {
            return Err(invalid("population.n", "must be positive"));
        }
        if pop.i0 == 0 || pop.i0 > pop.n {
            return Err(invalid("population.i0", "must be in 1..=population.n"));
        }
        let n = pop.n as f64;
        let i_max = match (pop.i_max, pop.i_max_count) {
            (None, None) => return Err(invalid("population.i_max", "set population.i_max or population.i_max_count")),
            (Some(f), None) => f,
            (None, Some(c)) => c / n,
            (Some(f), Some(c)) => {
                if (f * n - c).abs() > 0.5 {
                    return Err(invalid(
                        "population.i_max_count",
                        format!("{c} does not match population.i_max * population.n = {}", f * n),
                    ));
                }
                f
            }
        };
        if !(i_max > 0.0 && i_max < 1.0) {
            return Err(invalid("population.i_max", "cap must lie strictly between 0 and 1 of the population"));
        }
        if pop.i0 as f64 >= i_max * n {
            return Err(invalid("population.i0", "initial infected already at or above the cap"));
        }
        pop.i_max = Some(i_max);
        pop.i_max_count = Some(i_max * n);

        let params = self.params.params();
        if params.validate().is_err() {
            return Err(invalid("params", "rates must be finite and nonnegative and sensitivities at most 1"));
        }
        if !(params.eta > 0.0) {
            return Err(invalid("params.eta", "must be positive"));
        }
        let sc = &self.scenario;
        if !(sc.horizon > 0.0 && sc.horizon.is_finite()) {
            return Err(invalid("scenario.horizon", "must be positive"));
        }
        if !(sc.step > 0.0 && sc.step <= 1.0) {
            return Err(invalid("scenario.step", "must be in (0, 1]"));
        }
        let ctl = &self.controller;
        if !(ctl.lookahead > 0.0) {
            return Err(invalid("controller.lookahead", "must be positive"));
        }
        if !(ctl.epoch > 0.0) {
            return Err(invalid("controller.epoch", "must be positive"));
        }
        if self.ensemble.replicates < 2 {
            return Err(invalid("ensemble.replicates", "an ensemble needs at least two replicates"));
        }
        if self.sweep.theta_b.is_empty() {
            return Err(invalid("sweep.theta_b", "grid is empty"));
        }
        if self.sweep.theta_b.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(invalid("sweep.theta_b", "rates must be finite and nonnegative"));
        }
        let ob = &self.observability;
        if !(ob.s0 > 0.0 && ob.s0_bar > 0.0 && ob.i0 > 0.0 && ob.s0 + ob.i0 <= 1.0 && ob.s0_bar + ob.i0 <= 1.0) {
            return Err(invalid("observability.s0", "twin starts need positive fractions summing to at most 1"));
        }
        if !(ob.horizon > 0.0 && ob.step > 0.0 && ob.sample_dt >= ob.step) {
            return Err(invalid("observability.sample_dt", "need horizon, step > 0 and sample_dt >= step"));
        }

        let b = &self.beta;
        let beta = match b.signal {
            Signal::Constant => BetaSignal::Constant(params.beta),
            Signal::Sinusoidal => {
                if !(b.period > 0.0) {
                    return Err(invalid("beta.period", "must be positive"));
                }
                if !(b.amplitude >= 0.0 && b.amplitude < params.beta) {
                    return Err(invalid("beta.amplitude", "must be in [0, params.beta)"));
                }
                if !matches!(sc.policy, PolicyKind::Threshold | PolicyKind::ClosedLoop) {
                    return Err(invalid("beta.signal", "a time-varying rate needs policy threshold or closed-loop"));
                }
                if sc.policy == PolicyKind::ClosedLoop && !b.estimate {
                    return Err(invalid("beta.estimate", "a time-varying rate in closed loop must be estimated"));
                }
                BetaSignal::Sinusoidal { center: params.beta, amplitude: b.amplitude, period: b.period }
            }
        };
        let beta_mode = if b.estimate { BetaMode::Estimated(beta.clone()) } else { BetaMode::Known };
        if sc.policy == PolicyKind::Threshold && (params.kappa != 0.0 || params.theta_b != 0.0) {
            return Err(invalid("params.kappa", "policy threshold needs params.kappa = 0 and params.theta_b = 0"));
        }

        Ok(Scenario {
            params,
            n: self.population.n,
            i0: self.population.i0,
            i_max,
            kind: sc.policy,
            beta,
            beta_mode,
            horizon: sc.horizon,
            step: sc.step,
            replicates: self.ensemble.replicates,
            seed: sc.seed,
            config: self,
        })
    }
}

impl Scenario {
    /// Starting fractions `(s0, i0)`.
    pub fn initial_fractions(&self) -> (f64, f64) {
        let n = self.n as f64;
        ((self.n - self.i0) as f64 / n, self.i0 as f64 / n)
    }

    /// Controller settings without the activation time.
    pub fn controller(&self) -> ControllerConfig {
        let c = &self.config.controller;
        ControllerConfig { h: c.lookahead, i_max: self.i_max, theta_max: self.params.theta_max, t_a: 0.0, epoch: c.epoch }
    }

    /// Overrides the master seed, keeping the header in step.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.config.scenario.seed = seed;
        self
    }
}
