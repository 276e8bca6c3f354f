//! Constrained extended Kalman filter over fractions and a windowed
//! transmission-rate fit.
//!
//! The filter state is ordered `(s, i_u, r_u, i_d)`. With that order the
//! output map is `y = C x + c`, `C = [[0,0,0,1],[-1,-1,-1,-1]]`, `c = [0, 1]`,
//! giving `y = (i_d, r_d)`. Process noise is the diffusion matrix divided by
//! the population size; observations are exact (`R = 0`).

use alloc::vec::Vec;

use nalgebra::{Matrix2x4, Matrix4, Matrix4x2, SymmetricEigen, Vector2, Vector4};

use crate::math;
use crate::model::{rhs, FractionState};
use crate::params::Params;
use crate::stochastic::diffusion_matrix;
use crate::{Error, Result};

/// Sub-step of the prediction grid [day].
pub const PREDICT_STEP: f64 = 0.05;
/// Day-to-day records used by [`estimate_beta`].
pub const BETA_WINDOW: usize = 7;

const PSD_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorState {
    /// `(s, i_u, r_u, i_d)`
    pub x: Vector4<f64>,
    pub p: Matrix4<f64>,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub t: f64,
    pub id: f64,
    pub rd: f64,
}

impl Observation {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.id) && (0.0..=1.0).contains(&self.rd) && self.id + self.rd <= 1.0 + 1e-12;
        if ok {
            Ok(())
        } else {
            Err(Error::Domain("observed fractions outside [0, 1] or summing above 1"))
        }
    }
}

fn output_matrix() -> Matrix2x4<f64> {
    Matrix2x4::new(0.0, 0.0, 0.0, 1.0, -1.0, -1.0, -1.0, -1.0)
}

/// Model order `(s, i_u, i_d, r_u)` to filter order and back; the
/// permutation swaps the last two entries and is its own inverse.
fn to_filter(x: [f64; 4]) -> Vector4<f64> {
    Vector4::new(x[0], x[1], x[3], x[2])
}

fn to_model(x: &Vector4<f64>) -> [f64; 4] {
    [x[0], x[1], x[3], x[2]]
}

fn permute(m: &Matrix4<f64>) -> Matrix4<f64> {
    const IDX: [usize; 4] = [0, 1, 3, 2];
    Matrix4::from_fn(|i, j| m[(IDX[i], IDX[j])])
}

impl EstimatorState {
    /// Everybody susceptible, with variance `i_max^2 / 12` on `s` and `i_u`.
    pub fn initial(i_max: f64) -> Self {
        let v = i_max * i_max / 12.0;
        EstimatorState { x: Vector4::new(1.0, 0.0, 0.0, 0.0), p: Matrix4::from_diagonal(&Vector4::new(v, v, 0.0, 0.0)), t: 0.0 }
    }

    /// A known state: the filter vector of `x` with zero covariance.
    pub fn exact(x: &FractionState, t: f64) -> Self {
        EstimatorState { x: Vector4::new(x.s, x.iu, x.ru, x.id), p: Matrix4::zeros(), t }
    }

    pub fn fractions(&self) -> FractionState {
        FractionState::from_core(to_model(&self.x))
    }

    pub fn output(&self) -> Vector2<f64> {
        output_matrix() * self.x + Vector2::new(0.0, 1.0)
    }

    /// Smallest eigenvalue of the covariance.
    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.p).eigenvalues.min()
    }
}

/// Symmetrizes a freshly computed covariance and removes negative
/// eigenvalues at rounding level. Rounding is relative to the larger of the
/// input and output traces, so `scale` carries the input trace; anything more
/// negative than that is an error.
fn clean_covariance(p: Matrix4<f64>, scale: f64) -> Result<Matrix4<f64>> {
    let p = (p + p.transpose()) * 0.5;
    let trace = p.trace();
    let eig = SymmetricEigen::new(p);
    let min = eig.eigenvalues.min();
    if !min.is_finite() || min < -PSD_TOL * trace.max(scale).max(f64::MIN_POSITIVE) {
        return Err(Error::CovarianceNotPsd { min_eigenvalue: min, trace });
    }
    if min >= 0.0 {
        return Ok(p);
    }
    let v = eig.eigenvectors;
    let d = Matrix4::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0)));
    let q = v * d * v.transpose();
    Ok((q + q.transpose()) * 0.5)
}

/// Vector field in filter order at transmission rate `params.beta`.
pub fn drift(x: &Vector4<f64>, theta: f64, params: &Params) -> Vector4<f64> {
    to_filter(rhs(&to_model(x), params, theta, params.beta))
}

/// Jacobian of [`drift`].
pub fn drift_jacobian(x: &Vector4<f64>, theta: f64, params: &Params) -> Matrix4<f64> {
    let (s, iu) = (x[0], x[1]);
    let b = params.beta;
    let det = params.detection_rate(theta);
    let a = params.exit_rate(theta);
    let g = params.gamma;
    #[rustfmt::skip]
    let model = Matrix4::new(
        -b * iu, -b * s,     0.0, 0.0,
        b * iu,  b * s - a,  0.0, 0.0,
        0.0,     det,        -g,  0.0,
        0.0,     g,          0.0, -params.serology_recovered_rate(),
    );
    permute(&model)
}

/// Process noise in filter order.
pub fn process_noise(x: &Vector4<f64>, theta: f64, params: &Params, n: f64) -> Matrix4<f64> {
    let f = FractionState::from_core(to_model(x));
    permute(&diffusion_matrix(&f, theta, params)) / n
}

fn noise(x: &Vector4<f64>, theta: f64, params: &Params, n: f64) -> Matrix4<f64> {
    if n.is_finite() {
        process_noise(x, theta, params, n)
    } else {
        Matrix4::zeros()
    }
}

/// Propagates mean and covariance over `dt` with rate `theta` held, using
/// RK4 on a grid of at most [`PREDICT_STEP`]. `n = f64::INFINITY` removes
/// the process noise.
///
/// Each step writes the covariance as `Phi P Phi^T + Q_d`: `Phi` is the RK4
/// transition of the linearization along the mean's stages and `Q_d` sums
/// the stage noises carried to the step end. Both terms are positive
/// semidefinite by construction.
pub fn predict(est: &EstimatorState, theta: f64, dt: f64, params: &Params, n: f64) -> Result<EstimatorState> {
    if !(dt > 0.0) {
        return Err(Error::Domain("prediction step must be positive"));
    }
    let steps = math::ceil(dt / PREDICT_STEP - 1e-9).max(1.0) as usize;
    let h = dt / steps as f64;
    let id = Matrix4::<f64>::identity();
    let (mut x, mut p) = (est.x, est.p);
    for _ in 0..steps {
        let f = |y: &Vector4<f64>| (drift(y, theta, params), drift_jacobian(y, theta, params), noise(y, theta, params, n));
        let (k1, g1, q1) = f(&x);
        let (k2, g2, q2) = f(&(x + k1 * (h / 2.0)));
        let (k3, g3, q3) = f(&(x + k2 * (h / 2.0)));
        let (k4, g4, q4) = f(&(x + k3 * h));
        x += (k1 + 2.0 * k2 + 2.0 * k3 + k4) * (h / 6.0);

        let f1 = g1;
        let f2 = g2 * (id + f1 * (h / 2.0));
        let f3 = g3 * (id + f2 * (h / 2.0));
        let f4 = g4 * (id + f3 * h);
        let phi = id + (f1 + 2.0 * f2 + 2.0 * f3 + f4) * (h / 6.0);

        // Noise over the step, weighted like RK4 and carried to the step end
        // by the transition from the stage time; every term is PSD.
        let gm = (g2 + g3) * 0.5;
        let phi_half = id + gm * (h / 2.0) + gm * gm * (h * h / 8.0);
        let carry = |phi: &Matrix4<f64>, q: &Matrix4<f64>| phi * q * phi.transpose();
        let qd = (carry(&phi, &q1) + 2.0 * carry(&phi_half, &q2) + 2.0 * carry(&phi_half, &q3) + q4) * (h / 6.0);

        p = phi * p * phi.transpose() + qd;
        p = (p + p.transpose()) * 0.5;
    }
    Ok(EstimatorState { x, p: clean_covariance(p, est.p.trace())?, t: est.t + dt })
}

/// Square-root factors of the update. With `P = L L^T` and `M = C L`, exact
/// observations give `K = L M^+` and `P+ = (L Pi)(L Pi)^T`, `Pi` the
/// orthogonal projector onto the null space of `M`. Singular values of `M`
/// below `1e-10` of the largest are treated as zero.
fn sqrt_factors(p: &Matrix4<f64>) -> (Matrix4<f64>, Matrix4x2<f64>, Matrix4<f64>) {
    let eig = SymmetricEigen::new((p + p.transpose()) * 0.5);
    let l = eig.eigenvectors * Matrix4::from_diagonal(&eig.eigenvalues.map(|v| math::sqrt(v.max(0.0))));
    let m = output_matrix() * l;
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let tol = 1e-10 * svd.singular_values.max();
    let mut m_pinv = Matrix4x2::zeros();
    let mut proj = Matrix4::identity();
    for k in 0..2 {
        let sigma = svd.singular_values[k];
        if sigma > tol && sigma > 0.0 {
            let w = vt.row(k).transpose();
            m_pinv += w * u.column(k).transpose() / sigma;
            proj -= w * w.transpose();
        }
    }
    (l, m_pinv, proj)
}

/// Kalman gain with exact observations.
pub fn gain(p: &Matrix4<f64>) -> Matrix2x4<f64> {
    let (l, m_pinv, _) = sqrt_factors(p);
    (l * m_pinv).transpose()
}

/// Corrects the prediction with `obs` and projects onto the feasible set.
pub fn update(est: &EstimatorState, obs: &Observation) -> Result<EstimatorState> {
    obs.validate()?;
    let (l, m_pinv, proj) = sqrt_factors(&est.p);
    let y = Vector2::new(obs.id, obs.rd);
    let x = est.x + l * m_pinv * (y - est.output());
    let f = l * proj;
    let p = f * f.transpose();
    Ok(EstimatorState { x: project_feasible(&x, obs)?, p: clean_covariance(p, est.p.trace())?, t: obs.t })
}

/// Euclidean projection onto `{x >= 0 : C x + c = y}`: `i_d` is fixed by the
/// observation and `(s, i_u, r_u)` must be nonnegative with sum
/// `1 - i_d - r_d`. Every nonempty set of free coordinates is tried and the
/// closest feasible candidate kept.
pub fn project_feasible(x: &Vector4<f64>, obs: &Observation) -> Result<Vector4<f64>> {
    let mass = 1.0 - obs.id - obs.rd;
    if mass < -1e-12 || obs.id < 0.0 {
        return Err(Error::ContractViolation("observation leaves no feasible state"));
    }
    let mass = mass.max(0.0);
    let mut best: Option<(f64, [f64; 3])> = None;
    for mask in 1u8..8 {
        let free: Vec<usize> = (0..3).filter(|i| mask & (1 << i) != 0).collect();
        let shift = (mass - free.iter().map(|&i| x[i]).sum::<f64>()) / free.len() as f64;
        let mut z = [0.0; 3];
        for &i in &free {
            z[i] = x[i] + shift;
        }
        if z.iter().any(|&v| v < 0.0) {
            continue;
        }
        let dist: f64 = (0..3).map(|i| (z[i] - x[i]) * (z[i] - x[i])).sum();
        if best.is_none_or(|(d, _)| dist < d) {
            best = Some((dist, z));
        }
    }
    let (_, z) = best.ok_or(Error::ContractViolation("observation leaves no feasible state"))?;
    Ok(Vector4::new(z[0], z[1], z[2], obs.id))
}

/// Windowed transmission-rate fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaEstimate {
    pub beta_hat: f64,
    /// First and last day of the window.
    pub window: (f64, f64),
    pub residual_norm: f64,
    /// The window carried no information and the previous value was kept.
    pub fallback: bool,
}

/// One filtered state and the rate applied from it until the next record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRecord {
    pub state: FractionState,
    pub t: f64,
    pub theta: f64,
}

fn one_day_ahead(x: &FractionState, theta: f64, dt: f64, params: &Params, beta: f64) -> [f64; 4] {
    let steps = math::ceil(dt / PREDICT_STEP - 1e-9).max(1.0) as usize;
    let h = dt / steps as f64;
    let mut y = x.core();
    let add = |a: &[f64; 4], k: f64, b: &[f64; 4]| core::array::from_fn::<f64, 4, _>(|i| a[i] + k * b[i]);
    for _ in 0..steps {
        let k1 = rhs(&y, params, theta, beta);
        let k2 = rhs(&add(&y, h / 2.0, &k1), params, theta, beta);
        let k3 = rhs(&add(&y, h / 2.0, &k2), params, theta, beta);
        let k4 = rhs(&add(&y, h, &k3), params, theta, beta);
        y = core::array::from_fn(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
    }
    y
}

fn increment_residuals(window: &[HistoryRecord], params: &Params, beta: f64) -> Vec<f64> {
    let mut r = Vec::with_capacity(2 * (window.len() - 1));
    for pair in window.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let y = one_day_ahead(&a.state, a.theta, b.t - a.t, params, beta);
        r.push(y[1] - b.state.iu);
        r.push(y[2] - b.state.id);
    }
    r
}

/// Least-squares `beta` matching the day-to-day increments of `(i_u, i_d)`
/// over the last [`BETA_WINDOW`] records, by scalar Gauss-Newton from
/// `previous`. Windows where `i_u` stays below `1e-9` return `previous`.
pub fn estimate_beta(history: &[HistoryRecord], params: &Params, previous: f64) -> Result<BetaEstimate> {
    if history.len() < BETA_WINDOW {
        return Err(Error::Domain("transmission-rate fit needs seven daily records"));
    }
    let window = &history[history.len() - BETA_WINDOW..];
    let span = (window[0].t, window[BETA_WINDOW - 1].t);
    if window.iter().all(|r| r.state.iu < 1e-9 || r.state.s <= 0.0) {
        return Ok(BetaEstimate { beta_hat: previous, window: span, residual_norm: f64::NAN, fallback: true });
    }
    let norm = |r: &[f64]| math::sqrt(r.iter().map(|v| v * v).sum::<f64>());
    let mut beta = previous.max(0.0);
    let mut r = increment_residuals(window, params, beta);
    for _ in 0..30 {
        let h = 1e-6 * beta.max(1e-2);
        let rp = increment_residuals(window, params, beta + h);
        let rm = increment_residuals(window, params, (beta - h).max(0.0));
        let width = beta + h - (beta - h).max(0.0);
        let (mut jtj, mut jtr) = (0.0, 0.0);
        for i in 0..r.len() {
            let j = (rp[i] - rm[i]) / width;
            jtj += j * j;
            jtr += j * r[i];
        }
        if jtj <= 0.0 {
            break;
        }
        let next = (beta - jtr / jtj).max(0.0);
        let done = (next - beta).abs() <= 1e-12 * beta.max(1.0);
        beta = next;
        r = increment_residuals(window, params, beta);
        if done {
            break;
        }
    }
    Ok(BetaEstimate { beta_hat: beta, window: span, residual_norm: norm(&r), fallback: false })
}
