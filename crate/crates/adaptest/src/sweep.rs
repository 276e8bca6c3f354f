//! Cost of the closed loop across baseline serology rates, relative to the
//! constant-rate baseline.

use crate::config::Scenario;
use crate::ensemble::{closed_loop_ensemble, constant_arm, mean, std_dev, summarize_replicate, ConstantArm, Z95};
use crate::error::AppError;
use crate::output::{Cell, Table};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostRow {
    pub theta_b: f64,
    /// Mean per-capita adaptive molecular cost.
    pub adaptive: f64,
    pub serology: f64,
    /// `adaptive + serology`.
    pub total: f64,
    /// `total` over the mean constant-arm cost.
    pub normalized: f64,
    /// 95% half-width of `normalized` from the replicate spread of `total`.
    pub ci95: f64,
    pub n_reps: usize,
    pub max_peak: u64,
    /// Some replicate exceeded the cap by more than `2 sqrt(N)` individuals.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub rows: Vec<CostRow>,
    pub baseline: ConstantArm,
}

impl CostReport {
    pub fn table(&self) -> Table {
        let mut t = Table::new(
            "cost_report",
            &["theta_b", "adaptive", "serology", "total", "normalized", "ci95", "n_reps", "max_peak", "flagged"],
        );
        for r in &self.rows {
            t.push(vec![
                r.theta_b.into(),
                r.adaptive.into(),
                r.serology.into(),
                r.total.into(),
                r.normalized.into(),
                r.ci95.into(),
                (r.n_reps as u64).into(),
                r.max_peak.into(),
                Cell::Int(r.flagged as u64),
            ]);
        }
        t
    }

    pub fn baseline_table(&self) -> Table {
        let mut t = Table::new("constant_arm", &["replicate", "theta_const", "cost", "peak"]);
        for (r, (c, p)) in self.baseline.costs.iter().zip(&self.baseline.peaks).enumerate() {
            t.push(vec![(r as u64).into(), self.baseline.theta_const.into(), (*c).into(), (*p).into()]);
        }
        t
    }
}

/// Runs the closed-loop ensemble for every rate in `sc`'s sweep grid and the
/// constant arm once, all from the scenario's master seed.
pub fn cost_sweep(sc: &Scenario, jobs: usize) -> Result<CostReport, AppError> {
    let baseline = constant_arm(sc, &sc.params, jobs)?;
    let denom = mean(&baseline.costs);
    if !(denom > 0.0) {
        return Err(AppError::Invariant("constant arm has zero cost; nothing to normalize by".into()));
    }
    let bound = sc.i_max * sc.n as f64 + 2.0 * (sc.n as f64).sqrt();
    let mut rows = Vec::with_capacity(sc.config.sweep.theta_b.len());
    for &theta_b in &sc.config.sweep.theta_b {
        let p = sc.params.with_theta_b(theta_b);
        let recs = closed_loop_ensemble(sc, &p, jobs)?;
        let sums = recs.iter().map(|r| summarize_replicate(r, &p)).collect::<Result<Vec<_>, _>>()?;
        let col = |f: fn(&crate::ensemble::ReplicateSummary) -> f64| sums.iter().map(f).collect::<Vec<f64>>();
        let (adaptive, serology, totals) = (col(|s| s.adaptive), col(|s| s.serology), col(|s| s.total));
        let total = mean(&totals);
        let max_peak = sums.iter().map(|s| s.peak).max().unwrap_or(0);
        rows.push(CostRow {
            theta_b,
            adaptive: mean(&adaptive),
            serology: mean(&serology),
            total,
            normalized: total / denom,
            ci95: Z95 * std_dev(&totals) / (totals.len() as f64).sqrt() / denom,
            n_reps: recs.len(),
            max_peak,
            flagged: max_peak as f64 > bound,
        });
    }
    Ok(CostReport { rows, baseline })
}
