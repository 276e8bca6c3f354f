//! Ensembles of seeded replicates and their per-epoch summaries.

use alloc::vec;
use alloc::vec::Vec;

use super::ssa::{gillespie_run, replicate_rng, SsaRun};
use super::CountState;
use crate::model::BetaSignal;
use crate::params::Params;
use crate::{Error, Result};

/// Summary channels: fractions `s, i_u, i_d, r_u, r_d`, then the applied rate.
pub const CHANNELS: usize = 6;
pub const CHANNEL_NAMES: [&str; CHANNELS] = ["s", "iu", "id", "ru", "rd", "theta"];

/// Pointwise statistics over replicates on the shared epoch grid.
/// `mean[k][c]` is channel `c` at `grid[k]`; `lo`/`hi` are the 2.5% and 97.5%
/// empirical quantiles.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSummary {
    pub grid: Vec<f64>,
    pub mean: Vec<[f64; CHANNELS]>,
    pub variance: Vec<[f64; CHANNELS]>,
    pub lo: Vec<[f64; CHANNELS]>,
    pub hi: Vec<[f64; CHANNELS]>,
    pub n_reps: usize,
    pub master_seed: u64,
}

fn channels(state: &CountState, theta: f64) -> [f64; CHANNELS] {
    let f = state.fractions();
    [f.s, f.iu, f.id, f.ru, f.rd, theta]
}

/// Linear-interpolation quantile of sorted data (Hyndman-Fan type 7).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let k = h as usize;
    if k + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    sorted[k] + (h - k as f64) * (sorted[k + 1] - sorted[k])
}

/// Aggregates runs that share one epoch grid. Statistics are computed in
/// replicate order, so the result does not depend on how runs were scheduled.
pub fn summarize(runs: &[SsaRun], master_seed: u64) -> Result<EnsembleSummary> {
    if runs.len() < 2 {
        return Err(Error::Domain("an ensemble needs at least two replicates"));
    }
    let len = runs[0].samples.len();
    if runs.iter().any(|r| r.samples.len() != len) {
        return Err(Error::Domain("replicates have different epoch grids"));
    }
    let n = runs.len() as f64;
    let grid: Vec<f64> = runs[0].samples.iter().map(|s| s.t).collect();
    let mut mean = vec![[0.0; CHANNELS]; len];
    let mut variance = vec![[0.0; CHANNELS]; len];
    let mut lo = vec![[0.0; CHANNELS]; len];
    let mut hi = vec![[0.0; CHANNELS]; len];
    let mut column = vec![0.0; runs.len()];
    for k in 0..len {
        let values: Vec<[f64; CHANNELS]> =
            runs.iter().map(|r| channels(&r.samples[k].state, r.samples[k].theta)).collect();
        for c in 0..CHANNELS {
            for (slot, v) in column.iter_mut().zip(&values) {
                *slot = v[c];
            }
            let m = column.iter().sum::<f64>() / n;
            mean[k][c] = m;
            variance[k][c] = column.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
            column.sort_by(f64::total_cmp);
            lo[k][c] = quantile_sorted(&column, 0.025).min(m);
            hi[k][c] = quantile_sorted(&column, 0.975).max(m);
        }
    }
    Ok(EnsembleSummary { grid, mean, variance, lo, hi, n_reps: runs.len(), master_seed })
}

/// Runs `n_reps` replicates one after another; replicate `r` uses
/// [`replicate_rng`]`(master_seed, r)` and the controller built by
/// `factory(r)`. The rate is updated at daily epochs.
#[allow(clippy::too_many_arguments)]
pub fn ensemble_run<C, F>(
    n_reps: usize,
    x0: CountState,
    mut factory: F,
    params: &Params,
    beta: &BetaSignal,
    horizon: f64,
    master_seed: u64,
) -> Result<EnsembleSummary>
where
    F: FnMut(u64) -> C,
    C: FnMut(f64, &CountState) -> f64,
{
    let mut runs = Vec::with_capacity(n_reps);
    for r in 0..n_reps as u64 {
        runs.push(gillespie_run(x0, factory(r), params, beta, horizon, 1.0, replicate_rng(master_seed, r))?);
    }
    summarize(&runs, master_seed)
}
