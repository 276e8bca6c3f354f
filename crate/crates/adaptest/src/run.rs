//! One runner per subcommand. Runners return tables and a one-line summary;
//! writing files is left to the caller.

use std::fmt::Write as _;

use adaptest_core::model::{integrate, ConstantRate, FractionState, Trajectory};
use adaptest_core::observability::{
    counterexample_pair, reconstruct_from_molecular, reconstruct_from_serology, Differentiation, SampledSeries,
};
use adaptest_core::policy::{solve_constant_rate, solve_switching, threshold_rate, ThresholdPolicy};
use adaptest_core::stochastic::ensemble::quantile_sorted;
use adaptest_core::stochastic::{gillespie_run, replicate_rng, summarize, CountState, CHANNEL_NAMES};

use crate::config::{PolicyKind, Scenario};
use crate::ensemble::{self, closed_loop_ensemble, deterministic_loop, mean, par_map, summarize_replicate};
use crate::error::AppError;
use crate::output::{Cell, Table};
use crate::sweep::cost_sweep;

/// Absolute slack on the cap for noise-free runs.
pub const CAP_TOL: f64 = 1e-6;
/// Slack for the noise-free receding-horizon loop, which only sees the state
/// once per epoch.
pub const LOOP_CAP_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub tables: Vec<Table>,
    pub summary: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Deterministic,
    Optimize,
    Simulate,
    ClosedLoop,
    CostSweep,
    Observability,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Deterministic => "deterministic",
            Command::Optimize => "optimize",
            Command::Simulate => "simulate",
            Command::ClosedLoop => "closed-loop",
            Command::CostSweep => "cost-sweep",
            Command::Observability => "observability",
        }
    }
}

pub fn run(cmd: Command, sc: &Scenario, jobs: usize) -> Result<Outcome, AppError> {
    match cmd {
        Command::Deterministic => deterministic(sc),
        Command::Optimize => optimize(sc),
        Command::Simulate => simulate(sc, jobs),
        Command::ClosedLoop => closed_loop(sc, jobs),
        Command::CostSweep => sweep(sc, jobs),
        Command::Observability => observability(sc),
    }
}

fn require(sc: &Scenario, allowed: &[PolicyKind], cmd: &str) -> Result<(), AppError> {
    if allowed.contains(&sc.kind) {
        Ok(())
    } else {
        let names: Vec<_> = allowed.iter().map(|k| k.name()).collect();
        Err(AppError::Invalid {
            field: "scenario.policy",
            message: format!("{cmd} needs one of {}, got {}", names.join(", "), sc.kind.name()),
        })
    }
}

fn trajectory_table(traj: &Trajectory) -> Table {
    let mut t = Table::new("trajectory", &["t", "s", "iu", "id", "ru", "rd", "theta"]);
    for p in traj.iter() {
        let x = &p.state;
        t.push(vec![p.t.into(), x.s.into(), x.iu.into(), x.id.into(), x.ru.into(), x.rd.into(), p.theta.into()]);
    }
    t
}

fn check_cap(what: &str, peak: f64, cap: f64, tol: f64) -> Result<(), AppError> {
    if peak > cap + tol {
        Err(AppError::Invariant(format!("{what} peaks at {peak}, above the cap {cap}")))
    } else {
        Ok(())
    }
}

/// Noise-free replay of the configured policy.
pub fn deterministic(sc: &Scenario) -> Result<Outcome, AppError> {
    let (s0, i0) = sc.initial_fractions();
    let x0 = FractionState::initial(s0, i0);
    let p = &sc.params;
    let (traj, summary) = match sc.kind {
        PolicyKind::Threshold => {
            let pol = ThresholdPolicy::solve(&x0, sc.i_max, &sc.beta, p, sc.horizon, sc.step)?;
            let (_, peak) = pol.trajectory.max_of(|x| x.iu);
            check_cap("i_u", peak, sc.i_max, CAP_TOL)?;
            let s = format!(
                "threshold: cost {:?}, max i_u {peak:?}, cap reached at {}, herd immunity at {}",
                pol.cost_until(sc.horizon),
                fmt_opt(pol.t_hit),
                fmt_opt(pol.t_herd)
            );
            (pol.trajectory, s)
        }
        PolicyKind::Switching => {
            let pol = solve_switching(s0, i0, sc.i_max, p.theta_max, p)?;
            let replay = pol.replay(p, sc.horizon, sc.step)?;
            let (_, peak) = replay.trajectory.max_of(|x| x.infected());
            check_cap("i_u + i_d", peak, sc.i_max, CAP_TOL)?;
            (replay.trajectory, format!("switching: cost {:?}, max i_u + i_d {peak:?}", replay.cost))
        }
        PolicyKind::Constant => {
            let sol = solve_constant_rate(s0, i0, sc.i_max, p)?;
            let traj = integrate(&x0, &ConstantRate(sol.theta_const), &sc.beta, p, sc.horizon, sc.step)?;
            let (_, peak) = traj.max_of(|x| x.infected());
            check_cap("i_u + i_d", peak, sc.i_max, CAP_TOL)?;
            (traj, format!("constant: theta {:?}, max i_u + i_d {peak:?}", sol.theta_const))
        }
        PolicyKind::ClosedLoop => {
            let run = deterministic_loop(sc, p)?;
            let (_, peak) = run.trajectory.max_of(|x| x.infected());
            check_cap("i_u + i_d", peak, sc.i_max, LOOP_CAP_TOL)?;
            (run.trajectory, format!("closed-loop (noise-free): cost {:?}, max i_u + i_d {peak:?}", run.cost))
        }
    };
    Ok(Outcome { tables: vec![trajectory_table(&traj)], summary })
}

fn fmt_opt(t: Option<f64>) -> String {
    t.map_or("never".into(), |v| format!("t = {v:.4}"))
}

/// Solves the configured policy and reports its schedule.
pub fn optimize(sc: &Scenario) -> Result<Outcome, AppError> {
    require(sc, &[PolicyKind::Threshold, PolicyKind::Switching, PolicyKind::Constant], "optimize")?;
    let (s0, i0) = sc.initial_fractions();
    let p = &sc.params;
    let mut t = Table::new("schedule", &["quantity", "value"]);
    let mut put = |k: &str, v: f64| t.push(vec![k.into(), v.into()]);
    let summary = match sc.kind {
        PolicyKind::Threshold => {
            let pol = ThresholdPolicy::solve(&FractionState::initial(s0, i0), sc.i_max, &sc.beta, p, sc.horizon, sc.step)?;
            put("t_hit", pol.t_hit.unwrap_or(f64::NAN));
            put("t_herd", pol.t_herd.unwrap_or(f64::NAN));
            put("theta_after_hit", pol.theta_after_hit);
            let cost = pol.cost_until(sc.horizon);
            put("cost", cost);
            format!("threshold: plateau from {} to {}, cost {cost:?}", fmt_opt(pol.t_hit), fmt_opt(pol.t_herd))
        }
        PolicyKind::Switching => {
            let pol = solve_switching(s0, i0, sc.i_max, p.theta_max, p)?;
            match pol.arcs {
                None => {
                    put("cost", 0.0);
                    "switching: the untested epidemic stays under the cap".into()
                }
                Some(a) => {
                    for (k, v) in [
                        ("t_a", a.t_a),
                        ("t_b", a.t_b),
                        ("t_c", a.t_c),
                        ("t_d", a.t_d),
                        ("t_e", a.t_e),
                        ("tau3", a.tau3),
                        ("tau3_bar", a.tau3_bar),
                        ("residual_ab", a.residual_ab),
                        ("residual_de", a.residual_de),
                        ("cost", pol.cost()),
                    ] {
                        put(k, v);
                    }
                    format!(
                        "switching: t_A {:.2}, t_B {:.2}, t_C {:.2}, t_D {:.2}, t_E {:.2}, cost {:?}",
                        a.t_a,
                        a.t_b,
                        a.t_c,
                        a.t_d,
                        a.t_e,
                        pol.cost()
                    )
                }
            }
        }
        PolicyKind::Constant | PolicyKind::ClosedLoop => {
            let sol = solve_constant_rate(s0, i0, sc.i_max, p)?;
            for (k, v) in [
                ("theta_const", sol.theta_const),
                ("s_bar", sol.s_bar),
                ("iu_bar", sol.iu_bar),
                ("id_bar", sol.id_bar),
                ("t_bar", sol.t_bar),
                ("residual", sol.residual),
            ] {
                put(k, v);
            }
            format!("constant: theta {:?}, touch at t = {:.2}", sol.theta_const, sol.t_bar)
        }
    };
    Ok(Outcome { tables: vec![t], summary })
}

type RateLaw = Box<dyn Fn(f64, &FractionState) -> f64 + Sync>;

/// Stochastic ensemble under the configured open-loop policy, which reads
/// the true counts at every epoch.
pub fn simulate(sc: &Scenario, jobs: usize) -> Result<Outcome, AppError> {
    require(sc, &[PolicyKind::Threshold, PolicyKind::Switching, PolicyKind::Constant], "simulate")?;
    let (s0, i0) = sc.initial_fractions();
    let p = sc.params;
    let x0 = CountState::outbreak(sc.n, sc.i0)?;
    let epoch = sc.config.controller.epoch;
    let law: RateLaw = match sc.kind {
        PolicyKind::Threshold => {
            let pol = ThresholdPolicy::solve(&FractionState::initial(s0, i0), sc.i_max, &sc.beta, &p, sc.horizon, sc.step)?;
            let beta = sc.beta.clone();
            Box::new(move |t, x| threshold_rate(x, beta.value(t), &p, pol.phase(t)))
        }
        PolicyKind::Switching => {
            let pol = solve_switching(s0, i0, sc.i_max, p.theta_max, &p)?;
            Box::new(move |t, x| pol.rate(t, x))
        }
        _ => {
            let theta = solve_constant_rate(s0, i0, sc.i_max, &p)?.theta_const;
            Box::new(move |_, _| theta)
        }
    };
    let runs = par_map(jobs, sc.replicates, |r| {
        Ok(gillespie_run(x0, |t, x| law(t, &x.fractions()), &p, &sc.beta, sc.horizon, epoch, replicate_rng(sc.seed, r as u64))?)
    })?;
    let ens = summarize(&runs, sc.seed)?;
    let mut cols = vec!["t".to_string()];
    for stat in ["mean", "lo", "hi"] {
        cols.extend(CHANNEL_NAMES.iter().map(|c| format!("{c}_{stat}")));
    }
    let mut bands = Table { name: "ensemble".into(), columns: cols, rows: Vec::new() };
    for (k, t) in ens.grid.iter().enumerate() {
        let mut row: Vec<Cell> = vec![(*t).into()];
        for stat in [&ens.mean, &ens.lo, &ens.hi] {
            row.extend(stat[k].iter().map(|&v| Cell::Num(v)));
        }
        bands.push(row);
    }
    let bound = sc.i_max * sc.n as f64 + 2.0 * (sc.n as f64).sqrt();
    let peaks: Vec<u64> = runs.iter().map(|r| r.samples.iter().map(|s| s.state.infected()).max().unwrap_or(0)).collect();
    let over = peaks.iter().filter(|&&v| v as f64 > bound).count();
    let summary = format!(
        "simulate {}: {} replicates, mean peak {:.1} individuals, {over} above cap + 2 sqrt(N), seed {}",
        sc.kind.name(),
        runs.len(),
        mean(&peaks.iter().map(|&v| v as f64).collect::<Vec<_>>()),
        sc.seed
    );
    Ok(Outcome { tables: vec![bands], summary })
}

/// Estimator-controller ensemble with per-epoch bands and per-replicate
/// totals.
pub fn closed_loop(sc: &Scenario, jobs: usize) -> Result<Outcome, AppError> {
    require(sc, &[PolicyKind::ClosedLoop], "closed-loop")?;
    let recs = closed_loop_ensemble(sc, &sc.params, jobs)?;
    let sums = recs.iter().map(|r| summarize_replicate(r, &sc.params)).collect::<Result<Vec<_>, _>>()?;
    let n = sc.n as f64;

    let mut per_rep = Table::new(
        "replicates",
        &["replicate", "adaptive", "serology", "total", "tests", "peak", "coverage", "absorbed_at"],
    );
    for (r, (s, rec)) in sums.iter().zip(&recs).enumerate() {
        per_rep.push(vec![
            (r as u64).into(),
            s.adaptive.into(),
            s.serology.into(),
            s.total.into(),
            rec.tests.into(),
            s.peak.into(),
            s.coverage.into(),
            s.absorbed_at.unwrap_or(f64::NAN).into(),
        ]);
    }

    let mut epochs = Table::new(
        "epochs",
        &["t", "infected_mean", "infected_lo", "infected_hi", "iu_mean", "iu_hat_mean", "theta_mean", "beta_hat_mean", "covered"],
    );
    let len = recs[0].epochs.len();
    for k in 0..len {
        let at: Vec<_> = recs.iter().map(|r| &r.epochs[k]).collect();
        let mut infected: Vec<f64> = at.iter().map(|e| e.truth.infected() as f64).collect();
        let covered = at
            .iter()
            .filter(|e| {
                let sd = e.estimate.p[(1, 1)].max(0.0).sqrt();
                (e.truth.iu as f64 / n - e.estimate.x[1]).abs() <= ensemble::Z95 * sd
            })
            .count();
        let m = mean(&infected);
        infected.sort_by(f64::total_cmp);
        epochs.push(vec![
            at[0].t.into(),
            m.into(),
            quantile_sorted(&infected, 0.025).into(),
            quantile_sorted(&infected, 0.975).into(),
            mean(&at.iter().map(|e| e.truth.iu as f64).collect::<Vec<_>>()).into(),
            mean(&at.iter().map(|e| e.estimate.x[1] * n).collect::<Vec<_>>()).into(),
            mean(&at.iter().map(|e| e.theta).collect::<Vec<_>>()).into(),
            mean(&at.iter().map(|e| e.beta_hat).collect::<Vec<_>>()).into(),
            (covered as f64 / at.len() as f64).into(),
        ]);
    }
    let bound = sc.i_max * n + 2.0 * n.sqrt();
    let over = sums.iter().filter(|s| s.peak as f64 > bound).count();
    let totals: Vec<f64> = sums.iter().map(|s| s.total).collect();
    let summary = format!(
        "closed-loop: {} replicates, mean cost {:?}, median coverage {:.3}, {over} above cap + 2 sqrt(N), seed {}",
        recs.len(),
        mean(&totals),
        ensemble::median(&sums.iter().map(|s| s.coverage).collect::<Vec<_>>()),
        sc.seed
    );
    Ok(Outcome { tables: vec![epochs, per_rep], summary })
}

pub fn sweep(sc: &Scenario, jobs: usize) -> Result<Outcome, AppError> {
    require(sc, &[PolicyKind::ClosedLoop], "cost-sweep")?;
    let report = cost_sweep(sc, jobs)?;
    let mut summary = format!("cost-sweep: constant arm theta {:?};", report.baseline.theta_const);
    for r in &report.rows {
        write!(summary, " theta_b {:.4} -> {:.3}{}", r.theta_b, r.normalized, if r.flagged { " (flagged)" } else { "" }).unwrap();
    }
    write!(summary, "; seed {}", sc.seed).unwrap();
    Ok(Outcome { tables: vec![report.table(), report.baseline_table()], summary })
}

/// Twin runs that share their detected curve, the serology reconstruction
/// of a generated epidemic, and the constant-rate fit on both twins.
pub fn observability(sc: &Scenario) -> Result<Outcome, AppError> {
    let ob = &sc.config.observability;
    let plain = sc.params.with_theta_b(0.0);
    let theta = ob.theta;
    let twin = counterexample_pair(ob.s0, ob.s0_bar, ob.i0, |_| theta, &plain, ob.horizon, ob.step)?;
    let mut twins = Table::new("twins", &["t", "s", "iu", "id", "s_bar", "iu_bar", "id_bar", "beta_bar"]);
    for (a, b) in twin.primary.iter().zip(twin.shadow.iter()) {
        let (x, y) = (&a.state, &b.state);
        twins.push(vec![
            a.t.into(),
            x.s.into(),
            x.iu.into(),
            x.id.into(),
            y.s.into(),
            y.iu.into(),
            y.id.into(),
            twin.shadow_beta.value(a.t).into(),
        ]);
    }
    let fit = |traj: &Trajectory| {
        reconstruct_from_molecular(&SampledSeries::from_trajectory(traj, ob.sample_dt), &plain, Differentiation::Central)
    };
    let (fa, fb) = (fit(&twin.primary)?, fit(&twin.shadow)?);
    let mut summary = format!(
        "observability: twin gaps |i_d| {:e}, |s| {:.4}; constant-rate fit {:.6} on the primary, {:.6} on the shadow",
        twin.id_gap, twin.s_gap, fa.beta, fb.beta
    );
    let mut tables = vec![twins];

    if sc.params.theta_b > 0.0 {
        let traj = integrate(&FractionState::initial(ob.s0, ob.i0), &ConstantRate(theta), &sc.beta, &sc.params, ob.horizon, ob.step)?;
        let obs = SampledSeries::from_trajectory(&traj, ob.sample_dt);
        let rec = reconstruct_from_serology(&obs, &sc.params, Differentiation::Central)?;
        let mut t = Table::new(
            "serology_reconstruction",
            &["t", "iu", "iu_hat", "ru", "ru_hat", "s", "s_hat", "beta", "beta_hat"],
        );
        let mut worst: f64 = 0.0;
        for (k, tk) in rec.t.iter().enumerate() {
            let x = traj.state_at(*tk);
            let beta_hat = rec.beta[k].unwrap_or(f64::NAN);
            if x.iu > 1e-4 {
                worst = worst.max((rec.iu[k] - x.iu).abs() / x.iu);
            }
            t.push(vec![
                (*tk).into(),
                x.iu.into(),
                rec.iu[k].into(),
                x.ru.into(),
                rec.ru[k].into(),
                x.s.into(),
                rec.s[k].into(),
                sc.beta.value(*tk).into(),
                beta_hat.into(),
            ]);
        }
        write!(summary, "; serology max relative i_u error {worst:e}").unwrap();
        tables.push(t);
    } else {
        summary.push_str("; serology reconstruction skipped (params.theta_b = 0)");
    }
    Ok(Outcome { tables, summary })
}
