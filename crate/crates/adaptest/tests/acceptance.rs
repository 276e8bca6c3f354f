//! End-to-end acceptance checks. Prints one PASS/FAIL line per check and
//! exits nonzero if any fails.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use adaptest::config::Config;
use adaptest::ensemble::{closed_loop_ensemble, deterministic_loop, mean, median, summarize_replicate};
use adaptest::run::deterministic;
use adaptest::sweep::cost_sweep;
use adaptest::Scenario;
use adaptest_core::model::{integrate, BetaSignal, ConstantRate, FractionState};
use adaptest_core::observability::{counterexample_pair, reconstruct_from_serology, Differentiation, SampledSeries};
use adaptest_core::policy::{solve_constant_rate, solve_switching};
use adaptest_core::stochastic::{diffusion_matrix, replicate_rng, CountState, Simulator};
use adaptest_core::Params;

type Check = Result<String, String>;

fn scenario(text: &str) -> Scenario {
    Config::from_toml(text).expect("scenario parses").resolve().expect("scenario resolves")
}

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(limit: Duration, started: Instant, detail: String) -> Check {
    let took = started.elapsed();
    ensure(took < limit, format!("{detail}; {:.2} s (limit {} s)", took.as_secs_f64(), limit.as_secs()))
}

fn threshold_replay() -> Check {
    let started = Instant::now();
    let sc = scenario(
        "[scenario]\npolicy = \"threshold\"\nhorizon = 300\n[params]\neta = 1.0\nkappa = 0.0\n\
         [population]\nn = 100000\ni0 = 100\ni_max = 0.1\n",
    );
    let out = deterministic(&sc).map_err(|e| e.to_string())?;
    let table = &out.tables[0];
    let (t, s, iu, theta) = (
        table.column("t").unwrap(),
        table.column("s").unwrap(),
        table.column("iu").unwrap(),
        table.column("theta").unwrap(),
    );
    let peak = iu.iter().cloned().fold(0.0, f64::max);
    let herd = sc.params.gamma / sc.params.beta;
    let cross = s.iter().position(|&v| v <= herd).ok_or("s never reaches gamma / beta")?;
    let hit = iu.iter().position(|&v| v >= 0.1 - 1e-4).ok_or("cap never reached")?;
    let plateau_err = iu[hit..cross].iter().map(|v| (v - 0.1).abs()).fold(0.0, f64::max);
    let testing_before = theta[hit + 1..cross.saturating_sub(1)].iter().all(|&v| v > 0.0);
    let stops = theta[cross + 1..].iter().all(|&v| v == 0.0);
    let detail = format!(
        "max i_u - 0.1 = {:.1e}, plateau error {plateau_err:.1e}, s crosses {herd:.6} at t = {:.2}, rate zero from the next step: {stops}",
        peak - 0.1,
        t[cross]
    );
    ensure(peak <= 0.1 + 1e-6 && plateau_err < 1e-4 && testing_before && stops, detail.clone())?;
    within(Duration::from_secs(1), started, detail)
}

fn switching_tangency() -> Check {
    let started = Instant::now();
    let p = Params::standard().with_eta(1.0);
    let pol = solve_switching(0.999, 0.001, 0.1, p.theta_max, &p).map_err(|e| e.to_string())?;
    let a = pol.arcs.ok_or("no switching needed")?;
    let residual = |x: &FractionState| {
        let value = (x.iu + x.id - 0.1).abs();
        let slope = (p.beta * x.s * x.iu - p.gamma * (x.iu + x.id)).abs();
        value.max(slope)
    };
    let (rb, re) = (residual(&a.b), residual(&a.e));
    let replay = pol.replay(&p, 200.0, 0.01).map_err(|e| e.to_string())?;
    let (_, peak) = replay.trajectory.max_of(|x| x.infected());
    let detail = format!(
        "t_B {:.2}, t_E {:.2}: residuals {rb:.1e}, {re:.1e}; replay max i_u + i_d - 0.1 = {:.1e}",
        a.t_b,
        a.t_e,
        peak - 0.1
    );
    ensure(rb < 1e-6 && re < 1e-6 && peak <= 0.1 + 1e-6, detail.clone())?;
    within(Duration::from_secs(10), started, detail)
}

fn constant_baseline() -> Check {
    let started = Instant::now();
    let p = Params::standard();
    let i_max = 0.02;
    let sol = solve_constant_rate(0.999, 0.001, i_max, &p).map_err(|e| e.to_string())?;
    let traj = integrate(&FractionState::initial(0.999, 0.001), &ConstantRate(sol.theta_const), &BetaSignal::Constant(p.beta), &p, 1500.0, 0.01)
        .map_err(|e| e.to_string())?;
    let values: Vec<f64> = traj.iter().map(|pt| pt.state.infected()).collect();
    let peak = values.iter().cloned().fold(0.0, f64::max);
    let near: Vec<usize> = (0..values.len()).filter(|&k| values[k] > i_max - 1e-4).collect();
    let touches = 1 + near.windows(2).filter(|w| w[1] != w[0] + 1).count();
    let detail = format!("theta_const {:.6}, max i_u + i_d - i_max = {:.1e}, touches {touches}", sol.theta_const, peak - i_max);
    ensure(peak >= i_max - 1e-4 && peak <= i_max + 1e-6 && !near.is_empty() && touches == 1, detail.clone())?;
    within(Duration::from_secs(5), started, detail)
}

const CLOSED_LOOP: &str = "[scenario]\npolicy = \"closed-loop\"\nhorizon = 1500\nseed = 2024\n\
    [params]\ntheta_b = 0.07142857142857142\n\
    [population]\nn = 50000\ni0 = 50\ni_max_count = 1000\n[ensemble]\nreplicates = 100\n";

/// Checks 4 and 5 share one ensemble.
fn plateau_and_coverage() -> (Check, Check) {
    let started = Instant::now();
    let sc = scenario(CLOSED_LOOP);
    let run = || -> Result<_, String> {
        let recs = closed_loop_ensemble(&sc, &sc.params, 1).map_err(|e| e.to_string())?;
        let window = deterministic_loop(&sc, &sc.params)
            .map_err(|e| e.to_string())?
            .plateau(sc.i_max, 1e-4)
            .ok_or("noise-free loop never rides the cap")?;
        Ok((recs, window))
    };
    let (recs, (t0, t1)) = match run() {
        Ok(v) => v,
        Err(e) => return (Err(e.clone()), Err(e)),
    };
    let cap = sc.i_max * sc.n as f64;
    let (mut lo, mut hi, mut sq, mut count) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for k in 0..recs[0].epochs.len() {
        let t = recs[0].epochs[k].t;
        if t < t0 || t > t1 {
            continue;
        }
        let values: Vec<f64> = recs.iter().map(|r| r.epochs[k].truth.infected() as f64).collect();
        let m = mean(&values);
        lo = lo.min(m);
        hi = hi.max(m);
        sq += values.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
        count += values.len();
    }
    let sd = (sq / (count as f64 - 1.0)).sqrt();
    let limit = 5.0 * (sc.n as f64).sqrt();
    let plateau_detail = format!(
        "window t = {t0}..{t1}: ensemble-mean I in [{:.3}, {:.3}] I_max, spread {sd:.0} (limit {limit:.0})",
        lo / cap,
        hi / cap
    );
    let plateau = ensure(lo >= 0.85 * cap && hi <= 1.15 * cap && sd < limit, plateau_detail.clone())
        .and_then(|d| within(Duration::from_secs(600), started, d));

    let coverage: Result<Vec<f64>, String> =
        recs.iter().map(|r| summarize_replicate(r, &sc.params).map(|s| s.coverage).map_err(|e| e.to_string())).collect();
    let coverage = coverage.and_then(|c| {
        let med = median(&c);
        let worst = c.iter().cloned().fold(1.0, f64::min);
        ensure(med >= 0.8, format!("median share of epochs inside the 95% band {med:.3} (worst replicate {worst:.3})"))
    });
    (plateau, coverage)
}

fn diffusion_consistency() -> Check {
    let started = Instant::now();
    let p = Params::standard().with_theta_b(1.0 / 14.0);
    let n = 200_000u64;
    let x0 = CountState::new(120_000, 10_000, 6_000, 40_000, n).unwrap();
    let (theta, dt, reps) = (0.1, 0.05, 10_000);
    let mut incr = Vec::with_capacity(reps);
    for r in 0..reps {
        let mut sim = Simulator::new(x0, p, BetaSignal::Constant(p.beta), replicate_rng(606, r as u64)).unwrap();
        sim.advance(theta, dt, |_, _, _| {});
        let (a, b) = (x0.fractions(), sim.state.fractions());
        incr.push([b.s - a.s, b.iu - a.iu, b.id - a.id, b.ru - a.ru]);
    }
    let m: Vec<f64> = (0..4).map(|i| incr.iter().map(|v| v[i]).sum::<f64>() / reps as f64).collect();
    let b = diffusion_matrix(&x0.fractions(), theta, &p) * (dt / n as f64);
    let big = b.amax();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for i in 0..4 {
        for j in 0..4 {
            if b[(i, j)].abs() < 0.1 * big {
                continue;
            }
            let cov = incr.iter().map(|v| (v[i] - m[i]) * (v[j] - m[j])).sum::<f64>() / (reps as f64 - 1.0);
            worst = worst.max((cov / b[(i, j)] - 1.0).abs());
            checked += 1;
        }
    }
    let detail = format!("{checked} dominant entries, largest relative gap {:.1}%", 100.0 * worst);
    ensure(worst < 0.2, detail.clone())?;
    within(Duration::from_secs(60), started, detail)
}

const SWEEP: &str = "[scenario]\npolicy = \"closed-loop\"\nhorizon = 1500\nseed = 11\n\
    [population]\nn = 50000\ni0 = 50\ni_max_count = 1000\n[ensemble]\nreplicates = 100\n\
    [sweep]\ntheta_b = [0.017857142857142856, 0.03571428571428571, 0.07142857142857142, 0.14285714285714285, 0.2857142857142857]\n";

fn sweep_line(rows: &[adaptest::sweep::CostRow]) -> String {
    rows.iter().map(|r| format!("{:.4}:{:.3}", r.theta_b, r.normalized)).collect::<Vec<_>>().join(" ")
}

fn cost_savings() -> Check {
    let started = Instant::now();
    let full = cost_sweep(&scenario(SWEEP), 1).map_err(|e| e.to_string())?;
    let identity = full.rows.iter().map(|r| (r.adaptive + r.serology - r.total).abs() / r.total).fold(0.0, f64::max);
    let has_reference = full.rows.iter().any(|r| (r.theta_b - 1.0 / 14.0).abs() < 1e-12);
    let all_below = full.rows.iter().all(|r| r.normalized < 1.0);
    let min = full.rows.iter().map(|r| r.normalized).fold(f64::INFINITY, f64::min);

    let smoke_text = SWEEP
        .replace("n = 50000", "n = 5000")
        .replace("i0 = 50", "i0 = 5")
        .replace("i_max_count = 1000", "i_max_count = 100")
        .replace("replicates = 100", "replicates = 20");
    let smoke = cost_sweep(&scenario(&smoke_text), 1).map_err(|e| e.to_string())?;
    let smoke_min = smoke.rows.iter().map(|r| r.normalized).fold(f64::INFINITY, f64::min);
    let detail = format!(
        "normalized {}; min {min:.3}; smoke min {smoke_min:.3}; accounting gap {identity:.1e}",
        sweep_line(&full.rows)
    );
    ensure(has_reference && all_below && min <= 0.7 && smoke_min <= 0.85 && identity <= 1e-12, detail.clone())?;
    within(Duration::from_secs(3600), started, detail)
}

fn twin_counterexample() -> Check {
    let started = Instant::now();
    let p = Params::standard().without_baseline_detection();
    let twin = |h: f64| counterexample_pair(0.9, 0.8, 0.05, |_| 0.1, &p, 100.0, h).map_err(|e| e.to_string());
    let run = twin(0.05)?;
    let gaps: Vec<f64> = [0.4, 0.2, 0.1].iter().map(|&h| twin(h).map(|r| r.id_gap)).collect::<Result<_, _>>()?;
    let ratios: Vec<f64> = gaps.windows(2).map(|w| w[0] / w[1]).collect();
    let detail = format!(
        "|i_d - i_d_bar| {:.1e}, |s - s_bar| {:.3}, refinement ratios {:.1} {:.1}",
        run.id_gap, run.s_gap, ratios[0], ratios[1]
    );
    ensure(run.id_gap < 1e-6 && run.s_gap > 0.05 && ratios.iter().all(|r| (10.0..24.0).contains(r)), detail.clone())?;
    within(Duration::from_secs(1), started, detail)
}

fn serology_reconstruction() -> Check {
    let started = Instant::now();
    let p = Params::standard().with_theta_b(1.0 / 14.0);
    // i_u, r_u, beta on interior samples, then beta on the two end samples,
    // where the derivative stencil is one-sided
    let mut worst = [0.0_f64; 4];
    for beta in [BetaSignal::Constant(0.3), BetaSignal::Sinusoidal { center: 0.3, amplitude: 0.1, period: 60.0 }] {
        let traj = integrate(&FractionState::initial(0.99, 0.01), &ConstantRate(0.1), &beta, &p, 150.0, 0.01)
            .map_err(|e| e.to_string())?;
        let rec = reconstruct_from_serology(&SampledSeries::from_trajectory(&traj, 0.01), &p, Differentiation::Central)
            .map_err(|e| e.to_string())?;
        let last = rec.t.len() - 1;
        for (k, t) in rec.t.iter().enumerate() {
            let x = traj.state_at(*t);
            if x.iu < 1e-4 {
                continue;
            }
            let b = beta.value(*t);
            let beta_err = (rec.beta[k].unwrap_or(f64::NAN) - b).abs() / b;
            if k == 0 || k == last {
                worst[3] = worst[3].max(beta_err);
                continue;
            }
            worst[0] = worst[0].max((rec.iu[k] - x.iu).abs() / x.iu);
            if x.ru > 1e-6 {
                worst[1] = worst[1].max((rec.ru[k] - x.ru).abs() / x.ru);
            }
            worst[2] = worst[2].max(beta_err);
        }
    }
    let detail = format!(
        "largest relative errors where i_u >= 1e-4: i_u {:.1e}, r_u {:.1e}, beta {:.1e}, beta at the ends {:.1e}",
        worst[0], worst[1], worst[2], worst[3]
    );
    ensure(worst[..3].iter().all(|&e| e < 1e-3) && worst[3] < 1e-2, detail.clone())?;
    within(Duration::from_secs(1), started, detail)
}

fn run_cli(args: &[&str], out: &Path) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_adaptest"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    if status.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&status.stderr).into_owned())
    }
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = dir.path().join("scenario.toml");
    let text = "[scenario]\npolicy = \"closed-loop\"\nhorizon = 400\nseed = 5\n[params]\ntheta_b = 0.07142857142857142\n\
                [population]\nn = 20000\ni0 = 20\ni_max = 0.02\n[ensemble]\nreplicates = 8\n\
                [sweep]\ntheta_b = [0.07142857142857142]\n";
    std::fs::write(&cfg, text).map_err(|e| e.to_string())?;
    let cfg = cfg.to_str().unwrap();
    let mut compared = 0;
    let snapshot = |out: &Path| -> Result<Vec<(std::ffi::OsString, Vec<u8>)>, String> {
        let mut files: Vec<_> = std::fs::read_dir(out)
            .map_err(|e| e.to_string())?
            .map(|e| {
                let e = e.unwrap();
                (e.file_name(), std::fs::read(e.path()).unwrap())
            })
            .collect();
        files.sort();
        Ok(files)
    };
    for sub in ["closed-loop", "cost-sweep", "deterministic"] {
        // same output directory, since it is part of the recorded scenario
        let out = dir.path().join(sub);
        run_cli(&[sub, "--config", cfg, "--jobs", "1"], &out)?;
        let first = snapshot(&out)?;
        std::fs::remove_dir_all(&out).map_err(|e| e.to_string())?;
        run_cli(&[sub, "--config", cfg, "--jobs", "3"], &out)?;
        let second = snapshot(&out)?;
        if first != second {
            return Err(format!("{sub}: output differs between runs"));
        }
        compared += first.len();
    }
    ensure(compared >= 5, format!("{compared} CSV files byte-identical across reruns with 1 and 3 jobs"))
}

fn main() -> ExitCode {
    let mut results: Vec<(&str, Check)> = vec![
        ("1 threshold policy replay", threshold_replay()),
        ("2 switching tangency", switching_tangency()),
        ("3 constant-rate baseline", constant_baseline()),
    ];
    let (plateau, coverage) = plateau_and_coverage();
    results.push(("4 stochastic plateau control", plateau));
    results.push(("5 filter coverage", coverage));
    results.push(("6 diffusion consistency", diffusion_consistency()));
    results.push(("7 cost savings", cost_savings()));
    results.push(("8 twin counterexample", twin_counterexample()));
    results.push(("9 serology reconstruction", serology_reconstruction()));
    results.push(("10 determinism", determinism()));

    let mut failed = 0;
    for (name, r) in &results {
        match r {
            Ok(d) => println!("PASS  {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL  {name}: {d}");
            }
        }
    }
    println!("{} of {} acceptance checks passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
