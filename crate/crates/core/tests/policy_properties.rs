use adaptest_core::model::{integrate, BetaSignal, ConstantRate, FractionState};
use adaptest_core::policy::{
    plateau_rate, policy_cost, solve_constant_rate, solve_switching, threshold_rate, Phase, PolicyRef, ThresholdPolicy,
};
use adaptest_core::Params;
use proptest::prelude::*;

fn unit_eta() -> Params {
    Params::standard().with_eta(1.0)
}

fn threshold_params() -> Params {
    Params::standard().without_baseline_detection().with_eta(1.0)
}

fn x0() -> FractionState {
    FractionState::initial(0.999, 0.001)
}

#[test]
fn switching_schedule_is_tangent_and_feasible() {
    let p = unit_eta();
    let pol = solve_switching(0.999, 0.001, 0.1, p.theta_max, &p).unwrap();
    let a = pol.arcs.unwrap();
    assert!(a.t_a <= a.t_b && a.t_b <= a.t_c && a.t_c <= a.t_d && a.t_d <= a.t_e);
    assert!((0.0..=a.tau3_bar).contains(&a.tau3));
    for x in [a.b, a.e] {
        // value and slope of i_u + i_d at both touch points, written out
        let slope = p.beta * x.s * x.iu - p.gamma * (x.iu + x.id);
        assert!((x.iu + x.id - 0.1).abs() < 1e-6 && slope.abs() < 1e-6, "{x:?}");
    }
    let replay = pol.replay(&p, 200.0, 0.01).unwrap();
    let peak = replay.trajectory.iter().map(|pt| pt.state.infected()).fold(0.0, f64::max);
    assert!(peak <= 0.1 + 1e-6, "{peak}");
    assert!((replay.cost - pol.cost()).abs() < 1e-4, "{} vs {}", replay.cost, pol.cost());
    // arcs in order: nothing, cap rate, plateau law, cap rate, nothing
    let mid = |t0: f64, t1: f64| replay.trajectory.state_at(0.5 * (t0 + t1));
    assert_eq!(pol.rate(0.5 * a.t_a, &mid(0.0, a.t_a)), 0.0);
    assert_eq!(pol.rate(0.5 * (a.t_a + a.t_b), &mid(a.t_a, a.t_b)), p.theta_max);
    let plateau = pol.rate(0.5 * (a.t_b + a.t_c), &mid(a.t_b, a.t_c));
    assert!(plateau > 0.0 && plateau < p.theta_max);
    assert_eq!(pol.rate(a.t_d + 1.0, &mid(a.t_d, a.t_e)), 0.0);
}

#[test]
fn plateau_length_minimizes_cost() {
    let p = unit_eta();
    let pol = solve_switching(0.999, 0.001, 0.1, p.theta_max, &p).unwrap();
    let a = pol.arcs.unwrap();
    let best = pol.cost();
    let grid: Vec<f64> = (0..=16).map(|k| a.tau3_bar * k as f64 / 16.0).collect();
    let costs: Vec<f64> = grid.iter().map(|&t| pol.cost_at(t).unwrap()).collect();
    for c in &costs {
        assert!(best <= c + 1e-9, "{best} vs {c}");
    }
    assert!(best <= pol.cost_at(a.tau3_bar).unwrap());
    // unimodal: once the finite costs start rising they keep rising
    let finite: Vec<f64> = costs.into_iter().filter(|c| c.is_finite()).collect();
    let turn = finite.iter().enumerate().min_by(|x, y| x.1.total_cmp(y.1)).unwrap().0;
    assert!(finite[..=turn].windows(2).all(|w| w[1] <= w[0] + 1e-9), "{finite:?}");
    assert!(finite[turn..].windows(2).all(|w| w[1] >= w[0] - 1e-9), "{finite:?}");
}

#[test]
fn constant_rate_touches_once_and_undercuts_threshold_rate() {
    for (p, i_max) in [(unit_eta(), 0.1), (Params::standard(), 0.02)] {
        let sol = solve_constant_rate(0.999, 0.001, i_max, &p).unwrap();
        assert!(sol.residual < 1e-10);
        let traj = integrate(&x0(), &ConstantRate(sol.theta_const), &BetaSignal::Constant(p.beta), &p, 600.0, 0.01).unwrap();
        let values: Vec<f64> = traj.iter().map(|pt| pt.state.infected()).collect();
        let peak = values.iter().cloned().fold(0.0, f64::max);
        assert!(peak >= i_max - 1e-4 && peak <= i_max + 1e-6, "{peak}");
        let near: Vec<usize> = (0..values.len()).filter(|&k| values[k] > i_max - 1e-4).collect();
        // one contiguous touch
        assert!(near.windows(2).all(|w| w[1] == w[0] + 1));
        assert!(sol.theta_const < (p.beta - p.gamma - p.kappa) / p.eta);
    }
}

#[test]
fn threshold_replay_holds_the_cap_until_herd_immunity() {
    let p = threshold_params();
    let beta = BetaSignal::Constant(p.beta);
    let pol = ThresholdPolicy::solve(&x0(), 0.1, &beta, &p, 300.0, 0.01).unwrap();
    let (hit, herd) = (pol.t_hit.unwrap(), pol.t_herd.unwrap());
    for pt in pol.trajectory.iter() {
        assert!(pt.state.iu <= 0.1 + 1e-6);
        if pt.t > hit && pt.t < herd {
            assert!((pt.state.iu - 0.1).abs() < 1e-4);
        }
    }
    assert!((pol.trajectory.state_at(herd).s - p.gamma / p.beta).abs() < 1e-6);
    let trapezoid = policy_cost(PolicyRef::Threshold(&pol), &p, 300.0).unwrap();
    assert!((pol.closed_form_cost(&p).unwrap() - trapezoid).abs() < 1e-4);
}

/// Runs a feedback schedule and returns `s` on a daily grid.
fn s_path(schedule: impl Fn(f64, &FractionState) -> f64, p: &Params, days: usize) -> Vec<f64> {
    let traj = integrate(&x0(), &schedule, &BetaSignal::Constant(p.beta), p, days as f64, 0.01).unwrap();
    (0..=days).map(|d| traj.state_at(d as f64).s).collect()
}

#[test]
fn threshold_dominates_feasible_alternatives() {
    let p = threshold_params();
    let beta = BetaSignal::Constant(p.beta);
    let pol = ThresholdPolicy::solve(&x0(), 0.1, &beta, &p, 300.0, 0.01).unwrap();
    let herd = pol.t_herd.unwrap();
    let days = herd.floor() as usize;
    let optimal: Vec<f64> = (0..=days).map(|d| pol.trajectory.state_at(d as f64).s).collect();

    let tighter = ThresholdPolicy::solve(&x0(), 0.06, &beta, &p, 300.0, 0.01).unwrap();
    let alternatives: Vec<Vec<f64>> = vec![
        (0..=days).map(|d| tighter.trajectory.state_at(d as f64).s).collect(),
        s_path(|_, _| 0.3, &p, days),
        // the optimal law plus extra testing from day 20
        s_path(
            move |t, x| {
                let extra = if t > 20.0 { 0.05 } else { 0.0 };
                let phase = if x.iu >= 0.1 - 1e-9 && p.beta * x.s > p.gamma { Phase::Plateau } else { Phase::Free };
                threshold_rate(x, p.beta, &p, phase) + extra
            },
            &p,
            days,
        ),
    ];
    for alt in &alternatives {
        for (a, b) in optimal.iter().zip(alt) {
            assert!(*a <= b + 1e-6, "{a} vs {b}");
        }
    }
}

#[test]
fn decreasing_transmission_keeps_the_cap_flat() {
    let p = threshold_params();
    let n = 301;
    let values: Vec<f64> = (0..n).map(|k| 0.35 - 0.1 * k as f64 / (n - 1) as f64).collect();
    let slopes = vec![-0.1 / 300.0; n];
    let beta = BetaSignal::Hermite { t0: 0.0, dt: 1.0, values, slopes };
    let pol = ThresholdPolicy::solve(&x0(), 0.08, &beta, &p, 300.0, 0.01).unwrap();
    let (hit, herd) = (pol.t_hit.unwrap(), pol.t_herd.unwrap());
    for w in pol.trajectory.points.windows(2) {
        if w[0].t > hit && w[1].t < herd {
            let slope = (w[1].state.iu - w[0].state.iu) / (w[1].t - w[0].t);
            assert!(slope.abs() < 1e-6, "t = {}: {slope}", w[0].t);
        }
    }
    let s_herd = pol.trajectory.state_at(herd).s;
    assert!((beta.value(herd) * s_herd - p.gamma).abs() < 1e-6);
    assert!(pol.trajectory.iter().filter(|pt| pt.t > herd).all(|pt| pt.theta == 0.0));
}

#[test]
fn plateau_rate_freezes_total_infected() {
    let p = Params::standard();
    let i_max = 0.05;
    let s = 0.7;
    let iu = p.gamma * i_max / (p.beta * s);
    let x = FractionState::new(s, iu, i_max - iu, 0.1);
    let law = |_t: f64, y: &FractionState| plateau_rate(y, &p).clamp(0.0, p.theta_max);
    let traj = integrate(&x, &law, &BetaSignal::Constant(p.beta), &p, 20.0, 0.01).unwrap();
    for pt in traj.iter() {
        assert!(pt.theta > 0.0 && pt.theta < p.theta_max);
        assert!((pt.state.infected() - i_max).abs() < 1e-8 * (1.0 + pt.t), "t = {}", pt.t);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn threshold_rate_is_nonnegative_and_vanishes_below_herd_threshold(
        s in 0.0f64..1.0, iu in 0.0f64..0.2, beta in 0.0f64..0.6,
    ) {
        let p = threshold_params();
        let x = FractionState::new(s, iu, 0.0, 0.0);
        let r = threshold_rate(&x, beta, &p, Phase::Plateau);
        prop_assert!(r >= 0.0);
        if beta * s <= p.gamma {
            prop_assert_eq!(r, 0.0);
        } else {
            prop_assert!((r - (beta * s - p.gamma) / p.eta).abs() < 1e-15);
        }
        prop_assert_eq!(threshold_rate(&x, beta, &p, Phase::Free), 0.0);
        prop_assert_eq!(threshold_rate(&x, beta, &p, Phase::Done), 0.0);
    }
}
