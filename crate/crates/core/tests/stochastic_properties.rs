use adaptest_core::model::{integrate, BetaSignal, ConstantRate, FractionState};
use adaptest_core::stochastic::{
    diffusion_matrix, ensemble_run, replicate_rng, transition_rates, CountState, EventKind, Simulator,
};
use adaptest_core::Params;
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn params() -> Params {
    Params::standard().with_theta_b(1.0 / 14.0)
}

/// Rates written out term by term, independent of the library formulas.
fn hand_rates(x: &CountState, theta: f64, p: &Params) -> [f64; 5] {
    let n = x.n as f64;
    let (s, iu, id, ru) = (x.s as f64, x.iu as f64, x.id as f64, x.ru as f64);
    [
        p.beta * s * iu / n,
        p.gamma * iu,
        (p.eta * theta + p.kappa + p.theta_b * p.eta_bi) * iu,
        p.gamma * id,
        p.theta_b * p.eta_br * ru,
    ]
}

#[test]
fn event_selection_matches_rate_proportions() {
    let p = params();
    let x = CountState::new(6000, 1500, 800, 1200, 10000).unwrap();
    let theta = 0.1;
    let rates = hand_rates(&x, theta, &p);
    let total: f64 = rates.iter().sum();
    let mut sim = Simulator::new(x, p, BetaSignal::Constant(p.beta), replicate_rng(2024, 0)).unwrap();
    let draws = 100_000;
    let mut counts = [0u64; 5];
    let (mut sum_wait, mut sum_wait2) = (0.0, 0.0);
    for _ in 0..draws {
        let (wait, kind) = sim.sample_next(theta, p.beta).unwrap();
        counts[kind as usize] += 1;
        sum_wait += wait;
        sum_wait2 += wait * wait;
    }
    let chi2: f64 = counts
        .iter()
        .zip(rates)
        .map(|(&c, r)| {
            let e = draws as f64 * r / total;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    // 99.9% point of chi-square with 4 degrees of freedom
    assert!(chi2 < 18.467, "chi2 = {chi2}, counts {counts:?}");

    let mean = sum_wait / draws as f64;
    let sd = (sum_wait2 / draws as f64 - mean * mean).sqrt();
    let expected = 1.0 / total;
    assert!((mean - expected).abs() < 4.0 * expected / (draws as f64).sqrt(), "{mean} vs {expected}");
    // exponential: standard deviation equals the mean
    assert!((sd / mean - 1.0).abs() < 0.02, "cv {}", sd / mean);
}

#[test]
fn thinning_reproduces_time_varying_infection_intensity() {
    // With a huge population the infection count over a short window is
    // Poisson with mean S I_u / N times the integral of beta.
    let p = Params { gamma: 0.0, kappa: 0.0, ..Params::standard() };
    let n = 100_000_000u64;
    let x0 = CountState::new(n - 1000, 1000, 0, 0, n).unwrap();
    let beta = BetaSignal::Piecewise { t0: 0.0, dt: 0.01, values: vec![0.1, 0.5, 0.2, 0.4] };
    let integral = 0.01 * (0.1 + 0.5 + 0.2 + 0.4);
    let reps = 400;
    let mut total = 0u64;
    for r in 0..reps {
        let mut sim = Simulator::new(x0, p, beta.clone(), replicate_rng(77, r)).unwrap();
        sim.advance(0.0, 0.04, |_, _, _| {});
        total += sim.event_counts[EventKind::Infection as usize];
    }
    let expected = reps as f64 * 1000.0 * integral;
    assert!((total as f64 - expected).abs() < 4.0 * expected.sqrt(), "{total} vs {expected}");
}

/// Largest pointwise standardized gap between the ensemble mean of
/// `(s, i_u, i_d)` and the deterministic path, and the largest absolute gap.
fn mean_field_gap(n: u64, i0: u64, reps: usize, seed: u64) -> (f64, f64) {
    let p = Params::standard();
    let horizon = 120.0;
    let x0 = CountState::outbreak(n, i0).unwrap();
    let beta = BetaSignal::Constant(p.beta);
    let ens = ensemble_run(reps, x0, |_| |_: f64, _: &CountState| 0.0, &p, &beta, horizon, seed).unwrap();
    let det = integrate(&x0.fractions(), &ConstantRate(0.0), &beta, &p, horizon, 0.01).unwrap();
    let (mut worst_z, mut worst_abs) = (0.0_f64, 0.0_f64);
    for (k, t) in ens.grid.iter().enumerate() {
        let d = det.state_at(*t);
        for (c, v) in [d.s, d.iu, d.id].into_iter().enumerate() {
            let diff = (ens.mean[k][c] - v).abs();
            worst_abs = worst_abs.max(diff);
            if diff > 1e-12 {
                worst_z = worst_z.max(diff / (ens.variance[k][c] / reps as f64).sqrt());
            }
        }
    }
    (worst_z, worst_abs)
}

#[test]
fn mean_field_gap_shrinks_with_population() {
    let (_, big) = mean_field_gap(50_000, 50, 100, 5);
    let (_, small) = mean_field_gap(5_000, 5, 100, 5);
    assert!(big < small, "{big} vs {small}");
}

#[test]
#[ignore = "fails: with 50 initial infected the early timing jitter biases the ensemble mean near the peak by several standard errors (see mean_matches_naive_direct_method)"]
fn ensemble_mean_within_three_standard_errors_of_deterministic() {
    let (z, _) = mean_field_gap(50_000, 50, 100, 5);
    assert!(z < 3.0, "max standardized deviation {z}");
}

/// Textbook direct method for the two-event chain `S + I_u -> 2 I_u`,
/// `I_u -> out` at zero adaptive testing, on its own random stream.
fn naive_iu_paths(reps: usize, n: f64, i0: f64, days: usize, p: &Params) -> (Vec<f64>, Vec<f64>) {
    let mut rng = StdRng::seed_from_u64(99);
    let (mut sum, mut sum2) = (vec![0.0; days + 1], vec![0.0; days + 1]);
    for _ in 0..reps {
        let (mut s, mut i, mut t, mut day) = (n - i0, i0, 0.0_f64, 0usize);
        while day <= days {
            let infect = p.beta * s * i / n;
            let total = infect + (p.gamma + p.kappa) * i;
            let wait = if total > 0.0 { -(1.0 - rng.random::<f64>()).ln() / total } else { f64::INFINITY };
            while day <= days && (day as f64) < t + wait {
                sum[day] += i / n;
                sum2[day] += (i / n) * (i / n);
                day += 1;
            }
            t += wait;
            if rng.random::<f64>() * total < infect {
                s -= 1.0;
                i += 1.0;
            } else {
                i -= 1.0;
            }
        }
    }
    let r = reps as f64;
    let mean: Vec<f64> = sum.iter().map(|v| v / r).collect();
    let var = sum2.iter().zip(&mean).map(|(v2, m)| (v2 / r - m * m) * r / (r - 1.0)).collect();
    (mean, var)
}

#[test]
fn mean_matches_naive_direct_method() {
    let p = Params::standard();
    let reps = 400;
    let days = 100;
    let x0 = CountState::outbreak(50_000, 50).unwrap();
    let ens = ensemble_run(reps, x0, |_| |_: f64, _: &CountState| 0.0, &p, &BetaSignal::Constant(p.beta), days as f64, 7)
        .unwrap();
    let (mean, var) = naive_iu_paths(reps, 50_000.0, 50.0, days, &p);
    for d in 1..=days {
        let se = ((var[d] + ens.variance[d][1]) / reps as f64).sqrt();
        let z = (ens.mean[d][1] - mean[d]) / se;
        assert!(z.abs() < 4.0, "day {d}: {} vs {} (z = {z})", ens.mean[d][1], mean[d]);
    }
}

#[test]
fn ensembles_are_reproducible_from_the_master_seed() {
    let p = params();
    let x0 = CountState::outbreak(3000, 30).unwrap();
    let beta = BetaSignal::Sinusoidal { center: 0.3, amplitude: 0.05, period: 50.0 };
    let run = |seed| ensemble_run(6, x0, |_| |_: f64, x: &CountState| if x.id > 20 { 0.1 } else { 0.0 }, &p, &beta, 50.0, seed).unwrap();
    assert_eq!(run(8), run(8));
    assert_ne!(run(8), run(9));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rates_match_hand_formulas_and_are_extensive(
        s in 0u64..5000, iu in 0u64..2000, id in 0u64..2000, ru in 0u64..2000, theta in 0.0f64..0.3, theta_b in 0.0f64..0.2,
    ) {
        let p = Params::standard().with_theta_b(theta_b);
        let n = s + iu + id + ru + 100;
        let x = CountState::new(s, iu, id, ru, n).unwrap();
        let x2 = CountState::new(2 * s, 2 * iu, 2 * id, 2 * ru, 2 * n).unwrap();
        let (r, r2, h) = (transition_rates(&x, theta, &p), transition_rates(&x2, theta, &p), hand_rates(&x, theta, &p));
        for k in 0..5 {
            prop_assert!((r[k] - h[k]).abs() <= 1e-12 * h[k].max(1.0));
            prop_assert!((r2[k] - 2.0 * r[k]).abs() <= 1e-12 * r[k].max(1.0));
        }
    }

    #[test]
    fn diffusion_is_sum_of_jump_outer_products(
        s in 0.0f64..1.0, iu in 0.0f64..0.3, id in 0.0f64..0.3, ru in 0.0f64..0.3, theta in 0.0f64..0.3, theta_b in 0.0f64..0.2,
    ) {
        let p = Params::standard().with_theta_b(theta_b);
        let x = FractionState::new(s, iu, id, ru);
        let b = diffusion_matrix(&x, theta, &p);
        // per-capita intensities; the population size cancels
        let nu = [p.beta * s * iu, p.gamma * iu, (p.eta * theta + p.kappa + theta_b * p.eta_bi) * iu, p.gamma * id, theta_b * p.eta_br * ru];
        for i in 0..4 {
            for j in 0..4 {
                let oracle: f64 = EventKind::ALL.iter().zip(nu).map(|(e, w)| w * (e.jump()[i] * e.jump()[j]) as f64).sum();
                prop_assert!((b[(i, j)] - oracle).abs() < 1e-14);
                prop_assert_eq!(b[(i, j)], b[(j, i)]);
            }
        }
        prop_assert!(b.symmetric_eigenvalues().iter().all(|&l| l > -1e-14));
    }
}
