use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gcalc::expectation::{g_eval, GFunction, MonteCarlo, Payoff};
use gcalc::integration::{random_simple_process, GridProcess};
use gcalc::ito_formula::{evolve, library, residual_series, Semimartingale};
use gcalc::numeric::exact_sum;
use gcalc::pde::{solve, PdeGrid, TerminalPayoff};
use gcalc::rng::SeedPolicy;
use gcalc::scenario::{generate_path, ControlSet, TimeGrid, VolatilityBand, VolatilityControl};
use gcalc::stopping::{dyadic_ceil, integral_of_stopped, random_stopping_time, stopped_integral};

fn band() -> impl Strategy<Value = VolatilityBand> {
    (0.1f64..2.0, 0.0f64..2.0).prop_map(|(lo, w)| VolatilityBand::new(lo, lo + w).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn exact_sum_ignores_order(
        v in prop::collection::vec((-1e6f64..1e6, -20i32..20), 1..200)
            .prop_map(|xs| xs.into_iter().map(|(m, e)| m * 2f64.powi(e)).collect::<Vec<_>>())
            .prop_shuffle()
    ) {
        let mut sorted = v.clone();
        sorted.sort_by(f64::total_cmp);
        let mut rev = v.clone();
        rev.reverse();
        prop_assert_eq!(exact_sum(&v).to_bits(), exact_sum(&sorted).to_bits());
        prop_assert_eq!(exact_sum(&v).to_bits(), exact_sum(&rev).to_bits());
    }

    #[test]
    fn dyadic_ceil_sandwich(frac in 0.0f64..=1.0, horizon in 0.1f64..10.0, n in 1u32..=30) {
        let t = frac * horizon;
        let d = dyadic_ceil(t, horizon, n).unwrap();
        let mesh = horizon / 2f64.powi(n as i32);
        prop_assert!(d >= t);
        prop_assert!(d - t <= mesh * (1.0 + 1e-12));
        prop_assert!(d <= horizon);
    }

    #[test]
    fn generator_is_sublinear(b in band(), a in -10.0f64..10.0, c in -10.0f64..10.0, lambda in 0.0f64..5.0) {
        let g = GFunction::new(b);
        let tol = 1e-12 * (1.0 + a.abs() + c.abs()) * b.sigma_hi * b.sigma_hi;
        prop_assert!(g_eval(&g, a + c) <= g_eval(&g, a) + g_eval(&g, c) + tol);
        prop_assert!((g_eval(&g, lambda * a) - lambda * g_eval(&g, a)).abs() <= tol * (1.0 + lambda));
        if a <= c {
            prop_assert!(g_eval(&g, a) <= g_eval(&g, c));
        }
        prop_assert!(g_eval(&g, a) >= 0.5 * b.sigma_lo * b.sigma_lo * a);
        prop_assert!(g_eval(&g, a) >= 0.5 * b.sigma_hi * b.sigma_hi * a);
    }

    #[test]
    fn quadratic_variation_stays_in_band(b in band(), seed in any::<u64>(), n_steps in 1usize..200, mix in 0.0f64..=1.0) {
        let (lo, hi) = (b.sigma_lo, b.sigma_hi);
        let controls = [
            VolatilityControl::Constant(lo + mix * (hi - lo)),
            VolatilityControl::bang_bang_positive(b),
            VolatilityControl::feedback("osc", move |t, x| if (x + t).sin() > 0.0 { hi } else { lo }),
        ];
        let grid = Arc::new(TimeGrid::uniform(1.0, n_steps).unwrap());
        for c in &controls {
            let p = generate_path(c, grid.clone(), &b, SeedPolicy::new(seed).slot(0, 0)).unwrap();
            for k in 0..n_steps {
                let d = p.qv[k + 1] - p.qv[k];
                let dt = grid.dt(k);
                prop_assert!(d >= lo * lo * dt && d <= hi * hi * dt);
            }
        }
    }

    #[test]
    fn stopped_integral_identity_is_exact(seed in any::<u64>(), n_steps in 2usize..120) {
        let b = VolatilityBand::new(1.0, 2.0).unwrap();
        let grid = TimeGrid::uniform(1.0, n_steps).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eta = GridProcess::from_integrand(random_simple_process(&mut rng, &grid, 6, 1.0));
        let tau = random_stopping_time(&mut rng, 1.0);
        let mc = MonteCarlo::new(b, grid.clone(), ControlSet::default_for(b), 4, SeedPolicy::new(seed)).unwrap();
        for c in 0..mc.controls.len() {
            for i in 0..mc.n_paths {
                let p = mc.path(c, i).unwrap();
                for &t in &[grid.t(n_steps / 2), 1.0] {
                    let lhs = stopped_integral(&eta, &tau, t, &p).unwrap();
                    let rhs = integral_of_stopped(&eta, &tau, t, &p).unwrap();
                    prop_assert_eq!(lhs.to_bits(), rhs.to_bits());
                }
            }
        }
    }

    #[test]
    fn sup_dominates_lower(seed in any::<u64>(), shift in -2.0f64..2.0) {
        let b = VolatilityBand::new(0.5, 1.5).unwrap();
        let grid = TimeGrid::uniform(1.0, 8).unwrap();
        let mc = MonteCarlo::new(b, grid, ControlSet::default_for(b), 32, SeedPolicy::new(seed)).unwrap();
        let x = Payoff::at_time(1.0, move |x| (x - shift).abs());
        let (upper, lower) = mc.bounds(&x).unwrap();
        prop_assert!(lower.value <= upper.value);
        let c = mc.sup_expectation(&Payoff::constant(shift)).unwrap();
        prop_assert_eq!(c.value, shift);
    }

    #[test]
    fn affine_functions_have_no_residual(a in -3.0f64..3.0, c in -3.0f64..3.0, alpha in -1.0f64..1.0, beta in -2.0f64..2.0, seed in any::<u64>()) {
        let b = VolatilityBand::new(1.0, 2.0).unwrap();
        let grid = Arc::new(TimeGrid::uniform(1.0, 64).unwrap());
        let x = Semimartingale::constant_coefficients(0.3, alpha, 0.5, beta);
        let phi = library::affine(a, c);
        let p = generate_path(&VolatilityControl::bang_bang_positive(b), grid, &b, SeedPolicy::new(seed).slot(0, 0)).unwrap();
        let ev = evolve(&x, &p).unwrap();
        let scale = 1.0 + a.abs() * (1.0 + ev.max_norm()) + c.abs();
        for r in residual_series(&phi, &ev, &p) {
            prop_assert!(r.abs() <= 1e-12 * scale * 64.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn g_heat_scheme_is_monotone(shift in 0.0f64..1.0, bump in 0.0f64..2.0, lo in 0.2f64..1.0) {
        let b = VolatilityBand::new(lo, lo + 0.5).unwrap();
        let grid = PdeGrid::centered(&b, 0.5, 0.0, 5.0, 0.05).unwrap();
        let low = TerminalPayoff::new("low", |x: f64| (x * x).min(4.0));
        let high = TerminalPayoff::new("high", move |x: f64| (x * x).min(4.0) + shift + bump * (-x * x).exp());
        let ul = solve(&low, &b, &grid, 1).unwrap();
        let uh = solve(&high, &b, &grid, 1).unwrap();
        for (l, h) in ul.final_values().iter().zip(uh.final_values()) {
            prop_assert!(l <= h);
        }
    }
}
