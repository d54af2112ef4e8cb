mod common;

use std::sync::OnceLock;

use megh::baseline::BaselineHazard;
use megh::data::kaplan_meier;
use megh::diagnostics::{gradient_function, lrt_p_value, LrtCase};
use megh::hazard::{cond_cum_hazard, cond_survival, RegressionCoefficients};
use megh::likelihood::log_marginal;
use megh::model::Transform;
use megh::quadrature::{integrate_real_line, QuadratureOptions};
use megh::simulation::simulate_times;
use megh::{
    fit, BaselineFamily, ClusteredDataset, EvalOptions, FitConfig, FitResult, HazardStructure, ModelSpec,
    ParameterVector, RandomEffectsDist, ReFamily,
};
use proptest::prelude::*;

use common::*;

fn baseline_strategy() -> impl Strategy<Value = BaselineHazard> {
    prop_oneof![
        (0.05f64..20.0, 0.2f64..5.0, 0.2f64..5.0).prop_map(|(e, n, d)| BaselineHazard::pgw(e, n, d).unwrap()),
        (-3.0f64..3.0, 0.1f64..3.0).prop_map(|(m, t)| BaselineHazard::log_logistic(m, t).unwrap()),
    ]
}

fn model_strategy() -> impl Strategy<Value = ModelSpec> {
    proptest::sample::select(all_models())
}

fn re_strategy() -> impl Strategy<Value = RandomEffectsDist> {
    prop_oneof![
        (0.05f64..3.0).prop_map(|s| RandomEffectsDist::normal(s).unwrap()),
        (0.05f64..3.0, 2.5f64..30.0).prop_map(|(s, k)| RandomEffectsDist::student_t(s, k).unwrap()),
        (0.05f64..3.0, -0.9f64..0.9).prop_map(|(s, g)| RandomEffectsDist::two_piece_normal(s, g).unwrap()),
    ]
}

fn leuk_data() -> &'static ClusteredDataset {
    static D: OnceLock<ClusteredDataset> = OnceLock::new();
    D.get_or_init(|| small_data(HazardStructure::MeghI, 1.0, 240, 8, 11))
}

fn fitted_megh1() -> &'static FitResult {
    static F: OnceLock<FitResult> = OnceLock::new();
    F.get_or_init(|| {
        let m = model(HazardStructure::MeghI, BaselineFamily::Pgw, ReFamily::Normal);
        let cfg = FitConfig {
            starts: 1,
            covariance: false,
            ..Default::default()
        };
        fit(&m, leuk_data(), None, &cfg).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn baseline_round_trip(b in baseline_strategy(), lt in -3.0f64..3.0) {
        let t = 10f64.powf(lt);
        let h = b.cum_hazard(t).unwrap();
        prop_assume!(h > 1e-300 && h.is_finite());
        let back = b.inv_cum_hazard(h).unwrap();
        prop_assert!((back - t).abs() <= 1e-10 * t, "{b:?} t={t} back={back}");
    }

    #[test]
    fn cumulative_hazard_is_increasing(b in baseline_strategy(), lt in -3.0f64..2.9) {
        let t = 10f64.powf(lt);
        let t2 = t * 1.05;
        prop_assert!(b.cum_hazard(t2).unwrap() > b.cum_hazard(t).unwrap());
    }

    #[test]
    fn derivative_of_cum_hazard_is_hazard(b in baseline_strategy(), lt in -3.0f64..3.0) {
        let t = 10f64.powf(lt);
        let h = 1e-5 * t;
        let fd = (b.cum_hazard(t + h).unwrap() - b.cum_hazard(t - h).unwrap()) / (2.0 * h);
        let exact = b.hazard(t).unwrap();
        prop_assert!((fd - exact).abs() <= 1e-6 * exact.abs().max(1e-300), "{b:?} t={t} {fd} {exact}");
    }

    #[test]
    fn conditional_survival_is_a_decreasing_probability(
        b in baseline_strategy(),
        beta in -1.0f64..1.0,
        alpha in -1.0f64..1.0,
        u in -2.0f64..2.0,
        ut in -2.0f64..2.0,
        lt in -2.0f64..2.0,
    ) {
        let coef = RegressionCoefficients { beta: vec![beta], alpha: vec![alpha] };
        let t = 10f64.powf(lt);
        let s1 = cond_survival(t, &[0.7], &[0.7], u, ut, &coef, &b).unwrap();
        let s2 = cond_survival(t * 1.5, &[0.7], &[0.7], u, ut, &coef, &b).unwrap();
        prop_assert!(s1 > 0.0 || s1 == 0.0 && s2 == 0.0);
        prop_assert!(s1 <= 1.0 && s2 <= s1);
        prop_assert_eq!(cond_cum_hazard(0.0, &[0.7], &[0.7], u, ut, &coef, &b).unwrap(), 0.0);
    }

    #[test]
    fn transforms_are_inverse(z in -20.0f64..20.0) {
        for tr in [Transform::Identity, Transform::Log] {
            let x = tr.inverse(z);
            prop_assert!((tr.forward(x) - z).abs() <= 1e-12 * (1.0 + z.abs()));
        }
        let z = z / 3.0;
        let x = Transform::Atanh.inverse(z);
        prop_assert!((Transform::Atanh.forward(x) - z).abs() <= 1e-9 * (1.0 + z.abs()));
    }

    #[test]
    fn pack_unpack_is_a_bijection(m in model_strategy(), z in proptest::collection::vec(-3.0f64..3.0, 13)) {
        let dim = m.dim(4, 1);
        let z = &z[..dim];
        let params = ParameterVector::unpack(&m, 4, 1, z).unwrap();
        let back = params.pack(&m);
        for (a, b) in back.iter().zip(z) {
            prop_assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
        }
        let again = ParameterVector::unpack(&m, 4, 1, &back).unwrap();
        for (a, b) in again.to_vec().iter().zip(params.to_vec()) {
            prop_assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn p_values_are_monotone(a in 0.0f64..40.0, b in 0.0f64..40.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        for case in [LrtCase::OneVariance, LrtCase::TwoVariances] {
            let (p_lo, p_hi) = (lrt_p_value(lo, case), lrt_p_value(hi, case));
            prop_assert!(p_hi <= p_lo);
            prop_assert!((0.0..=1.0).contains(&p_hi));
        }
    }

    #[test]
    fn km_is_a_nonincreasing_probability(
        obs in proptest::collection::vec((0.01f64..10.0, any::<bool>()), 1..60),
    ) {
        let (times, status): (Vec<f64>, Vec<bool>) = obs.into_iter().unzip();
        let km = kaplan_meier("c", &times, &status);
        let mut prev = 1.0;
        for &s in &km.survival {
            prop_assert!((0.0..=prev).contains(&s));
            prev = s;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_effects_have_unit_mass_and_zero_mean(g in re_strategy()) {
        let opts = QuadratureOptions { abs_tol: 1e-13, rel_tol: 1e-12, max_intervals: 2000 };
        let mass = integrate_real_line(|u| g.density(u), g.mode(), g.sd(), &opts).result.value;
        let mean = integrate_real_line(|u| u * g.density(u), g.mode(), g.sd(), &opts).result.value;
        prop_assert!((mass - 1.0).abs() < 1e-8, "{g:?} mass {mass}");
        prop_assert!(mean.abs() < 1e-8 * (1.0 + g.sd()), "{g:?} mean {mean}");
    }

    #[test]
    fn log_marginal_ignores_cluster_order(m in model_strategy()) {
        let data = leuk_data();
        let params = interior_params(&m);
        let opts = EvalOptions::default();
        let a = log_marginal(&m, &params, data, &opts).unwrap();
        let b = log_marginal(&m, &params, &reverse_clusters(data), &opts).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs(), "{a} {b}");
    }

    #[test]
    fn log_marginal_is_continuous(m in model_strategy(), dir in proptest::collection::vec(-1.0f64..1.0, 13)) {
        // directional finite-difference slopes stabilise under step halving
        let data = leuk_data();
        let p = interior_params(&m);
        let z0 = p.pack(&m);
        let norm = dir[..z0.len()].iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assume!(norm > 0.1);
        let d: Vec<f64> = dir[..z0.len()].iter().map(|v| v / norm).collect();
        let opts = EvalOptions::default();
        let f = |h: f64| {
            let z: Vec<f64> = z0.iter().zip(&d).map(|(a, b)| a + h * b).collect();
            log_marginal(&m, &ParameterVector::unpack(&m, 4, 1, &z).unwrap(), data, &opts).unwrap()
        };
        let slope = |h: f64| (f(h) - f(-h)) / (2.0 * h);
        let (s1, s2) = (slope(1e-3), slope(5e-4));
        prop_assume!(s2.abs() > 1e-3);
        let ratio = s1 / s2;
        prop_assert!((ratio - 1.0).abs() < 0.05, "{} slopes {s1} {s2}", m.label());
    }

    #[test]
    fn gradient_function_is_nonnegative_and_finite(lo in -6.0f64..0.0, width in 0.1f64..8.0, n in 2usize..60) {
        let f = fitted_megh1();
        let grid: Vec<f64> = (0..n).map(|k| lo + width * k as f64 / (n - 1) as f64).collect();
        let d = gradient_function(f, leuk_data(), &grid, &EvalOptions::default()).unwrap();
        prop_assert!(d.delta.iter().all(|v| v.is_finite() && *v >= 0.0));
        prop_assert!((d.integral - 1.0).abs() < 1e-4);
    }
}

#[test]
fn simulation_is_reproducible_byte_for_byte() {
    let cfg = small_config(HazardStructure::MeghII, 0.7, 200, 5, 99);
    let a = simulate_times(&cfg).unwrap();
    let b = simulate_times(&cfg).unwrap();
    let (mut wa, mut wb) = (Vec::new(), Vec::new());
    a.data.write_csv(&mut wa).unwrap();
    b.data.write_csv(&mut wb).unwrap();
    assert_eq!(wa, wb);
    let mut other = cfg.clone();
    other.seed = 100;
    let mut wc = Vec::new();
    simulate_times(&other).unwrap().data.write_csv(&mut wc).unwrap();
    assert_ne!(wa, wc);
}
