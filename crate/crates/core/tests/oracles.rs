mod common;

use std::collections::BTreeMap;

use megh::data::{kaplan_meier, logrank_test, write_km_csv, km_by_cluster};
use megh::diagnostics::{gradient_bands, gradient_function, lrt_from_fits, LrtCase};
use megh::hazard::{cond_cum_hazard, RegressionCoefficients};
use megh::likelihood::{marginal_lik_cluster, marginal_lik_cluster_unscaled};
use megh::quadrature::QuadratureOptions;
use megh::simulation::{event_time, run_study, simulate_times, StudyConfig};
use megh::stats::{ks_one_sample, mean};
use megh::{
    fit, BaselineFamily, BaselineHazard, ClusteredDataset, ColumnMapping, EvalOptions, Execution, FitConfig,
    HazardStructure, MeghError, ParameterVector, RawTable, ReFamily,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use common::*;

fn quick() -> FitConfig {
    FitConfig {
        starts: 1,
        ..Default::default()
    }
}

#[test]
fn one_subject_marginal_matches_brute_force_quadrature() {
    // exponential baseline, one event at t, normal G:
    // m = int exp(u - t e^u) phi(u / s) / s du, summed on a fine trapezoid grid
    for &(t, s) in &[(0.3, 0.5), (2.0, 1.0), (5.0, 2.0)] {
        let data = ClusteredDataset::new(vec![t], vec![true], vec!["a".into()], vec![vec![1.0]], vec!["x".into()], vec![])
            .unwrap();
        let m = model(HazardStructure::MeghI, BaselineFamily::Pgw, ReFamily::Normal);
        let p = ParameterVector::new(vec![0.0], vec![], vec![1.0, 1.0, 1.0], vec![s]);
        let got = marginal_lik_cluster(0, &m, &p, &data, &QuadratureOptions::default()).unwrap().log_m;
        let n = 400_000;
        let (lo, hi) = (-14.0 * s, 14.0 * s);
        let h = (hi - lo) / n as f64;
        let mut acc = 0.0;
        for k in 0..=n {
            let u = lo + h * k as f64;
            let w = if k == 0 || k == n { 0.5 } else { 1.0 };
            let dens = (-0.5 * (u / s) * (u / s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
            acc += w * (u - t * u.exp()).exp() * dens;
        }
        let oracle = (acc * h).ln();
        assert!((got - oracle).abs() < 1e-8, "t={t} s={s}: {got} vs {oracle}");
    }
}

#[test]
fn marginal_matches_monte_carlo_on_a_few_points() {
    let data = small_data(HazardStructure::MeghII, 0.8, 60, 6, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for m in all_models().into_iter().filter(|m| m.structure.has_random_effects()) {
        let p = interior_params(&m);
        let g = p.random_effects(&m).unwrap().unwrap();
        let i = 2;
        let got = marginal_lik_cluster(i, &m, &p, &data, &QuadratureOptions::default()).unwrap().log_m;
        let draws = g.sample(200_000, &mut rng);
        let vals: Vec<f64> = draws
            .iter()
            .map(|&u| megh::likelihood::cond_loglik_cluster(i, u, &m, &p, &data).unwrap())
            .collect();
        let top = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = vals.iter().map(|v| (v - top).exp()).collect();
        let mu = mean(&w);
        let se = megh::stats::sd(&w) / (w.len() as f64).sqrt();
        let est = (got - top).exp();
        assert!((est - mu).abs() <= 3.0 * se.max(1e-300), "{}: {est} vs {mu} +- {se}", m.label());
    }
}

#[test]
fn scaled_and_unscaled_paths_agree() {
    let data = small_data(HazardStructure::MeghI, 1.0, 40, 4, 3);
    for m in all_models().into_iter().filter(|m| m.structure.has_random_effects()) {
        let p = interior_params(&m);
        for i in 0..data.n_clusters() {
            let opts = QuadratureOptions {
                abs_tol: 0.0,
                rel_tol: 1e-12,
                max_intervals: 2000,
            };
            let a = marginal_lik_cluster(i, &m, &p, &data, &opts).unwrap().log_m;
            let b = marginal_lik_cluster_unscaled(i, &m, &p, &data, &opts).unwrap();
            if b.is_finite() {
                assert!(((a - b) / a).abs() < 1e-8, "{} cluster {i}: {a} {b}", m.label());
            }
        }
    }
}

#[test]
fn conditional_law_of_simulated_times() {
    // fixed x and u: the empirical law of 1e5 simulated times matches exp(-H)
    let b = BaselineHazard::pgw(0.2, 1.5, 3.0).unwrap();
    let coef = RegressionCoefficients {
        beta: vec![1.0, 0.3],
        alpha: vec![0.96],
    };
    let x = [0.4, 1.0];
    let xt = [0.4];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for s in [HazardStructure::MeghI, HazardStructure::MeghII] {
        let u = 0.6;
        let times: Vec<f64> = (0..100_000)
            .map(|_| event_time(s, &b, &coef, &x, &xt, u, Exp1.sample(&mut rng)))
            .collect();
        let (uh, ut) = megh::hazard::structure_effects(s, u);
        let (_, p) = ks_one_sample(&times, |t| 1.0 - (-cond_cum_hazard(t, &x, &xt, uh, ut, &coef, &b).unwrap()).exp());
        assert!(p > 0.01, "{s:?}: KS p = {p}");
    }
}

#[test]
fn km_of_exponential_sample_is_close_to_truth() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let times: Vec<f64> = (0..100_000).map(|_| Exp1.sample(&mut rng)).collect();
    let km = kaplan_meier("all", &times, &vec![true; times.len()]);
    let sup = km
        .times
        .iter()
        .zip(&km.survival)
        .map(|(t, s)| (s - (-t).exp()).abs())
        .fold(0.0, f64::max);
    assert!(sup < 0.01, "{sup}");
}

#[test]
fn km_hand_example_and_all_censored_cluster() {
    let km = kaplan_meier("a", &[1.0, 2.0, 3.0, 4.0], &[true; 4]);
    assert_eq!(km.survival, vec![0.75, 0.5, 0.25, 0.0]);
    let km = kaplan_meier("b", &[1.0, 2.0], &[false, false]);
    assert!(km.survival.iter().all(|&s| s == 1.0));
    let data = small_data(HazardStructure::MeghI, 1.0, 60, 3, 1);
    let mut out = Vec::new();
    write_km_csv(&km_by_cluster(&data), &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert!(text.starts_with("cluster,time,survival,at_risk"));
}

#[test]
fn logrank_p_values_are_uniform_without_random_effects() {
    let ps: Vec<f64> = (0..60)
        .map(|s| logrank_test(&small_data(HazardStructure::Gh, 0.0, 400, 8, 500 + s)).p_value)
        .collect();
    let (_, p) = ks_one_sample(&ps, |x| x.clamp(0.0, 1.0));
    assert!(p > 0.01, "KS p = {p}; p-values {ps:?}");
    // and strongly heterogeneous clusters are detected
    let p = logrank_test(&small_data(HazardStructure::MeghI, 1.0, 400, 8, 3)).p_value;
    assert!(p < 1e-3);
}

#[test]
fn pit_of_simulated_times_is_uniform() {
    // H(t | x, u) of the latent event times is unit exponential
    let mut cfg = small_config(HazardStructure::MeghII, 0.8, 20_000, 40, 2);
    cfg.censoring_target = 0.0;
    let sim = simulate_times(&cfg).unwrap();
    let d = &sim.data;
    let b = cfg.truth.baseline(&cfg.model).unwrap();
    let coef = cfg.truth.coefficients();
    let h: Vec<f64> = (0..d.n())
        .map(|j| {
            let (uh, ut) = megh::hazard::structure_effects(cfg.model.structure, sim.effects[d.cluster_of()[j]]);
            cond_cum_hazard(d.times()[j], d.x(j), d.x_time(j), uh, ut, &coef, &b).unwrap()
        })
        .collect();
    let (_, p) = ks_one_sample(&h, |x| 1.0 - (-x).exp());
    assert!(p > 0.01, "KS p = {p}");
}

#[test]
fn csv_round_trip_is_byte_identical() {
    let data = small_data(HazardStructure::MeghI, 1.0, 50, 5, 6);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    data.write_csv_path(&path).unwrap();
    let first = std::fs::read(&path).unwrap();
    let mut mapping = ColumnMapping::new("time", "status", "cluster");
    mapping.hazard = ["age", "sex", "wbc", "tpi"].iter().map(|s| s.to_string()).collect();
    mapping.time_scale = vec!["age".into()];
    let loaded = megh::load_dataset(&path, &mapping).unwrap();
    assert_eq!(loaded.n(), 50);
    assert_eq!(loaded.n_clusters(), 5);
    let path2 = dir.path().join("e.csv");
    loaded.write_csv_path(&path2).unwrap();
    assert_eq!(first, std::fs::read(&path2).unwrap());
}

#[test]
fn validation_errors_are_reported() {
    let table = RawTable::read("cluster,time,status,x\na,1.0,1,0.5\na,-2.0,0,0.1\n".as_bytes()).unwrap();
    let mut mapping = ColumnMapping::new("time", "status", "cluster");
    mapping.hazard = vec!["x".into()];
    let err = megh::data::dataset_from_table(&table, &mapping).unwrap_err();
    assert!(matches!(err, MeghError::Validation(_)), "{err}");
    // rank deficiency in the uncensored rows
    let table = RawTable::read("cluster,time,status,x\na,1.0,1,0.0\nb,2.0,1,0.0\nb,3.0,0,1.0\n".as_bytes()).unwrap();
    let err = megh::data::dataset_from_table(&table, &mapping).unwrap_err();
    assert!(err.to_string().contains("rank"), "{err}");
}

#[test]
fn covariate_rescaling_is_equivariant() {
    let data = small_data(HazardStructure::MeghI, 1.0, 400, 10, 21);
    let m = model(HazardStructure::MeghI, BaselineFamily::Pgw, ReFamily::Normal);
    let cfg = FitConfig {
        covariance: false,
        ..quick()
    };
    let a = fit(&m, &data, None, &cfg).unwrap();
    let c = 2.5;
    let scaled = data.scale_column(2, c);
    let b = fit(&m, &scaled, Some(&a.params), &cfg).unwrap();
    let (ba, bb) = (a.params.beta[2], b.params.beta[2]);
    assert!((bb - ba / c).abs() < 1e-4, "{ba} / {c} vs {bb}");
    assert!((a.log_lik - b.log_lik).abs() < 1e-6, "{} {}", a.log_lik, b.log_lik);
}

#[test]
fn gh_is_the_zero_variance_limit_of_megh1() {
    let data = small_data(HazardStructure::Gh, 0.0, 1000, 20, 4);
    let gh = fit(&model(HazardStructure::Gh, BaselineFamily::Pgw, ReFamily::Normal), &data, None, &quick()).unwrap();
    assert!(gh.converged);
    let cfg = FitConfig {
        fixed: BTreeMap::from([("sigma_u".to_string(), 1e-8)]),
        ..quick()
    };
    let m1 = model(HazardStructure::MeghI, BaselineFamily::Pgw, ReFamily::Normal);
    let mut init = gh.params.clone();
    init.xi = vec![1e-8];
    let f = fit(&m1, &data, Some(&init), &cfg).unwrap();
    assert!((f.log_lik - gh.log_lik).abs() < 1e-4, "{} {}", f.log_lik, gh.log_lik);
    assert_eq!(f.n_params, gh.n_params);
}

#[test]
fn hessian_is_nearly_symmetric_and_se_positive() {
    let data = small_data(HazardStructure::MeghII, 1.0, 300, 8, 9);
    let f = fit(&model(HazardStructure::MeghII, BaselineFamily::Pgw, ReFamily::Normal), &data, None, &quick()).unwrap();
    assert!(f.converged);
    assert!(f.hessian_asymmetry.unwrap() < 1e-6, "{:?}", f.hessian_asymmetry);
    let cov = f.covariance.as_ref().unwrap();
    for i in 0..cov.len() {
        for j in 0..cov.len() {
            assert!((cov[i][j] - cov[j][i]).abs() <= 1e-8 * (cov[i][i] * cov[j][j]).sqrt());
        }
        assert!(f.standard_errors[i].unwrap() > 0.0);
    }
    let ci = f.confidence_intervals(0.95);
    for (k, iv) in ci.iter().enumerate() {
        let (lo, hi) = iv.unwrap();
        assert!(lo < f.estimates()[k] && f.estimates()[k] < hi);
    }
}

#[test]
fn standard_errors_shrink_at_root_n_rate() {
    let m = model(HazardStructure::MeghI, BaselineFamily::Pgw, ReFamily::Normal);
    let se = |n: usize, r: usize, seed: u64| {
        let data = small_data(HazardStructure::MeghI, 1.0, n, r, seed);
        fit(&m, &data, None, &quick()).unwrap().standard_error("beta[age]").unwrap()
    };
    let small: Vec<f64> = (0..3).map(|s| se(1000, 10, 40 + s)).collect();
    let large: Vec<f64> = (0..2).map(|s| se(10_000, 100, 60 + s)).collect();
    let ratio = mean(&small) / mean(&large);
    assert!((2.4..4.0).contains(&ratio), "ratio {ratio} (sqrt 10 = 3.16)");
}

#[test]
fn spurious_covariate_usually_raises_aic() {
    let m = model(HazardStructure::MeghI, BaselineFamily::Pgw, ReFamily::Normal);
    let cfg = FitConfig {
        covariance: false,
        ..quick()
    };
    let mut larger_worse = 0;
    let reps = 25;
    for s in 0..reps {
        let data = small_data(HazardStructure::MeghI, 1.0, 400, 10, 700 + s);
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let rows: Vec<Vec<f64>> = (0..data.n())
            .map(|j| {
                let mut r = data.x(j).to_vec();
                r.push(StandardNormal.sample(&mut rng));
                r
            })
            .collect();
        let mut names = data.covariate_names().to_vec();
        names.push("noise".into());
        let clusters = (0..data.n())
            .map(|j| data.cluster_labels()[data.cluster_of()[j]].clone())
            .collect();
        let bigger = ClusteredDataset::new(
            data.times().to_vec(),
            data.status().to_vec(),
            clusters,
            rows,
            names,
            data.time_scale_columns().to_vec(),
        )
        .unwrap();
        let a = fit(&m, &data, None, &cfg).unwrap();
        let b = fit(&m, &bigger, None, &cfg).unwrap();
        if b.aic > a.aic {
            larger_worse += 1;
        }
    }
    assert!(larger_worse as f64 >= 0.6 * reps as f64, "{larger_worse}/{reps}");
}

#[test]
fn bootstrap_bands_are_deterministic_and_reject_zero_replicates() {
    let data = small_data(HazardStructure::MeghI, 1.0, 200, 8, 12);
    let m = model(HazardStructure::MeghI, BaselineFamily::Pgw, ReFamily::Normal);
    let cfg = quick();
    let f = fit(&m, &data, None, &cfg).unwrap();
    let grid: Vec<f64> = (0..21).map(|k| -2.0 + 0.2 * k as f64).collect();
    let a = gradient_bands(&f, &data, &grid, 6, 3, &cfg, Execution::Parallel).unwrap();
    let b = gradient_bands(&f, &data, &grid, 6, 3, &cfg, Execution::Sequential).unwrap();
    assert_eq!(a, b);
    assert!(gradient_bands(&f, &data, &grid, 0, 3, &cfg, Execution::Sequential).is_err());
    assert!(a.lower.iter().zip(&a.upper).all(|(l, h)| l <= h));
}

#[test]
fn gradient_function_needs_random_effects() {
    let data = small_data(HazardStructure::Gh, 0.0, 100, 4, 1);
    let f = fit(&model(HazardStructure::Gh, BaselineFamily::Pgw, ReFamily::Normal), &data, None, &quick()).unwrap();
    let err = gradient_function(&f, &data, &[0.0], &EvalOptions::default()).unwrap_err();
    assert!(matches!(err, MeghError::Contract(_)));
}

#[test]
fn lrt_refuses_unconverged_fits() {
    let data = small_data(HazardStructure::MeghI, 1.0, 400, 8, 1);
    let gh = fit(&model(HazardStructure::Gh, BaselineFamily::Pgw, ReFamily::Normal), &data, None, &quick()).unwrap();
    let mut full = fit(&model(HazardStructure::MeghI, BaselineFamily::Pgw, ReFamily::Normal), &data, None, &quick()).unwrap();
    let ok = lrt_from_fits(&full, &gh, LrtCase::OneVariance).unwrap();
    assert!(ok.statistic >= 0.0 && ok.p_value < 0.05);
    full.converged = false;
    assert!(lrt_from_fits(&full, &gh, LrtCase::OneVariance).is_err());
}

#[test]
fn single_replication_study_reports_the_fit() {
    let sim = small_config(HazardStructure::MeghI, 1.0, 200, 6, 5);
    let m = model(HazardStructure::MeghI, BaselineFamily::Pgw, ReFamily::Normal);
    let mut cfg = StudyConfig::new(sim.clone(), 1, vec![m]);
    cfg.execution = Execution::Sequential;
    let report = run_study(&cfg).unwrap();
    let rep = &report.replications[0];
    let mut one = sim.clone();
    one.seed = rep.seed;
    let data = simulate_times(&one).unwrap().data;
    let mut fc = cfg.fit.clone();
    fc.seed = megh::stats::derive_seed(rep.seed, 6, 0);
    fc.eval.execution = Execution::Sequential;
    let (fits, failures) = megh::simulation::fit_replication(&data, &[m], &fc);
    assert!(failures.is_empty());
    assert_eq!(rep.fits, fits);
    let s = report.summary(&m.label()).unwrap();
    let direct = fits[0].estimates["sigma_u"];
    let p = s.params.iter().find(|p| p.name == "sigma_u").unwrap();
    assert_eq!(p.mean, direct);
    assert_eq!(s.mean_aic, fits[0].aic);
    // and the study does not depend on the execution mode
    cfg.execution = Execution::Parallel;
    let again = run_study(&cfg).unwrap();
    assert_eq!(format!("{again:?}"), format!("{report:?}"));
}
