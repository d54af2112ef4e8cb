//! Random-effects diagnostics: the gradient function
//! `Delta(u) = (1/r) sum_i exp(l_i(u)) / m_i` with parametric-bootstrap
//! bands, and likelihood-ratio tests of a zero random-effects variance.

use serde::{Deserialize, Serialize};

use crate::data::ClusteredDataset;
use crate::error::{MeghError, Result};
use crate::estimation::{default_xi, fit, FitConfig, FitResult};
use crate::likelihood::{cluster_terms, log_marginal_clusters, EvalOptions};
use crate::model::ModelSpec;
use crate::par::{self, Execution};
use crate::quadrature::{integrate_real_line, QuadratureOptions};
use crate::reffects::RandomEffectsDist;
use crate::simulation::{simulate_outcomes, TruthEffects};
use crate::stats::{self, chi2_sf_1, chi2_sf_2, derive_seed};

/// Null distribution of the likelihood-ratio statistic on the boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrtCase {
    /// One variance on the boundary: `0.5 chi2_0 + 0.5 chi2_1`.
    OneVariance,
    /// Two variances on the boundary: `0.25 chi2_0 + 0.5 chi2_1 + 0.25 chi2_2`.
    TwoVariances,
}

/// p-value of an observed statistic under the boundary mixture.
pub fn lrt_p_value(r_obs: f64, case: LrtCase) -> f64 {
    if !(r_obs > 0.0) {
        return 1.0;
    }
    match case {
        LrtCase::OneVariance => 0.5 * chi2_sf_1(r_obs),
        LrtCase::TwoVariances => 0.5 * chi2_sf_1(r_obs) + 0.25 * chi2_sf_2(r_obs),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrtResult {
    pub statistic: f64,
    pub case: LrtCase,
    pub p_value: f64,
    pub log_lik_full: f64,
    pub log_lik_reduced: f64,
}

/// Test from two converged fits on the same data; the statistic is floored at 0.
pub fn lrt_from_fits(full: &FitResult, reduced: &FitResult, case: LrtCase) -> Result<LrtResult> {
    if !full.converged || !reduced.converged {
        return Err(MeghError::Contract(format!(
            "likelihood-ratio test refused: full fit converged={} (|grad|={:.2e}), reduced fit converged={} (|grad|={:.2e})",
            full.converged, full.gradient_norm, reduced.converged, reduced.gradient_norm
        )));
    }
    let statistic = (2.0 * (full.log_lik - reduced.log_lik)).max(0.0);
    Ok(LrtResult {
        statistic,
        case,
        p_value: lrt_p_value(statistic, case),
        log_lik_full: full.log_lik,
        log_lik_reduced: reduced.log_lik,
    })
}

/// Fit `model` and its reduction without random effects, then test.
pub fn lrt_random_effects(model: &ModelSpec, data: &ClusteredDataset, config: &FitConfig) -> Result<(LrtResult, FitResult, FitResult)> {
    if !model.structure.has_random_effects() {
        return Err(MeghError::Contract("the model has no random effects to test".into()));
    }
    let reduced = fit(&model.reduced(), data, None, config)?;
    let mut init = reduced.params.clone();
    init.xi = default_xi(model.random_effects, config.init_scale);
    let full = fit(model, data, Some(&init), config)?;
    let lrt = lrt_from_fits(&full, &reduced, LrtCase::OneVariance)?;
    Ok((lrt, full, reduced))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientDiagnostic {
    pub grid: Vec<f64>,
    pub delta: Vec<f64>,
    pub band_lower: Option<Vec<f64>>,
    pub band_upper: Option<Vec<f64>>,
    /// Whether `delta` leaves the band somewhere on the grid.
    pub exceeds: Option<bool>,
    /// Whether `delta` is above the upper band somewhere on the grid.
    pub above: Option<bool>,
    /// `int Delta dG` at the fitted distribution; 1 up to quadrature error.
    pub integral: f64,
    pub boot_replicates: usize,
    pub boot_failures: usize,
    /// More than 20% of bootstrap refits failed.
    pub boot_warning: bool,
}

/// `n` equally spaced points over `+/- 4 sd(G)`.
pub fn default_grid(g: &RandomEffectsDist, n: usize) -> Vec<f64> {
    let half = 4.0 * g.sd();
    if n < 2 {
        return vec![0.0];
    }
    (0..n).map(|k| -half + 2.0 * half * k as f64 / (n - 1) as f64).collect()
}

fn fitted_effects(fit: &FitResult) -> Result<RandomEffectsDist> {
    fit.params
        .random_effects(&fit.model)?
        .ok_or_else(|| MeghError::Contract("gradient function is undefined without random effects".into()))
}

/// `Delta(u)` on `grid` and its integral against the fitted distribution.
pub fn gradient_function(
    fit: &FitResult,
    data: &ClusteredDataset,
    grid: &[f64],
    opts: &EvalOptions,
) -> Result<GradientDiagnostic> {
    let g = fitted_effects(fit)?;
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(MeghError::Contract("grid must be strictly increasing".into()));
    }
    let terms = cluster_terms(&fit.model, &fit.params, data)?;
    let log_m = log_marginal_clusters(&fit.model, &fit.params, data, opts)?;
    let r = terms.len() as f64;
    let delta_at = |u: f64| terms.iter().zip(&log_m).map(|(t, lm)| (t.loglik(u) - lm).exp()).sum::<f64>() / r;
    let delta: Vec<f64> = grid.iter().map(|&u| delta_at(u)).collect();
    let tight = QuadratureOptions {
        abs_tol: 1e-10,
        rel_tol: 1e-10,
        max_intervals: 2000,
    };
    let integral = integrate_real_line(|u| delta_at(u) * g.density(u), g.mode(), g.sd(), &tight).result.value;
    Ok(GradientDiagnostic {
        grid: grid.to_vec(),
        delta,
        band_lower: None,
        band_upper: None,
        exceeds: None,
        above: None,
        integral,
        boot_replicates: 0,
        boot_failures: 0,
        boot_warning: false,
    })
}

/// Bootstrap bands for `Delta`. `lower`/`upper` form a simultaneous 95%
/// max-t band built on `log Delta`: `exp(mean_k +/- q sd_k)`, where `q` is
/// the 95% quantile over the bootstrap curves of
/// `max_k |log Delta_k - mean_k| / sd_k`. The pointwise 2.5% and 97.5%
/// quantiles of `Delta` are kept alongside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bands {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub pointwise_lower: Vec<f64>,
    pub pointwise_upper: Vec<f64>,
    /// Critical value `q` of the max-t band.
    pub critical_value: f64,
    pub replicates: usize,
    pub failures: usize,
    pub warning: bool,
}

/// Pointwise 2.5% and 97.5% quantiles of `Delta` over `n_boot` datasets
/// simulated from the fitted model on the observed design and refitted.
pub fn gradient_bands(
    fit: &FitResult,
    data: &ClusteredDataset,
    grid: &[f64],
    n_boot: usize,
    seed: u64,
    config: &FitConfig,
    execution: Execution,
) -> Result<Bands> {
    if n_boot == 0 {
        return Err(MeghError::Contract("bootstrap bands need at least one replicate".into()));
    }
    fitted_effects(fit)?;
    let mut cfg = config.warm();
    cfg.eval.execution = Execution::Sequential;
    let fixed: Vec<(String, f64)> = fit
        .names
        .iter()
        .zip(&fit.fixed)
        .filter(|(_, &f)| f)
        .map(|(n, _)| (n.clone(), fit.estimate(n).unwrap_or(f64::NAN)))
        .collect();
    cfg.fixed = fixed.into_iter().collect();
    let target = data.censoring_rate();
    let eval = cfg.eval;
    let draws = par::map_indexed(n_boot, execution, |b| -> Option<Vec<f64>> {
        let s = derive_seed(seed, 0xb007, b as u64);
        let sim = simulate_outcomes(&fit.model, &fit.params, data, &TruthEffects::Model, target, 10_000, s).ok()?;
        let refit = crate::estimation::fit(&fit.model, &sim.data, Some(&fit.params), &cfg).ok()?;
        if !refit.converged {
            return None;
        }
        gradient_function(&refit, &sim.data, grid, &eval).ok().map(|d| d.delta)
    });
    let ok: Vec<Vec<f64>> = draws.into_iter().flatten().collect();
    let failures = n_boot - ok.len();
    if ok.is_empty() {
        return Err(MeghError::Numeric {
            cluster: 0,
            message: "every bootstrap refit failed".into(),
            params: fit.estimates(),
        });
    }
    let columns: Vec<Vec<f64>> = (0..grid.len())
        .map(|k| {
            let mut col: Vec<f64> = ok.iter().map(|d| d[k]).collect();
            col.sort_by(f64::total_cmp);
            col
        })
        .collect();
    let pointwise_lower = columns.iter().map(|c| stats::quantile_sorted(c, 0.025)).collect();
    let pointwise_upper = columns.iter().map(|c| stats::quantile_sorted(c, 0.975)).collect();
    let logs: Vec<Vec<f64>> = ok.iter().map(|d| d.iter().map(|v| log_floor(*v)).collect()).collect();
    let (lo_log, hi_log, q) = max_t_band(&logs, grid.len(), 0.95);
    let lower = lo_log.iter().map(|v| v.exp()).collect();
    let upper = hi_log.iter().map(|v| v.exp()).collect();
    Ok(Bands {
        lower,
        upper,
        pointwise_lower,
        pointwise_upper,
        critical_value: q,
        replicates: ok.len(),
        failures,
        warning: failures as f64 > 0.2 * n_boot as f64,
    })
}

const LOG_FLOOR: f64 = 1e-300;

fn log_floor(v: f64) -> f64 {
    v.max(LOG_FLOOR).ln()
}

/// Simultaneous band from the bootstrap curves: `(lower, upper, q)`.
/// Grid points where every curve agrees (sd below `1e-12`) get a band of
/// zero width around the mean and do not enter the max statistic.
fn max_t_band(curves: &[Vec<f64>], m: usize, level: f64) -> (Vec<f64>, Vec<f64>, f64) {
    let mean: Vec<f64> = (0..m).map(|k| stats::mean(&curves.iter().map(|d| d[k]).collect::<Vec<_>>())).collect();
    let sd: Vec<f64> = (0..m)
        .map(|k| {
            if curves.len() < 2 {
                0.0
            } else {
                stats::sd(&curves.iter().map(|d| d[k]).collect::<Vec<_>>())
            }
        })
        .collect();
    let mut t_max: Vec<f64> = curves
        .iter()
        .map(|d| {
            (0..m)
                .filter(|&k| sd[k] > 1e-12)
                .map(|k| (d[k] - mean[k]).abs() / sd[k])
                .fold(0.0, f64::max)
        })
        .collect();
    t_max.sort_by(f64::total_cmp);
    let q = stats::quantile_sorted(&t_max, level);
    let lower = (0..m).map(|k| mean[k] - q * sd[k]).collect();
    let upper = (0..m).map(|k| mean[k] + q * sd[k]).collect();
    (lower, upper, q)
}

/// Gradient function with bootstrap bands and the exceedance flag.
pub fn diagnose(
    fit: &FitResult,
    data: &ClusteredDataset,
    grid: &[f64],
    n_boot: usize,
    seed: u64,
    config: &FitConfig,
    execution: Execution,
) -> Result<GradientDiagnostic> {
    let mut d = gradient_function(fit, data, grid, &config.eval)?;
    let bands = gradient_bands(fit, data, grid, n_boot, seed, config, execution)?;
    // compared on the floored scale the bands were built on
    let above = d.delta.iter().zip(&bands.upper).any(|(v, hi)| v.max(LOG_FLOOR) > hi * (1.0 + 1e-9));
    let below = d.delta.iter().zip(&bands.lower).any(|(v, lo)| v.max(LOG_FLOOR) < lo * (1.0 - 1e-9));
    d.exceeds = Some(above || below);
    d.above = Some(above);
    d.boot_replicates = bands.replicates;
    d.boot_failures = bands.failures;
    d.boot_warning = bands.warning;
    d.band_lower = Some(bands.lower);
    d.band_upper = Some(bands.upper);
    Ok(d)
}

/// CSV with columns `u, delta, lo, hi` (bands empty when not computed).
pub fn write_gradient_csv<W: std::io::Write>(d: &GradientDiagnostic, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["u", "delta", "lo", "hi"])?;
    for k in 0..d.grid.len() {
        let band = |b: &Option<Vec<f64>>| b.as_ref().map(|v| format!("{}", v[k])).unwrap_or_default();
        wtr.write_record([
            format!("{}", d.grid[k]),
            format!("{}", d.delta[k]),
            band(&d.band_lower),
            band(&d.band_upper),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
