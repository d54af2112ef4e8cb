//! Simulation of clustered right-censored data by inverting the conditional
//! cumulative hazard, and replication studies over simulated datasets.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::baseline::{BaselineFamily, BaselineHazard};
use crate::data::ClusteredDataset;
use crate::diagnostics::{lrt_p_value, LrtCase};
use crate::error::{domain, Result};
use crate::estimation::{default_xi, fit, FitConfig, FitResult};
use crate::hazard::{dot, HazardStructure, RegressionCoefficients};
use crate::likelihood::EvalOptions;
use crate::model::{ModelSpec, ParameterVector};
use crate::par::{self, Execution};
use crate::reffects::{RandomEffectsDist, ReFamily};
use crate::stats::{self, derive_seed};

/// Distribution of a simulated covariate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CovariateKind {
    Normal,
    Bernoulli { p: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    pub kind: CovariateKind,
}

/// Cluster effects used to generate data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TruthEffects {
    /// Draw from the model's own random-effects distribution.
    Model,
    /// Equal-weight normal mixture, e.g. locations `[-1.5, 1.5]`.
    Mixture { locations: Vec<f64>, sd: f64 },
}

impl TruthEffects {
    fn draw<R: Rng + ?Sized>(&self, g: Option<&RandomEffectsDist>, rng: &mut R) -> f64 {
        match self {
            TruthEffects::Model => g.map(|g| g.draw(rng)).unwrap_or(0.0),
            TruthEffects::Mixture { locations, sd } => {
                let k = rng.random_range(0..locations.len());
                let z: f64 = StandardNormal.sample(rng);
                locations[k] + sd * z
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub model: ModelSpec,
    pub truth: ParameterVector,
    pub cluster_sizes: Vec<usize>,
    pub censoring_target: f64,
    pub covariates: Vec<CovariateSpec>,
    /// Names of covariates that also act on the time scale.
    pub time_scale: Vec<String>,
    #[serde(default = "default_effects")]
    pub effects: TruthEffects,
    #[serde(default = "default_pilot")]
    pub pilot_size: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_effects() -> TruthEffects {
    TruthEffects::Model
}

fn default_pilot() -> usize {
    10_000
}

/// `n` subjects split over `r` clusters as evenly as possible, larger clusters first.
pub fn equal_cluster_sizes(n: usize, r: usize) -> Vec<usize> {
    if r == 0 {
        return vec![];
    }
    (0..r).map(|i| n / r + usize::from(i < n % r)).collect()
}

pub fn leukaemia_covariates() -> Vec<CovariateSpec> {
    let normal = |n: &str| CovariateSpec {
        name: n.into(),
        kind: CovariateKind::Normal,
    };
    vec![
        normal("age"),
        CovariateSpec {
            name: "sex".into(),
            kind: CovariateKind::Bernoulli { p: 0.5 },
        },
        normal("wbc"),
        normal("tpi"),
    ]
}

impl SimConfig {
    /// The simulation design with the truth taken from the leukaemia fit:
    /// PGW(0.2, 1.5, 3), age on both scales, 1043 subjects in 24 clusters.
    pub fn leukaemia(structure: HazardStructure, sigma_u: f64) -> Self {
        SimConfig {
            model: ModelSpec::new(structure, BaselineFamily::Pgw, ReFamily::Normal),
            truth: ParameterVector::new(
                vec![1.00, 0.08, 0.22, 0.10],
                vec![0.96],
                vec![0.20, 1.50, 3.00],
                if structure.has_random_effects() { vec![sigma_u] } else { vec![] },
            ),
            cluster_sizes: equal_cluster_sizes(1043, 24),
            censoring_target: 0.25,
            covariates: leukaemia_covariates(),
            time_scale: vec!["age".into()],
            effects: TruthEffects::Model,
            pilot_size: 10_000,
            seed: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(0.0..1.0).contains(&self.censoring_target) {
            return Err(domain(format!("censoring target must lie in [0, 1), got {}", self.censoring_target)));
        }
        if self.cluster_sizes.is_empty() || self.cluster_sizes.contains(&0) {
            return Err(domain("need at least one cluster and no empty clusters"));
        }
        for t in &self.time_scale {
            if !self.covariates.iter().any(|c| &c.name == t) {
                return Err(domain(format!("time-scale covariate `{t}` is not simulated")));
            }
        }
        self.truth.validate(&self.model, self.covariates.len(), self.time_scale.len())
    }

    /// Covariates and cluster labels, with placeholder outcomes.
    pub fn design(&self, seed: u64) -> Result<ClusteredDataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = self.cluster_sizes.iter().sum();
        let mut clusters = Vec::with_capacity(n);
        for (i, &ni) in self.cluster_sizes.iter().enumerate() {
            clusters.extend(std::iter::repeat_n(format!("{}", i + 1), ni));
        }
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                self.covariates
                    .iter()
                    .map(|c| match c.kind {
                        CovariateKind::Normal => StandardNormal.sample(&mut rng),
                        CovariateKind::Bernoulli { p } => f64::from(u8::from(rng.random::<f64>() < p)),
                    })
                    .collect()
            })
            .collect();
        let time_cols = self
            .time_scale
            .iter()
            .map(|t| self.covariates.iter().position(|c| &c.name == t).unwrap_or(0))
            .collect();
        let names = self.covariates.iter().map(|c| c.name.clone()).collect();
        ClusteredDataset::new(vec![1.0; n], vec![true; n], clusters, rows, names, time_cols)
    }
}

/// Event time solving `H(t | x, u) = e` for a unit-exponential draw `e`.
pub fn event_time(
    structure: HazardStructure,
    baseline: &BaselineHazard,
    coef: &RegressionCoefficients,
    x: &[f64],
    x_time: &[f64],
    u: f64,
    e: f64,
) -> f64 {
    let xb = dot(x, &coef.beta);
    let xa = dot(x_time, &coef.alpha);
    let (uh, ut) = crate::hazard::structure_effects(structure, u);
    // H0(t e^{xa + ut}) e^{xb - xa + uh - ut} = e
    let s = e * (-(xb - xa + uh - ut)).exp();
    let t = baseline.inv_cum_hazard(s).unwrap_or(f64::NAN) * (-(xa + ut)).exp();
    if t.is_nan() {
        t
    } else {
        t.max(f64::MIN_POSITIVE)
    }
}

/// A simulated dataset with the effects that generated it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Simulated {
    pub data: ClusteredDataset,
    pub effects: Vec<f64>,
    /// Upper limit of the uniform censoring distribution; `None` without censoring.
    pub censoring_max: Option<f64>,
}

/// Upper limit `c` with `mean(min(o, c) / c) = target`, i.e. uniform(0, c)
/// censoring removes a fraction `target` of the given event times.
pub fn calibrate_censoring(event_times: &[f64], target: f64) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) || event_times.is_empty() {
        return Err(domain(format!("cannot calibrate censoring to {target}")));
    }
    let frac = |c: f64| event_times.iter().map(|&o| o.min(c) / c).sum::<f64>() / event_times.len() as f64;
    let finite: Vec<f64> = event_times.iter().copied().filter(|t| t.is_finite()).collect();
    let lo0 = finite.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi0 = finite.iter().cloned().fold(0.0, f64::max);
    let (mut lo, mut hi) = (lo0.max(f64::MIN_POSITIVE).ln() - 5.0, hi0.ln() + 20.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if frac(mid.exp()) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// New outcomes on an existing design. Cluster effects are drawn first; the
/// censoring limit is calibrated on a pilot of `pilot_size` rows resampled
/// from the design with those realised effects and fresh event-time draws.
pub fn simulate_outcomes(
    model: &ModelSpec,
    truth: &ParameterVector,
    design: &ClusteredDataset,
    effects: &TruthEffects,
    censoring_target: f64,
    pilot_size: usize,
    seed: u64,
) -> Result<Simulated> {
    truth.validate(model, design.p(), design.p_time())?;
    let baseline = truth.baseline(model)?;
    let g = truth.random_effects(model)?;
    let coef = truth.coefficients();
    let mut rng_u = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2, 0));
    let us: Vec<f64> = (0..design.n_clusters())
        .map(|_| {
            if model.structure.has_random_effects() {
                effects.draw(g.as_ref(), &mut rng_u)
            } else {
                0.0
            }
        })
        .collect();
    let draw_time = |j: usize, e: f64| {
        event_time(
            model.structure,
            &baseline,
            &coef,
            design.x(j),
            design.x_time(j),
            us[design.cluster_of()[j]],
            e,
        )
    };
    let mut rng_e = ChaCha8Rng::seed_from_u64(derive_seed(seed, 3, 0));
    let obs: Vec<f64> = (0..design.n())
        .map(|j| {
            let e: f64 = Exp1.sample(&mut rng_e);
            draw_time(j, e)
        })
        .collect();
    if obs.iter().any(|t| !t.is_finite()) {
        return Err(domain("simulated event time is not finite"));
    }
    let (times, status, cmax) = if censoring_target > 0.0 {
        let mut rng_p = ChaCha8Rng::seed_from_u64(derive_seed(seed, 4, 0));
        let pilot: Vec<f64> = (0..pilot_size.max(1))
            .map(|_| {
                let j = rng_p.random_range(0..design.n());
                let e: f64 = Exp1.sample(&mut rng_p);
                draw_time(j, e)
            })
            .collect();
        let cmax = calibrate_censoring(&pilot, censoring_target)?;
        let mut rng_c = ChaCha8Rng::seed_from_u64(derive_seed(seed, 5, 0));
        let mut times = Vec::with_capacity(obs.len());
        let mut status = Vec::with_capacity(obs.len());
        for &o in &obs {
            let c = cmax * rng_c.random::<f64>();
            let c = c.max(f64::MIN_POSITIVE);
            times.push(o.min(c));
            status.push(o < c);
        }
        (times, status, Some(cmax))
    } else {
        (obs.clone(), vec![true; obs.len()], None)
    };
    Ok(Simulated {
        data: design.with_outcomes(times, status)?,
        effects: us,
        censoring_max: cmax,
    })
}

/// One dataset from a simulation configuration.
pub fn simulate_times(config: &SimConfig) -> Result<Simulated> {
    config.validate()?;
    let design = config.design(derive_seed(config.seed, 1, 0))?;
    simulate_outcomes(
        &config.model,
        &config.truth,
        &design,
        &config.effects,
        config.censoring_target,
        config.pilot_size,
        config.seed,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub sim: SimConfig,
    pub reps: usize,
    pub fit_models: Vec<ModelSpec>,
    pub fit: FitConfig,
    /// Test level for the random-effects likelihood-ratio test.
    pub level: f64,
    pub execution: Execution,
}

impl StudyConfig {
    /// Random-effects fits start from the reduced model's optimum, so one
    /// start per fit is the default here.
    pub fn new(sim: SimConfig, reps: usize, fit_models: Vec<ModelSpec>) -> Self {
        StudyConfig {
            sim,
            reps,
            fit_models,
            fit: FitConfig {
                starts: 1,
                ..FitConfig::default()
            },
            level: 0.05,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    pub model: String,
    pub converged: bool,
    pub log_lik: f64,
    pub aic: f64,
    pub estimates: BTreeMap<String, f64>,
    pub standard_errors: BTreeMap<String, Option<f64>>,
    /// LRT against the model without random effects.
    pub lrt_statistic: Option<f64>,
    pub lrt_p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub index: usize,
    pub seed: u64,
    pub censoring_rate: f64,
    pub fits: Vec<ModelFit>,
    /// Failures as `(model, message)`.
    pub failures: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub truth: f64,
    pub n: usize,
    pub mean: f64,
    pub bias: f64,
    pub abs_mean_bias: f64,
    pub mean_abs_error: f64,
    pub mc_se: f64,
    /// Fraction of 95% Wald intervals covering the truth, among fits with SEs.
    pub coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: String,
    pub n_fits: usize,
    pub n_converged: usize,
    pub mean_aic: f64,
    pub params: Vec<ParamSummary>,
    /// Rejection rate of the random-effects test at the study level.
    pub power: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub reps: usize,
    pub truth: BTreeMap<String, f64>,
    pub mean_censoring: f64,
    pub replications: Vec<Replication>,
    pub summaries: Vec<ModelSummary>,
}

impl StudyReport {
    pub fn summary(&self, model_label: &str) -> Option<&ModelSummary> {
        self.summaries.iter().find(|s| s.model == model_label)
    }

    /// Summary table as CSV: one row per (model, parameter).
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record([
            "model", "parameter", "truth", "n", "mean", "bias", "abs_mean_bias", "mean_abs_error", "mc_se",
            "coverage", "mean_aic", "power",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        for s in &self.summaries {
            for p in &s.params {
                wtr.write_record([
                    s.model.clone(),
                    p.name.clone(),
                    format!("{}", p.truth),
                    p.n.to_string(),
                    format!("{}", p.mean),
                    format!("{}", p.bias),
                    format!("{}", p.abs_mean_bias),
                    format!("{}", p.mean_abs_error),
                    format!("{}", p.mc_se),
                    opt(p.coverage),
                    format!("{}", s.mean_aic),
                    opt(s.power),
                ])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

fn summarise_fit(f: &FitResult) -> ModelFit {
    let est = f.estimates();
    ModelFit {
        model: f.model.label(),
        converged: f.converged,
        log_lik: f.log_lik,
        aic: f.aic,
        estimates: f.names.iter().cloned().zip(est).collect(),
        standard_errors: f.names.iter().cloned().zip(f.standard_errors.iter().copied()).collect(),
        lrt_statistic: None,
        lrt_p_value: None,
    }
}

/// Fit every requested model to one simulated dataset. The model without
/// random effects is always fitted: it initialises the others and is the
/// null model of the likelihood-ratio test.
pub fn fit_replication(
    data: &ClusteredDataset,
    models: &[ModelSpec],
    config: &FitConfig,
) -> (Vec<ModelFit>, Vec<(String, String)>) {
    let mut fits = Vec::new();
    let mut failures = Vec::new();
    let mut gh_cache: BTreeMap<String, FitResult> = BTreeMap::new();
    for m in models {
        let reduced = m.reduced();
        let key = reduced.label();
        if !gh_cache.contains_key(&key) {
            match fit(&reduced, data, None, config) {
                Ok(f) => {
                    gh_cache.insert(key.clone(), f);
                }
                Err(e) => failures.push((key.clone(), e.to_string())),
            }
        }
        let Some(gh) = gh_cache.get(&key) else {
            continue;
        };
        if !m.structure.has_random_effects() {
            fits.push(summarise_fit(gh));
            continue;
        }
        let mut init = gh.params.clone();
        init.xi = default_xi(m.random_effects, config.init_scale);
        match fit(m, data, Some(&init), config) {
            Ok(f) => {
                let mut s = summarise_fit(&f);
                let r = (2.0 * (f.log_lik - gh.log_lik)).max(0.0);
                s.lrt_statistic = Some(r);
                s.lrt_p_value = Some(lrt_p_value(r, LrtCase::OneVariance));
                fits.push(s);
            }
            Err(e) => failures.push((m.label(), e.to_string())),
        }
    }
    (fits, failures)
}

pub fn run_study(config: &StudyConfig) -> Result<StudyReport> {
    config.sim.validate()?;
    if config.reps == 0 {
        return Err(domain("a study needs at least one replication"));
    }
    if config.fit_models.is_empty() {
        return Err(domain("no models to fit"));
    }
    let mut fit_cfg = config.fit.clone();
    // replications are the unit of parallel work
    fit_cfg.eval = EvalOptions {
        execution: Execution::Sequential,
        ..fit_cfg.eval
    };
    let reps = par::map_indexed(config.reps, config.execution, |r| -> Result<Replication> {
        let seed = derive_seed(config.sim.seed, 0x57d, r as u64);
        let mut sim = config.sim.clone();
        sim.seed = seed;
        let simulated = simulate_times(&sim)?;
        let mut cfg = fit_cfg.clone();
        cfg.seed = derive_seed(seed, 6, 0);
        let (fits, failures) = fit_replication(&simulated.data, &config.fit_models, &cfg);
        Ok(Replication {
            index: r,
            seed,
            censoring_rate: simulated.data.censoring_rate(),
            fits,
            failures,
        })
    });
    let replications: Vec<Replication> = reps.into_iter().collect::<Result<_>>()?;
    let design = config.sim.design(0)?;
    let truth_names = config.sim.model.param_names(&design);
    let truth: BTreeMap<String, f64> = truth_names.iter().cloned().zip(config.sim.truth.to_vec()).collect();
    let summaries = config
        .fit_models
        .iter()
        .map(|m| summarise_model(&m.label(), &truth_names, &truth, &replications, config.level, m))
        .collect();
    let mean_censoring = stats::mean(&replications.iter().map(|r| r.censoring_rate).collect::<Vec<_>>());
    Ok(StudyReport {
        reps: config.reps,
        truth,
        mean_censoring,
        replications,
        summaries,
    })
}

fn summarise_model(
    label: &str,
    names: &[String],
    truth: &BTreeMap<String, f64>,
    reps: &[Replication],
    level: f64,
    model: &ModelSpec,
) -> ModelSummary {
    let fits: Vec<&ModelFit> = reps.iter().filter_map(|r| r.fits.iter().find(|f| f.model == label)).collect();
    let z = crate::estimation::normal_quantile(0.975);
    let xi_names: Vec<&str> = ReFamily::Normal
        .param_names()
        .iter()
        .chain(ReFamily::StudentT.param_names())
        .chain(ReFamily::TwoPieceNormal.param_names())
        .copied()
        .collect();
    let params = names
        .iter()
        .map(|name| {
            let t = truth[name];
            // a model without random effects estimates a zero scale
            let absent_scale = !model.structure.has_random_effects() && xi_names.contains(&name.as_str());
            let mut est = Vec::new();
            let mut covered = 0usize;
            let mut with_se = 0usize;
            for f in &fits {
                match f.estimates.get(name) {
                    Some(&e) => {
                        est.push(e);
                        if let Some(Some(se)) = f.standard_errors.get(name) {
                            with_se += 1;
                            if (e - z * se..=e + z * se).contains(&t) {
                                covered += 1;
                            }
                        }
                    }
                    None if absent_scale => est.push(0.0),
                    None => {}
                }
            }
            let n = est.len();
            let mean = stats::mean(&est);
            ParamSummary {
                name: name.clone(),
                truth: t,
                n,
                mean,
                bias: mean - t,
                abs_mean_bias: (mean - t).abs(),
                mean_abs_error: stats::mean(&est.iter().map(|e| (e - t).abs()).collect::<Vec<_>>()),
                mc_se: if n > 1 { stats::sd(&est) / (n as f64).sqrt() } else { f64::NAN },
                coverage: (with_se > 0).then(|| covered as f64 / with_se as f64),
            }
        })
        .collect();
    let pvals: Vec<f64> = fits.iter().filter_map(|f| f.lrt_p_value).collect();
    ModelSummary {
        model: label.to_string(),
        n_fits: fits.len(),
        n_converged: fits.iter().filter(|f| f.converged).count(),
        mean_aic: stats::mean(&fits.iter().map(|f| f.aic).collect::<Vec<_>>()),
        params,
        power: (!pvals.is_empty()).then(|| pvals.iter().filter(|&&p| p < level).count() as f64 / pvals.len() as f64),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cluster_sizes_split_evenly() {
        let s = equal_cluster_sizes(1043, 24);
        assert_eq!(s.iter().sum::<usize>(), 1043);
        assert_eq!(s.iter().filter(|&&k| k == 44).count(), 11);
        assert_eq!(s.iter().filter(|&&k| k == 43).count(), 13);
    }

    #[test]
    fn censoring_calibration_hits_target_on_pilot() {
        let times: Vec<f64> = (1..=1000).map(|k| k as f64 / 100.0).collect();
        let c = calibrate_censoring(&times, 0.25).unwrap();
        let frac = times.iter().map(|&o| o.min(c) / c).sum::<f64>() / times.len() as f64;
        assert!((frac - 0.25).abs() < 1e-10);
        assert!(calibrate_censoring(&times, 1.0).is_err());
    }

    #[test]
    fn identical_seeds_give_identical_data() {
        let cfg = SimConfig::leukaemia(HazardStructure::MeghI, 1.0);
        let a = simulate_times(&cfg).unwrap();
        let b = simulate_times(&cfg).unwrap();
        let mut wa = Vec::new();
        let mut wb = Vec::new();
        a.data.write_csv(&mut wa).unwrap();
        b.data.write_csv(&mut wb).unwrap();
        assert_eq!(wa, wb);
        assert_eq!(a.data.n(), 1043);
        assert_eq!(a.data.n_clusters(), 24);
    }

    #[test]
    fn event_time_inverts_the_cumulative_hazard() {
        let b = BaselineHazard::pgw(0.2, 1.5, 3.0).unwrap();
        let coef = RegressionCoefficients {
            beta: vec![1.0, 0.08],
            alpha: vec![0.96],
        };
        for s in [HazardStructure::Gh, HazardStructure::MeghI, HazardStructure::MeghII] {
            let x = [0.4, 1.0];
            let t = event_time(s, &b, &coef, &x, &x[..1], 0.7, 0.9);
            let (uh, ut) = crate::hazard::structure_effects(s, 0.7);
            let h = crate::hazard::cond_cum_hazard(t, &x, &x[..1], uh, ut, &coef, &b).unwrap();
            assert!((h - 0.9).abs() < 1e-10, "{s:?}");
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = SimConfig::leukaemia(HazardStructure::MeghI, 1.0);
        cfg.censoring_target = 1.0;
        assert!(simulate_times(&cfg).is_err());
        let mut cfg = SimConfig::leukaemia(HazardStructure::MeghI, 1.0);
        cfg.cluster_sizes.clear();
        assert!(simulate_times(&cfg).is_err());
    }

    #[test]
    fn mixture_effects_are_bimodal() {
        let eff = TruthEffects::Mixture {
            locations: vec![-1.5, 1.5],
            sd: 0.3,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let draws: Vec<f64> = (0..2000).map(|_| eff.draw(None, &mut rng)).collect();
        let near_zero = draws.iter().filter(|u| u.abs() < 0.5).count();
        assert!(near_zero < 20);
        assert!((stats::mean(&draws)).abs() < 0.1);
    }
}
