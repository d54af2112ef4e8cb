//! Marginal maximum likelihood: multi-start simplex search polished by BFGS
//! on the unconstrained scale, then a numerical observed-information
//! covariance mapped back by the delta method.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::baseline::BaselineFamily;
use crate::data::ClusteredDataset;
use crate::error::{MeghError, Result, ValidationError};
use crate::hazard::HazardStructure;
use crate::likelihood::{log_marginal, log_marginal_grad, EvalOptions};
use crate::model::{ModelSpec, ParameterVector};
use crate::optim::{bfgs, nelder_mead, BfgsOptions, NelderMeadOptions};
use crate::reffects::ReFamily;
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub eval: EvalOptions,
    /// Number of starts; the first is the supplied or default initial value.
    pub starts: usize,
    /// Standard deviation of the jitter added to later starts (unconstrained scale).
    pub jitter: f64,
    pub seed: u64,
    /// Simplex budget in evaluations per free parameter; 0 skips the simplex.
    pub simplex_evals_per_dim: usize,
    pub simplex_step: f64,
    pub bfgs: BfgsOptions,
    /// Parameters held at a natural-scale value, keyed by name
    /// (`nu`, `beta[age]`, `sigma_u`, ...).
    pub fixed: BTreeMap<String, f64>,
    pub covariance: bool,
    /// Initial value of the random-effects scale.
    pub init_scale: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            eval: EvalOptions::default(),
            starts: 3,
            jitter: 0.1,
            seed: 0x5eed,
            simplex_evals_per_dim: 40,
            simplex_step: 0.25,
            bfgs: BfgsOptions::default(),
            fixed: BTreeMap::new(),
            covariance: true,
            init_scale: 0.5,
        }
    }
}

impl FitConfig {
    /// Settings for refits warm-started near an optimum (bootstrap, nested
    /// fits): one start, no simplex, no covariance.
    pub fn warm(&self) -> Self {
        FitConfig {
            starts: 1,
            simplex_evals_per_dim: 0,
            covariance: false,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: ModelSpec,
    pub params: ParameterVector,
    pub names: Vec<String>,
    pub log_lik: f64,
    pub aic: f64,
    /// Number of estimated (non-fixed) parameters.
    pub n_params: usize,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
    /// Infinity norm of the unconstrained gradient at the optimum.
    pub gradient_norm: f64,
    /// Natural-scale covariance; `None` if not requested or the Hessian
    /// could not be inverted.
    pub covariance: Option<Vec<Vec<f64>>>,
    pub standard_errors: Vec<Option<f64>>,
    pub hessian_asymmetry: Option<f64>,
    pub fixed: Vec<bool>,
    /// Log-likelihood reached from each start.
    pub start_log_liks: Vec<f64>,
}

impl FitResult {
    pub fn estimates(&self) -> Vec<f64> {
        self.params.to_vec()
    }

    pub fn estimate(&self, name: &str) -> Option<f64> {
        let k = self.names.iter().position(|n| n == name)?;
        Some(self.estimates()[k])
    }

    pub fn standard_error(&self, name: &str) -> Option<f64> {
        let k = self.names.iter().position(|n| n == name)?;
        self.standard_errors[k]
    }

    /// Wald intervals `estimate +/- z SE` at the given two-sided level.
    pub fn confidence_intervals(&self, level: f64) -> Vec<Option<(f64, f64)>> {
        let z = normal_quantile(0.5 + 0.5 * level);
        self.estimates()
            .iter()
            .zip(&self.standard_errors)
            .map(|(&e, se)| se.map(|s| (e - z * s, e + z * s)))
            .collect()
    }
}

/// Inverse standard normal CDF.
pub fn normal_quantile(p: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::standard().inverse_cdf(p)
}

pub fn aic(log_lik: f64, n_params: usize) -> f64 {
    -2.0 * log_lik + 2.0 * n_params as f64
}

/// Baseline parameters from a censoring-naive moment fit of the times.
pub fn default_theta(family: BaselineFamily, data: &ClusteredDataset) -> Vec<f64> {
    match family {
        BaselineFamily::Pgw => {
            let mut t = data.times().to_vec();
            t.sort_by(f64::total_cmp);
            let median = stats::quantile_sorted(&t, 0.5);
            // H0(median) = ln 2 with nu = 1, delta = 2
            let c = (1.0 + std::f64::consts::LN_2).powi(2) - 1.0;
            vec![median / c, 1.0, 2.0]
        }
        BaselineFamily::LogLogistic => {
            let lt = data.log_times();
            let sd = stats::sd(lt);
            let tau = if sd > 0.0 { sd * 3f64.sqrt() / std::f64::consts::PI } else { 1.0 };
            vec![stats::mean(lt), tau]
        }
    }
}

pub fn default_xi(family: ReFamily, scale: f64) -> Vec<f64> {
    match family {
        ReFamily::Normal | ReFamily::StudentT => vec![scale],
        ReFamily::TwoPieceNormal => vec![scale, 0.0],
    }
}

fn check_identifiable(model: &ModelSpec, data: &ClusteredDataset, config: &FitConfig) -> Result<()> {
    model.validate()?;
    if model.baseline == BaselineFamily::Pgw && data.p_time() > 0 && config.fixed.get("delta") == Some(&1.0) {
        return Err(ValidationError::Model(
            "PGW baseline with delta fixed at 1 is a Weibull baseline; time-scale effects are not identifiable"
                .into(),
        )
        .into());
    }
    let names = model.param_names(data);
    for k in config.fixed.keys() {
        if !names.contains(k) {
            return Err(ValidationError::Model(format!("fixed parameter `{k}` is not a model parameter")).into());
        }
    }
    Ok(())
}

struct Problem<'a> {
    model: &'a ModelSpec,
    data: &'a ClusteredDataset,
    eval: EvalOptions,
    /// Full unconstrained vector with fixed coordinates filled in.
    base: Vec<f64>,
    free: Vec<usize>,
}

impl Problem<'_> {
    fn full(&self, z: &[f64]) -> Vec<f64> {
        let mut v = self.base.clone();
        for (k, &i) in self.free.iter().enumerate() {
            v[i] = z[k];
        }
        v
    }

    fn params(&self, z: &[f64]) -> Result<ParameterVector> {
        ParameterVector::unpack(self.model, self.data.p(), self.data.p_time(), &self.full(z))
    }

    fn value(&self, z: &[f64]) -> f64 {
        match self.params(z).and_then(|p| log_marginal(self.model, &p, self.data, &self.eval)) {
            Ok(v) if v.is_finite() => v,
            _ => f64::NEG_INFINITY,
        }
    }

    /// Log-likelihood and its gradient in the free unconstrained coordinates.
    fn value_grad(&self, z: &[f64]) -> Option<(f64, Vec<f64>)> {
        let p = self.params(z).ok()?;
        let (v, g) = log_marginal_grad(self.model, &p, self.data, &self.eval).ok()?;
        if !v.is_finite() {
            return None;
        }
        let jac = p.jacobian_diag(self.model);
        Some((v, self.free.iter().map(|&i| g[i] * jac[i]).collect()))
    }
}

/// Maximise the marginal likelihood of `model` on `data`.
pub fn fit(
    model: &ModelSpec,
    data: &ClusteredDataset,
    init: Option<&ParameterVector>,
    config: &FitConfig,
) -> Result<FitResult> {
    check_identifiable(model, data, config)?;
    let names = model.param_names(data);
    let start = match init {
        Some(p) => {
            p.validate(model, data.p(), data.p_time())?;
            p.clone()
        }
        None => default_init(model, data, config)?,
    };
    let mut natural = start.to_vec();
    let mut fixed_mask = vec![false; names.len()];
    for (k, name) in names.iter().enumerate() {
        if let Some(&v) = config.fixed.get(name) {
            natural[k] = v;
            fixed_mask[k] = true;
        }
    }
    let start = ParameterVector::from_vec(model, data.p(), data.p_time(), &natural)?;
    start.validate(model, data.p(), data.p_time())?;
    let base = start.pack(model);
    let free: Vec<usize> = (0..names.len()).filter(|&k| !fixed_mask[k]).collect();
    let problem = Problem {
        model,
        data,
        eval: config.eval,
        base: base.clone(),
        free: free.clone(),
    };
    let z0: Vec<f64> = free.iter().map(|&i| base[i]).collect();
    let dim = free.len();

    let mut best: Option<(f64, Vec<f64>, bool, usize, usize)> = None;
    let mut start_lls = Vec::with_capacity(config.starts.max(1));
    for s in 0..config.starts.max(1) {
        let mut z = z0.clone();
        if s > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(stats::derive_seed(config.seed, 0x0f17, s as u64));
            for v in z.iter_mut() {
                let e: f64 = StandardNormal.sample(&mut rng);
                *v += config.jitter * e;
            }
        }
        let mut evals = 0;
        let mut iters = 0;
        if config.simplex_evals_per_dim > 0 && dim > 0 {
            let nm = nelder_mead(
                |x| -problem.value(x),
                &z,
                config.simplex_step,
                &NelderMeadOptions {
                    max_evals: config.simplex_evals_per_dim * dim,
                    ..Default::default()
                },
            );
            evals += nm.evaluations;
            iters += nm.iterations;
            if nm.f.is_finite() {
                z = nm.x;
            }
        }
        let out = bfgs(
            |x| match problem.value_grad(x) {
                Some((v, g)) => (-v, g.iter().map(|x| -x).collect()),
                None => (f64::INFINITY, vec![f64::NAN; x.len()]),
            },
            &z,
            &config.bfgs,
        );
        evals += out.evaluations;
        iters += out.iterations;
        let ll = -out.f;
        start_lls.push(ll);
        if !ll.is_finite() {
            continue;
        }
        let better = match &best {
            None => true,
            Some((b, ..)) => ll > b + 1e-8,
        };
        if better {
            best = Some((ll, out.x, out.converged, iters, evals));
        } else if let Some(b) = best.as_mut() {
            b.3 += iters;
            b.4 += evals;
        }
    }
    let Some((ll, z_hat, converged, iterations, evaluations)) = best else {
        return Err(MeghError::Numeric {
            cluster: 0,
            message: "log-likelihood is not finite at any starting value".into(),
            params: natural,
        });
    };
    let params = problem.params(&z_hat)?;
    let gradient_norm = problem
        .value_grad(&z_hat)
        .map(|(_, g)| g.iter().fold(0.0, |m: f64, x| m.max(x.abs())))
        .unwrap_or(f64::NAN);

    let mut result = FitResult {
        model: *model,
        params,
        names,
        log_lik: ll,
        aic: aic(ll, dim),
        n_params: dim,
        converged,
        iterations,
        evaluations,
        gradient_norm,
        covariance: None,
        standard_errors: vec![None; fixed_mask.len()],
        hessian_asymmetry: None,
        fixed: fixed_mask,
        start_log_liks: start_lls,
    };
    if config.covariance {
        covariance_and_se(&problem, &z_hat, &mut result);
    }
    Ok(result)
}

fn default_init(model: &ModelSpec, data: &ClusteredDataset, config: &FitConfig) -> Result<ParameterVector> {
    let gh = ParameterVector::new(
        vec![0.0; data.p()],
        vec![0.0; data.p_time()],
        default_theta(model.baseline, data),
        vec![],
    );
    if model.structure == HazardStructure::Gh {
        return Ok(gh);
    }
    // warm start from the fit without random effects
    let reduced = model.reduced();
    let mut cfg = config.clone();
    cfg.covariance = false;
    let reduced_names = reduced.param_names(data);
    cfg.fixed.retain(|k, _| reduced_names.contains(k));
    let mut p = match fit(&reduced, data, Some(&gh), &cfg) {
        Ok(f) => f.params,
        Err(_) => gh,
    };
    p.xi = default_xi(model.random_effects, config.init_scale);
    Ok(p)
}

/// Hessian of `-log m` by central differences of the analytic gradient on
/// the unconstrained scale, inverted and mapped to the natural scale.
fn covariance_and_se(problem: &Problem<'_>, z: &[f64], result: &mut FitResult) {
    let d = z.len();
    if d == 0 {
        return;
    }
    let mut hess = DMatrix::<f64>::zeros(d, d);
    for k in 0..d {
        let h = 1e-4f64.max(1e-4 * z[k].abs());
        let mut up = z.to_vec();
        up[k] += h;
        let mut dn = z.to_vec();
        dn[k] -= h;
        let (Some((_, gu)), Some((_, gd))) = (problem.value_grad(&up), problem.value_grad(&dn)) else {
            return;
        };
        for j in 0..d {
            hess[(j, k)] = -(gu[j] - gd[j]) / (2.0 * h);
        }
    }
    let mut asym: f64 = 0.0;
    for j in 0..d {
        for k in 0..j {
            let a = hess[(j, k)];
            let b = hess[(k, j)];
            asym = asym.max((a - b).abs() / (1.0 + 0.5 * (a.abs() + b.abs())));
        }
    }
    result.hessian_asymmetry = Some(asym);
    let sym = (&hess + hess.transpose()) * 0.5;
    let Some(chol) = sym.clone().cholesky() else {
        return;
    };
    let inv = chol.inverse();
    let Ok(full) = problem.params(z) else {
        return;
    };
    let jac_all = full.jacobian_diag(problem.model);
    let jac: Vec<f64> = problem.free.iter().map(|&i| jac_all[i]).collect();
    let n = result.names.len();
    let mut cov = vec![vec![0.0; n]; n];
    for (a, &i) in problem.free.iter().enumerate() {
        for (b, &j) in problem.free.iter().enumerate() {
            cov[i][j] = jac[a] * inv[(a, b)] * jac[b];
        }
    }
    result.standard_errors = (0..n)
        .map(|i| {
            if result.fixed[i] {
                None
            } else {
                let v = cov[i][i];
                (v >= 0.0 && v.is_finite()).then(|| v.sqrt())
            }
        })
        .collect();
    result.covariance = Some(cov);
}

/// Fit `model` on each dataset, warm-started at `init`.
pub fn refit(
    model: &ModelSpec,
    data: &ClusteredDataset,
    init: &ParameterVector,
    config: &FitConfig,
) -> Result<FitResult> {
    fit(model, data, Some(init), &config.warm())
}
