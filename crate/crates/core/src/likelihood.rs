//! Conditional cluster log-likelihoods and the marginal likelihood
//! `m_i = int exp(l_i(u)) dG(u)`.
//!
//! At fixed parameters each cluster is reduced to a [`ClusterTerms`] value.
//! Without a time-scale random effect the conditional log-likelihood is
//! `a + d u - b e^u`, so the integrand costs O(1) per node; with the shared
//! effect every node needs a pass over the cluster's subjects.
//!
//! Quadrature is centred at the mode `c` of `phi = l_i + log g` with scale
//! `1 / sqrt(-phi''(c))`, and the integrand `exp(phi(u) - phi(c))` is at most
//! one near the mode, so `log m_i = phi(c) + log int exp(phi - phi(c))`.

use serde::{Deserialize, Serialize};

use crate::baseline::{BaselineHazard, LogTimeKernel};
use crate::data::ClusteredDataset;
use crate::error::{check_len, MeghError, Result};
use crate::hazard::{self, dot, structure_effects, HazardStructure};
use crate::model::{ModelSpec, ParameterVector};
use crate::par::{self, Execution};
use crate::quadrature::{integrate_real_line, QuadratureOptions, RealLineRule};
use crate::reffects::RandomEffectsDist;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub quadrature: QuadratureOptions,
    pub execution: Execution,
}

impl EvalOptions {
    pub fn sequential() -> Self {
        EvalOptions {
            execution: Execution::Sequential,
            ..Default::default()
        }
    }
}

/// Marginal likelihood of one cluster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterMarginal {
    pub log_m: f64,
    /// `max_u l_i(u)` (a supremum when the cluster has no events).
    pub log_k: f64,
    /// Mode of `l_i + log g`, the quadrature centre.
    pub mode: f64,
    pub scale: f64,
    pub evaluations: usize,
}

/// `l_i` evaluated directly from the hazard functions; the reference
/// implementation the fast paths are tested against.
pub fn cond_loglik_cluster(
    i: usize,
    u: f64,
    model: &ModelSpec,
    params: &ParameterVector,
    data: &ClusteredDataset,
) -> Result<f64> {
    if i >= data.n_clusters() {
        return Err(MeghError::Contract(format!(
            "cluster {i} out of range for {} clusters",
            data.n_clusters()
        )));
    }
    let baseline = params.baseline(model)?;
    let coef = params.coefficients();
    let (uh, ut) = structure_effects(model.structure, u);
    let mut ll = 0.0;
    for j in data.cluster_range(i) {
        let t = data.times()[j];
        if data.status()[j] {
            ll += hazard::cond_log_hazard(t, data.x(j), data.x_time(j), uh, ut, &coef, &baseline)?;
        }
        ll -= hazard::cond_cum_hazard(t, data.x(j), data.x_time(j), uh, ut, &coef, &baseline)?;
    }
    Ok(ll)
}

/// One cluster's conditional log-likelihood at fixed parameters, as a
/// function of the scalar random effect.
#[derive(Debug, Clone)]
pub struct ClusterTerms {
    index: usize,
    random: bool,
    kind: Terms,
}

#[derive(Debug, Clone)]
enum Terms {
    /// `a + d u - b e^u`.
    Separable { a: f64, d: f64, b: f64 },
    /// `a + d u + sum_events lh0(ls0_j + u) - sum_j H0(ls0_j + u) w_j`
    /// with `w_j = exp(x_j beta - x~_j alpha)`.
    Shared {
        a: f64,
        d: f64,
        ls0: Vec<f64>,
        w: Vec<f64>,
        event: Vec<bool>,
        kernel: LogTimeKernel,
    },
}

struct Resolved {
    structure: HazardStructure,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    baseline: BaselineHazard,
    re: Option<RandomEffectsDist>,
}

fn resolve(model: &ModelSpec, params: &ParameterVector, data: &ClusteredDataset) -> Result<Resolved> {
    model.validate()?;
    params.validate(model, data.p(), data.p_time())?;
    Ok(Resolved {
        structure: model.structure,
        beta: params.beta.clone(),
        alpha: params.alpha.clone(),
        baseline: params.baseline(model)?,
        re: params.random_effects(model)?,
    })
}

impl ClusterTerms {
    fn build(r: &Resolved, data: &ClusteredDataset, i: usize) -> Self {
        let range = data.cluster_range(i);
        let mut a = 0.0;
        let mut d = 0.0;
        let shared = r.structure == HazardStructure::MeghII;
        let kind = if shared {
            let mut ls0 = Vec::with_capacity(range.len());
            let mut w = Vec::with_capacity(range.len());
            let mut event = Vec::with_capacity(range.len());
            for j in range {
                let xb = dot(data.x(j), &r.beta);
                let xa = dot(data.x_time(j), &r.alpha);
                let ev = data.status()[j];
                if ev {
                    a += xb;
                    d += 1.0;
                }
                ls0.push(data.log_times()[j] + xa);
                w.push((xb - xa).exp());
                event.push(ev);
            }
            Terms::Shared {
                a,
                d,
                ls0,
                w,
                event,
                kernel: LogTimeKernel::new(&r.baseline),
            }
        } else {
            let mut b = 0.0;
            for j in range {
                let xb = dot(data.x(j), &r.beta);
                let xa = dot(data.x_time(j), &r.alpha);
                let e = r.baseline.eval_log_time(data.log_times()[j] + xa);
                if data.status()[j] {
                    a += e.log_hazard + xb;
                    d += 1.0;
                }
                b += e.cum_hazard * (xb - xa).exp();
            }
            Terms::Separable { a, d, b }
        };
        ClusterTerms {
            index: i,
            random: r.structure.has_random_effects(),
            kind,
        }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    /// `l_i(u)`; `u` is ignored without random effects.
    pub fn loglik(&self, u: f64) -> f64 {
        let u = if self.random { u } else { 0.0 };
        match &self.kind {
            Terms::Separable { a, d, b } => a + d * u - b * u.exp(),
            Terms::Shared {
                a,
                d,
                ls0,
                w,
                event,
                kernel,
            } => {
                let mut ll = a + d * u;
                for k in 0..ls0.len() {
                    let e = kernel.eval(ls0[k] + u);
                    if event[k] {
                        ll += e.log_hazard;
                    }
                    ll -= e.cum_hazard * w[k];
                }
                ll
            }
        }
    }

    /// `(l_i'(u), l_i''(u))`.
    fn dloglik(&self, u: f64) -> (f64, f64) {
        match &self.kind {
            Terms::Separable { d, b, .. } => {
                let e = b * u.exp();
                (d - e, -e)
            }
            Terms::Shared {
                d,
                ls0,
                w,
                event,
                kernel,
                ..
            } => {
                let (mut g1, mut g2) = (*d, 0.0);
                for k in 0..ls0.len() {
                    let e = kernel.eval_curv(ls0[k] + u);
                    if event[k] {
                        g1 += e.d1_log_hazard;
                        g2 += e.d2_log_hazard;
                    }
                    g1 -= e.d1_cum * w[k];
                    g2 -= e.d2_cum * w[k];
                }
                (g1, g2)
            }
        }
    }

    fn events(&self) -> f64 {
        match &self.kind {
            Terms::Separable { d, .. } | Terms::Shared { d, .. } => *d,
        }
    }

    /// `max_u l_i(u)`.
    pub fn log_k(&self) -> f64 {
        if !self.random {
            return self.loglik(0.0);
        }
        match &self.kind {
            Terms::Separable { a, d, b } => {
                if *d > 0.0 && *b > 0.0 {
                    let u = (d / b).ln();
                    a + d * u - d
                } else {
                    *a
                }
            }
            Terms::Shared { a, .. } => {
                if self.events() == 0.0 {
                    return *a;
                }
                match stationary_point(|u| self.dloglik(u), -5.0, 5.0) {
                    Some(u) => self.loglik(u),
                    None => f64::NAN,
                }
            }
        }
    }

    fn center(&self, g: &RandomEffectsDist) -> Option<(f64, f64)> {
        let sd = g.sd();
        let m = g.mode();
        let dphi = |u: f64| {
            let (l1, l2) = self.dloglik(u);
            let (g1, g2) = g.dlog_density_du(u);
            (l1 + g1, l2 + g2)
        };
        let c = stationary_point(dphi, m - 10.0 * sd, m + 10.0 * sd)?;
        let curv = dphi(c).1;
        let scale = if curv < 0.0 && curv.is_finite() {
            (1.0 / (-curv).sqrt()).min(10.0 * sd)
        } else {
            sd
        };
        Some((c, scale))
    }

    fn numeric(&self, message: impl Into<String>, params: &[f64]) -> MeghError {
        MeghError::Numeric {
            cluster: self.index,
            message: message.into(),
            params: params.to_vec(),
        }
    }

    /// Scaled marginal likelihood with its quadrature rule.
    fn marginal_rule(
        &self,
        g: &RandomEffectsDist,
        opts: &QuadratureOptions,
        params: &[f64],
    ) -> Result<(f64, f64, RealLineRule)> {
        let (c, s) = self
            .center(g)
            .ok_or_else(|| self.numeric("could not locate the mode of the integrand", params))?;
        let phi_c = self.loglik(c) + g.log_density(c);
        if !phi_c.is_finite() {
            return Err(self.numeric("log-likelihood is not finite at the mode", params));
        }
        let rule = integrate_real_line(|u| (self.loglik(u) + g.log_density(u) - phi_c).exp(), c, s, opts);
        let v = rule.result.value;
        if !rule.result.converged || !(v > 0.0 && v.is_finite()) {
            return Err(self.numeric(
                format!(
                    "quadrature did not converge (value {v}, error {}, {} intervals)",
                    rule.result.abs_error,
                    rule.result.intervals.len()
                ),
                params,
            ));
        }
        Ok((phi_c + v.ln(), phi_c, rule))
    }

    pub fn marginal(
        &self,
        g: Option<&RandomEffectsDist>,
        opts: &QuadratureOptions,
        params: &[f64],
    ) -> Result<ClusterMarginal> {
        let g = match (self.random, g) {
            (true, Some(g)) => g,
            _ => {
                let ll = self.loglik(0.0);
                return Ok(ClusterMarginal {
                    log_m: ll,
                    log_k: ll,
                    mode: 0.0,
                    scale: 0.0,
                    evaluations: 0,
                });
            }
        };
        let (log_m, _, rule) = self.marginal_rule(g, opts, params)?;
        Ok(ClusterMarginal {
            log_m,
            log_k: self.log_k(),
            mode: rule.center,
            scale: rule.scale,
            evaluations: rule.result.evaluations,
        })
    }

    fn log_marginal_only(&self, g: Option<&RandomEffectsDist>, opts: &QuadratureOptions, params: &[f64]) -> Result<f64> {
        match (self.random, g) {
            (true, Some(g)) => Ok(self.marginal_rule(g, opts, params)?.0),
            _ => Ok(self.loglik(0.0)),
        }
    }
}

/// Locate a zero of a decreasing-through-zero derivative by bracket
/// expansion followed by Newton steps safeguarded with bisection.
fn stationary_point<F: Fn(f64) -> (f64, f64)>(df: F, lo0: f64, hi0: f64) -> Option<f64> {
    let (mut lo, mut hi) = (lo0, hi0);
    let mut width = (hi - lo).max(1.0);
    let mut ok = false;
    for _ in 0..60 {
        if df(lo).0 > 0.0 {
            ok = true;
            break;
        }
        hi = hi.min(lo);
        lo -= width;
        width *= 2.0;
    }
    if !ok {
        return None;
    }
    ok = false;
    width = (hi - lo).max(1.0);
    for _ in 0..60 {
        if df(hi).0 < 0.0 {
            ok = true;
            break;
        }
        lo = lo.max(hi);
        hi += width;
        width *= 2.0;
    }
    if !ok {
        return None;
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (f, fp) = df(x);
        if !f.is_finite() {
            return None;
        }
        if f == 0.0 {
            return Some(x);
        }
        if f > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let newton = if fp < 0.0 { x - f / fp } else { f64::NAN };
        let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (next - x).abs() <= 1e-12 * (1.0 + x.abs()) || hi - lo <= 1e-13 * (1.0 + x.abs()) {
            return Some(next);
        }
        x = next;
    }
    Some(x)
}

/// Per-cluster terms at fixed parameters.
pub fn cluster_terms(model: &ModelSpec, params: &ParameterVector, data: &ClusteredDataset) -> Result<Vec<ClusterTerms>> {
    let r = resolve(model, params, data)?;
    Ok((0..data.n_clusters()).map(|i| ClusterTerms::build(&r, data, i)).collect())
}

/// Scaled marginal likelihood of cluster `i`.
pub fn marginal_lik_cluster(
    i: usize,
    model: &ModelSpec,
    params: &ParameterVector,
    data: &ClusteredDataset,
    opts: &QuadratureOptions,
) -> Result<ClusterMarginal> {
    if i >= data.n_clusters() {
        return Err(MeghError::Contract(format!("cluster {i} out of range")));
    }
    let r = resolve(model, params, data)?;
    let terms = ClusterTerms::build(&r, data, i);
    terms.marginal(r.re.as_ref(), opts, &params.to_vec())
}

/// `log int exp(l_i) dG` integrated without rescaling; `-inf` on underflow.
pub fn marginal_lik_cluster_unscaled(
    i: usize,
    model: &ModelSpec,
    params: &ParameterVector,
    data: &ClusteredDataset,
    opts: &QuadratureOptions,
) -> Result<f64> {
    let r = resolve(model, params, data)?;
    let terms = ClusterTerms::build(&r, data, i);
    let g = match (&r.re, terms.random) {
        (Some(g), true) => g,
        _ => return Ok(terms.loglik(0.0)),
    };
    let (c, s) = terms
        .center(g)
        .ok_or_else(|| terms.numeric("could not locate the mode of the integrand", &params.to_vec()))?;
    let rule = integrate_real_line(|u| (terms.loglik(u) + g.log_density(u)).exp(), c, s, opts);
    Ok(rule.result.value.ln())
}

/// `log m(eta) = sum_i log m_i(eta)`.
pub fn log_marginal(
    model: &ModelSpec,
    params: &ParameterVector,
    data: &ClusteredDataset,
    opts: &EvalOptions,
) -> Result<f64> {
    let r = resolve(model, params, data)?;
    let flat = params.to_vec();
    let parts = par::map_indexed(data.n_clusters(), opts.execution, |i| {
        ClusterTerms::build(&r, data, i).log_marginal_only(r.re.as_ref(), &opts.quadrature, &flat)
    });
    let mut total = 0.0;
    for p in parts {
        total += p?;
    }
    Ok(total)
}

/// Per-cluster `log m_i`.
pub fn log_marginal_clusters(
    model: &ModelSpec,
    params: &ParameterVector,
    data: &ClusteredDataset,
    opts: &EvalOptions,
) -> Result<Vec<f64>> {
    let r = resolve(model, params, data)?;
    let flat = params.to_vec();
    par::map_indexed(data.n_clusters(), opts.execution, |i| {
        ClusterTerms::build(&r, data, i).log_marginal_only(r.re.as_ref(), &opts.quadrature, &flat)
    })
    .into_iter()
    .collect()
}

/// Gradient blocks of the cluster log-likelihood that do not depend on `u`
/// (separable case): `l = a + d u - b e^u`.
fn separable_grads(r: &Resolved, data: &ClusteredDataset, i: usize, dim_eta: usize) -> (Vec<f64>, Vec<f64>) {
    let p = data.p();
    let pt = data.p_time();
    let nt = r.baseline.family().n_params();
    let mut ga = vec![0.0; dim_eta];
    let mut gb = vec![0.0; dim_eta];
    for j in data.cluster_range(i) {
        let x = data.x(j);
        let xt = data.x_time(j);
        let xb = dot(x, &r.beta);
        let xa = dot(xt, &r.alpha);
        let e = r.baseline.eval_log_time_grad(data.log_times()[j] + xa);
        let w = (xb - xa).exp();
        let hj = e.cum_hazard * w;
        let ev = data.status()[j];
        for k in 0..p {
            if ev {
                ga[k] += x[k];
            }
            gb[k] += hj * x[k];
        }
        for k in 0..pt {
            if ev {
                ga[p + k] += e.dlog_hazard_dls * xt[k];
            }
            gb[p + k] += w * (e.dcum_dls - e.cum_hazard) * xt[k];
        }
        for k in 0..nt {
            if ev {
                ga[p + pt + k] += e.dlog_hazard_dtheta[k];
            }
            gb[p + pt + k] += w * e.dcum_dtheta[k];
        }
    }
    (ga, gb)
}

/// Per-subject quantities of cluster `i` reused at every node of the
/// shared-structure gradient.
struct SharedSubjects {
    ls0: Vec<f64>,
    w: Vec<f64>,
    event: Vec<bool>,
    rows: Vec<usize>,
    kernel: LogTimeKernel,
}

impl SharedSubjects {
    fn new(r: &Resolved, data: &ClusteredDataset, i: usize) -> Self {
        let range = data.cluster_range(i);
        let mut out = SharedSubjects {
            ls0: Vec::with_capacity(range.len()),
            w: Vec::with_capacity(range.len()),
            event: Vec::with_capacity(range.len()),
            rows: Vec::with_capacity(range.len()),
            kernel: LogTimeKernel::new(&r.baseline),
        };
        for j in range {
            let xb = dot(data.x(j), &r.beta);
            let xa = dot(data.x_time(j), &r.alpha);
            out.ls0.push(data.log_times()[j] + xa);
            out.w.push((xb - xa).exp());
            out.event.push(data.status()[j]);
            out.rows.push(j);
        }
        out
    }
}

/// `d l_i / d eta` at `u` for the shared structure, accumulated into `out` with weight `wt`.
fn shared_grad_at(r: &Resolved, data: &ClusteredDataset, s: &SharedSubjects, u: f64, wt: f64, out: &mut [f64]) {
    let p = data.p();
    let pt = data.p_time();
    let nt = r.baseline.family().n_params();
    for (k, &j) in s.rows.iter().enumerate() {
        let x = data.x(j);
        let xt = data.x_time(j);
        let e = s.kernel.eval_grad(s.ls0[k] + u);
        let w = s.w[k];
        let dj = if s.event[k] { 1.0 } else { 0.0 };
        let hj = e.cum_hazard * w;
        for m in 0..p {
            out[m] += wt * x[m] * (dj - hj);
        }
        let sa = dj * e.dlog_hazard_dls - w * (e.dcum_dls - e.cum_hazard);
        for m in 0..pt {
            out[p + m] += wt * xt[m] * sa;
        }
        for m in 0..nt {
            out[p + pt + m] += wt * (dj * e.dlog_hazard_dtheta[m] - w * e.dcum_dtheta[m]);
        }
    }
}

const NEGLIGIBLE_WEIGHT: f64 = 1e-17;

fn cluster_value_grad(
    r: &Resolved,
    data: &ClusteredDataset,
    i: usize,
    n_xi: usize,
    opts: &QuadratureOptions,
    flat: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let dim_eta = data.p() + data.p_time() + r.baseline.family().n_params();
    let terms = ClusterTerms::build(r, data, i);
    let mut grad = vec![0.0; dim_eta + n_xi];
    let g = match (&r.re, terms.random) {
        (Some(g), true) => g,
        _ => {
            let (ga, gb) = separable_grads(r, data, i, dim_eta);
            for k in 0..dim_eta {
                grad[k] = ga[k] - gb[k];
            }
            return Ok((terms.loglik(0.0), grad));
        }
    };
    let (log_m, _, rule) = terms.marginal_rule(g, opts, flat)?;
    let nodes = rule.posterior_nodes();
    let mut xi_acc = [0.0; 2];
    match &terms.kind {
        Terms::Separable { .. } => {
            let mut e_exp_u = 0.0;
            for &(u, pw) in &nodes {
                if pw == 0.0 || !pw.is_finite() {
                    continue;
                }
                e_exp_u += pw * u.exp();
                let dx = g.dlog_density_dxi(u);
                xi_acc[0] += pw * dx[0];
                xi_acc[1] += pw * dx[1];
            }
            let (ga, gb) = separable_grads(r, data, i, dim_eta);
            for k in 0..dim_eta {
                grad[k] = ga[k] - e_exp_u * gb[k];
            }
        }
        Terms::Shared { .. } => {
            let subjects = SharedSubjects::new(r, data, i);
            for &(u, pw) in &nodes {
                // nodes this far out in the tails cannot move the gradient
                if pw < NEGLIGIBLE_WEIGHT || !pw.is_finite() {
                    continue;
                }
                shared_grad_at(r, data, &subjects, u, pw, &mut grad[..dim_eta]);
                let dx = g.dlog_density_dxi(u);
                xi_acc[0] += pw * dx[0];
                xi_acc[1] += pw * dx[1];
            }
        }
    }
    grad[dim_eta..(n_xi + dim_eta)].copy_from_slice(&xi_acc[..n_xi]);
    Ok((log_m, grad))
}

/// `log m(eta)` and its gradient with respect to the natural parameters,
/// in [`ParameterVector::to_vec`] order.
pub fn log_marginal_grad(
    model: &ModelSpec,
    params: &ParameterVector,
    data: &ClusteredDataset,
    opts: &EvalOptions,
) -> Result<(f64, Vec<f64>)> {
    let r = resolve(model, params, data)?;
    let flat = params.to_vec();
    let n_xi = model.n_xi();
    let parts = par::map_indexed(data.n_clusters(), opts.execution, |i| {
        cluster_value_grad(&r, data, i, n_xi, &opts.quadrature, &flat)
    });
    let mut total = 0.0;
    let mut grad = vec![0.0; flat.len()];
    for part in parts {
        let (v, g) = part?;
        total += v;
        check_len("cluster gradient", g.len(), grad.len())?;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((total, grad))
}
