//! Conditional hazards of the mixed-effects general hazard structure
//!
//! `h(t | x, u, u~) = h0(t exp{x~'alpha + u~}) exp{x'beta + u}`
//!
//! with closed-form cumulative hazard
//!
//! `H(t | x, u, u~) = H0(t exp{x~'alpha + u~}) exp{x'beta - x~'alpha + u - u~}`.

use serde::{Deserialize, Serialize};

use crate::baseline::BaselineHazard;
use crate::error::{check_len, domain, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HazardStructure {
    /// No random effects.
    #[serde(rename = "gh")]
    Gh,
    /// Random effect on the hazard scale only.
    #[serde(rename = "megh1")]
    MeghI,
    /// The same random effect on the hazard and time scales.
    #[serde(rename = "megh2")]
    MeghII,
}

impl HazardStructure {
    pub fn has_random_effects(self) -> bool {
        !matches!(self, HazardStructure::Gh)
    }

    pub fn label(self) -> &'static str {
        match self {
            HazardStructure::Gh => "gh",
            HazardStructure::MeghI => "megh1",
            HazardStructure::MeghII => "megh2",
        }
    }
}

impl std::str::FromStr for HazardStructure {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gh" => Ok(HazardStructure::Gh),
            "megh1" | "megh-i" | "i" => Ok(HazardStructure::MeghI),
            "megh2" | "megh-ii" | "ii" => Ok(HazardStructure::MeghII),
            other => Err(format!("unknown hazard structure `{other}`")),
        }
    }
}

impl std::fmt::Display for HazardStructure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RegressionCoefficients {
    /// Hazard-scale effects.
    pub beta: Vec<f64>,
    /// Time-scale effects.
    pub alpha: Vec<f64>,
}

/// Map a scalar random effect to its `(hazard, time)` scale contributions.
pub fn structure_effects(kind: HazardStructure, u_raw: f64) -> (f64, f64) {
    match kind {
        HazardStructure::Gh => (0.0, 0.0),
        HazardStructure::MeghI => (u_raw, 0.0),
        HazardStructure::MeghII => (u_raw, u_raw),
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_dims(x: &[f64], x_time: &[f64], coef: &RegressionCoefficients) -> Result<()> {
    check_len("hazard-scale covariates", x.len(), coef.beta.len())?;
    check_len("time-scale covariates", x_time.len(), coef.alpha.len())
}

/// `log h(t | x, u, u~)`.
pub fn cond_log_hazard(
    t: f64,
    x: &[f64],
    x_time: &[f64],
    u: f64,
    u_time: f64,
    coef: &RegressionCoefficients,
    baseline: &BaselineHazard,
) -> Result<f64> {
    check_dims(x, x_time, coef)?;
    if !(t > 0.0 && t.is_finite()) {
        return Err(domain(format!("time must be positive and finite, got {t}")));
    }
    baseline.validate()?;
    let ls = t.ln() + dot(x_time, &coef.alpha) + u_time;
    Ok(baseline.eval_log_time(ls).log_hazard + dot(x, &coef.beta) + u)
}

/// `H(t | x, u, u~)`; zero at `t = 0`.
pub fn cond_cum_hazard(
    t: f64,
    x: &[f64],
    x_time: &[f64],
    u: f64,
    u_time: f64,
    coef: &RegressionCoefficients,
    baseline: &BaselineHazard,
) -> Result<f64> {
    check_dims(x, x_time, coef)?;
    baseline.validate()?;
    if t == 0.0 {
        return Ok(0.0);
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(domain(format!("time must be nonnegative and finite, got {t}")));
    }
    let xa = dot(x_time, &coef.alpha);
    let ls = t.ln() + xa + u_time;
    let scale = (dot(x, &coef.beta) - xa + u - u_time).exp();
    Ok(baseline.eval_log_time(ls).cum_hazard * scale)
}

/// `S(t | x, u, u~) = exp(-H)`.
pub fn cond_survival(
    t: f64,
    x: &[f64],
    x_time: &[f64],
    u: f64,
    u_time: f64,
    coef: &RegressionCoefficients,
    baseline: &BaselineHazard,
) -> Result<f64> {
    Ok((-cond_cum_hazard(t, x, x_time, u, u_time, coef, baseline)?).exp())
}
