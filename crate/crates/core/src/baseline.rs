//! Parametric baseline hazards.
//!
//! Two families are supported:
//!
//! * power generalised Weibull, `H0(t) = (1 + (t/eta)^nu)^(1/delta) - 1`;
//! * log-logistic with log-location `mu` and scale `tau`,
//!   `H0(t) = log(1 + (t e^-mu)^(1/tau))`.
//!
//! The likelihood code works with the log of the (rescaled) time, so each
//! family also exposes [`BaselineHazard::eval_log_time`] and a variant that
//! returns derivatives with respect to `log t` and the natural parameters.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineFamily {
    Pgw,
    #[serde(alias = "ll")]
    LogLogistic,
}

impl BaselineFamily {
    pub fn n_params(self) -> usize {
        match self {
            BaselineFamily::Pgw => 3,
            BaselineFamily::LogLogistic => 2,
        }
    }

    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            BaselineFamily::Pgw => &["eta", "nu", "delta"],
            BaselineFamily::LogLogistic => &["mu", "tau"],
        }
    }

    /// Whether the `k`-th natural parameter must be strictly positive.
    pub fn is_positive(self, k: usize) -> bool {
        match self {
            BaselineFamily::Pgw => true,
            BaselineFamily::LogLogistic => k == 1,
        }
    }
}

impl std::str::FromStr for BaselineFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pgw" => Ok(BaselineFamily::Pgw),
            "loglogistic" | "ll" | "log-logistic" => Ok(BaselineFamily::LogLogistic),
            other => Err(format!("unknown baseline family `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum BaselineHazard {
    Pgw { eta: f64, nu: f64, delta: f64 },
    #[serde(alias = "ll")]
    LogLogistic { mu: f64, tau: f64 },
}

/// `log h0` and `H0` at a log-time.
#[derive(Debug, Clone, Copy)]
pub struct LogTimeEval {
    pub log_hazard: f64,
    pub cum_hazard: f64,
}

/// [`LogTimeEval`] plus first derivatives. Parameter derivatives are with
/// respect to the natural parameters in [`BaselineHazard::theta`] order;
/// unused trailing slots are zero.
#[derive(Debug, Clone, Copy)]
pub struct LogTimeGrad {
    pub log_hazard: f64,
    pub cum_hazard: f64,
    pub dlog_hazard_dls: f64,
    pub dcum_dls: f64,
    pub dlog_hazard_dtheta: [f64; 3],
    pub dcum_dtheta: [f64; 3],
}

/// `log(1 + e^z)` without overflow.
#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// `e^z / (1 + e^z)`.
#[inline]
fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl BaselineHazard {
    pub fn pgw(eta: f64, nu: f64, delta: f64) -> Result<Self> {
        let b = BaselineHazard::Pgw { eta, nu, delta };
        b.validate()?;
        Ok(b)
    }

    pub fn log_logistic(mu: f64, tau: f64) -> Result<Self> {
        let b = BaselineHazard::LogLogistic { mu, tau };
        b.validate()?;
        Ok(b)
    }

    pub fn from_theta(family: BaselineFamily, theta: &[f64]) -> Result<Self> {
        crate::error::check_len("theta", theta.len(), family.n_params())?;
        match family {
            BaselineFamily::Pgw => Self::pgw(theta[0], theta[1], theta[2]),
            BaselineFamily::LogLogistic => Self::log_logistic(theta[0], theta[1]),
        }
    }

    /// Like [`from_theta`](Self::from_theta) but without validation. Used on
    /// the optimiser's hot path where positivity holds by construction.
    pub fn family(&self) -> BaselineFamily {
        match self {
            BaselineHazard::Pgw { .. } => BaselineFamily::Pgw,
            BaselineHazard::LogLogistic { .. } => BaselineFamily::LogLogistic,
        }
    }

    pub fn theta(&self) -> Vec<f64> {
        match *self {
            BaselineHazard::Pgw { eta, nu, delta } => vec![eta, nu, delta],
            BaselineHazard::LogLogistic { mu, tau } => vec![mu, tau],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            BaselineHazard::Pgw { eta, nu, delta } => [eta, nu, delta]
                .iter()
                .all(|v| v.is_finite() && *v > 0.0),
            BaselineHazard::LogLogistic { mu, tau } => mu.is_finite() && tau.is_finite() && tau > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(domain(format!("invalid baseline parameters {self:?}")))
        }
    }

    /// True when the baseline is a Weibull hazard (PGW with `delta = 1`).
    /// Such baselines make the general hazard structure non-identifiable
    /// once time-scale covariates are present.
    pub fn is_weibull(&self) -> bool {
        matches!(*self, BaselineHazard::Pgw { delta, .. } if (delta - 1.0).abs() < 1e-12)
    }

    fn check_time(t: f64) -> Result<()> {
        if t.is_finite() && t > 0.0 {
            Ok(())
        } else {
            Err(domain(format!("time must be positive and finite, got {t}")))
        }
    }

    pub fn hazard(&self, t: f64) -> Result<f64> {
        Ok(self.log_hazard(t)?.exp())
    }

    pub fn log_hazard(&self, t: f64) -> Result<f64> {
        Self::check_time(t)?;
        self.validate()?;
        Ok(self.eval_log_time(t.ln()).log_hazard)
    }

    pub fn cum_hazard(&self, t: f64) -> Result<f64> {
        if t == 0.0 {
            self.validate()?;
            return Ok(0.0);
        }
        Self::check_time(t)?;
        self.validate()?;
        Ok(self.eval_log_time(t.ln()).cum_hazard)
    }

    pub fn survival(&self, t: f64) -> Result<f64> {
        Ok((-self.cum_hazard(t)?).exp())
    }

    /// Inverse cumulative hazard, `H0(H0_inv(s)) = s`.
    pub fn inv_cum_hazard(&self, s: f64) -> Result<f64> {
        if !(s >= 0.0) {
            return Err(domain(format!("cumulative hazard must be nonnegative, got {s}")));
        }
        self.validate()?;
        if s == 0.0 {
            return Ok(0.0);
        }
        if s.is_infinite() {
            return Ok(f64::INFINITY);
        }
        Ok(match *self {
            BaselineHazard::Pgw { eta, nu, delta } => {
                let inner = (delta * s.ln_1p()).exp_m1();
                eta * (inner.ln() / nu).exp()
            }
            BaselineHazard::LogLogistic { mu, tau } => (mu + tau * s.exp_m1().ln()).exp(),
        })
    }

    /// `log h0(e^ls)` and `H0(e^ls)`.
    #[inline]
    pub fn eval_log_time(&self, ls: f64) -> LogTimeEval {
        match *self {
            BaselineHazard::Pgw { eta, nu, delta } => {
                let z = nu * (ls - eta.ln());
                let l = softplus(z);
                let inv_d = 1.0 / delta;
                LogTimeEval {
                    log_hazard: nu.ln() - delta.ln() + (nu - 1.0) * ls - nu * eta.ln()
                        + (inv_d - 1.0) * l,
                    cum_hazard: (l * inv_d).exp_m1(),
                }
            }
            BaselineHazard::LogLogistic { mu, tau } => {
                let z = (ls - mu) / tau;
                let l = softplus(z);
                LogTimeEval {
                    log_hazard: (z - l) - tau.ln() - ls,
                    cum_hazard: l,
                }
            }
        }
    }

    #[inline]
    pub fn eval_log_time_grad(&self, ls: f64) -> LogTimeGrad {
        match *self {
            BaselineHazard::Pgw { eta, nu, delta } => {
                let log_eta = eta.ln();
                let z = nu * (ls - log_eta);
                let l = softplus(z);
                let q = logistic(z);
                let inv_d = 1.0 / delta;
                let e = (l * inv_d).exp();
                let k = inv_d - 1.0;
                // derivatives of z
                let dz_dls = nu;
                let dz_deta = -nu / eta;
                let dz_dnu = ls - log_eta;
                let dcum_dz = e * inv_d * q;
                LogTimeGrad {
                    log_hazard: nu.ln() - delta.ln() + (nu - 1.0) * ls - nu * log_eta + k * l,
                    cum_hazard: e - 1.0,
                    dlog_hazard_dls: (nu - 1.0) + k * q * dz_dls,
                    dcum_dls: dcum_dz * dz_dls,
                    dlog_hazard_dtheta: [
                        -nu / eta + k * q * dz_deta,
                        1.0 / nu + dz_dnu + k * q * dz_dnu,
                        -inv_d - l * inv_d * inv_d,
                    ],
                    dcum_dtheta: [dcum_dz * dz_deta, dcum_dz * dz_dnu, -e * l * inv_d * inv_d],
                }
            }
            BaselineHazard::LogLogistic { mu, tau } => {
                let z = (ls - mu) / tau;
                let l = softplus(z);
                let q = logistic(z);
                let inv_t = 1.0 / tau;
                LogTimeGrad {
                    log_hazard: (z - l) - tau.ln() - ls,
                    cum_hazard: l,
                    dlog_hazard_dls: (1.0 - q) * inv_t - 1.0,
                    dcum_dls: q * inv_t,
                    dlog_hazard_dtheta: [-(1.0 - q) * inv_t, -(1.0 - q) * z * inv_t - inv_t, 0.0],
                    dcum_dtheta: [-q * inv_t, -q * z * inv_t, 0.0],
                }
            }
        }
    }
}

/// Log-time evaluation with the parameter-only constants hoisted out, for
/// loops that evaluate one baseline at many points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogTimeKernel {
    pgw: bool,
    /// `log nu - log delta - nu log eta` or `-log tau`.
    c0: f64,
    /// `nu` or `1 / tau`.
    slope: f64,
    /// `log eta` or `mu`.
    shift: f64,
    /// `1 / delta`; unused for the log-logistic.
    inv_d: f64,
    base: BaselineHazard,
}

/// Values and first two `ls` derivatives of `log h0` and `H0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogTimeCurv {
    pub log_hazard: f64,
    pub cum_hazard: f64,
    pub d1_log_hazard: f64,
    pub d1_cum: f64,
    pub d2_log_hazard: f64,
    pub d2_cum: f64,
}

impl LogTimeKernel {
    pub fn new(b: &BaselineHazard) -> Self {
        match *b {
            BaselineHazard::Pgw { eta, nu, delta } => LogTimeKernel {
                pgw: true,
                c0: nu.ln() - delta.ln() - nu * eta.ln(),
                slope: nu,
                shift: eta.ln(),
                inv_d: 1.0 / delta,
                base: *b,
            },
            BaselineHazard::LogLogistic { mu, tau } => LogTimeKernel {
                pgw: false,
                c0: -tau.ln(),
                slope: 1.0 / tau,
                shift: mu,
                inv_d: 1.0,
                base: *b,
            },
        }
    }

    #[inline]
    pub fn eval(&self, ls: f64) -> LogTimeEval {
        let z = self.slope * (ls - self.shift);
        let l = softplus(z);
        if self.pgw {
            LogTimeEval {
                log_hazard: self.c0 + (self.slope - 1.0) * ls + (self.inv_d - 1.0) * l,
                cum_hazard: (l * self.inv_d).exp_m1(),
            }
        } else {
            LogTimeEval {
                log_hazard: (z - l) + self.c0 - ls,
                cum_hazard: l,
            }
        }
    }

    /// Same result as [`BaselineHazard::eval_log_time_grad`].
    #[inline]
    pub fn eval_grad(&self, ls: f64) -> LogTimeGrad {
        let z = self.slope * (ls - self.shift);
        let l = softplus(z);
        let q = logistic(z);
        match self.base {
            BaselineHazard::Pgw { eta, nu, .. } => {
                let inv_d = self.inv_d;
                let e = (l * inv_d).exp();
                let k = inv_d - 1.0;
                let dz_deta = -nu / eta;
                let dz_dnu = ls - self.shift;
                let dcum_dz = e * inv_d * q;
                LogTimeGrad {
                    log_hazard: self.c0 + (nu - 1.0) * ls + k * l,
                    cum_hazard: e - 1.0,
                    dlog_hazard_dls: (nu - 1.0) + k * q * nu,
                    dcum_dls: dcum_dz * nu,
                    dlog_hazard_dtheta: [
                        -nu / eta + k * q * dz_deta,
                        1.0 / nu + dz_dnu + k * q * dz_dnu,
                        -inv_d - l * inv_d * inv_d,
                    ],
                    dcum_dtheta: [dcum_dz * dz_deta, dcum_dz * dz_dnu, -e * l * inv_d * inv_d],
                }
            }
            BaselineHazard::LogLogistic { .. } => {
                let inv_t = self.slope;
                LogTimeGrad {
                    log_hazard: (z - l) + self.c0 - ls,
                    cum_hazard: l,
                    dlog_hazard_dls: (1.0 - q) * inv_t - 1.0,
                    dcum_dls: q * inv_t,
                    dlog_hazard_dtheta: [-(1.0 - q) * inv_t, -(1.0 - q) * z * inv_t - inv_t, 0.0],
                    dcum_dtheta: [-q * inv_t, -q * z * inv_t, 0.0],
                }
            }
        }
    }

    #[inline]
    pub fn eval_curv(&self, ls: f64) -> LogTimeCurv {
        let z = self.slope * (ls - self.shift);
        let l = softplus(z);
        let q = logistic(z);
        let dq = q * (1.0 - q);
        let s = self.slope;
        if self.pgw {
            let k = self.inv_d - 1.0;
            let e = (l * self.inv_d).exp();
            LogTimeCurv {
                log_hazard: self.c0 + (s - 1.0) * ls + k * l,
                cum_hazard: e - 1.0,
                d1_log_hazard: (s - 1.0) + k * s * q,
                d1_cum: e * s * q * self.inv_d,
                d2_log_hazard: k * s * s * dq,
                d2_cum: e * s * s * self.inv_d * (q * q * self.inv_d + dq),
            }
        } else {
            LogTimeCurv {
                log_hazard: (z - l) + self.c0 - ls,
                cum_hazard: l,
                d1_log_hazard: (1.0 - q) * s - 1.0,
                d1_cum: q * s,
                d2_log_hazard: -dq * s * s,
                d2_cum: dq * s * s,
            }
        }
    }
}
