//! Model specification and the packed parameter vector `eta = (beta, alpha, theta, xi)`.

use serde::{Deserialize, Serialize};

use crate::baseline::{BaselineFamily, BaselineHazard};
use crate::data::ClusteredDataset;
use crate::error::{check_len, Result, ValidationError};
use crate::hazard::{HazardStructure, RegressionCoefficients};
use crate::reffects::{RandomEffectsDist, ReFamily, DEFAULT_T_DF};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub structure: HazardStructure,
    pub baseline: BaselineFamily,
    pub random_effects: ReFamily,
    /// Degrees of freedom of the Student-t random effects (held fixed).
    #[serde(default = "default_df")]
    pub t_df: f64,
}

fn default_df() -> f64 {
    DEFAULT_T_DF
}

impl ModelSpec {
    pub fn new(structure: HazardStructure, baseline: BaselineFamily, random_effects: ReFamily) -> Self {
        ModelSpec {
            structure,
            baseline,
            random_effects,
            t_df: DEFAULT_T_DF,
        }
    }

    /// The model without random effects.
    pub fn reduced(&self) -> Self {
        ModelSpec {
            structure: HazardStructure::Gh,
            ..*self
        }
    }

    pub fn n_xi(&self) -> usize {
        if self.structure.has_random_effects() {
            self.random_effects.n_params()
        } else {
            0
        }
    }

    pub fn dim(&self, p: usize, p_time: usize) -> usize {
        p + p_time + self.baseline.n_params() + self.n_xi()
    }

    pub fn label(&self) -> String {
        if self.structure.has_random_effects() {
            format!("{}-{}-{}", self.structure, baseline_label(self.baseline), self.random_effects.label())
        } else {
            format!("{}-{}", self.structure, baseline_label(self.baseline))
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.structure.has_random_effects()
            && self.random_effects == ReFamily::StudentT
            && !(self.t_df > 2.0 && self.t_df.is_finite())
        {
            return Err(ValidationError::Model(format!(
                "Student-t degrees of freedom must exceed 2, got {}",
                self.t_df
            ))
            .into());
        }
        Ok(())
    }

    /// Unconstrained transform of each coordinate of the flat parameter vector.
    pub fn transforms(&self, p: usize, p_time: usize) -> Vec<Transform> {
        let mut t = vec![Transform::Identity; p + p_time];
        for k in 0..self.baseline.n_params() {
            t.push(if self.baseline.is_positive(k) {
                Transform::Log
            } else {
                Transform::Identity
            });
        }
        if self.structure.has_random_effects() {
            t.push(Transform::Log);
            if self.random_effects == ReFamily::TwoPieceNormal {
                t.push(Transform::Atanh);
            }
        }
        t
    }

    /// Names of the flat parameters, e.g. `beta[age]`, `eta`, `sigma_u`.
    pub fn param_names(&self, data: &ClusteredDataset) -> Vec<String> {
        let mut names: Vec<String> = data.covariate_names().iter().map(|c| format!("beta[{c}]")).collect();
        names.extend(data.time_scale_names().iter().map(|c| format!("alpha[{c}]")));
        names.extend(self.baseline.param_names().iter().map(|s| s.to_string()));
        if self.structure.has_random_effects() {
            names.extend(self.random_effects.param_names().iter().map(|s| s.to_string()));
        }
        names
    }
}

fn baseline_label(b: BaselineFamily) -> &'static str {
    match b {
        BaselineFamily::Pgw => "pgw",
        BaselineFamily::LogLogistic => "loglogistic",
    }
}

/// Map from a natural parameter to the real line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Transform {
    Identity,
    Log,
    Atanh,
}

impl Transform {
    #[inline]
    pub fn forward(self, x: f64) -> f64 {
        match self {
            Transform::Identity => x,
            Transform::Log => x.ln(),
            Transform::Atanh => x.atanh(),
        }
    }

    #[inline]
    pub fn inverse(self, z: f64) -> f64 {
        match self {
            Transform::Identity => z,
            Transform::Log => z.exp(),
            Transform::Atanh => z.tanh(),
        }
    }

    /// `d natural / d unconstrained` at unconstrained value `z`.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Transform::Identity => 1.0,
            Transform::Log => z.exp(),
            Transform::Atanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParameterVector {
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub theta: Vec<f64>,
    pub xi: Vec<f64>,
}

impl ParameterVector {
    pub fn new(beta: Vec<f64>, alpha: Vec<f64>, theta: Vec<f64>, xi: Vec<f64>) -> Self {
        ParameterVector { beta, alpha, theta, xi }
    }

    pub fn dim(&self) -> usize {
        self.beta.len() + self.alpha.len() + self.theta.len() + self.xi.len()
    }

    /// Natural-scale flat vector in `(beta, alpha, theta, xi)` order.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend_from_slice(&self.beta);
        v.extend_from_slice(&self.alpha);
        v.extend_from_slice(&self.theta);
        v.extend_from_slice(&self.xi);
        v
    }

    pub fn from_vec(model: &ModelSpec, p: usize, p_time: usize, v: &[f64]) -> Result<Self> {
        check_len("parameter vector", v.len(), model.dim(p, p_time))?;
        let nt = model.baseline.n_params();
        Ok(ParameterVector {
            beta: v[..p].to_vec(),
            alpha: v[p..p + p_time].to_vec(),
            theta: v[p + p_time..p + p_time + nt].to_vec(),
            xi: v[p + p_time + nt..].to_vec(),
        })
    }

    /// Unconstrained image used by the optimiser.
    pub fn pack(&self, model: &ModelSpec) -> Vec<f64> {
        let tr = model.transforms(self.beta.len(), self.alpha.len());
        self.to_vec().iter().zip(&tr).map(|(&x, t)| t.forward(x)).collect()
    }

    pub fn unpack(model: &ModelSpec, p: usize, p_time: usize, z: &[f64]) -> Result<Self> {
        let tr = model.transforms(p, p_time);
        check_len("unconstrained vector", z.len(), tr.len())?;
        let v: Vec<f64> = z.iter().zip(&tr).map(|(&x, t)| t.inverse(x)).collect();
        Self::from_vec(model, p, p_time, &v)
    }

    /// Diagonal of `d natural / d unconstrained` at this point.
    pub fn jacobian_diag(&self, model: &ModelSpec) -> Vec<f64> {
        let tr = model.transforms(self.beta.len(), self.alpha.len());
        self.pack(model).iter().zip(&tr).map(|(&z, t)| t.derivative(z)).collect()
    }

    pub fn coefficients(&self) -> RegressionCoefficients {
        RegressionCoefficients {
            beta: self.beta.clone(),
            alpha: self.alpha.clone(),
        }
    }

    pub fn baseline(&self, model: &ModelSpec) -> Result<BaselineHazard> {
        BaselineHazard::from_theta(model.baseline, &self.theta)
    }

    /// `None` for the model without random effects.
    pub fn random_effects(&self, model: &ModelSpec) -> Result<Option<RandomEffectsDist>> {
        if model.structure.has_random_effects() {
            RandomEffectsDist::from_xi(model.random_effects, &self.xi, model.t_df).map(Some)
        } else {
            Ok(None)
        }
    }

    /// Check lengths against the model and data, and the parameter domains.
    pub fn validate(&self, model: &ModelSpec, p: usize, p_time: usize) -> Result<()> {
        check_len("beta", self.beta.len(), p)?;
        check_len("alpha", self.alpha.len(), p_time)?;
        check_len("theta", self.theta.len(), model.baseline.n_params())?;
        check_len("xi", self.xi.len(), model.n_xi())?;
        if let Some(k) = self.to_vec().iter().position(|v| !v.is_finite()) {
            return Err(crate::error::domain(format!("parameter {k} is not finite")));
        }
        self.baseline(model)?;
        self.random_effects(model)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(re: ReFamily) -> ModelSpec {
        ModelSpec::new(HazardStructure::MeghII, BaselineFamily::Pgw, re)
    }

    #[test]
    fn pack_unpack_round_trip() {
        let m = spec(ReFamily::TwoPieceNormal);
        let eta = ParameterVector::new(vec![1.0, -0.2], vec![0.96], vec![0.2, 1.5, 3.0], vec![0.7, -0.4]);
        let z = eta.pack(&m);
        assert_eq!(z.len(), 8);
        assert!((z[7] - (-0.4f64).atanh()).abs() < 1e-15);
        let back = ParameterVector::unpack(&m, 2, 1, &z).unwrap();
        for (a, b) in back.to_vec().iter().zip(eta.to_vec()) {
            assert!((a - b).abs() < 1e-14 * b.abs().max(1.0));
        }
    }

    #[test]
    fn dimension_counts_each_block() {
        let m = ModelSpec::new(HazardStructure::MeghI, BaselineFamily::Pgw, ReFamily::Normal);
        assert_eq!(m.dim(4, 1), 9);
        assert_eq!(m.reduced().dim(4, 1), 8);
        let ll = ModelSpec::new(HazardStructure::MeghI, BaselineFamily::LogLogistic, ReFamily::TwoPieceNormal);
        assert_eq!(ll.dim(0, 0), 4);
        assert_eq!(
            ll.transforms(1, 0),
            vec![Transform::Identity, Transform::Identity, Transform::Log, Transform::Log, Transform::Atanh]
        );
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let m = spec(ReFamily::TwoPieceNormal);
        let eta = ParameterVector::new(vec![0.3], vec![], vec![0.5, 2.0, 0.7], vec![1.3, 0.5]);
        let z = eta.pack(&m);
        let jac = eta.jacobian_diag(&m);
        for k in 0..z.len() {
            let h = 1e-6;
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[k] += h;
            zm[k] -= h;
            let fp = ParameterVector::unpack(&m, 1, 0, &zp).unwrap().to_vec()[k];
            let fm = ParameterVector::unpack(&m, 1, 0, &zm).unwrap().to_vec()[k];
            assert!(((fp - fm) / (2.0 * h) - jac[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn validation_checks_lengths_and_domains() {
        let m = spec(ReFamily::Normal);
        let ok = ParameterVector::new(vec![0.1], vec![0.2], vec![1.0, 1.0, 2.0], vec![0.5]);
        assert!(ok.validate(&m, 1, 1).is_ok());
        assert!(ok.validate(&m, 2, 1).is_err());
        let bad = ParameterVector::new(vec![0.1], vec![0.2], vec![1.0, -1.0, 2.0], vec![0.5]);
        assert!(bad.validate(&m, 1, 1).is_err());
        let mut t = spec(ReFamily::StudentT);
        t.t_df = 1.5;
        assert!(t.validate().is_err());
    }
}
