use std::path::Path;

use megh::data::ColumnTransform;
use megh::{ClusteredDataset, FitResult, MeghError};
use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config: Value,
    pub seed: Option<u64>,
    pub version: String,
    pub wall_time_s: f64,
    pub outputs: Vec<String>,
    pub checks: Value,
}

#[derive(Debug, Serialize)]
pub struct ParamRow {
    pub name: String,
    pub estimate: f64,
    pub se: Option<f64>,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    pub fixed: bool,
}

/// Fit summary as written to `fit.json`.
#[derive(Debug, Serialize)]
pub struct FitReport {
    pub model: String,
    pub n: usize,
    pub n_clusters: usize,
    pub censoring_rate: f64,
    pub converged: bool,
    pub log_lik: f64,
    pub aic: f64,
    pub n_params: usize,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub hessian_asymmetry: Option<f64>,
    pub parameters: Vec<ParamRow>,
    /// Covariate standardisation applied on load.
    pub standardization: Vec<ColumnTransform>,
}

impl FitReport {
    pub fn new(f: &FitResult, data: &ClusteredDataset) -> Self {
        let ci = f.confidence_intervals(0.95);
        let parameters = f
            .names
            .iter()
            .zip(f.estimates())
            .enumerate()
            .map(|(k, (name, estimate))| ParamRow {
                name: name.clone(),
                estimate,
                se: f.standard_errors[k],
                ci_lower: ci[k].map(|c| c.0),
                ci_upper: ci[k].map(|c| c.1),
                fixed: f.fixed[k],
            })
            .collect();
        FitReport {
            model: f.model.label(),
            n: data.n(),
            n_clusters: data.n_clusters(),
            censoring_rate: data.censoring_rate(),
            converged: f.converged,
            log_lik: f.log_lik,
            aic: f.aic,
            n_params: f.n_params,
            iterations: f.iterations,
            gradient_norm: f.gradient_norm,
            hessian_asymmetry: f.hessian_asymmetry,
            parameters,
            standardization: data.transforms().to_vec(),
        }
    }

    /// `name, estimate, se, ci_lower, ci_upper`; missing values left empty.
    pub fn write_csv(&self, path: &Path) -> Result<(), MeghError> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut text = String::from("name,estimate,se,ci_lower,ci_upper\n");
        for p in &self.parameters {
            text.push_str(&format!(
                "{},{},{},{},{}\n",
                p.name,
                p.estimate,
                opt(p.se),
                opt(p.ci_lower),
                opt(p.ci_upper)
            ));
        }
        std::fs::write(path, text)?;
        Ok(())
    }
}
