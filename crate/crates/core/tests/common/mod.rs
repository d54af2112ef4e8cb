#![allow(dead_code)]

use megh::simulation::{equal_cluster_sizes, simulate_times, SimConfig};
use megh::{BaselineFamily, ClusteredDataset, HazardStructure, ModelSpec, ParameterVector, ReFamily};

/// Leukaemia-style simulation scaled down to `n` subjects in `r` clusters.
pub fn small_config(structure: HazardStructure, sigma_u: f64, n: usize, r: usize, seed: u64) -> SimConfig {
    let mut cfg = SimConfig::leukaemia(structure, sigma_u);
    cfg.cluster_sizes = equal_cluster_sizes(n, r);
    cfg.pilot_size = 4000;
    cfg.seed = seed;
    cfg
}

pub fn small_data(structure: HazardStructure, sigma_u: f64, n: usize, r: usize, seed: u64) -> ClusteredDataset {
    simulate_times(&small_config(structure, sigma_u, n, r, seed)).unwrap().data
}

pub fn model(structure: HazardStructure, baseline: BaselineFamily, re: ReFamily) -> ModelSpec {
    ModelSpec::new(structure, baseline, re)
}

/// Every fittable combination of structure, baseline and random-effects family.
pub fn all_models() -> Vec<ModelSpec> {
    let mut out = Vec::new();
    for b in [BaselineFamily::Pgw, BaselineFamily::LogLogistic] {
        out.push(model(HazardStructure::Gh, b, ReFamily::Normal));
        for s in [HazardStructure::MeghI, HazardStructure::MeghII] {
            for re in [ReFamily::Normal, ReFamily::StudentT, ReFamily::TwoPieceNormal] {
                out.push(model(s, b, re));
            }
        }
    }
    out
}

/// A plausible interior parameter value for `m` on the leukaemia design.
pub fn interior_params(m: &ModelSpec) -> ParameterVector {
    let theta = match m.baseline {
        BaselineFamily::Pgw => vec![0.2, 1.5, 3.0],
        BaselineFamily::LogLogistic => vec![-1.0, 0.7],
    };
    let xi = match (m.structure.has_random_effects(), m.random_effects) {
        (false, _) => vec![],
        (true, ReFamily::TwoPieceNormal) => vec![0.8, 0.3],
        (true, _) => vec![0.8],
    };
    ParameterVector::new(vec![1.0, 0.08, 0.22, 0.10], vec![0.96], theta, xi)
}

/// Rebuild `data` with its clusters in reverse order of appearance.
pub fn reverse_clusters(data: &ClusteredDataset) -> ClusteredDataset {
    let mut order = Vec::new();
    for i in (0..data.n_clusters()).rev() {
        order.extend(data.cluster_range(i));
    }
    ClusteredDataset::new(
        order.iter().map(|&j| data.times()[j]).collect(),
        order.iter().map(|&j| data.status()[j]).collect(),
        order
            .iter()
            .map(|&j| data.cluster_labels()[data.cluster_of()[j]].clone())
            .collect(),
        order.iter().map(|&j| data.x(j).to_vec()).collect(),
        data.covariate_names().to_vec(),
        data.time_scale_columns().to_vec(),
    )
    .unwrap()
}
