#![allow(dead_code)]

use pearcey_lab::operators::ModelConfig;
use pearcey_lab::quadrature::{discretize, ContourSpec, Grid};

/// Coarse grid for fast tests; accurate to roughly 1e-8 on F.
pub fn small_grid(truncation: f64) -> Grid {
    let mut spec = ContourSpec::standard(truncation);
    spec.panels_per_ray = 6;
    spec.nodes_per_panel = 12;
    spec.inner_nodes_per_panel = 8;
    spec.min_panel = 1e-7;
    discretize(&spec).unwrap()
}

pub fn std_config() -> ModelConfig {
    ModelConfig::new(vec![-1.0, 1.0], vec![0.0, 0.5, 0.0], 1.0, 0.0)
}

pub fn three_config() -> ModelConfig {
    ModelConfig::new(vec![-2.0, 0.0, 1.5], vec![0.0, 0.3, 0.7, 0.0], 0.5, 0.2)
}
