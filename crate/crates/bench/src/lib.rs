//! Shared fixtures for the benchmarks.

use std::f64::consts::PI;
use std::sync::Arc;

use stcns_core::config::{GridSpec, SimConfig};
use stcns_core::initial::filtered_noise;
use stcns_core::{Experiment, ScalarField, TorusGrid};

pub fn cubic(n: usize) -> Arc<TorusGrid> {
    TorusGrid::cubic(n, 2.0 * PI).expect("valid grid")
}

/// Smooth random field on the physical side only, so the first spectral access pays the transform.
pub fn fresh_field(grid: &Arc<TorusGrid>, seed: u64) -> ScalarField {
    let f = filtered_noise(grid, seed, (grid.dims()[0] / 3) as i64, 2.0);
    ScalarField::from_samples(grid.clone(), f.samples().to_vec()).expect("finite samples")
}

/// Default experiment at `n^3`.
pub fn experiment(n: usize) -> Experiment {
    SimConfig {
        grid: GridSpec::Cubic(n),
        ..SimConfig::default()
    }
    .build()
    .expect("default configuration is valid")
}
