//! Initial data: the smooth reference state and seeded random band-limited fields.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::model::SystemState;
use crate::spectral::{bessel_norm, leray_project, ScalarField, TorusGrid, VelocityField};

/// Named initial condition of a simulation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialCondition {
    /// Smooth low-mode state, see [`default_state`].
    Smooth,
    /// Random broadband state, see [`broadband_state`].
    Broadband {
        seed: u64,
        #[serde(default = "one")]
        velocity: f64,
    },
    Zero,
}

fn one() -> f64 {
    1.0
}

impl Default for InitialCondition {
    fn default() -> Self {
        InitialCondition::Smooth
    }
}

impl InitialCondition {
    pub fn build(&self, grid: &Arc<TorusGrid>) -> SystemState {
        match *self {
            InitialCondition::Smooth => default_state(grid),
            InitialCondition::Broadband { seed, velocity } => broadband_state(grid, seed, velocity),
            InitialCondition::Zero => SystemState::zeros(grid.clone()),
        }
    }
}

/// `n = 1 + 0.3 cos x1 cos x2`, `c = 1 + 0.4 sin x2 cos x3`, and a projected
/// Taylor-Green velocity of amplitude 1.5 plus `(0, 0, 0.3 sin(x1 + x2))`.
pub fn default_state(grid: &Arc<TorusGrid>) -> SystemState {
    let w = grid.lengths().map(|l| 2.0 * PI / l);
    let n = ScalarField::from_fn(grid.clone(), |[x, y, _]| {
        1.0 + 0.3 * (w[0] * x).cos() * (w[1] * y).cos()
    });
    let c = ScalarField::from_fn(grid.clone(), |[_, y, z]| {
        1.0 + 0.4 * (w[1] * y).sin() * (w[2] * z).cos()
    });
    let amp = 1.5;
    let u = leray_project([
        ScalarField::from_fn(grid.clone(), |[x, y, z]| {
            amp * (w[0] * x).sin() * (w[1] * y).cos() * (w[2] * z).cos()
        }),
        ScalarField::from_fn(grid.clone(), |[x, y, z]| {
            -amp * (w[0] * x).cos() * (w[1] * y).sin() * (w[2] * z).cos()
        }),
        ScalarField::from_fn(grid.clone(), |[x, y, _]| 0.3 * (w[0] * x + w[1] * y).sin()),
    ])
    .expect("finite by construction");
    SystemState { n, c, u, t: 0.0 }
}

/// Filtered white noise: coefficients scaled by `(1 + |xi|^2)^(-power/2)` and restricted
/// to `|m_a| <= max_mode` on every axis. Mean removed.
pub fn filtered_noise(grid: &Arc<TorusGrid>, seed: u64, max_mode: i64, power: f64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<f64> = (0..grid.len()).map(|_| rng.sample(StandardNormal)).collect();
    let white = ScalarField::from_samples(grid.clone(), samples).expect("finite samples");
    let ksq = grid.ksq();
    white.map_spectral(|i, c| {
        let (i0, i1, i2) = grid.spectral_index(i);
        let inside = grid.modes(0)[i0].abs() <= max_mode
            && grid.modes(1)[i1].abs() <= max_mode
            && grid.modes(2)[i2].abs() <= max_mode;
        if i == 0 || !inside {
            c * 0.0
        } else {
            c * (1.0 + ksq[i]).powf(-0.5 * power)
        }
    })
}

/// Random band-limited field whose grid samples span exactly `[lo, hi]`, with
/// amplitude spectrum `(1 + |xi|^2)^(-2)` on `|m_a| <= max_mode`.
pub fn random_positive_field(
    grid: &Arc<TorusGrid>,
    seed: u64,
    max_mode: i64,
    lo: f64,
    hi: f64,
) -> ScalarField {
    let f = filtered_noise(grid, seed, max_mode, 4.0);
    let (min, max) = (f.min(), f.max());
    let scale = (hi - lo) / (max - min);
    f.map_samples(|v| lo + (v - min) * scale)
}

/// Largest mode index retained by the two-thirds rule.
pub fn resolved_mode(grid: &TorusGrid) -> i64 {
    let n = grid.dims().into_iter().min().expect("three axes") as i64;
    (n - 1) / 3
}

/// Smooth broadband state: amplitude spectrum `(1 + |xi|^2)^(-2)` over every resolved mode.
///
/// `n` and `c` are `1 + 0.3 * (noise / max|noise|)`; `u` is projected and scaled to
/// `sup|u| = velocity`.
pub fn broadband_state(grid: &Arc<TorusGrid>, seed: u64, velocity: f64) -> SystemState {
    let m = resolved_mode(grid);
    let scalar = |s: u64| {
        let f = filtered_noise(grid, seed.wrapping_mul(8).wrapping_add(s), m, 4.0);
        let amp = 0.3 / f.max_abs();
        f.map_samples(|v| 1.0 + amp * v)
    };
    let n = scalar(1);
    let c = scalar(2);
    let u = random_velocity(grid, seed.wrapping_mul(8).wrapping_add(3), m, 4.0);
    let peak = u.magnitude_squared().into_iter().fold(0.0, f64::max).sqrt();
    let u = if peak > 0.0 { u.scale(velocity / peak) } else { u };
    SystemState { n, c, u, t: 0.0 }
}

/// Divergence-free filtered noise.
pub fn random_velocity(grid: &Arc<TorusGrid>, seed: u64, max_mode: i64, power: f64) -> VelocityField {
    let comps = std::array::from_fn(|a| {
        filtered_noise(grid, seed.wrapping_mul(3).wrapping_add(a as u64), max_mode, power)
    });
    leray_project(comps).expect("finite by construction")
}

/// Random divergence-free direction with unit `H^1` norm.
pub fn unit_h1_velocity(grid: &Arc<TorusGrid>, seed: u64) -> VelocityField {
    let u = random_velocity(grid, seed, resolved_mode(grid), 4.0);
    let norm = bessel_norm(&u, 1.into()).expect("finite");
    u.scale(1.0 / norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::divergence;

    #[test]
    fn random_positive_field_spans_range() {
        let g = TorusGrid::cubic(16, 2.0 * PI).unwrap();
        let f = random_positive_field(&g, 3, 4, 0.5, 1.5);
        assert!((f.min() - 0.5).abs() < 1e-12 && (f.max() - 1.5).abs() < 1e-12);
        let outside = f.spectral().iter().enumerate().any(|(i, c)| {
            let (a, b, d) = g.spectral_index(i);
            let big = [g.modes(0)[a], g.modes(1)[b], g.modes(2)[d]].iter().any(|m| m.abs() > 4);
            big && c.norm() > 1e-12
        });
        assert!(!outside);
        assert_eq!(
            random_positive_field(&g, 3, 4, 0.5, 1.5).samples(),
            f.samples()
        );
    }

    #[test]
    fn states_are_admissible() {
        let g = TorusGrid::cubic(16, 2.0 * PI).unwrap();
        for s in [default_state(&g), broadband_state(&g, 5, 1.0)] {
            assert!(s.n.min() > 0.5 && s.c.min() > 0.5);
            let div = bessel_norm(&divergence(&s.u).unwrap(), 0.into()).unwrap();
            assert!(div < 1e-12 * bessel_norm(&s.u, 1.into()).unwrap());
        }
        let u = unit_h1_velocity(&g, 9);
        assert!((bessel_norm(&u, 1.into()).unwrap() - 1.0).abs() < 1e-12);
    }
}
