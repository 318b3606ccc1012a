//! Truncated cylindrical Wiener process and the noise operator `G`.

use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectral::{
    bessel_norm_sq, leray_project, FieldComponents, Multipliable, ScalarField, SobolevIndex,
    SpectralError, TorusGrid, VelocityField,
};

const WIENER_TAG: u64 = u64::from_le_bytes(*b"STCNdW\0\0");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoiseError {
    #[error("time step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("noise mode index {index} out of range 1..={count}")]
    ModeOutOfRange { index: usize, count: usize },
    #[error("{0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    #[default]
    MultiplicativeDiagonal,
    MultiplicativeShell,
    Additive,
    Off,
}

/// Noise spectrum `sigma_j = sigma0 j^{-q}` for `j = 1..=M` and the operator kind.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub modes: usize,
    pub sigma0: f64,
    pub decay: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            kind: NoiseKind::MultiplicativeDiagonal,
            modes: 8,
            sigma0: 0.1,
            decay: 1.0,
        }
    }
}

impl NoiseSpec {
    pub fn off() -> Self {
        NoiseSpec {
            kind: NoiseKind::Off,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), NoiseError> {
        if self.modes == 0 {
            return Err(NoiseError::InvalidSpec("mode count M must be positive".into()));
        }
        if !(self.sigma0.is_finite() && self.sigma0 >= 0.0) {
            return Err(NoiseError::InvalidSpec(format!(
                "amplitude sigma0 must be nonnegative, got {}",
                self.sigma0
            )));
        }
        if !(self.decay.is_finite() && self.decay > 0.5) {
            return Err(NoiseError::InvalidSpec(format!(
                "decay q must exceed 1/2, got {}",
                self.decay
            )));
        }
        Ok(())
    }

    pub fn is_off(&self) -> bool {
        self.kind == NoiseKind::Off || self.sigma0 == 0.0
    }

    /// `sigma_j` for `1 <= j <= M`.
    pub fn sigma(&self, j: usize) -> f64 {
        self.sigma0 * (j as f64).powf(-self.decay)
    }

    pub fn sigma_sq_sum(&self) -> f64 {
        (1..=self.modes).map(|j| self.sigma(j).powi(2)).sum()
    }

    /// Constant `C = max(1, sum sigma_j^2)` of the growth and Lipschitz bounds.
    pub fn bound_constant(&self) -> f64 {
        self.sigma_sq_sum().max(1.0)
    }

    fn check_index(&self, j: usize) -> Result<(), NoiseError> {
        if (1..=self.modes).contains(&j) {
            Ok(())
        } else {
            Err(NoiseError::ModeOutOfRange {
                index: j,
                count: self.modes,
            })
        }
    }
}

/// Shell number of a stored coefficient: `round(|xi| / fundamental)`.
fn shell_of(grid: &TorusGrid, idx: usize) -> usize {
    (grid.ksq()[idx].sqrt() / grid.fundamental()).round() as usize
}

/// Additive forcing direction `f_j = A e_{(a+1) mod 3} sin(m x_a)` with `a = (j-1) mod 3`,
/// `m = (j+2)/3`, and `A` chosen so that `||f_j||_{H^1} = 1`.
pub fn additive_mode(grid: &Arc<TorusGrid>, j: usize) -> VelocityField {
    let a = (j - 1) % 3;
    let m = ((j + 2) / 3) as f64;
    let w = 2.0 * std::f64::consts::PI * m / grid.lengths()[a];
    let amp = (2.0 / (grid.volume() * (1.0 + w * w))).sqrt();
    let comps = std::array::from_fn(|b| {
        if b == (a + 1) % 3 {
            ScalarField::from_fn(grid.clone(), |x| amp * (w * x[a]).sin())
        } else {
            ScalarField::zeros(grid.clone())
        }
    });
    leray_project(comps).expect("components share a grid")
}

/// `G_j(u)`.
pub fn apply_noise(u: &VelocityField, j: usize, spec: &NoiseSpec) -> Result<VelocityField, NoiseError> {
    spec.check_index(j)?;
    let sigma = spec.sigma(j);
    Ok(match spec.kind {
        NoiseKind::Off => VelocityField::zeros(u.grid().clone()),
        NoiseKind::MultiplicativeDiagonal => u.scale(sigma),
        NoiseKind::MultiplicativeShell => {
            let grid = u.grid().clone();
            u.with_multiplier(&|idx| if shell_of(&grid, idx) == j { sigma } else { 0.0 })
        }
        NoiseKind::Additive => additive_mode(u.grid(), j).scale(sigma),
    })
}

/// Precomputed operator for the integrator: `sum_j G_j(u) dW_j` in spectral form.
#[derive(Clone, Debug)]
pub struct NoiseOperator {
    spec: NoiseSpec,
    grid: Arc<TorusGrid>,
    shells: Vec<usize>,
    additive: Vec<[Vec<Complex64>; 3]>,
}

impl NoiseOperator {
    pub fn new(spec: NoiseSpec, grid: Arc<TorusGrid>) -> Result<Self, NoiseError> {
        spec.validate()?;
        let shells = match spec.kind {
            NoiseKind::MultiplicativeShell => {
                (0..grid.spectral_len()).map(|i| shell_of(&grid, i)).collect()
            }
            _ => Vec::new(),
        };
        let additive = match spec.kind {
            NoiseKind::Additive => (1..=spec.modes)
                .map(|j| {
                    let f = additive_mode(&grid, j);
                    std::array::from_fn(|a| f.component(a).spectral().to_vec())
                })
                .collect(),
            _ => Vec::new(),
        };
        Ok(NoiseOperator {
            spec,
            grid,
            shells,
            additive,
        })
    }

    pub fn spec(&self) -> &NoiseSpec {
        &self.spec
    }

    pub fn is_off(&self) -> bool {
        self.spec.is_off()
    }

    /// Spectral coefficients of `sum_j G_j(u) dw_j`, scaled by `factor`.
    pub(crate) fn increment(
        &self,
        u: &VelocityField,
        dw: &[f64],
        factor: f64,
    ) -> [Vec<Complex64>; 3] {
        let len = self.grid.spectral_len();
        let zero = Complex64::new(0.0, 0.0);
        let s = &self.spec;
        match s.kind {
            NoiseKind::Off => std::array::from_fn(|_| vec![zero; len]),
            NoiseKind::MultiplicativeDiagonal => {
                let w: f64 = (1..=s.modes).map(|j| s.sigma(j) * dw[j - 1]).sum::<f64>() * factor;
                std::array::from_fn(|a| u.component(a).spectral().iter().map(|c| c * w).collect())
            }
            NoiseKind::MultiplicativeShell => {
                let weight: Vec<f64> = (0..=s.modes)
                    .map(|j| if j == 0 { 0.0 } else { s.sigma(j) * dw[j - 1] * factor })
                    .collect();
                std::array::from_fn(|a| {
                    u.component(a)
                        .spectral()
                        .iter()
                        .zip(&self.shells)
                        .map(|(c, &sh)| if sh <= s.modes { c * weight[sh] } else { zero })
                        .collect()
                })
            }
            NoiseKind::Additive => std::array::from_fn(|a| {
                let mut out = vec![zero; len];
                for (j, f) in self.additive.iter().enumerate() {
                    let w = s.sigma(j + 1) * dw[j] * factor;
                    for (o, c) in out.iter_mut().zip(&f[a]) {
                        *o += c * w;
                    }
                }
                out
            }),
        }
    }

    /// `sum_j ||G_j(u)||_{L^2}^2`, the Ito correction of the kinetic energy.
    pub fn ito_correction(&self, u: &VelocityField) -> f64 {
        closed_form(u, &self.spec, SobolevIndex::new(0.0).expect("finite")).unwrap_or(f64::NAN)
    }
}

/// Independent standard Wiener increments of one time step.
#[derive(Clone, Debug, PartialEq)]
pub struct WienerIncrement {
    pub values: Vec<f64>,
    pub step_index: u64,
    pub path_id: u64,
}

fn stream(seed: u64, path_id: u64, step: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&path_id.to_le_bytes());
    key[16..24].copy_from_slice(&step.to_le_bytes());
    key[24..32].copy_from_slice(&WIENER_TAG.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// `M` independent `N(0, dt)` draws keyed by `(seed, path_id, step_index)`.
pub fn sample_increment(
    seed: u64,
    path_id: u64,
    step_index: u64,
    dt: f64,
    modes: usize,
) -> Result<WienerIncrement, NoiseError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(NoiseError::InvalidStep(dt));
    }
    let mut rng = stream(seed, path_id, step_index);
    let scale = dt.sqrt();
    let values = (0..modes)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
        .collect();
    Ok(WienerIncrement {
        values,
        step_index,
        path_id,
    })
}

/// A fixed Brownian path sampled on a fine grid of spacing `base_dt`.
///
/// Increments over coarser steps `substeps * base_dt` are sums of the fine
/// increments, so paths at different step sizes are the same realization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrownianPath {
    pub seed: u64,
    pub path_id: u64,
    pub base_dt_bits: u64,
    pub substeps: u64,
}

impl BrownianPath {
    pub fn new(seed: u64, path_id: u64, base_dt: f64, substeps: u64) -> Result<Self, NoiseError> {
        if !(base_dt.is_finite() && base_dt > 0.0) {
            return Err(NoiseError::InvalidStep(base_dt));
        }
        if substeps == 0 {
            return Err(NoiseError::InvalidSpec("substeps must be positive".into()));
        }
        Ok(BrownianPath {
            seed,
            path_id,
            base_dt_bits: base_dt.to_bits(),
            substeps,
        })
    }

    pub fn base_dt(&self) -> f64 {
        f64::from_bits(self.base_dt_bits)
    }

    pub fn step_dt(&self) -> f64 {
        self.base_dt() * self.substeps as f64
    }

    /// Increment over coarse step `step`.
    pub fn increment(&self, step: u64, modes: usize) -> WienerIncrement {
        let mut values = vec![0.0; modes];
        for s in 0..self.substeps {
            let fine = sample_increment(
                self.seed,
                self.path_id,
                step * self.substeps + s,
                self.base_dt(),
                modes,
            )
            .expect("validated step");
            for (v, f) in values.iter_mut().zip(fine.values) {
                *v += f;
            }
        }
        WienerIncrement {
            values,
            step_index: step,
            path_id: self.path_id,
        }
    }
}

/// Both sides of the growth identity `sum_j ||G_j(u)||_{H^s}^2 = closed form`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NoiseIdentity {
    pub lhs: f64,
    pub rhs: f64,
    pub bound: f64,
}

impl NoiseIdentity {
    pub fn relative_error(&self) -> f64 {
        (self.lhs - self.rhs).abs() / self.lhs.abs().max(self.rhs.abs()).max(f64::MIN_POSITIVE)
    }

    pub fn holds(&self, tol: f64) -> bool {
        (self.lhs == self.rhs || self.relative_error() <= tol) && self.lhs <= self.bound * (1.0 + tol)
    }
}

fn hs_direct(u: &VelocityField, spec: &NoiseSpec, s: SobolevIndex) -> Result<f64, NoiseError> {
    let mut total = 0.0;
    for j in 1..=spec.modes {
        total += bessel_norm_sq(&apply_noise(u, j, spec)?, s)?;
    }
    Ok(total)
}

/// Mode-wise evaluation of `sum_j sigma_j^2 ||S_j u||^2` for the shell kind.
fn shell_closed_form(u: &VelocityField, spec: &NoiseSpec, s: SobolevIndex) -> f64 {
    let grid = u.grid();
    let n2h = grid.half_len();
    let mut total = 0.0;
    for comp in u.components() {
        for (idx, c) in comp.spectral().iter().enumerate() {
            let sh = shell_of(grid, idx);
            if (1..=spec.modes).contains(&sh) {
                let w = grid.mode_weight(idx % n2h) * (1.0 + grid.ksq()[idx]).powf(s.value());
                total += spec.sigma(sh).powi(2) * w * c.norm_sqr();
            }
        }
    }
    total * grid.volume()
}

/// Hilbert-Schmidt growth identity at regularity `s`, with the bound `C (1 + ||u||_{H^s}^2)`.
pub fn hilbert_schmidt_identity(
    u: &VelocityField,
    spec: &NoiseSpec,
    s: SobolevIndex,
) -> Result<NoiseIdentity, NoiseError> {
    spec.validate()?;
    Ok(NoiseIdentity {
        lhs: hs_direct(u, spec, s)?,
        rhs: closed_form(u, spec, s)?,
        bound: spec.bound_constant() * (1.0 + bessel_norm_sq(u, s)?),
    })
}

fn closed_form(u: &VelocityField, spec: &NoiseSpec, s: SobolevIndex) -> Result<f64, NoiseError> {
    Ok(match spec.kind {
        NoiseKind::Off => 0.0,
        NoiseKind::MultiplicativeDiagonal => spec.sigma_sq_sum() * bessel_norm_sq(u, s)?,
        NoiseKind::MultiplicativeShell => shell_closed_form(u, spec, s),
        NoiseKind::Additive => {
            let grid = u.grid();
            (1..=spec.modes)
                .map(|j| {
                    let a = (j - 1) % 3;
                    let m = ((j + 2) / 3) as f64 * 2.0 * std::f64::consts::PI / grid.lengths()[a];
                    spec.sigma(j).powi(2) * (1.0 + m * m).powf(s.value() - 1.0)
                })
                .sum()
        }
    })
}

/// Lipschitz identity `sum_j ||G_j(u1) - G_j(u2)||_{H^s}^2 = closed form`.
pub fn lipschitz_identity(
    u1: &VelocityField,
    u2: &VelocityField,
    spec: &NoiseSpec,
    s: SobolevIndex,
) -> Result<NoiseIdentity, NoiseError> {
    spec.validate()?;
    let mut lhs = 0.0;
    for j in 1..=spec.modes {
        let d = apply_noise(u1, j, spec)?.sub(&apply_noise(u2, j, spec)?)?;
        lhs += bessel_norm_sq(&d, s)?;
    }
    let diff = u1.sub(u2)?;
    let norm_sq = bessel_norm_sq(&diff, s)?;
    let rhs = match spec.kind {
        NoiseKind::Off | NoiseKind::Additive => 0.0,
        NoiseKind::MultiplicativeDiagonal => spec.sigma_sq_sum() * norm_sq,
        NoiseKind::MultiplicativeShell => shell_closed_form(&diff, spec, s),
    };
    Ok(NoiseIdentity {
        lhs,
        rhs,
        bound: spec.bound_constant() * norm_sq,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn velocity(g: &Arc<TorusGrid>) -> VelocityField {
        leray_project([
            ScalarField::from_fn(g.clone(), |[x, y, z]| x.sin() * y.cos() + 0.2 * (2.0 * z).cos()),
            ScalarField::from_fn(g.clone(), |[x, y, z]| -x.cos() * y.sin() + 0.3 * (x + z).sin()),
            ScalarField::from_fn(g.clone(), |[x, y, _]| 0.5 * (3.0 * x - y).cos()),
        ])
        .unwrap()
    }

    #[test]
    fn increments_are_deterministic() {
        let a = sample_increment(7, 3, 11, 0.01, 8).unwrap();
        let b = sample_increment(7, 3, 11, 0.01, 8).unwrap();
        assert_eq!(a, b);
        let c = sample_increment(7, 4, 11, 0.01, 8).unwrap();
        assert_ne!(a.values, c.values);
        assert!(matches!(
            sample_increment(7, 3, 11, 0.0, 8),
            Err(NoiseError::InvalidStep(_))
        ));
    }

    #[test]
    fn coarse_increment_is_sum_of_fine() {
        let fine = BrownianPath::new(1, 2, 0.001, 1).unwrap();
        let coarse = BrownianPath::new(1, 2, 0.001, 4).unwrap();
        let sum: Vec<f64> = (0..4)
            .map(|s| fine.increment(4 + s, 3).values)
            .fold(vec![0.0; 3], |acc, v| acc.iter().zip(v).map(|(a, b)| a + b).collect());
        assert_eq!(coarse.increment(1, 3).values, sum);
        assert_eq!(
            fine.increment(5, 3).values,
            sample_increment(1, 2, 5, 0.001, 3).unwrap().values
        );
    }

    #[test]
    fn zero_velocity_gives_zero_noise() {
        let g = TorusGrid::cubic(8, 2.0 * PI).unwrap();
        let z = VelocityField::zeros(g);
        let out = apply_noise(&z, 1, &NoiseSpec::default()).unwrap();
        assert!((0..3).all(|a| out.component(a).max_abs() == 0.0));
        assert!(apply_noise(&z, 9, &NoiseSpec::default()).is_err());
        assert!(apply_noise(&z, 0, &NoiseSpec::default()).is_err());
    }

    #[test]
    fn identities_for_every_kind() {
        let g = TorusGrid::cubic(16, 2.0 * PI).unwrap();
        let u1 = velocity(&g);
        let u2 = u1.scale(0.3);
        for kind in [
            NoiseKind::MultiplicativeDiagonal,
            NoiseKind::MultiplicativeShell,
            NoiseKind::Additive,
            NoiseKind::Off,
        ] {
            let spec = NoiseSpec {
                kind,
                ..NoiseSpec::default()
            };
            for s in [0, 1] {
                let hs = hilbert_schmidt_identity(&u1, &spec, s.into()).unwrap();
                assert!(hs.holds(1e-12), "{kind:?} {s} {hs:?}");
                let lip = lipschitz_identity(&u1, &u2, &spec, s.into()).unwrap();
                assert!(lip.holds(1e-12), "{kind:?} {s} {lip:?}");
            }
        }
    }

    #[test]
    fn outputs_are_solenoidal() {
        let g = TorusGrid::cubic(16, 2.0 * PI).unwrap();
        let u = velocity(&g);
        for kind in [NoiseKind::MultiplicativeShell, NoiseKind::Additive] {
            let spec = NoiseSpec {
                kind,
                ..NoiseSpec::default()
            };
            for j in 1..=spec.modes {
                let out = apply_noise(&u, j, &spec).unwrap();
                let div = crate::spectral::divergence(&out).unwrap();
                assert!(div.max_abs() < 1e-12);
            }
        }
    }

    #[test]
    fn spectrum_validation() {
        let bad = NoiseSpec {
            decay: 0.5,
            ..NoiseSpec::default()
        };
        assert!(bad.validate().is_err());
        assert!((NoiseSpec::default().bound_constant() - 1.0).abs() < 1e-15);
    }
}
