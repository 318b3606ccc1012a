//! Constitutive pieces of the chemotaxis-fluid system and drift assembly.

pub(crate) mod drift;
mod taming;

pub use drift::{
    drift, drift_exact, drift_mollified, drift_truncated, nonlinear_drift, Regularization,
    Tendencies,
};
pub use taming::{taming_g, taming_g1, TamingSpec, DEFAULT_TRANSITION};

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectral::{
    gradient, DealiasRule, FieldComponents, ScalarField, SpectralError, TorusGrid, VelocityField,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("argument must be nonnegative, got {0}")]
    NegativeArgument(f64),
    #[error("{0}")]
    InvalidParameter(String),
    #[error("blow-up detected: non-finite {0}")]
    BlowUp(&'static str),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Cubic logistic source `L(n) = n (1 - n) (n - a)` with `a in (0, 1/2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticSpec {
    a: f64,
}

impl LogisticSpec {
    pub fn new(a: f64) -> Result<Self, ModelError> {
        if a > 0.0 && a < 0.5 {
            Ok(LogisticSpec { a })
        } else {
            Err(ModelError::InvalidParameter(format!(
                "a must lie in the open interval (0, 1/2), got {a}"
            )))
        }
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    #[inline]
    pub fn eval(&self, n: f64) -> f64 {
        n * (1.0 - n) * (n - self.a)
    }
}

impl Default for LogisticSpec {
    fn default() -> Self {
        LogisticSpec { a: 0.25 }
    }
}

/// Pointwise `L(n)`; under the two-thirds rule the result is restricted to the retained modes.
pub fn logistic(n: &ScalarField, spec: &LogisticSpec, rule: DealiasRule) -> ScalarField {
    let out = n.map_samples(|v| spec.eval(v));
    match rule {
        DealiasRule::TwoThirds => crate::spectral::two_thirds(&out),
        _ => out,
    }
}

/// Smooth cut-off `theta_R`: 1 on `[0, R]`, 0 on `[2R, inf)`, quintic smoothstep between.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffSpec {
    radius: f64,
}

impl CutoffSpec {
    pub fn new(radius: f64) -> Result<Self, ModelError> {
        if radius.is_finite() && radius > 0.0 {
            Ok(CutoffSpec { radius })
        } else {
            Err(ModelError::InvalidParameter(format!(
                "cut-off radius R must be positive, got {radius}"
            )))
        }
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn theta(&self, x: f64) -> f64 {
        let r = self.radius;
        if x <= r {
            1.0
        } else if x >= 2.0 * r {
            0.0
        } else {
            let s = (x - r) / r;
            1.0 - s * s * s * (10.0 + s * (-15.0 + 6.0 * s))
        }
    }
}

pub fn cutoff_theta(x: f64, spec: &CutoffSpec) -> f64 {
    spec.theta(x)
}

/// Discrete `W^{1,inf}` norm: grid max of `|f|` plus grid max of `|grad f|`
/// (Euclidean over components, Frobenius for the gradient of a vector field).
pub fn sup_norm_w1inf<F: FieldComponents + ?Sized>(f: &F) -> f64 {
    let comps = f.components();
    let len = comps[0].samples().len();
    let mut val = vec![0.0; len];
    let mut grad = vec![0.0; len];
    for comp in comps {
        for (acc, v) in val.iter_mut().zip(comp.samples()) {
            *acc += v * v;
        }
        for d in gradient(comp) {
            for (acc, v) in grad.iter_mut().zip(d.samples()) {
                *acc += v * v;
            }
        }
    }
    let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max).sqrt();
    max(&val) + max(&grad)
}

/// Gravitational potential `phi` with cached gradient.
#[derive(Clone, Debug)]
pub struct PotentialSpec {
    phi: ScalarField,
    grad: [ScalarField; 3],
    on_eval: [OnceLock<[Vec<f64>; 3]>; 3],
}

impl PotentialSpec {
    pub fn new(phi: ScalarField) -> Result<Self, ModelError> {
        if !phi.is_finite() {
            return Err(SpectralError::InvalidField.into());
        }
        let grad = gradient(&phi);
        Ok(PotentialSpec {
            phi,
            grad,
            on_eval: Default::default(),
        })
    }

    /// `phi = amplitude * sin(2 pi x3 / L3)`.
    pub fn sine_x3(grid: Arc<TorusGrid>, amplitude: f64) -> Self {
        let w = 2.0 * std::f64::consts::PI / grid.lengths()[2];
        let phi = ScalarField::from_fn(grid, |[_, _, z]| amplitude * (w * z).sin());
        Self::new(phi).expect("finite by construction")
    }

    pub fn phi(&self) -> &ScalarField {
        &self.phi
    }

    pub fn grad(&self) -> &[ScalarField; 3] {
        &self.grad
    }

    /// Gradient samples on the product-evaluation grid of `rule`.
    pub(crate) fn grad_on(&self, rule: DealiasRule) -> &[Vec<f64>; 3] {
        let slot = match rule {
            DealiasRule::TwoThirds => 0,
            DealiasRule::PadDouble => 1,
            DealiasRule::None => 2,
        };
        self.on_eval[slot].get_or_init(|| {
            let ev = drift::Evaluator::new(self.phi.grid(), rule);
            std::array::from_fn(|a| ev.samples(self.grad[a].spectral().to_vec()))
        })
    }

    pub fn grad_linf(&self) -> f64 {
        let [a, b, c] = &self.grad;
        a.samples()
            .iter()
            .zip(b.samples())
            .zip(c.samples())
            .map(|((x, y), z)| (x * x + y * y + z * z).sqrt())
            .fold(0.0, f64::max)
    }
}

/// Cell density, chemical concentration, divergence-free velocity, and time.
#[derive(Clone, Debug)]
pub struct SystemState {
    pub n: ScalarField,
    pub c: ScalarField,
    pub u: VelocityField,
    pub t: f64,
}

impl SystemState {
    pub fn new(
        n: ScalarField,
        c: ScalarField,
        u: VelocityField,
        t: f64,
    ) -> Result<Self, ModelError> {
        n.check_grid(&c)?;
        n.check_grid(u.component(0))?;
        Ok(SystemState { n, c, u, t })
    }

    pub fn zeros(grid: Arc<TorusGrid>) -> Self {
        SystemState {
            n: ScalarField::zeros(grid.clone()),
            c: ScalarField::zeros(grid.clone()),
            u: VelocityField::zeros(grid),
            t: 0.0,
        }
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        self.n.grid()
    }

    pub fn is_finite(&self) -> bool {
        self.n.is_finite() && self.c.is_finite() && self.u.is_finite() && self.t.is_finite()
    }

    /// Shifts every field by whole grid cells.
    pub fn roll(&self, shift: [usize; 3]) -> SystemState {
        SystemState {
            n: self.n.roll(shift),
            c: self.c.roll(shift),
            u: self.u.roll(shift),
            t: self.t,
        }
    }
}

/// Everything the drift needs besides the state and the regularization.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub logistic: LogisticSpec,
    pub taming: TamingSpec,
    pub potential: PotentialSpec,
    pub dealias: DealiasRule,
}

impl ModelParams {
    pub fn defaults(grid: Arc<TorusGrid>) -> Self {
        ModelParams {
            logistic: LogisticSpec::default(),
            taming: TamingSpec::default(),
            potential: PotentialSpec::sine_x3(grid, 1.0),
            dealias: DealiasRule::TwoThirds,
        }
    }
}
