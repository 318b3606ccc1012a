//! Exponential Euler-Maruyama time stepping.
//!
//! Each step applies the exact heat propagator to the state plus explicit
//! drift and Ito noise increments:
//! `v+ = E (v + dt N(v) + sum_j G_j(u) dW_j)`, `E = exp(-|xi|^2 dt J_k)`.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{self, DiagnosticsContext, DiagnosticsRecord};
use crate::model::drift::{nonlinear_spectral_with, CutoffFactors};
use crate::model::{CutoffSpec, ModelError, ModelParams, Regularization, SystemState};
use crate::noise::{BrownianPath, NoiseError, NoiseOperator, NoiseSpec};
use crate::spectral::{project_in_place, ScalarField, SpectralError, TorusGrid, Truncation, VelocityField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StepError {
    #[error("invalid scheme: {0}")]
    InvalidScheme(String),
    #[error("non-finite state at t = {t}: {status:?}")]
    NonFinite { t: f64, status: TerminalStatus },
    #[error("noise increment has {found} values, expected {expected}")]
    IncrementLength { expected: usize, found: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Which regularized system is integrated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Variant {
    Exact,
    Mollified {
        eps: f64,
    },
    Truncated {
        eps: f64,
        k: f64,
        radius: f64,
        #[serde(default)]
        annulus: bool,
    },
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Exact => "exact",
            Variant::Mollified { .. } => "mollified",
            Variant::Truncated { .. } => "truncated",
        }
    }

    pub fn eps(&self) -> f64 {
        match *self {
            Variant::Exact => 0.0,
            Variant::Mollified { eps } | Variant::Truncated { eps, .. } => eps,
        }
    }

    /// Same variant with a different mollifier width (ignored for `Exact`).
    pub fn with_eps(self, new: f64) -> Self {
        match self {
            Variant::Exact => Variant::Exact,
            Variant::Mollified { .. } => Variant::Mollified { eps: new },
            Variant::Truncated {
                k, radius, annulus, ..
            } => Variant::Truncated {
                eps: new,
                k,
                radius,
                annulus,
            },
        }
    }

    pub fn regularization(&self) -> Result<Regularization, StepError> {
        Ok(match *self {
            Variant::Exact => Regularization::exact(),
            Variant::Mollified { eps } => {
                check_eps(eps)?;
                Regularization::mollified(eps)
            }
            Variant::Truncated {
                eps,
                k,
                radius,
                annulus,
            } => {
                check_eps(eps)?;
                let trunc = Truncation::new(k, annulus)
                    .map_err(|e| StepError::InvalidScheme(format!("k: {e}")))?;
                let cutoff = CutoffSpec::new(radius)
                    .map_err(|e| StepError::InvalidScheme(format!("radius: {e}")))?;
                Regularization::truncated(eps, trunc, cutoff)
            }
        })
    }
}

impl Default for Variant {
    fn default() -> Self {
        Variant::Mollified { eps: 0.1 }
    }
}

fn check_eps(eps: f64) -> Result<(), StepError> {
    if eps.is_finite() && eps >= 0.0 {
        Ok(())
    } else {
        Err(StepError::InvalidScheme(format!(
            "eps must be nonnegative, got {eps}"
        )))
    }
}

/// Time-stepping parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    pub dt: f64,
    pub t_final: f64,
    #[serde(default)]
    pub variant: Variant,
    #[serde(default)]
    pub clip_negative: bool,
}

impl SchemeConfig {
    pub fn new(dt: f64, t_final: f64, variant: Variant) -> Result<Self, StepError> {
        let s = SchemeConfig {
            dt,
            t_final,
            variant,
            clip_negative: false,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), StepError> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(StepError::InvalidScheme(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.t_final.is_finite() && self.t_final > 0.0) {
            return Err(StepError::InvalidScheme(format!(
                "T must be positive, got {}",
                self.t_final
            )));
        }
        if self.dt > self.t_final {
            return Err(StepError::InvalidScheme(format!(
                "dt = {} exceeds T = {}",
                self.dt, self.t_final
            )));
        }
        let ratio = self.t_final / self.dt;
        if (ratio - ratio.round()).abs() > 1e-6 * ratio.max(1.0) {
            return Err(StepError::InvalidScheme(format!(
                "T = {} is not a multiple of dt = {}",
                self.t_final, self.dt
            )));
        }
        self.variant.regularization().map(|_| ())
    }

    /// Number of steps to reach `T`.
    pub fn steps(&self) -> u64 {
        (self.t_final / self.dt).round() as u64
    }
}

/// How a trajectory ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminalStatus {
    Completed,
    BlowUp,
    #[serde(rename = "nan")]
    NaN,
}

/// Precomputed one-step map for a fixed scheme, model, and noise.
#[derive(Clone, Debug)]
pub struct Stepper {
    grid: Arc<TorusGrid>,
    scheme: SchemeConfig,
    params: ModelParams,
    reg: Regularization,
    noise: NoiseOperator,
    trunc: Vec<f64>,
    propagator: Vec<f64>,
}

impl Stepper {
    pub fn new(
        grid: Arc<TorusGrid>,
        scheme: SchemeConfig,
        params: ModelParams,
        noise: NoiseSpec,
    ) -> Result<Self, StepError> {
        scheme.validate()?;
        let reg = scheme.variant.regularization()?;
        let noise = NoiseOperator::new(noise, grid.clone())?;
        let trunc = match &reg.truncation {
            Some(t) => t.mask(&grid),
            None => vec![1.0; grid.spectral_len()],
        };
        let propagator = grid
            .ksq()
            .iter()
            .zip(&trunc)
            .map(|(q, j)| (-q * scheme.dt * j).exp())
            .collect();
        Ok(Stepper {
            grid,
            scheme,
            params,
            reg,
            noise,
            trunc,
            propagator,
        })
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    pub fn scheme(&self) -> &SchemeConfig {
        &self.scheme
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn noise(&self) -> &NoiseOperator {
        &self.noise
    }

    pub fn regularization(&self) -> &Regularization {
        &self.reg
    }

    /// Per-coefficient factor `exp(-|xi|^2 dt J_k)`.
    pub fn propagator(&self) -> &[f64] {
        &self.propagator
    }

    /// Applies `J_k` to every field (identity without truncation).
    pub fn truncate_state(&self, state: &SystemState) -> SystemState {
        let j = |f: &ScalarField| f.map_spectral(|i, c| c * self.trunc[i]);
        let u = std::array::from_fn(|a| j(state.u.component(a)));
        SystemState {
            n: j(&state.n),
            c: j(&state.c),
            u: VelocityField::from_projected(u),
            t: state.t,
        }
    }

    /// Advances `state` (at time `step_index * dt`) by one step using noise increments `dw`.
    pub fn step(
        &self,
        state: &SystemState,
        step_index: u64,
        dw: &[f64],
    ) -> Result<SystemState, StepError> {
        if !state.grid().same_shape(&self.grid) {
            return Err(SpectralError::GridMismatch.into());
        }
        let modes = self.noise.spec().modes;
        if !self.noise.is_off() && dw.len() != modes {
            return Err(StepError::IncrementLength {
                expected: modes,
                found: dw.len(),
            });
        }
        let t_next = (step_index + 1) as f64 * self.scheme.dt;
        let theta = CutoffFactors::evaluate(state, self.reg.cutoff.as_ref());
        let d = match nonlinear_spectral_with(state, &self.params, &self.reg, theta) {
            Ok(d) => d,
            Err(ModelError::BlowUp(_)) => {
                return Err(StepError::NonFinite {
                    t: t_next,
                    status: classify_state(state),
                })
            }
            Err(e) => return Err(e.into()),
        };
        let dt = self.scheme.dt;
        let advance = |old: &[Complex64], tend: &[Complex64], extra: Option<&[Complex64]>| {
            let mut out: Vec<Complex64> = old
                .iter()
                .zip(tend)
                .map(|(v, f)| v + f * dt)
                .collect();
            if let Some(x) = extra {
                for ((o, x), j) in out.iter_mut().zip(x).zip(&self.trunc) {
                    *o += x * j;
                }
            }
            for (o, e) in out.iter_mut().zip(&self.propagator) {
                *o *= e;
            }
            out
        };
        let n = advance(state.n.spectral(), &d.n, None);
        let c = advance(state.c.spectral(), &d.c, None);
        let noise = if self.noise.is_off() {
            None
        } else {
            Some(self.noise.increment(&state.u, dw, theta.u))
        };
        let [mut u0, mut u1, mut u2]: [Vec<Complex64>; 3] = std::array::from_fn(|a| {
            advance(
                state.u.component(a).spectral(),
                &d.u[a],
                noise.as_ref().map(|x| x[a].as_slice()),
            )
        });
        project_in_place(&self.grid, &mut u0, &mut u1, &mut u2);

        if let Some(status) = classify_coeffs([&n, &c, &u0, &u1, &u2]) {
            return Err(StepError::NonFinite { t: t_next, status });
        }
        let g = &self.grid;
        let mut n = ScalarField::from_spectral(g.clone(), n)?;
        let mut c = ScalarField::from_spectral(g.clone(), c)?;
        if self.scheme.clip_negative {
            n = n.map_samples(|v| v.max(0.0));
            c = c.map_samples(|v| v.max(0.0));
        }
        let u = VelocityField::from_projected([
            ScalarField::from_spectral(g.clone(), u0)?,
            ScalarField::from_spectral(g.clone(), u1)?,
            ScalarField::from_spectral(g.clone(), u2)?,
        ]);
        Ok(SystemState { n, c, u, t: t_next })
    }

    /// `dt * sup|u| * N / L`, maximized over axes.
    pub fn cfl_number(&self, state: &SystemState) -> f64 {
        let umax = state
            .u
            .magnitude_squared()
            .into_iter()
            .fold(0.0, f64::max)
            .sqrt();
        let dims = self.grid.dims();
        let lens = self.grid.lengths();
        (0..3)
            .map(|a| self.scheme.dt * umax * dims[a] as f64 / lens[a])
            .fold(0.0, f64::max)
    }
}

/// CFL number above which a warning is recorded.
pub const CFL_WARNING: f64 = 0.5;

fn classify_coeffs(fields: [&[Complex64]; 5]) -> Option<TerminalStatus> {
    let mut status = None;
    for c in fields.iter().flat_map(|f| f.iter()) {
        if c.re.is_nan() || c.im.is_nan() {
            return Some(TerminalStatus::NaN);
        }
        if c.re.is_infinite() || c.im.is_infinite() {
            status = Some(TerminalStatus::BlowUp);
        }
    }
    status
}

fn classify_state(state: &SystemState) -> TerminalStatus {
    let comps = [
        state.n.spectral(),
        state.c.spectral(),
        state.u.component(0).spectral(),
        state.u.component(1).spectral(),
        state.u.component(2).spectral(),
    ];
    classify_coeffs(comps).unwrap_or(TerminalStatus::BlowUp)
}

/// Single step with a freshly assembled [`Stepper`].
pub fn step(
    state: &SystemState,
    scheme: &SchemeConfig,
    params: &ModelParams,
    noise: &NoiseSpec,
    dw: &[f64],
) -> Result<SystemState, StepError> {
    let stepper = Stepper::new(state.grid().clone(), *scheme, params.clone(), noise.clone())?;
    let index = (state.t / scheme.dt).round() as u64;
    stepper.step(state, index, dw)
}

/// Output cadence of [`run`].
#[derive(Clone, Debug)]
pub struct RunOptions {
    /// Keep a snapshot every this many steps (0 keeps none besides the final state).
    pub output_every: u64,
    /// Diagnostics record every this many steps (0 disables records).
    pub diag_every: u64,
    pub diagnostics: Option<DiagnosticsContext>,
}

impl RunOptions {
    pub fn final_only() -> Self {
        RunOptions {
            output_every: 0,
            diag_every: 0,
            diagnostics: None,
        }
    }

    /// Records every step with the default floor and the stepper's noise.
    pub fn per_step_diagnostics(stepper: &Stepper) -> Self {
        RunOptions {
            output_every: 0,
            diag_every: 1,
            diagnostics: Some(DiagnosticsContext {
                params: stepper.params.clone(),
                eps: stepper.scheme.variant.eps(),
                floor: Default::default(),
                noise: Some(stepper.noise.clone()),
            }),
        }
    }
}

/// Result of a run.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub snapshots: Vec<SystemState>,
    pub records: Vec<DiagnosticsRecord>,
    pub status: TerminalStatus,
    pub failure_time: Option<f64>,
    pub warnings: Vec<String>,
    /// Last finite state and its step index.
    pub final_state: SystemState,
    pub final_step: u64,
    /// CRC-32 over the bit patterns of every noise increment consumed.
    pub noise_checksum: u32,
}

/// Advances `initial` (at step `start_step`) to step `end_step` along `path`.
///
/// Snapshots and records are taken at steps that are multiples of their cadence,
/// including `start_step` itself. Budget residuals are filled over the record window.
pub fn run(
    stepper: &Stepper,
    initial: &SystemState,
    path: &BrownianPath,
    start_step: u64,
    end_step: u64,
    opts: &RunOptions,
) -> Result<Trajectory, StepError> {
    let mut state = initial.clone();
    let mut snapshots = Vec::new();
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    let mut crc = crc32fast::Hasher::new();
    let mut cfl_warned = false;
    let modes = stepper.noise.spec().modes;
    let due = |every: u64, s: u64| every > 0 && s % every == 0;

    let mut observe = |state: &SystemState,
                       s: u64,
                       snapshots: &mut Vec<SystemState>,
                       records: &mut Vec<DiagnosticsRecord>,
                       warnings: &mut Vec<String>| {
        if due(opts.output_every, s) {
            snapshots.push(state.clone());
        }
        if due(opts.diag_every, s) {
            if let Some(ctx) = &opts.diagnostics {
                match diagnostics::record(state, ctx) {
                    Ok(r) => records.push(r),
                    Err(e) => warnings.push(format!("t = {}: diagnostics skipped: {e}", state.t)),
                }
            }
            if !cfl_warned {
                let cfl = stepper.cfl_number(state);
                if cfl > CFL_WARNING {
                    cfl_warned = true;
                    warnings.push(format!(
                        "t = {}: CFL number {cfl:.3} exceeds {CFL_WARNING}",
                        state.t
                    ));
                }
            }
        }
    };

    observe(&state, start_step, &mut snapshots, &mut records, &mut warnings);
    let mut status = TerminalStatus::Completed;
    let mut failure_time = None;
    let mut s = start_step;
    while s < end_step {
        let dw = if stepper.noise.is_off() {
            Vec::new()
        } else {
            let inc = path.increment(s, modes);
            for v in &inc.values {
                crc.update(&v.to_bits().to_le_bytes());
            }
            inc.values
        };
        match stepper.step(&state, s, &dw) {
            Ok(next) => state = next,
            Err(StepError::NonFinite { t, status: st }) => {
                status = st;
                failure_time = Some(t);
                break;
            }
            Err(e) => return Err(e),
        }
        s += 1;
        observe(&state, s, &mut snapshots, &mut records, &mut warnings);
    }
    diagnostics::fill_budget_residuals(&mut records);
    Ok(Trajectory {
        snapshots,
        records,
        status,
        failure_time,
        warnings,
        final_state: state,
        final_step: s,
        noise_checksum: crc.finalize(),
    })
}
