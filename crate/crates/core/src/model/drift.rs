use std::sync::Arc;

use num_complex::Complex64;

use super::{sup_norm_w1inf, CutoffSpec, ModelError, ModelParams, SystemState};
use crate::spectral::{
    mask_in_place, pad, project_in_place, unpad, DealiasRule, ScalarField, TorusGrid, Truncation,
    VelocityField,
};

/// Regularizations selecting the exact, mollified, or fully truncated drift.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Regularization {
    pub eps: f64,
    pub truncation: Option<Truncation>,
    pub cutoff: Option<CutoffSpec>,
}

impl Regularization {
    pub fn exact() -> Self {
        Self::default()
    }

    pub fn mollified(eps: f64) -> Self {
        Regularization {
            eps,
            ..Self::default()
        }
    }

    pub fn truncated(eps: f64, truncation: Truncation, cutoff: CutoffSpec) -> Self {
        Regularization {
            eps,
            truncation: Some(truncation),
            cutoff: Some(cutoff),
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.eps.is_finite() && self.eps >= 0.0 {
            Ok(())
        } else {
            Err(ModelError::InvalidParameter(format!(
                "mollifier width must be nonnegative, got {}",
                self.eps
            )))
        }
    }
}

/// Time derivatives `(dn, dc, du)`.
#[derive(Clone, Debug)]
pub struct Tendencies {
    pub dn: ScalarField,
    pub dc: ScalarField,
    pub du: VelocityField,
}

/// Cut-off factors of the four governing norms. All equal 1 without a cut-off.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct CutoffFactors {
    pub un: f64,
    pub nc: f64,
    pub n: f64,
    pub u: f64,
}

impl CutoffFactors {
    pub(crate) fn evaluate(state: &SystemState, cutoff: Option<&CutoffSpec>) -> Self {
        match cutoff {
            None => CutoffFactors {
                un: 1.0,
                nc: 1.0,
                n: 1.0,
                u: 1.0,
            },
            Some(spec) => {
                let n = sup_norm_w1inf(&state.n);
                let c = sup_norm_w1inf(&state.c);
                let u = sup_norm_w1inf(&state.u);
                CutoffFactors {
                    un: spec.theta(u + n),
                    nc: spec.theta(n + c),
                    n: spec.theta(n),
                    u: spec.theta(u),
                }
            }
        }
    }
}

/// Grid on which pointwise products are formed, with the transfer rules of a dealias mode.
pub(crate) struct Evaluator<'a> {
    base: &'a Arc<TorusGrid>,
    fine: Arc<TorusGrid>,
    rule: DealiasRule,
}

impl<'a> Evaluator<'a> {
    pub(crate) fn new(base: &'a Arc<TorusGrid>, rule: DealiasRule) -> Self {
        let fine = match rule {
            DealiasRule::PadDouble => base.padded(),
            _ => base.clone(),
        };
        Evaluator { base, fine, rule }
    }

    pub(crate) fn len(&self) -> usize {
        self.fine.len()
    }

    /// Base-grid coefficients to samples on the evaluation grid.
    pub(crate) fn samples(&self, mut coeffs: Vec<Complex64>) -> Vec<f64> {
        match self.rule {
            DealiasRule::None => self.fine.fft().inverse(&coeffs),
            DealiasRule::TwoThirds => {
                mask_in_place(self.base, &mut coeffs);
                self.fine.fft().inverse(&coeffs)
            }
            DealiasRule::PadDouble => {
                let padded = pad(self.base, &self.fine, &coeffs);
                self.fine.fft().inverse(&padded)
            }
        }
    }

    /// Evaluation-grid samples to base-grid coefficients.
    pub(crate) fn coeffs(&self, samples: &[f64]) -> Vec<Complex64> {
        let fine = self.fine.fft().forward(samples);
        match self.rule {
            DealiasRule::None => fine,
            DealiasRule::TwoThirds => {
                let mut out = fine;
                mask_in_place(self.base, &mut out);
                out
            }
            DealiasRule::PadDouble => unpad(self.base, &self.fine, &fine),
        }
    }
}

fn derivative(grid: &TorusGrid, coeffs: &[Complex64], axis: usize) -> Vec<Complex64> {
    let k = grid.derivative_wavenumbers(axis);
    coeffs
        .iter()
        .enumerate()
        .map(|(idx, &c)| {
            let (i0, i1, i2) = grid.spectral_index(idx);
            let kk = k[[i0, i1, i2][axis]];
            Complex64::new(-kk * c.im, kk * c.re)
        })
        .collect()
}

fn multiply(coeffs: &[Complex64], m: &[f64]) -> Vec<Complex64> {
    coeffs.iter().zip(m).map(|(c, w)| c * w).collect()
}

struct Multipliers {
    /// `J_k` indicator (all ones when there is no truncation).
    trunc: Vec<f64>,
    /// `exp(-eps^2 |xi|^2)`.
    moll: Vec<f64>,
}

impl Multipliers {
    fn new(grid: &TorusGrid, reg: &Regularization) -> Self {
        let trunc = match &reg.truncation {
            Some(t) => t.mask(grid),
            None => vec![1.0; grid.spectral_len()],
        };
        let e2 = reg.eps * reg.eps;
        let moll = grid.ksq().iter().map(|q| (-e2 * q).exp()).collect();
        Multipliers { trunc, moll }
    }
}

/// Spectral tendencies split into the diffusive part and the rest.
pub(crate) struct SpectralDrift {
    pub n: Vec<Complex64>,
    pub c: Vec<Complex64>,
    pub u: [Vec<Complex64>; 3],
}

/// Explicit part of the drift (everything except `Delta J_k^2`), in spectral form.
pub(crate) fn nonlinear_spectral(
    state: &SystemState,
    params: &ModelParams,
    reg: &Regularization,
) -> Result<SpectralDrift, ModelError> {
    let theta = CutoffFactors::evaluate(state, reg.cutoff.as_ref());
    nonlinear_spectral_with(state, params, reg, theta)
}

pub(crate) fn nonlinear_spectral_with(
    state: &SystemState,
    params: &ModelParams,
    reg: &Regularization,
    theta: CutoffFactors,
) -> Result<SpectralDrift, ModelError> {
    reg.validate()?;
    let grid = state.grid();
    let ev = Evaluator::new(grid, params.dealias);
    let mult = Multipliers::new(grid, reg);
    let a = params.logistic.a();
    let len = ev.len();

    let n_hat = state.n.spectral();
    let c_hat = state.c.spectral();
    let u_hat: [&[Complex64]; 3] = std::array::from_fn(|i| state.u.component(i).spectral());

    let jn = multiply(n_hat, &mult.trunc);
    let jc = multiply(c_hat, &mult.trunc);
    let ju: [Vec<Complex64>; 3] = std::array::from_fn(|i| multiply(u_hat[i], &mult.trunc));
    let rho_c = multiply(c_hat, &mult.moll);
    let rho_n = multiply(n_hat, &mult.moll);

    let jn_s = ev.samples(jn.clone());
    let jc_s = ev.samples(jc.clone());
    let ju_s: [Vec<f64>; 3] = std::array::from_fn(|i| ev.samples(ju[i].clone()));
    let grad_jn: [Vec<f64>; 3] = std::array::from_fn(|i| ev.samples(derivative(grid, &jn, i)));
    let grad_jc: [Vec<f64>; 3] = std::array::from_fn(|i| ev.samples(derivative(grid, &jc, i)));
    let grad_rc: [Vec<f64>; 3] =
        std::array::from_fn(|i| ev.samples(derivative(grid, &rho_c, i)));
    let lap_rc = ev.samples(
        rho_c
            .iter()
            .zip(grid.ksq())
            .map(|(c, q)| -c * q)
            .collect(),
    );
    let rho_n_s = ev.samples(rho_n);
    let n_s = ev.samples(n_hat.to_vec());
    let grad_phi = params.potential.grad_on(params.dealias);

    let mut nl_n = vec![0.0; len];
    let mut nl_c = vec![0.0; len];
    for p in 0..len {
        let (un, nn, cc) = ([ju_s[0][p], ju_s[1][p], ju_s[2][p]], jn_s[p], jc_s[p]);
        let adv_n = un[0] * grad_jn[0][p] + un[1] * grad_jn[1][p] + un[2] * grad_jn[2][p];
        let adv_c = un[0] * grad_jc[0][p] + un[1] * grad_jc[1][p] + un[2] * grad_jc[2][p];
        let chemo = grad_jn[0][p] * grad_rc[0][p]
            + grad_jn[1][p] * grad_rc[1][p]
            + grad_jn[2][p] * grad_rc[2][p]
            + nn * lap_rc[p];
        let growth = (1.0 + a) * nn * nn - nn * nn * nn;
        nl_n[p] = -theta.un * adv_n - theta.nc * chemo + theta.n * growth;
        nl_c[p] = -theta.un * adv_c - theta.nc * cc * rho_n_s[p];
    }
    drop((grad_jn, grad_jc, grad_rc, lap_rc, rho_n_s));

    // (Ju . grad) Ju + g(|Ju|^2) Ju, one component at a time
    let mut nl_u: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; len]);
    for (axis, out) in nl_u.iter_mut().enumerate() {
        for (b, ub) in ju_s.iter().enumerate() {
            let d = ev.samples(derivative(grid, &ju[axis], b));
            for p in 0..len {
                out[p] += ub[p] * d[p];
            }
        }
    }
    let taming = &params.taming;
    for p in 0..len {
        let r = ju_s[0][p] * ju_s[0][p] + ju_s[1][p] * ju_s[1][p] + ju_s[2][p] * ju_s[2][p];
        let g = taming.g_unchecked(r);
        for axis in 0..3 {
            nl_u[axis][p] = -theta.u * (nl_u[axis][p] + g * ju_s[axis][p]);
        }
    }

    let mut u_out: [Vec<Complex64>; 3] = std::array::from_fn(|axis| {
        let transport = ev.coeffs(&nl_u[axis]);
        let buoy: Vec<f64> = n_s.iter().zip(&grad_phi[axis]).map(|(n, g)| n * g).collect();
        let buoy = ev.coeffs(&buoy);
        transport
            .iter()
            .zip(&buoy)
            .zip(&mult.moll)
            .zip(&mult.trunc)
            .map(|(((t, b), m), j)| (t + b * m * theta.n) * j)
            .collect()
    });
    {
        let [u0, u1, u2] = &mut u_out;
        project_in_place(grid, u0, u1, u2);
    }

    let n_out: Vec<Complex64> = ev
        .coeffs(&nl_n)
        .iter()
        .zip(&jn)
        .zip(&mult.trunc)
        .map(|((nl, jn), j)| nl * j - jn * (theta.n * a))
        .collect();
    let c_out = multiply(&ev.coeffs(&nl_c), &mult.trunc);

    let finite = |v: &[Complex64]| v.iter().all(|c| c.re.is_finite() && c.im.is_finite());
    if !(finite(&n_out) && finite(&c_out) && u_out.iter().all(|v| finite(v))) {
        return Err(ModelError::BlowUp("drift"));
    }
    Ok(SpectralDrift {
        n: n_out,
        c: c_out,
        u: u_out,
    })
}

fn to_tendencies(grid: &Arc<TorusGrid>, d: SpectralDrift) -> Result<Tendencies, ModelError> {
    let [u0, u1, u2] = d.u;
    Ok(Tendencies {
        dn: ScalarField::from_spectral(grid.clone(), d.n)?,
        dc: ScalarField::from_spectral(grid.clone(), d.c)?,
        du: VelocityField::from_projected([
            ScalarField::from_spectral(grid.clone(), u0)?,
            ScalarField::from_spectral(grid.clone(), u1)?,
            ScalarField::from_spectral(grid.clone(), u2)?,
        ]),
    })
}

/// Drift without the diffusion terms.
pub fn nonlinear_drift(
    state: &SystemState,
    params: &ModelParams,
    reg: &Regularization,
) -> Result<Tendencies, ModelError> {
    let d = nonlinear_spectral(state, params, reg)?;
    to_tendencies(state.grid(), d)
}

/// Full drift `Delta J_k^2 (n, c, u) + N(n, c, u)` under the given regularization.
pub fn drift(
    state: &SystemState,
    params: &ModelParams,
    reg: &Regularization,
) -> Result<Tendencies, ModelError> {
    let grid = state.grid();
    let mut d = nonlinear_spectral(state, params, reg)?;
    let trunc = match &reg.truncation {
        Some(t) => t.mask(grid),
        None => vec![1.0; grid.spectral_len()],
    };
    let add_heat = |out: &mut [Complex64], f: &[Complex64]| {
        for (((o, c), q), j) in out.iter_mut().zip(f).zip(grid.ksq()).zip(&trunc) {
            *o += -c * (q * j);
        }
    };
    add_heat(&mut d.n, state.n.spectral());
    add_heat(&mut d.c, state.c.spectral());
    for (axis, out) in d.u.iter_mut().enumerate() {
        add_heat(out, state.u.component(axis).spectral());
    }
    if d.n.iter().chain(&d.c).any(|c| !(c.re.is_finite() && c.im.is_finite())) {
        return Err(ModelError::BlowUp("drift"));
    }
    to_tendencies(grid, d)
}

pub fn drift_exact(state: &SystemState, params: &ModelParams) -> Result<Tendencies, ModelError> {
    drift(state, params, &Regularization::exact())
}

pub fn drift_mollified(
    state: &SystemState,
    params: &ModelParams,
    eps: f64,
) -> Result<Tendencies, ModelError> {
    drift(state, params, &Regularization::mollified(eps))
}

pub fn drift_truncated(
    state: &SystemState,
    params: &ModelParams,
    eps: f64,
    truncation: Truncation,
    cutoff: CutoffSpec,
) -> Result<Tendencies, ModelError> {
    drift(state, params, &Regularization::truncated(eps, truncation, cutoff))
}
