//! Entropy-energy functionals, identity and inequality verifiers, budget terms, and monitors.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelParams, SystemState, TamingSpec};
use crate::noise::NoiseOperator;
use crate::spectral::{
    bessel_norm, gradient, hessian_entry, inner_product, laplacian, mollify, FieldComponents,
    ScalarField, SpectralError, VelocityField,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("positivity violated: min {field} = {min}")]
    Positivity { field: &'static str, min: f64 },
    #[error("floor must lie in (0, 1e-6], got {0}")]
    InvalidFloor(f64),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Lower bound `delta` used inside logarithms, square roots, and reciprocals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FloorPolicy {
    delta: f64,
}

impl FloorPolicy {
    pub fn new(delta: f64) -> Result<Self, DiagnosticsError> {
        if delta > 0.0 && delta <= 1e-6 {
            Ok(FloorPolicy { delta })
        } else {
            Err(DiagnosticsError::InvalidFloor(delta))
        }
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

impl Default for FloorPolicy {
    fn default() -> Self {
        FloorPolicy { delta: 1e-12 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FComponents {
    /// `int (n+1) ln(n+1)`.
    pub entropy: f64,
    /// `||grad sqrt c||^2`.
    pub grad_sqrt_c: f64,
    /// `||u||^2`.
    pub u_sq: f64,
}

impl FComponents {
    pub fn total(&self) -> f64 {
        self.entropy + self.grad_sqrt_c + self.u_sq
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GComponents {
    /// `||grad sqrt(n+1)||^2`.
    pub grad_sqrt_n: f64,
    /// `int c |D^2 ln c|^2`.
    pub log_hessian: f64,
    /// `int |rho n| |grad sqrt c|^2`.
    pub chemo: f64,
    /// `||grad u||^2`.
    pub grad_u: f64,
    /// `||u||_{L^4}^4`.
    pub u_quartic: f64,
}

impl GComponents {
    pub fn total(&self) -> f64 {
        self.grad_sqrt_n + self.log_hessian + self.chemo + self.grad_u + self.u_quartic
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Extrema {
    pub min_n: f64,
    pub min_c: f64,
    pub c_linf: f64,
    pub n_l1: f64,
    pub c_l1: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SobolevMonitor {
    pub n_h1: f64,
    /// `||Delta n||^2`.
    pub n_h2_integrand: f64,
    pub c_h2: f64,
    /// `||grad Delta c||^2`.
    pub c_h3_integrand: f64,
    pub u_h1: f64,
    /// `||Delta u||^2`.
    pub u_h2_integrand: f64,
}

/// Balanced quantities and their predicted time derivatives at one instant.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BudgetTerms {
    pub c_sq: f64,
    pub c_rate: f64,
    pub n_entropy: f64,
    pub n_rate: f64,
    pub u_sq: f64,
    pub u_rate: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BudgetResiduals {
    pub c: f64,
    pub n_entropy: f64,
    pub u: f64,
    /// Relative residual of the tamed-pairing decomposition on the current velocity.
    pub tamed_pairing: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub f: FComponents,
    pub g: GComponents,
    pub n_l1: f64,
    pub n_h1: f64,
    pub c_l1: f64,
    pub c_linf: f64,
    pub c_h2: f64,
    pub u_h1: f64,
    pub min_n: f64,
    pub min_c: f64,
    pub residuals: BudgetResiduals,
    pub floored: u64,
    pub budget: BudgetTerms,
}

impl DiagnosticsRecord {
    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }

    pub const COLUMNS: [&'static str; 24] = [
        "t",
        "F_entropy",
        "F_gradsqrtc",
        "F_u2",
        "F_total",
        "G_gradsqrtn",
        "G_loghessc",
        "G_chemo",
        "G_gradu",
        "G_u4",
        "G_total",
        "n_L1",
        "n_H1",
        "c_L1",
        "c_Linf",
        "c_H2",
        "u_H1",
        "min_n",
        "min_c",
        "res_c_L2",
        "res_n_entropy",
        "res_u_energy",
        "res_tamed_pairing",
        "floored",
    ];

    /// Values in [`Self::COLUMNS`] order.
    pub fn values(&self) -> [f64; 24] {
        [
            self.t,
            self.f.entropy,
            self.f.grad_sqrt_c,
            self.f.u_sq,
            self.f.total(),
            self.g.grad_sqrt_n,
            self.g.log_hessian,
            self.g.chemo,
            self.g.grad_u,
            self.g.u_quartic,
            self.g.total(),
            self.n_l1,
            self.n_h1,
            self.c_l1,
            self.c_linf,
            self.c_h2,
            self.u_h1,
            self.min_n,
            self.min_c,
            self.residuals.c,
            self.residuals.n_entropy,
            self.residuals.u,
            self.residuals.tamed_pairing,
            self.floored as f64,
        ]
    }
}

fn quad(grid_cell: f64, v: impl Iterator<Item = f64>) -> f64 {
    v.sum::<f64>() * grid_cell
}

/// `int |grad f|^2` as `V sum w |xi|^2 |f_hat|^2`.
fn dirichlet(f: &ScalarField) -> f64 {
    let grid = f.grid();
    let n2h = grid.half_len();
    let s: f64 = f
        .spectral()
        .iter()
        .zip(grid.ksq())
        .enumerate()
        .map(|(i, (c, q))| grid.mode_weight(i % n2h) * q * c.norm_sqr())
        .sum();
    s * grid.volume()
}

fn l2_sq<F: FieldComponents + ?Sized>(f: &F) -> f64 {
    crate::spectral::bessel_norm_sq(f, 0.into()).unwrap_or(f64::NAN)
}

/// Pointwise `c`, `grad c`, and `D^2 c` with the quantities built from them.
struct LogHessian {
    /// `c |D^2 ln c|^2`.
    c_hess_log_sq: Vec<f64>,
    /// `|grad c|^2`.
    grad_sq: Vec<f64>,
    lap: Vec<f64>,
    c: Vec<f64>,
}

const PAIRS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)];

fn log_hessian_fields(c: &ScalarField, floor: f64) -> (LogHessian, u64) {
    let grad = gradient(c);
    let hess: Vec<ScalarField> = PAIRS.iter().map(|&(i, j)| hessian_entry(c, i, j)).collect();
    let cs = c.samples();
    let len = cs.len();
    let mut out = LogHessian {
        c_hess_log_sq: vec![0.0; len],
        grad_sq: vec![0.0; len],
        lap: vec![0.0; len],
        c: vec![0.0; len],
    };
    let mut floored = 0;
    let g: [&[f64]; 3] = std::array::from_fn(|a| grad[a].samples());
    let h: Vec<&[f64]> = hess.iter().map(|f| f.samples()).collect();
    for p in 0..len {
        let mut cv = cs[p];
        if cv < floor {
            cv = floor;
            floored += 1;
        }
        let gv = [g[0][p], g[1][p], g[2][p]];
        let mut sum = 0.0;
        for (k, &(i, j)) in PAIRS.iter().enumerate() {
            let e = h[k][p] / cv - gv[i] * gv[j] / (cv * cv);
            let mult = if i == j { 1.0 } else { 2.0 };
            sum += mult * e * e;
        }
        out.c_hess_log_sq[p] = cv * sum;
        out.grad_sq[p] = gv[0] * gv[0] + gv[1] * gv[1] + gv[2] * gv[2];
        out.lap[p] = h[0][p] + h[1][p] + h[2][p];
        out.c[p] = cv;
    }
    (out, floored)
}

fn require_positive(c: &ScalarField, floor: &FloorPolicy) -> Result<(), DiagnosticsError> {
    let min = c.min();
    if c.is_finite() && min >= 10.0 * floor.delta() {
        Ok(())
    } else {
        Err(DiagnosticsError::Positivity { field: "c", min })
    }
}

/// Both sides of `1/2 int c^-2 |grad c|^2 Delta c - int c^-1 |Delta c|^2 = -int c |D^2 ln c|^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IdentityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub relative_residual: f64,
}

pub fn verify_log_hessian_identity(
    c: &ScalarField,
    floor: &FloorPolicy,
) -> Result<IdentityCheck, DiagnosticsError> {
    require_positive(c, floor)?;
    let (lh, _) = log_hessian_fields(c, floor.delta());
    let dv = c.grid().cell_volume();
    let lhs = quad(
        dv,
        (0..lh.c.len()).map(|p| {
            let cv = lh.c[p];
            0.5 * lh.grad_sq[p] * lh.lap[p] / (cv * cv) - lh.lap[p] * lh.lap[p] / cv
        }),
    );
    let rhs = -quad(dv, lh.c_hess_log_sq.iter().copied());
    Ok(IdentityCheck {
        lhs,
        rhs,
        relative_residual: (lhs - rhs).abs() / (lhs.abs() + rhs.abs() + 1.0),
    })
}

/// `int c^-3 |grad c|^4 <= 25 int c |D^2 ln c|^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct InequalityCheck {
    pub lhs: f64,
    pub rhs25: f64,
    pub margin: f64,
}

impl InequalityCheck {
    pub fn holds(&self) -> bool {
        self.margin >= -1e-8 * self.rhs25
    }
}

pub fn verify_gradient_quartic_inequality(
    c: &ScalarField,
    floor: &FloorPolicy,
) -> Result<InequalityCheck, DiagnosticsError> {
    require_positive(c, floor)?;
    let (lh, _) = log_hessian_fields(c, floor.delta());
    let dv = c.grid().cell_volume();
    let lhs = quad(
        dv,
        (0..lh.c.len()).map(|p| lh.grad_sq[p] * lh.grad_sq[p] / lh.c[p].powi(3)),
    );
    let rhs25 = 25.0 * quad(dv, lh.c_hess_log_sq.iter().copied());
    Ok(InequalityCheck {
        lhs,
        rhs25,
        margin: rhs25 - lhs,
    })
}

/// Empirical ratio `(int c^-3 |grad c|^4 + int c^-1 |D^2 c|^2) / int c |D^2 ln c|^2`.
/// Returns 0 for a constant field.
pub fn log_hessian_control_ratio(
    c: &ScalarField,
    floor: &FloorPolicy,
) -> Result<f64, DiagnosticsError> {
    require_positive(c, floor)?;
    let (lh, _) = log_hessian_fields(c, floor.delta());
    let hess: Vec<ScalarField> = PAIRS.iter().map(|&(i, j)| hessian_entry(c, i, j)).collect();
    let dv = c.grid().cell_volume();
    let d2 = quad(
        dv,
        (0..lh.c.len()).map(|p| {
            let s: f64 = PAIRS
                .iter()
                .enumerate()
                .map(|(k, &(i, j))| {
                    let v = hess[k].samples()[p];
                    if i == j { v * v } else { 2.0 * v * v }
                })
                .sum();
            s / lh.c[p]
        }),
    );
    let quartic = quad(
        dv,
        (0..lh.c.len()).map(|p| lh.grad_sq[p] * lh.grad_sq[p] / lh.c[p].powi(3)),
    );
    let denom = quad(dv, lh.c_hess_log_sq.iter().copied());
    Ok(if denom == 0.0 { 0.0 } else { (quartic + d2) / denom })
}

/// The tamed pairing `(g(|u|^2) u, Delta u)` against its integration-by-parts decomposition
/// `-int |u|^2 |grad u|^2 - 2 sum_i int <u, d_i u>^2 + 2 sum_i int g1'(|u|^2) <u, d_i u>^2 + int g1(|u|^2) |grad u|^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PairingCheck {
    pub pairing: f64,
    pub decomposition: f64,
    pub relative_residual: f64,
    /// `(g u, Delta u) + int |u|^2 |grad u|^2`.
    pub bound_lhs: f64,
    /// `(N + 1) ||grad u||^2`.
    pub bound_rhs: f64,
}

impl PairingCheck {
    pub fn bound_holds(&self) -> bool {
        self.bound_lhs <= self.bound_rhs * (1.0 + 1e-10) + 1e-12
    }
}

pub fn tamed_pairing(u: &VelocityField, taming: &TamingSpec) -> PairingCheck {
    let grads: [[ScalarField; 3]; 3] = std::array::from_fn(|a| gradient(u.component(a)));
    let laps: [ScalarField; 3] = std::array::from_fn(|a| laplacian(u.component(a)));
    tamed_pairing_from(u, &grads, &laps, taming)
}

fn tamed_pairing_from(
    u: &VelocityField,
    grads: &[[ScalarField; 3]; 3],
    laps: &[ScalarField; 3],
    taming: &TamingSpec,
) -> PairingCheck {
    let us: [&[f64]; 3] = std::array::from_fn(|a| u.component(a).samples());
    let len = us[0].len();
    let (mut pairing, mut dec, mut quart_grad, mut grad_sq_total) = (0.0, 0.0, 0.0, 0.0);
    for p in 0..len {
        let uv = [us[0][p], us[1][p], us[2][p]];
        let r = uv[0] * uv[0] + uv[1] * uv[1] + uv[2] * uv[2];
        let g = taming.g_unchecked(r);
        let g1 = taming.g1_unchecked(r);
        let g1p = taming.g1_prime_unchecked(r);
        let mut grad_sq = 0.0;
        let mut proj_sq = 0.0;
        for i in 0..3 {
            let d = [grads[0][i].samples()[p], grads[1][i].samples()[p], grads[2][i].samples()[p]];
            let dot = uv[0] * d[0] + uv[1] * d[1] + uv[2] * d[2];
            proj_sq += dot * dot;
            grad_sq += d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
        }
        let lap_dot = (0..3).map(|a| uv[a] * laps[a].samples()[p]).sum::<f64>();
        pairing += g * lap_dot;
        dec += -r * grad_sq - 2.0 * proj_sq + 2.0 * g1p * proj_sq + g1 * grad_sq;
        quart_grad += r * grad_sq;
        grad_sq_total += grad_sq;
    }
    let dv = u.grid().cell_volume();
    let (pairing, dec, quart_grad, grad_sq_total) =
        (pairing * dv, dec * dv, quart_grad * dv, grad_sq_total * dv);
    let scale = pairing.abs().max(dec.abs()).max(quart_grad);
    PairingCheck {
        pairing,
        decomposition: dec,
        relative_residual: if scale == 0.0 {
            0.0
        } else {
            (pairing - dec).abs() / scale
        },
        bound_lhs: pairing + quart_grad,
        bound_rhs: taming.dissipativity_constant() * grad_sq_total,
    }
}

pub fn monitor_extrema_and_mass(state: &SystemState) -> Extrema {
    let dv = state.grid().cell_volume();
    Extrema {
        min_n: state.n.min(),
        min_c: state.c.min(),
        c_linf: state.c.max_abs(),
        n_l1: quad(dv, state.n.samples().iter().map(|v| v.abs())),
        c_l1: quad(dv, state.c.samples().iter().map(|v| v.abs())),
    }
}

pub fn monitor_sobolev(state: &SystemState) -> SobolevMonitor {
    let norm = |f: &dyn Fn() -> Result<f64, SpectralError>| f().unwrap_or(f64::NAN);
    let bilap = |f: &ScalarField| {
        let grid = f.grid();
        let n2h = grid.half_len();
        grid.volume()
            * f.spectral()
                .iter()
                .zip(grid.ksq())
                .enumerate()
                .map(|(i, (c, q))| grid.mode_weight(i % n2h) * q * q * c.norm_sqr())
                .sum::<f64>()
    };
    let trilap = |f: &ScalarField| {
        let grid = f.grid();
        let n2h = grid.half_len();
        grid.volume()
            * f.spectral()
                .iter()
                .zip(grid.ksq())
                .enumerate()
                .map(|(i, (c, q))| grid.mode_weight(i % n2h) * q * q * q * c.norm_sqr())
                .sum::<f64>()
    };
    SobolevMonitor {
        n_h1: norm(&|| bessel_norm(&state.n, 1.into())),
        n_h2_integrand: bilap(&state.n),
        c_h2: norm(&|| bessel_norm(&state.c, 2.into())),
        c_h3_integrand: trilap(&state.c),
        u_h1: norm(&|| bessel_norm(&state.u, 1.into())),
        u_h2_integrand: state.u.components().iter().map(bilap).sum(),
    }
}

fn check_f_preconditions(state: &SystemState, floor: &FloorPolicy) -> Result<(), DiagnosticsError> {
    let min_n = state.n.min();
    if !(state.n.is_finite() && min_n >= -1.0 + floor.delta()) {
        return Err(DiagnosticsError::Positivity { field: "n", min: min_n });
    }
    let min_c = state.c.min();
    if !(state.c.is_finite() && min_c >= -floor.delta()) {
        return Err(DiagnosticsError::Positivity { field: "c", min: min_c });
    }
    Ok(())
}

fn entropy_parts(state: &SystemState, grad_c: &[ScalarField; 3], delta: f64) -> (FComponents, u64) {
    let dv = state.grid().cell_volume();
    let mut floored = 0;
    let mut entropy = 0.0;
    for &n in state.n.samples() {
        let mut m = n + 1.0;
        if m < delta {
            m = delta;
            floored += 1;
        }
        entropy += m * m.ln();
    }
    let cs = state.c.samples();
    let mut gsc = 0.0;
    for p in 0..cs.len() {
        let mut c = cs[p];
        if c < delta {
            c = delta;
            floored += 1;
        }
        let g2: f64 = (0..3).map(|a| grad_c[a].samples()[p].powi(2)).sum();
        gsc += g2 / (4.0 * c);
    }
    (
        FComponents {
            entropy: entropy * dv,
            grad_sqrt_c: gsc * dv,
            u_sq: l2_sq(&state.u),
        },
        floored,
    )
}

/// Entropy functional components `(int (n+1) ln(n+1), ||grad sqrt c||^2, ||u||^2)`.
pub fn entropy_f(state: &SystemState, floor: &FloorPolicy) -> Result<FComponents, DiagnosticsError> {
    check_f_preconditions(state, floor)?;
    Ok(entropy_parts(state, &gradient(&state.c), floor.delta()).0)
}

/// Dissipation functional components; the chemotactic term uses `n` mollified at width `eps`.
pub fn dissipation_g(
    state: &SystemState,
    eps: f64,
    floor: &FloorPolicy,
) -> Result<GComponents, DiagnosticsError> {
    check_f_preconditions(state, floor)?;
    let grad_u: [[ScalarField; 3]; 3] = std::array::from_fn(|a| gradient(state.u.component(a)));
    let rho_n = mollify(&state.n, eps)?;
    Ok(dissipation_parts(state, &gradient(&state.n), &grad_u, &rho_n, floor.delta()).0)
}

fn dissipation_parts(
    state: &SystemState,
    grad_n: &[ScalarField; 3],
    grad_u: &[[ScalarField; 3]; 3],
    rho_n: &ScalarField,
    delta: f64,
) -> (GComponents, u64) {
    let dv = state.grid().cell_volume();
    let (lh, mut floored) = log_hessian_fields(&state.c, delta);
    let ns = state.n.samples();
    let rn = rho_n.samples();
    let mut gsn = 0.0;
    let mut chemo = 0.0;
    for p in 0..ns.len() {
        let mut m = ns[p] + 1.0;
        if m < delta {
            m = delta;
            floored += 1;
        }
        let g2: f64 = (0..3).map(|a| grad_n[a].samples()[p].powi(2)).sum();
        gsn += g2 / (4.0 * m);
        chemo += rn[p].abs() * lh.grad_sq[p] / (4.0 * lh.c[p]);
    }
    let mut grad_u_sq = 0.0;
    for row in grad_u {
        for d in row {
            grad_u_sq += d.samples().iter().map(|v| v * v).sum::<f64>();
        }
    }
    let u4 = state
        .u
        .magnitude_squared()
        .iter()
        .map(|r| r * r)
        .sum::<f64>();
    (
        GComponents {
            grad_sqrt_n: gsn * dv,
            log_hessian: quad(dv, lh.c_hess_log_sq.iter().copied()),
            chemo: chemo * dv,
            grad_u: grad_u_sq * dv,
            u_quartic: u4 * dv,
        },
        floored,
    )
}

/// Everything a full diagnostics record needs besides the state.
#[derive(Clone, Debug)]
pub struct DiagnosticsContext {
    pub params: ModelParams,
    pub eps: f64,
    pub floor: FloorPolicy,
    pub noise: Option<NoiseOperator>,
}

/// Full record at one instant. Floors are applied silently and counted in `floored`;
/// budget residuals are left at zero and filled in by [`fill_budget_residuals`].
pub fn record(state: &SystemState, ctx: &DiagnosticsContext) -> Result<DiagnosticsRecord, DiagnosticsError> {
    let delta = ctx.floor.delta();
    let grid = state.grid();
    let dv = grid.cell_volume();
    let grad_n = gradient(&state.n);
    let grad_c = gradient(&state.c);
    let grad_u: [[ScalarField; 3]; 3] = std::array::from_fn(|a| gradient(state.u.component(a)));
    let lap_u: [ScalarField; 3] = std::array::from_fn(|a| laplacian(state.u.component(a)));
    let rho_n = mollify(&state.n, ctx.eps)?;
    let rho_c = mollify(&state.c, ctx.eps)?;

    let (f, fl1) = entropy_parts(state, &grad_c, delta);
    let (g, fl2) = dissipation_parts(state, &grad_n, &grad_u, &rho_n, delta);
    let ext = monitor_extrema_and_mass(state);
    let pairing = tamed_pairing_from(&state.u, &grad_u, &lap_u, &ctx.params.taming);

    // budget terms
    let a = ctx.params.logistic.a();
    let ns = state.n.samples();
    let cs = state.c.samples();
    let rn = rho_n.samples();
    let lap_rc = laplacian(&rho_c);
    let lrc = lap_rc.samples();
    let (mut cn, mut logistic, mut lap_log) = (0.0, 0.0, 0.0);
    for p in 0..ns.len() {
        let n = ns[p];
        let m = (n + 1.0).max(delta);
        let l1 = 1.0 + m.ln();
        cn += cs[p] * cs[p] * rn[p];
        logistic += l1 * (-a * n - n * n * n + (1.0 + a) * n * n);
        lap_log += lrc[p] * m.ln();
    }
    let grad_n_dot_grad_rc = {
        let grid = state.n.grid();
        let n2h = grid.half_len();
        grid.volume()
            * state
                .n
                .spectral()
                .iter()
                .zip(rho_c.spectral())
                .zip(grid.ksq())
                .enumerate()
                .map(|(i, ((x, y), q))| grid.mode_weight(i % n2h) * q * (x.conj() * y).re)
                .sum::<f64>()
    };
    let c_rate = -2.0 * dirichlet(&state.c) - 2.0 * cn * dv;
    let n_rate = -4.0 * g.grad_sqrt_n + logistic * dv + grad_n_dot_grad_rc + lap_log * dv;

    let grad_phi = ctx.params.potential.grad();
    let buoy: [ScalarField; 3] = std::array::from_fn(|k| {
        let s = ns.iter().zip(grad_phi[k].samples()).map(|(n, g)| n * g).collect();
        ScalarField::from_samples(grid.clone(), s).expect("grid length")
    });
    let buoy = [
        mollify(&buoy[0], ctx.eps)?,
        mollify(&buoy[1], ctx.eps)?,
        mollify(&buoy[2], ctx.eps)?,
    ];
    let forcing = inner_product(&buoy, &state.u)?;
    let tamed = {
        let mag = state.u.magnitude_squared();
        quad(dv, mag.iter().map(|&r| ctx.params.taming.g_unchecked(r) * r))
    };
    let ito = ctx
        .noise
        .as_ref()
        .map(|op| op.ito_correction(&state.u))
        .unwrap_or(0.0);
    let u_dir: f64 = state.u.components().iter().map(dirichlet).sum();
    let u_rate = -2.0 * u_dir - 2.0 * tamed + 2.0 * forcing + ito;

    Ok(DiagnosticsRecord {
        t: state.t,
        f,
        g,
        n_l1: ext.n_l1,
        n_h1: bessel_norm(&state.n, 1.into())?,
        c_l1: ext.c_l1,
        c_linf: ext.c_linf,
        c_h2: bessel_norm(&state.c, 2.into())?,
        u_h1: bessel_norm(&state.u, 1.into())?,
        min_n: ext.min_n,
        min_c: ext.min_c,
        residuals: BudgetResiduals {
            tamed_pairing: pairing.relative_residual,
            ..Default::default()
        },
        floored: fl1 + fl2,
        budget: BudgetTerms {
            c_sq: l2_sq(&state.c),
            c_rate,
            n_entropy: f.entropy,
            n_rate,
            u_sq: f.u_sq,
            u_rate,
        },
    })
}

/// Forward-difference residuals `(Q_{m+1} - Q_m)/h - rate_m`, stored on record `m+1`.
pub fn fill_budget_residuals(records: &mut [DiagnosticsRecord]) {
    for m in 1..records.len() {
        let (prev, cur) = (records[m - 1].budget, records[m].budget);
        let h = records[m].t - records[m - 1].t;
        let r = &mut records[m].residuals;
        r.c = (cur.c_sq - prev.c_sq) / h - prev.c_rate;
        r.n_entropy = (cur.n_entropy - prev.n_entropy) / h - prev.n_rate;
        r.u = (cur.u_sq - prev.u_sq) / h - prev.u_rate;
    }
}

/// Residual time series `(t, c, n_entropy, u, tamed_pairing)` of a record window.
pub fn budget_residuals(records: &[DiagnosticsRecord]) -> Vec<(f64, BudgetResiduals)> {
    let mut window = records.to_vec();
    fill_budget_residuals(&mut window);
    window.iter().map(|r| (r.t, r.residuals)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{leray_project, TorusGrid};
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn grid(n: usize) -> Arc<TorusGrid> {
        TorusGrid::cubic(n, 2.0 * PI).unwrap()
    }

    fn state(n: ScalarField, c: ScalarField, u: VelocityField) -> SystemState {
        SystemState::new(n, c, u, 0.0).unwrap()
    }

    #[test]
    fn trivial_entropy_values() {
        let g = grid(8);
        let fl = FloorPolicy::default();
        let s = state(
            ScalarField::zeros(g.clone()),
            ScalarField::constant(g.clone(), 1.0),
            VelocityField::zeros(g.clone()),
        );
        let f = entropy_f(&s, &fl).unwrap();
        assert_eq!(f.total(), 0.0);
        let e = std::f64::consts::E;
        let s = state(
            ScalarField::constant(g.clone(), e - 1.0),
            ScalarField::constant(g.clone(), 1.0),
            VelocityField::zeros(g),
        );
        let f = entropy_f(&s, &fl).unwrap();
        assert!((f.entropy - e * (2.0 * PI).powi(3)).abs() < 1e-10);
    }

    #[test]
    fn preconditions_are_typed() {
        let g = grid(8);
        let s = state(
            ScalarField::constant(g.clone(), -2.0),
            ScalarField::constant(g.clone(), 1.0),
            VelocityField::zeros(g),
        );
        assert!(matches!(
            entropy_f(&s, &FloorPolicy::default()),
            Err(DiagnosticsError::Positivity { field: "n", .. })
        ));
        assert!(FloorPolicy::new(1e-3).is_err());
    }

    #[test]
    fn constants_have_zero_dissipation() {
        let g = grid(8);
        let s = state(
            ScalarField::zeros(g.clone()),
            ScalarField::constant(g.clone(), 2.0),
            VelocityField::zeros(g.clone()),
        );
        let gc = dissipation_g(&s, 0.1, &FloorPolicy::default()).unwrap();
        assert_eq!(gc.total(), 0.0);
        let c = ScalarField::constant(g, 3.0);
        let id = verify_log_hessian_identity(&c, &FloorPolicy::default()).unwrap();
        assert_eq!((id.lhs, id.rhs), (0.0, 0.0));
        let iq = verify_gradient_quartic_inequality(&c, &FloorPolicy::default()).unwrap();
        assert_eq!(iq.margin, 0.0);
    }

    #[test]
    fn pairing_decomposition_and_bound() {
        let g = grid(32);
        let u = leray_project([
            ScalarField::from_fn(g.clone(), |[x, y, z]| 1.4 * x.sin() * y.cos() * z.cos()),
            ScalarField::from_fn(g.clone(), |[x, y, z]| -1.4 * x.cos() * y.sin() * z.cos()),
            ScalarField::from_fn(g.clone(), |[x, y, _]| 0.4 * (x + y).sin()),
        ])
        .unwrap();
        let chk = tamed_pairing(&u, &TamingSpec::default());
        assert!(chk.relative_residual < 2e-3, "{chk:?}");
        assert!(chk.bound_holds(), "{chk:?}");
    }

    #[test]
    fn extrema_of_constant() {
        let g = grid(8);
        let s = state(
            ScalarField::zeros(g.clone()),
            ScalarField::constant(g.clone(), 2.0),
            VelocityField::zeros(g),
        );
        let e = monitor_extrema_and_mass(&s);
        assert_eq!(e.c_linf, 2.0);
        assert!((e.c_l1 - 2.0 * (2.0 * PI).powi(3)).abs() < 1e-10);
    }
}
