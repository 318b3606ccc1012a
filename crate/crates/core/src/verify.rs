//! Self-verification suite: taming construction, identities and inequalities on random
//! fields, noise bounds, and exactness of the spectral layer.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    tamed_pairing, verify_gradient_quartic_inequality, verify_log_hessian_identity, FloorPolicy,
};
use crate::initial::{random_positive_field, random_velocity};
use crate::model::TamingSpec;
use crate::noise::{hilbert_schmidt_identity, lipschitz_identity, NoiseKind, NoiseSpec};
use crate::spectral::{
    bessel_norm, bessel_norm_sq, divergence, leray_project, ScalarField, SobolevIndex,
    TorusGrid,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Worst observed value of the checked quantity.
    pub worst: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn push(&mut self, name: &str, worst: f64, tolerance: f64, detail: String) {
        self.checks.push(CheckResult {
            name: name.into(),
            passed: worst <= tolerance,
            worst,
            tolerance,
            detail,
        });
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub grid: usize,
    pub fields: usize,
    pub seed: u64,
    pub taming_samples: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            grid: 32,
            fields: 100,
            seed: 0,
            taming_samples: 100_000,
        }
    }
}

/// Worst jump, coefficient residual, and sampled range violations of the taming function.
pub fn check_taming(spec: &TamingSpec, samples: usize) -> [(f64, String); 3] {
    let jumps = spec.junction_jumps();
    let jump = jumps.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()));
    let coeff = spec
        .constraint_residuals()
        .iter()
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut violation: f64 = 0.0;
    for i in 0..samples {
        let r = 10.0 * i as f64 / (samples - 1) as f64;
        let g = spec.g(r).expect("nonnegative");
        let gp = spec.g_prime(r).expect("nonnegative");
        violation = violation
            .max(-gp)
            .max(gp - 2.0)
            .max(g.abs() - r);
    }
    [
        (jump, format!("jumps at N and N+1: {jumps:?}")),
        (coeff, format!("residuals {:?}", spec.constraint_residuals())),
        (violation.max(0.0), format!("{samples} samples on [0, 10]")),
    ]
}

/// Runs every check; `fields` random band-limited fields are drawn per identity.
pub fn run_verification(opts: &VerifyOptions) -> VerifyReport {
    let mut report = VerifyReport::default();
    let grid = TorusGrid::cubic(opts.grid, 2.0 * PI).expect("valid verification grid");
    let floor = FloorPolicy::default();

    for threshold in [1, 3] {
        let spec = TamingSpec::new(threshold).expect("default coefficients");
        let [jump, coeff, range] = check_taming(&spec, opts.taming_samples);
        report.push(&format!("taming continuity N={threshold}"), jump.0, 1e-12, jump.1);
        report.push(&format!("taming coefficients N={threshold}"), coeff.0, 1e-12, coeff.1);
        report.push(&format!("taming range N={threshold}"), range.0, 0.0, range.1);
    }

    let constant = ScalarField::constant(grid.clone(), 1.7);
    let id = verify_log_hessian_identity(&constant, &floor).expect("positive constant");
    report.push(
        "log-Hessian identity on constants",
        id.lhs.abs().max(id.rhs.abs()),
        0.0,
        format!("{id:?}"),
    );
    let mut worst_id: f64 = 0.0;
    let mut worst_margin: f64 = f64::NEG_INFINITY;
    for f in 0..opts.fields {
        let c = verification_field(&grid, opts.seed, f as u64);
        let id = verify_log_hessian_identity(&c, &floor).expect("positive field");
        worst_id = worst_id.max(id.relative_residual);
        let q = verify_gradient_quartic_inequality(&c, &floor).expect("positive field");
        worst_margin = worst_margin.max(-q.margin / q.rhs25);
    }
    report.push(
        "log-Hessian identity",
        worst_id,
        1e-6,
        format!("{} random fields", opts.fields),
    );
    report.push(
        "gradient-quartic inequality",
        worst_margin,
        1e-8,
        format!("worst -margin/rhs over {} random fields", opts.fields),
    );

    let (u1, u2) = (
        random_velocity(&grid, opts.seed ^ 0x55, 6, 2.0),
        random_velocity(&grid, opts.seed ^ 0xaa, 6, 2.0),
    );
    let mut worst_noise: f64 = 0.0;
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
            let idx = SobolevIndex::from(s);
            let hs = hilbert_schmidt_identity(&u1, &spec, idx).expect("valid spec");
            let lip = lipschitz_identity(&u1, &u2, &spec, idx).expect("valid spec");
            for chk in [hs, lip] {
                let err = if chk.lhs == chk.rhs { 0.0 } else { chk.relative_error() };
                let excess = (chk.lhs - chk.bound * (1.0 + 1e-12)).max(0.0);
                worst_noise = worst_noise.max(err).max(excess);
            }
        }
    }
    report.push(
        "noise growth and Lipschitz identities",
        worst_noise,
        1e-12,
        "all kinds, s in {0, 1}".into(),
    );

    let pairing = tamed_pairing(&u1.scale(2.0), &TamingSpec::default());
    report.push(
        "tamed pairing bound",
        (pairing.bound_lhs - pairing.bound_rhs).max(0.0),
        1e-10 * pairing.bound_rhs.abs().max(1.0),
        format!("{pairing:?}"),
    );

    report.push(
        "Leray idempotence and annihilation",
        leray_errors(&grid, opts.seed),
        1e-12,
        "relative to the field H1 norm".into(),
    );
    report.push(
        "Parseval",
        parseval_error(&grid, opts.seed),
        1e-12,
        "grid quadrature against the spectral sum".into(),
    );
    report
}

/// Positive band-limited field `f` of a verification run: modes up to `N/4`, range `[0.5, 1.5]`.
pub fn verification_field(grid: &Arc<TorusGrid>, seed: u64, index: u64) -> ScalarField {
    let max_mode = (grid.dims()[0] / 4) as i64;
    random_positive_field(grid, seed.wrapping_mul(1_000_003).wrapping_add(index), max_mode, 0.5, 1.5)
}

fn leray_errors(grid: &Arc<TorusGrid>, seed: u64) -> f64 {
    let u = random_velocity(grid, seed ^ 0x1e5a, 8, 1.0);
    let again = leray_project(std::array::from_fn(|a| u.component(a).clone())).expect("finite");
    let idem = bessel_norm(&again.sub(&u).expect("same grid"), 0.into()).expect("finite");
    let scale = bessel_norm(&u, 1.into()).expect("finite");
    let p = ScalarField::from_fn(grid.clone(), |[x, y, z]| (x + 2.0 * y).sin() * z.cos());
    let grad = crate::spectral::gradient(&p);
    let annihilated = leray_project(grad.clone()).expect("finite");
    let ann = bessel_norm(&annihilated, 0.into()).expect("finite")
        / bessel_norm(&grad, 0.into()).expect("finite");
    let div = bessel_norm(&divergence(&u).expect("finite"), 0.into()).expect("finite");
    (idem / scale).max(ann).max(div / scale)
}

fn parseval_error(grid: &Arc<TorusGrid>, seed: u64) -> f64 {
    let f = crate::initial::filtered_noise(grid, seed ^ 0x9a7, 12, 0.5);
    let quad: f64 = f.samples().iter().map(|v| v * v).sum::<f64>() * grid.cell_volume();
    let spec = bessel_norm_sq(&f, 0.into()).expect("finite");
    (quad - spec).abs() / spec
}
