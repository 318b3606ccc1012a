use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{
    FieldComponents, Multipliable, ScalarField, SobolevIndex, SpectralError, TorusGrid,
    VelocityField,
};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Anti-aliasing treatment for pseudo-spectral products.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DealiasRule {
    #[default]
    TwoThirds,
    PadDouble,
    None,
}

/// `H^s` norm `(V * sum (1 + |xi|^2)^s |f_hat|^2)^{1/2}`, root-sum-of-squares over components.
pub fn bessel_norm<F: FieldComponents + ?Sized>(
    f: &F,
    s: SobolevIndex,
) -> Result<f64, SpectralError> {
    Ok(bessel_norm_sq(f, s)?.sqrt())
}

pub fn bessel_norm_sq<F: FieldComponents + ?Sized>(
    f: &F,
    s: SobolevIndex,
) -> Result<f64, SpectralError> {
    let s = s.value();
    let mut total = 0.0;
    for comp in f.components() {
        comp.ensure_finite()?;
        let grid = comp.grid();
        let ksq = grid.ksq();
        let n2h = grid.half_len();
        let mut acc = 0.0;
        for (idx, c) in comp.spectral().iter().enumerate() {
            let w = grid.mode_weight(idx % n2h);
            let m = if s == 0.0 { 1.0 } else { (1.0 + ksq[idx]).powf(s) };
            acc += w * m * c.norm_sqr();
        }
        total += acc * grid.volume();
    }
    if total.is_finite() {
        Ok(total)
    } else {
        Err(SpectralError::InvalidField)
    }
}

/// Spectral `L^2` inner product `sum_a int f_a g_a`.
pub fn inner_product<F, G>(f: &F, g: &G) -> Result<f64, SpectralError>
where
    F: FieldComponents + ?Sized,
    G: FieldComponents + ?Sized,
{
    let (fc, gc) = (f.components(), g.components());
    if fc.len() != gc.len() {
        return Err(SpectralError::ComponentMismatch);
    }
    let mut total = 0.0;
    for (a, b) in fc.iter().zip(gc) {
        a.check_grid(b)?;
        let grid = a.grid();
        let n2h = grid.half_len();
        let acc: f64 = a
            .spectral()
            .iter()
            .zip(b.spectral())
            .enumerate()
            .map(|(i, (x, y))| grid.mode_weight(i % n2h) * (x * y.conj()).re)
            .sum();
        total += acc * grid.volume();
    }
    Ok(total)
}

/// Grid quadrature `int f g` evaluated on samples.
pub fn quadrature_inner(f: &ScalarField, g: &ScalarField) -> Result<f64, SpectralError> {
    f.check_grid(g)?;
    let s: f64 = f.samples().iter().zip(g.samples()).map(|(a, b)| a * b).sum();
    Ok(s * f.grid().cell_volume())
}

/// Which derivative [`apply_derivative`] evaluates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Derivative {
    Gradient,
    Laplacian,
    HessianEntry(usize, usize),
}

#[derive(Clone, Debug)]
pub enum DerivativeOutput {
    Scalar(ScalarField),
    Vector([ScalarField; 3]),
}

pub fn apply_derivative(
    f: &ScalarField,
    which: Derivative,
) -> Result<DerivativeOutput, SpectralError> {
    f.ensure_finite()?;
    Ok(match which {
        Derivative::Gradient => DerivativeOutput::Vector(gradient(f)),
        Derivative::Laplacian => DerivativeOutput::Scalar(laplacian(f)),
        Derivative::HessianEntry(i, j) => {
            if i > 2 || j > 2 {
                return Err(SpectralError::InvalidAxis(i.max(j)));
            }
            DerivativeOutput::Scalar(hessian_entry(f, i, j))
        }
    })
}

/// `d f / d x_axis` via `i xi_axis`; the Nyquist mode is dropped so the result stays real.
pub fn partial(f: &ScalarField, axis: usize) -> ScalarField {
    let grid = f.grid().clone();
    let kd = grid.derivative_wavenumbers(axis);
    f.map_spectral(|idx, c| {
        let (i0, i1, i2) = grid.spectral_index(idx);
        let k = match axis {
            0 => kd[i0],
            1 => kd[i1],
            _ => kd[i2],
        };
        I * k * c
    })
}

pub fn gradient(f: &ScalarField) -> [ScalarField; 3] {
    std::array::from_fn(|a| partial(f, a))
}

pub fn laplacian(f: &ScalarField) -> ScalarField {
    f.apply_multiplier(|ksq| -ksq)
}

pub fn hessian_entry(f: &ScalarField, i: usize, j: usize) -> ScalarField {
    let grid = f.grid().clone();
    f.map_spectral(|idx, c| {
        let ix = grid.spectral_index(idx);
        let pick = |axis: usize, table: &[f64]| match axis {
            0 => table[ix.0],
            1 => table[ix.1],
            _ => table[ix.2],
        };
        let m = if i == j {
            let k = pick(i, grid.wavenumbers(i));
            -k * k
        } else {
            -pick(i, grid.derivative_wavenumbers(i)) * pick(j, grid.derivative_wavenumbers(j))
        };
        c * m
    })
}

/// Spectral divergence `sum_a i xi_a u_hat_a`.
pub fn divergence<F: FieldComponents + ?Sized>(u: &F) -> Result<ScalarField, SpectralError> {
    let comps = u.components();
    if comps.len() != 3 {
        return Err(SpectralError::ComponentMismatch);
    }
    comps[0].check_grid(&comps[1])?;
    comps[0].check_grid(&comps[2])?;
    let grid = comps[0].grid().clone();
    let (s0, s1, s2) = (comps[0].spectral(), comps[1].spectral(), comps[2].spectral());
    let coeffs = (0..grid.spectral_len())
        .map(|idx| {
            let (i0, i1, i2) = grid.spectral_index(idx);
            I * (grid.derivative_wavenumbers(0)[i0] * s0[idx]
                + grid.derivative_wavenumbers(1)[i1] * s1[idx]
                + grid.derivative_wavenumbers(2)[i2] * s2[idx])
        })
        .collect();
    ScalarField::from_spectral(grid, coeffs)
}

/// Helmholtz-Leray projection onto divergence-free fields.
///
/// Per mode `u_hat <- u_hat - xi (xi . u_hat) / |xi|^2` with the derivative
/// wavenumbers, so the spectral divergence of the output vanishes. Modes whose
/// divergence is already at rounding level are left untouched, which makes the
/// projection exactly idempotent.
pub fn leray_project(u: [ScalarField; 3]) -> Result<VelocityField, SpectralError> {
    u[0].check_grid(&u[1])?;
    u[0].check_grid(&u[2])?;
    let grid = u[0].grid().clone();
    let mut c0 = u[0].spectral().to_vec();
    let mut c1 = u[1].spectral().to_vec();
    let mut c2 = u[2].spectral().to_vec();
    project_in_place(&grid, &mut c0, &mut c1, &mut c2);
    Ok(VelocityField::from_projected([
        ScalarField::from_spectral(grid.clone(), c0)?,
        ScalarField::from_spectral(grid.clone(), c1)?,
        ScalarField::from_spectral(grid, c2)?,
    ]))
}

pub(crate) fn project_in_place(
    grid: &TorusGrid,
    c0: &mut [Complex64],
    c1: &mut [Complex64],
    c2: &mut [Complex64],
) {
    let (k0, k1, k2) = (
        grid.derivative_wavenumbers(0),
        grid.derivative_wavenumbers(1),
        grid.derivative_wavenumbers(2),
    );
    for idx in 0..grid.spectral_len() {
        let (i0, i1, i2) = grid.spectral_index(idx);
        let (x0, x1, x2) = (k0[i0], k1[i1], k2[i2]);
        let kk = x0 * x0 + x1 * x1 + x2 * x2;
        if kk == 0.0 {
            continue;
        }
        let dot = x0 * c0[idx] + x1 * c1[idx] + x2 * c2[idx];
        let scale = x0.abs() * c0[idx].norm() + x1.abs() * c1[idx].norm() + x2.abs() * c2[idx].norm();
        if dot.norm() <= 8.0 * f64::EPSILON * scale {
            continue;
        }
        let w = dot / kk;
        c0[idx] -= x0 * w;
        c1[idx] -= x1 * w;
        c2[idx] -= x2 * w;
    }
}

/// Ball (or annulus) frequency truncation `J_k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub k: f64,
    #[serde(default)]
    pub annulus: bool,
}

impl Truncation {
    pub fn new(k: f64, annulus: bool) -> Result<Self, SpectralError> {
        if !(k.is_finite() && k > 0.0) {
            return Err(SpectralError::InvalidParameter(format!(
                "truncation radius must be positive, got {k}"
            )));
        }
        Ok(Truncation { k, annulus })
    }

    #[inline]
    pub fn keeps(&self, ksq: f64) -> bool {
        if ksq > self.k * self.k {
            return false;
        }
        !(self.annulus && ksq < 1.0 / (self.k * self.k))
    }

    /// 0/1 indicator per stored coefficient.
    pub fn mask(&self, grid: &TorusGrid) -> Vec<f64> {
        grid.ksq()
            .iter()
            .map(|&q| if self.keeps(q) { 1.0 } else { 0.0 })
            .collect()
    }
}

pub fn truncate<F: Multipliable>(f: &F, k: f64, annulus: bool) -> Result<F, SpectralError> {
    let t = Truncation::new(k, annulus)?;
    let ksq = f.field_grid().ksq().to_vec();
    Ok(f.with_multiplier(&|i| if t.keeps(ksq[i]) { 1.0 } else { 0.0 }))
}

/// Heat-kernel mollifier `exp(-eps^2 |xi|^2)`; `eps = 0` is the identity.
pub fn mollify<F: Multipliable + Clone>(f: &F, eps: f64) -> Result<F, SpectralError> {
    if !(eps.is_finite() && eps >= 0.0) {
        return Err(SpectralError::InvalidParameter(format!(
            "mollifier width must be nonnegative, got {eps}"
        )));
    }
    if eps == 0.0 {
        return Ok(f.clone());
    }
    let e2 = eps * eps;
    let ksq = f.field_grid().ksq().to_vec();
    Ok(f.with_multiplier(&|i| (-e2 * ksq[i]).exp()))
}

/// Zeros every coefficient outside the two-thirds retention cube.
pub fn two_thirds<F: Multipliable>(f: &F) -> F {
    let mask = f.field_grid().dealias_mask().to_vec();
    f.with_multiplier(&|i| if mask[i] { 1.0 } else { 0.0 })
}

pub(crate) fn mask_in_place(grid: &TorusGrid, coeffs: &mut [Complex64]) {
    for (c, &keep) in coeffs.iter_mut().zip(grid.dealias_mask()) {
        if !keep {
            *c = Complex64::new(0.0, 0.0);
        }
    }
}

pub(crate) fn pointwise_product(f: &ScalarField, g: &ScalarField) -> ScalarField {
    let samples = f
        .samples()
        .iter()
        .zip(g.samples())
        .map(|(a, b)| a * b)
        .collect();
    ScalarField::from_samples(f.grid().clone(), samples).expect("same grid")
}

/// Pointwise product `f g` with the selected anti-aliasing treatment.
///
/// * `two-thirds`: inputs and output restricted to the retention cube.
/// * `pad-double`: inputs zero-padded to a `2N` grid, product formed there,
///   result truncated back to the non-Nyquist modes of the original grid.
/// * `none`: plain collocation product.
pub fn dealiased_product(
    f: &ScalarField,
    g: &ScalarField,
    rule: DealiasRule,
) -> Result<ScalarField, SpectralError> {
    f.check_grid(g)?;
    f.ensure_finite()?;
    g.ensure_finite()?;
    Ok(match rule {
        DealiasRule::None => pointwise_product(f, g),
        DealiasRule::TwoThirds => {
            let p = pointwise_product(&two_thirds(f), &two_thirds(g));
            two_thirds(&p)
        }
        DealiasRule::PadDouble => {
            let fine = f.grid().padded();
            let fp = ScalarField::from_spectral(fine.clone(), pad(f.grid(), &fine, f.spectral()))?;
            let gp = ScalarField::from_spectral(fine.clone(), pad(f.grid(), &fine, g.spectral()))?;
            let prod = pointwise_product(&fp, &gp);
            ScalarField::from_spectral(f.grid().clone(), unpad(f.grid(), &fine, prod.spectral()))?
        }
    })
}

fn is_nyquist(grid: &TorusGrid, i: (usize, usize, usize)) -> bool {
    let d = grid.dims();
    grid.modes(0)[i.0].unsigned_abs() as usize == d[0] / 2
        || grid.modes(1)[i.1].unsigned_abs() as usize == d[1] / 2
        || grid.modes(2)[i.2].unsigned_abs() as usize == d[2] / 2
}

fn padded_index(coarse: &TorusGrid, fine: &TorusGrid, i: (usize, usize, usize)) -> usize {
    let fd = fine.dims();
    let wrap = |m: i64, n: usize| m.rem_euclid(n as i64) as usize;
    let j0 = wrap(coarse.modes(0)[i.0], fd[0]);
    let j1 = wrap(coarse.modes(1)[i.1], fd[1]);
    let j2 = coarse.modes(2)[i.2] as usize;
    (j0 * fd[1] + j1) * fine.half_len() + j2
}

pub(crate) fn pad(coarse: &TorusGrid, fine: &TorusGrid, coeffs: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); fine.spectral_len()];
    for (idx, &c) in coeffs.iter().enumerate() {
        let i = coarse.spectral_index(idx);
        if !is_nyquist(coarse, i) {
            out[padded_index(coarse, fine, i)] = c;
        }
    }
    out
}

pub(crate) fn unpad(coarse: &TorusGrid, fine: &TorusGrid, coeffs: &[Complex64]) -> Vec<Complex64> {
    (0..coarse.spectral_len())
        .map(|idx| {
            let i = coarse.spectral_index(idx);
            if is_nyquist(coarse, i) {
                Complex64::new(0.0, 0.0)
            } else {
                coeffs[padded_index(coarse, fine, i)]
            }
        })
        .collect()
}
