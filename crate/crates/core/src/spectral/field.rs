use std::fmt;
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;

use super::{SpectralError, TorusGrid};

/// Real scalar field on a [`TorusGrid`] with a lazily synchronized spectral view.
///
/// A field is created either from grid samples or from half-layout Fourier
/// coefficients; the other representation is computed on first access and
/// cached. Fields are immutable once built.
#[derive(Clone)]
pub struct ScalarField {
    grid: Arc<TorusGrid>,
    samples: OnceLock<Vec<f64>>,
    spectral: OnceLock<Vec<Complex64>>,
}

impl ScalarField {
    pub fn from_samples(grid: Arc<TorusGrid>, samples: Vec<f64>) -> Result<Self, SpectralError> {
        if samples.len() != grid.len() {
            return Err(SpectralError::ShapeMismatch {
                expected: grid.len(),
                found: samples.len(),
            });
        }
        let cell = OnceLock::new();
        let _ = cell.set(samples);
        Ok(ScalarField {
            grid,
            samples: cell,
            spectral: OnceLock::new(),
        })
    }

    pub fn from_spectral(
        grid: Arc<TorusGrid>,
        coeffs: Vec<Complex64>,
    ) -> Result<Self, SpectralError> {
        if coeffs.len() != grid.spectral_len() {
            return Err(SpectralError::ShapeMismatch {
                expected: grid.spectral_len(),
                found: coeffs.len(),
            });
        }
        let cell = OnceLock::new();
        let _ = cell.set(coeffs);
        Ok(ScalarField {
            grid,
            samples: OnceLock::new(),
            spectral: cell,
        })
    }

    /// Samples `f(x, y, z)` at every grid point.
    pub fn from_fn(grid: Arc<TorusGrid>, f: impl Fn([f64; 3]) -> f64) -> Self {
        let samples = (0..grid.len()).map(|i| f(grid.point(i))).collect();
        Self::from_samples(grid, samples).expect("length matches grid")
    }

    pub fn constant(grid: Arc<TorusGrid>, value: f64) -> Self {
        let mut coeffs = vec![Complex64::new(0.0, 0.0); grid.spectral_len()];
        coeffs[0] = Complex64::new(value, 0.0);
        let samples = vec![value; grid.len()];
        let field = Self::from_samples(grid, samples).expect("length matches grid");
        let _ = field.spectral.set(coeffs);
        field
    }

    pub fn zeros(grid: Arc<TorusGrid>) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    pub fn samples(&self) -> &[f64] {
        self.samples
            .get_or_init(|| self.grid.fft().inverse(self.spectral.get().expect("one view is set")))
    }

    pub fn spectral(&self) -> &[Complex64] {
        self.spectral
            .get_or_init(|| self.grid.fft().forward(self.samples.get().expect("one view is set")))
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples();
        self.samples.into_inner().expect("initialized above")
    }

    pub fn into_spectral(self) -> Vec<Complex64> {
        self.spectral();
        self.spectral.into_inner().expect("initialized above")
    }

    pub fn is_finite(&self) -> bool {
        match (self.samples.get(), self.spectral.get()) {
            (Some(s), _) => s.iter().all(|v| v.is_finite()),
            (None, Some(c)) => c.iter().all(|v| v.re.is_finite() && v.im.is_finite()),
            (None, None) => unreachable!("one view is always set"),
        }
    }

    pub(crate) fn ensure_finite(&self) -> Result<(), SpectralError> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(SpectralError::InvalidField)
        }
    }

    /// New field whose coefficients are `m(index) * f_hat(index)`.
    pub fn map_spectral(&self, mut m: impl FnMut(usize, Complex64) -> Complex64) -> ScalarField {
        let coeffs = self
            .spectral()
            .iter()
            .enumerate()
            .map(|(i, &c)| m(i, c))
            .collect();
        ScalarField::from_spectral(self.grid.clone(), coeffs).expect("length preserved")
    }

    /// Pointwise map over samples.
    pub fn map_samples(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        let samples = self.samples().iter().map(|&v| f(v)).collect();
        ScalarField::from_samples(self.grid.clone(), samples).expect("length preserved")
    }

    /// Multiplies every coefficient by a real even multiplier of `|xi|^2`.
    pub fn apply_multiplier(&self, m: impl Fn(f64) -> f64) -> ScalarField {
        let ksq = self.grid.ksq();
        self.map_spectral(|i, c| c * m(ksq[i]))
    }

    pub fn scale(&self, factor: f64) -> ScalarField {
        match self.spectral.get() {
            Some(_) => self.map_spectral(|_, c| c * factor),
            None => self.map_samples(|v| v * factor),
        }
    }

    pub fn add(&self, other: &ScalarField) -> Result<ScalarField, SpectralError> {
        self.check_grid(other)?;
        let coeffs = self
            .spectral()
            .iter()
            .zip(other.spectral())
            .map(|(a, b)| a + b)
            .collect();
        ScalarField::from_spectral(self.grid.clone(), coeffs)
    }

    pub fn sub(&self, other: &ScalarField) -> Result<ScalarField, SpectralError> {
        self.check_grid(other)?;
        let coeffs = self
            .spectral()
            .iter()
            .zip(other.spectral())
            .map(|(a, b)| a - b)
            .collect();
        ScalarField::from_spectral(self.grid.clone(), coeffs)
    }

    pub(crate) fn check_grid(&self, other: &ScalarField) -> Result<(), SpectralError> {
        if self.grid.same_shape(&other.grid) {
            Ok(())
        } else {
            Err(SpectralError::GridMismatch)
        }
    }

    pub fn min(&self) -> f64 {
        self.samples().iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.samples().iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.samples().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Grid quadrature `sum f * (L/N)^3`.
    pub fn integral(&self) -> f64 {
        self.samples().iter().sum::<f64>() * self.grid.cell_volume()
    }

    /// Shifts all samples by whole grid cells (periodic).
    pub fn roll(&self, shift: [usize; 3]) -> ScalarField {
        let [n0, n1, n2] = self.grid.dims();
        let src = self.samples();
        let mut out = vec![0.0; src.len()];
        for i0 in 0..n0 {
            for i1 in 0..n1 {
                for i2 in 0..n2 {
                    let j0 = (i0 + shift[0]) % n0;
                    let j1 = (i1 + shift[1]) % n1;
                    let j2 = (i2 + shift[2]) % n2;
                    out[(j0 * n1 + j1) * n2 + j2] = src[(i0 * n1 + i1) * n2 + i2];
                }
            }
        }
        ScalarField::from_samples(self.grid.clone(), out).expect("length preserved")
    }
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarField")
            .field("grid", &self.grid)
            .field("has_samples", &self.samples.get().is_some())
            .field("has_spectral", &self.spectral.get().is_some())
            .finish()
    }
}

/// Divergence-free velocity field.
///
/// Only produced by the Leray projection or by operations that commute with
/// it (diagonal multipliers, scaling, sums of projected fields).
#[derive(Clone, Debug)]
pub struct VelocityField {
    components: [ScalarField; 3],
}

impl VelocityField {
    pub fn zeros(grid: Arc<TorusGrid>) -> Self {
        VelocityField {
            components: std::array::from_fn(|_| ScalarField::zeros(grid.clone())),
        }
    }

    /// Wraps components already known to be divergence-free.
    pub(crate) fn from_projected(components: [ScalarField; 3]) -> Self {
        VelocityField { components }
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        self.components[0].grid()
    }

    pub fn component(&self, axis: usize) -> &ScalarField {
        &self.components[axis]
    }

    pub fn into_components(self) -> [ScalarField; 3] {
        self.components
    }

    pub fn is_finite(&self) -> bool {
        self.components.iter().all(ScalarField::is_finite)
    }

    /// Scaling and diagonal multipliers keep the field divergence-free.
    pub fn scale(&self, factor: f64) -> VelocityField {
        VelocityField {
            components: std::array::from_fn(|a| self.components[a].scale(factor)),
        }
    }

    pub fn apply_multiplier(&self, m: impl Fn(f64) -> f64) -> VelocityField {
        VelocityField {
            components: std::array::from_fn(|a| self.components[a].apply_multiplier(&m)),
        }
    }

    pub fn add(&self, other: &VelocityField) -> Result<VelocityField, SpectralError> {
        let [a, b, c] = &self.components;
        let [x, y, z] = &other.components;
        Ok(VelocityField {
            components: [a.add(x)?, b.add(y)?, c.add(z)?],
        })
    }

    pub fn sub(&self, other: &VelocityField) -> Result<VelocityField, SpectralError> {
        let [a, b, c] = &self.components;
        let [x, y, z] = &other.components;
        Ok(VelocityField {
            components: [a.sub(x)?, b.sub(y)?, c.sub(z)?],
        })
    }

    pub fn roll(&self, shift: [usize; 3]) -> VelocityField {
        VelocityField {
            components: std::array::from_fn(|a| self.components[a].roll(shift)),
        }
    }

    /// Pointwise `|u|^2` samples.
    pub fn magnitude_squared(&self) -> Vec<f64> {
        let [a, b, c] = &self.components;
        a.samples()
            .iter()
            .zip(b.samples())
            .zip(c.samples())
            .map(|((x, y), z)| x * x + y * y + z * z)
            .collect()
    }
}

/// Uniform access to the scalar components of scalar and vector fields.
pub trait FieldComponents {
    fn components(&self) -> &[ScalarField];

    fn field_grid(&self) -> &Arc<TorusGrid> {
        self.components()[0].grid()
    }
}

impl FieldComponents for ScalarField {
    fn components(&self) -> &[ScalarField] {
        std::slice::from_ref(self)
    }
}

impl FieldComponents for VelocityField {
    fn components(&self) -> &[ScalarField] {
        &self.components
    }
}

impl FieldComponents for [ScalarField; 3] {
    fn components(&self) -> &[ScalarField] {
        self
    }
}

/// Fields that can be rebuilt after a diagonal even Fourier multiplier.
pub trait Multipliable: FieldComponents + Sized {
    fn with_multiplier(&self, m: &dyn Fn(usize) -> f64) -> Self;
}

impl Multipliable for ScalarField {
    fn with_multiplier(&self, m: &dyn Fn(usize) -> f64) -> Self {
        self.map_spectral(|i, c| c * m(i))
    }
}

impl Multipliable for VelocityField {
    fn with_multiplier(&self, m: &dyn Fn(usize) -> f64) -> Self {
        VelocityField {
            components: std::array::from_fn(|a| self.components[a].with_multiplier(m)),
        }
    }
}

/// Sobolev regularity index `s` of the Bessel potential `(I - Delta)^{s/2}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SobolevIndex(f64);

impl SobolevIndex {
    pub fn new(s: f64) -> Result<Self, SpectralError> {
        if s.is_finite() {
            Ok(SobolevIndex(s))
        } else {
            Err(SpectralError::InvalidIndex(s))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl From<i32> for SobolevIndex {
    fn from(s: i32) -> Self {
        SobolevIndex(s as f64)
    }
}
