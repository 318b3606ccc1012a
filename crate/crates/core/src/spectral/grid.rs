use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, OnceLock};

use super::fft::Fft3;
use super::SpectralError;

/// Periodic box `[0, L0) x [0, L1) x [0, L2)` sampled on an even tensor grid.
///
/// Spectral data uses the real-to-complex half layout: axes 0 and 1 carry the
/// full DFT ordering, axis 2 only the non-negative modes `0..=n2/2`. All
/// wavenumber-dependent tables are built once here and shared by every field
/// living on the grid.
pub struct TorusGrid {
    dims: [usize; 3],
    lengths: [f64; 3],
    /// Signed wavenumbers per axis in DFT order (axis 2: half range).
    wavenumbers: [Vec<f64>; 3],
    /// Wavenumbers used for odd derivatives; the Nyquist entry is zero.
    derivative_wavenumbers: [Vec<f64>; 3],
    /// Integer mode numbers per axis in DFT order (axis 2: half range).
    modes: [Vec<i64>; 3],
    ksq: Vec<f64>,
    dealias_mask: Vec<bool>,
    fft: Fft3,
    padded: OnceLock<Arc<TorusGrid>>,
}

impl TorusGrid {
    pub fn new(dims: [usize; 3], lengths: [f64; 3]) -> Result<Arc<Self>, SpectralError> {
        for axis in 0..3 {
            let n = dims[axis];
            if n < 4 || n % 2 != 0 {
                return Err(SpectralError::InvalidGrid(format!(
                    "points per axis must be even and at least 4, axis {axis} has {n}"
                )));
            }
            let l = lengths[axis];
            if !(l.is_finite() && l > 0.0) {
                return Err(SpectralError::InvalidGrid(format!(
                    "box length must be positive and finite, axis {axis} has {l}"
                )));
            }
        }

        let modes: [Vec<i64>; 3] = [
            full_modes(dims[0]),
            full_modes(dims[1]),
            (0..=(dims[2] / 2) as i64).collect(),
        ];
        let wavenumbers: [Vec<f64>; 3] = std::array::from_fn(|a| {
            let base = 2.0 * PI / lengths[a];
            modes[a].iter().map(|&m| base * m as f64).collect()
        });
        let derivative_wavenumbers: [Vec<f64>; 3] = std::array::from_fn(|a| {
            let nyq = (dims[a] / 2) as i64;
            modes[a]
                .iter()
                .zip(&wavenumbers[a])
                .map(|(&m, &k)| if m.abs() == nyq { 0.0 } else { k })
                .collect()
        });

        let n2h = dims[2] / 2 + 1;
        let spectral_len = dims[0] * dims[1] * n2h;
        let mut ksq = Vec::with_capacity(spectral_len);
        let mut dealias_mask = Vec::with_capacity(spectral_len);
        let cut: [i64; 3] = std::array::from_fn(|a| ((dims[a] - 1) / 3) as i64);
        for i0 in 0..dims[0] {
            for i1 in 0..dims[1] {
                for i2 in 0..n2h {
                    let k0 = wavenumbers[0][i0];
                    let k1 = wavenumbers[1][i1];
                    let k2 = wavenumbers[2][i2];
                    ksq.push(k0 * k0 + k1 * k1 + k2 * k2);
                    dealias_mask.push(
                        modes[0][i0].abs() <= cut[0]
                            && modes[1][i1].abs() <= cut[1]
                            && modes[2][i2].abs() <= cut[2],
                    );
                }
            }
        }

        Ok(Arc::new(TorusGrid {
            dims,
            lengths,
            wavenumbers,
            derivative_wavenumbers,
            modes,
            ksq,
            dealias_mask,
            fft: Fft3::new(dims),
            padded: OnceLock::new(),
        }))
    }

    /// Cubic grid `n^3` on the box `[0, length)^3`.
    pub fn cubic(n: usize, length: f64) -> Result<Arc<Self>, SpectralError> {
        Self::new([n; 3], [length; 3])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn lengths(&self) -> [f64; 3] {
        self.lengths
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of stored complex coefficients (half layout).
    pub fn spectral_len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.half_len()
    }

    /// Extent of axis 2 in the half layout.
    pub fn half_len(&self) -> usize {
        self.dims[2] / 2 + 1
    }

    pub fn volume(&self) -> f64 {
        self.lengths.iter().product()
    }

    /// Quadrature weight `(L/N)^3` of a single grid point.
    pub fn cell_volume(&self) -> f64 {
        self.volume() / self.len() as f64
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.lengths[axis] / self.dims[axis] as f64
    }

    pub fn wavenumbers(&self, axis: usize) -> &[f64] {
        &self.wavenumbers[axis]
    }

    pub fn derivative_wavenumbers(&self, axis: usize) -> &[f64] {
        &self.derivative_wavenumbers[axis]
    }

    pub fn modes(&self, axis: usize) -> &[i64] {
        &self.modes[axis]
    }

    /// `|xi|^2` per stored coefficient.
    pub fn ksq(&self) -> &[f64] {
        &self.ksq
    }

    /// Two-thirds retention mask per stored coefficient: `|m_a| <= (N_a - 1) / 3` on every axis.
    pub fn dealias_mask(&self) -> &[bool] {
        &self.dealias_mask
    }

    /// Smallest nonzero wavenumber magnitude along axis 0, used as the shell unit.
    pub fn fundamental(&self) -> f64 {
        2.0 * PI / self.lengths[0]
    }

    /// Parseval weight of a stored coefficient: interior modes of the half axis
    /// stand for themselves and their conjugate partner.
    #[inline]
    pub fn mode_weight(&self, i2: usize) -> f64 {
        if i2 == 0 || (self.dims[2] % 2 == 0 && i2 == self.dims[2] / 2) {
            1.0
        } else {
            2.0
        }
    }

    /// Splits a flat spectral index into `(i0, i1, i2)`.
    #[inline]
    pub fn spectral_index(&self, idx: usize) -> (usize, usize, usize) {
        let n2h = self.half_len();
        let i2 = idx % n2h;
        let rest = idx / n2h;
        (rest / self.dims[1], rest % self.dims[1], i2)
    }

    /// Physical coordinates of a flat sample index.
    #[inline]
    pub fn point(&self, idx: usize) -> [f64; 3] {
        let i2 = idx % self.dims[2];
        let rest = idx / self.dims[2];
        let i1 = rest % self.dims[1];
        let i0 = rest / self.dims[1];
        [
            i0 as f64 * self.spacing(0),
            i1 as f64 * self.spacing(1),
            i2 as f64 * self.spacing(2),
        ]
    }

    pub(crate) fn fft(&self) -> &Fft3 {
        &self.fft
    }

    /// Grid with twice the points per axis on the same box, for padded products.
    pub(crate) fn padded(&self) -> Arc<TorusGrid> {
        self.padded
            .get_or_init(|| {
                TorusGrid::new(
                    [2 * self.dims[0], 2 * self.dims[1], 2 * self.dims[2]],
                    self.lengths,
                )
                .expect("doubling a valid grid stays valid")
            })
            .clone()
    }

    pub fn same_shape(&self, other: &TorusGrid) -> bool {
        std::ptr::eq(self, other) || (self.dims == other.dims && self.lengths == other.lengths)
    }
}

impl fmt::Debug for TorusGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TorusGrid")
            .field("dims", &self.dims)
            .field("lengths", &self.lengths)
            .finish()
    }
}

impl PartialEq for TorusGrid {
    fn eq(&self, other: &Self) -> bool {
        self.same_shape(other)
    }
}

fn full_modes(n: usize) -> Vec<i64> {
    let n = n as i64;
    (0..n)
        .map(|i| if i < n / 2 { i } else { i - n })
        .collect()
}
