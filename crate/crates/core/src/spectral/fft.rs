use std::sync::Arc;

use num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::{Fft, FftPlanner};

/// Real-to-complex 3-D transform on a row-major `n0 x n1 x n2` grid.
///
/// The forward transform is normalized by `1 / (n0 n1 n2)` so that stored
/// coefficients are Fourier-series coefficients; the inverse is unnormalized.
/// Plans are immutable and shared read-only between threads.
pub(crate) struct Fft3 {
    dims: [usize; 3],
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    forward: [Arc<dyn Fft<f64>>; 2],
    inverse: [Arc<dyn Fft<f64>>; 2],
}

impl Fft3 {
    pub(crate) fn new(dims: [usize; 3]) -> Self {
        let mut real = RealFftPlanner::<f64>::new();
        let mut complex = FftPlanner::<f64>::new();
        Fft3 {
            dims,
            r2c: real.plan_fft_forward(dims[2]),
            c2r: real.plan_fft_inverse(dims[2]),
            forward: [
                complex.plan_fft_forward(dims[0]),
                complex.plan_fft_forward(dims[1]),
            ],
            inverse: [
                complex.plan_fft_inverse(dims[0]),
                complex.plan_fft_inverse(dims[1]),
            ],
        }
    }

    fn half(&self) -> usize {
        self.dims[2] / 2 + 1
    }

    pub(crate) fn forward(&self, samples: &[f64]) -> Vec<Complex64> {
        let [n0, n1, n2] = self.dims;
        let n2h = self.half();
        debug_assert_eq!(samples.len(), n0 * n1 * n2);

        let mut out = vec![Complex64::new(0.0, 0.0); n0 * n1 * n2h];
        let mut row = self.r2c.make_input_vec();
        let mut scratch = self.r2c.make_scratch_vec();
        for r in 0..n0 * n1 {
            row.copy_from_slice(&samples[r * n2..(r + 1) * n2]);
            self.r2c
                .process_with_scratch(&mut row, &mut out[r * n2h..(r + 1) * n2h], &mut scratch)
                .expect("buffer sizes come from the plan");
        }

        self.complex_pass(&mut out, false);

        let scale = 1.0 / (n0 * n1 * n2) as f64;
        for c in out.iter_mut() {
            *c *= scale;
        }
        out
    }

    pub(crate) fn inverse(&self, coeffs: &[Complex64]) -> Vec<f64> {
        let [n0, n1, n2] = self.dims;
        let n2h = self.half();
        debug_assert_eq!(coeffs.len(), n0 * n1 * n2h);

        let mut work = coeffs.to_vec();
        self.complex_pass(&mut work, true);

        let mut out = vec![0.0; n0 * n1 * n2];
        let mut scratch = self.c2r.make_scratch_vec();
        for r in 0..n0 * n1 {
            let row = &mut work[r * n2h..(r + 1) * n2h];
            // real output requires real DC and Nyquist entries
            row[0].im = 0.0;
            row[n2h - 1].im = 0.0;
            self.c2r
                .process_with_scratch(row, &mut out[r * n2..(r + 1) * n2], &mut scratch)
                .expect("buffer sizes come from the plan");
        }
        out
    }

    /// Complex transforms along axes 1 and 0 of the half-layout array.
    fn complex_pass(&self, data: &mut [Complex64], inverse: bool) {
        let [n0, n1, _] = self.dims;
        let n2h = self.half();
        let plans = if inverse { &self.inverse } else { &self.forward };
        let order: [usize; 2] = if inverse { [0, 1] } else { [1, 0] };

        for axis in order {
            let plan = &plans[axis];
            let mut scratch =
                vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
            match axis {
                1 => {
                    // lines along axis 1 within each i0-plane
                    let mut buf = vec![Complex64::new(0.0, 0.0); n1 * n2h];
                    for i0 in 0..n0 {
                        let plane = &mut data[i0 * n1 * n2h..(i0 + 1) * n1 * n2h];
                        for i1 in 0..n1 {
                            for i2 in 0..n2h {
                                buf[i2 * n1 + i1] = plane[i1 * n2h + i2];
                            }
                        }
                        plan.process_with_scratch(&mut buf, &mut scratch);
                        for i1 in 0..n1 {
                            for i2 in 0..n2h {
                                plane[i1 * n2h + i2] = buf[i2 * n1 + i1];
                            }
                        }
                    }
                }
                _ => {
                    let stride = n1 * n2h;
                    let mut buf = vec![Complex64::new(0.0, 0.0); n0 * stride];
                    for i0 in 0..n0 {
                        for j in 0..stride {
                            buf[j * n0 + i0] = data[i0 * stride + j];
                        }
                    }
                    plan.process_with_scratch(&mut buf, &mut scratch);
                    for i0 in 0..n0 {
                        for j in 0..stride {
                            data[i0 * stride + j] = buf[j * n0 + i0];
                        }
                    }
                }
            }
        }
    }
}
