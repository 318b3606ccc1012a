use super::ModelError;

/// Coefficients `(a3, a4, a5, a6)` of the transition derivative
/// `q(t) = a3 t^3 + a4 t^4 + a5 t^5 + a6 t^6` on `[0, 1]`.
///
/// They are the unique solution of `q(1) = 1`, `q'(1) = 0`, `q''(1) = 0`,
/// `int_0^1 q = 1`; `q(0) = q'(0) = q''(0) = 0` hold by construction.
pub const DEFAULT_TRANSITION: [f64; 4] = [80.0, -225.0, 216.0, -70.0];

/// Taming function `g` with threshold `N`:
/// `g = 0` on `[0, N]`, `g(r) = int_0^{r-N} q` on `[N, N+1]`, `g(r) = r - N` beyond.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TamingSpec {
    threshold: u32,
    coefficients: [f64; 4],
}

impl TamingSpec {
    pub fn new(threshold: u32) -> Result<Self, ModelError> {
        Self::with_coefficients(threshold, DEFAULT_TRANSITION)
    }

    pub fn with_coefficients(threshold: u32, coefficients: [f64; 4]) -> Result<Self, ModelError> {
        if threshold == 0 {
            return Err(ModelError::InvalidParameter(
                "tame threshold N must be a positive integer".into(),
            ));
        }
        let spec = TamingSpec {
            threshold,
            coefficients,
        };
        let residuals = spec.constraint_residuals();
        if residuals.iter().any(|r| r.abs() > 1e-12) {
            return Err(ModelError::InvalidParameter(format!(
                "transition polynomial violates its constraints: {residuals:?}"
            )));
        }
        Ok(spec)
    }

    pub fn threshold(&self) -> u32 {
        self.threshold
    }

    pub fn coefficients(&self) -> [f64; 4] {
        self.coefficients
    }

    /// `[q(0), q'(0), q''(0), q(1) - 1, q'(1), q''(1), int q - 1]`.
    pub fn constraint_residuals(&self) -> [f64; 7] {
        [
            self.q(0.0),
            self.dq(0.0),
            self.d2q(0.0),
            self.q(1.0) - 1.0,
            self.dq(1.0),
            self.d2q(1.0),
            self.big_q(1.0) - 1.0,
        ]
    }

    pub fn q(&self, t: f64) -> f64 {
        let [a3, a4, a5, a6] = self.coefficients;
        t * t * t * (a3 + t * (a4 + t * (a5 + t * a6)))
    }

    pub fn dq(&self, t: f64) -> f64 {
        let [a3, a4, a5, a6] = self.coefficients;
        t * t * (3.0 * a3 + t * (4.0 * a4 + t * (5.0 * a5 + t * 6.0 * a6)))
    }

    pub fn d2q(&self, t: f64) -> f64 {
        let [a3, a4, a5, a6] = self.coefficients;
        t * (6.0 * a3 + t * (12.0 * a4 + t * (20.0 * a5 + t * 30.0 * a6)))
    }

    /// `int_0^t q`.
    fn big_q(&self, t: f64) -> f64 {
        let [a3, a4, a5, a6] = self.coefficients;
        let t2 = t * t;
        t2 * t2 * (a3 / 4.0 + t * (a4 / 5.0 + t * (a5 / 6.0 + t * a6 / 7.0)))
    }

    /// `g(r)` without the sign check, for grid loops where `r = |u|^2`.
    #[inline]
    pub(crate) fn g_unchecked(&self, r: f64) -> f64 {
        let t = r - self.threshold as f64;
        if t <= 0.0 {
            0.0
        } else if t >= 1.0 {
            t
        } else {
            self.big_q(t)
        }
    }

    pub fn g(&self, r: f64) -> Result<f64, ModelError> {
        check_argument(r)?;
        Ok(self.g_unchecked(r))
    }

    pub fn g_prime(&self, r: f64) -> Result<f64, ModelError> {
        check_argument(r)?;
        let t = r - self.threshold as f64;
        Ok(if t <= 0.0 {
            0.0
        } else if t >= 1.0 {
            1.0
        } else {
            self.q(t)
        })
    }

    pub fn g_second(&self, r: f64) -> Result<f64, ModelError> {
        check_argument(r)?;
        let t = r - self.threshold as f64;
        Ok(if t <= 0.0 || t >= 1.0 { 0.0 } else { self.dq(t) })
    }

    /// `g1(r) = r - g(r)`.
    pub fn g1(&self, r: f64) -> Result<f64, ModelError> {
        Ok(r - self.g(r)?)
    }

    pub(crate) fn g1_unchecked(&self, r: f64) -> f64 {
        r - self.g_unchecked(r)
    }

    pub(crate) fn g1_prime_unchecked(&self, r: f64) -> f64 {
        let t = r - self.threshold as f64;
        if t <= 0.0 {
            1.0
        } else if t >= 1.0 {
            0.0
        } else {
            1.0 - self.q(t)
        }
    }

    /// Jumps of `(g, g', g'')` between adjacent pieces at `r = N` and `r = N + 1`.
    pub fn junction_jumps(&self) -> [[f64; 3]; 2] {
        let at_n = [self.big_q(0.0), self.q(0.0), self.dq(0.0)];
        let at_n1 = [
            self.big_q(1.0) - 1.0,
            self.q(1.0) - 1.0,
            self.dq(1.0),
        ];
        [at_n, at_n1]
    }

    /// Constant `C_N = N + 1` bounding `|g(r) - r|`.
    pub fn dissipativity_constant(&self) -> f64 {
        self.threshold as f64 + 1.0
    }
}

impl Default for TamingSpec {
    fn default() -> Self {
        TamingSpec {
            threshold: 1,
            coefficients: DEFAULT_TRANSITION,
        }
    }
}

/// Convenience wrapper for [`TamingSpec::g`].
pub fn taming_g(r: f64, spec: &TamingSpec) -> Result<f64, ModelError> {
    spec.g(r)
}

/// Convenience wrapper for [`TamingSpec::g1`].
pub fn taming_g1(r: f64, spec: &TamingSpec) -> Result<f64, ModelError> {
    spec.g1(r)
}

fn check_argument(r: f64) -> Result<(), ModelError> {
    if r >= 0.0 {
        Ok(())
    } else {
        Err(ModelError::NegativeArgument(r))
    }
}
