//! Time-periodic modulation of the bulk modulus inside each resonator.
//!
//! The canonical representation is the Fourier table of the reciprocal
//! modulus, `1/kappa_i(t) = sum_m k_{i,m} exp(-i m Omega t)`. The cosine
//! family `kappa_i(t) = 1 / (1 + eps cos(Omega t + phi))` is built in; any
//! other real trigonometric polynomial can be entered coefficient by
//! coefficient.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::ConfigError;

/// Number of trapezoid nodes used when a period average has no closed form.
pub const QUADRATURE_NODES: usize = 1024;

/// Fourier coefficients `k_m`, `m in [-order, order]`, of a real periodic
/// function.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierSeries {
    order: usize,
    coeffs: Vec<Complex64>,
}

impl FourierSeries {
    /// Builds a series from the non-negative half `k_0, k_1, ..., k_M`; the
    /// negative half follows from `k_{-m} = conj(k_m)`.
    pub fn from_nonnegative(half: &[Complex64]) -> Self {
        assert!(!half.is_empty(), "a Fourier series needs at least k_0");
        let order = half.len() - 1;
        let mut coeffs = vec![Complex64::new(0.0, 0.0); 2 * order + 1];
        // k_0 of a real function is real
        coeffs[order] = Complex64::new(half[0].re, 0.0);
        for (m, c) in half.iter().enumerate().skip(1) {
            coeffs[order + m] = *c;
            coeffs[order - m] = c.conj();
        }
        Self { order, coeffs }
    }

    pub fn constant(value: f64) -> Self {
        Self::from_nonnegative(&[Complex64::new(value, 0.0)])
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// `k_m`; zero outside the stored band.
    pub fn get(&self, m: i64) -> Complex64 {
        if m.unsigned_abs() as usize > self.order {
            Complex64::new(0.0, 0.0)
        } else {
            self.coeffs[(m + self.order as i64) as usize]
        }
    }

    /// Iterates over `(m, k_m)` for the stored band.
    pub fn iter(&self) -> impl Iterator<Item = (i64, Complex64)> + '_ {
        let o = self.order as i64;
        self.coeffs.iter().enumerate().map(move |(idx, c)| (idx as i64 - o, *c))
    }

    /// Synthesises `sum_m k_m exp(-i m omega t)` (real by construction).
    pub fn eval(&self, omega: f64, t: f64) -> f64 {
        self.iter()
            .map(|(m, c)| c * Complex64::from_polar(1.0, -(m as f64) * omega * t))
            .sum::<Complex64>()
            .re
    }

    /// Time derivative of [`FourierSeries::eval`].
    pub fn eval_derivative(&self, omega: f64, t: f64) -> f64 {
        self.iter()
            .map(|(m, c)| {
                c * Complex64::new(0.0, -(m as f64) * omega)
                    * Complex64::from_polar(1.0, -(m as f64) * omega * t)
            })
            .sum::<Complex64>()
            .re
    }
}

/// Fourier table of `1/kappa(t) = 1 + eps cos(Omega t + phi)`.
pub fn fourier_coefficients(eps: f64, phi: f64) -> Result<FourierSeries, ConfigError> {
    if !(0.0..1.0).contains(&eps) || !eps.is_finite() {
        return Err(ConfigError::Amplitude(eps));
    }
    if eps == 0.0 {
        return Ok(FourierSeries::constant(1.0));
    }
    Ok(FourierSeries::from_nonnegative(&[
        Complex64::new(1.0, 0.0),
        Complex64::from_polar(eps / 2.0, -phi),
    ]))
}

/// How a resonator's modulation was specified.
#[derive(Debug, Clone, PartialEq)]
pub enum ModulationShape {
    Cosine { eps: f64, phi: f64 },
    /// Direct coefficient entry; `half` holds `k_0 .. k_M`.
    Fourier { half: Vec<Complex64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModulationEntry {
    pub shape: ModulationShape,
    series: FourierSeries,
}

impl ModulationEntry {
    pub fn cosine(eps: f64, phi: f64) -> Result<Self, ConfigError> {
        if !phi.is_finite() {
            return Err(ConfigError::Malformed(format!("phase must be finite, got {phi}")));
        }
        Ok(Self { series: fourier_coefficients(eps, phi)?, shape: ModulationShape::Cosine { eps, phi } })
    }

    /// Arbitrary trigonometric polynomial for `1/kappa`. `index` is only used
    /// for error reporting.
    pub fn fourier(index: usize, half: Vec<Complex64>) -> Result<Self, ConfigError> {
        if half.is_empty() || half.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(ConfigError::Malformed(format!(
                "Fourier table of resonator {index} must be a nonempty list of finite values"
            )));
        }
        let series = FourierSeries::from_nonnegative(&half);
        // positivity of 1/kappa on a fine grid, scaled to the highest harmonic
        let samples = 64 * (series.order() + 1);
        let positive = (0..samples).all(|s| {
            let theta = 2.0 * PI * s as f64 / samples as f64;
            series.eval(1.0, theta) > 0.0
        });
        if !positive {
            return Err(ConfigError::NonPositiveProfile(index));
        }
        Ok(Self { series, shape: ModulationShape::Fourier { half } })
    }

    pub fn series(&self) -> &FourierSeries {
        &self.series
    }

    pub fn amplitude(&self) -> Option<f64> {
        match self.shape {
            ModulationShape::Cosine { eps, .. } => Some(eps),
            ModulationShape::Fourier { .. } => None,
        }
    }
}

/// Modulation of all resonators at a shared angular frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulationProfile {
    omega: f64,
    entries: Vec<ModulationEntry>,
}

impl ModulationProfile {
    pub fn new(omega: f64, entries: Vec<ModulationEntry>) -> Result<Self, ConfigError> {
        if !(omega > 0.0 && omega.is_finite()) {
            return Err(ConfigError::NonPositive { name: "modulation omega", value: omega });
        }
        Ok(Self { omega, entries })
    }

    /// Cosine modulation with a common amplitude and phases `phi_i = pi / i`
    /// (1-based `i`).
    pub fn uniform_cosine(omega: f64, n: usize, eps: f64) -> Result<Self, ConfigError> {
        let entries = (1..=n)
            .map(|i| ModulationEntry::cosine(eps, PI / i as f64))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(omega, entries)
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn period(&self) -> f64 {
        2.0 * PI / self.omega
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ModulationEntry] {
        &self.entries
    }

    pub fn series(&self, i: usize) -> &FourierSeries {
        self.entries[i].series()
    }

    /// Largest Fourier order over all resonators.
    pub fn max_order(&self) -> usize {
        self.entries.iter().map(|e| e.series.order()).max().unwrap_or(0)
    }

    /// Replaces every entry by a cosine of amplitude `eps`, keeping the phase
    /// of cosine entries (Fourier entries get the default phase `pi / i`).
    pub fn with_amplitude(&self, eps: f64) -> Result<Self, ConfigError> {
        let entries = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let phi = match e.shape {
                    ModulationShape::Cosine { phi, .. } => phi,
                    ModulationShape::Fourier { .. } => PI / (i + 1) as f64,
                };
                ModulationEntry::cosine(eps, phi)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(self.omega, entries)
    }

    /// `1/kappa_i(t)`.
    pub fn inv_kappa_at(&self, i: usize, t: f64) -> f64 {
        match self.entries[i].shape {
            ModulationShape::Cosine { eps, phi } => 1.0 + eps * (self.omega * t + phi).cos(),
            ModulationShape::Fourier { .. } => self.series(i).eval(self.omega, t),
        }
    }

    /// `kappa_i(t)`, strictly positive.
    pub fn kappa_at(&self, i: usize, t: f64) -> f64 {
        1.0 / self.inv_kappa_at(i, t)
    }

    /// Exact time derivative of `1/kappa_i`.
    pub fn inv_kappa_derivative_at(&self, i: usize, t: f64) -> f64 {
        match self.entries[i].shape {
            ModulationShape::Cosine { eps, phi } => -eps * self.omega * (self.omega * t + phi).sin(),
            ModulationShape::Fourier { .. } => self.series(i).eval_derivative(self.omega, t),
        }
    }

    /// Period average of `kappa_i`: `1/sqrt(1 - eps^2)` for cosine entries,
    /// trapezoid quadrature otherwise.
    pub fn mean_kappa(&self, i: usize) -> f64 {
        match self.entries[i].shape {
            ModulationShape::Cosine { eps, .. } => 1.0 / (1.0 - eps * eps).sqrt(),
            ModulationShape::Fourier { .. } => self.mean_kappa_quadrature(i, QUADRATURE_NODES),
        }
    }

    /// Composite trapezoid average of `kappa_i` over one period (spectrally
    /// accurate for periodic integrands).
    pub fn mean_kappa_quadrature(&self, i: usize, nodes: usize) -> f64 {
        let period = self.period();
        let h = period / nodes as f64;
        (0..nodes).map(|s| self.kappa_at(i, s as f64 * h)).sum::<f64>() / nodes as f64
    }
}
