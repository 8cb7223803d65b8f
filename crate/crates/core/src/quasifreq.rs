//! Subwavelength resonant quasifrequencies.
//!
//! Three independent routes: the higher-order capacitance ODE solved for
//! its Floquet exponents, closed forms for a single resonator, and Muller
//! root-finding on a determinant of the full truncated problem.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use ode_solvers::dop_shared::{OutputType, System};
use ode_solvers::Dop853;
use serde::{Deserialize, Serialize};

use crate::error::{Error, NumericalError, Result};
use crate::interior::build_interior_matrix;
use crate::linalg::{smallest_singular_pair, CMatrix, Lu, ScaledComplex, I, ONE, ZERO};
use crate::model::{ResonatorArray, SimulationConfig};

pub const MONODROMY_RTOL: f64 = 1e-12;
pub const MONODROMY_ATOL: f64 = 1e-14;
pub const MULLER_MAX_ITER: usize = 50;
pub const MULLER_STEP_TOL: f64 = 1e-12;
pub const DEDUP_TOL: f64 = 1e-10;

/// Maps `Re(omega)` into `[-Omega/2, Omega/2)`.
pub fn fold(omega: Complex64, omega_mod: f64) -> Complex64 {
    let re = omega.re - omega_mod * ((omega.re + 0.5 * omega_mod) / omega_mod).floor();
    // guard the upper edge against rounding
    let re = if re >= 0.5 * omega_mod { re - omega_mod } else { re };
    Complex64::new(re, omega.im)
}

/// Distance between two quasifrequencies with real parts compared modulo `Omega`.
pub fn folded_distance(a: Complex64, b: Complex64, omega_mod: f64) -> f64 {
    fold(a - b, omega_mod).norm()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Floquet,
    ClosedForm,
    DetRoot,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Floquet => "floquet",
            Method::ClosedForm => "closed_form",
            Method::DetRoot => "det_root",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuasifrequencySet {
    pub values: Vec<Complex64>,
    pub method: Method,
    pub residuals: Vec<f64>,
}

impl QuasifrequencySet {
    fn sorted(mut self) -> Self {
        let mut idx: Vec<usize> = (0..self.values.len()).collect();
        idx.sort_by(|&a, &b| {
            let (x, y) = (self.values[a], self.values[b]);
            y.im.total_cmp(&x.im).then(x.re.total_cmp(&y.re))
        });
        self.values = idx.iter().map(|&i| self.values[i]).collect();
        self.residuals = idx.iter().map(|&i| self.residuals[i]).collect();
        self
    }

    /// Value with the largest real part.
    pub fn largest_real_part(&self) -> Option<Complex64> {
        self.values.iter().cloned().max_by(|a, b| a.re.total_cmp(&b.re))
    }

    /// Value with the most negative imaginary part.
    pub fn most_damped(&self) -> Option<Complex64> {
        self.values.iter().cloned().min_by(|a, b| a.im.total_cmp(&b.im))
    }
}

// ---------------------------------------------------------------------------
// capacitance

#[derive(Debug, Clone, PartialEq)]
pub struct CapacitanceMatrix {
    pub entries: DMatrix<f64>,
}

impl CapacitanceMatrix {
    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn max_abs_diff(&self, other: &CapacitanceMatrix) -> f64 {
        (&self.entries - &other.entries).amax()
    }
}

pub fn capacitance_matrix(array: &ResonatorArray) -> CapacitanceMatrix {
    let n = array.len();
    let mut c = DMatrix::zeros(n, n);
    for i in 0..n.saturating_sub(1) {
        let g = 1.0 / array.gap(i);
        c[(i, i)] += g;
        c[(i + 1, i + 1)] += g;
        c[(i, i + 1)] -= g;
        c[(i + 1, i)] -= g;
    }
    CapacitanceMatrix { entries: c }
}

/// Finite-difference oracle: solves `-V_j'' = 0` on every gap with the
/// boundary values of `V_j`, then assembles the flux jumps from
/// second-order one-sided derivatives. On the outer half-lines the bounded
/// solution is constant.
pub fn capacitance_oracle(array: &ResonatorArray, h: f64) -> Result<CapacitanceMatrix, NumericalError> {
    let n = array.len();
    for i in 0..n.saturating_sub(1) {
        let gap = array.gap(i);
        if !(h > 0.0) || gap / h < 10.0 {
            return Err(NumericalError::CoarseGrid { h, gap });
        }
    }
    let mut c = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut right_slope = vec![0.0; n];
        let mut left_slope = vec![0.0; n];
        for i in 0..n.saturating_sub(1) {
            let a = if i == j { 1.0 } else { 0.0 };
            let b = if i + 1 == j { 1.0 } else { 0.0 };
            let (d0, d1) = fd_gap_slopes(array.gap(i), h, a, b);
            right_slope[i] = d0;
            left_slope[i + 1] = d1;
        }
        for i in 0..n {
            c[(i, j)] = left_slope[i] - right_slope[i];
        }
    }
    Ok(CapacitanceMatrix { entries: c })
}

/// Discrete Dirichlet problem `-V'' = 0` on `[0, gap]`, returning the
/// one-sided derivatives at both ends.
fn fd_gap_slopes(gap: f64, h: f64, a: f64, b: f64) -> (f64, f64) {
    let cells = (gap / h).ceil() as usize;
    let dx = gap / cells as f64;
    let m = cells - 1;
    // tridiagonal (-1, 2, -1) with Dirichlet data folded into the rhs
    let mut diag = vec![2.0; m];
    let mut rhs = vec![0.0; m];
    rhs[0] += a;
    rhs[m - 1] += b;
    for r in 1..m {
        let w = -1.0 / diag[r - 1];
        diag[r] += w;
        rhs[r] -= w * rhs[r - 1];
    }
    let mut v = vec![0.0; cells + 1];
    v[0] = a;
    v[cells] = b;
    v[m] = rhs[m - 1] / diag[m - 1];
    for r in (0..m - 1).rev() {
        v[r + 1] = (rhs[r] + v[r + 2]) / diag[r];
    }
    let d0 = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * dx);
    let d1 = (3.0 * v[cells] - 4.0 * v[cells - 1] + v[cells - 2]) / (2.0 * dx);
    (d0, d1)
}

// ---------------------------------------------------------------------------
// Floquet method

/// First-order form `y' = M(t) y` of the capacitance ODE, `y = (c, c')`.
#[derive(Debug, Clone)]
pub struct FloquetSystem {
    pub capacitance: CapacitanceMatrix,
    pub d: Vec<f64>,
    pub lengths: Vec<f64>,
    pub prefactor: f64,
    pub v_out: f64,
    modulation: crate::modulation::ModulationProfile,
}

impl FloquetSystem {
    pub fn new(cfg: &SimulationConfig) -> Self {
        let n = cfg.n();
        let mut d = vec![0.0; n];
        if n == 1 {
            d[0] = 2.0;
        } else {
            d[0] = 1.0;
            d[n - 1] = 1.0;
        }
        Self {
            capacitance: capacitance_matrix(&cfg.array),
            d,
            lengths: cfg.array.lengths(),
            prefactor: cfg.params.interior_prefactor(),
            v_out: cfg.params.v_out,
            modulation: cfg.modulation.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        2 * self.lengths.len()
    }

    pub fn period(&self) -> f64 {
        self.modulation.period()
    }

    /// `M(t)`.
    pub fn generator(&self, t: f64) -> DMatrix<f64> {
        let n = self.lengths.len();
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            m[(i, n + i)] = 1.0;
            let kappa = self.modulation.kappa_at(i, t);
            let dk = self.modulation.inv_kappa_derivative_at(i, t);
            let scale = 1.0 / (self.prefactor * self.lengths[i]);
            for j in 0..n {
                m[(n + i, j)] = -kappa * scale * self.capacitance.entries[(i, j)];
            }
            m[(n + i, n + i)] = -kappa * (scale * self.d[i] / self.v_out + dk);
        }
        m
    }

    /// Period map `Phi(T)` from the identity.
    pub fn monodromy(&self) -> Result<DMatrix<f64>, NumericalError> {
        let d = self.dim();
        // time is carried as the last state component: the crate's tableau
        // evaluates the final stage at the wrong abscissa
        let mut y0 = DVector::zeros(d * d + 1);
        y0.rows_mut(0, d * d).copy_from_slice(DMatrix::<f64>::identity(d, d).as_slice());
        let rhs = MonodromyRhs { sys: self, d };
        let t = self.period();
        // stiffness detection off (n_stiff = u32::MAX)
        let mut solver = Dop853::from_param(
            rhs,
            0.0,
            t,
            t,
            y0,
            MONODROMY_RTOL,
            MONODROMY_ATOL,
            0.9,
            0.0,
            0.333,
            6.0,
            t / 16.0,
            0.0,
            1_000_000,
            u32::MAX,
            OutputType::Sparse,
        );
        solver.integrate().map_err(|e| NumericalError::Integrator(e.to_string()))?;
        let y = solver.y_out().last().ok_or_else(|| NumericalError::Integrator("no output".into()))?;
        if solver.x_out().last().map(|&x| (x - self.period()).abs() > 1e-9 * self.period()).unwrap_or(true) {
            return Err(NumericalError::Integrator("integration stopped before one period".into()));
        }
        Ok(DMatrix::from_column_slice(d, d, &y.as_slice()[..d * d]))
    }
}

struct MonodromyRhs<'a> {
    sys: &'a FloquetSystem,
    d: usize,
}

impl System<f64, DVector<f64>> for MonodromyRhs<'_> {
    fn system(&self, _t: f64, y: &DVector<f64>, dy: &mut DVector<f64>) {
        let n = self.d * self.d;
        let m = self.sys.generator(y[n]);
        let phi = DMatrix::from_column_slice(self.d, self.d, &y.as_slice()[..n]);
        dy.rows_mut(0, n).copy_from_slice((m * phi).as_slice());
        dy[n] = 1.0;
    }
}

/// Floquet exponents `omega = i log(mu) / T` of the capacitance ODE.
pub fn floquet_quasifrequencies(cfg: &SimulationConfig) -> Result<QuasifrequencySet> {
    let sys = FloquetSystem::new(cfg);
    let phi = sys.monodromy()?;
    let mus = phi.complex_eigenvalues();
    let t = sys.period();
    let omega_mod = cfg.omega_mod();
    let cphi: CMatrix = phi.map(|x| Complex64::new(x, 0.0));
    let scale = cphi.norm().max(f64::MIN_POSITIVE);
    let mut values = Vec::with_capacity(mus.len());
    let mut residuals = Vec::with_capacity(mus.len());
    for &mu in mus.iter() {
        if mu.norm() == 0.0 || !mu.re.is_finite() || !mu.im.is_finite() {
            return Err(NumericalError::Eigen { omega: mu }.into());
        }
        values.push(fold(I * mu.ln() / t, omega_mod));
        let shifted = &cphi - CMatrix::from_diagonal_element(cphi.nrows(), cphi.ncols(), mu);
        residuals.push(smallest_singular_pair(&shifted).0 / scale);
    }
    Ok(QuasifrequencySet { values, method: Method::Floquet, residuals }.sorted())
}

// ---------------------------------------------------------------------------
// closed forms, N = 1

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClosedFormSingle {
    pub set: QuasifrequencySet,
    /// Exact static resonance `-(i v_r / l) log(1 + 2 v_r delta / (v_0 - v_r delta))`,
    /// present when the modulation is trivial.
    pub static_exact: Option<Complex64>,
}

/// `K = -2 i v_r^2 delta / (l v_0)`.
pub fn single_resonator_constant(cfg: &SimulationConfig) -> Complex64 {
    let p = &cfg.params;
    Complex64::new(0.0, -2.0 * p.v_in * p.v_in * p.delta / (cfg.array.length(0) * p.v_out))
}

pub fn static_single_exact(delta: f64, v_out: f64, v_in: f64, length: f64) -> Complex64 {
    let x = 2.0 * v_in * delta / (v_out - v_in * delta);
    Complex64::new(0.0, -(v_in / length) * x.ln_1p())
}

pub fn closed_form_single(cfg: &SimulationConfig) -> Result<ClosedFormSingle> {
    if cfg.n() != 1 {
        return Err(NumericalError::SingleResonatorOnly("closed-form quasifrequency", cfg.n()).into());
    }
    let omega1 = single_resonator_constant(cfg) * cfg.modulation.mean_kappa(0);
    let series = cfg.modulation.series(0);
    let trivial = series.order() == 0 && series.get(0) == ONE;
    let static_exact = trivial.then(|| {
        let p = &cfg.params;
        static_single_exact(p.delta, p.v_out, p.v_in, cfg.array.length(0))
    });
    let set = QuasifrequencySet {
        values: vec![ZERO, fold(omega1, cfg.omega_mod())],
        method: Method::ClosedForm,
        residuals: vec![0.0, 0.0],
    };
    Ok(ClosedFormSingle { set, static_exact })
}

// ---------------------------------------------------------------------------
// determinant root finding

/// Resonance matrix in transfer form.
///
/// The unknowns are the interior traces `(v, v')` at `x_1^-`; the left
/// radiation condition fixes `v' = -i delta k v`. The traces are carried
/// across each resonator by `exp(l_i [[0, I], [-C_i, 0]])` and across each
/// gap by the exterior Helmholtz propagator combined with the value and
/// derivative transmission conditions. The returned `(2K+1)`-square matrix
/// is the right radiation condition `v' - i delta k v` applied to the
/// propagated traces. Every factor is entire in `omega`, so its
/// determinant vanishes exactly at the resonances without branch cuts.
pub fn resonance_matrix(cfg: &SimulationConfig, omega: Complex64) -> CMatrix {
    let k = cfg.truncation.k as i64;
    let d = (2 * k + 1) as usize;
    let delta = cfg.delta();
    let omega_mod = cfg.omega_mod();
    let kext: Vec<Complex64> = (-k..=k).map(|n| (omega + n as f64 * omega_mod) / cfg.params.v_out).collect();

    // state: columns of [v; v'] for each unit initial trace
    let mut state = CMatrix::zeros(2 * d, d);
    for r in 0..d {
        state[(r, r)] = ONE;
        state[(d + r, r)] = -I * delta * kext[r];
    }
    for i in 0..cfg.n() {
        let c = build_interior_matrix(i, omega, cfg).entries;
        let mut gen = CMatrix::zeros(2 * d, 2 * d);
        for r in 0..d {
            gen[(r, d + r)] = ONE;
        }
        gen.view_mut((d, 0), (d, d)).copy_from(&(-c));
        let prop = (gen * Complex64::new(cfg.array.length(i), 0.0)).exp();
        state = prop * state;
        if i + 1 < cfg.n() {
            let l = cfg.array.gap(i);
            for r in 0..d {
                let (cs, sk, ks) = gap_transfer(kext[r], l);
                for col in 0..d {
                    let v = state[(r, col)];
                    let dv = state[(d + r, col)];
                    state[(r, col)] = cs * v + sk * dv / delta;
                    state[(d + r, col)] = -delta * ks * v + cs * dv;
                }
            }
        }
    }
    CMatrix::from_fn(d, d, |r, col| state[(d + r, col)] - I * delta * kext[r] * state[(r, col)])
}

/// `(cos(kl), sin(kl)/k, k sin(kl))` with the `k -> 0` limit handled.
fn gap_transfer(k: Complex64, l: f64) -> (Complex64, Complex64, Complex64) {
    let kl = k * l;
    let cs = kl.cos();
    let sinc = if kl.norm() < 1e-4 { ONE - kl * kl / 6.0 + kl.powi(4) / 120.0 } else { kl.sin() / kl };
    (cs, sinc * l, k * k * l * sinc)
}

pub fn resonance_determinant(cfg: &SimulationConfig, omega: Complex64) -> ScaledComplex {
    Lu::new(resonance_matrix(cfg, omega)).determinant()
}

/// Outcome of one Muller run.
#[derive(Debug, Clone, PartialEq)]
pub enum MullerOutcome {
    Converged { root: Complex64, iterations: usize },
    Failed { reason: String },
}

/// Muller's method on `f`, started from three points. `f` returns scaled
/// values so that underflowing determinants stay usable.
pub fn muller<F>(mut f: F, start: [Complex64; 3], scale: f64) -> MullerOutcome
where
    F: FnMut(Complex64) -> ScaledComplex,
{
    let mut x = start;
    let mut fx = [f(x[0]), f(x[1]), f(x[2])];
    for iter in 0..MULLER_MAX_ITER {
        if let Some(j) = fx.iter().position(|v| v.is_zero()) {
            return MullerOutcome::Converged { root: x[j], iterations: iter };
        }
        let e = fx.iter().map(|v| v.exponent).max().unwrap_or(0);
        let [f0, f1, f2] = [fx[0].scaled_value(e), fx[1].scaled_value(e), fx[2].scaled_value(e)];
        if [f0, f1, f2].iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return MullerOutcome::Failed { reason: "non-finite function value".into() };
        }
        let h1 = x[1] - x[0];
        let h2 = x[2] - x[1];
        if h1 == ZERO || h2 == ZERO || h1 + h2 == ZERO {
            return MullerOutcome::Failed { reason: "coincident iterates".into() };
        }
        let d1 = (f1 - f0) / h1;
        let d2 = (f2 - f1) / h2;
        let a = (d2 - d1) / (h2 + h1);
        let b = a * h2 + d2;
        let disc = (b * b - 4.0 * a * f2).sqrt();
        let den = if (b + disc).norm() >= (b - disc).norm() { b + disc } else { b - disc };
        let step = if den == ZERO { Complex64::new(scale, scale) * 1e-3 } else { -2.0 * f2 / den };
        if !step.re.is_finite() || !step.im.is_finite() {
            return MullerOutcome::Failed { reason: "non-finite Muller step".into() };
        }
        let next = x[2] + step;
        if step.norm() < MULLER_STEP_TOL * next.norm().max(scale) {
            return MullerOutcome::Converged { root: next, iterations: iter + 1 };
        }
        x = [x[1], x[2], next];
        fx = [fx[1], fx[2], f(next)];
    }
    MullerOutcome::Failed { reason: format!("no convergence in {MULLER_MAX_ITER} iterations") }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: Complex64,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetRootResult {
    pub set: QuasifrequencySet,
    pub failures: Vec<SeedFailure>,
}

/// Seeds `s -+ (1+i) delta` and `s` around each Floquet value.
pub fn default_seeds(cfg: &SimulationConfig) -> Result<Vec<Complex64>> {
    Ok(floquet_quasifrequencies(cfg)?.values)
}

/// Muller root-finding on the transfer-form determinant from each seed.
/// A run that wanders farther than `Omega/10` from its seed counts as
/// non-convergent for that seed. Converged roots are polished with
/// [`crate::scattering::refine_pole`]; the reported residual is the
/// relative smallest singular value of the block system there.
pub fn det_root_quasifrequencies(cfg: &SimulationConfig, seeds: &[Complex64]) -> Result<DetRootResult> {
    if seeds.is_empty() {
        return Err(Error::Numerical(NumericalError::Empty("seed list")));
    }
    let omega_mod = cfg.omega_mod();
    let delta = cfg.delta();
    let scale = omega_mod;
    let trust = omega_mod / 10.0;
    let offset = Complex64::new(delta, delta);

    let mut values: Vec<Complex64> = Vec::new();
    let mut residuals = Vec::new();
    let mut failures = Vec::new();
    for &seed in seeds {
        let mut outcome = MullerOutcome::Failed { reason: "not started".into() };
        for attempt in 0..3 {
            let jitter = Complex64::new(0.37, 0.21) * delta * attempt as f64;
            let start = [seed - offset + jitter, seed + offset + jitter, seed + jitter];
            outcome = muller(|w| resonance_determinant(cfg, w), start, scale);
            if matches!(outcome, MullerOutcome::Converged { .. }) {
                break;
            }
        }
        match outcome {
            MullerOutcome::Converged { root, .. } if (root - seed).norm() <= trust => {
                let (polished, residual) = crate::scattering::refine_pole(cfg, root)?;
                let root = fold(if (polished - seed).norm() <= trust { polished } else { root }, omega_mod);
                if values.iter().any(|v| (v - root).norm() < DEDUP_TOL) {
                    continue;
                }
                values.push(root);
                residuals.push(residual);
            }
            MullerOutcome::Converged { root, .. } => failures.push(SeedFailure {
                seed,
                reason: format!("converged to {root} outside the trust radius {trust:e}"),
            }),
            MullerOutcome::Failed { reason } => failures.push(SeedFailure { seed, reason }),
        }
    }
    let set = QuasifrequencySet { values, method: Method::DetRoot, residuals }.sorted();
    Ok(DetRootResult { set, failures })
}
