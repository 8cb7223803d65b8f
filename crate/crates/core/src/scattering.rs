//! Truncated scattering problem: block system for the interior
//! coefficients, exterior reconstruction and field synthesis, and the
//! pole-pencil approximation near resonances.
//!
//! Layout: unknown `(j, i, a|b)` sits at column `(j + K) 2N + 2i + {0, 1}`;
//! the row for mode `n` at boundary point `b` (`2i` for `x_i^-`, `2i + 1`
//! for `x_i^+`) is `(n + K) 2N + b`. Modes run in ascending order.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{NumericalError, Result};
use crate::interior::{build_interior_matrix, interior_bases, interior_eigenbasis, InteriorBasis};
use crate::linalg::{componentwise_residual, norm1, smallest_singular_pair, spectral_norm, CMatrix, CVector, Lu, I, ZERO};
use crate::model::SimulationConfig;

pub const SOLVE_RESIDUAL_TOL: f64 = 1e-10;
pub const NULL_RESIDUAL_TOL: f64 = 1e-8;
const SMALL_KL: f64 = 1e-8;
const RESONANT_SIN: f64 = 1e-12;

/// Gap propagator `N^k(l)`: maps boundary values `(p, q)` of the exterior
/// Helmholtz solution on a gap of length `l` to minus its boundary
/// derivatives.
pub fn dtn_block(k: Complex64, gap: f64) -> Result<[[Complex64; 2]; 2], NumericalError> {
    let kl = k * gap;
    if kl.norm() < SMALL_KL {
        let g = Complex64::new(1.0 / gap, 0.0);
        return Ok([[g, -g], [g, -g]]);
    }
    let s = kl.sin();
    if s.norm() < RESONANT_SIN {
        return Err(NumericalError::ResonantGapRaw { k, length: gap });
    }
    let cot = k * kl.cos() / s;
    let csc = k / s;
    Ok([[cot, -csc], [csc, -cot]])
}

fn dtn_for(k: Complex64, gap: f64, mode: i64, index: usize) -> Result<[[Complex64; 2]; 2], NumericalError> {
    dtn_block(k, gap).map_err(|e| match e {
        NumericalError::ResonantGapRaw { .. } => NumericalError::ResonantGap { mode, gap: index },
        other => other,
    })
}

fn exterior_k(cfg: &SimulationConfig, omega: Complex64, n: i64) -> Complex64 {
    (omega + n as f64 * cfg.omega_mod()) / cfg.params.v_out
}

/// Boundary point `b` of the array: `x_i^-` for `b = 2i`, `x_i^+` for `b = 2i + 1`.
fn boundary_x(cfg: &SimulationConfig, b: usize) -> f64 {
    cfg.array.boundaries()[b]
}

/// One-sided incident traces `(v^in_n, d v^in_n / dx)` at boundary point
/// `b`, evaluated on the incident support only.
pub fn incident_trace(cfg: &SimulationConfig, omega: Complex64, n: i64, b: usize) -> (Complex64, Complex64) {
    if n != 0 {
        return (ZERO, ZERO);
    }
    let k = exterior_k(cfg, omega, 0);
    let x = boundary_x(cfg, b);
    let last = 2 * cfg.n() - 1;
    if b == 0 {
        let v = cfg.incident.left_amplitude() * (I * k * x).exp();
        (v, I * k * v)
    } else if b == last {
        let v = cfg.incident.right_amplitude() * (-I * k * x).exp();
        (v, -I * k * v)
    } else {
        (ZERO, ZERO)
    }
}

/// Truncated block system `A w = delta (F + N v^in)`.
#[derive(Debug, Clone)]
pub struct BlockSystem {
    pub omega: Complex64,
    pub n: usize,
    pub k: usize,
    pub matrix: CMatrix,
    pub rhs: CVector,
    pub bases: Vec<InteriorBasis>,
}

impl BlockSystem {
    pub fn dim(&self) -> usize {
        2 * self.n * (2 * self.k + 1)
    }

    pub fn row_index(&self, n: i64, b: usize) -> usize {
        ((n + self.k as i64) as usize) * 2 * self.n + b
    }

    pub fn col_index(&self, j: i64, i: usize, b_part: bool) -> usize {
        ((j + self.k as i64) as usize) * 2 * self.n + 2 * i + usize::from(b_part)
    }
}

/// Interior trace and derivative of mode `n` at boundary point `b`
/// contributed by unknown `(j, a|b)` with unit coefficient.
fn trace_entry(basis: &InteriorBasis, j: usize, n: usize, x: f64, b_part: bool) -> (Complex64, Complex64) {
    let lam = if b_part { -basis.lambdas[j] } else { basis.lambdas[j] };
    let e = (I * lam * x).exp() * basis.vectors[(n, j)];
    (e, I * lam * e)
}

/// Assembles the matrix alone for the given bases.
pub fn assemble_matrix(cfg: &SimulationConfig, omega: Complex64, bases: &[InteriorBasis]) -> Result<CMatrix, NumericalError> {
    let nres = cfg.n();
    let kk = cfg.truncation.k;
    let modes = 2 * kk + 1;
    let dim = 2 * nres * modes;
    let delta = cfg.delta();
    let mut a = CMatrix::zeros(dim, dim);
    let row = |n: usize, b: usize| n * 2 * nres + b;
    let col = |j: usize, i: usize, bp: bool| j * 2 * nres + 2 * i + usize::from(bp);

    for (ni, n) in (-(kk as i64)..=kk as i64).enumerate() {
        let k = exterior_k(cfg, omega, n);
        let dtn: Vec<[[Complex64; 2]; 2]> =
            (0..nres.saturating_sub(1)).map(|g| dtn_for(k, cfg.array.gap(g), n, g)).collect::<Result<_, _>>()?;
        for i in 0..nres {
            let basis = &bases[i];
            for j in 0..modes {
                for bp in [false, true] {
                    let c = col(j, i, bp);
                    let (vl, dl) = trace_entry(basis, j, ni, cfg.array.left(i), bp);
                    let (vr, dr) = trace_entry(basis, j, ni, cfg.array.right(i), bp);
                    // row at x_i^-
                    let r = row(ni, 2 * i);
                    if i == 0 {
                        a[(r, c)] += dl + I * delta * k * vl;
                    } else {
                        let m = dtn[i - 1];
                        a[(r, c)] += dl + delta * m[1][1] * vl;
                        // same trace enters the x_{i-1}^+ row of that gap
                        a[(row(ni, 2 * i - 1), c)] += delta * m[0][1] * vl;
                    }
                    // row at x_i^+
                    let r = row(ni, 2 * i + 1);
                    if i + 1 == nres {
                        a[(r, c)] += dr - I * delta * k * vr;
                    } else {
                        let m = dtn[i];
                        a[(r, c)] += dr + delta * m[0][0] * vr;
                        a[(row(ni, 2 * i + 2), c)] += delta * m[1][0] * vr;
                    }
                }
            }
        }
    }
    Ok(a)
}

/// Right-hand side `delta (F + N v^in)` at `omega`.
pub fn assemble_rhs(cfg: &SimulationConfig, omega: Complex64) -> Result<CVector, NumericalError> {
    let nres = cfg.n();
    let kk = cfg.truncation.k as i64;
    let delta = cfg.delta();
    let mut rhs = CVector::zeros(2 * nres * (2 * kk as usize + 1));
    let last = 2 * nres - 1;
    for (ni, n) in (-kk..=kk).enumerate() {
        let k = exterior_k(cfg, omega, n);
        let base = ni * 2 * nres;
        let traces: Vec<(Complex64, Complex64)> = (0..=last).map(|b| incident_trace(cfg, omega, n, b)).collect();
        if traces.iter().all(|(v, d)| *v == ZERO && *d == ZERO) {
            continue;
        }
        let (v, d) = traces[0];
        rhs[base] = delta * (d + I * k * v);
        let (v, d) = traces[last];
        rhs[base + last] = delta * (d - I * k * v);
        for g in 0..nres.saturating_sub(1) {
            let (vp, dp) = traces[2 * g + 1];
            let (vq, dq) = traces[2 * g + 2];
            if vp == ZERO && vq == ZERO && dp == ZERO && dq == ZERO {
                continue;
            }
            let m = dtn_for(k, cfg.array.gap(g), n, g)?;
            rhs[base + 2 * g + 1] = delta * (dp + m[0][0] * vp + m[0][1] * vq);
            rhs[base + 2 * g + 2] = delta * (dq + m[1][0] * vp + m[1][1] * vq);
        }
    }
    Ok(rhs)
}

pub fn assemble_system(cfg: &SimulationConfig, omega: Complex64) -> Result<BlockSystem> {
    let bases = interior_bases(omega, cfg)?;
    assemble_with_bases(cfg, omega, bases)
}

pub fn assemble_with_bases(cfg: &SimulationConfig, omega: Complex64, bases: Vec<InteriorBasis>) -> Result<BlockSystem> {
    let matrix = assemble_matrix(cfg, omega, &bases)?;
    let rhs = assemble_rhs(cfg, omega)?;
    debug_assert_eq!(matrix.nrows(), rhs.len());
    Ok(BlockSystem { omega, n: cfg.n(), k: cfg.truncation.k, matrix, rhs, bases })
}

/// Interior coefficients `w` with solver diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InteriorCoefficients {
    pub n: usize,
    pub k: usize,
    pub w: Vec<Complex64>,
    /// Reciprocal 1-norm condition number.
    pub rcond: f64,
    /// Componentwise relative residual.
    pub residual: f64,
}

impl InteriorCoefficients {
    fn at(&self, j: i64, i: usize, b_part: bool) -> Complex64 {
        self.w[((j + self.k as i64) as usize) * 2 * self.n + 2 * i + usize::from(b_part)]
    }

    pub fn a(&self, j: i64, i: usize) -> Complex64 {
        self.at(j, i, false)
    }

    pub fn b(&self, j: i64, i: usize) -> Complex64 {
        self.at(j, i, true)
    }

    /// Euclidean norm of the block belonging to mode index `j`.
    pub fn mode_norm(&self, j: i64) -> f64 {
        let start = ((j + self.k as i64) as usize) * 2 * self.n;
        self.w[start..start + 2 * self.n].iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn norm(&self) -> f64 {
        self.w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }
}

pub fn solve_interior(sys: &BlockSystem) -> Result<InteriorCoefficients> {
    let lu = Lu::new(sys.matrix.clone());
    let singular = || NumericalError::Singular { omega: sys.omega, rcond: 0.0 };
    let mut x = lu.solve(&sys.rhs).ok_or_else(singular)?;
    let inv = lu.inverse().ok_or_else(singular)?;
    let rcond = 1.0 / (norm1(&sys.matrix) * norm1(&inv));
    if !(rcond > f64::EPSILON) {
        return Err(NumericalError::Singular { omega: sys.omega, rcond }.into());
    }
    let mut residual = componentwise_residual(&sys.matrix, &x, &sys.rhs);
    for _ in 0..2 {
        if residual <= SOLVE_RESIDUAL_TOL * 1e-3 {
            break;
        }
        let r = &sys.rhs - &sys.matrix * &x;
        let dx = lu.solve(&r).ok_or_else(singular)?;
        let candidate = &x + dx;
        let res = componentwise_residual(&sys.matrix, &candidate, &sys.rhs);
        if res < residual {
            x = candidate;
            residual = res;
        } else {
            break;
        }
    }
    if !(residual <= SOLVE_RESIDUAL_TOL) {
        return Err(NumericalError::Residual { residual }.into());
    }
    Ok(InteriorCoefficients { n: sys.n, k: sys.k, w: x.iter().cloned().collect(), rcond, residual })
}

/// Exterior data per mode: gap boundary values and coefficients, edge
/// coefficients `beta^0` (reflected) and `alpha^N` (transmitted).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExteriorCoefficients {
    pub k: usize,
    pub n: usize,
    /// `beta_n^0`, indexed by `n + K`.
    pub beta0: Vec<Complex64>,
    /// `alpha_n^N`, indexed by `n + K`.
    pub alpha_last: Vec<Complex64>,
    /// `(alpha_n^i, beta_n^i)` per mode and gap; `None` when `k l` is
    /// too small for the exponential form.
    pub gap_coefficients: Vec<Vec<Option<(Complex64, Complex64)>>>,
    /// Exterior boundary values `(p, q)` at `x_i^+` and `x_{i+1}^-` per mode and gap.
    pub gap_values: Vec<Vec<(Complex64, Complex64)>>,
}

impl ExteriorCoefficients {
    pub fn reflection(&self, n: i64) -> Complex64 {
        self.beta0[(n + self.k as i64) as usize]
    }

    pub fn transmission(&self, n: i64) -> Complex64 {
        self.alpha_last[(n + self.k as i64) as usize]
    }
}

/// Interior trace `v_n(x)` of resonator `i` for coefficients `w`.
pub fn interior_value(basis: &InteriorBasis, w: &InteriorCoefficients, i: usize, n: i64, x: f64) -> Complex64 {
    let kk = w.k as i64;
    let row = (n + kk) as usize;
    (0..basis.dim())
        .map(|j| {
            let jj = j as i64 - kk;
            let lam = basis.lambdas[j];
            (w.a(jj, i) * (I * lam * x).exp() + w.b(jj, i) * (-I * lam * x).exp()) * basis.vectors[(row, j)]
        })
        .sum()
}

/// Operator `M`: exterior coefficients from interior coefficients. With
/// `subtract_incident = false` only the linear part is applied.
pub fn exterior_map(
    cfg: &SimulationConfig,
    omega: Complex64,
    bases: &[InteriorBasis],
    w: &InteriorCoefficients,
    subtract_incident: bool,
) -> Result<ExteriorCoefficients, NumericalError> {
    let nres = cfg.n();
    let kk = cfg.truncation.k as i64;
    let last = 2 * nres - 1;
    let mut beta0 = Vec::new();
    let mut alpha_last = Vec::new();
    let mut gap_coefficients = Vec::new();
    let mut gap_values = Vec::new();
    for n in -kk..=kk {
        let k = exterior_k(cfg, omega, n);
        let inc = |b: usize| if subtract_incident { incident_trace(cfg, omega, n, b).0 } else { ZERO };
        let x0 = cfg.array.left(0);
        let v0 = interior_value(&bases[0], w, 0, n, x0) - inc(0);
        beta0.push((I * k * x0).exp() * v0);
        let xn = cfg.array.right(nres - 1);
        let vn = interior_value(&bases[nres - 1], w, nres - 1, n, xn) - inc(last);
        alpha_last.push((-I * k * xn).exp() * vn);

        let mut coeffs = Vec::new();
        let mut values = Vec::new();
        for g in 0..nres.saturating_sub(1) {
            let xa = cfg.array.right(g);
            let xb = cfg.array.left(g + 1);
            let p = interior_value(&bases[g], w, g, n, xa) - inc(2 * g + 1);
            let q = interior_value(&bases[g + 1], w, g + 1, n, xb) - inc(2 * g + 2);
            let l = cfg.array.gap(g);
            let kl = k * l;
            let s = kl.sin();
            if kl.norm() >= SMALL_KL && s.norm() < RESONANT_SIN {
                return Err(NumericalError::ResonantGap { mode: n, gap: g });
            }
            let coef = if kl.norm() < SMALL_KL {
                None
            } else {
                let det = -2.0 * I * s;
                let alpha = (p * (-I * k * xb).exp() - q * (-I * k * xa).exp()) / det;
                let beta = (q * (I * k * xa).exp() - p * (I * k * xb).exp()) / det;
                Some((alpha, beta))
            };
            coeffs.push(coef);
            values.push((p, q));
        }
        gap_coefficients.push(coeffs);
        gap_values.push(values);
    }
    Ok(ExteriorCoefficients { k: cfg.truncation.k, n: nres, beta0, alpha_last, gap_coefficients, gap_values })
}

pub fn exterior_from_interior(
    cfg: &SimulationConfig,
    omega: Complex64,
    bases: &[InteriorBasis],
    w: &InteriorCoefficients,
) -> Result<ExteriorCoefficients, NumericalError> {
    exterior_map(cfg, omega, bases, w, true)
}

/// Mode `n` of the scattered field at `x` (operator `S_n`).
fn mode_field(
    cfg: &SimulationConfig,
    omega: Complex64,
    bases: &[InteriorBasis],
    w: &InteriorCoefficients,
    ext: &ExteriorCoefficients,
    n: i64,
    x: f64,
) -> Complex64 {
    let idx = (n + ext.k as i64) as usize;
    let k = exterior_k(cfg, omega, n);
    let nres = cfg.n();
    if x <= cfg.array.left(0) {
        return ext.beta0[idx] * (-I * k * x).exp();
    }
    if x >= cfg.array.right(nres - 1) {
        return ext.alpha_last[idx] * (I * k * x).exp();
    }
    if let Some(i) = cfg.array.resonator_containing(x) {
        return interior_value(&bases[i], w, i, n, x);
    }
    let g = (0..nres - 1)
        .find(|&g| x >= cfg.array.right(g) && x <= cfg.array.left(g + 1))
        .expect("point lies in a gap");
    let (p, q) = ext.gap_values[idx][g];
    let l = cfg.array.gap(g);
    let s = x - cfg.array.right(g);
    let kl = k * l;
    if kl.norm() < SMALL_KL {
        p + (q - p) * (s / l)
    } else {
        (p * (k * (l - s)).sin() + q * (k * s).sin()) / kl.sin()
    }
}

/// Solved scattering problem at one operating frequency.
#[derive(Debug, Clone)]
pub struct ScatteringSolution {
    pub cfg: SimulationConfig,
    pub omega: Complex64,
    pub bases: Vec<InteriorBasis>,
    pub interior: InteriorCoefficients,
    pub exterior: ExteriorCoefficients,
}

impl ScatteringSolution {
    /// `S_n(v)(x)` for every mode, ascending in `n`.
    pub fn modes_at(&self, x: f64) -> Vec<Complex64> {
        let kk = self.cfg.truncation.k as i64;
        (-kk..=kk).map(|n| mode_field(&self.cfg, self.omega, &self.bases, &self.interior, &self.exterior, n, x)).collect()
    }

    /// Scattered field `u^sc(x, t) = sum_n S_n(v)(x) e^{-i (omega + n Omega) t}`.
    pub fn evaluate_field(&self, x: f64, t: f64) -> Complex64 {
        let kk = self.cfg.truncation.k as i64;
        let om = self.cfg.omega_mod();
        self.modes_at(x)
            .into_iter()
            .zip(-kk..=kk)
            .map(|(v, n)| v * (-I * (self.omega + n as f64 * om) * t).exp())
            .sum()
    }

    /// Incident field on its support.
    pub fn incident_field(&self, x: f64, t: f64) -> Complex64 {
        let k = self.omega / self.cfg.params.v_out;
        let phase = (-I * self.omega * t).exp();
        if x < self.cfg.array.left(0) {
            self.cfg.incident.left_amplitude() * (I * k * x).exp() * phase
        } else if x > self.cfg.array.right(self.cfg.n() - 1) {
            self.cfg.incident.right_amplitude() * (-I * k * x).exp() * phase
        } else {
            ZERO
        }
    }

    /// Total field `u = u^in + u^sc`.
    pub fn total_field(&self, x: f64, t: f64) -> Complex64 {
        self.incident_field(x, t) + self.evaluate_field(x, t)
    }
}

/// Full pipeline at `omega`: bases, assembly, solve, exterior map.
pub fn solve(cfg: &SimulationConfig, omega: Complex64) -> Result<ScatteringSolution> {
    let sys = assemble_system(cfg, omega)?;
    let interior = solve_interior(&sys)?;
    let exterior = exterior_from_interior(cfg, omega, &sys.bases, &interior)?;
    Ok(ScatteringSolution { cfg: cfg.clone(), omega, bases: sys.bases, interior, exterior })
}

// ---------------------------------------------------------------------------
// pole pencil

/// Time factor attached to each pole term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolePhase {
    /// `e^{-i (omega_j + n Omega) t}`, as in the approximation formula.
    #[default]
    Pole,
    /// `e^{-i (omega + n Omega) t}`.
    Operating,
}

/// Frequency at which the incident forcing is evaluated in each pole term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoleForcing {
    /// Forcing frozen at the pole: the term is the exact residue.
    #[default]
    Pole,
    /// Forcing at the operating frequency.
    Operating,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PoleOptions {
    pub phase: PolePhase,
    pub forcing: PoleForcing,
}

#[derive(Debug, Clone)]
pub struct PolePencilData {
    pub pole: Complex64,
    /// Right null vector `w`.
    pub right: CVector,
    /// Left null vector `w*` (`w*^H A = 0`).
    pub left: CVector,
    /// `<w*, A'(omega_j) w>`, conjugate-linear in the first slot.
    pub denominator: Complex64,
    pub right_residual: f64,
    pub left_residual: f64,
    pub bases: Vec<InteriorBasis>,
}

fn aligned_bases(cfg: &SimulationConfig, omega: Complex64, reference: &[InteriorBasis]) -> Result<Vec<InteriorBasis>> {
    reference
        .iter()
        .enumerate()
        .map(|(i, r)| Ok(interior_eigenbasis(&build_interior_matrix(i, omega, cfg))?.aligned_to(r)))
        .collect()
}

/// `dA/domega` at `omega` by central differences, with the perturbed
/// eigenbases aligned to `bases`.
pub fn matrix_derivative(cfg: &SimulationConfig, omega: Complex64, bases: &[InteriorBasis]) -> Result<CMatrix> {
    let h = 1e-6 * omega.norm().max(cfg.omega_mod());
    let plus = assemble_matrix(cfg, omega + h, &aligned_bases(cfg, omega + h, bases)?)?;
    let minus = assemble_matrix(cfg, omega - h, &aligned_bases(cfg, omega - h, bases)?)?;
    Ok((plus - minus) / Complex64::new(2.0 * h, 0.0))
}

pub const REFINE_MAX_ITER: usize = 12;

/// Newton polishing of a quasifrequency on the block system:
/// `omega <- omega - <u, A v> / <u, A' v>` with `(u, v)` the smallest
/// singular pair. Returns the polished pole and its relative residual
/// `sigma_min / sigma_max`.
pub fn refine_pole(cfg: &SimulationConfig, omega: Complex64) -> Result<(Complex64, f64)> {
    let scale = omega.norm().max(cfg.omega_mod());
    let mut w = omega;
    let mut best = (omega, f64::INFINITY);
    for _ in 0..REFINE_MAX_ITER {
        let bases = interior_bases(w, cfg)?;
        let a = assemble_matrix(cfg, w, &bases)?;
        let (smin, smax, u, v) = smallest_singular_pair(&a);
        let rel = if smax > 0.0 { smin / smax } else { 0.0 };
        if rel < best.1 {
            best = (w, rel);
        }
        if rel == 0.0 {
            break;
        }
        let da = matrix_derivative(cfg, w, &bases)?;
        let den = u.dotc(&(&da * &v));
        if den == ZERO {
            break;
        }
        let step = u.dotc(&(&a * &v)) / den;
        if !(step.norm() <= 0.1 * cfg.omega_mod()) {
            break;
        }
        w -= step;
        if step.norm() < 1e-14 * scale {
            let bases = interior_bases(w, cfg)?;
            let (smin, smax, _, _) = smallest_singular_pair(&assemble_matrix(cfg, w, &bases)?);
            let rel = if smax > 0.0 { smin / smax } else { 0.0 };
            if rel < best.1 {
                best = (w, rel);
            }
            break;
        }
    }
    Ok(best)
}

pub fn pole_pencil(cfg: &SimulationConfig, omega_j: Complex64) -> Result<PolePencilData> {
    let bases = interior_bases(omega_j, cfg)?;
    let a = assemble_matrix(cfg, omega_j, &bases)?;
    let (smin, smax, u, v) = smallest_singular_pair(&a);
    let scale = smax.max(f64::MIN_POSITIVE);
    let right_residual = (&a * &v).norm() / (scale * v.norm());
    let left_residual = (u.adjoint() * &a).norm() / (scale * u.norm());
    if !(right_residual <= NULL_RESIDUAL_TOL && left_residual <= NULL_RESIDUAL_TOL) {
        return Err(NumericalError::NotAPole { omega: omega_j, residual: smin / scale }.into());
    }
    let da = matrix_derivative(cfg, omega_j, &bases)?;
    let denominator = u.dotc(&(&da * &v));
    let bound = 1e-12 * u.norm() * v.norm() * spectral_norm(&da);
    if !(denominator.norm() >= bound) || denominator == ZERO {
        return Err(NumericalError::DegeneratePole { omega: omega_j }.into());
    }
    Ok(PolePencilData { pole: omega_j, right: v, left: u, denominator, right_residual, left_residual, bases })
}

impl PolePencilData {
    /// `L_j rhs = (<w*, rhs> / <w*, A' w>) w`.
    pub fn apply(&self, rhs: &CVector) -> CVector {
        &self.right * (self.left.dotc(rhs) / self.denominator)
    }

    /// `gamma_n^j(x)` for all modes with the forcing evaluated at
    /// `forcing_omega`; bases and wavenumbers are taken at the pole.
    pub fn gamma(&self, cfg: &SimulationConfig, forcing_omega: Complex64, x: f64) -> Result<Vec<Complex64>> {
        let rhs = assemble_rhs(cfg, forcing_omega)?;
        let coeffs = self.apply(&rhs);
        let w = InteriorCoefficients {
            n: cfg.n(),
            k: cfg.truncation.k,
            w: coeffs.iter().cloned().collect(),
            rcond: f64::NAN,
            residual: f64::NAN,
        };
        let ext = exterior_map(cfg, self.pole, &self.bases, &w, false)?;
        let kk = cfg.truncation.k as i64;
        Ok((-kk..=kk).map(|n| mode_field(cfg, self.pole, &self.bases, &w, &ext, n, x)).collect())
    }
}

/// Pole-pencil approximation
/// `u^sc(x,t) ~ sum_j sum_n gamma_n^j(x) / (omega - omega_j) e^{-i (omega_j + n Omega) t}`.
pub fn scattered_field_approx(
    cfg: &SimulationConfig,
    omega: Complex64,
    poles: &[PolePencilData],
    x: f64,
    t: f64,
    opts: PoleOptions,
) -> Result<Complex64> {
    let kk = cfg.truncation.k as i64;
    let om = cfg.omega_mod();
    let mut total = ZERO;
    for p in poles {
        let detuning = omega - p.pole;
        if detuning.norm() < 1e-14 {
            return Err(NumericalError::AtPole { pole: p.pole }.into());
        }
        let forcing = match opts.forcing {
            PoleForcing::Pole => p.pole,
            PoleForcing::Operating => omega,
        };
        let gamma = p.gamma(cfg, forcing, x)?;
        let base = match opts.phase {
            PolePhase::Pole => p.pole,
            PolePhase::Operating => omega,
        };
        for (g, n) in gamma.into_iter().zip(-kk..=kk) {
            total += g / detuning * (-I * (base + n as f64 * om) * t).exp();
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::ONE;
    use crate::model::{Direction, IncidentSpec};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn dtn_examples() {
        let m = dtn_block(c(1e-12), 10.0).unwrap();
        assert_eq!(m, [[c(0.1), c(-0.1)], [c(0.1), c(-0.1)]]);
        let k = std::f64::consts::FRAC_PI_2 / 10.0;
        let m = dtn_block(c(k), 10.0).unwrap();
        assert!(m[0][0].norm() < 1e-16 && m[1][1].norm() < 1e-16);
        assert_relative_eq!(m[0][1].re, -k, max_relative = 1e-15);
        assert_relative_eq!(m[1][0].re, k, max_relative = 1e-15);
        assert!(matches!(dtn_block(c(std::f64::consts::PI / 10.0), 10.0), Err(NumericalError::ResonantGapRaw { .. })));
        // continuity across the small-k switch
        let near = dtn_block(c(2e-9), 10.0).unwrap();
        assert!((near[0][0] - c(0.1)).norm() < 1e-15);
    }

    #[test]
    fn dimensions_and_static_decoupling() {
        let cfg = SimulationConfig::standard(6, 0.0, 0.004).unwrap();
        let sys = assemble_system(&cfg, c(0.004)).unwrap();
        assert_eq!(sys.matrix.nrows(), 108);
        assert_eq!(sys.dim(), 108);
        for r in 0..108 {
            for col in 0..108 {
                if r / 12 != col / 12 {
                    assert_eq!(sys.matrix[(r, col)], ZERO);
                }
            }
        }
        let w = solve_interior(&sys).unwrap();
        for n in -4..=4 {
            if n != 0 {
                assert!(w.mode_norm(n) <= 1e-10 * w.mode_norm(0));
            }
        }
    }

    #[test]
    fn left_incidence_rhs_is_sparse() {
        let cfg = SimulationConfig::standard(6, 0.5, 0.004).unwrap();
        let sys = assemble_system(&cfg, c(0.004)).unwrap();
        for (idx, v) in sys.rhs.iter().enumerate() {
            if idx != sys.row_index(0, 0) {
                assert_eq!(*v, ZERO);
            }
        }
        let k = 0.004;
        let expected = Complex64::new(0.0, 2.0 * 1e-4 * k) * (I * k * 0.0).exp();
        assert!((sys.rhs[sys.row_index(0, 0)] - expected).norm() < 1e-20);
    }

    #[test]
    fn zero_forcing_gives_zero_solution() {
        let mut cfg = SimulationConfig::standard(2, 0.4, 0.004).unwrap();
        cfg.incident.theta_left = ZERO;
        let sys = assemble_system(&cfg, c(0.004)).unwrap();
        assert!(sys.rhs.iter().all(|z| *z == ZERO));
        let w = solve_interior(&sys).unwrap();
        assert_eq!(w.norm(), 0.0);
        let ext = exterior_from_interior(&cfg, c(0.004), &sys.bases, &w).unwrap();
        assert!(ext.beta0.iter().chain(&ext.alpha_last).all(|z| *z == ZERO));
    }

    #[test]
    fn static_energy_single_resonator() {
        for omega in [0.001, 0.004, 0.013, -0.007] {
            let cfg = SimulationConfig::standard(1, 0.0, omega).unwrap();
            let sol = solve(&cfg, c(omega)).unwrap();
            let e = sol.exterior.reflection(0).norm_sqr() + sol.exterior.transmission(0).norm_sqr();
            assert!((e - 1.0).abs() < 1e-8, "{omega} {e}");
        }
    }

    #[test]
    fn transmission_conditions_hold() {
        let cfg = SimulationConfig::standard(3, 0.7, 0.0041).unwrap();
        let sol = solve(&cfg, c(0.0041)).unwrap();
        let sys = assemble_system(&cfg, c(0.0041)).unwrap();
        let w = CVector::from_vec(sol.interior.w.clone());
        assert!(componentwise_residual(&sys.matrix, &w, &sys.rhs) <= 1e-10);
        let kk = 4;
        for n in -kk..=kk {
            for i in 0..3 {
                for (x, b) in [(cfg.array.left(i), 2 * i), (cfg.array.right(i), 2 * i + 1)] {
                    let inside = interior_value(&sol.bases[i], &sol.interior, i, n, x);
                    let outside = mode_field(&cfg, sol.omega, &sol.bases, &sol.interior, &sol.exterior, n, x);
                    let vin = incident_trace(&cfg, sol.omega, n, b).0;
                    assert!((outside - (inside - vin)).norm() <= 1e-9 * (1.0 + inside.norm()));
                }
            }
        }
    }

    #[test]
    fn gap_coefficients_reproduce_gap_field() {
        let cfg = SimulationConfig::standard(2, 0.5, 0.0043).unwrap();
        let sol = solve(&cfg, c(0.0043)).unwrap();
        for n in -4i64..=4 {
            let idx = (n + 4) as usize;
            let (alpha, beta) = sol.exterior.gap_coefficients[idx][0].unwrap();
            let k = exterior_k(&cfg, sol.omega, n);
            for x in [2.0, 5.5, 11.9, 12.0] {
                let direct = alpha * (I * k * x).exp() + beta * (-I * k * x).exp();
                let field = mode_field(&cfg, sol.omega, &sol.bases, &sol.interior, &sol.exterior, n, x);
                assert!((direct - field).norm() <= 1e-9 * (1.0 + field.norm()));
            }
        }
    }

    #[test]
    fn field_is_periodic_for_zero_frequency_shift() {
        let cfg = SimulationConfig::standard(1, 0.5, 0.004).unwrap();
        let sol = solve(&cfg, c(0.004)).unwrap();
        let t = cfg.modulation.period();
        let phase = (-I * c(0.004) * t).exp();
        for x in [-5.0, 1.0, 7.0] {
            let a = sol.evaluate_field(x, 0.3) * phase;
            let b = sol.evaluate_field(x, 0.3 + t);
            assert!((a - b).norm() <= 1e-10 * (1.0 + a.norm()));
        }
        // static: far-field modulus constant in x
        let cfg = SimulationConfig::standard(1, 0.0, 0.004).unwrap();
        let sol = solve(&cfg, c(0.004)).unwrap();
        let far: Vec<f64> = [-100.0, -1000.0, 50.0, 500.0].iter().map(|&x| sol.evaluate_field(x, 0.0).norm()).collect();
        assert_relative_eq!(far[0], far[1], max_relative = 1e-12);
        assert_relative_eq!(far[2], far[3], max_relative = 1e-12);
    }

    #[test]
    fn mirror_symmetry_static() {
        let cfg = SimulationConfig::standard(2, 0.0, 0.0047).unwrap();
        let b = cfg.array.boundaries();
        let total = b[b.len() - 1] + b[0];
        let mirrored = crate::model::ResonatorArray::new(b.iter().rev().map(|x| total - x).collect()).unwrap();
        let mut flipped = cfg.clone();
        flipped.array = mirrored;
        flipped.incident = IncidentSpec { direction: Direction::Right, theta_left: ZERO, theta_right: ONE, omega: 0.0047 };
        let a = solve(&cfg, c(0.0047)).unwrap();
        let m = solve(&flipped, c(0.0047)).unwrap();
        assert_relative_eq!(a.exterior.reflection(0).norm(), m.exterior.transmission(0).norm(), max_relative = 1e-9);
        assert_relative_eq!(a.exterior.transmission(0).norm(), m.exterior.reflection(0).norm(), max_relative = 1e-9);
    }

    #[test]
    fn pole_pencil_residuals_and_fit() {
        let cfg = SimulationConfig::standard(1, 0.0, 0.0).unwrap();
        let pole = crate::quasifreq::static_single_exact(1e-4, 1.0, 1.0, 2.0);
        let data = pole_pencil(&cfg, pole).unwrap();
        assert!(data.right_residual <= 1e-8 && data.left_residual <= 1e-8);
        assert!(matches!(pole_pencil(&cfg, c(0.007)), Err(crate::Error::Numerical(NumericalError::NotAPole { .. }))));
        let at = scattered_field_approx(&cfg, pole, &[data], 10.0, 0.0, PoleOptions::default());
        assert!(at.is_err());
    }

    #[test]
    fn solution_norm_grows_like_inverse_distance() {
        let cfg = SimulationConfig::standard(1, 0.3, 0.0).unwrap();
        let fl = crate::quasifreq::floquet_quasifrequencies(&cfg).unwrap();
        let res = crate::quasifreq::det_root_quasifrequencies(&cfg, &fl.values[1..]).unwrap();
        let pole = res.set.values[0];
        let offsets: Vec<f64> = (0..6).map(|s| 1e-5 * 0.5f64.powi(s)).collect();
        let norms: Vec<f64> = offsets.iter().map(|&d| solve(&cfg, pole + Complex64::new(d, 0.0)).unwrap().interior.norm()).collect();
        let xs: Vec<f64> = offsets.iter().map(|d| d.ln()).collect();
        let ys: Vec<f64> = norms.iter().map(|d| d.ln()).collect();
        let mx = xs.iter().sum::<f64>() / 6.0;
        let my = ys.iter().sum::<f64>() / 6.0;
        let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
            / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
        assert!((slope + 1.0).abs() < 0.05, "{slope}");
    }

    #[test]
    fn pencil_residue_matches_direct_solve() {
        let cfg = SimulationConfig::standard(2, 0.4, 0.0).unwrap();
        let seeds = crate::quasifreq::floquet_quasifrequencies(&cfg).unwrap().values;
        let poles = crate::quasifreq::det_root_quasifrequencies(&cfg, &seeds).unwrap().set.values;
        let pole = poles.iter().cloned().max_by(|a, b| a.re.total_cmp(&b.re)).unwrap();
        let data = pole_pencil(&cfg, pole).unwrap();
        let xp = cfg.array.right(1) + cfg.array.gap(0);
        let pencil: Complex64 = data.gamma(&cfg, pole, xp).unwrap().iter().sum();
        let h = Complex64::new(1e-9, 5e-10);
        let direct = solve(&cfg, pole + h).unwrap().evaluate_field(xp, 0.0) * h;
        assert!((pencil - direct).norm() <= 1e-4 * direct.norm(), "{pencil} {direct}");
    }

    #[test]
    fn refinement_reaches_machine_residual() {
        let cfg = SimulationConfig::standard(2, 0.4, 0.0).unwrap();
        let rough = Complex64::new(3.3035e-3, -2.72e-5);
        let (polished, residual) = refine_pole(&cfg, rough).unwrap();
        assert!(residual < 1e-13);
        assert!((polished - rough).norm() < 1e-6);
        let data = pole_pencil(&cfg, polished).unwrap();
        assert!(data.right_residual <= NULL_RESIDUAL_TOL && data.left_residual <= NULL_RESIDUAL_TOL);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn solution_is_linear_in_amplitude(re in -2.0f64..2.0, im in -2.0f64..2.0, eps in 0.0f64..0.9) {
            let theta = Complex64::new(re, im);
            prop_assume!(theta.norm() > 1e-3);
            let cfg = SimulationConfig::standard(2, eps, 0.0047).unwrap();
            let mut scaled = cfg.clone();
            scaled.incident.theta_left = theta;
            let a = solve(&cfg, c(0.0047)).unwrap();
            let b = solve(&scaled, c(0.0047)).unwrap();
            for n in -4i64..=4 {
                let lhs = b.exterior.reflection(n);
                let rhs = a.exterior.reflection(n) * theta;
                prop_assert!((lhs - rhs).norm() <= 1e-9 * (1e-12 + rhs.norm()) + 1e-14);
            }
        }
    }
}
