//! Interior problem of each resonator: the truncated mode-coupling matrix
//! `C_i(omega)` and its eigenbasis.
//!
//! Inside resonator `i` the mode vector `v = (v_{-K}, ..., v_K)` solves
//! `v'' + C_i v = 0` with `C_i[n, n - m] = k_{i,m} k_r^{(n)} k_r^{(n-m)}`.
//! With eigenpairs `C_i f^j = lambda~_j f^j` and `lambda_j = sqrt(lambda~_j)`
//! the general solution is `sum_j (a_j e^{i lambda_j x} + b_j e^{-i lambda_j x}) f^j`.

use nalgebra::linalg::Schur;
use num_complex::Complex64;

use crate::error::NumericalError;
use crate::linalg::{CMatrix, CVector, ZERO};
use crate::model::SimulationConfig;

/// Relative residual every returned eigenpair must satisfy.
pub const EIGEN_RESIDUAL_TOL: f64 = 1e-10;
/// Eigenvalues closer than this (relative to `||C||`) form a cluster.
pub const CLUSTER_GAP: f64 = 1e-12;

/// `(k^{(n)}, k_r^{(n)}) = ((omega + n Omega) / v_0, (omega + n Omega) / v_r)`.
pub fn wavenumbers(omega: Complex64, n: i64, omega_mod: f64, v_out: f64, v_in: f64) -> (Complex64, Complex64) {
    let w = omega + n as f64 * omega_mod;
    (w / v_out, w / v_in)
}

/// Truncated coupling matrix of one resonator; rows and columns are
/// indexed by `n in [-K, K]` (matrix index `n + K`).
#[derive(Debug, Clone)]
pub struct InteriorCouplingMatrix {
    pub resonator: usize,
    pub k: usize,
    pub bandwidth: usize,
    pub omega: Complex64,
    pub entries: CMatrix,
}

impl InteriorCouplingMatrix {
    pub fn dim(&self) -> usize {
        2 * self.k + 1
    }

    pub fn get(&self, n: i64, m: i64) -> Complex64 {
        let k = self.k as i64;
        self.entries[((n + k) as usize, (m + k) as usize)]
    }
}

pub fn build_interior_matrix(i: usize, omega: Complex64, cfg: &SimulationConfig) -> InteriorCouplingMatrix {
    let k = cfg.truncation.k;
    let band = cfg.truncation.m as i64;
    let series = cfg.modulation.series(i);
    let omega_mod = cfg.omega_mod();
    let kr = |n: i64| wavenumbers(omega, n, omega_mod, cfg.params.v_out, cfg.params.v_in).1;
    let ki = k as i64;
    let dim = 2 * k + 1;
    let mut entries = CMatrix::zeros(dim, dim);
    for n in -ki..=ki {
        for m in -band..=band {
            let col = n - m;
            if col.abs() > ki {
                continue;
            }
            entries[((n + ki) as usize, (col + ki) as usize)] = series.get(m) * kr(n) * kr(col);
        }
    }
    InteriorCouplingMatrix { resonator: i, k, bandwidth: cfg.truncation.m, omega, entries }
}

/// Eigenpairs of `C_i`, ordered so that column `j + K` is the mode whose
/// eigenvector is dominated by row `j` (exactly `e_j` in the static limit).
#[derive(Debug, Clone)]
pub struct InteriorBasis {
    pub resonator: usize,
    pub k: usize,
    /// Eigenvalues `lambda~_j`.
    pub eigenvalues: Vec<Complex64>,
    /// Square roots `lambda_j` used in the exponentials.
    pub lambdas: Vec<Complex64>,
    /// Unit-norm eigenvectors as columns.
    pub vectors: CMatrix,
    /// `||C f - lambda~ f|| / ||C||` per mode.
    pub residuals: Vec<f64>,
}

impl InteriorBasis {
    pub fn dim(&self) -> usize {
        2 * self.k + 1
    }

    /// Component `f^{j}_n` (both indices in `[-K, K]`).
    pub fn component(&self, j: i64, n: i64) -> Complex64 {
        let k = self.k as i64;
        self.vectors[((n + k) as usize, (j + k) as usize)]
    }

    /// Reorders, rephases and re-signs this basis to follow `reference`
    /// continuously: columns are matched by overlap, each vector is rotated
    /// so that its overlap with the matched reference vector is real
    /// positive, and the root `+-lambda` closest to the reference root is
    /// taken. Used for finite differences in `omega`.
    pub fn aligned_to(&self, reference: &InteriorBasis) -> InteriorBasis {
        let d = self.dim();
        let mut overlaps: Vec<(f64, usize, usize)> = Vec::with_capacity(d * d);
        for r in 0..d {
            for c in 0..d {
                let o = reference.vectors.column(r).dotc(&self.vectors.column(c)).norm();
                overlaps.push((o, r, c));
            }
        }
        overlaps.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut assignment = vec![usize::MAX; d];
        let mut used = vec![false; d];
        for (_, r, c) in overlaps {
            if assignment[r] == usize::MAX && !used[c] {
                assignment[r] = c;
                used[c] = true;
            }
        }
        let mut out = self.clone();
        for (r, &c) in assignment.iter().enumerate() {
            let mut v: CVector = self.vectors.column(c).into_owned();
            let o = reference.vectors.column(r).dotc(&v);
            if o.norm() > 0.0 {
                v *= o.conj() / o.norm();
            }
            out.vectors.set_column(r, &v);
            out.eigenvalues[r] = self.eigenvalues[c];
            out.residuals[r] = self.residuals[c];
            let lam = self.lambdas[c];
            let target = reference.lambdas[r];
            out.lambdas[r] = if (lam - target).norm() <= (-lam - target).norm() { lam } else { -lam };
        }
        out
    }
}

/// Principal square root; on the branch cut the root with nonnegative
/// imaginary part is returned.
pub fn principal_sqrt(z: Complex64) -> Complex64 {
    let r = z.sqrt();
    if r.re == 0.0 && r.im < 0.0 {
        -r
    } else {
        r
    }
}

pub fn interior_eigenbasis(mat: &InteriorCouplingMatrix) -> Result<InteriorBasis, NumericalError> {
    let c = &mat.entries;
    let d = c.nrows();
    if c.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(NumericalError::Eigen { omega: mat.omega });
    }
    let cnorm = c.norm();

    let diagonal = (0..d).all(|r| (0..d).all(|s| r == s || c[(r, s)] == ZERO));
    let (eigenvalues, mut vectors) = if diagonal {
        ((0..d).map(|r| c[(r, r)]).collect::<Vec<_>>(), CMatrix::identity(d, d))
    } else {
        schur_eigenpairs(c).ok_or(NumericalError::Eigen { omega: mat.omega })?
    };

    // unit norm, dominant component real positive
    for j in 0..d {
        let mut v: CVector = vectors.column(j).into_owned();
        let norm = v.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(NumericalError::Eigen { omega: mat.omega });
        }
        v /= Complex64::new(norm, 0.0);
        let dom = dominant_row(&v);
        let phase = v[dom] / v[dom].norm();
        v *= phase.conj();
        vectors.set_column(j, &v);
    }

    // ordering: dominant row, then real and imaginary part of the eigenvalue
    let mut order: Vec<usize> = (0..d).collect();
    let keys: Vec<usize> = (0..d).map(|j| dominant_row(&vectors.column(j).into_owned())).collect();
    order.sort_by(|&a, &b| {
        keys[a]
            .cmp(&keys[b])
            .then(eigenvalues[a].re.total_cmp(&eigenvalues[b].re))
            .then(eigenvalues[a].im.total_cmp(&eigenvalues[b].im))
    });
    let eigenvalues: Vec<Complex64> = order.iter().map(|&j| eigenvalues[j]).collect();
    let mut sorted = CMatrix::zeros(d, d);
    for (dst, &src) in order.iter().enumerate() {
        sorted.set_column(dst, &vectors.column(src));
    }
    let mut vectors = sorted;

    if !diagonal {
        orthonormalize_clusters(&eigenvalues, &mut vectors, CLUSTER_GAP * cnorm.max(f64::MIN_POSITIVE));
    }

    let residuals: Vec<f64> = (0..d)
        .map(|j| {
            let v = vectors.column(j);
            let r = c * v - v * eigenvalues[j];
            if cnorm == 0.0 { r.norm() } else { r.norm() / cnorm }
        })
        .collect();
    if residuals.iter().any(|&r| !(r <= EIGEN_RESIDUAL_TOL)) {
        return Err(NumericalError::Eigen { omega: mat.omega });
    }

    Ok(InteriorBasis {
        resonator: mat.resonator,
        k: mat.k,
        lambdas: eigenvalues.iter().map(|&z| principal_sqrt(z)).collect(),
        eigenvalues,
        vectors,
        residuals,
    })
}

fn dominant_row(v: &CVector) -> usize {
    // first index attaining the maximum keeps ties deterministic
    let mut best = 0;
    for r in 1..v.len() {
        if v[r].norm() > v[best].norm() * (1.0 + 1e-12) {
            best = r;
        }
    }
    best
}

/// Complex Schur form `C = Q T Q^H`, eigenvectors by back substitution on
/// the triangular factor.
fn schur_eigenpairs(c: &CMatrix) -> Option<(Vec<Complex64>, CMatrix)> {
    let d = c.nrows();
    let schur = Schur::try_new(c.clone(), f64::EPSILON, 10_000)?;
    let (q, t) = schur.unpack();
    let eigenvalues: Vec<Complex64> = (0..d).map(|j| t[(j, j)]).collect();
    let tiny = f64::EPSILON * t.norm().max(f64::MIN_POSITIVE);
    let mut y = CMatrix::zeros(d, d);
    for k in 0..d {
        y[(k, k)] = Complex64::new(1.0, 0.0);
        for r in (0..k).rev() {
            let mut s = ZERO;
            for l in r + 1..=k {
                s += t[(r, l)] * y[(l, k)];
            }
            let mut denom = t[(r, r)] - t[(k, k)];
            if denom.norm() < tiny {
                denom = Complex64::new(tiny, 0.0);
            }
            y[(r, k)] = -s / denom;
        }
    }
    Some((eigenvalues, q * y))
}

/// Modified Gram-Schmidt inside each numerically degenerate cluster;
/// clusters are re-sorted by the imaginary part of the eigenvalue.
fn orthonormalize_clusters(eigenvalues: &[Complex64], vectors: &mut CMatrix, gap: f64) {
    let d = eigenvalues.len();
    let mut seen = vec![false; d];
    for a in 0..d {
        if seen[a] {
            continue;
        }
        let mut cluster: Vec<usize> =
            (a..d).filter(|&b| !seen[b] && (eigenvalues[b] - eigenvalues[a]).norm() < gap).collect();
        for &b in &cluster {
            seen[b] = true;
        }
        if cluster.len() < 2 {
            continue;
        }
        cluster.sort_by(|&x, &y| eigenvalues[x].im.total_cmp(&eigenvalues[y].im));
        let mut basis: Vec<CVector> = Vec::new();
        for &b in &cluster {
            let mut v: CVector = vectors.column(b).into_owned();
            for u in &basis {
                let p = u.dotc(&v);
                v -= u * p;
            }
            let n = v.norm();
            if n > 1e-8 {
                v /= Complex64::new(n, 0.0);
                vectors.set_column(b, &v);
            }
            basis.push(vectors.column(b).into_owned());
        }
    }
}

/// Eigenbases of every resonator at `omega`.
pub fn interior_bases(omega: Complex64, cfg: &SimulationConfig) -> Result<Vec<InteriorBasis>, NumericalError> {
    (0..cfg.n()).map(|i| interior_eigenbasis(&build_interior_matrix(i, omega, cfg))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SimulationConfig;
    use proptest::prelude::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn wavenumber_examples() {
        let (k, _) = wavenumbers(c(0.03), -1, 0.03, 1.0, 1.0);
        assert_eq!(k, c(0.0));
        let (k, kr) = wavenumbers(c(0.01), 2, 0.03, 1.0, 1.0);
        assert!((k - c(0.07)).norm() < 1e-16);
        assert_eq!(k, kr);
        let (k, kr) = wavenumbers(c(0.01), 2, 0.03, 1.0, 0.5);
        assert!((kr - k * 2.0).norm() < 1e-16);
    }

    #[test]
    fn static_matrix_is_diagonal_squares() {
        let mut cfg = SimulationConfig::standard(1, 0.0, 0.0).unwrap();
        cfg.truncation.k = 2;
        let m = build_interior_matrix(0, c(0.01), &cfg);
        let expected = [-0.05, -0.02, 0.01, 0.04, 0.07];
        for (r, e) in expected.iter().enumerate() {
            assert!((m.entries[(r, r)] - c(e * e)).norm() < 1e-17);
        }
        let off: f64 = (0..5).flat_map(|r| (0..5).map(move |s| (r, s))).filter(|(r, s)| r != s)
            .map(|(r, s)| m.entries[(r, s)].norm()).sum();
        assert_eq!(off, 0.0);
    }

    #[test]
    fn modulated_matrix_band() {
        let mut cfg = SimulationConfig::standard(1, 0.6, 0.0).unwrap();
        cfg.modulation = crate::modulation::ModulationProfile::new(
            0.03,
            vec![crate::modulation::ModulationEntry::cosine(0.6, 0.0).unwrap()],
        )
        .unwrap();
        let omega = c(0.004);
        let m = build_interior_matrix(0, omega, &cfg);
        let kr = |n: i64| omega + n as f64 * 0.03;
        for n in -3i64..=4 {
            let expected = c(0.3) * kr(n) * kr(n - 1);
            assert!((m.get(n, n - 1) - expected).norm() < 1e-17);
            let expected = c(0.3) * kr(n - 1) * kr(n);
            assert!((m.get(n - 1, n) - expected).norm() < 1e-17);
        }
        assert_eq!(m.get(4, -4), c(0.0));
        for n in -4i64..=4 {
            for l in -4i64..=4 {
                if (n - l).abs() > 1 {
                    assert_eq!(m.get(n, l), c(0.0));
                }
            }
        }
    }

    #[test]
    fn static_basis_is_standard() {
        let cfg = SimulationConfig::standard(1, 0.0, 0.0).unwrap();
        let omega = c(0.004);
        let b = interior_eigenbasis(&build_interior_matrix(0, omega, &cfg)).unwrap();
        for j in -4i64..=4 {
            let idx = (j + 4) as usize;
            assert_eq!(b.lambdas[idx], principal_sqrt((omega + j as f64 * 0.03).powi(2)));
            assert!((b.lambdas[idx].norm() - (0.004 + j as f64 * 0.03).abs()).abs() < 1e-16);
            for n in -4i64..=4 {
                assert_eq!(b.component(j, n), if n == j { c(1.0) } else { c(0.0) });
            }
        }
    }

    #[test]
    fn zero_wavenumber_gives_zero_root() {
        let cfg = SimulationConfig::standard(1, 0.0, 0.0).unwrap();
        let b = interior_eigenbasis(&build_interior_matrix(0, c(0.03), &cfg)).unwrap();
        assert_eq!(b.lambdas[3], c(0.0));
        // modulated: row and column of the silent mode vanish, still exact
        let cfg = SimulationConfig::standard(1, 0.7, 0.0).unwrap();
        let b = interior_eigenbasis(&build_interior_matrix(0, c(0.03), &cfg)).unwrap();
        assert!(b.eigenvalues.iter().any(|z| z.norm() < 1e-18));
    }

    #[test]
    fn strong_modulation_residuals() {
        let cfg = SimulationConfig::standard(6, 0.9, 0.0).unwrap();
        for omega in [c(0.004), Complex64::new(0.0031, -2.5e-5), c(0.0149), c(-0.011)] {
            for i in 0..6 {
                let b = interior_eigenbasis(&build_interior_matrix(i, omega, &cfg)).unwrap();
                assert!(b.residuals.iter().all(|&r| r <= EIGEN_RESIDUAL_TOL), "{:?}", b.residuals);
                for j in 0..9 {
                    assert!((b.vectors.column(j).norm() - 1.0).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn branch_convention() {
        assert_eq!(principal_sqrt(c(-4.0)), Complex64::new(0.0, 2.0));
        assert_eq!(principal_sqrt(Complex64::new(-4.0, -0.0)), Complex64::new(0.0, 2.0));
        let r = principal_sqrt(Complex64::new(-1.0, -1e-3));
        assert!(r.re >= 0.0);
    }

    #[test]
    fn aligned_basis_is_continuous() {
        let cfg = SimulationConfig::standard(2, 0.9, 0.0).unwrap();
        let w = Complex64::new(0.0032, -2.0e-5);
        let h = 1e-8;
        let b0 = interior_eigenbasis(&build_interior_matrix(1, w, &cfg)).unwrap();
        let b1 = interior_eigenbasis(&build_interior_matrix(1, w + h, &cfg)).unwrap().aligned_to(&b0);
        for j in 0..9 {
            assert!((b1.vectors.column(j) - b0.vectors.column(j)).norm() < 1e-5);
            assert!((b1.lambdas[j] - b0.lambdas[j]).norm() < 1e-5);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn trace_and_continuity(eps in 0.0f64..0.95, re in -0.015f64..0.015, im in -1e-3f64..1e-3, i in 0usize..3) {
            let cfg = SimulationConfig::standard(3, eps, 0.0).unwrap();
            let omega = Complex64::new(re, im);
            let m = build_interior_matrix(i, omega, &cfg);
            let b = interior_eigenbasis(&m).unwrap();
            let trace: Complex64 = (0..9).map(|r| m.entries[(r, r)]).sum();
            let sum: Complex64 = b.eigenvalues.iter().sum();
            prop_assert!((trace - sum).norm() <= 1e-10 * trace.norm());

            // a 1e-8 perturbation moves every eigenvalue by O(1e-8) relative
            let b2 = interior_eigenbasis(&build_interior_matrix(i, omega * (1.0 + 1e-8), &cfg)).unwrap();
            let scale = m.entries.norm();
            for z in &b.eigenvalues {
                let nearest = b2.eigenvalues.iter().map(|w| (w - z).norm()).fold(f64::INFINITY, f64::min);
                prop_assert!(nearest <= 1e-6 * scale);
            }
        }
    }
}
