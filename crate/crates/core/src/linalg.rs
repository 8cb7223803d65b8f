//! Dense complex LU with an overflow-safe determinant, plus a few helpers
//! shared by the solvers.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const I: Complex64 = Complex64::new(0.0, 1.0);

/// A complex number stored as `mantissa * 2^exponent` with
/// `|mantissa|` in `[0.5, 1)` (or exactly zero).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledComplex {
    pub mantissa: Complex64,
    pub exponent: i64,
}

impl ScaledComplex {
    pub fn one() -> Self {
        Self { mantissa: ONE, exponent: 0 }
    }

    pub fn zero() -> Self {
        Self { mantissa: ZERO, exponent: 0 }
    }

    pub fn is_zero(&self) -> bool {
        self.mantissa == ZERO
    }

    fn normalized(mut self) -> Self {
        let r = self.mantissa.norm();
        if r == 0.0 || !r.is_finite() {
            return self;
        }
        let e = r.log2().floor() as i64 + 1;
        self.mantissa *= pow2(-e);
        self.exponent += e;
        // log2 rounding can leave |mantissa| a hair outside [0.5, 1)
        let r = self.mantissa.norm();
        if r >= 1.0 {
            self.mantissa *= 0.5;
            self.exponent += 1;
        } else if r < 0.5 {
            self.mantissa *= 2.0;
            self.exponent -= 1;
        }
        self
    }

    pub fn mul(self, z: Complex64) -> Self {
        Self { mantissa: self.mantissa * z, exponent: self.exponent }.normalized()
    }

    /// Value scaled by `2^-shift`; underflows gracefully to zero.
    pub fn scaled_value(&self, shift: i64) -> Complex64 {
        self.mantissa * pow2(self.exponent - shift)
    }

    /// Plain value; may overflow to infinity or underflow to zero.
    pub fn value(&self) -> Complex64 {
        self.scaled_value(0)
    }

    pub fn log2_abs(&self) -> f64 {
        self.mantissa.norm().log2() + self.exponent as f64
    }
}

/// `2^e` without intermediate overflow for moderate `e`.
pub fn pow2(e: i64) -> f64 {
    let e = e.clamp(-2000, 2000) as i32;
    if e > 1000 {
        2f64.powi(1000) * 2f64.powi(e - 1000)
    } else if e < -1000 {
        2f64.powi(-1000) * 2f64.powi(e + 1000)
    } else {
        2f64.powi(e)
    }
}

/// Partial-pivot LU factorisation `P A = L U`.
#[derive(Debug, Clone)]
pub struct Lu {
    lu: CMatrix,
    perm: Vec<usize>,
    det: ScaledComplex,
    singular: bool,
}

impl Lu {
    pub fn new(mut a: CMatrix) -> Self {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "LU needs a square matrix");
        let mut perm: Vec<usize> = (0..n).collect();
        let mut det = ScaledComplex::one();
        let mut singular = false;
        for k in 0..n {
            let (p, pmax) = (k..n)
                .map(|r| (r, a[(r, k)].norm()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pmax == 0.0 {
                singular = true;
                det = ScaledComplex::zero();
                continue;
            }
            if p != k {
                a.swap_rows(p, k);
                perm.swap(p, k);
                det = det.mul(-ONE);
            }
            let pivot = a[(k, k)];
            det = det.mul(pivot);
            for r in k + 1..n {
                let f = a[(r, k)] / pivot;
                a[(r, k)] = f;
                if f != ZERO {
                    for c in k + 1..n {
                        let u = a[(k, c)];
                        a[(r, c)] -= f * u;
                    }
                }
            }
        }
        Self { lu: a, perm, det, singular }
    }

    pub fn determinant(&self) -> ScaledComplex {
        self.det
    }

    pub fn is_singular(&self) -> bool {
        self.singular
    }

    pub fn dim(&self) -> usize {
        self.lu.nrows()
    }

    /// Solves `A x = b`; `None` when a zero pivot was met.
    pub fn solve(&self, b: &CVector) -> Option<CVector> {
        if self.singular {
            return None;
        }
        let n = self.dim();
        let mut x = CVector::from_fn(n, |i, _| b[self.perm[i]]);
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s / self.lu[(i, i)];
        }
        Some(x)
    }

    /// Explicit inverse (small systems only).
    pub fn inverse(&self) -> Option<CMatrix> {
        let n = self.dim();
        let mut inv = CMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = CVector::zeros(n);
            e[j] = ONE;
            inv.set_column(j, &self.solve(&e)?);
        }
        Some(inv)
    }
}

pub fn norm1(a: &CMatrix) -> f64 {
    a.column_iter().map(|c| c.iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max)
}

/// `max_i |r_i| / (sum_j |A_ij| |x_j| + |b_i|)`.
pub fn componentwise_residual(a: &CMatrix, x: &CVector, b: &CVector) -> f64 {
    let r = a * x - b;
    (0..a.nrows())
        .map(|i| {
            let scale: f64 = (0..a.ncols()).map(|j| a[(i, j)].norm() * x[j].norm()).sum::<f64>() + b[i].norm();
            if scale == 0.0 {
                if r[i].norm() == 0.0 { 0.0 } else { f64::INFINITY }
            } else {
                r[i].norm() / scale
            }
        })
        .fold(0.0, f64::max)
}

/// Smallest singular triple of `a`: `(sigma_min, sigma_max, u, v)` with
/// `a v = sigma_min u`.
pub fn smallest_singular_pair(a: &CMatrix) -> (f64, f64, CVector, CVector) {
    let svd = a.clone().svd(true, true);
    let (imin, smin) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, &s)| if s < best.1 { (i, s) } else { best });
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let u = svd.u.as_ref().expect("requested u").column(imin).into_owned();
    let v_t = svd.v_t.as_ref().expect("requested v_t");
    let v = v_t.row(imin).adjoint().into_owned();
    (smin, smax, u, v)
}

/// Largest singular value.
pub fn spectral_norm(a: &CMatrix) -> f64 {
    a.clone().singular_values().iter().cloned().fold(0.0, f64::max)
}
