use anyhow::{bail, Context, Result};
use num_complex::Complex64;

/// `a:b:n` inclusive linear grid, or a single number.
pub fn grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    match parts.as_slice() {
        [single] => Ok(vec![number(single)?]),
        [a, b, n] => {
            let (a, b) = (number(a)?, number(b)?);
            let n: usize = n.trim().parse().with_context(|| format!("grid point count {n:?} is not a positive integer"))?;
            if n == 0 {
                bail!("grid needs at least one point");
            }
            if n == 1 {
                return Ok(vec![a]);
            }
            let step = (b - a) / (n - 1) as f64;
            Ok((0..n).map(|i| if i + 1 == n { b } else { a + step * i as f64 }).collect())
        }
        _ => bail!("grid {spec:?} is not of the form a:b:n"),
    }
}

pub fn number(s: &str) -> Result<f64> {
    let v: f64 = s.trim().parse().with_context(|| format!("{s:?} is not a number"))?;
    if !v.is_finite() {
        bail!("{s:?} is not finite");
    }
    Ok(v)
}

pub fn list<T: std::str::FromStr>(spec: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    spec.split(',')
        .map(|s| s.trim().parse::<T>().map_err(|e| anyhow::anyhow!("bad list entry {s:?}: {e}")))
        .collect()
}

/// `x`, `x+iy`-style complex numbers, written as `0.004-2e-6i`.
pub fn complex(s: &str) -> Result<Complex64> {
    let z: Complex64 = s.trim().parse().map_err(|e| anyhow::anyhow!("{s:?} is not a complex number: {e:?}"))?;
    if !z.re.is_finite() || !z.im.is_finite() {
        bail!("{s:?} is not finite");
    }
    Ok(z)
}
