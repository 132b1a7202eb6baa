//! Spherical Bessel, Neumann and Hankel functions and orthonormal complex
//! spherical harmonics.
//!
//! Conventions used throughout the crate:
//!
//! ```text
//! h_l(x) = j_l(x) + i y_l(x)                      (outgoing)
//! Y_lm(θ, φ) = N_lm P_l^m(cos θ) e^{imφ}          (Condon–Shortley phase)
//! ∫ Y_lm conj(Y_l'm') dΩ = δ_ll' δ_mm'
//! ```

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{NearFieldError, Result};

/// Degree/order pair of a spherical harmonic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SphericalBasisIndex {
    pub l: usize,
    pub m: i64,
}

impl SphericalBasisIndex {
    pub fn new(l: usize, m: i64) -> Result<Self> {
        if m.unsigned_abs() as usize > l {
            return Err(NearFieldError::Index { l, m });
        }
        Ok(Self { l, m })
    }

    /// Position in the flat `l² + l + m` ordering.
    pub fn flat(self) -> usize {
        lm_index(self.l, self.m)
    }

    pub fn from_flat(index: usize) -> Self {
        let l = (index as f64).sqrt() as usize;
        // guard against rounding in the square root
        let l = if (l + 1) * (l + 1) <= index { l + 1 } else if l * l > index { l - 1 } else { l };
        let m = index as i64 - (l * l + l) as i64;
        Self { l, m }
    }
}

/// Number of harmonic coefficients up to and including degree `l_max`.
pub fn harmonic_count(l_max: usize) -> usize {
    (l_max + 1) * (l_max + 1)
}

/// Flat index of `(l, m)`.
#[inline]
pub fn lm_index(l: usize, m: i64) -> usize {
    ((l * l + l) as i64 + m) as usize
}

/// Iterator over all `(l, m)` with `l <= l_max` in flat order.
pub fn lm_iter(l_max: usize) -> impl Iterator<Item = (usize, i64)> {
    (0..=l_max).flat_map(|l| (-(l as i64)..=l as i64).map(move |m| (l, m)))
}

fn check_arg(x: f64) -> Result<()> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(NearFieldError::Domain(format!("argument must be positive and finite, got {x}")));
    }
    Ok(())
}

/// `j_0 ..= j_{l_max}` at `x > 0` by Miller's downward recurrence, normalized
/// with `Σ (2l+1) j_l² = 1`.
pub fn spherical_bessel_j_array(l_max: usize, x: f64) -> Result<Vec<f64>> {
    check_arg(x)?;
    let top = l_max.max(x.ceil() as usize);
    let start = top + 30 + (10.0 * (top as f64).sqrt()).ceil() as usize;
    let keep = l_max.max(1);

    let mut out = vec![0.0; keep + 1];
    let mut next = 0.0_f64; // j_{n+1}
    let mut cur = 1e-100_f64; // j_n
    let mut norm = 0.0_f64;
    let mut n = start;
    loop {
        if n <= keep {
            out[n] = cur;
        }
        norm += (2 * n + 1) as f64 * cur * cur;
        if n == 0 {
            break;
        }
        let prev = (2 * n + 1) as f64 / x * cur - next;
        next = cur;
        cur = prev;
        n -= 1;
        if cur.abs() > 1e150 {
            let s = 1e-150;
            cur *= s;
            next *= s;
            norm *= s * s;
            for v in out.iter_mut() {
                *v *= s;
            }
        }
    }
    // The sum fixes the magnitude only; take the sign from whichever of the
    // closed forms of j_0, j_1 is farther from a zero.
    let j0 = x.sin() / x;
    let j1 = x.sin() / (x * x) - x.cos() / x;
    let sign = if j0.abs() > j1.abs() {
        j0.signum() * out[0].signum()
    } else {
        j1.signum() * out[1].signum()
    };
    let scale = sign / norm.sqrt();
    out.truncate(l_max + 1);
    for v in out.iter_mut() {
        *v *= scale;
    }
    Ok(out)
}

/// `y_0 ..= y_{l_max}` at `x > 0` by upward recurrence.
pub fn spherical_bessel_y_array(l_max: usize, x: f64) -> Result<Vec<f64>> {
    check_arg(x)?;
    let mut out = Vec::with_capacity(l_max + 1);
    let y0 = -x.cos() / x;
    out.push(y0);
    if l_max >= 1 {
        out.push(-x.cos() / (x * x) - x.sin() / x);
    }
    for l in 1..l_max {
        let v = (2 * l + 1) as f64 / x * out[l] - out[l - 1];
        out.push(v);
    }
    Ok(out)
}

/// Derivatives from values `f_0..=f_{L}` via `f_l' = f_{l-1} - (l+1)/x f_l`
/// (and `f_0' = -f_1`). Returns derivatives for `0..L` (one fewer entry).
fn derivatives_from<T>(values: &[T], x: f64) -> Vec<T>
where
    T: Copy + std::ops::Sub<Output = T> + std::ops::Mul<f64, Output = T> + std::ops::Neg<Output = T>,
{
    let n = values.len();
    let mut out = Vec::with_capacity(n - 1);
    out.push(-values[1]);
    for l in 1..n - 1 {
        out.push(values[l - 1] - values[l] * ((l + 1) as f64 / x));
    }
    out
}

/// `j_l(x)` for a single degree.
pub fn spherical_bessel_j(l: usize, x: f64) -> Result<f64> {
    Ok(spherical_bessel_j_array(l, x)?[l])
}

/// `y_l(x)` for a single degree.
pub fn spherical_bessel_y(l: usize, x: f64) -> Result<f64> {
    Ok(spherical_bessel_y_array(l, x)?[l])
}

/// Values and derivatives of `j_l`, `y_l`, `h_l^{(1)}` for all `l <= l_max`.
#[derive(Debug, Clone)]
pub struct RadialTable {
    pub x: f64,
    pub j: Vec<f64>,
    pub dj: Vec<f64>,
    pub y: Vec<f64>,
    pub dy: Vec<f64>,
}

impl RadialTable {
    pub fn new(l_max: usize, x: f64) -> Result<Self> {
        let j = spherical_bessel_j_array(l_max + 1, x)?;
        let y = spherical_bessel_y_array(l_max + 1, x)?;
        let dj = derivatives_from(&j, x);
        let dy = derivatives_from(&y, x);
        Ok(Self {
            x,
            j: j[..=l_max].to_vec(),
            dj,
            y: y[..=l_max].to_vec(),
            dy,
        })
    }

    pub fn h(&self, l: usize) -> Complex64 {
        Complex64::new(self.j[l], self.y[l])
    }

    pub fn dh(&self, l: usize) -> Complex64 {
        Complex64::new(self.dj[l], self.dy[l])
    }

    /// `j_{l+1}(x)` is not stored, but `j_l' = l/x j_l - j_{l+1}`.
    pub fn j_next(&self, l: usize) -> f64 {
        l as f64 / self.x * self.j[l] - self.dj[l]
    }
}

/// `h_l^{(1)}(x)` and its derivative.
pub fn spherical_hankel1(l: usize, x: f64) -> Result<(Complex64, Complex64)> {
    let t = RadialTable::new(l, x)?;
    Ok((t.h(l), t.dh(l)))
}

/// Outgoing Hankel values `h_0..=h_{l_max}` only.
pub fn spherical_hankel1_array(l_max: usize, x: f64) -> Result<Vec<Complex64>> {
    let j = spherical_bessel_j_array(l_max, x)?;
    let y = spherical_bessel_y_array(l_max, x)?;
    Ok(j.into_iter().zip(y).map(|(a, b)| Complex64::new(a, b)).collect())
}

/// Orthonormal associated Legendre values `N_lm P_l^m(cos θ)` for `0 <= m <= l <= l_max`,
/// stored at `lm_index(l, m)` (negative-m slots left at zero).
pub fn normalized_legendre(l_max: usize, cos_theta: f64) -> Vec<f64> {
    let mut p = vec![0.0; harmonic_count(l_max)];
    let x = cos_theta.clamp(-1.0, 1.0);
    let s = (1.0 - x * x).max(0.0).sqrt();
    let mut pmm = (1.0 / (4.0 * PI)).sqrt();
    for m in 0..=l_max {
        if m > 0 {
            pmm *= -((2 * m + 1) as f64 / (2 * m) as f64).sqrt() * s;
        }
        p[lm_index(m, m as i64)] = pmm;
        if m == l_max {
            break;
        }
        let mut p_lm2 = pmm;
        let mut p_lm1 = x * ((2 * m + 3) as f64).sqrt() * pmm;
        p[lm_index(m + 1, m as i64)] = p_lm1;
        for l in m + 2..=l_max {
            let lf = l as f64;
            let mf = m as f64;
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0)).sqrt();
            let v = a * (x * p_lm1 - b * p_lm2);
            p[lm_index(l, m as i64)] = v;
            p_lm2 = p_lm1;
            p_lm1 = v;
        }
    }
    p
}

/// All `Y_lm(θ, φ)` for `l <= l_max` in flat order.
pub fn spherical_harmonics_all(l_max: usize, theta: f64, phi: f64) -> Vec<Complex64> {
    let p = normalized_legendre(l_max, theta.cos());
    let mut out = vec![Complex64::new(0.0, 0.0); harmonic_count(l_max)];
    for l in 0..=l_max {
        for m in 0..=l as i64 {
            let v = p[lm_index(l, m)];
            let e = Complex64::from_polar(1.0, m as f64 * phi);
            let y = e * v;
            out[lm_index(l, m)] = y;
            if m > 0 {
                let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                out[lm_index(l, -m)] = y.conj() * sign;
            }
        }
    }
    out
}

/// Single orthonormal spherical harmonic `Y_lm(θ, φ)`.
pub fn spherical_harmonic(l: usize, m: i64, theta: f64, phi: f64) -> Result<Complex64> {
    SphericalBasisIndex::new(l, m)?;
    if !(0.0..=PI).contains(&theta) {
        return Err(NearFieldError::Domain(format!("colatitude {theta} outside [0, pi]")));
    }
    Ok(spherical_harmonics_all(l, theta, phi)[lm_index(l, m)])
}

/// Colatitude/azimuth of a nonzero vector.
pub fn direction_angles(v: [f64; 3]) -> (f64, f64) {
    let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    let theta = (v[2] / r).clamp(-1.0, 1.0).acos();
    let phi = v[1].atan2(v[0]);
    (theta, phi)
}
