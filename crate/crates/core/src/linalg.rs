//! Dense complex linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

pub const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Thin SVD `A = U diag(s) V^H` with singular values in descending order.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: CMat,
    pub s: Vec<f64>,
    pub v_t: CMat,
}

pub fn svd(a: &CMat) -> Svd {
    let dec = a.clone().svd(true, true);
    let mut order: Vec<usize> = (0..dec.singular_values.len()).collect();
    order.sort_by(|&i, &j| dec.singular_values[j].total_cmp(&dec.singular_values[i]));
    let u0 = dec.u.expect("u requested");
    let vt0 = dec.v_t.expect("v_t requested");
    let u = CMat::from_fn(u0.nrows(), order.len(), |r, c| u0[(r, order[c])]);
    let v_t = CMat::from_fn(order.len(), vt0.ncols(), |r, c| vt0[(order[r], c)]);
    let s = order.iter().map(|&i| dec.singular_values[i]).collect();
    Svd { u, s, v_t }
}

pub fn singular_values(a: &CMat) -> Vec<f64> {
    let mut s: Vec<f64> = a.clone().singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

impl Svd {
    /// Number of singular values above `tau * s_max`.
    pub fn rank(&self, tau: f64) -> usize {
        let s0 = self.s.first().copied().unwrap_or(0.0);
        self.s.iter().filter(|&&v| v > tau * s0).count()
    }

    /// Truncated pseudo-inverse keeping singular values above `tau * s_max`.
    pub fn pinv(&self, tau: f64) -> CMat {
        let keep = self.rank(tau);
        let mut out = CMat::zeros(self.v_t.ncols(), self.u.nrows());
        for i in 0..keep {
            let inv = 1.0 / self.s[i];
            let vi = self.v_t.row(i).adjoint();
            let ui = self.u.column(i).adjoint();
            out += (vi * ui) * Complex64::new(inv, 0.0);
        }
        out
    }
}

/// Largest singular value by power iteration on `A^H A`.
pub fn spectral_norm(a: &CMat) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let n = a.ncols();
    let mut x = CVec::from_fn(n, |i, _| Complex64::new(1.0 + (i % 7) as f64 * 0.1, (i % 3) as f64 * 0.05));
    let mut est = 0.0;
    for _ in 0..500 {
        let nx = x.norm();
        if nx == 0.0 {
            return 0.0;
        }
        x /= Complex64::new(nx, 0.0);
        let y = a * &x;
        let z = a.adjoint() * &y;
        let new = y.norm();
        x = z;
        if (new - est).abs() <= 1e-13 * new {
            return new;
        }
        est = new;
    }
    est
}

pub fn frobenius(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}
