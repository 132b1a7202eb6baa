//! Dirichlet-to-Neumann maps on the scatterer sphere `r = a`, diagonal in the
//! harmonic basis: free interior `F₀`, radiating exterior `F^out`, and interior
//! with the radial potential `F_n`. Normals point outward.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NearFieldError, Result};
use crate::scene::RadialPotential;
use crate::specfun::{spherical_bessel_j, RadialTable};

/// Relative threshold below which `|j_l(ka)|` or `|w(a)|` signals a pole.
pub const POLE_THRESHOLD: f64 = 1e-8;

/// Default number of uniform steps across `[0, a]`.
pub const DEFAULT_STEPS: usize = 2000;

/// Start of the radial integration as a fraction of `a`.
pub const R_MIN_FRACTION: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DtnKind {
    F0,
    Fout,
    Fn,
}

/// A diagonal operator on the scatterer sphere, one entry per degree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicDiagonal {
    pub kind: DtnKind,
    pub entries: Vec<Complex64>,
}

#[derive(Serialize, Deserialize)]
struct DiagonalEntryJson {
    l: usize,
    re: f64,
    im: f64,
}

#[derive(Serialize, Deserialize)]
struct DiagonalJson {
    kind: DtnKind,
    entries: Vec<DiagonalEntryJson>,
}

impl HarmonicDiagonal {
    pub fn l_max(&self) -> usize {
        self.entries.len().saturating_sub(1)
    }

    pub fn get(&self, l: usize) -> Complex64 {
        self.entries[l]
    }

    pub fn to_json(&self) -> String {
        let doc = DiagonalJson {
            kind: self.kind,
            entries: self
                .entries
                .iter()
                .enumerate()
                .map(|(l, z)| DiagonalEntryJson { l, re: z.re, im: z.im })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("diagonal serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: DiagonalJson = serde_json::from_str(text)?;
        let mut entries = vec![Complex64::new(0.0, 0.0); doc.entries.len()];
        for e in doc.entries {
            if e.l >= entries.len() {
                return Err(NearFieldError::Dimension(format!("degree {} out of range", e.l)));
            }
            entries[e.l] = Complex64::new(e.re, e.im);
        }
        Ok(Self { kind: doc.kind, entries })
    }
}

fn pole_check_j(l: usize, k: f64, a: f64, table: &RadialTable) -> Result<()> {
    // compare against the largest |j_l(kr)| over r in (0, a]
    let mut peak = table.j[l].abs();
    for s in 1..=200 {
        let r = a * s as f64 / 200.0;
        peak = peak.max(spherical_bessel_j(l, k * r)?.abs());
    }
    if table.j[l].abs() < POLE_THRESHOLD * peak {
        return Err(NearFieldError::Pole {
            l,
            detail: format!("|j_l(ka)| = {:e} at ka = {}: Dirichlet eigenvalue of the scatterer ball", table.j[l].abs(), k * a),
        });
    }
    Ok(())
}

/// `f₀(l) = k j_l'(ka) / j_l(ka)`.
pub fn dtn_interior_free(l: usize, k: f64, a: f64) -> Result<f64> {
    let t = RadialTable::new(l, k * a)?;
    pole_check_j(l, k, a, &t)?;
    // l/a - k j_{l+1}/j_l avoids cancellation for large l
    Ok(l as f64 / a - k * t.j_next(l) / t.j[l])
}

/// `f^out(l) = k h_l'(ka) / h_l(ka)`.
pub fn dtn_exterior(l: usize, k: f64, a: f64) -> Result<Complex64> {
    let t = RadialTable::new(l, k * a)?;
    Ok(t.dh(l) / t.h(l) * k)
}

/// Regular radial solution `w = r^l v` of
/// `w'' + (2/r) w' + (k² n(r) - l(l+1)/r²) w = 0` evaluated at `r = a`.
#[derive(Debug, Clone, Copy)]
pub struct RegularSolution {
    pub l: usize,
    /// `v(a)` with `v(0) = 1`.
    pub v: f64,
    /// `v'(a)`.
    pub dv: f64,
    /// `|w(a)| / max_r |w(r)|`.
    pub pole_margin: f64,
    /// `∫_0^a (s/a)^l v(s) (n(s) - 1) j_l(ks) s² ds` when requested.
    pub source_integral: f64,
}

impl RegularSolution {
    /// Logarithmic derivative `w'(a)/w(a)`.
    pub fn log_derivative(&self, a: f64) -> f64 {
        self.l as f64 / a + self.dv / self.v
    }

    /// `w(a)` and `w'(a)` rescaled by `a^{-l}`.
    pub fn scaled_trace(&self, a: f64) -> (f64, f64) {
        (self.v, self.l as f64 / a * self.v + self.dv)
    }
}

/// Frobenius series of `v` about the origin for constant `n`:
/// `v = Σ c_j r^{2j}`, `c_j = -κ² c_{j-1} / (2j (2j + 2l + 1))`.
fn frobenius_start(l: usize, kappa2: f64, r: f64) -> (f64, f64) {
    let mut c = 1.0;
    let mut v = 1.0;
    let mut dv = 0.0;
    let r2 = r * r;
    let mut rp = 1.0; // r^{2j}
    for j in 1..60 {
        let jf = j as f64;
        c *= -kappa2 / (2.0 * jf * (2.0 * jf + 2.0 * l as f64 + 1.0));
        rp *= r2;
        let term = c * rp;
        v += term;
        dv += 2.0 * jf * term / r;
        if term.abs() < 1e-18 * v.abs() {
            break;
        }
    }
    (v, dv)
}

/// Integrate the regular radial solution for degree `l` with `steps` uniform
/// steps across `[0, a]` (graded near the origin, breakpoints as nodes).
pub fn integrate_regular(
    potential: &RadialPotential,
    l: usize,
    k: f64,
    a: f64,
    steps: usize,
    with_source: bool,
) -> RegularSolution {
    let h = a / steps as f64;
    // grading radius is tied to the default step so that refining h refines
    // every step by the same factor
    let r_grade = 2.0 * (l as f64 + 1.0) * a / DEFAULT_STEPS as f64;
    let k2 = k * k;
    let lf = l as f64;
    let r_min = R_MIN_FRACTION * a;

    let (mut v, mut p) = frobenius_start(l, k2 * potential.core_value(), r_min);
    let mut integral = 0.0;
    let mut r = r_min;
    let mut max_w = (r_min / a).powi(l as i32) * v.abs();

    let mut nodes: Vec<f64> = potential.breakpoints.iter().copied().filter(|&b| b > r_min && b < a).collect();
    nodes.push(a);
    let mut next_node = 0;

    let source = |s: f64, vv: f64, n: f64| -> f64 {
        if !with_source || n == 1.0 {
            return 0.0;
        }
        let j = spherical_bessel_j(l, k * s).expect("positive radius");
        (s / a).powi(l as i32) * vv * (n - 1.0) * j * s * s
    };

    while next_node < nodes.len() {
        let target = nodes[next_node];
        let mut step = h * (r / r_grade).min(1.0);
        let landing = r + step >= target - 1e-14 * a;
        if landing {
            step = target - r;
            next_node += 1;
        }
        let n = potential.evaluate(r + 0.5 * step);
        let kn = k2 * n;
        let f = |s: f64, vv: f64, pp: f64| -> (f64, f64) { (pp, -2.0 * (lf + 1.0) / s * pp - kn * vv) };

        let (k1v, k1p) = f(r, v, p);
        let k1i = source(r, v, n);
        let rm = r + 0.5 * step;
        let (v2, p2) = (v + 0.5 * step * k1v, p + 0.5 * step * k1p);
        let (k2v, k2p) = f(rm, v2, p2);
        let k2i = source(rm, v2, n);
        let (v3, p3) = (v + 0.5 * step * k2v, p + 0.5 * step * k2p);
        let (k3v, k3p) = f(rm, v3, p3);
        let k3i = source(rm, v3, n);
        let re = r + step;
        let (v4, p4) = (v + step * k3v, p + step * k3p);
        let (k4v, k4p) = f(re, v4, p4);
        let k4i = source(re, v4, n);

        v += step / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
        p += step / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
        integral += step / 6.0 * (k1i + 2.0 * k2i + 2.0 * k3i + k4i);
        r = if landing { target } else { r + step };
        max_w = max_w.max((r / a).powi(l as i32) * v.abs());
    }

    RegularSolution {
        l,
        v,
        dv: p,
        pole_margin: if max_w > 0.0 { v.abs() / max_w } else { 0.0 },
        source_integral: integral,
    }
}

/// `f_n(l) = w'(a)/w(a)` for the regular solution with the potential.
pub fn dtn_potential(potential: &RadialPotential, l: usize, k: f64, a: f64) -> Result<f64> {
    dtn_potential_with_steps(potential, l, k, a, DEFAULT_STEPS)
}

pub fn dtn_potential_with_steps(potential: &RadialPotential, l: usize, k: f64, a: f64, steps: usize) -> Result<f64> {
    let sol = integrate_regular(potential, l, k, a, steps, false);
    check_pole(&sol)?;
    Ok(sol.log_derivative(a))
}

pub(crate) fn check_pole(sol: &RegularSolution) -> Result<()> {
    if !(sol.pole_margin >= POLE_THRESHOLD) {
        return Err(NearFieldError::Pole {
            l: sol.l,
            detail: format!(
                "|w(a)|/max|w| = {:e}: interior eigenvalue of the radial problem",
                sol.pole_margin
            ),
        });
    }
    Ok(())
}

/// Smallest pole margin over `l <= l_max` and the degree attaining it.
pub fn potential_pole_margin(potential: &RadialPotential, l_max: usize, k: f64, a: f64) -> Result<(f64, usize)> {
    let margins: Vec<f64> = (0..=l_max)
        .into_par_iter()
        .map(|l| integrate_regular(potential, l, k, a, DEFAULT_STEPS, false).pole_margin)
        .collect();
    let (l, m) = margins
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (l, &m)| if m < acc.1 { (l, m) } else { acc });
    Ok((m, l))
}

pub fn free_interior_diagonal(l_max: usize, k: f64, a: f64) -> Result<HarmonicDiagonal> {
    let entries = (0..=l_max)
        .into_par_iter()
        .map(|l| dtn_interior_free(l, k, a).map(|v| Complex64::new(v, 0.0)))
        .collect::<Result<Vec<_>>>()?;
    Ok(HarmonicDiagonal { kind: DtnKind::F0, entries })
}

pub fn exterior_diagonal(l_max: usize, k: f64, a: f64) -> Result<HarmonicDiagonal> {
    let entries = (0..=l_max)
        .into_par_iter()
        .map(|l| dtn_exterior(l, k, a))
        .collect::<Result<Vec<_>>>()?;
    Ok(HarmonicDiagonal { kind: DtnKind::Fout, entries })
}

pub fn potential_diagonal(potential: &RadialPotential, l_max: usize, k: f64, a: f64) -> Result<HarmonicDiagonal> {
    let entries = (0..=l_max)
        .into_par_iter()
        .map(|l| dtn_potential(potential, l, k, a).map(|v| Complex64::new(v, 0.0)))
        .collect::<Result<Vec<_>>>()?;
    Ok(HarmonicDiagonal { kind: DtnKind::Fn, entries })
}

/// The three diagonals of a scene.
#[derive(Debug, Clone)]
pub struct DtnSet {
    pub f0: HarmonicDiagonal,
    pub fout: HarmonicDiagonal,
    pub fn_: HarmonicDiagonal,
}

impl DtnSet {
    pub fn compute(potential: &RadialPotential, l_max: usize, k: f64, a: f64) -> Result<Self> {
        Ok(Self {
            f0: free_interior_diagonal(l_max, k, a)?,
            fout: exterior_diagonal(l_max, k, a)?,
            fn_: potential_diagonal(potential, l_max, k, a)?,
        })
    }

    /// Per-degree `(f₀ - f^out)(f_n - f^out)^{-1}(f₀ - f_n)`.
    pub fn middle(&self) -> Result<Vec<Complex64>> {
        (0..self.f0.entries.len())
            .map(|l| {
                let (f0, fo, fnn) = (self.f0.entries[l], self.fout.entries[l], self.fn_.entries[l]);
                let denom = fnn - fo;
                if denom.norm() < 1e-12 {
                    return Err(NearFieldError::Invertibility { l, magnitude: denom.norm() });
                }
                Ok((f0 - fo) * (f0 - fnn) / denom)
            })
            .collect()
    }
}
