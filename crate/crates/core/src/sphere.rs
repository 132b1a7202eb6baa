//! Product quadrature on spheres (Gauss–Legendre in colatitude, trapezoid in
//! azimuth) and the matching discrete spherical-harmonic projection.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::specfun::{harmonic_count, lm_index, normalized_legendre};

pub type Point = [f64; 3];

/// Gauss–Legendre nodes and weights on [-1, 1], nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p1 = z;
                p0 = 1.0;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        if n == 1 {
            z = 0.0;
            dp = 1.0;
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Product quadrature grid on a sphere `|x - center| = radius`.
#[derive(Debug, Clone)]
pub struct SphereGrid {
    pub center: Point,
    pub radius: f64,
    pub n_theta: usize,
    pub n_phi: usize,
    cos_theta: Vec<f64>,
    theta_weights: Vec<f64>,
}

impl SphereGrid {
    pub fn new(center: Point, radius: f64, n_theta: usize, n_phi: usize) -> Self {
        let (x, w) = gauss_legendre(n_theta);
        Self {
            center,
            radius,
            n_theta,
            n_phi,
            cos_theta: x,
            theta_weights: w,
        }
    }

    /// Grid exact for products of harmonics up to degree `2 l_max + 1`.
    pub fn for_degree(center: Point, radius: f64, l_max: usize) -> Self {
        let n = 2 * (l_max + 1);
        Self::new(center, radius, n, 2 * n)
    }

    pub fn len(&self) -> usize {
        self.n_theta * self.n_phi
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn phi(&self, j: usize) -> f64 {
        2.0 * PI * j as f64 / self.n_phi as f64
    }

    pub fn theta(&self, i: usize) -> f64 {
        self.cos_theta[i].acos()
    }

    /// Unit-sphere weight of node `(i, j)`.
    pub fn unit_weight(&self, i: usize) -> f64 {
        self.theta_weights[i] * 2.0 * PI / self.n_phi as f64
    }

    pub fn direction(&self, i: usize, j: usize) -> Point {
        let ct = self.cos_theta[i];
        let st = (1.0 - ct * ct).max(0.0).sqrt();
        let p = self.phi(j);
        [st * p.cos(), st * p.sin(), ct]
    }

    /// Nodes in row-major `(theta, phi)` order.
    pub fn points(&self) -> Vec<Point> {
        let mut out = Vec::with_capacity(self.len());
        for i in 0..self.n_theta {
            for j in 0..self.n_phi {
                let d = self.direction(i, j);
                out.push([
                    self.center[0] + self.radius * d[0],
                    self.center[1] + self.radius * d[1],
                    self.center[2] + self.radius * d[2],
                ]);
            }
        }
        out
    }

    /// Surface weights (`radius²` times unit weights), same order as `points`.
    pub fn surface_weights(&self) -> Vec<f64> {
        let r2 = self.radius * self.radius;
        let mut out = Vec::with_capacity(self.len());
        for i in 0..self.n_theta {
            let w = self.unit_weight(i) * r2;
            out.extend(std::iter::repeat_n(w, self.n_phi));
        }
        out
    }

    /// Projection onto `Y_lm` over the unit sphere: `Σ W f conj(Y_lm)`.
    pub fn projector(&self, l_max: usize) -> HarmonicProjector {
        HarmonicProjector::new(self, l_max)
    }
}

/// Precomputed tables for projecting grid samples onto harmonics.
#[derive(Debug, Clone)]
pub struct HarmonicProjector {
    l_max: usize,
    n_theta: usize,
    n_phi: usize,
    // weighted Legendre values per ring, flat (l,m>=0) layout
    legendre: Vec<Vec<f64>>,
    // e^{-i m φ_j} for m = 0..=l_max
    twiddle: Vec<Vec<Complex64>>,
}

impl HarmonicProjector {
    fn new(grid: &SphereGrid, l_max: usize) -> Self {
        let legendre = (0..grid.n_theta)
            .map(|i| {
                let w = grid.unit_weight(i);
                normalized_legendre(l_max, grid.cos_theta[i])
                    .into_iter()
                    .map(|p| p * w)
                    .collect()
            })
            .collect();
        let twiddle = (0..=l_max)
            .map(|m| {
                (0..grid.n_phi)
                    .map(|j| Complex64::from_polar(1.0, -(m as f64) * grid.phi(j)))
                    .collect()
            })
            .collect();
        Self {
            l_max,
            n_theta: grid.n_theta,
            n_phi: grid.n_phi,
            legendre,
            twiddle,
        }
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    /// Coefficients `Σ W f conj(Y_lm)` of row-major grid samples.
    pub fn project(&self, samples: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(samples.len(), self.n_theta * self.n_phi);
        let l_max = self.l_max;
        let mut coeffs = vec![Complex64::new(0.0, 0.0); harmonic_count(l_max)];
        let mut pos = vec![Complex64::new(0.0, 0.0); l_max + 1];
        let mut neg = vec![Complex64::new(0.0, 0.0); l_max + 1];
        for i in 0..self.n_theta {
            let ring = &samples[i * self.n_phi..(i + 1) * self.n_phi];
            for m in 0..=l_max {
                let tw = &self.twiddle[m];
                let mut sp = Complex64::new(0.0, 0.0);
                let mut sn = Complex64::new(0.0, 0.0);
                for (f, t) in ring.iter().zip(tw) {
                    sp += f * t;
                    sn += f * t.conj();
                }
                pos[m] = sp;
                neg[m] = sn;
            }
            let leg = &self.legendre[i];
            for l in 0..=l_max {
                for m in 0..=l {
                    let p = leg[lm_index(l, m as i64)];
                    coeffs[lm_index(l, m as i64)] += pos[m] * p;
                    if m > 0 {
                        // conj(Y_{l,-m}) = (-1)^m P̄_l^m e^{+imφ}
                        let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                        coeffs[lm_index(l, -(m as i64))] += neg[m] * (p * sign);
                    }
                }
            }
        }
        coeffs
    }
}

pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn norm(a: Point) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

pub fn dist(a: Point, b: Point) -> f64 {
    norm(sub(a, b))
}
