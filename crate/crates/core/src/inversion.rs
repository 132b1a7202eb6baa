//! From a discretized `F_S` back to the middle operator, then to `F_n`, then
//! to the parameters of a piecewise-constant radial potential.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::dtn::{dtn_potential, DtnKind, HarmonicDiagonal};
use crate::error::{NearFieldError, Result};
use crate::forward::NearFieldMatrix;
use crate::layer::{DenseOperator, FunctionSpace};
use crate::linalg::{svd, CMat, CVec, ZERO};
use crate::scene::RadialPotential;
use crate::specfun::{harmonic_count, lm_index};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_iterations: usize,
    /// Relative finite-difference step of the Jacobian.
    pub fd_step: f64,
    pub value_bounds: (f64, f64),
    /// Stop when the misfit falls below this value.
    pub misfit_tolerance: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            fd_step: 1e-6,
            value_bounds: (0.1, 10.0),
            misfit_tolerance: 1e-24,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryConfig {
    /// Relative singular-value (or column-norm) cutoff.
    pub svd_threshold: f64,
    /// Highest degree whose recovered `f_n` is trusted.
    pub l_rec: usize,
    pub fit: FitConfig,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self {
            svd_threshold: 1e-10,
            l_rec: 8,
            fit: FitConfig::default(),
        }
    }
}

impl RecoveryConfig {
    pub fn check(&self, l_max: usize) -> Result<()> {
        if !(self.svd_threshold > 0.0 && self.svd_threshold < 1.0) {
            return Err(NearFieldError::Config(format!("threshold {} outside (0, 1)", self.svd_threshold)));
        }
        if self.l_rec > l_max {
            return Err(NearFieldError::Config(format!("l_rec {} exceeds L_max {l_max}", self.l_rec)));
        }
        Ok(())
    }
}

/// Two-sided truncated pseudo-inversion `pinv(L*) 4π F_S pinv(L)`, restricted
/// to harmonics where both sides keep singular values above `τ σ_max`.
pub fn recover_middle_pinv(fs: &NearFieldMatrix, l: &DenseOperator, lstar: &DenseOperator, tau: f64, l_rec: usize) -> Result<DenseOperator> {
    let dl = svd(&l.matrix);
    let dls = svd(&lstar.matrix);
    let surviving = dl.rank(tau).min(dls.rank(tau));
    let required = harmonic_count(l_rec);
    if surviving < required {
        return Err(NearFieldError::Rank { surviving, required });
    }
    let m = dls.pinv(tau) * (&fs.matrix * Complex64::new(4.0 * PI, 0.0)) * dl.pinv(tau);
    DenseOperator::new(l.row_space.clone(), l.row_space.clone(), m)
}

/// Middle factor recovered degree by degree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiddleRecovery {
    /// `m(l)` for `l <= trusted_degree`.
    pub degrees: Vec<Complex64>,
    pub trusted_degree: usize,
    /// `‖(1/4π) L*_l L_l‖_F` for every degree up to `L_max`.
    pub block_norms: Vec<f64>,
    /// `‖F_S - Σ m(l) B_l‖_F / ‖F_S‖_F`.
    pub fit_residual: f64,
}

/// Per-degree blocks `B_l = (1/4π) Σ_m L*[:, lm] L[lm, :]`.
fn degree_block(l_op: &DenseOperator, lstar: &DenseOperator, l: usize) -> CMat {
    let start = lm_index(l, -(l as i64));
    let w = 2 * l + 1;
    let ls = lstar.matrix.columns(start, w);
    let lr = l_op.matrix.rows(start, w);
    (ls * lr) * Complex64::new(1.0 / (4.0 * PI), 0.0)
}

/// Least-squares fit `F_S ≈ Σ_{l<=K} m(l) B_l` with `K` the largest degree
/// whose block norm is at least `τ` times the largest. The radial structure
/// (one scalar per degree) replaces the two-sided pseudo-inverse, whose
/// surviving rank at `τ = 1e-10` does not cover degree 8.
pub fn recover_middle(fs: &NearFieldMatrix, l: &DenseOperator, lstar: &DenseOperator, config: &RecoveryConfig) -> Result<MiddleRecovery> {
    let l_max = match &l.row_space {
        FunctionSpace::Harmonics { l_max, .. } => *l_max,
        _ => return Err(NearFieldError::Dimension("L must map into boundary harmonics".into())),
    };
    config.check(l_max)?;
    if fs.matrix.shape() != (lstar.matrix.nrows(), l.matrix.ncols()) {
        return Err(NearFieldError::Dimension("F_S does not match the factorization".into()));
    }
    let blocks: Vec<CMat> = (0..=l_max).into_par_iter().map(|d| degree_block(l, lstar, d)).collect();
    let block_norms: Vec<f64> = blocks.iter().map(|b| b.norm()).collect();
    let top = block_norms.iter().copied().fold(0.0, f64::max);
    let k = block_norms.iter().rposition(|&n| n >= config.svd_threshold * top).unwrap_or(0);
    if k < config.l_rec {
        return Err(NearFieldError::Rank {
            surviving: harmonic_count(k),
            required: harmonic_count(config.l_rec),
        });
    }
    let fnorm = fs.matrix.norm();
    if fnorm == 0.0 {
        return Ok(MiddleRecovery {
            degrees: vec![ZERO; k + 1],
            trusted_degree: k,
            block_norms,
            fit_residual: 0.0,
        });
    }
    // compress onto orthonormal bases of the degree <= K columns of L* and
    // rows of L; the block identity survives any such projection and the
    // smaller system loses far less to rounding
    let nk = harmonic_count(k);
    let p = lstar.matrix.columns(0, nk).into_owned().qr().q();
    let r = l.matrix.rows(0, nk).adjoint().qr().q();
    let projected: Vec<CMat> = blocks[..=k].par_iter().map(|b| p.adjoint() * b * &r).collect();
    let norms: Vec<f64> = projected.iter().map(|b| b.norm()).collect();
    let target = p.adjoint() * &fs.matrix * &r;
    let len = target.len();
    let design = CMat::from_fn(len, k + 1, |i, l| projected[l][i] / norms[l]);
    let rhs = CVec::from_column_slice(target.as_slice());
    let qr = design.clone().qr();
    let qtb = qr.q().adjoint() * &rhs;
    let coef = qr
        .r()
        .solve_upper_triangular(&qtb)
        .ok_or(NearFieldError::Rank {
            surviving: 0,
            required: k + 1,
        })?;
    let degrees: Vec<Complex64> = coef.iter().zip(&norms).map(|(c, n)| c / *n).collect();
    let mut model = CMat::zeros(fs.matrix.nrows(), fs.matrix.ncols());
    for (b, m) in blocks.iter().zip(&degrees) {
        model += b * *m;
    }
    let residual = (&fs.matrix - model).norm() / fnorm;
    Ok(MiddleRecovery {
        degrees,
        trusted_degree: k,
        block_norms,
        fit_residual: residual,
    })
}

impl MiddleRecovery {
    /// Diagonal operator on the harmonics of ∂O (zero beyond the trusted degree).
    pub fn to_operator(&self, space: FunctionSpace, l_max: usize) -> Result<DenseOperator> {
        let n = harmonic_count(l_max);
        let mut m = CMat::zeros(n, n);
        for l in 0..=self.trusted_degree.min(l_max) {
            for mm in -(l as i64)..=(l as i64) {
                let i = lm_index(l, mm);
                m[(i, i)] = self.degrees[l];
            }
        }
        DenseOperator::new(space.clone(), space, m)
    }
}

/// Per-degree averages of the diagonal of a full `M` and its relative
/// off-diagonal energy.
pub fn degree_diagonal(m: &DenseOperator, l_max: usize) -> (Vec<Complex64>, f64) {
    let mut diag = vec![ZERO; l_max + 1];
    let mut on = 0.0;
    for l in 0..=l_max {
        for mm in -(l as i64)..=(l as i64) {
            let i = lm_index(l, mm);
            diag[l] += m.matrix[(i, i)];
            on += m.matrix[(i, i)].norm_sqr();
        }
        diag[l] /= (2 * l + 1) as f64;
    }
    let total = m.matrix.norm_squared();
    let leak = if total > 0.0 { ((total - on).max(0.0) / total).sqrt() } else { 0.0 };
    (diag, leak)
}

/// Scalar inverse of `m = (f₀ - f^out)(f_n - f^out)^{-1}(f₀ - f_n)`:
/// `f_n = f^out + (f₀ - f^out) / (1 + m/(f₀ - f^out))`.
pub fn invert_middle(m: Complex64, f0: Complex64, fout: Complex64, l: usize) -> Result<Complex64> {
    let d = f0 - fout;
    let q = Complex64::new(1.0, 0.0) + m / d;
    if q.norm() < 1e-14 {
        return Err(NearFieldError::Degenerate { l });
    }
    Ok(fout + d / q)
}

/// `f_n(l)` for `l <= l_rec` from per-degree middle values.
pub fn recover_dtn(middle: &[Complex64], f0: &HarmonicDiagonal, fout: &HarmonicDiagonal, l_rec: usize) -> Result<HarmonicDiagonal> {
    if middle.len() <= l_rec || f0.entries.len() <= l_rec || fout.entries.len() <= l_rec {
        return Err(NearFieldError::Dimension(format!("need entries up to degree {l_rec}")));
    }
    let entries = (0..=l_rec)
        .map(|l| invert_middle(middle[l], f0.get(l), fout.get(l), l))
        .collect::<Result<Vec<_>>>()?;
    Ok(HarmonicDiagonal { kind: DtnKind::Fn, entries })
}

/// A piecewise-constant template: all shell values free, breakpoints free
/// unless fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialTemplate {
    pub initial: RadialPotential,
    /// `Some(r)` pins breakpoint `j` to `r`.
    pub fixed_breakpoints: Vec<Option<f64>>,
}

impl PotentialTemplate {
    pub fn free_breakpoints(initial: RadialPotential) -> Self {
        let n = initial.breakpoints.len();
        Self {
            initial,
            fixed_breakpoints: vec![None; n],
        }
    }

    pub fn shells(&self) -> usize {
        self.initial.values.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.shells() + self.fixed_breakpoints.iter().filter(|b| b.is_none()).count()
    }

    pub fn initial_parameters(&self) -> Vec<f64> {
        let mut p = self.initial.values.clone();
        for (j, b) in self.fixed_breakpoints.iter().enumerate() {
            if b.is_none() {
                p.push(self.initial.breakpoints[j]);
            }
        }
        p
    }

    pub fn potential(&self, params: &[f64]) -> RadialPotential {
        let j = self.shells();
        let values = params[..j].to_vec();
        let mut free = params[j..].iter();
        let breakpoints = self
            .fixed_breakpoints
            .iter()
            .map(|b| b.unwrap_or_else(|| *free.next().expect("parameter count")))
            .collect();
        RadialPotential { breakpoints, values }
    }

    fn feasible(&self, params: &[f64], a: f64, bounds: (f64, f64)) -> bool {
        let p = self.potential(params);
        p.values.iter().all(|&v| v >= bounds.0 && v <= bounds.1)
            && p.breakpoints.iter().all(|&r| r > 0.0 && r <= a)
            && p.breakpoints.windows(2).all(|w| w[0] < w[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitIteration {
    pub iteration: usize,
    pub misfit: f64,
    pub damping: f64,
    pub method: String,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub potential: RadialPotential,
    pub params: Vec<f64>,
    pub misfit: f64,
    pub iterations: usize,
    pub converged: bool,
    pub log: Vec<FitIteration>,
}

impl FitReport {
    /// `Err(NonConvergence)` when the iteration budget ran out.
    pub fn into_result(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(NearFieldError::NonConvergence {
                iterations: self.iterations,
                misfit: self.misfit,
            })
        }
    }

    pub fn log_csv(&self) -> String {
        let mut out = String::from("iteration,misfit,damping,method,params\n");
        for it in &self.log {
            let p: Vec<String> = it.params.iter().map(|v| format!("{v:.12e}")).collect();
            writeln!(out, "{},{:.12e},{:e},{},{}", it.iteration, it.misfit, it.damping, it.method, p.join(";")).expect("string write");
        }
        out
    }
}

/// Misfit `Σ_{l<=l_rec} |f_n^model(l) - f_n^rec(l)|² / (1+l)²`.
pub fn misfit(potential: &RadialPotential, recovered: &HarmonicDiagonal, l_rec: usize, k: f64, a: f64) -> Result<f64> {
    Ok(residuals(potential, recovered, l_rec, k, a)?.iter().map(|r| r * r).sum::<f64>()
        + imaginary_floor(recovered, l_rec))
}

fn imaginary_floor(recovered: &HarmonicDiagonal, l_rec: usize) -> f64 {
    (0..=l_rec).map(|l| (recovered.get(l).im / (1.0 + l as f64)).powi(2)).sum()
}

/// Weighted real residuals `(f_model(l) - Re f_rec(l)) / (1+l)`.
fn residuals(potential: &RadialPotential, recovered: &HarmonicDiagonal, l_rec: usize, k: f64, a: f64) -> Result<Vec<f64>> {
    potential.check()?;
    (0..=l_rec)
        .map(|l| Ok((dtn_potential(potential, l, k, a)? - recovered.get(l).re) / (1.0 + l as f64)))
        .collect()
}

/// Levenberg–Marquardt damped Gauss–Newton with a finite-difference Jacobian,
/// falling back to coordinate search when the damped step stalls.
pub fn fit_potential(
    recovered: &HarmonicDiagonal,
    template: &PotentialTemplate,
    l_rec: usize,
    k: f64,
    a: f64,
    config: &FitConfig,
) -> Result<FitReport> {
    if recovered.entries.len() <= l_rec {
        return Err(NearFieldError::Dimension(format!("recovered diagonal shorter than l_rec = {l_rec}")));
    }
    let bounds = config.value_bounds;
    let mut p = template.initial_parameters();
    if !template.feasible(&p, a, bounds) {
        let bad = p
            .iter()
            .copied()
            .find(|v| !(*v >= bounds.0 && *v <= bounds.1))
            .unwrap_or(f64::NAN);
        return Err(NearFieldError::Bounds {
            name: "initial template".into(),
            value: bad,
            lo: bounds.0,
            hi: bounds.1,
        });
    }
    let floor = imaginary_floor(recovered, l_rec);
    let eval = |q: &[f64]| -> Result<Vec<f64>> { residuals(&template.potential(q), recovered, l_rec, k, a) };
    let cost = |r: &[f64]| r.iter().map(|x| x * x).sum::<f64>();

    let mut r = eval(&p)?;
    let mut f = cost(&r);
    let mut lambda = 1e-3;
    let mut log = vec![FitIteration {
        iteration: 0,
        misfit: f + floor,
        damping: lambda,
        method: "start".into(),
        params: p.clone(),
    }];
    let mut converged = false;
    let mut iterations = 0;
    let np = p.len();

    while iterations < config.max_iterations {
        iterations += 1;
        if f <= config.misfit_tolerance {
            converged = true;
            break;
        }
        // forward-difference Jacobian, columns in parallel
        let cols: Vec<Result<Vec<f64>>> = (0..np)
            .into_par_iter()
            .map(|j| {
                let h = config.fd_step * p[j].abs().max(1e-3);
                let mut q = p.clone();
                q[j] += h;
                // step inward if that leaves the feasible set
                let (q, h) = if template.feasible(&q, a, bounds) {
                    (q, h)
                } else {
                    let mut q2 = p.clone();
                    q2[j] -= h;
                    (q2, -h)
                };
                let rq = eval(&q)?;
                Ok(rq.iter().zip(&r).map(|(x, y)| (x - y) / h).collect())
            })
            .collect();
        let cols = cols.into_iter().collect::<Result<Vec<_>>>()?;
        let m = r.len();
        let jac = nalgebra::DMatrix::from_fn(m, np, |i, j| cols[j][i]);
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * nalgebra::DVector::from_column_slice(&r);

        let mut improved = false;
        while lambda < 1e12 {
            let mut lhs = jtj.clone();
            for i in 0..np {
                lhs[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            if let Some(step) = lhs.lu().solve(&(-&jtr)) {
                let q: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
                if template.feasible(&q, a, bounds) {
                    let rq = eval(&q)?;
                    let fq = cost(&rq);
                    if fq < f {
                        let rel = (f - fq) / f.max(1e-300);
                        let small = step.norm() <= 1e-12 * (1.0 + p.iter().map(|v| v * v).sum::<f64>().sqrt());
                        p = q;
                        r = rq;
                        f = fq;
                        lambda = (lambda * 0.3).max(1e-12);
                        improved = true;
                        if rel < 1e-14 || small {
                            converged = true;
                        }
                        break;
                    }
                }
            }
            lambda *= 10.0;
        }
        let mut method = "gauss-newton";
        if !improved {
            // coordinate search
            method = "coordinate";
            let mut delta = 1e-2;
            let mut moved = false;
            while delta > 1e-12 && !moved {
                for j in 0..np {
                    for s in [1.0, -1.0] {
                        let mut q = p.clone();
                        q[j] += s * delta * p[j].abs().max(1e-3);
                        if !template.feasible(&q, a, bounds) {
                            continue;
                        }
                        let rq = eval(&q)?;
                        let fq = cost(&rq);
                        if fq < f {
                            p = q;
                            r = rq;
                            f = fq;
                            moved = true;
                        }
                    }
                }
                delta *= 0.1;
            }
            lambda = 1e-3;
            if !moved {
                // no descent direction at any scale: local minimum
                converged = true;
            }
        }
        log.push(FitIteration {
            iteration: iterations,
            misfit: f + floor,
            damping: lambda,
            method: method.into(),
            params: p.clone(),
        });
        if converged {
            break;
        }
    }
    Ok(FitReport {
        potential: template.potential(&p),
        params: p,
        misfit: f + floor,
        iterations,
        converged,
        log,
    })
}
