//! Synthesis of emittable (outgoing-kernel) densities on S whose scattered
//! trace approximates `F_S φ` for an incoming-kernel density φ.
//!
//! The target is the incoming-kernel trace on a shield surface separating S
//! from the scatterer; ψ minimizes the H^{3/2} misfit of its outgoing-kernel
//! trace there plus `α ‖ψ‖²`. Nothing here sees the potential.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::error::{NearFieldError, Result};
use crate::layer::{kernel, DenseOperator, Discretization, FunctionSpace, KernelSign, SourceDensity};
use crate::linalg::{svd, CMat, CVec, Svd, ZERO};
use crate::scene::SceneConfig;
use crate::specfun::{harmonic_count, lm_index, lm_iter};
use crate::sphere::{dist, norm, Point, SphereGrid};

/// Realization of the shield boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shield {
    /// One sphere about the origin strictly between the scatterer ball and B.
    EnclosingSphere { radius: f64 },
    /// Outer sphere `|x| = r_outer` plus the sphere about the center of B
    /// inflated by `inflate`.
    Annulus { r_outer: f64, inflate: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Regularization {
    Tikhonov { alphas: Vec<f64> },
    TruncatedSvd { ranks: Vec<usize> },
}

impl Regularization {
    pub fn len(&self) -> usize {
        match self {
            Regularization::Tikhonov { alphas } => alphas.len(),
            Regularization::TruncatedSvd { ranks } => ranks.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `α_n = 10^{-n}` for `n = 1..=steps`.
    pub fn tikhonov_decades(steps: usize) -> Self {
        Regularization::Tikhonov {
            alphas: (1..=steps).map(|n| 10f64.powi(-(n as i32))).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionConfig {
    pub shield: Shield,
    /// Harmonic truncation on each shield sphere.
    pub l_shield: usize,
    /// Degree resolved by the shield quadrature (controls aliasing only).
    pub quadrature_degree: usize,
    pub sobolev_order: f64,
    pub regularization: Regularization,
}

pub const DEFAULT_L_SHIELD: usize = 4;
pub const DEFAULT_PATH_STEPS: usize = 24;

impl EmissionConfig {
    /// Enclosing sphere halfway between the scatterer ball and B.
    pub fn default_for(scene: &SceneConfig) -> Self {
        let radius = 0.5 * (scene.a + scene.center_distance() - scene.rho);
        Self {
            shield: Shield::EnclosingSphere { radius },
            l_shield: DEFAULT_L_SHIELD,
            quadrature_degree: 48,
            sobolev_order: 1.5,
            regularization: Regularization::tikhonov_decades(DEFAULT_PATH_STEPS),
        }
    }

    /// Two-sphere shield: bounding sphere and B inflated by `inflate`.
    pub fn annulus(scene: &SceneConfig, inflate: f64) -> Self {
        Self {
            shield: Shield::Annulus {
                r_outer: scene.bounding_radius(),
                inflate,
            },
            ..Self::default_for(scene)
        }
    }

    pub fn check(&self, scene: &SceneConfig) -> Result<()> {
        let c = scene.center_distance();
        match self.shield {
            Shield::EnclosingSphere { radius } => {
                if !(radius > scene.a && radius < c - scene.rho) {
                    return Err(NearFieldError::Geometry(format!(
                        "shield radius {radius} must lie strictly between {} and {}",
                        scene.a,
                        c - scene.rho
                    )));
                }
            }
            Shield::Annulus { r_outer, inflate } => {
                if !(inflate > 0.0) {
                    return Err(NearFieldError::Geometry("inflation must be positive".into()));
                }
                if !(r_outer > c + scene.rho + inflate) {
                    return Err(NearFieldError::Geometry(format!(
                        "outer sphere {r_outer} intersects the inflated source ball (reaches {})",
                        c + scene.rho + inflate
                    )));
                }
                if !(c - scene.rho - inflate > scene.a) {
                    return Err(NearFieldError::Geometry(
                        "inflated source ball intersects the scatterer ball".into(),
                    ));
                }
            }
        }
        if !(self.sobolev_order >= 0.0) || self.regularization.is_empty() {
            return Err(NearFieldError::Config("sobolev order must be >= 0 and the path non-empty".into()));
        }
        Ok(())
    }

    /// Shield spheres as (center, radius).
    pub fn spheres(&self, scene: &SceneConfig) -> Vec<(Point, f64)> {
        match self.shield {
            Shield::EnclosingSphere { radius } => vec![([0.0; 3], radius)],
            Shield::Annulus { r_outer, inflate } => vec![([0.0; 3], r_outer), (scene.center, scene.rho + inflate)],
        }
    }
}

/// Kernel-trace operators onto the shield and the filtered solver.
#[derive(Debug, Clone)]
pub struct Emitter {
    pub config: EmissionConfig,
    /// Incoming-kernel map `φ ↦ L̃φ`.
    pub ltilde: DenseOperator,
    /// Outgoing-kernel counterpart.
    pub ltilde_conj: DenseOperator,
    /// H^{s} row weights `(1 + l(l+1))^{s/2}`.
    pub row_weights: Vec<f64>,
    source_weights: Vec<f64>,
    decomposition: Svd,
}

/// Kernel traces from S onto one sphere, coefficients in `Y_lm / radius`.
fn sphere_traces(disc: &Discretization, center: Point, radius: f64, l_max: usize, quad_degree: usize) -> (CMat, CMat) {
    let grid = SphereGrid::for_degree(center, radius, quad_degree.max(l_max));
    let proj = grid.projector(l_max);
    let pts = grid.points();
    let k = disc.config.k;
    let cols: Vec<(Vec<Complex64>, Vec<Complex64>)> = disc
        .source_points
        .par_iter()
        .zip(&disc.source_weights)
        .map(|(&y, &w)| {
            let inc: Vec<Complex64> = pts.iter().map(|&x| kernel(KernelSign::Incoming, k, x, y)).collect();
            let out: Vec<Complex64> = inc.iter().map(|z| z.conj()).collect();
            let scale = radius * w;
            (
                proj.project(&inc).into_iter().map(|c| c * scale).collect(),
                proj.project(&out).into_iter().map(|c| c * scale).collect(),
            )
        })
        .collect();
    let n = harmonic_count(l_max);
    (
        CMat::from_fn(n, cols.len(), |r, c| cols[c].0[r]),
        CMat::from_fn(n, cols.len(), |r, c| cols[c].1[r]),
    )
}

impl Emitter {
    pub fn new(disc: &Discretization, config: &EmissionConfig) -> Result<Self> {
        let scene = &disc.config;
        config.check(scene)?;
        let spheres = config.spheres(scene);
        let per = harmonic_count(config.l_shield);
        let rows = per * spheres.len();
        let n = disc.n_sources();
        let mut inc = CMat::zeros(rows, n);
        let mut out = CMat::zeros(rows, n);
        let mut parts = Vec::new();
        for (s, &(center, radius)) in spheres.iter().enumerate() {
            let (i, o) = sphere_traces(disc, center, radius, config.l_shield, config.quadrature_degree);
            inc.rows_mut(s * per, per).copy_from(&i);
            out.rows_mut(s * per, per).copy_from(&o);
            parts.push(FunctionSpace::Harmonics {
                center,
                radius,
                l_max: config.l_shield,
            });
        }
        let space = if parts.len() == 1 {
            parts.pop().expect("one part")
        } else {
            FunctionSpace::HarmonicsUnion { parts }
        };
        let mut row_weights = vec![0.0; rows];
        for s in 0..spheres.len() {
            for (l, m) in lm_iter(config.l_shield) {
                row_weights[s * per + lm_index(l, m)] = (1.0 + (l * (l + 1)) as f64).powf(config.sobolev_order / 2.0);
            }
        }
        // weighted system in χ = W^{1/2} ψ so that ‖χ‖ = ‖ψ‖_{L₂(S)}
        let a = CMat::from_fn(rows, n, |r, c| out[(r, c)] * (row_weights[r] / disc.source_weights[c].sqrt()));
        let decomposition = svd(&a);
        Ok(Self {
            config: config.clone(),
            ltilde: DenseOperator::new(space.clone(), disc.source_space(), inc)?,
            ltilde_conj: DenseOperator::new(space, disc.source_space(), out)?,
            row_weights,
            source_weights: disc.source_weights.clone(),
            decomposition,
        })
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.decomposition.s
    }

    fn h32_norm(&self, v: &[Complex64]) -> f64 {
        v.iter()
            .zip(&self.row_weights)
            .map(|(z, w)| (z * w).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// `‖L̃φ‖` in the discrete H^{3/2} norm.
    pub fn target_norm(&self, phi: &SourceDensity) -> Result<f64> {
        Ok(self.h32_norm(&self.ltilde.apply(&phi.values)?))
    }

    /// `‖conj(L̃)ψ - L̃φ‖` in the discrete H^{3/2} norm, by direct evaluation.
    pub fn residual(&self, psi: &SourceDensity, phi: &SourceDensity) -> Result<f64> {
        let a = self.ltilde_conj.apply(&psi.values)?;
        let b = self.ltilde.apply(&phi.values)?;
        let d: Vec<Complex64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        Ok(self.h32_norm(&d))
    }

    /// Filtered solutions for every step of the path, with residuals from the
    /// spectral expansion (monotone along the path by construction of the filters).
    pub fn synthesize_path(&self, phi: &SourceDensity) -> Result<Vec<SynthesisStep>> {
        let b = self.ltilde.apply(&phi.values)?;
        let bw = CVec::from_iterator(b.len(), b.iter().zip(&self.row_weights).map(|(z, w)| z * *w));
        let d = &self.decomposition;
        let beta = d.u.adjoint() * &bw;
        let outside = (&bw - &d.u * &beta).norm();
        let s0 = d.s.first().copied().unwrap_or(0.0);
        let floor_rank = d.rank(1e-14);
        let filters: Vec<(f64, Vec<f64>)> = match &self.config.regularization {
            Regularization::Tikhonov { alphas } => alphas
                .iter()
                .map(|&al| {
                    let g = d.s.iter().map(|&s| s * s / (s * s + al * s0 * s0)).collect();
                    (al, g)
                })
                .collect(),
            Regularization::TruncatedSvd { ranks } => ranks
                .iter()
                .map(|&r| (r as f64, (0..d.s.len()).map(|i| if i < r { 1.0 } else { 0.0 }).collect()))
                .collect(),
        };
        let mut steps: Vec<SynthesisStep> = filters
            .par_iter()
            .enumerate()
            .map(|(n, (param, g))| {
                let mut coef = CVec::zeros(d.s.len());
                let mut res2 = outside * outside;
                for i in 0..d.s.len() {
                    if g[i] > 0.0 && d.s[i] > 0.0 {
                        coef[i] = beta[i] * (g[i] / d.s[i]);
                    }
                    res2 += ((1.0 - g[i]) * beta[i].norm()).powi(2);
                }
                let chi = d.v_t.adjoint() * coef;
                let values = chi
                    .iter()
                    .zip(&self.source_weights)
                    .map(|(z, w)| z / w.sqrt())
                    .collect();
                let effective_rank = g.iter().filter(|&&x| x >= 0.5).count();
                SynthesisStep {
                    step: n + 1,
                    parameter: *param,
                    psi: SourceDensity {
                        values,
                        weights: self.source_weights.clone(),
                    },
                    residual_h32: res2.sqrt(),
                    effective_rank,
                    plateau: false,
                    nearfield_error: None,
                }
            })
            .collect();
        for n in 1..steps.len() {
            let stalled = steps[n].residual_h32 > 0.99 * steps[n - 1].residual_h32;
            steps[n].plateau = stalled && steps[n].effective_rank >= floor_rank;
        }
        Ok(steps)
    }
}

#[derive(Debug, Clone)]
pub struct SynthesisStep {
    pub step: usize,
    /// α for Tikhonov, rank for truncated SVD.
    pub parameter: f64,
    pub psi: SourceDensity,
    pub residual_h32: f64,
    pub effective_rank: usize,
    /// Residual stalled with the numerical rank exhausted.
    pub plateau: bool,
    /// `‖u^sc_ψ|_S - F_S φ‖_{L₂(S)} / ‖F_S φ‖_{L₂(S)}` once measured.
    pub nearfield_error: Option<f64>,
}

/// A measured regularization path.
#[derive(Debug, Clone)]
pub struct SynthesisPath {
    pub target_norm: f64,
    pub steps: Vec<SynthesisStep>,
}

/// `L₂(S)` norm of node values.
pub fn l2_norm(values: &[Complex64], weights: &[f64]) -> f64 {
    values
        .iter()
        .zip(weights)
        .map(|(v, w)| w * v.norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// Run the path and measure each ψ with `measure` (the scattered trace on S of
/// the wave emitted by ψ) against `target = F_S φ`.
pub fn regularization_path<F>(emitter: &Emitter, phi: &SourceDensity, target: &[Complex64], measure: F) -> Result<SynthesisPath>
where
    F: Fn(&SourceDensity) -> Result<Vec<Complex64>> + Sync,
{
    let mut steps = emitter.synthesize_path(phi)?;
    let tnorm = l2_norm(target, &phi.weights);
    let errors: Vec<Result<f64>> = steps
        .par_iter()
        .map(|s| {
            let u = measure(&s.psi)?;
            let d: Vec<Complex64> = u.iter().zip(target).map(|(x, y)| x - y).collect();
            let e = l2_norm(&d, &phi.weights);
            Ok(if tnorm > 0.0 { e / tnorm } else { e })
        })
        .collect();
    for (s, e) in steps.iter_mut().zip(errors) {
        s.nearfield_error = Some(e?);
    }
    Ok(SynthesisPath {
        target_norm: emitter.target_norm(phi)?,
        steps,
    })
}

impl SynthesisPath {
    pub fn final_step(&self) -> Option<&SynthesisStep> {
        self.steps.last()
    }

    pub fn is_monotone(&self) -> bool {
        self.steps.windows(2).all(|w| w[1].residual_h32 <= w[0].residual_h32)
    }

    /// Ratios `nearfield_error / (residual_h32 / ‖L̃φ‖)` along the path.
    pub fn stability_constants(&self) -> Vec<f64> {
        self.steps
            .iter()
            .filter_map(|s| {
                let rel = s.residual_h32 / self.target_norm;
                match s.nearfield_error {
                    Some(e) if rel > 0.0 => Some(e / rel),
                    _ => None,
                }
            })
            .collect()
    }

    /// CSV with columns `n,alpha_or_rank,residual_h32,nearfield_error`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,alpha_or_rank,residual_h32,nearfield_error\n");
        for s in &self.steps {
            let e = s.nearfield_error.map(|e| format!("{e:.12e}")).unwrap_or_default();
            writeln!(out, "{},{:e},{:.12e},{}", s.step, s.parameter, s.residual_h32, e).expect("string write");
        }
        out
    }
}

/// Trace of the incoming-kernel potential of φ expanded on a shield sphere,
/// evaluated at a point of that sphere (used for spot checks).
pub fn evaluate_shield_expansion(coefficients: &[Complex64], center: Point, radius: f64, l_max: usize, x: Point) -> Complex64 {
    use crate::specfun::{direction_angles, spherical_harmonics_all};
    let rel = [x[0] - center[0], x[1] - center[1], x[2] - center[2]];
    debug_assert!((norm(rel) - radius).abs() < 1e-9 * radius.max(1.0));
    let (t, p) = direction_angles(rel);
    let ys = spherical_harmonics_all(l_max, t, p);
    coefficients.iter().zip(&ys).map(|(c, y)| c * y).sum::<Complex64>() / radius
}

/// Direct quadrature of `Σ_q w_q φ_q G(x, y_q)`.
pub fn kernel_sum(disc: &Discretization, phi: &SourceDensity, x: Point, sign: KernelSign) -> Complex64 {
    disc.source_points
        .iter()
        .zip(&phi.values)
        .zip(&phi.weights)
        .map(|((&y, v), w)| {
            debug_assert!(dist(x, y) > 0.0);
            kernel(sign, disc.config.k, x, y) * v * *w
        })
        .fold(ZERO, |acc, z| acc + z)
}
