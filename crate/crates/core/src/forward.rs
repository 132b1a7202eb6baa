//! Near-field operator `F_S`: density on S ↦ trace on S of the scattered wave.
//!
//! Two independent paths:
//! * direct: expand the incident wave in regular waves about the origin, solve
//!   each radial problem by variation of parameters, evaluate the outgoing
//!   expansion at the S nodes;
//! * factorized: `F_S = (1/4π) L* (F₀ - F^out)(F_n - F^out)^{-1}(F₀ - F_n) L`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::f64::consts::PI;

use crate::dtn::{check_pole, integrate_regular, DtnSet, DEFAULT_STEPS};
use crate::error::{NearFieldError, Result};
use crate::layer::{assemble_l, assemble_lstar, BoundaryDensity, DenseOperator, Discretization, KernelSign, SourceDensity};
use crate::linalg::{spectral_norm, CMat, ZERO};
use crate::scene::{RadialPotential, SceneConfig, SceneFile};
use crate::specfun::{direction_angles, harmonic_count, lm_index, lm_iter, spherical_harmonics_all, RadialTable};
use crate::sphere::{norm, Point};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadialKind {
    /// `j_l(kr)`: regular at the origin.
    Regular,
    /// `h_l^{(1)}(kr)`: radiating.
    Outgoing,
}

/// `Σ c_lm R_l(kr) Y_lm(x̂)` with `R_l = j_l` or `h_l^{(1)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicField {
    pub k: f64,
    pub l_max: usize,
    pub kind: RadialKind,
    pub coefficients: Vec<Complex64>,
}

impl HarmonicField {
    pub fn new(k: f64, l_max: usize, kind: RadialKind, coefficients: Vec<Complex64>) -> Result<Self> {
        if coefficients.len() != harmonic_count(l_max) {
            return Err(NearFieldError::Dimension(format!(
                "{} coefficients for l_max = {l_max}",
                coefficients.len()
            )));
        }
        Ok(Self {
            k,
            l_max,
            kind,
            coefficients,
        })
    }

    fn radial(&self, r: f64) -> Vec<Complex64> {
        let t = RadialTable::new(self.l_max, self.k * r).expect("positive radius");
        (0..=self.l_max)
            .map(|l| match self.kind {
                RadialKind::Regular => Complex64::new(t.j[l], 0.0),
                RadialKind::Outgoing => t.h(l),
            })
            .collect()
    }

    pub fn evaluate(&self, x: Point) -> Complex64 {
        let r = norm(x);
        if r == 0.0 {
            return match self.kind {
                RadialKind::Regular => self.coefficients[0] * spherical_harmonics_all(0, 0.0, 0.0)[0],
                RadialKind::Outgoing => Complex64::new(f64::INFINITY, 0.0),
            };
        }
        let (theta, phi) = direction_angles(x);
        let ys = spherical_harmonics_all(self.l_max, theta, phi);
        let rad = self.radial(r);
        lm_iter(self.l_max)
            .map(|(l, m)| {
                let i = lm_index(l, m);
                self.coefficients[i] * rad[l] * ys[i]
            })
            .sum()
    }

    /// Trace on `|x| = radius` in the orthonormal basis `Y_lm / radius`.
    pub fn trace(&self, radius: f64) -> BoundaryDensity {
        let rad = self.radial(radius);
        let coefficients = lm_iter(self.l_max)
            .map(|(l, m)| self.coefficients[lm_index(l, m)] * rad[l] * radius)
            .collect();
        BoundaryDensity {
            l_max: self.l_max,
            coefficients,
        }
    }

    /// Far-field pattern coefficients `(1/k) c_lm (-i)^{l+1}` (in the `Y_lm` basis).
    pub fn far_field_amplitude(&self) -> Result<Vec<Complex64>> {
        if self.kind != RadialKind::Outgoing {
            return Err(NearFieldError::Domain("far field of a non-radiating field".into()));
        }
        Ok(lm_iter(self.l_max)
            .map(|(l, m)| self.coefficients[lm_index(l, m)] * Complex64::new(0.0, -1.0).powu(l as u32 + 1) / self.k)
            .collect())
    }
}

/// Value of a far-field pattern in a direction.
pub fn evaluate_far_field(l_max: usize, amplitude: &[Complex64], direction: Point) -> Complex64 {
    let (theta, phi) = direction_angles(direction);
    let ys = spherical_harmonics_all(l_max, theta, phi);
    amplitude.iter().zip(&ys).map(|(a, y)| a * y).sum()
}

/// Convenience wrapper for `HarmonicField::far_field_amplitude`.
pub fn far_field_amplitude(field: &HarmonicField) -> Result<Vec<Complex64>> {
    field.far_field_amplitude()
}

/// Regular-wave coefficients (about the origin) of `Σ_q w_q φ_q G(x, y_q)`
/// for the chosen kernel sign, valid for `|x| < min |y_q|`:
/// `e^{±ik|x-y|}/|x-y| = ±4πik Σ j_l(k|x|) h^{(1|2)}_l(k|y|) Y_lm(x̂) conj(Y_lm(ŷ))`.
pub fn incident_coefficients(
    k: f64,
    l_max: usize,
    points: &[Point],
    weights: &[f64],
    values: &[Complex64],
    sign: KernelSign,
) -> HarmonicField {
    let mut c = vec![ZERO; harmonic_count(l_max)];
    for ((&y, &w), &v) in points.iter().zip(weights).zip(values) {
        if v == ZERO {
            continue;
        }
        let r = norm(y);
        let t = RadialTable::new(l_max, k * r).expect("source off the origin");
        let (theta, phi) = direction_angles(y);
        let ys = spherical_harmonics_all(l_max, theta, phi);
        for (l, m) in lm_iter(l_max) {
            let i = lm_index(l, m);
            let radial = match sign {
                KernelSign::Incoming => t.h(l).conj(),
                KernelSign::Outgoing => t.h(l),
            };
            c[i] += v * w * radial * ys[i].conj();
        }
    }
    let pref = match sign {
        KernelSign::Incoming => Complex64::new(0.0, -4.0 * PI * k),
        KernelSign::Outgoing => Complex64::new(0.0, 4.0 * PI * k),
    };
    for z in &mut c {
        *z *= pref;
    }
    HarmonicField {
        k,
        l_max,
        kind: RadialKind::Regular,
        coefficients: c,
    }
}

/// Per-degree ratio `τ_l` with `u^sc_lm = τ_l c_lm h_l(kr)` outside the
/// support, for an incident `c_lm j_l(kr)`. Variation of parameters with the
/// regular solution `w` and the outgoing `h_l`:
/// `τ_l = -k² ∫ w (n-1) j_l s² ds / (a² W[w, h_l](a))`.
pub fn scattering_ratios(potential: &RadialPotential, l_max: usize, k: f64, a: f64) -> Result<Vec<Complex64>> {
    scattering_ratios_with_steps(potential, l_max, k, a, DEFAULT_STEPS)
}

pub fn scattering_ratios_with_steps(
    potential: &RadialPotential,
    l_max: usize,
    k: f64,
    a: f64,
    steps: usize,
) -> Result<Vec<Complex64>> {
    let table = RadialTable::new(l_max, k * a)?;
    (0..=l_max)
        .into_par_iter()
        .map(|l| {
            if potential.is_free() {
                return Ok(ZERO);
            }
            let sol = integrate_regular(potential, l, k, a, steps, true);
            check_pole(&sol)?;
            let (w, dw) = sol.scaled_trace(a);
            let wronskian = table.dh(l) * (k * w) - table.h(l) * dw;
            Ok(Complex64::new(-k * k * sol.source_integral / (a * a), 0.0) / wronskian)
        })
        .collect()
}

/// Output of a direct solve.
#[derive(Debug, Clone)]
pub struct DirectSolution {
    pub incident: HarmonicField,
    /// Outgoing expansion of `u^sc` (valid for `|x| >= a`).
    pub scattered: HarmonicField,
    /// `u^sc` at the S nodes.
    pub on_sources: Vec<Complex64>,
    /// `u^sc` on ∂O, orthonormal basis.
    pub on_boundary: BoundaryDensity,
    /// Largest contribution of degree `L_max` at the S nodes relative to `max |u^sc|`.
    pub tail: f64,
}

/// Direct spectral solve for a density on S with the given incident kernel.
pub fn solve_direct_with_kernel(
    disc: &Discretization,
    potential: &RadialPotential,
    phi: &SourceDensity,
    sign: KernelSign,
) -> Result<DirectSolution> {
    if phi.values.len() != disc.n_sources() {
        return Err(NearFieldError::Dimension("density does not match the S quadrature".into()));
    }
    let cfg = &disc.config;
    let tau = scattering_ratios(potential, cfg.l_max, cfg.k, cfg.a)?;
    let incident = incident_coefficients(cfg.k, cfg.l_max, &disc.source_points, &phi.weights, &phi.values, sign);
    scatter(cfg, &tau, incident, &disc.source_points)
}

/// Direct solve with the incoming kernel of the near-field operator.
pub fn solve_direct(disc: &Discretization, potential: &RadialPotential, phi: &SourceDensity) -> Result<DirectSolution> {
    solve_direct_with_kernel(disc, potential, phi, KernelSign::Incoming)
}

/// Apply per-degree ratios to a regular incident expansion and evaluate at `points`.
pub fn scatter(cfg: &SceneConfig, tau: &[Complex64], incident: HarmonicField, points: &[Point]) -> Result<DirectSolution> {
    let coefficients: Vec<Complex64> = lm_iter(cfg.l_max)
        .map(|(l, m)| incident.coefficients[lm_index(l, m)] * tau[l])
        .collect();
    let scattered = HarmonicField::new(cfg.k, cfg.l_max, RadialKind::Outgoing, coefficients)?;
    let per_point: Vec<(Complex64, Complex64)> = points
        .par_iter()
        .map(|&y| {
            let (theta, phi) = direction_angles(y);
            let ys = spherical_harmonics_all(cfg.l_max, theta, phi);
            let t = RadialTable::new(cfg.l_max, cfg.k * norm(y)).expect("positive radius");
            let mut total = ZERO;
            let mut top = ZERO;
            for (l, m) in lm_iter(cfg.l_max) {
                let i = lm_index(l, m);
                let term = scattered.coefficients[i] * t.h(l) * ys[i];
                total += term;
                if l == cfg.l_max {
                    top += term;
                }
            }
            (total, top)
        })
        .collect();
    let on_sources: Vec<Complex64> = per_point.iter().map(|p| p.0).collect();
    let scale = on_sources.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let tail = if scale > 0.0 {
        per_point.iter().map(|p| p.1.norm()).fold(0.0, f64::max) / scale
    } else {
        0.0
    };
    let on_boundary = scattered.trace(cfg.a);
    Ok(DirectSolution {
        incident,
        scattered,
        on_sources,
        on_boundary,
        tail,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Direct,
    Factorized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearFieldMetadata {
    pub scene_hash: String,
    pub k: f64,
    pub l_max: usize,
    pub source_grid: [usize; 2],
    pub boundary_grid: [usize; 2],
    /// Hash of the run manifest that produced the file, when written by a tool.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest_hash: Option<String>,
}

/// Discretized `F_S` acting on S node values.
#[derive(Debug, Clone, PartialEq)]
pub struct NearFieldMatrix {
    pub provenance: Provenance,
    pub metadata: NearFieldMetadata,
    pub matrix: CMat,
}

#[derive(Serialize, Deserialize)]
struct NearFieldJson {
    provenance: Provenance,
    metadata: NearFieldMetadata,
    rows: usize,
    cols: usize,
    data: Vec<[f64; 2]>,
}

/// SHA-256 of the canonical TOML of a scene and potential.
pub fn scene_hash(config: &SceneConfig, potential: &RadialPotential) -> String {
    let file = SceneFile {
        scene: config.clone(),
        potential: potential.clone(),
    };
    hex::encode(Sha256::digest(file.to_toml().as_bytes()))
}

fn metadata(disc: &Discretization, potential: &RadialPotential) -> NearFieldMetadata {
    NearFieldMetadata {
        scene_hash: scene_hash(&disc.config, potential),
        k: disc.config.k,
        l_max: disc.config.l_max,
        source_grid: [disc.source_grid.n_theta, disc.source_grid.n_phi],
        boundary_grid: [disc.boundary_grid.n_theta, disc.boundary_grid.n_phi],
        manifest_hash: None,
    }
}

impl NearFieldMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn apply(&self, phi: &SourceDensity) -> Result<Vec<Complex64>> {
        if phi.values.len() != self.dim() {
            return Err(NearFieldError::Dimension("density does not match F_S".into()));
        }
        let v = nalgebra::DVector::from_column_slice(&phi.values);
        Ok((&self.matrix * v).iter().copied().collect())
    }

    pub fn spectral_norm(&self) -> f64 {
        spectral_norm(&self.matrix)
    }

    /// `‖A - B‖₂ / ‖B‖₂` (absolute difference when `B = 0`).
    pub fn relative_difference(&self, reference: &NearFieldMatrix) -> Result<f64> {
        if self.matrix.shape() != reference.matrix.shape() {
            return Err(NearFieldError::Dimension("near-field matrices of different shapes".into()));
        }
        let diff = spectral_norm(&(&self.matrix - &reference.matrix));
        let base = reference.spectral_norm();
        Ok(if base > 0.0 { diff / base } else { diff })
    }

    pub fn to_json(&self) -> String {
        let mut data = Vec::with_capacity(self.matrix.len());
        for r in 0..self.matrix.nrows() {
            for c in 0..self.matrix.ncols() {
                let z = self.matrix[(r, c)];
                data.push([z.re, z.im]);
            }
        }
        serde_json::to_string(&NearFieldJson {
            provenance: self.provenance,
            metadata: self.metadata.clone(),
            rows: self.matrix.nrows(),
            cols: self.matrix.ncols(),
            data,
        })
        .expect("near-field matrix serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: NearFieldJson = serde_json::from_str(text)?;
        if doc.rows != doc.cols || doc.data.len() != doc.rows * doc.cols {
            return Err(NearFieldError::Dimension(format!(
                "{} entries for a {}x{} near-field matrix",
                doc.data.len(),
                doc.rows,
                doc.cols
            )));
        }
        let matrix = CMat::from_fn(doc.rows, doc.cols, |r, c| {
            let [re, im] = doc.data[r * doc.cols + c];
            Complex64::new(re, im)
        });
        Ok(Self {
            provenance: doc.provenance,
            metadata: doc.metadata,
            matrix,
        })
    }
}

/// `F_S` from the direct path: `E diag(τ) C` with `C` the incident expansion
/// of each node and `E` the outgoing evaluation at the nodes.
pub fn nearfield_direct(disc: &Discretization, potential: &RadialPotential) -> Result<NearFieldMatrix> {
    let cfg = &disc.config;
    let tau = scattering_ratios(potential, cfg.l_max, cfg.k, cfg.a)?;
    let nh = harmonic_count(cfg.l_max);
    let n = disc.n_sources();
    let rows: Vec<(Vec<Complex64>, Vec<Complex64>)> = disc
        .source_points
        .par_iter()
        .map(|&y| {
            let (theta, phi) = direction_angles(y);
            let ys = spherical_harmonics_all(cfg.l_max, theta, phi);
            let t = RadialTable::new(cfg.l_max, cfg.k * norm(y)).expect("positive radius");
            let mut e = vec![ZERO; nh];
            let mut c = vec![ZERO; nh];
            for (l, m) in lm_iter(cfg.l_max) {
                let i = lm_index(l, m);
                e[i] = t.h(l) * ys[i] * tau[l];
                c[i] = t.h(l).conj() * ys[i].conj();
            }
            (e, c)
        })
        .collect();
    let e = CMat::from_fn(n, nh, |q, i| rows[q].0[i]);
    let pref = Complex64::new(0.0, -4.0 * PI * cfg.k);
    let c = CMat::from_fn(nh, n, |i, q| rows[q].1[i] * disc.source_weights[q] * pref);
    Ok(NearFieldMatrix {
        provenance: Provenance::Direct,
        metadata: metadata(disc, potential),
        matrix: e * c,
    })
}

/// The operators of the factorization for one scene.
#[derive(Debug, Clone)]
pub struct Factorization {
    pub l: DenseOperator,
    pub lstar: DenseOperator,
    pub dtn: DtnSet,
    /// Per-degree middle factor `(f₀ - f^out)(f_n - f^out)^{-1}(f₀ - f_n)`.
    pub middle: Vec<Complex64>,
}

impl Factorization {
    pub fn new(disc: &Discretization, potential: &RadialPotential) -> Result<Self> {
        let cfg = &disc.config;
        let dtn = DtnSet::compute(potential, cfg.l_max, cfg.k, cfg.a)?;
        let middle = dtn.middle()?;
        Ok(Self {
            l: assemble_l(disc),
            lstar: assemble_lstar(disc),
            dtn,
            middle,
        })
    }

    /// `(1/4π) L* diag(m) L` for per-degree `m`.
    pub fn compose(&self, middle: &[Complex64]) -> CMat {
        let l_max = middle.len() - 1;
        let mut ml = self.l.matrix.clone();
        for (l, m) in lm_iter(l_max) {
            let mut row = ml.row_mut(lm_index(l, m));
            row *= middle[l] / (4.0 * PI);
        }
        &self.lstar.matrix * ml
    }

    /// `u^sc|∂O = (F_n - F^out)^{-1}(F₀ - F_n) L φ`.
    pub fn boundary_trace(&self, phi: &SourceDensity) -> Result<BoundaryDensity> {
        let lphi = self.l.apply(&phi.values)?;
        let l_max = self.dtn.f0.l_max();
        let coefficients = lm_iter(l_max)
            .map(|(l, m)| {
                let (f0, fo, fnn) = (self.dtn.f0.get(l), self.dtn.fout.get(l), self.dtn.fn_.get(l));
                lphi[lm_index(l, m)] * (f0 - fnn) / (fnn - fo)
            })
            .collect();
        BoundaryDensity::new(l_max, coefficients)
    }
}

/// `F_S` from the factorization.
pub fn nearfield_factorized(disc: &Discretization, potential: &RadialPotential) -> Result<NearFieldMatrix> {
    let f = Factorization::new(disc, potential)?;
    Ok(NearFieldMatrix {
        provenance: Provenance::Factorized,
        metadata: metadata(disc, potential),
        matrix: f.compose(&f.middle),
    })
}

/// `μ = (1/4π)(F₀ - F^out) u^sc|∂O`, so that `L* μ = u^sc` on S.
pub fn boundary_density_mu(dtn: &DtnSet, trace: &BoundaryDensity) -> BoundaryDensity {
    let coefficients = lm_iter(trace.l_max)
        .map(|(l, m)| trace.coefficients[lm_index(l, m)] * (dtn.f0.get(l) - dtn.fout.get(l)) / (4.0 * PI))
        .collect();
    BoundaryDensity {
        l_max: trace.l_max,
        coefficients,
    }
}
